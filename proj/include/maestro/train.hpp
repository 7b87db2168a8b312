#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "maestro/model.hpp"
#include "maestro/synth.hpp"

namespace maestro {

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 256; // clamped to the train window count
    std::size_t max_epochs = 100;
    std::size_t patience_early = 15;
    std::size_t patience_plateau = 5;
    double plateau_factor = 0.5;
    double min_delta = 1e-6;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    double f_train = 0.6, f_val = 0.2, f_test = 0.2;
    std::size_t stride = 1;

    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    void validate() const;
};

/// Bias-corrected Adam update for one parameter tensor. t is the 1-based
/// step count after this update.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::size_t t,
                 double lr, double beta1, double beta2, double eps);

struct AdamState {
    std::size_t t = 0;
    std::unordered_map<std::string, Tensor> m, v;
};

/// One optimizer step over every bound parameter with a gradient. Steps with
/// any non-finite gradient are skipped and reported via the return value.
bool adam_step(ParamStore& store, const Binding& binding, AdamState& state,
               const TrainConfig& cfg, double lr);

/// Validation monitor: ReduceLROnPlateau plus early stopping over a shared
/// improvement test (val < best - min_delta).
class TrainMonitor {
public:
    TrainMonitor(double lr0, std::size_t patience_plateau, std::size_t patience_early,
                 double factor, double min_delta)
        : lr_(lr0), patience_plateau_(patience_plateau), patience_early_(patience_early),
          factor_(factor), min_delta_(min_delta) {}

    struct Decision {
        bool improved = false;
        bool lr_dropped = false;
        bool stop = false;
    };

    Decision observe(double val_loss) {
        Decision d;
        if (val_loss < best_ - min_delta_) {
            best_ = val_loss;
            best_epoch_ = epoch_;
            since_improve_ = 0;
            since_plateau_ = 0;
            d.improved = true;
        } else {
            ++since_improve_;
            ++since_plateau_;
            if (since_plateau_ >= patience_plateau_) {
                lr_ *= factor_;
                since_plateau_ = 0;
                d.lr_dropped = true;
            }
            if (since_improve_ >= patience_early_) d.stop = true;
        }
        ++epoch_;
        return d;
    }

    double lr() const { return lr_; }
    double best() const { return best_; }
    std::size_t best_epoch() const { return best_epoch_; }

private:
    double lr_;
    std::size_t patience_plateau_, patience_early_;
    double factor_, min_delta_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t best_epoch_ = 0;
    std::size_t since_improve_ = 0, since_plateau_ = 0;
    std::size_t epoch_ = 0;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_total = 0.0;
    double train_point = 0.0;
    double train_nll = 0.0;
    double train_spectral = 0.0;
    double train_weights = 0.0;
    double train_stability = 0.0;
    double train_sigma_mean = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct SeedRunResult {
    std::uint64_t seed = 0;
    Metrics test;
    double best_val = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    bool early_stopped = false;
    std::vector<EpochLog> curve;
    std::size_t param_count = 0;
    double wall_seconds = 0.0;
    std::vector<std::string> events;
    // test-set arrays for calibration work, in data units
    std::vector<double> test_y, test_mean, test_std;
};

struct RunReport {
    std::vector<SeedRunResult> per_seed;
    Metrics mean, stddev; // across seeds
    std::size_t param_count = 0;
};

Metrics metrics_mean(const std::vector<SeedRunResult>& runs);
Metrics metrics_stddev(const std::vector<SeedRunResult>& runs);

/// Trains one model on pre-split frames: seeded shuffling, composite
/// objective, ReduceLROnPlateau, early stopping, best-val restore, test
/// evaluation. The model must be freshly constructed with the run's seed.
SeedRunResult train_single(Model& model, const SplitFrames& frames, const TrainConfig& cfg);

/// Full protocol: split, then one run per seed (fresh model each).
RunReport train_protocol(const ModelConfig& mc,
                         const std::vector<InputChannel>& input_channels,
                         const TimeSeriesFrame& frame, const TrainConfig& cfg);

struct AblationRow {
    std::string variant;
    RunReport report;
    std::string error; // non-empty when the variant failed
};

/// Trains every variant x seed; failures are recorded per variant and do
/// not abort the suite.
std::vector<AblationRow> run_ablation_suite(const ModelConfig& base,
                                            const TimeSeriesFrame& frame,
                                            const TrainConfig& cfg,
                                            const std::vector<std::string>& variants);

/// Channel selection for a config: the frame restricted to the config's
/// modalities plus the resulting model input channel list.
std::pair<TimeSeriesFrame, std::vector<InputChannel>> select_inputs(
    const TimeSeriesFrame& frame, const ModelConfig& mc);

/// Rolling one-window-per-stride forecasts over the frame's valid range.
struct ForecastTable {
    std::vector<std::string> timestamp; // of the predicted step
    std::vector<double> y_true;
    std::vector<double> y_mean;
    std::vector<double> y_std;
};
ForecastTable forecast_frame(const Model& model, const TimeSeriesFrame& frame,
                             std::size_t batch_size = 256);

std::string forecast_csv(const ForecastTable& t);
std::string curve_csv(const std::vector<EpochLog>& curve);
std::string curve_svg(const std::vector<EpochLog>& curve);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);
std::string report_text(const RunReport& report);

/// Shortest round-trip decimal formatting (deterministic output files).
std::string format_double(double v);

} // namespace maestro
