#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "maestro/data.hpp"
#include "maestro/decomp.hpp"
#include "maestro/embed.hpp"
#include "maestro/freqdom.hpp"
#include "maestro/fusion.hpp"
#include "maestro/heads.hpp"
#include "maestro/msconv.hpp"
#include "maestro/params.hpp"
#include "maestro/ssm.hpp"

namespace maestro {

struct ModelConfig {
    std::size_t L = 30;
    std::size_t H = 1;
    std::size_t d_model = 64;
    std::size_t encoder_layers = 2;
    std::size_t attn_heads = 4;
    std::size_t ffn_mult = 4;
    std::size_t K_decomp = 7;
    std::vector<std::size_t> kernels = {3, 5, 7};
    std::vector<std::size_t> dilations = {1, 2};
    std::size_t n_state = 16;
    std::size_t cca_dim = 8;

    double gain_bound = 2.0;
    std::vector<WindowKind> freq_windows = {WindowKind::Rect};
    double lam_smooth = 1e-3;
    double lam_sparse = 1e-4;
    double lam_entropy = 1e-2;
    double lam_tv = 1e-2;
    double eps_sigma = 1e-4;
    double huber_delta = 1.0;
    PointLoss loss = PointLoss::Huber;
    CompositeWeights lambdas;

    bool use_decomp = true;
    bool use_mamba = true;
    bool use_msconv = true;
    bool use_freq = true;
    bool use_bilstm = true;
    bool use_cross_attn = true;
    bool estimate_uncertainty = true;
    bool ensemble_mode = false;
    bool include_target_in_inputs = true;
    std::vector<Modality> modalities = {Modality::Surveillance, Modality::Trends,
                                        Modality::Weather};

    void validate() const;
};

/// Named variants: exactly the listed flags toggled on top of the base.
ModelConfig ablation_variant(const ModelConfig& base, const std::string& name);
std::vector<std::string> component_ablation_names(); // "w/o X" set + minimal + only-X
std::vector<std::string> all_variant_names();

struct InputChannel {
    std::string name;
    Modality modality;
};

struct ForecastResult {
    std::vector<double> mean; // denormalized, length H
    std::vector<double> std;  // strictly positive, length H
    std::size_t window_id = 0;
};

struct ModelOutput {
    ad::Node* mean_norm = nullptr; // (B,H), normalized target space
    ad::Node* std_norm = nullptr;  // (B,H) or null in point mode
    Tensor mean_denorm;            // (B,H), data units
    Tensor std_denorm;             // (B,H), data units (empty in point mode)
    ad::Node* spectral_reg = nullptr;
    ad::Node* stability_pen = nullptr;
    ad::Node* weights_reg = nullptr;
    ad::Node* sigma_mean = nullptr;
    Tensor ensemble_weights; // (B,M) when the ensemble head is active
};

/// The assembled forecaster. Construction registers every parameter
/// deterministically from (seed, name); fit_stats freezes normalization
/// statistics from the train partition.
class Model {
public:
    Model(ModelConfig cfg, std::vector<InputChannel> input_channels, std::uint64_t seed);

    void fit_stats(const TimeSeriesFrame& train_frame);
    bool stats_ready() const { return stats_ready_; }

    /// x_raw (B,L,D) in data units, same channel order as input_channels().
    ModelOutput forward(ad::Graph& g, Binding& p, const Tensor& x_raw,
                        bool want_regularizers) const;

    /// Convenience for inference paths.
    std::vector<ForecastResult> predict(const Tensor& x_raw) const;

    /// Normalize raw targets into the model's training space and back.
    Tensor normalize_targets(const Tensor& y_raw) const;
    double target_mean() const { return target_mean_; }
    double target_std() const { return target_std_; }

    /// Clip constrained parameters (spectral masks); call after each
    /// optimizer step.
    void project_constraints();

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    std::size_t count_params() const { return store_.count_scalars(); }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<InputChannel>& input_channels() const { return input_channels_; }
    std::uint64_t seed() const { return store_.seed(); }

    // checkpoint support
    struct StatsBlob {
        NormStats raw;
        NormStats comp_trend;
        NormStats comp_seasonal;
        double target_mean = 0.0;
        double target_std = 1.0;
    };
    StatsBlob export_stats() const;
    void import_stats(const StatsBlob& blob);

private:
    struct Stream {
        std::unique_ptr<TokenEmbed> embed;
        std::unique_ptr<EncoderStack> encoder;
        std::unique_ptr<MambaBlock> mamba;
        std::unique_ptr<MsConvBlock> msconv;
        std::unique_ptr<FreqFilterBlock> freq;
        std::unique_ptr<BiLstmBlock> bilstm;
    };
    struct Trunk {
        std::string prefix;
        std::vector<std::size_t> channel_idx; // into the input tensor's D axis
        std::vector<Stream> streams;          // {seasonal, trend} or {single}
        std::unique_ptr<AdaptiveComponentFuse> fuse;
        std::unique_ptr<CrossChannelAttention> cca;
        std::unique_ptr<TemporalProjection> proj;
    };

    void build_trunk(Trunk& trunk);
    ad::Node* run_trunk(ad::Graph& g, Binding& p, const Trunk& trunk, const Tensor& x_raw,
                        ad::Node** spectral_acc, ad::Node** stability_acc) const;
    Tensor gather_channels(const Tensor& x_raw, const std::vector<std::size_t>& idx) const;

    ModelConfig cfg_;
    std::vector<InputChannel> input_channels_;
    ParamStore store_;
    std::vector<Trunk> trunks_;
    std::unique_ptr<EnsembleHead> ensemble_;
    std::unique_ptr<UncertaintyHead> unc_head_;
    std::unique_ptr<OutputProjection> out_proj_;

    bool stats_ready_ = false;
    NormStats raw_stats_;           // per input channel
    NormStats comp_trend_stats_;    // per input channel (decomp mode)
    NormStats comp_seasonal_stats_; // per input channel (decomp mode)
    double target_mean_ = 0.0;
    double target_std_ = 1.0;
};

} // namespace maestro
