#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "maestro/checkpoint.hpp"
#include "maestro/gradsuite.hpp"
#include "maestro/synth.hpp"
#include "maestro/train.hpp"

namespace fs = std::filesystem;
using namespace maestro;
using nlohmann::json;

namespace {

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
}

std::string frame_csv(const TimeSeriesFrame& frame) {
    std::string out = "date";
    for (const auto& name : frame.channel_names) out += "," + name;
    out += '\n';
    for (std::size_t t = 0; t < frame.length(); ++t) {
        out += frame.timestamp_text[t];
        for (const auto& ch : frame.channels) {
            out += ',';
            out += format_double(ch[t]);
        }
        out += '\n';
    }
    return out;
}

json report_json(const FileConfig& cfg, const RunReport& report) {
    json j;
    j["config"] = json::parse(config_echo_json(cfg));
    j["param_count"] = report.param_count;
    json seeds = json::array();
    for (const auto& r : report.per_seed) {
        seeds.push_back({{"seed", r.seed},
                         {"mae", r.test.mae},
                         {"rmse", r.test.rmse},
                         {"mape_pct", r.test.mape_pct},
                         {"mape_excluded", r.test.mape_excluded},
                         {"r2", r.test.r2},
                         {"best_val", r.best_val},
                         {"best_epoch", r.best_epoch},
                         {"epochs_run", r.epochs_run},
                         {"early_stopped", r.early_stopped},
                         {"wall_seconds", r.wall_seconds},
                         {"events", r.events}});
    }
    j["per_seed"] = seeds;
    j["mean"] = {{"mae", report.mean.mae},
                 {"rmse", report.mean.rmse},
                 {"mape_pct", report.mean.mape_pct},
                 {"r2", report.mean.r2}};
    j["stddev"] = {{"mae", report.stddev.mae},
                   {"rmse", report.stddev.rmse},
                   {"mape_pct", report.stddev.mape_pct},
                   {"r2", report.stddev.r2}};
    return j;
}

TimeSeriesFrame load_frame(const FileConfig& cfg, const std::string& data_path) {
    IngestOptions opts;
    opts.missing = cfg.missing;
    IngestReport rep;
    TimeSeriesFrame frame = ingest_csv(data_path, cfg.schema, cfg.target_column, opts, &rep);
    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
    return frame;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    std::string cur;
    for (char c : s + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stod(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    return out;
}

int run_synth(const std::string& out_path, std::size_t T, std::uint64_t seed,
              const std::string& periods, const std::string& amplitudes, double trend_slope,
              double noise_std, double snr, std::size_t search_lag, double search_strength,
              std::size_t temp_lag, double temp_strength, double exog_noise) {
    SynthSpec spec;
    spec.T = T;
    spec.seed = seed;
    spec.trend_slope = trend_slope;
    const auto ps = parse_double_list(periods);
    const auto as = parse_double_list(amplitudes);
    for (std::size_t i = 0; i < ps.size(); ++i)
        spec.seasonal.push_back({ps[i], i < as.size() ? as[i] : 1.0,
                                 0.4 * static_cast<double>(i)});
    spec.search_noise_std = exog_noise;
    spec.temp_noise_std = exog_noise;
    if (search_strength != 0.0) spec.couplings.push_back({"search", search_lag, search_strength});
    if (temp_strength != 0.0) spec.couplings.push_back({"temp", temp_lag, temp_strength});
    if (snr > 0.0) {
        spec.noise_std = 0.0;
        spec.noise_std = std::sqrt(synth_signal_variance(spec) / snr);
    } else {
        spec.noise_std = noise_std;
    }
    TimeSeriesFrame frame = synth_generate(spec);
    write_file(out_path, frame_csv(frame));
    std::cout << "wrote " << out_path << " (T=" << T << ", noise_std=" << spec.noise_std
              << ")\n";
    return 0;
}

int run_train(const std::string& config_path, const std::string& data_path, long long seed,
              const std::string& out_dir) {
    FileConfig cfg = config_path.empty() ? FileConfig{} : load_config_file(config_path);
    if (seed >= 0) cfg.train.seeds = {static_cast<std::uint64_t>(seed)};
    TimeSeriesFrame frame = load_frame(cfg, data_path);
    auto [restricted, channels] = select_inputs(frame, cfg.model);
    SplitFrames frames = chronological_split(restricted, cfg.train.f_train, cfg.train.f_val,
                                             cfg.train.f_test, cfg.model.L + cfg.model.H);

    fs::create_directories(out_dir);
    RunReport report;
    for (std::uint64_t s : cfg.train.seeds) {
        Model model(cfg.model, channels, s);
        SeedRunResult run = train_single(model, frames, cfg.train);
        save_checkpoint(model, (fs::path(out_dir) / ("checkpoint_seed" + std::to_string(s) +
                                                     ".json")).string());
        write_file(fs::path(out_dir) / ("loss_curve_seed" + std::to_string(s) + ".csv"),
                   curve_csv(run.curve));
        write_file(fs::path(out_dir) / ("loss_curve_seed" + std::to_string(s) + ".svg"),
                   curve_svg(run.curve));
        report.per_seed.push_back(std::move(run));
        report.param_count = model.count_params();
    }
    report.mean = metrics_mean(report.per_seed);
    report.stddev = metrics_stddev(report.per_seed);

    write_file(fs::path(out_dir) / "report.json", report_json(cfg, report).dump(2) + "\n");
    write_file(fs::path(out_dir) / "report.txt", report_text(report));
    std::cout << report_text(report);
    return 0;
}

int run_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& data_path) {
    FileConfig cfg = config_path.empty() ? FileConfig{} : load_config_file(config_path);
    Model model = load_checkpoint(checkpoint_path);
    TimeSeriesFrame frame = load_frame(cfg, data_path);
    auto [restricted, channels] = select_inputs(frame, model.config());
    (void)channels;
    SplitFrames frames = chronological_split(restricted, cfg.train.f_train, cfg.train.f_val,
                                             cfg.train.f_test,
                                             model.config().L + model.config().H);
    ForecastTable t = forecast_frame(model, frames.test);
    Metrics m = compute_metrics(t.y_true, t.y_mean);
    std::cout << "test windows: " << t.y_true.size() << "\n";
    std::cout << "mae=" << format_double(m.mae) << " rmse=" << format_double(m.rmse)
              << " mape%=" << format_double(m.mape_pct) << " (excluded "
              << m.mape_excluded << " zero targets) r2=" << format_double(m.r2) << "\n";
    if (model.config().estimate_uncertainty && t.y_true.size() >= 30) {
        CalibrationResult c = calibration_check(t.y_true, t.y_mean, t.y_std);
        std::cout << "calibration: ks=" << format_double(c.ks_stat)
                  << " critical=" << format_double(c.critical)
                  << (c.pass ? " PASS" : " FAIL") << " (n=" << c.n << ", alpha=0.01)\n";
    }
    return 0;
}

int run_forecast(const std::string& checkpoint_path, const std::string& data_path,
                 const std::string& out_path, const std::string& config_path) {
    FileConfig cfg = config_path.empty() ? FileConfig{} : load_config_file(config_path);
    Model model = load_checkpoint(checkpoint_path);
    TimeSeriesFrame frame = load_frame(cfg, data_path);
    ForecastTable t = forecast_frame(model, frame);
    const std::string csv = forecast_csv(t);
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        write_file(out_path, csv);
        std::cout << "wrote " << out_path << " (" << t.timestamp.size() << " rows)\n";
    }
    return 0;
}

int run_ablate(const std::string& config_path, const std::string& data_path,
               const std::string& variants_arg, const std::string& out_dir) {
    FileConfig cfg = config_path.empty() ? FileConfig{} : load_config_file(config_path);
    TimeSeriesFrame frame = load_frame(cfg, data_path);

    std::vector<std::string> variants;
    if (variants_arg.empty()) {
        variants = component_ablation_names();
    } else {
        std::string cur;
        for (char c : variants_arg + ",") {
            if (c == ',') {
                if (!cur.empty()) variants.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
    }

    auto rows = run_ablation_suite(cfg.model, frame, cfg.train, variants);
    const std::string table = ablation_table(rows);
    std::cout << table;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_file(fs::path(out_dir) / "ablation.csv", ablation_csv(rows));
        write_file(fs::path(out_dir) / "ablation.txt", table);
    }
    for (const auto& row : rows)
        if (!row.error.empty()) return 3;
    return 0;
}

int run_gradcheck() {
    bool all_pass = true;
    for (const auto& e : run_gradient_suite()) {
        std::cout << (e.pass ? "PASS" : "FAIL") << "  " << e.path
                  << "  max_rel_err=" << format_double(e.max_rel_err) << " (limit "
                  << format_double(e.limit) << ")\n";
        all_pass = all_pass && e.pass;
    }
    return all_pass ? 0 : 3;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"maestro - spectro-temporal multivariate forecaster"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "emit a synthetic multi-modal CSV");
    std::string s_out;
    std::size_t s_T = 500;
    std::uint64_t s_seed = 0;
    std::string s_periods = "52,13";
    std::string s_amps = "1.0,0.5";
    double s_slope = 0.0, s_noise = 0.1, s_snr = 0.0;
    std::size_t s_slag = 7, s_tlag = 3;
    double s_sstr = 0.5, s_tstr = 0.3;
    double s_exog_noise = 0.3;
    synth->add_option("--out", s_out, "output CSV path")->required();
    synth->add_option("--T", s_T, "series length");
    synth->add_option("--seed", s_seed, "generator seed");
    synth->add_option("--periods", s_periods, "comma-separated seasonal periods");
    synth->add_option("--amplitudes", s_amps, "comma-separated amplitudes");
    synth->add_option("--trend-slope", s_slope, "linear trend slope");
    synth->add_option("--noise-std", s_noise, "target noise std");
    synth->add_option("--snr", s_snr, "pick noise std for this signal-to-noise ratio");
    synth->add_option("--search-lag", s_slag, "search channel lead (steps)");
    synth->add_option("--search-strength", s_sstr, "search coupling strength");
    synth->add_option("--temp-lag", s_tlag, "weather channel lead (steps)");
    synth->add_option("--temp-strength", s_tstr, "weather coupling strength");
    synth->add_option("--exog-noise", s_exog_noise, "noise std of the exogenous channels");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string t_config, t_data, t_out;
    long long t_seed = -1;
    train->add_option("--config", t_config, "config file (flat JSON)");
    train->add_option("--data", t_data, "input CSV")->required();
    train->add_option("--seed", t_seed, "single training seed (overrides config seed list)");
    train->add_option("--out", t_out, "output directory")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    std::string e_config, e_ckpt, e_data;
    eval->add_option("--config", e_config, "config file");
    eval->add_option("--checkpoint", e_ckpt, "checkpoint path")->required();
    eval->add_option("--data", e_data, "input CSV")->required();

    // forecast
    auto* fct = app.add_subcommand("forecast", "rolling forecasts over a CSV");
    std::string f_ckpt, f_data, f_out, f_config;
    fct->add_option("--checkpoint", f_ckpt, "checkpoint path")->required();
    fct->add_option("--data", f_data, "input CSV")->required();
    fct->add_option("--out", f_out, "output CSV path (stdout when omitted)");
    fct->add_option("--config", f_config, "config file (schema/ingest options)");

    // ablate
    auto* abl = app.add_subcommand("ablate", "train ablation variants and compare");
    std::string a_config, a_data, a_variants, a_out;
    abl->add_option("--config", a_config, "config file");
    abl->add_option("--data", a_data, "input CSV")->required();
    abl->add_option("--variants", a_variants, "comma-separated variant names");
    abl->add_option("--out", a_out, "output directory");

    // gradcheck
    app.add_subcommand("gradcheck", "finite-difference audit of every block");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed())
            return run_synth(s_out, s_T, s_seed, s_periods, s_amps, s_slope, s_noise, s_snr,
                             s_slag, s_sstr, s_tlag, s_tstr, s_exog_noise);
        if (train->parsed()) return run_train(t_config, t_data, t_seed, t_out);
        if (eval->parsed()) return run_eval(e_config, e_ckpt, e_data);
        if (fct->parsed()) return run_forecast(f_ckpt, f_data, f_out, f_config);
        if (abl->parsed()) return run_ablate(a_config, a_data, a_variants, a_out);
        return run_gradcheck();
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
