#include "maestro/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace maestro {

using nlohmann::json;

namespace {

json model_config_to_json(const ModelConfig& c) {
    json j;
    j["L"] = c.L;
    j["H"] = c.H;
    j["d_model"] = c.d_model;
    j["encoder_layers"] = c.encoder_layers;
    j["attn_heads"] = c.attn_heads;
    j["ffn_mult"] = c.ffn_mult;
    j["K_decomp"] = c.K_decomp;
    j["kernels"] = c.kernels;
    j["dilations"] = c.dilations;
    j["n_state"] = c.n_state;
    j["cca_dim"] = c.cca_dim;
    j["gain_bound"] = c.gain_bound;
    json fw = json::array();
    for (WindowKind w : c.freq_windows) fw.push_back(window_to_string(w));
    j["freq_windows"] = fw;
    j["lam_smooth"] = c.lam_smooth;
    j["lam_sparse"] = c.lam_sparse;
    j["lam_entropy"] = c.lam_entropy;
    j["lam_tv"] = c.lam_tv;
    j["eps_sigma"] = c.eps_sigma;
    j["huber_delta"] = c.huber_delta;
    j["loss"] = point_loss_to_string(c.loss);
    j["lambda_point"] = c.lambdas.point;
    j["lambda_nll"] = c.lambdas.nll;
    j["lambda_spectral"] = c.lambdas.spectral;
    j["lambda_weights"] = c.lambdas.weights;
    j["lambda_stability"] = c.lambdas.stability;
    j["lambda_sigma_mean"] = c.lambdas.sigma_mean;
    j["use_decomp"] = c.use_decomp;
    j["use_mamba"] = c.use_mamba;
    j["use_msconv"] = c.use_msconv;
    j["use_freq"] = c.use_freq;
    j["use_bilstm"] = c.use_bilstm;
    j["use_cross_attn"] = c.use_cross_attn;
    j["estimate_uncertainty"] = c.estimate_uncertainty;
    j["ensemble_mode"] = c.ensemble_mode;
    j["include_target_in_inputs"] = c.include_target_in_inputs;
    json mods = json::array();
    for (Modality m : c.modalities) mods.push_back(modality_to_string(m));
    j["modalities"] = mods;
    return j;
}

template <typename T>
std::vector<T> to_size_vec(const json& v, const std::string& key) {
    if (!v.is_array()) throw UsageError("config key '" + key + "' must be an array");
    std::vector<T> out;
    for (const auto& e : v) out.push_back(e.get<T>());
    return out;
}

bool apply_model_key(ModelConfig& c, const std::string& key, const json& v) {
    if (key == "L") c.L = v.get<std::size_t>();
    else if (key == "H") c.H = v.get<std::size_t>();
    else if (key == "d_model") c.d_model = v.get<std::size_t>();
    else if (key == "encoder_layers") c.encoder_layers = v.get<std::size_t>();
    else if (key == "attn_heads") c.attn_heads = v.get<std::size_t>();
    else if (key == "ffn_mult") c.ffn_mult = v.get<std::size_t>();
    else if (key == "K_decomp") c.K_decomp = v.get<std::size_t>();
    else if (key == "kernels") c.kernels = to_size_vec<std::size_t>(v, key);
    else if (key == "dilations") c.dilations = to_size_vec<std::size_t>(v, key);
    else if (key == "n_state") c.n_state = v.get<std::size_t>();
    else if (key == "cca_dim") c.cca_dim = v.get<std::size_t>();
    else if (key == "gain_bound") c.gain_bound = v.get<double>();
    else if (key == "freq_windows") {
        c.freq_windows.clear();
        for (const auto& e : v) c.freq_windows.push_back(window_from_string(e.get<std::string>()));
    } else if (key == "lam_smooth") c.lam_smooth = v.get<double>();
    else if (key == "lam_sparse") c.lam_sparse = v.get<double>();
    else if (key == "lam_entropy") c.lam_entropy = v.get<double>();
    else if (key == "lam_tv") c.lam_tv = v.get<double>();
    else if (key == "eps_sigma") c.eps_sigma = v.get<double>();
    else if (key == "huber_delta") c.huber_delta = v.get<double>();
    else if (key == "loss") c.loss = point_loss_from_string(v.get<std::string>());
    else if (key == "lambda_point") c.lambdas.point = v.get<double>();
    else if (key == "lambda_nll") c.lambdas.nll = v.get<double>();
    else if (key == "lambda_spectral") c.lambdas.spectral = v.get<double>();
    else if (key == "lambda_weights") c.lambdas.weights = v.get<double>();
    else if (key == "lambda_stability") c.lambdas.stability = v.get<double>();
    else if (key == "lambda_sigma_mean") c.lambdas.sigma_mean = v.get<double>();
    else if (key == "use_decomp") c.use_decomp = v.get<bool>();
    else if (key == "use_mamba") c.use_mamba = v.get<bool>();
    else if (key == "use_msconv") c.use_msconv = v.get<bool>();
    else if (key == "use_freq") c.use_freq = v.get<bool>();
    else if (key == "use_bilstm") c.use_bilstm = v.get<bool>();
    else if (key == "use_cross_attn") c.use_cross_attn = v.get<bool>();
    else if (key == "estimate_uncertainty") c.estimate_uncertainty = v.get<bool>();
    else if (key == "ensemble_mode") c.ensemble_mode = v.get<bool>();
    else if (key == "include_target_in_inputs") c.include_target_in_inputs = v.get<bool>();
    else if (key == "modalities") {
        c.modalities.clear();
        for (const auto& e : v) c.modalities.push_back(modality_from_string(e.get<std::string>()));
    } else {
        return false;
    }
    return true;
}

json train_config_to_json(const TrainConfig& c) {
    json j;
    j["lr"] = c.lr;
    j["batch_size"] = c.batch_size;
    j["max_epochs"] = c.max_epochs;
    j["patience_early"] = c.patience_early;
    j["patience_plateau"] = c.patience_plateau;
    j["plateau_factor"] = c.plateau_factor;
    j["min_delta"] = c.min_delta;
    j["seeds"] = c.seeds;
    j["f_train"] = c.f_train;
    j["f_val"] = c.f_val;
    j["f_test"] = c.f_test;
    j["stride"] = c.stride;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["adam_eps"] = c.adam_eps;
    return j;
}

bool apply_train_key(TrainConfig& c, const std::string& key, const json& v) {
    if (key == "lr") c.lr = v.get<double>();
    else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (key == "max_epochs") c.max_epochs = v.get<std::size_t>();
    else if (key == "patience_early") c.patience_early = v.get<std::size_t>();
    else if (key == "patience_plateau") c.patience_plateau = v.get<std::size_t>();
    else if (key == "plateau_factor") c.plateau_factor = v.get<double>();
    else if (key == "min_delta") c.min_delta = v.get<double>();
    else if (key == "seeds") c.seeds = to_size_vec<std::uint64_t>(v, key);
    else if (key == "f_train") c.f_train = v.get<double>();
    else if (key == "f_val") c.f_val = v.get<double>();
    else if (key == "f_test") c.f_test = v.get<double>();
    else if (key == "stride") c.stride = v.get<std::size_t>();
    else if (key == "beta1") c.beta1 = v.get<double>();
    else if (key == "beta2") c.beta2 = v.get<double>();
    else if (key == "adam_eps") c.adam_eps = v.get<double>();
    else return false;
    return true;
}

json stats_to_json(const NormStats& st) {
    json j;
    j["channel_names"] = st.channel_names;
    j["mean"] = st.mean;
    j["stddev"] = st.stddev;
    std::vector<int> fl;
    for (bool b : st.floored) fl.push_back(b ? 1 : 0);
    j["floored"] = fl;
    return j;
}

NormStats stats_from_json(const json& j) {
    NormStats st;
    st.channel_names = j.at("channel_names").get<std::vector<std::string>>();
    st.mean = j.at("mean").get<std::vector<double>>();
    st.stddev = j.at("stddev").get<std::vector<double>>();
    for (int b : j.at("floored").get<std::vector<int>>()) st.floored.push_back(b != 0);
    return st;
}

} // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    json j;
    j["kind"] = "maestro_checkpoint";
    j["format_version"] = 1;
    j["seed"] = model.seed();
    j["config"] = model_config_to_json(model.config());

    json channels = json::array();
    for (const auto& ch : model.input_channels())
        channels.push_back({{"name", ch.name}, {"modality", modality_to_string(ch.modality)}});
    j["input_channels"] = channels;

    const auto stats = model.export_stats();
    j["stats"] = {{"raw", stats_to_json(stats.raw)},
                  {"comp_trend", stats_to_json(stats.comp_trend)},
                  {"comp_seasonal", stats_to_json(stats.comp_seasonal)},
                  {"target_mean", stats.target_mean},
                  {"target_std", stats.target_std}};

    json params = json::array();
    for (const auto& name : model.params().names()) {
        const Tensor& t = model.params().at(name);
        params.push_back({{"name", name}, {"shape", t.shape}, {"data", t.data}});
    }
    j["params"] = params;

    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << j.dump();
    out << "\n";
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("checkpoint " + path + ": " + e.what());
    }
    if (j.value("kind", "") != "maestro_checkpoint")
        throw DataError("checkpoint " + path + ": wrong file kind");
    if (j.value("format_version", 0) != 1)
        throw DataError("checkpoint " + path + ": unsupported format version");

    ModelConfig mc;
    for (const auto& [key, val] : j.at("config").items()) {
        if (!apply_model_key(mc, key, val))
            throw DataError("checkpoint " + path + ": unknown config key '" + key + "'");
    }
    std::vector<InputChannel> channels;
    for (const auto& ch : j.at("input_channels"))
        channels.push_back({ch.at("name").get<std::string>(),
                            modality_from_string(ch.at("modality").get<std::string>())});

    Model model(mc, channels, j.at("seed").get<std::uint64_t>());

    Model::StatsBlob stats;
    const json& js = j.at("stats");
    stats.raw = stats_from_json(js.at("raw"));
    stats.comp_trend = stats_from_json(js.at("comp_trend"));
    stats.comp_seasonal = stats_from_json(js.at("comp_seasonal"));
    stats.target_mean = js.at("target_mean").get<double>();
    stats.target_std = js.at("target_std").get<double>();
    model.import_stats(stats);

    std::size_t loaded = 0;
    for (const auto& pj : j.at("params")) {
        const std::string name = pj.at("name").get<std::string>();
        if (!model.params().has(name))
            throw DataError("checkpoint " + path + ": unexpected parameter '" + name + "'");
        Tensor& dst = model.params().at(name);
        const Shape shape = pj.at("shape").get<Shape>();
        if (shape != dst.shape)
            throw DataError("checkpoint " + path + ": parameter '" + name + "' shape " +
                            shape_str(shape) + " does not match model " + shape_str(dst.shape));
        dst.data = pj.at("data").get<std::vector<double>>();
        if (dst.data.size() != shape_numel(shape))
            throw DataError("checkpoint " + path + ": parameter '" + name + "' data length");
        ++loaded;
    }
    if (loaded != model.params().size())
        throw DataError("checkpoint " + path + ": parameter count mismatch");
    return model;
}

// ---------------------------------------------------------------------------

FileConfig parse_config_json(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw UsageError(origin + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw UsageError(origin + ": config must be a JSON object");

    FileConfig cfg;
    bool schema_seen = false;
    for (const auto& [key, val] : j.items()) {
        if (apply_model_key(cfg.model, key, val)) continue;
        if (apply_train_key(cfg.train, key, val)) continue;
        if (key == "target_column") {
            cfg.target_column = val.get<std::string>();
        } else if (key == "missing_policy") {
            const std::string s = val.get<std::string>();
            if (s == "drop") cfg.missing = MissingPolicy::Drop;
            else if (s == "forward_fill") cfg.missing = MissingPolicy::ForwardFill;
            else throw UsageError(origin + ": missing_policy must be drop|forward_fill");
        } else if (key.rfind("schema.", 0) == 0) {
            if (!schema_seen) {
                cfg.schema.clear();
                schema_seen = true;
            }
            cfg.schema[key.substr(7)] = modality_from_string(val.get<std::string>());
        } else {
            throw UsageError(origin + ": unknown config key '" + key + "'");
        }
    }
    return cfg;
}

FileConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_json(text, path);
}

std::string config_echo_json(const FileConfig& cfg) {
    json j = model_config_to_json(cfg.model);
    json t = train_config_to_json(cfg.train);
    for (const auto& [k, v] : t.items()) j[k] = v;
    j["target_column"] = cfg.target_column;
    j["missing_policy"] = cfg.missing == MissingPolicy::Drop ? "drop" : "forward_fill";
    for (const auto& [col, mod] : cfg.schema) j["schema." + col] = modality_to_string(mod);
    return j.dump(2);
}

} // namespace maestro
