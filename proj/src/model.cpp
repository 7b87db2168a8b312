#include "maestro/model.hpp"

#include <algorithm>
#include <cmath>

namespace maestro {

using ad::Graph;
using ad::Node;

void ModelConfig::validate() const {
    if (L < 1 || H < 1) throw UsageError("config: L and H must be at least 1");
    if (d_model % attn_heads != 0)
        throw UsageError("config: attn_heads must divide d_model");
    if (use_bilstm && d_model % 2 != 0)
        throw UsageError("config: d_model must be even when the BiLSTM block is enabled");
    if (use_decomp) {
        if (K_decomp % 2 == 0) throw UsageError("config: K_decomp must be odd");
        if (K_decomp > L) throw UsageError("config: K_decomp must not exceed L");
    }
    if (use_msconv) {
        if (kernels.empty() || dilations.empty())
            throw UsageError("config: msconv kernel/dilation sets must be non-empty");
        for (std::size_t k : kernels)
            if (k % 2 == 0) throw UsageError("config: msconv kernels must be odd");
    }
    if (use_freq && freq_windows.empty())
        throw UsageError("config: freq_windows must be non-empty");
    if (gain_bound <= 0.0) throw UsageError("config: gain_bound must be positive");
    if (eps_sigma <= 0.0) throw UsageError("config: eps_sigma must be positive");
    if (huber_delta <= 0.0) throw UsageError("config: huber_delta must be positive");
    if (modalities.empty()) throw UsageError("config: modality set must be non-empty");
    if (cca_dim < 1) throw UsageError("config: cca_dim must be at least 1");
}

namespace {
void disable_all_enhancements(ModelConfig& c) {
    c.use_decomp = false;
    c.use_mamba = false;
    c.use_msconv = false;
    c.use_freq = false;
    c.use_bilstm = false;
    c.use_cross_attn = false;
}
} // namespace

ModelConfig ablation_variant(const ModelConfig& base, const std::string& name) {
    ModelConfig c = base;
    if (name == "full" || name == "full_modal") {
        c.modalities = {Modality::Surveillance, Modality::Trends, Modality::Weather};
        return c;
    }
    if (name == "w/o Mamba" || name == "wo_mamba") {
        c.use_mamba = false;
    } else if (name == "w/o Cross-Channel Attention" || name == "wo_cross_attn") {
        c.use_cross_attn = false;
    } else if (name == "w/o Frequency Domain" || name == "wo_freq") {
        c.use_freq = false;
    } else if (name == "w/o Decomposition" || name == "wo_decomp") {
        c.use_decomp = false;
    } else if (name == "w/o Multi-scale" || name == "wo_msconv") {
        c.use_msconv = false;
    } else if (name == "w/o BiLSTM" || name == "wo_bilstm") {
        c.use_bilstm = false;
    } else if (name == "only Mamba" || name == "only_mamba") {
        disable_all_enhancements(c);
        c.use_mamba = true;
    } else if (name == "only Cross-Attention" || name == "only_cross_attn") {
        disable_all_enhancements(c);
        c.use_cross_attn = true;
    } else if (name == "only Frequency Domain" || name == "only_freq") {
        disable_all_enhancements(c);
        c.use_freq = true;
    } else if (name == "Minimal Model" || name == "minimal") {
        disable_all_enhancements(c);
    } else if (name == "single_modal_flu") {
        c.modalities = {Modality::Surveillance};
    } else if (name == "single_modal_trend") {
        c.modalities = {Modality::Trends};
    } else if (name == "single_modal_weather") {
        c.modalities = {Modality::Weather};
    } else if (name == "modality_flu_trend") {
        c.modalities = {Modality::Surveillance, Modality::Trends};
    } else if (name == "modality_flu_weather") {
        c.modalities = {Modality::Surveillance, Modality::Weather};
    } else if (name == "modality_trend_weather") {
        c.modalities = {Modality::Trends, Modality::Weather};
    } else {
        throw UsageError("unknown ablation variant '" + name + "'");
    }
    return c;
}

std::vector<std::string> component_ablation_names() {
    return {"full",
            "w/o Mamba",
            "w/o Cross-Channel Attention",
            "w/o Frequency Domain",
            "w/o Decomposition",
            "w/o Multi-scale",
            "w/o BiLSTM",
            "only Mamba",
            "only Cross-Attention",
            "only Frequency Domain",
            "Minimal Model"};
}

std::vector<std::string> all_variant_names() {
    auto v = component_ablation_names();
    for (const char* n : {"single_modal_flu", "single_modal_trend", "single_modal_weather",
                          "modality_flu_trend", "modality_flu_weather",
                          "modality_trend_weather", "full_modal"})
        v.push_back(n);
    return v;
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig cfg, std::vector<InputChannel> input_channels, std::uint64_t seed)
    : cfg_(std::move(cfg)), input_channels_(std::move(input_channels)), store_(seed) {
    cfg_.validate();
    if (input_channels_.empty()) throw UsageError("model: needs at least one input channel");

    if (cfg_.ensemble_mode) {
        // one trunk per modality present, in a fixed order
        for (Modality m : {Modality::Surveillance, Modality::Trends, Modality::Weather}) {
            Trunk trunk;
            for (std::size_t i = 0; i < input_channels_.size(); ++i)
                if (input_channels_[i].modality == m) trunk.channel_idx.push_back(i);
            if (trunk.channel_idx.empty()) continue;
            trunk.prefix = "mod_" + modality_to_string(m);
            trunks_.push_back(std::move(trunk));
        }
        if (trunks_.size() < 2)
            throw UsageError("model: ensemble_mode requires input channels from at least "
                             "two modalities");
    } else {
        Trunk trunk;
        trunk.prefix = "main";
        for (std::size_t i = 0; i < input_channels_.size(); ++i)
            trunk.channel_idx.push_back(i);
        trunks_.push_back(std::move(trunk));
    }
    for (Trunk& t : trunks_) build_trunk(t);

    if (cfg_.ensemble_mode) {
        ensemble_ = std::make_unique<EnsembleHead>(store_, "ensemble", cfg_.d_model,
                                                   trunks_.size(), cfg_.d_model);
        if (cfg_.estimate_uncertainty) {
            store_.create("head.sigma.w", {cfg_.d_model, 1}, Init::Zero);
            store_.create("head.sigma.b", {1}, Init::Const,
                          std::log(std::exp(1.0) - 1.0));
        }
    } else if (cfg_.estimate_uncertainty) {
        unc_head_ = std::make_unique<UncertaintyHead>(store_, "head.unc", cfg_.d_model,
                                                      cfg_.eps_sigma);
    } else {
        out_proj_ = std::make_unique<OutputProjection>(store_, "head.out", cfg_.d_model);
    }
}

void Model::build_trunk(Trunk& trunk) {
    const std::size_t dg = trunk.channel_idx.size();
    const std::size_t n_streams = cfg_.use_decomp ? 2 : 1;
    std::vector<FreqConfig> freq_cfgs;
    for (WindowKind w : cfg_.freq_windows) freq_cfgs.push_back({w});

    for (std::size_t s = 0; s < n_streams; ++s) {
        const std::string sp =
            trunk.prefix + (cfg_.use_decomp ? (s == 0 ? ".seasonal" : ".trend") : ".stream");
        Stream stream;
        stream.embed = std::make_unique<TokenEmbed>(store_, sp + ".embed", dg, cfg_.d_model);
        stream.encoder = std::make_unique<EncoderStack>(
            store_, sp + ".enc", cfg_.d_model,
            EncoderOptions{cfg_.encoder_layers, cfg_.attn_heads, cfg_.ffn_mult});
        if (cfg_.use_mamba)
            stream.mamba =
                std::make_unique<MambaBlock>(store_, sp + ".mamba", cfg_.d_model, cfg_.n_state);
        if (cfg_.use_msconv)
            stream.msconv = std::make_unique<MsConvBlock>(store_, sp + ".msconv", cfg_.d_model,
                                                          cfg_.kernels, cfg_.dilations);
        if (cfg_.use_freq)
            stream.freq = std::make_unique<FreqFilterBlock>(
                store_, sp + ".freq", cfg_.d_model, cfg_.L, cfg_.gain_bound, freq_cfgs);
        if (cfg_.use_bilstm)
            stream.bilstm = std::make_unique<BiLstmBlock>(store_, sp + ".bilstm", cfg_.d_model);
        trunk.streams.push_back(std::move(stream));
    }
    if (cfg_.use_decomp)
        trunk.fuse = std::make_unique<AdaptiveComponentFuse>(store_, trunk.prefix + ".fuse",
                                                             cfg_.d_model);
    if (cfg_.use_cross_attn) {
        store_.create(trunk.prefix + ".cca.lift.u", {dg, cfg_.cca_dim}, Init::Gaussian, 0.5);
        store_.create(trunk.prefix + ".cca.lift.b", {dg, cfg_.cca_dim}, Init::Zero);
        trunk.cca = std::make_unique<CrossChannelAttention>(store_, trunk.prefix + ".cca.attn",
                                                            cfg_.cca_dim, cfg_.cca_dim,
                                                            cfg_.cca_dim);
        store_.create(trunk.prefix + ".cca.mix.w", {dg * cfg_.cca_dim, cfg_.d_model},
                      Init::Zero);
        store_.create(trunk.prefix + ".cca.mix.b", {cfg_.d_model}, Init::Zero);
    }
    trunk.proj = std::make_unique<TemporalProjection>(store_, trunk.prefix + ".tproj", cfg_.L,
                                                      cfg_.H);
}

// ---------------------------------------------------------------------------

namespace {
NormStats slice_stats(const NormStats& st, const std::vector<std::size_t>& idx) {
    NormStats out;
    for (std::size_t i : idx) {
        out.mean.push_back(st.mean[i]);
        out.stddev.push_back(st.stddev[i]);
        out.channel_names.push_back(st.channel_names[i]);
        out.floored.push_back(st.floored[i]);
    }
    return out;
}
} // namespace

void Model::fit_stats(const TimeSeriesFrame& train_frame) {
    std::vector<std::vector<double>> series;
    std::vector<std::string> names;
    for (const auto& ch : input_channels_) {
        series.push_back(train_frame.channel(ch.name)); // throws naming a missing channel
        names.push_back(ch.name);
    }
    raw_stats_ = fit_norm_series(series, names);

    if (cfg_.use_decomp) {
        const std::size_t T = train_frame.length(), D = series.size();
        Tensor mat = Tensor::zeros({1, T, D});
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t d = 0; d < D; ++d) mat.at3(0, t, d) = series[d][t];
        DecompTensors parts = decompose_plain(mat, cfg_.K_decomp);
        std::vector<std::vector<double>> tr(D), se(D);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t d = 0; d < D; ++d) {
                tr[d].push_back(parts.trend.at3(0, t, d));
                se[d].push_back(parts.seasonal.at3(0, t, d));
            }
        comp_trend_stats_ = fit_norm_series(tr, names);
        comp_seasonal_stats_ = fit_norm_series(se, names);
    }

    const auto& target = train_frame.channel(train_frame.target_column);
    NormStats ts = fit_norm_series({target}, {train_frame.target_column});
    target_mean_ = ts.mean[0];
    target_std_ = ts.stddev[0];
    stats_ready_ = true;
}

Tensor Model::gather_channels(const Tensor& x_raw, const std::vector<std::size_t>& idx) const {
    const std::size_t B = x_raw.dim(0), L = x_raw.dim(1);
    Tensor out = Tensor::zeros({B, L, idx.size()});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t j = 0; j < idx.size(); ++j)
                out.at3(b, t, j) = x_raw.at3(b, t, idx[j]);
    return out;
}

Node* Model::run_trunk(Graph& g, Binding& p, const Trunk& trunk, const Tensor& x_raw,
                       Node** spectral_acc, Node** stability_acc) const {
    const Tensor x_group = gather_channels(x_raw, trunk.channel_idx);
    const NormStats raw_st = slice_stats(raw_stats_, trunk.channel_idx);
    const Tensor x_norm = apply_norm(x_group, raw_st);
    const std::size_t B = x_group.dim(0), L = x_group.dim(1), C = trunk.channel_idx.size();

    std::vector<Tensor> stream_inputs;
    if (cfg_.use_decomp) {
        DecompTensors parts = decompose_plain(x_group, cfg_.K_decomp);
        stream_inputs.push_back(
            apply_norm(parts.seasonal, slice_stats(comp_seasonal_stats_, trunk.channel_idx)));
        stream_inputs.push_back(
            apply_norm(parts.trend, slice_stats(comp_trend_stats_, trunk.channel_idx)));
    } else {
        stream_inputs.push_back(x_norm);
    }

    std::vector<Node*> encoded;
    for (std::size_t s = 0; s < trunk.streams.size(); ++s) {
        const Stream& st = trunk.streams[s];
        Node* x = g.constant(stream_inputs[s]);
        Node* h = st.embed->forward(g, p, x);
        h = st.encoder->forward(g, p, h);
        if (st.mamba) {
            h = g.add(h, st.mamba->forward(g, p, h));
            if (stability_acc) {
                Node* pen = st.mamba->stability_penalty(g, p);
                *stability_acc = *stability_acc ? g.add(*stability_acc, pen) : pen;
            }
        }
        if (st.msconv) h = g.add(h, st.msconv->forward(g, p, h));
        if (st.freq) {
            h = g.add(h, st.freq->forward(g, p, h));
            if (spectral_acc) {
                Node* reg = st.freq->regularizer(g, p, cfg_.lam_smooth, cfg_.lam_sparse);
                *spectral_acc = *spectral_acc ? g.add(*spectral_acc, reg) : reg;
            }
        }
        if (st.bilstm) h = st.bilstm->forward(g, p, h); // residual inside
        encoded.push_back(h);
    }

    Node* fused = cfg_.use_decomp ? trunk.fuse->forward(g, p, encoded[0], encoded[1])
                                  : encoded[0];

    if (trunk.cca) {
        // lift each input variable to a small per-variable token, attend
        // over variables, then mix back into the stream
        Node* xn = g.constant(x_norm); // (B,L,C)
        Node* x4 = g.expand(g.reshape(xn, {B, L, C, 1}), {B, L, C, cfg_.cca_dim});
        Node* u = g.expand(g.reshape(p[trunk.prefix + ".cca.lift.u"], {1, 1, C, cfg_.cca_dim}),
                           {B, L, C, cfg_.cca_dim});
        Node* bb = g.expand(g.reshape(p[trunk.prefix + ".cca.lift.b"], {1, 1, C, cfg_.cca_dim}),
                            {B, L, C, cfg_.cca_dim});
        Node* tokens = g.add(g.mul(x4, u), bb);
        Node* mixed = trunk.cca->forward(g, p, tokens); // (B,L,C,d_v)
        Node* flat = g.reshape(mixed, {B * L, C * cfg_.cca_dim});
        Node* proj = ad::linear(g, flat, p[trunk.prefix + ".cca.mix.w"],
                                p[trunk.prefix + ".cca.mix.b"]);
        fused = g.add(fused, g.reshape(proj, {B, L, cfg_.d_model}));
    }

    return trunk.proj->forward(g, p, fused); // (B,H,d)
}

ModelOutput Model::forward(Graph& g, Binding& p, const Tensor& x_raw,
                           bool want_regularizers) const {
    if (!stats_ready_)
        throw UsageError("model: fit_stats must run before forward");
    if (x_raw.rank() != 3 || x_raw.dim(2) != input_channels_.size())
        throw ad::ShapeError("model: expected (B,L," +
                             std::to_string(input_channels_.size()) + ") inputs, got " +
                             shape_str(x_raw.shape));
    if (x_raw.dim(1) != cfg_.L)
        throw ad::ShapeError("model: window length " + std::to_string(x_raw.dim(1)) +
                             " does not match configured L=" + std::to_string(cfg_.L));

    ModelOutput out;
    Node* spectral = nullptr;
    Node* stability = nullptr;
    Node** spectral_acc = want_regularizers ? &spectral : nullptr;
    Node** stability_acc = want_regularizers ? &stability : nullptr;

    std::vector<Node*> features;
    features.reserve(trunks_.size());
    for (const Trunk& t : trunks_)
        features.push_back(run_trunk(g, p, t, x_raw, spectral_acc, stability_acc));

    const std::size_t B = x_raw.dim(0);
    if (cfg_.ensemble_mode) {
        Node* weights_node = nullptr;
        out.mean_norm = ensemble_->forward(g, p, features, &out.ensemble_weights, &weights_node);
        if (cfg_.estimate_uncertainty) {
            Node* combined = nullptr;
            for (std::size_t m = 0; m < features.size(); ++m) {
                Node* wm = g.reshape(g.slice(weights_node, 1, m, 1), {B});
                Node* term = ad::scale_rows(g, features[m], wm);
                combined = combined ? g.add(combined, term) : term;
            }
            Node* flat = g.reshape(combined, {B * cfg_.H, cfg_.d_model});
            Node* pre = ad::linear(g, flat, p["head.sigma.w"], p["head.sigma.b"]);
            out.std_norm = g.reshape(g.add_scalar(g.softplus(pre), cfg_.eps_sigma), {B, cfg_.H});
        }
        if (want_regularizers && weights_node) {
            // per-batch weight rows stand in for the time axis; scaled so the
            // penalty does not grow with batch size
            Node* reg = weight_regularizer(g, weights_node, cfg_.lam_entropy, cfg_.lam_tv);
            out.weights_reg = g.scale(reg, 1.0 / static_cast<double>(B));
        }
    } else if (cfg_.estimate_uncertainty) {
        auto head = unc_head_->forward(g, p, features[0]);
        out.mean_norm = head.mean;
        out.std_norm = head.std;
    } else {
        out.mean_norm = out_proj_->forward(g, p, features[0]);
    }

    if (want_regularizers) {
        out.spectral_reg = spectral;
        out.stability_pen = stability;
        if (out.std_norm) out.sigma_mean = g.mean(out.std_norm);
    }

    out.mean_denorm = out.mean_norm->value;
    for (double& v : out.mean_denorm.data) v = target_mean_ + target_std_ * v;
    if (out.std_norm) {
        out.std_denorm = out.std_norm->value;
        for (double& v : out.std_denorm.data) v *= target_std_;
    }
    if (!out.mean_denorm.all_finite())
        throw NumericError("model: non-finite forecast output");
    return out;
}

std::vector<ForecastResult> Model::predict(const Tensor& x_raw) const {
    Graph g;
    Binding p(g, const_cast<ParamStore&>(store_), false);
    ModelOutput out = forward(g, p, x_raw, false);
    const std::size_t B = x_raw.dim(0), H = cfg_.H;
    std::vector<ForecastResult> results(B);
    for (std::size_t b = 0; b < B; ++b) {
        results[b].window_id = b;
        for (std::size_t h = 0; h < H; ++h) {
            results[b].mean.push_back(out.mean_denorm.at2(b, h));
            results[b].std.push_back(out.std_norm ? out.std_denorm.at2(b, h)
                                                  : target_std_ * cfg_.eps_sigma);
        }
    }
    return results;
}

Tensor Model::normalize_targets(const Tensor& y_raw) const {
    if (!stats_ready_) throw UsageError("model: fit_stats must run before normalize_targets");
    Tensor out = y_raw;
    for (double& v : out.data) v = (v - target_mean_) / target_std_;
    return out;
}

void Model::project_constraints() {
    for (Trunk& t : trunks_)
        for (Stream& s : t.streams)
            if (s.freq) s.freq->project(store_);
}

Model::StatsBlob Model::export_stats() const {
    return {raw_stats_, comp_trend_stats_, comp_seasonal_stats_, target_mean_, target_std_};
}

void Model::import_stats(const StatsBlob& blob) {
    raw_stats_ = blob.raw;
    comp_trend_stats_ = blob.comp_trend;
    comp_seasonal_stats_ = blob.comp_seasonal;
    target_mean_ = blob.target_mean;
    target_std_ = blob.target_std;
    stats_ready_ = true;
}

} // namespace maestro
