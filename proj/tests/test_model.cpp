#include <doctest.h>

#include <cmath>

#include "maestro/checkpoint.hpp"
#include "maestro/model.hpp"
#include "maestro/rng.hpp"
#include "maestro/synth.hpp"
#include "maestro/train.hpp"

using namespace maestro;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.L = 12;
    c.H = 1;
    c.d_model = 8;
    c.encoder_layers = 1;
    c.attn_heads = 2;
    c.ffn_mult = 2;
    c.K_decomp = 5;
    c.kernels = {3};
    c.dilations = {1};
    c.n_state = 4;
    c.cca_dim = 4;
    return c;
}

TimeSeriesFrame tiny_frame(std::size_t T = 120, std::uint64_t seed = 1) {
    SynthSpec spec;
    spec.T = T;
    spec.seed = seed;
    spec.seasonal = {{12.0, 1.0, 0.2}, {30.0, 0.5, 1.0}};
    spec.trend_slope = 0.01;
    spec.noise_std = 0.1;
    spec.couplings = {{"search", 3, 0.4}};
    return synth_generate(spec);
}

std::vector<InputChannel> frame_channels(const TimeSeriesFrame& f) {
    std::vector<InputChannel> out;
    for (const auto& name : f.channel_names) out.push_back({name, f.modality_of.at(name)});
    return out;
}

} // namespace

TEST_CASE("minimal model forward has the contract shape") {
    ModelConfig c = tiny_config();
    c = ablation_variant(c, "Minimal Model");
    c.estimate_uncertainty = false;
    TimeSeriesFrame f = tiny_frame();
    Model model(c, frame_channels(f), 0);
    model.fit_stats(f);

    WindowBatch w = make_windows(f, c.L, c.H);
    Tensor xb = Tensor::zeros({4, c.L, 3});
    std::copy_n(w.inputs.data.begin(), xb.size(), xb.data.begin());

    ad::Graph g;
    Binding p(g, model.params());
    ModelOutput out = model.forward(g, p, xb, false);
    CHECK(out.mean_norm->value.shape == Shape{4, 1});
    CHECK(out.mean_denorm.all_finite());
    CHECK(out.std_norm == nullptr);
}

TEST_CASE("full model forward: shapes, positive std, data units") {
    ModelConfig c = tiny_config();
    TimeSeriesFrame f = tiny_frame();
    Model model(c, frame_channels(f), 0);
    model.fit_stats(f);

    WindowBatch w = make_windows(f, c.L, c.H);
    Tensor xb = Tensor::zeros({3, c.L, 3});
    std::copy_n(w.inputs.data.begin(), xb.size(), xb.data.begin());

    ad::Graph g;
    Binding p(g, model.params());
    ModelOutput out = model.forward(g, p, xb, true);
    CHECK(out.mean_norm->value.shape == Shape{3, 1});
    REQUIRE(out.std_norm != nullptr);
    for (double v : out.std_norm->value.data) CHECK(v > 0.0);
    CHECK(out.spectral_reg != nullptr);
    CHECK(out.stability_pen != nullptr);
    CHECK(out.stability_pen->scalar() == 0.0);

    // denormalized mean lives near the data scale, not the normalized one
    const auto& target = f.channel("ili");
    double lo = 1e300, hi = -1e300;
    for (double v : target) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : out.mean_denorm.data) {
        CHECK(v > lo - 10.0 * (hi - lo));
        CHECK(v < hi + 10.0 * (hi - lo));
    }

    // affine invariance of the Gaussian scale
    for (std::size_t i = 0; i < out.std_denorm.size(); ++i)
        CHECK(out.std_denorm.data[i] ==
              doctest::Approx(out.std_norm->value.data[i] * model.target_std()).epsilon(1e-12));
}

TEST_CASE("constant input decomposes to a zero seasonal stream") {
    Tensor x = Tensor::full({2, 10, 2}, 3.5);
    DecompTensors parts = decompose_plain(x, 5);
    for (double v : parts.seasonal.data) CHECK(std::abs(v) < 1e-12);
    for (double v : parts.trend.data) CHECK(v == doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("ablation variants toggle exactly the named flags") {
    const ModelConfig base = tiny_config();

    ModelConfig wm = ablation_variant(base, "w/o Mamba");
    CHECK_FALSE(wm.use_mamba);
    CHECK(wm.use_decomp == base.use_decomp);
    CHECK(wm.use_freq == base.use_freq);

    ModelConfig mm = ablation_variant(base, "Minimal Model");
    CHECK_FALSE(mm.use_decomp);
    CHECK_FALSE(mm.use_mamba);
    CHECK_FALSE(mm.use_msconv);
    CHECK_FALSE(mm.use_freq);
    CHECK_FALSE(mm.use_bilstm);
    CHECK_FALSE(mm.use_cross_attn);

    ModelConfig om = ablation_variant(base, "only Mamba");
    CHECK(om.use_mamba);
    CHECK_FALSE(om.use_decomp);
    CHECK_FALSE(om.use_cross_attn);

    ModelConfig sf = ablation_variant(base, "single_modal_flu");
    CHECK(sf.modalities == std::vector<Modality>{Modality::Surveillance});

    CHECK_THROWS_AS(ablation_variant(base, "w/o Everything"), UsageError);
}

TEST_CASE("parameter counting") {
    SUBCASE("single affine map d=4 -> 1 has 5 parameters") {
        ParamStore store(0);
        OutputProjection proj(store, "o", 4);
        CHECK(store.count_scalars() == 5);
    }
    SUBCASE("ablations shrink the registry") {
        TimeSeriesFrame f = tiny_frame();
        const auto channels = frame_channels(f);
        Model full(tiny_config(), channels, 0);
        Model minimal(ablation_variant(tiny_config(), "Minimal Model"), channels, 0);
        Model no_ms(ablation_variant(tiny_config(), "w/o Multi-scale"), channels, 0);
        CHECK(minimal.count_params() < full.count_params());
        CHECK(no_ms.count_params() < full.count_params());
    }
}

TEST_CASE("ensemble mode requires two modalities") {
    ModelConfig c = tiny_config();
    c.ensemble_mode = true;
    std::vector<InputChannel> single = {{"ili", Modality::Surveillance}};
    CHECK_THROWS_AS(Model(c, single, 0), UsageError);
}

TEST_CASE("ensemble mode produces convex per-window weights") {
    ModelConfig c = tiny_config();
    c.ensemble_mode = true;
    TimeSeriesFrame f = tiny_frame();
    Model model(c, frame_channels(f), 0);
    model.fit_stats(f);

    WindowBatch w = make_windows(f, c.L, c.H);
    Tensor xb = Tensor::zeros({2, c.L, 3});
    std::copy_n(w.inputs.data.begin(), xb.size(), xb.data.begin());
    ad::Graph g;
    Binding p(g, model.params());
    ModelOutput out = model.forward(g, p, xb, true);
    REQUIRE(out.ensemble_weights.shape == Shape{2, 3});
    for (std::size_t b = 0; b < 2; ++b) {
        double s = 0.0;
        for (std::size_t m = 0; m < 3; ++m) {
            CHECK(out.ensemble_weights.at2(b, m) >= 0.0);
            s += out.ensemble_weights.at2(b, m);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    CHECK(out.weights_reg != nullptr);
    REQUIRE(out.std_norm != nullptr);
    for (double v : out.std_norm->value.data) CHECK(v > 0.0);
}

TEST_CASE("identical seeds give bit-identical forwards") {
    ModelConfig c = tiny_config();
    TimeSeriesFrame f = tiny_frame();
    WindowBatch w = make_windows(f, c.L, c.H);
    Tensor xb = Tensor::zeros({2, c.L, 3});
    std::copy_n(w.inputs.data.begin(), xb.size(), xb.data.begin());

    auto run_once = [&]() {
        Model model(c, frame_channels(f), 7);
        model.fit_stats(f);
        ad::Graph g;
        Binding p(g, model.params());
        return model.forward(g, p, xb, false).mean_denorm;
    };
    const Tensor a = run_once();
    const Tensor b = run_once();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == b.data[i]);

    Model other(c, frame_channels(f), 8);
    other.fit_stats(f);
    ad::Graph g;
    Binding p(g, other.params());
    const Tensor diff_seed = other.forward(g, p, xb, false).mean_denorm;
    bool any = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.data[i] != diff_seed.data[i]) any = true;
    CHECK(any);
}

TEST_CASE("every ablation variant trains for three epochs") {
    TimeSeriesFrame f = tiny_frame(140, 2);
    TrainConfig tc;
    tc.max_epochs = 3;
    tc.batch_size = 16;
    tc.seeds = {0};
    ModelConfig base = tiny_config();

    for (const auto& name : all_variant_names()) {
        CAPTURE(name);
        const ModelConfig mc = ablation_variant(base, name);
        auto [restricted, channels] = select_inputs(f, mc);
        SplitFrames frames = chronological_split(restricted, 0.6, 0.2, 0.2, mc.L + mc.H);
        Model model(mc, channels, 0);
        const SeedRunResult run = train_single(model, frames, tc);
        CHECK(run.epochs_run == 3);
        CHECK(std::isfinite(run.test.rmse));
    }
    // ensemble head variant as well
    ModelConfig ens = base;
    ens.ensemble_mode = true;
    auto [restricted, channels] = select_inputs(f, ens);
    SplitFrames frames = chronological_split(restricted, 0.6, 0.2, 0.2, ens.L + ens.H);
    Model model(ens, channels, 0);
    const SeedRunResult run = train_single(model, frames, tc);
    CHECK(run.epochs_run == 3);
}

TEST_CASE("checkpoint round-trip preserves predictions bit-exactly") {
    ModelConfig c = tiny_config();
    TimeSeriesFrame f = tiny_frame();
    Model model(c, frame_channels(f), 3);
    model.fit_stats(f);

    const std::string path = "/tmp/maestro_test_checkpoint.json";
    save_checkpoint(model, path);
    Model loaded = load_checkpoint(path);

    CHECK(loaded.count_params() == model.count_params());
    WindowBatch w = make_windows(f, c.L, c.H);
    Tensor xb = Tensor::zeros({2, c.L, 3});
    std::copy_n(w.inputs.data.begin(), xb.size(), xb.data.begin());
    const auto a = model.predict(xb);
    const auto b = loaded.predict(xb);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].mean == b[i].mean);
        CHECK(a[i].std == b[i].std);
    }
}

TEST_CASE("config validation rejects bad combinations") {
    ModelConfig c = tiny_config();
    c.attn_heads = 3; // does not divide d_model=8
    CHECK_THROWS_AS(c.validate(), UsageError);

    ModelConfig k = tiny_config();
    k.K_decomp = 4;
    CHECK_THROWS_AS(k.validate(), UsageError);

    ModelConfig b = tiny_config();
    b.d_model = 7;
    b.attn_heads = 1;
    CHECK_THROWS_AS(b.validate(), UsageError); // bilstm needs even d
}
