#include "maestro/gradsuite.hpp"

#include <memory>

#include "maestro/decomp.hpp"
#include "maestro/embed.hpp"
#include "maestro/freqdom.hpp"
#include "maestro/fusion.hpp"
#include "maestro/heads.hpp"
#include "maestro/msconv.hpp"
#include "maestro/rng.hpp"
#include "maestro/ssm.hpp"

namespace maestro {

namespace {

Tensor rand_gauss(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = scale * rng.gaussian();
    return t;
}

GradSuiteEntry run_path(const std::string& name, std::size_t n_inputs, double eps,
                        double limit, const std::function<Tensor(Rng&)>& make_input,
                        const ScalarFn& fn) {
    GradSuiteEntry e;
    e.path = name;
    e.limit = limit;
    for (std::size_t i = 0; i < n_inputs; ++i) {
        Rng rng(0xC0FFEE + i, "gradsuite." + name + "." + std::to_string(i));
        const Tensor x = make_input(rng);
        const GradCheckResult r = gradient_check(fn, x, eps);
        e.max_rel_err = std::max(e.max_rel_err, r.max_rel_err);
    }
    e.pass = e.max_rel_err < limit;
    return e;
}

} // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::size_t n, double eps, double limit) {
    std::vector<GradSuiteEntry> out;

    // decomp: both components, input as leaf
    out.push_back(run_path(
        "decomp", n, eps, limit,
        [](Rng& rng) { return rand_gauss({2, 12, 3}, rng); },
        [](ad::Graph& g, ad::Node* x) {
            auto parts = decompose(g, x, 5);
            return g.add(g.mean(g.mul(parts.trend, parts.trend)),
                         g.mean(g.mul(parts.seasonal, parts.seasonal)));
        }));

    // embed: token conv + positional encoding
    {
        auto store = std::make_shared<ParamStore>(11);
        auto embed = std::make_shared<TokenEmbed>(*store, "embed", 3, 8);
        out.push_back(run_path(
            "embed", n, eps, limit,
            [](Rng& rng) { return rand_gauss({2, 10, 3}, rng); },
            [store, embed](ad::Graph& g, ad::Node* x) {
                Binding p(g, *store, false);
                ad::Node* h = embed->forward(g, p, x);
                return g.mean(g.mul(h, h));
            }));
    }

    // encoder: one pre-LN layer, two heads
    {
        auto store = std::make_shared<ParamStore>(12);
        auto enc = std::make_shared<EncoderStack>(*store, "enc", 8, EncoderOptions{1, 2, 2});
        out.push_back(run_path(
            "encoder", n, eps, limit,
            [](Rng& rng) { return rand_gauss({2, 6, 8}, rng); },
            [store, enc](ad::Graph& g, ad::Node* x) {
                Binding p(g, *store, false);
                ad::Node* h = enc->forward(g, p, x);
                return g.mean(g.mul(h, h));
            }));
    }

    // bilstm: 5-step sequence through both directions and the projection
    {
        auto store = std::make_shared<ParamStore>(13);
        auto lstm = std::make_shared<BiLstmBlock>(*store, "bilstm", 8);
        out.push_back(run_path(
            "bilstm", n, eps, limit,
            [](Rng& rng) { return rand_gauss({2, 5, 8}, rng); },
            [store, lstm](ad::Graph& g, ad::Node* x) {
                Binding p(g, *store, false);
                ad::Node* h = lstm->forward(g, p, x);
                return g.mean(g.mul(h, h));
            }));
    }

    // mamba: 10-step selective recurrence
    {
        auto store = std::make_shared<ParamStore>(14);
        auto mamba = std::make_shared<MambaBlock>(*store, "mamba", 6, 4);
        out.push_back(run_path(
            "mamba", n, eps, limit,
            [](Rng& rng) { return rand_gauss({2, 10, 6}, rng); },
            [store, mamba](ad::Graph& g, ad::Node* x) {
                Binding p(g, *store, false);
                ad::Node* h = mamba->forward(g, p, x);
                return g.mean(g.mul(h, h));
            }));
    }

    // msconv: aggregation with input-dependent branch weights
    {
        auto store = std::make_shared<ParamStore>(15);
        auto conv = std::make_shared<MsConvBlock>(*store, "msconv", 6,
                                                  std::vector<std::size_t>{3, 5},
                                                  std::vector<std::size_t>{1, 2});
        out.push_back(run_path(
            "msconv", n, eps, limit,
            [](Rng& rng) { return rand_gauss({2, 9, 6}, rng); },
            [store, conv](ad::Graph& g, ad::Node* x) {
                Binding p(g, *store, false);
                ad::Node* h = conv->forward(g, p, x);
                return g.mean(g.mul(h, h));
            }));
    }

    // freqdom, input path: odd length exercises the Bluestein transform
    {
        auto store = std::make_shared<ParamStore>(16);
        auto freq = std::make_shared<FreqFilterBlock>(*store, "freq", 4, 7, 2.0);
        {
            Rng rre(16, "freq.mask.re");
            for (double& v : store->at("freq.s0.mask_re").data) v = 1.0 + 0.3 * rre.gaussian();
            Rng rim(17, "freq.mask.im");
            for (double& v : store->at("freq.s0.mask_im").data) v = 0.3 * rim.gaussian();
            freq->project(*store);
        }
        out.push_back(run_path(
            "freqdom", n, eps, limit,
            [](Rng& rng) { return rand_gauss({2, 7, 4}, rng); },
            [store, freq](ad::Graph& g, ad::Node* x) {
                Binding p(g, *store, false);
                ad::Node* h = freq->forward(g, p, x);
                return g.mean(g.mul(h, h));
            }));

        // mask parameters as the varied leaves
        const Tensor fixed_input = [] {
            Rng r(18, "freq.fixed_input");
            return rand_gauss({2, 7, 4}, r);
        }();
        out.push_back(run_path(
            "freqdom.mask", n, eps, limit,
            [](Rng& rng) {
                Tensor m = rand_gauss({2, 7, 4}, rng, 0.2); // [re | im] stacked
                return m;
            },
            [store, freq, fixed_input](ad::Graph& g, ad::Node* m) {
                ad::Node* mre = g.reshape(g.slice(m, 0, 0, 1), {7, 4});
                ad::Node* mim = g.reshape(g.slice(m, 0, 1, 1), {7, 4});
                Binding p(g, *store, false);
                p.preset("freq.s0.mask_re", mre);
                p.preset("freq.s0.mask_im", mim);
                ad::Node* h = freq->forward(g, p, g.constant(fixed_input));
                return g.mean(g.mul(h, h));
            }));
    }

    // fusion: cross-channel attention over (B,T,C,d)
    {
        auto store = std::make_shared<ParamStore>(19);
        auto cca = std::make_shared<CrossChannelAttention>(*store, "cca", 6, 4, 6);
        out.push_back(run_path(
            "fusion.cross_channel", n, eps, limit,
            [](Rng& rng) { return rand_gauss({2, 5, 3, 6}, rng); },
            [store, cca](ad::Graph& g, ad::Node* x) {
                Binding p(g, *store, false);
                ad::Node* h = cca->forward(g, p, x);
                return g.mean(g.mul(h, h));
            }));
    }

    // fusion: sigmoid component gate
    {
        auto store = std::make_shared<ParamStore>(20);
        auto fuse = std::make_shared<AdaptiveComponentFuse>(*store, "fuse", 6);
        const Tensor trend_fixed = [] {
            Rng r(20, "fuse.trend");
            return rand_gauss({2, 5, 6}, r);
        }();
        out.push_back(run_path(
            "fusion.component_gate", n, eps, limit,
            [](Rng& rng) { return rand_gauss({2, 5, 6}, rng); },
            [store, fuse, trend_fixed](ad::Graph& g, ad::Node* x) {
                Binding p(g, *store, false);
                ad::Node* h = fuse->forward(g, p, x, g.constant(trend_fixed));
                return g.mean(g.mul(h, h));
            }));
    }

    // fusion: ensemble head over two branches
    {
        auto store = std::make_shared<ParamStore>(21);
        auto ens = std::make_shared<EnsembleHead>(*store, "ens", 6, 2, 5);
        const Tensor second = [] {
            Rng r(21, "ens.second");
            return rand_gauss({2, 3, 6}, r);
        }();
        out.push_back(run_path(
            "fusion.ensemble", n, eps, limit,
            [](Rng& rng) { return rand_gauss({2, 3, 6}, rng); },
            [store, ens, second](ad::Graph& g, ad::Node* x) {
                Binding p(g, *store, false);
                ad::Node* y = ens->forward(g, p, {x, g.constant(second)});
                return g.mean(g.mul(y, y));
            }));
    }

    // heads: projection -> uncertainty -> Gaussian NLL
    {
        auto store = std::make_shared<ParamStore>(22);
        auto proj = std::make_shared<TemporalProjection>(*store, "tproj", 6, 2);
        auto head = std::make_shared<UncertaintyHead>(*store, "unc", 8, 1e-4);
        const Tensor y_fixed = [] {
            Rng r(22, "heads.target");
            return rand_gauss({2, 2}, r);
        }();
        out.push_back(run_path(
            "heads", n, eps, limit,
            [](Rng& rng) { return rand_gauss({2, 6, 8}, rng); },
            [store, proj, head, y_fixed](ad::Graph& g, ad::Node* x) {
                Binding p(g, *store, false);
                ad::Node* ph = proj->forward(g, p, x);
                auto uncertainty = head->forward(g, p, ph);
                ad::Node* nll = nll_loss(g, g.constant(y_fixed), uncertainty.mean,
                                         uncertainty.std);
                return nll;
            }));
    }

    return out;
}

} // namespace maestro
