#include <doctest.h>

#include <cmath>
#include <memory>

#include "maestro/fusion.hpp"
#include "maestro/gradcheck.hpp"
#include "maestro/rng.hpp"

using namespace maestro;
using ad::Graph;
using ad::Node;

namespace {
Tensor randn(Shape s, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed, "fusion.randn");
    Tensor t = Tensor::zeros(std::move(s));
    for (double& v : t.data) v = scale * rng.gaussian();
    return t;
}
} // namespace

TEST_CASE("single channel attends only to itself") {
    ParamStore store(70);
    CrossChannelAttention cca(store, "a", 4, 3, 4);
    const Tensor x = randn({2, 6, 1, 4}, 1);
    Graph g;
    Binding p(g, store);
    Tensor alpha;
    Node* out = cca.forward(g, p, g.constant(x), &alpha);
    for (double v : alpha.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));

    // output = H W_V exactly
    const Tensor& wv = store.at("a.wv");
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 6; ++t)
            for (std::size_t j = 0; j < 4; ++j) {
                double ref = 0.0;
                for (std::size_t k = 0; k < 4; ++k)
                    ref += x.data[((b * 6 + t) * 1 + 0) * 4 + k] * wv.at2(k, j);
                CHECK(out->value.data[((b * 6 + t) * 1 + 0) * 4 + j] ==
                      doctest::Approx(ref).epsilon(1e-12));
            }
}

TEST_CASE("identical channels get uniform attention") {
    ParamStore store(71);
    CrossChannelAttention cca(store, "a", 4, 3, 4);
    const std::size_t C = 3;
    Tensor x = Tensor::zeros({1, 5, C, 4});
    const Tensor base = randn({5, 4}, 2);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < 4; ++j) x.data[((t)*C + c) * 4 + j] = base.at2(t, j);
    Graph g;
    Binding p(g, store);
    Tensor alpha;
    cca.forward(g, p, g.constant(x), &alpha);
    for (double v : alpha.data) CHECK(v == doctest::Approx(1.0 / C).epsilon(1e-12));
}

TEST_CASE("attention rows sum to one and are shared across time") {
    ParamStore store(72);
    CrossChannelAttention cca(store, "a", 5, 4, 5);
    const Tensor x = randn({2, 7, 4, 5}, 3);
    Graph g;
    Binding p(g, store);
    Tensor alpha;
    Node* out = cca.forward(g, p, g.constant(x), &alpha);
    REQUIRE(alpha.shape == Shape{2, 4, 4});
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) s += alpha.at3(b, i, j);
            CHECK(std::abs(s - 1.0) < 1e-12);
        }

    // shared across t: recompute the mix at two positions from the same alpha
    const Tensor& wv = store.at("a.wv");
    for (std::size_t t : {std::size_t{0}, std::size_t{6}}) {
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
                double ref = 0.0;
                for (std::size_t c = 0; c < 4; ++c) {
                    double v = 0.0;
                    for (std::size_t k = 0; k < 5; ++k)
                        v += x.data[((0 * 7 + t) * 4 + c) * 5 + k] * wv.at2(k, j);
                    ref += alpha.at3(0, i, c) * v;
                }
                CHECK(out->value.data[((0 * 7 + t) * 4 + i) * 5 + j] ==
                      doctest::Approx(ref).epsilon(1e-10));
            }
    }
}

TEST_CASE("channel permutation equivariance") {
    ParamStore store(73);
    CrossChannelAttention cca(store, "a", 4, 3, 4);
    const std::size_t C = 4;
    const Tensor x = randn({1, 5, C, 4}, 4);
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    Tensor xp = Tensor::zeros({1, 5, C, 4});
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < 4; ++j)
                xp.data[(t * C + c) * 4 + j] = x.data[(t * C + perm[c]) * 4 + j];

    Graph g;
    Binding p(g, store);
    Node* y = cca.forward(g, p, g.constant(x));
    Node* yp = cca.forward(g, p, g.constant(xp));
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t j = 0; j < 4; ++j)
                CHECK(yp->value.data[(t * C + c) * 4 + j] ==
                      doctest::Approx(y->value.data[(t * C + perm[c]) * 4 + j]).epsilon(1e-9));
}

TEST_CASE("hand-computed 2x2 attention") {
    ParamStore store(74);
    CrossChannelAttention cca(store, "a", 1, 1, 1);
    store.at("a.wq").data = {1.0};
    store.at("a.wk").data = {1.0};
    store.at("a.wv").data = {1.0};
    // constant-over-time channels with pooled summaries 1 and 2
    Tensor x = Tensor::zeros({1, 2, 2, 1});
    x.data = {1.0, 2.0, 1.0, 2.0};
    Graph g;
    Binding p(g, store);
    Tensor alpha;
    Node* out = cca.forward(g, p, g.constant(x), &alpha);

    // scores row i = [qi*1, qi*2] with d_k = 1 scaling
    auto soft = [](double a, double b) {
        const double ea = std::exp(a), eb = std::exp(b);
        return std::pair<double, double>{ea / (ea + eb), eb / (ea + eb)};
    };
    auto [a00, a01] = soft(1.0, 2.0);
    auto [a10, a11] = soft(2.0, 4.0);
    CHECK(alpha.at3(0, 0, 0) == doctest::Approx(a00).epsilon(1e-12));
    CHECK(alpha.at3(0, 0, 1) == doctest::Approx(a01).epsilon(1e-12));
    CHECK(alpha.at3(0, 1, 0) == doctest::Approx(a10).epsilon(1e-12));
    CHECK(alpha.at3(0, 1, 1) == doctest::Approx(a11).epsilon(1e-12));
    CHECK(out->value.data[0] == doctest::Approx(a00 * 1.0 + a01 * 2.0).epsilon(1e-12));
    CHECK(out->value.data[1] == doctest::Approx(a10 * 1.0 + a11 * 2.0).epsilon(1e-12));
}

TEST_CASE("component fuse basics") {
    ParamStore store(75);
    AdaptiveComponentFuse fuse(store, "f", 4);
    const Tensor s = randn({2, 6, 4}, 5);

    SUBCASE("identical inputs pass through for any gate") {
        Graph g;
        Binding p(g, store);
        Node* out = fuse.forward(g, p, g.constant(s), g.constant(s));
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(out->value.data[i] == doctest::Approx(s.data[i]).epsilon(1e-12));
    }
    SUBCASE("saturated gate selects the seasonal stream") {
        store.at("f.score.b").data = {1000.0};
        for (double& v : store.at("f.score.w").data) v = 0.0;
        const Tensor t = randn({2, 6, 4}, 6);
        Graph g;
        Binding p(g, store);
        Node* out = fuse.forward(g, p, g.constant(s), g.constant(t));
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(out->value.data[i] == doctest::Approx(s.data[i]).epsilon(1e-12));
    }
    SUBCASE("frozen w=0.25") {
        for (double& v : store.at("f.score.w").data) v = 0.0;
        store.at("f.score.b").data = {std::log(0.25 / 0.75)}; // sigmoid -> 0.25
        const Tensor t = randn({2, 6, 4}, 7);
        Graph g;
        Binding p(g, store);
        Tensor w;
        Node* out = fuse.forward(g, p, g.constant(s), g.constant(t), &w);
        CHECK(w.data[0] == doctest::Approx(0.25).epsilon(1e-12));
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(out->value.data[i] ==
                  doctest::Approx(0.25 * s.data[i] + 0.75 * t.data[i]).epsilon(1e-12));
    }
    SUBCASE("shape mismatch rejected") {
        Graph g;
        Binding p(g, store);
        CHECK_THROWS_AS(fuse.forward(g, p, g.constant(s), g.constant(randn({2, 5, 4}, 8))),
                        ad::ShapeError);
    }
}

TEST_CASE("ensemble_combine arithmetic and convexity") {
    Graph g;
    SUBCASE("two branches with frozen weights") {
        Node* y1 = g.constant(Tensor::full({3, 1}, 2.0));
        Node* y2 = g.constant(Tensor::full({3, 1}, 6.0));
        Tensor w = Tensor::zeros({3, 2});
        for (std::size_t b = 0; b < 3; ++b) {
            w.at2(b, 0) = 0.75;
            w.at2(b, 1) = 0.25;
        }
        Node* y = ensemble_combine(g, {y1, y2}, g.constant(w));
        for (double v : y->value.data) CHECK(v == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("identical branches are a fixed point") {
        const Tensor pred = randn({4, 2}, 9);
        Tensor w = Tensor::zeros({4, 3});
        Rng rng(10, "fusion.w");
        for (std::size_t b = 0; b < 4; ++b) {
            double s = 0.0;
            for (std::size_t m = 0; m < 3; ++m) {
                w.at2(b, m) = rng.uniform() + 0.1;
                s += w.at2(b, m);
            }
            for (std::size_t m = 0; m < 3; ++m) w.at2(b, m) /= s;
        }
        Node* c = g.constant(pred);
        Node* y = ensemble_combine(g, {c, c, c}, g.constant(w));
        for (std::size_t i = 0; i < pred.size(); ++i)
            CHECK(y->value.data[i] == doctest::Approx(pred.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("ensemble head produces convex combinations") {
    ParamStore store(76);
    EnsembleHead head(store, "e", 4, 2, 5);
    const Tensor f1 = randn({3, 2, 4}, 11);
    const Tensor f2 = randn({3, 2, 4}, 12);
    Graph g;
    Binding p(g, store);
    Tensor w;
    Node* y = head.forward(g, p, {g.constant(f1), g.constant(f2)}, &w);
    REQUIRE(w.shape == Shape{3, 2});
    for (std::size_t b = 0; b < 3; ++b)
        CHECK(std::abs(w.at2(b, 0) + w.at2(b, 1) - 1.0) < 1e-12);

    // convexity: combined prediction lies between the branch predictions
    const Tensor& w1 = store.at("e.head0.w");
    const Tensor& w2 = store.at("e.head1.w");
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t h = 0; h < 2; ++h) {
            double p1 = store.at("e.head0.b")[0], p2 = store.at("e.head1.b")[0];
            for (std::size_t j = 0; j < 4; ++j) {
                p1 += f1.at3(b, h, j) * w1.at2(j, 0);
                p2 += f2.at3(b, h, j) * w2.at2(j, 0);
            }
            const double lo = std::min(p1, p2) - 1e-12, hi = std::max(p1, p2) + 1e-12;
            CHECK(y->value.at2(b, h) >= lo);
            CHECK(y->value.at2(b, h) <= hi);
        }
}

TEST_CASE("weight regularizer values") {
    Graph g;
    SUBCASE("uniform constant weights sit at the optimum") {
        const std::size_t T = 4, M = 2;
        Node* w = g.constant(Tensor::full({T, M}, 0.5));
        const double val = weight_regularizer(g, w, 1.0, 1.0)->scalar();
        // entropy term: T * 2 * 0.5 ln 0.5 = -T ln 2; smoothness 0
        CHECK(val == doctest::Approx(-4.0 * std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("one-hot constant weights maximize the entropy term") {
        Tensor w = Tensor::zeros({3, 2});
        for (std::size_t t = 0; t < 3; ++t) w.at2(t, 0) = 1.0;
        const double val = weight_regularizer(g, g.constant(w), 1.0, 1.0)->scalar();
        CHECK(val == 0.0); // 1 log 1 + 0 log 0 = 0; no movement
    }
    SUBCASE("alternating one-hot weights pay the smoothness price") {
        Tensor w = Tensor::zeros({3, 2});
        w.at2(0, 0) = 1.0;
        w.at2(1, 1) = 1.0;
        w.at2(2, 0) = 1.0;
        const double val = weight_regularizer(g, g.constant(w), 0.0, 1.0)->scalar();
        CHECK(val == doctest::Approx(4.0).epsilon(1e-12)); // 2 * ||(1,-1)||^2
    }
    SUBCASE("off-simplex weights are rejected") {
        Tensor w = Tensor::full({2, 2}, 0.6);
        CHECK_THROWS_AS(weight_regularizer(g, g.constant(w), 1.0, 1.0), NumericError);
    }
}

TEST_CASE("gradients flow through all three fusion paths") {
    SUBCASE("cross-channel attention") {
        auto store = std::make_shared<ParamStore>(77);
        auto cca = std::make_shared<CrossChannelAttention>(*store, "a", 4, 3, 4);
        auto fn = [store, cca](Graph& g, Node* x) {
            Binding p(g, *store, false);
            Node* y = cca->forward(g, p, x);
            return g.mean(g.mul(y, y));
        };
        CHECK(gradient_check(fn, randn({2, 4, 3, 4}, 13), 1e-4).max_rel_err < 1e-4);
    }
    SUBCASE("component gate") {
        auto store = std::make_shared<ParamStore>(78);
        auto fuse = std::make_shared<AdaptiveComponentFuse>(*store, "f", 4);
        const Tensor other = randn({2, 5, 4}, 14);
        auto fn = [store, fuse, other](Graph& g, Node* x) {
            Binding p(g, *store, false);
            Node* y = fuse->forward(g, p, x, g.constant(other));
            return g.mean(g.mul(y, y));
        };
        CHECK(gradient_check(fn, randn({2, 5, 4}, 15), 1e-4).max_rel_err < 1e-4);
    }
    SUBCASE("ensemble head") {
        auto store = std::make_shared<ParamStore>(79);
        auto head = std::make_shared<EnsembleHead>(*store, "e", 4, 2, 3);
        const Tensor other = randn({2, 3, 4}, 16);
        auto fn = [store, head, other](Graph& g, Node* x) {
            Binding p(g, *store, false);
            Node* y = head->forward(g, p, {x, g.constant(other)});
            return g.mean(g.mul(y, y));
        };
        CHECK(gradient_check(fn, randn({2, 3, 4}, 17), 1e-4).max_rel_err < 1e-4);
    }
}
