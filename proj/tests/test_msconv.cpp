#include <doctest.h>

#include <cmath>
#include <memory>

#include "maestro/gradcheck.hpp"
#include "maestro/msconv.hpp"
#include "maestro/rng.hpp"

using namespace maestro;
using ad::Graph;
using ad::Node;

namespace {
Tensor randn(Shape s, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed, "msconv.randn");
    Tensor t = Tensor::zeros(std::move(s));
    for (double& v : t.data) v = scale * rng.gaussian();
    return t;
}

// depthwise-only frozen-alpha aggregation straight from branch outputs
Tensor frozen_alpha_depthwise(MsConvBlock& block, ParamStore& store, const Tensor& x,
                              const std::vector<double>& alphas) {
    Graph g;
    Binding p(g, store);
    auto outs = block.branch_outputs(g, p, g.constant(x), false);
    REQUIRE(outs.size() == alphas.size());
    Tensor acc = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < outs.size(); ++i)
        for (std::size_t j = 0; j < acc.size(); ++j)
            acc.data[j] += alphas[i] * outs[i]->value.data[j];
    return acc;
}
} // namespace

TEST_CASE("single branch collapses to that branch") {
    ParamStore store(50);
    MsConvBlock block(store, "c", 4, {3}, {1});
    const Tensor x = randn({2, 8, 4}, 1);
    Graph g;
    Binding p(g, store);
    Node* agg = block.forward(g, p, g.constant(x));
    Node* alpha = block.branch_weights(g, p, g.constant(x));
    for (double v : alpha->value.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    auto outs = block.branch_outputs(g, p, g.constant(x), true);
    for (std::size_t i = 0; i < agg->value.size(); ++i)
        CHECK(agg->value.data[i] == doctest::Approx(outs[0]->value.data[i]).epsilon(1e-12));
}

TEST_CASE("all-zero kernels give zero output regardless of weights") {
    ParamStore store(51);
    MsConvBlock block(store, "c", 3, {3, 5}, {1});
    for (const auto& b : block.branches()) {
        const std::string bp = "c.k" + std::to_string(b.kernel) + "d" +
                               std::to_string(b.dilation);
        for (const char* suffix : {".dw", ".dwb", ".pw", ".pwb"})
            for (double& v : store.at(bp + suffix).data) v = 0.0;
    }
    Graph g;
    Binding p(g, store);
    Node* out = block.forward(g, p, g.constant(randn({2, 9, 3}, 2)));
    for (double v : out->value.data) CHECK(v == 0.0);
}

TEST_CASE("softmax weights are shift-invariant") {
    ParamStore store(52);
    MsConvBlock block(store, "c", 4, {3, 5}, {1, 2});
    const Tensor x = randn({2, 10, 4}, 3);
    Graph g;
    Binding p(g, store);
    Node* a1 = block.branch_weights(g, p, g.constant(x));
    // shift every score by a constant via the query bias
    for (double& v : store.at("c.query.b").data) v += 7.5;
    Graph g2;
    Binding p2(g2, store);
    Node* a2 = block.branch_weights(g2, p2, g2.constant(x));
    for (std::size_t i = 0; i < a1->value.size(); ++i)
        CHECK(a1->value.data[i] == doctest::Approx(a2->value.data[i]).epsilon(1e-12));
}

TEST_CASE("combined kernel oracle basics") {
    // delta input, branches k=1 kernel [2] and k=3 kernel [1,1,1], alpha 0.5/0.5
    // -> combined kernel [0.5, 1.5, 0.5]
    Tensor k1 = Tensor::from({1, 1}, {2.0});
    Tensor k3 = Tensor::from({1, 3}, {1.0, 1.0, 1.0});
    Tensor combined = combined_kernel_oracle({k1, k3}, {1, 1}, {0.5, 0.5});
    REQUIRE(combined.shape == Shape{1, 3});
    CHECK(combined.at2(0, 0) == 0.5);
    CHECK(combined.at2(0, 1) == 1.5);
    CHECK(combined.at2(0, 2) == 0.5);

    // vertex of the simplex picks the first kernel (padded)
    Tensor vertex = combined_kernel_oracle({k1, k3}, {1, 1}, {1.0, 0.0});
    CHECK(vertex.at2(0, 0) == 0.0);
    CHECK(vertex.at2(0, 1) == 2.0);
    CHECK(vertex.at2(0, 2) == 0.0);

    // two identical kernels collapse to that kernel for any alpha
    Tensor same = combined_kernel_oracle({k3, k3}, {1, 1}, {0.3, 0.7});
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(same.at2(0, i) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("frozen-alpha aggregation equals one combined convolution") {
    ParamStore store(53);
    MsConvBlock block(store, "c", 3, {3, 5}, {1, 2});
    const Tensor x = randn({2, 16, 3}, 4);
    Rng arng(5, "msconv.alpha");
    std::vector<double> alphas = {arng.uniform(), arng.uniform(), arng.uniform(),
                                  arng.uniform()};
    double s = 0.0;
    for (double a : alphas) s += a;
    for (double& a : alphas) a /= s;

    const Tensor via_branches = frozen_alpha_depthwise(block, store, x, alphas);

    // oracle side: stack the per-branch depthwise kernels and bias means
    std::vector<Tensor> kernels;
    std::vector<std::size_t> dilations;
    double bias_mix[3] = {0, 0, 0};
    std::size_t bi = 0;
    for (const auto& b : block.branches()) {
        const std::string bp = "c.k" + std::to_string(b.kernel) + "d" +
                               std::to_string(b.dilation);
        const Tensor& dw = store.at(bp + ".dw"); // (d,1,k)
        Tensor k2 = Tensor::zeros({3, b.kernel});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t j = 0; j < b.kernel; ++j) k2.at2(c, j) = dw.at3(c, 0, j);
        kernels.push_back(k2);
        dilations.push_back(b.dilation);
        for (std::size_t c = 0; c < 3; ++c)
            bias_mix[c] += alphas[bi] * store.at(bp + ".dwb")[c];
        ++bi;
    }
    const Tensor combined = combined_kernel_oracle(kernels, dilations, alphas);
    Tensor via_oracle = depthwise_conv_edge_plain(x, combined);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 16; ++t)
            for (std::size_t c = 0; c < 3; ++c) via_oracle.at3(b, t, c) += bias_mix[c];

    double worst = 0.0;
    for (std::size_t i = 0; i < via_oracle.size(); ++i)
        worst = std::max(worst, std::abs(via_oracle.data[i] - via_branches.data[i]));
    CHECK(worst < 1e-10);
}

TEST_CASE("oversized branches are skipped with a warning") {
    ParamStore store(54);
    MsConvBlock block(store, "c", 2, {3, 7}, {1, 4});
    // L=8: k=7,d=4 has span 25 > 16, k=3,d=4 span 9 ok
    Graph g;
    Binding p(g, store);
    std::vector<std::string> warnings;
    auto outs = block.branch_outputs(g, p, g.constant(randn({1, 8, 2}, 6)), true, &warnings);
    CHECK(outs.size() == 3);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("k=7") != std::string::npos);
}

TEST_CASE("output length always matches input length") {
    ParamStore store(55);
    MsConvBlock block(store, "c", 3, {3, 5, 7}, {1, 2});
    for (std::size_t L : {7, 16, 30}) {
        Graph g;
        Binding p(g, store);
        Node* out = block.forward(g, p, g.constant(randn({1, L, 3}, 60 + L)));
        CHECK(out->value.shape == Shape{1, L, 3});
    }
}

TEST_CASE("gradients flow through the adaptive aggregation") {
    auto store = std::make_shared<ParamStore>(56);
    auto block = std::make_shared<MsConvBlock>(*store, "c", 3, std::vector<std::size_t>{3, 5},
                                               std::vector<std::size_t>{1, 2});
    auto fn = [store, block](Graph& g, Node* x) {
        Binding p(g, *store, false);
        Node* h = block->forward(g, p, x);
        return g.mean(g.mul(h, h));
    };
    const auto r = gradient_check(fn, randn({2, 11, 3}, 7), 1e-4);
    CHECK(r.max_rel_err < 1e-4);
}
