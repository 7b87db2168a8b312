#include <doctest.h>

#include <cmath>

#include "maestro/gradcheck.hpp"
#include "maestro/graph.hpp"
#include "maestro/rng.hpp"

using namespace maestro;
using ad::Graph;
using ad::Node;

namespace {
Tensor randn(Shape s, std::uint64_t seed, double scale = 1.0, double offset = 0.0) {
    Rng rng(seed, "test.randn");
    Tensor t = Tensor::zeros(std::move(s));
    for (double& v : t.data) v = offset + scale * rng.gaussian();
    return t;
}
} // namespace

TEST_CASE("tensor basics and shape errors") {
    Tensor t = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(t.at2(1, 0) == 3);
    CHECK(shape_numel({2, 3, 4}) == 24);
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DataError);

    Graph g;
    Node* a = g.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}));
    Node* b = g.leaf(Tensor::from({3}, {1, 2, 3}));
    CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("add"), ad::ShapeError);
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("matmul"), ad::ShapeError);
}

TEST_CASE("elementwise forward values") {
    Graph g;
    Node* x = g.leaf(Tensor::scalar(0.0));
    CHECK(g.softplus(x)->scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Node* s = g.softmax(g.leaf(Tensor::from({2}, {0.0, std::log(3.0)})));
    CHECK(s->value[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(s->value[1] == doctest::Approx(0.75).epsilon(1e-12));

    Node* id = g.leaf(Tensor::from({2, 2}, {1, 0, 0, 1}));
    Node* m = g.leaf(Tensor::from({2, 2}, {3.5, -1.0, 2.0, 7.0}));
    Node* prod = g.matmul(id, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(prod->value[i] == m->value[i]);
}

TEST_CASE("softmax rows stay on the simplex") {
    Graph g;
    Node* x = g.leaf(randn({5, 7}, 1, 3.0));
    Node* s = g.softmax(x);
    for (std::size_t r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 7; ++c) {
            CHECK(s->value.at2(r, c) >= 0.0);
            sum += s->value.at2(r, c);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("backward: analytic leaf adjoints") {
    SUBCASE("x^2 at 3") {
        Graph g;
        Node* x = g.leaf(Tensor::scalar(3.0));
        Node* y = g.mul(x, x);
        g.backward(y);
        CHECK(x->grad[0] == doctest::Approx(6.0).epsilon(1e-12));
    }
    SUBCASE("softplus adjoint is sigmoid") {
        Graph g;
        Node* x = g.leaf(Tensor::scalar(0.0));
        Node* y = g.softplus(x);
        g.backward(y);
        CHECK(x->grad[0] == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("sum of softmax has zero gradient") {
        Graph g;
        Node* x = g.leaf(randn({6}, 2));
        Node* y = g.sum(g.softmax(x));
        g.backward(y);
        for (double v : x->grad.data) CHECK(std::abs(v) < 1e-12);
    }
}

TEST_CASE("backward driver contract") {
    Graph g;
    Node* x = g.leaf(Tensor::from({2}, {1.0, 2.0}));
    Node* y = g.mul(x, x);
    CHECK_THROWS_AS(g.backward(y), NumericError); // non-scalar root
    Node* root = g.sum(y);
    g.backward(root);
    CHECK(x->grad[0] == doctest::Approx(2.0));
    CHECK(x->grad[1] == doctest::Approx(4.0));
    CHECK_THROWS_AS(g.backward(root), NumericError); // repeated call
    g.zero_grad();
    g.backward(root); // allowed after reset
    CHECK(x->grad[0] == doctest::Approx(2.0));
}

TEST_CASE("gradient_check harness") {
    SUBCASE("quadratic") {
        auto fn = [](Graph& g, Node* x) { return g.mul(x, x); };
        auto r = gradient_check(fn, Tensor::scalar(3.0), 1e-3);
        CHECK(r.max_rel_err < 1e-7);
    }
    SUBCASE("eps domain enforced") {
        auto fn = [](Graph& g, Node* x) { return g.mul(x, x); };
        CHECK_THROWS_AS(gradient_check(fn, Tensor::scalar(1.0), 1e-2), UsageError);
    }
    SUBCASE("mse of a linear model") {
        const Tensor w = randn({4, 3}, 3);
        const Tensor y = randn({5, 3}, 4);
        auto fn = [&](Graph& g, Node* x) {
            Node* pred = g.matmul(x, g.constant(w));
            Node* diff = g.sub(pred, g.constant(y));
            return g.mean(g.mul(diff, diff));
        };
        auto r = gradient_check(fn, randn({5, 4}, 5), 1e-4);
        CHECK(r.max_rel_err < 1e-4);
    }
}

// Every op kind: reverse-mode vs central differences on random inputs.
TEST_CASE("per-op gradient audit") {
    struct OpCase {
        const char* name;
        Shape shape;
        double offset; // keeps log/sqrt inputs positive
        ScalarFn fn;
    };
    const Tensor rhs = randn({3, 4}, 100);
    const Tensor mat = randn({4, 5}, 101);
    const Tensor gamma = randn({4}, 102, 0.3, 1.0);
    const Tensor beta = randn({4}, 103, 0.2);
    const Tensor kernel = randn({4, 2, 3}, 104, 0.5);
    const Tensor conv_in = randn({2, 2, 7}, 105);

    std::vector<OpCase> cases = {
        {"add", {3, 4}, 0.0,
         [&](Graph& g, Node* x) { return g.sum(g.add(x, g.constant(rhs))); }},
        {"add_scalar_operand", {1}, 0.0,
         [&](Graph& g, Node* x) { return g.sum(g.add(g.constant(rhs), x)); }},
        {"sub", {3, 4}, 0.0,
         [&](Graph& g, Node* x) {
             Node* d = g.sub(x, g.constant(rhs));
             return g.sum(g.mul(d, d));
         }},
        {"mul", {3, 4}, 0.0,
         [&](Graph& g, Node* x) { return g.sum(g.mul(x, g.constant(rhs))); }},
        {"mul_scalar_operand", {1}, 0.0,
         [&](Graph& g, Node* x) { return g.sum(g.mul(g.constant(rhs), x)); }},
        {"div", {3, 4}, 4.0,
         [&](Graph& g, Node* x) { return g.sum(g.div(g.constant(rhs), x)); }},
        {"scale", {3, 4}, 0.0, [&](Graph& g, Node* x) { return g.sum(g.scale(x, -2.5)); }},
        {"add_scalar", {3, 4}, 0.0,
         [&](Graph& g, Node* x) { return g.sum(g.mul(g.add_scalar(x, 1.5), x)); }},
        {"matmul", {3, 4}, 0.0,
         [&](Graph& g, Node* x) { return g.sum(g.matmul(x, g.constant(mat))); }},
        {"matmul_rhs", {4, 5}, 0.0,
         [&](Graph& g, Node* x) { return g.sum(g.matmul(g.constant(rhs), x)); }},
        {"matmul_batched", {2, 3, 4}, 0.0,
         [&](Graph& g, Node* x) { return g.sum(g.matmul(x, g.constant(mat))); }},
        {"transpose", {2, 3, 4}, 0.0,
         [&](Graph& g, Node* x) {
             Node* t = g.transpose(x, 1, 2);
             return g.sum(g.mul(t, t));
         }},
        {"reshape", {3, 4}, 0.0,
         [&](Graph& g, Node* x) {
             Node* r = g.reshape(x, {2, 6});
             return g.sum(g.mul(r, r));
         }},
        {"slice", {3, 4}, 0.0,
         [&](Graph& g, Node* x) {
             Node* s = g.slice(x, 1, 1, 2);
             return g.sum(g.mul(s, s));
         }},
        {"concat", {3, 4}, 0.0,
         [&](Graph& g, Node* x) {
             Node* c = g.concat({x, g.constant(rhs), x}, 0);
             return g.sum(g.mul(c, c));
         }},
        {"expand", {3, 1}, 0.0,
         [&](Graph& g, Node* x) {
             Node* e = g.expand(x, {3, 4});
             return g.sum(g.mul(e, g.constant(rhs)));
         }},
        {"pad_edge", {2, 5}, 0.0,
         [&](Graph& g, Node* x) {
             Node* p = g.pad_edge(x, 1, 2, 3);
             return g.sum(g.mul(p, p));
         }},
        {"conv1d", {2, 2, 7}, 0.0,
         [&](Graph& g, Node* x) {
             Node* c = g.conv1d(x, g.constant(kernel));
             return g.sum(g.mul(c, c));
         }},
        {"conv1d_kernel", {4, 2, 3}, 0.0,
         [&](Graph& g, Node* x) {
             Node* c = g.conv1d(g.constant(conv_in), x, 2, 1);
             return g.sum(g.mul(c, c));
         }},
        {"softmax", {3, 4}, 0.0,
         [&](Graph& g, Node* x) { return g.sum(g.mul(g.softmax(x), g.constant(rhs))); }},
        {"exp", {3, 4}, 0.0, [&](Graph& g, Node* x) { return g.sum(g.exp(x)); }},
        {"log", {3, 4}, 5.0, [&](Graph& g, Node* x) { return g.sum(g.log(x)); }},
        {"sqrt", {3, 4}, 5.0, [&](Graph& g, Node* x) { return g.sum(g.sqrt(x)); }},
        {"tanh", {3, 4}, 0.0, [&](Graph& g, Node* x) { return g.sum(g.tanh(x)); }},
        {"sigmoid", {3, 4}, 0.0, [&](Graph& g, Node* x) { return g.sum(g.sigmoid(x)); }},
        {"softplus", {3, 4}, 0.0, [&](Graph& g, Node* x) { return g.sum(g.softplus(x)); }},
        {"relu", {3, 4}, 0.0, [&](Graph& g, Node* x) { return g.sum(g.mul(g.relu(x), x)); }},
        {"hypot", {3, 4}, 3.0,
         [&](Graph& g, Node* x) { return g.sum(g.hypot(x, g.constant(rhs))); }},
        {"huber", {3, 4}, 0.0, [&](Graph& g, Node* x) { return g.sum(g.huber(x, 1.0)); }},
        {"sum", {3, 4}, 0.0, [&](Graph& g, Node* x) { return g.sum(g.mul(x, x)); }},
        {"mean", {3, 4}, 0.0, [&](Graph& g, Node* x) { return g.mean(g.mul(x, x)); }},
        {"sum_axis", {3, 4}, 0.0,
         [&](Graph& g, Node* x) {
             Node* s = g.sum_axis(x, 0);
             return g.sum(g.mul(s, s));
         }},
        {"mean_axis", {2, 3, 4}, 0.0,
         [&](Graph& g, Node* x) {
             Node* s = g.mean_axis(x, 1, true);
             return g.sum(g.mul(s, s));
         }},
        {"layer_norm", {3, 4}, 0.0,
         [&](Graph& g, Node* x) {
             Node* y = g.layer_norm(x, g.constant(gamma), g.constant(beta));
             return g.sum(g.mul(y, g.constant(rhs)));
         }},
        {"layer_norm_gamma", {4}, 0.0,
         [&](Graph& g, Node* x) {
             Node* y = g.layer_norm(g.constant(rhs), x, g.constant(beta));
             return g.sum(g.mul(y, g.constant(rhs)));
         }},
    };

    for (const auto& c : cases) {
        CAPTURE(c.name);
        double worst = 0.0;
        for (std::uint64_t i = 0; i < 10; ++i) {
            const Tensor x = randn(c.shape, 1000 + i, 1.0, c.offset);
            const auto r = gradient_check(c.fn, x, 1e-4);
            worst = std::max(worst, r.max_rel_err);
        }
        CHECK_MESSAGE(worst < 1e-4, c.name << " worst rel err " << worst);
    }
}

TEST_CASE("conv1d span precondition") {
    Graph g;
    Node* x = g.leaf(randn({1, 2, 4}, 7));
    Node* w = g.leaf(randn({3, 2, 3}, 8));
    CHECK_THROWS_WITH_AS(g.conv1d(x, w, 2, 1), doctest::Contains("span"), ad::ShapeError);
}

TEST_CASE("finite guards on log and sqrt") {
    Graph g;
    CHECK_THROWS_AS(g.log(g.leaf(Tensor::scalar(0.0))), NumericError);
    CHECK_THROWS_AS(g.sqrt(g.leaf(Tensor::scalar(-1.0))), NumericError);
}
