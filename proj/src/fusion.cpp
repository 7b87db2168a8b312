#include "maestro/fusion.hpp"

#include <cmath>

namespace maestro {

using ad::Graph;
using ad::Node;

CrossChannelAttention::CrossChannelAttention(ParamStore& store, std::string prefix,
                                             std::size_t d, std::size_t d_k, std::size_t d_v)
    : prefix_(std::move(prefix)), d_(d), d_k_(d_k), d_v_(d_v) {
    store.create(prefix_ + ".wq", {d, d_k}, Init::Xavier, static_cast<double>(d),
                 static_cast<double>(d_k));
    store.create(prefix_ + ".wk", {d, d_k}, Init::Xavier, static_cast<double>(d),
                 static_cast<double>(d_k));
    store.create(prefix_ + ".wv", {d, d_v}, Init::Xavier, static_cast<double>(d),
                 static_cast<double>(d_v));
}

Node* CrossChannelAttention::attention_matrix(Graph& g, Binding& p, Node* h) const {
    const Shape& s = h->value.shape;
    if (s.size() != 4 || s[3] != d_)
        throw ad::ShapeError("cross_channel_attention: expected (B,T,C,d), got " +
                             shape_str(s));
    Node* pooled = g.mean_axis(h, 1); // (B,C,d)
    Node* q = g.matmul(pooled, p[prefix_ + ".wq"]); // (B,C,d_k)
    Node* k = g.matmul(pooled, p[prefix_ + ".wk"]);
    Node* scores = g.scale(g.matmul(q, g.transpose(k, 1, 2)),
                           1.0 / std::sqrt(static_cast<double>(d_k_)));
    return g.softmax(scores); // (B,C,C)
}

Node* CrossChannelAttention::forward(Graph& g, Binding& p, Node* h,
                                     Tensor* alpha_capture) const {
    const Shape& s = h->value.shape;
    Node* alpha = attention_matrix(g, p, h);
    if (alpha_capture) *alpha_capture = alpha->value;
    const std::size_t B = s[0], T = s[1], C = s[2];

    Node* v = g.matmul(g.reshape(h, {B * T * C, d_}), p[prefix_ + ".wv"]); // -> d_v
    Node* v4 = g.reshape(v, {B, T, C, d_v_});
    Node* alpha4 = g.expand(g.reshape(alpha, {B, 1, C, C}), {B, T, C, C});
    return g.matmul(alpha4, v4); // (B,T,C,d_v)
}

// ---------------------------------------------------------------------------

AdaptiveComponentFuse::AdaptiveComponentFuse(ParamStore& store, std::string prefix,
                                             std::size_t d)
    : prefix_(std::move(prefix)), d_(d) {
    store.create(prefix_ + ".score.w", {2 * d, 1}, Init::Xavier, 2.0 * static_cast<double>(d),
                 1.0);
    store.create(prefix_ + ".score.b", {1}, Init::Zero);
}

Node* AdaptiveComponentFuse::forward(Graph& g, Binding& p, Node* seasonal, Node* trend,
                                     Tensor* weight_capture) const {
    if (!(seasonal->value.shape == trend->value.shape))
        throw ad::ShapeError("component fuse: shape mismatch " +
                             shape_str(seasonal->value.shape) + " vs " +
                             shape_str(trend->value.shape));
    const Shape& s = seasonal->value.shape;
    if (s.size() != 3 || s[2] != d_)
        throw ad::ShapeError("component fuse: expected (B,L,d), got " + shape_str(s));
    const std::size_t B = s[0];

    Node* pooled = g.concat({g.mean_axis(seasonal, 1), g.mean_axis(trend, 1)}, 1); // (B,2d)
    Node* w = g.sigmoid(ad::linear(g, pooled, p[prefix_ + ".score.w"],
                                   p[prefix_ + ".score.b"])); // (B,1) in (0,1)
    if (weight_capture) *weight_capture = w->value;
    Node* wb = g.reshape(w, {B});
    Node* keep = g.add_scalar(g.scale(wb, -1.0), 1.0);
    return g.add(ad::scale_rows(g, seasonal, wb), ad::scale_rows(g, trend, keep));
}

// ---------------------------------------------------------------------------

Node* ensemble_combine(Graph& g, const std::vector<Node*>& branch_preds, Node* weights) {
    if (branch_preds.empty()) throw UsageError("ensemble_combine: needs at least one branch");
    const Shape& sw = weights->value.shape;
    if (sw.size() != 2 || sw[1] != branch_preds.size())
        throw ad::ShapeError("ensemble_combine: weights " + shape_str(sw) + " do not match " +
                             std::to_string(branch_preds.size()) + " branches");
    const std::size_t B = sw[0];
    Node* acc = nullptr;
    for (std::size_t m = 0; m < branch_preds.size(); ++m) {
        if (!(branch_preds[m]->value.shape[0] == B))
            throw ad::ShapeError("ensemble_combine: branch batch mismatch");
        Node* wm = g.reshape(g.slice(weights, 1, m, 1), {B});
        Node* term = ad::scale_rows(g, branch_preds[m], wm);
        acc = acc ? g.add(acc, term) : term;
    }
    return acc;
}

EnsembleHead::EnsembleHead(ParamStore& store, std::string prefix, std::size_t d,
                           std::size_t n_branches, std::size_t d_context)
    : prefix_(std::move(prefix)), d_(d), n_branches_(n_branches), d_context_(d_context) {
    if (n_branches < 1) throw UsageError("ensemble: needs at least one branch");
    for (std::size_t m = 0; m < n_branches; ++m) {
        const std::string hp = prefix_ + ".head" + std::to_string(m);
        store.create(hp + ".w", {d, 1}, Init::Xavier, static_cast<double>(d), 1.0);
        store.create(hp + ".b", {1}, Init::Zero);
    }
    const double md = static_cast<double>(n_branches * d);
    store.create(prefix_ + ".ctx.w1", {n_branches * d, d_context}, Init::Xavier, md,
                 static_cast<double>(d_context));
    store.create(prefix_ + ".ctx.b1", {d_context}, Init::Zero);
    store.create(prefix_ + ".gate.w", {d_context, n_branches}, Init::Xavier,
                 static_cast<double>(d_context), static_cast<double>(n_branches));
    store.create(prefix_ + ".gate.b", {n_branches}, Init::Zero);
}

Node* EnsembleHead::forward(Graph& g, Binding& p, const std::vector<Node*>& features,
                            Tensor* weight_capture, Node** weights_out) const {
    if (features.size() != n_branches_)
        throw ad::ShapeError("ensemble: expected " + std::to_string(n_branches_) +
                             " branch features, got " + std::to_string(features.size()));
    const Shape& s0 = features[0]->value.shape;
    const std::size_t B = s0[0], H = s0[1];

    std::vector<Node*> preds;
    std::vector<Node*> pooled;
    for (std::size_t m = 0; m < n_branches_; ++m) {
        Node* f = features[m];
        if (!(f->value.shape == Shape{B, H, d_}))
            throw ad::ShapeError("ensemble: branch feature shape mismatch " +
                                 shape_str(f->value.shape));
        const std::string hp = prefix_ + ".head" + std::to_string(m);
        Node* y = ad::linear(g, g.reshape(f, {B * H, d_}), p[hp + ".w"], p[hp + ".b"]);
        preds.push_back(g.reshape(y, {B, H}));
        pooled.push_back(g.mean_axis(f, 1)); // (B,d)
    }
    Node* ctx_in = g.concat(pooled, 1); // (B, M*d)
    Node* ctx = g.relu(ad::linear(g, ctx_in, p[prefix_ + ".ctx.w1"], p[prefix_ + ".ctx.b1"]));
    Node* scores = ad::linear(g, ctx, p[prefix_ + ".gate.w"], p[prefix_ + ".gate.b"]);
    Node* weights = g.softmax(scores); // (B,M)
    if (weight_capture) *weight_capture = weights->value;
    if (weights_out) *weights_out = weights;
    return ensemble_combine(g, preds, weights);
}

// ---------------------------------------------------------------------------

Node* weight_regularizer(Graph& g, Node* weights, double lam_ent, double lam_tv) {
    const Shape& s = weights->value.shape;
    if (s.size() != 2) throw ad::ShapeError("weight_regularizer: expected (T,M) weights");
    const std::size_t T = s[0], M = s[1];
    for (std::size_t t = 0; t < T; ++t) {
        double row = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
            const double w = weights->value.at2(t, m);
            if (w < -1e-9)
                throw NumericError("weight_regularizer: negative weight at step " +
                                   std::to_string(t));
            row += w;
        }
        if (std::abs(row - 1.0) > 1e-9)
            throw NumericError("weight_regularizer: weights off the simplex at step " +
                               std::to_string(t));
    }

    // x log x with the x->0 limit handled; gradients are only consumed for
    // strictly positive softmax outputs.
    Tensor xe = Tensor::zeros(s);
    for (std::size_t i = 0; i < xe.size(); ++i) {
        const double w = weights->value.data[i];
        xe.data[i] = w > 0.0 ? w * std::log(w) : 0.0;
    }
    Node* xlogx = g.custom(
        std::move(xe), {weights},
        [](Node& self) {
            Node* w = self.parents[0];
            Tensor& gw = Graph::ensure_grad(w);
            const auto& gv = self.grad.data;
            for (std::size_t i = 0; i < gv.size(); ++i) {
                const double x = w->value.data[i];
                if (x > 0.0) gw.data[i] += gv[i] * (std::log(x) + 1.0);
            }
        },
        "xlogx");
    Node* total = g.scale(g.sum(xlogx), lam_ent);

    if (T > 1 && lam_tv != 0.0) {
        Node* hi = g.slice(weights, 0, 1, T - 1);
        Node* lo = g.slice(weights, 0, 0, T - 1);
        Node* diff = g.sub(hi, lo);
        total = g.add(total, g.scale(g.sum(g.mul(diff, diff)), lam_tv));
    }
    return total;
}

} // namespace maestro
