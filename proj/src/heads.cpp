#include "maestro/heads.hpp"

#include <algorithm>
#include <cmath>

namespace maestro {

using ad::Graph;
using ad::Node;

TemporalProjection::TemporalProjection(ParamStore& store, std::string prefix, std::size_t L,
                                       std::size_t H)
    : prefix_(std::move(prefix)), L_(L), H_(H) {
    store.create(prefix_ + ".w", {H, L}, Init::Xavier, static_cast<double>(L),
                 static_cast<double>(H));
}

Node* TemporalProjection::forward(Graph& g, Binding& p, Node* h) const {
    const Shape& s = h->value.shape;
    if (s.size() != 3 || s[1] != L_)
        throw ad::ShapeError("temporal_project: expected (B," + std::to_string(L_) +
                             ",d), got " + shape_str(s));
    Node* tl = g.transpose(h, 1, 2); // (B,d,L)
    Node* proj = g.matmul(tl, g.transpose(p[prefix_ + ".w"], 0, 1)); // (B,d,H)
    return g.transpose(proj, 1, 2); // (B,H,d)
}

UncertaintyHead::UncertaintyHead(ParamStore& store, std::string prefix, std::size_t d,
                                 double eps_sigma)
    : prefix_(std::move(prefix)), d_(d), eps_sigma_(eps_sigma) {
    if (eps_sigma <= 0.0) throw UsageError("uncertainty head: eps_sigma must be positive");
    store.create(prefix_ + ".mu.w", {d, 1}, Init::Xavier, static_cast<double>(d), 1.0);
    store.create(prefix_ + ".mu.b", {1}, Init::Zero);
    // sigma starts near 1 everywhere: softplus(b) = 1 with zero weights
    store.create(prefix_ + ".sigma.w", {d, 1}, Init::Zero);
    store.create(prefix_ + ".sigma.b", {1}, Init::Const, std::log(std::exp(1.0) - 1.0));
}

UncertaintyHead::Output UncertaintyHead::forward(Graph& g, Binding& p, Node* h) const {
    const Shape& s = h->value.shape;
    if (s.size() != 3 || s[2] != d_)
        throw ad::ShapeError("uncertainty_head: expected (B,H,d), got " + shape_str(s));
    const std::size_t B = s[0], H = s[1];
    Node* flat = g.reshape(h, {B * H, d_});
    Node* mu = ad::linear(g, flat, p[prefix_ + ".mu.w"], p[prefix_ + ".mu.b"]);
    Node* sig_pre = ad::linear(g, flat, p[prefix_ + ".sigma.w"], p[prefix_ + ".sigma.b"]);
    Node* sig = g.add_scalar(g.softplus(sig_pre), eps_sigma_);
    return {g.reshape(mu, {B, H}), g.reshape(sig, {B, H})};
}

OutputProjection::OutputProjection(ParamStore& store, std::string prefix, std::size_t d)
    : prefix_(std::move(prefix)), d_(d) {
    store.create(prefix_ + ".w", {d, 1}, Init::Xavier, static_cast<double>(d), 1.0);
    store.create(prefix_ + ".b", {1}, Init::Zero);
}

Node* OutputProjection::forward(Graph& g, Binding& p, Node* h) const {
    const Shape& s = h->value.shape;
    if (s.size() != 3 || s[2] != d_)
        throw ad::ShapeError("output_proj: expected (B,H,d), got " + shape_str(s));
    const std::size_t B = s[0], H = s[1];
    Node* y = ad::linear(g, g.reshape(h, {B * H, d_}), p[prefix_ + ".w"], p[prefix_ + ".b"]);
    return g.reshape(y, {B, H});
}

// ---------------------------------------------------------------------------

PointLoss point_loss_from_string(const std::string& s) {
    if (s == "mse") return PointLoss::Mse;
    if (s == "huber") return PointLoss::Huber;
    throw UsageError("unknown point loss '" + s + "' (expected mse|huber)");
}

std::string point_loss_to_string(PointLoss k) {
    return k == PointLoss::Mse ? "mse" : "huber";
}

Node* point_loss(Graph& g, PointLoss kind, Node* pred, Node* target, double huber_delta) {
    if (!(pred->value.shape == target->value.shape))
        throw ad::ShapeError("point_loss: prediction " + shape_str(pred->value.shape) +
                             " vs target " + shape_str(target->value.shape));
    Node* diff = g.sub(pred, target);
    if (kind == PointLoss::Mse) return g.mean(g.mul(diff, diff));
    return g.mean(g.huber(diff, huber_delta));
}

Node* nll_loss(Graph& g, Node* target, Node* mean, Node* std) {
    if (!(mean->value.shape == target->value.shape) ||
        !(std->value.shape == target->value.shape))
        throw ad::ShapeError("nll_loss: mismatched shapes");
    if (std->value.min() <= 0.0)
        throw NumericError("nll_loss: sigma must be strictly positive");
    constexpr double kHalfLog2Pi = 0.91893853320467274178; // 0.5 * ln(2*pi)
    Node* diff = g.sub(target, mean);
    Node* quad = g.div(g.mul(diff, diff), g.scale(g.mul(std, std), 2.0));
    Node* per_step = g.add(g.add_scalar(g.log(std), kHalfLog2Pi), quad);
    return g.mean(per_step);
}

Node* composite_objective(Graph& g, const CompositeTerms& terms, const CompositeWeights& w) {
    for (double lam : {w.point, w.nll, w.spectral, w.weights, w.stability, w.sigma_mean}) {
        if (lam < 0.0) throw UsageError("composite_objective: negative weight");
    }
    Node* total = g.scalar_const(0.0);
    auto accumulate = [&](Node* term, double lam) {
        if (term && lam != 0.0) total = g.add(total, g.scale(term, lam));
    };
    accumulate(terms.point, w.point);
    accumulate(terms.nll, w.nll);
    accumulate(terms.spectral, w.spectral);
    accumulate(terms.weights, w.weights);
    accumulate(terms.stability, w.stability);
    accumulate(terms.sigma_mean, w.sigma_mean);
    return total;
}

// ---------------------------------------------------------------------------

Metrics compute_metrics(const std::vector<double>& y, const std::vector<double>& yhat) {
    if (y.size() != yhat.size())
        throw DataError("metrics: length mismatch " + std::to_string(y.size()) + " vs " +
                        std::to_string(yhat.size()));
    if (y.size() < 2) throw DataError("metrics: needs at least 2 points");
    const std::size_t n = y.size();

    Metrics m;
    double se = 0.0, ae = 0.0, ape = 0.0;
    std::size_t ape_n = 0;
    double y_mean = 0.0;
    for (double v : y) y_mean += v;
    y_mean /= static_cast<double>(n);
    double sst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y[i] - yhat[i];
        ae += std::abs(e);
        se += e * e;
        sst += (y[i] - y_mean) * (y[i] - y_mean);
        if (y[i] != 0.0) {
            ape += std::abs(e / y[i]);
            ++ape_n;
        }
    }
    m.mae = ae / static_cast<double>(n);
    m.rmse = std::sqrt(se / static_cast<double>(n));
    m.mape_excluded = n - ape_n;
    m.mape_pct = ape_n > 0 ? 100.0 * ape / static_cast<double>(ape_n) : 0.0;
    m.r2 = sst > 0.0 ? 1.0 - se / sst : (se == 0.0 ? 1.0 : 0.0);
    return m;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

CalibrationResult calibration_check(const std::vector<double>& y,
                                    const std::vector<double>& mu,
                                    const std::vector<double>& sigma, double alpha) {
    if (y.size() != mu.size() || y.size() != sigma.size())
        throw DataError("calibration_check: length mismatch");
    if (y.size() < 30)
        throw DataError("calibration_check: needs n >= 30, got " + std::to_string(y.size()));
    const std::size_t n = y.size();

    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (sigma[i] <= 0.0) throw NumericError("calibration_check: non-positive sigma");
        z[i] = (y[i] - mu[i]) / sigma[i];
    }
    std::sort(z.begin(), z.end());

    double ks = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = normal_cdf(z[i]);
        const double hi = static_cast<double>(i + 1) / static_cast<double>(n) - f;
        const double lo = f - static_cast<double>(i) / static_cast<double>(n);
        ks = std::max({ks, hi, lo});
    }

    CalibrationResult res;
    res.n = n;
    res.ks_stat = ks;
    // asymptotic critical value c(alpha)/sqrt(n)
    res.critical = std::sqrt(-0.5 * std::log(alpha / 2.0)) / std::sqrt(static_cast<double>(n));
    res.pass = ks < res.critical;
    return res;
}

} // namespace maestro
