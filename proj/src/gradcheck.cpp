#include "maestro/gradcheck.hpp"

#include <cmath>

namespace maestro {

namespace {
double eval_scalar(const ScalarFn& f, const Tensor& x, std::size_t coord) {
    ad::Graph g;
    ad::Node* leaf = g.leaf(x, false);
    ad::Node* root = f(g, leaf);
    if (root->value.size() != 1)
        throw NumericError("gradient_check: function output is not scalar");
    const double v = root->value.data[0];
    if (!std::isfinite(v))
        throw NumericError("gradient_check: non-finite value at coordinate " +
                           std::to_string(coord));
    return v;
}
} // namespace

GradCheckResult gradient_check(const ScalarFn& f, const Tensor& x, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3))
        throw UsageError("gradient_check: eps must lie in [1e-7, 1e-3]");

    Tensor analytic;
    {
        ad::Graph g;
        ad::Node* leaf = g.leaf(x, true);
        ad::Node* root = f(g, leaf);
        if (root->value.size() != 1)
            throw NumericError("gradient_check: function output is not scalar");
        g.backward(root);
        analytic = leaf->has_grad ? leaf->grad : Tensor::zeros(x.shape);
    }

    GradCheckResult res;
    Tensor xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = xp.data[i];
        xp.data[i] = orig + eps;
        const double fp = eval_scalar(f, xp, i);
        xp.data[i] = orig - eps;
        const double fm = eval_scalar(f, xp, i);
        xp.data[i] = orig;
        const double fd = (fp - fm) / (2.0 * eps);
        const double an = analytic.data[i];
        if (!std::isfinite(an))
            throw NumericError("gradient_check: non-finite adjoint at coordinate " +
                               std::to_string(i));
        const double rel = std::abs(an - fd) / std::max(1.0, std::abs(an));
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_coord = i;
            res.analytic_at_worst = an;
            res.fd_at_worst = fd;
        }
    }
    return res;
}

} // namespace maestro
