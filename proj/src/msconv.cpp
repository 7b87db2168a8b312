#include "maestro/msconv.hpp"

#include <algorithm>
#include <cmath>

namespace maestro {

using ad::Graph;
using ad::Node;

MsConvBlock::MsConvBlock(ParamStore& store, std::string prefix, std::size_t d_model,
                         std::vector<std::size_t> kernels, std::vector<std::size_t> dilations)
    : prefix_(std::move(prefix)), d_model_(d_model) {
    if (kernels.empty() || dilations.empty())
        throw UsageError("msconv: kernel and dilation sets must be non-empty");
    for (std::size_t k : kernels) {
        if (k % 2 == 0) throw UsageError("msconv: kernel sizes must be odd");
        for (std::size_t dl : dilations) branches_.push_back({k, dl});
    }
    std::sort(branches_.begin(), branches_.end(), [](const ConvBranch& a, const ConvBranch& b) {
        return a.kernel != b.kernel ? a.kernel < b.kernel : a.dilation < b.dilation;
    });

    const auto d = static_cast<double>(d_model);
    for (const auto& b : branches_) {
        const std::string bp = branch_name(b);
        const auto k = static_cast<double>(b.kernel);
        store.create(bp + ".dw", {d_model, 1, b.kernel}, Init::Xavier, k, k);
        store.create(bp + ".dwb", {d_model}, Init::Zero);
        // zero pointwise stage: branches join the residual stream as identity
        store.create(bp + ".pw", {d_model, d_model}, Init::Zero);
        store.create(bp + ".pwb", {d_model}, Init::Zero);
    }
    store.create(prefix_ + ".query.w", {d_model, branches_.size()}, Init::Xavier, d,
                 static_cast<double>(branches_.size()));
    store.create(prefix_ + ".query.b", {branches_.size()}, Init::Zero);
}

std::string MsConvBlock::branch_name(const ConvBranch& b) const {
    return prefix_ + ".k" + std::to_string(b.kernel) + "d" + std::to_string(b.dilation);
}

std::vector<Node*> MsConvBlock::branch_outputs(Graph& g, Binding& p, Node* h,
                                               bool include_pointwise,
                                               std::vector<std::string>* warnings) const {
    const Shape& s = h->value.shape;
    if (s.size() != 3 || s[2] != d_model_)
        throw ad::ShapeError("msconv: expected (B,L,d_model), got " + shape_str(s));
    const std::size_t B = s[0], L = s[1], d = d_model_;

    std::vector<Node*> outs;
    Node* ch_first = g.transpose(h, 1, 2); // (B,d,L)
    for (const auto& b : branches_) {
        const std::size_t span = (b.kernel - 1) * b.dilation + 1;
        if (span > 2 * L) {
            if (warnings)
                warnings->push_back("msconv: skipping branch k=" + std::to_string(b.kernel) +
                                    " dilation=" + std::to_string(b.dilation) +
                                    " (span " + std::to_string(span) + " > 2L)");
            continue;
        }
        const std::string bp = branch_name(b);
        const std::size_t half = (span - 1) / 2;
        Node* padded = g.pad_edge(ch_first, 2, half, half);
        Node* dw = g.conv1d(padded, p[bp + ".dw"], b.dilation, d); // (B,d,L)
        Node* u = ad::add_bias(g, g.transpose(dw, 1, 2), p[bp + ".dwb"]); // (B,L,d)
        if (include_pointwise) {
            Node* pw = ad::linear(g, g.reshape(u, {B * L, d}), p[bp + ".pw"], p[bp + ".pwb"]);
            u = g.reshape(pw, {B, L, d});
        }
        outs.push_back(u);
    }
    if (outs.empty()) throw DataError("msconv: no usable branches for L=" + std::to_string(L));
    return outs;
}

Node* MsConvBlock::branch_weights(Graph& g, Binding& p, Node* h) const {
    Node* pooled = g.mean_axis(h, 1); // (B,d)
    Node* scores = ad::linear(g, pooled, p[prefix_ + ".query.w"], p[prefix_ + ".query.b"]);
    return g.softmax(scores); // (B, n_branches)
}

Node* MsConvBlock::forward(Graph& g, Binding& p, Node* h,
                           std::vector<std::string>* warnings) const {
    std::vector<Node*> outs = branch_outputs(g, p, h, true, warnings);
    Node* alpha = branch_weights(g, p, h);
    if (outs.size() != branches_.size()) {
        // skipped branches keep their scores out of the softmax
        throw DataError("msconv: branch set changed at runtime; shrink the kernel sets instead");
    }
    Node* acc = nullptr;
    for (std::size_t i = 0; i < outs.size(); ++i) {
        Node* wi = g.reshape(g.slice(alpha, 1, i, 1), {alpha->value.shape[0]});
        Node* term = ad::scale_rows(g, outs[i], wi);
        acc = acc ? g.add(acc, term) : term;
    }
    return acc;
}

// ---------------------------------------------------------------------------

Tensor combined_kernel_oracle(const std::vector<Tensor>& kernels,
                              const std::vector<std::size_t>& dilations,
                              const std::vector<double>& alphas) {
    if (kernels.empty() || kernels.size() != dilations.size() ||
        kernels.size() != alphas.size())
        throw UsageError("combined_kernel_oracle: mismatched branch lists");
    double asum = 0.0;
    for (double a : alphas) {
        if (a < -1e-12) throw UsageError("combined_kernel_oracle: negative weight");
        asum += a;
    }
    if (std::abs(asum - 1.0) > 1e-9)
        throw UsageError("combined_kernel_oracle: weights must lie on the simplex");

    const std::size_t d = kernels[0].dim(0);
    std::size_t span_max = 1;
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        if (kernels[i].rank() != 2 || kernels[i].dim(0) != d)
            throw ad::ShapeError("combined_kernel_oracle: kernels must share (d,k) layout");
        const std::size_t k = kernels[i].dim(1);
        if (k % 2 == 0) throw UsageError("combined_kernel_oracle: kernels must be odd");
        span_max = std::max(span_max, (k - 1) * dilations[i] + 1);
    }

    Tensor combined = Tensor::zeros({d, span_max});
    const std::size_t center = (span_max - 1) / 2;
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        const std::size_t k = kernels[i].dim(1);
        const std::size_t dl = dilations[i];
        const std::size_t khalf = (k - 1) / 2;
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t j = 0; j < k; ++j) {
                // tap j sits at offset (j - khalf) * dilation from the center
                const std::ptrdiff_t off =
                    static_cast<std::ptrdiff_t>(j * dl) - static_cast<std::ptrdiff_t>(khalf * dl);
                const std::size_t at = static_cast<std::size_t>(
                    static_cast<std::ptrdiff_t>(center) + off);
                combined.at2(c, at) += alphas[i] * kernels[i].at2(c, j);
            }
    }
    return combined;
}

Tensor depthwise_conv_edge_plain(const Tensor& x, const Tensor& kernel) {
    if (x.rank() != 3 || kernel.rank() != 2 || kernel.dim(0) != x.dim(2))
        throw ad::ShapeError("depthwise_conv_edge_plain: x " + shape_str(x.shape) +
                             " vs kernel " + shape_str(kernel.shape));
    const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2), k = kernel.dim(1);
    if (k % 2 == 0) throw UsageError("depthwise_conv_edge_plain: kernel must be odd");
    const std::size_t half = (k - 1) / 2;
    Tensor out = Tensor::zeros(x.shape);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t c = 0; c < d; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) -
                                               static_cast<std::ptrdiff_t>(half);
                    const std::size_t clamped = src < 0 ? 0
                                                : src >= static_cast<std::ptrdiff_t>(L)
                                                    ? L - 1
                                                    : static_cast<std::size_t>(src);
                    s += kernel.at2(c, j) * x.at3(b, clamped, c);
                }
                out.at3(b, t, c) = s;
            }
    return out;
}

} // namespace maestro
