#include "maestro/freqdom.hpp"

#include <cmath>
#include <complex>
#include <memory>

namespace maestro {

using ad::Graph;
using ad::Node;

WindowKind window_from_string(const std::string& s) {
    if (s == "rect") return WindowKind::Rect;
    if (s == "hann") return WindowKind::Hann;
    if (s == "hamming") return WindowKind::Hamming;
    throw UsageError("unknown window kind '" + s + "' (expected rect|hann|hamming)");
}

std::string window_to_string(WindowKind w) {
    switch (w) {
        case WindowKind::Rect: return "rect";
        case WindowKind::Hann: return "hann";
        case WindowKind::Hamming: return "hamming";
    }
    return "?";
}

Tensor make_window(WindowKind kind, std::size_t L) {
    Tensor w = Tensor::full({L}, 1.0);
    if (L == 1 || kind == WindowKind::Rect) return w;
    const double denom = static_cast<double>(L - 1);
    for (std::size_t t = 0; t < L; ++t) {
        const double c = std::cos(2.0 * M_PI * static_cast<double>(t) / denom);
        if (kind == WindowKind::Hann) w[t] = 0.5 - 0.5 * c;
        else w[t] = 0.54 - 0.46 * c;
    }
    return w;
}

void project_mask_planes(Tensor& re, Tensor& im, double g_f) {
    if (g_f <= 0.0) throw UsageError("project_mask: gain bound must be positive");
    if (!re.same_shape(im))
        throw ad::ShapeError("project_mask: plane shapes differ " + shape_str(re.shape) +
                             " vs " + shape_str(im.shape));
    for (std::size_t i = 0; i < re.size(); ++i) {
        // loop guards against a 1-ulp overshoot so projection is idempotent
        for (int pass = 0; pass < 4; ++pass) {
            const double m = std::hypot(re[i], im[i]);
            if (m <= g_f) break;
            const double s = g_f / m;
            re[i] *= s;
            im[i] *= s;
        }
    }
}

// ---------------------------------------------------------------------------

namespace {
struct FilterContext {
    std::vector<std::complex<double>> h_spec; // fft(window (*) x), per (b,j) line
    Tensor window;                             // (L), all ones when absent
    std::size_t B, L, d;
};
} // namespace

Node* spectral_filter(Graph& g, Node* h, Node* mask_re, Node* mask_im, const Tensor* window) {
    const Shape& s = h->value.shape;
    if (s.size() != 3)
        throw ad::ShapeError("spectral_filter: expected (B,L,d), got " + shape_str(s));
    const std::size_t B = s[0], L = s[1], d = s[2];
    if (mask_re->value.shape != Shape{L, d} || mask_im->value.shape != Shape{L, d})
        throw ad::ShapeError("spectral_filter: mask planes " + shape_str(mask_re->value.shape) +
                             " do not match sequence length " + std::to_string(L) + " x " +
                             std::to_string(d));
    if (window && window->size() != L)
        throw ad::ShapeError("spectral_filter: window length mismatch");

    auto ctx = std::make_shared<FilterContext>();
    ctx->B = B;
    ctx->L = L;
    ctx->d = d;
    ctx->window = window ? *window : Tensor::full({L}, 1.0);
    ctx->h_spec.resize(B * d * L);

    Tensor out = Tensor::zeros(s);
    {
        std::vector<std::complex<double>> line(L);
        const auto& xv = h->value.data;
        const auto& mr = mask_re->value.data;
        const auto& mi = mask_im->value.data;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t j = 0; j < d; ++j) {
                for (std::size_t t = 0; t < L; ++t)
                    line[t] = {ctx->window[t] * xv[(b * L + t) * d + j], 0.0};
                fft_detail::transform(line.data(), L, false);
                std::copy(line.begin(), line.end(),
                          ctx->h_spec.begin() + (b * d + j) * L);
                for (std::size_t k = 0; k < L; ++k)
                    line[k] *= std::complex<double>(mr[k * d + j], mi[k * d + j]);
                fft_detail::transform(line.data(), L, true);
                for (std::size_t t = 0; t < L; ++t)
                    out.data[(b * L + t) * d + j] = line[t].real();
            }
        }
    }

    auto backward = [ctx](Node& self) {
        Node* h = self.parents[0];
        Node* mask_re = self.parents[1];
        Node* mask_im = self.parents[2];
        const std::size_t B = ctx->B, L = ctx->L, d = ctx->d;
        const auto& gv = self.grad.data;
        const auto& mr = mask_re->value.data;
        const auto& mi = mask_im->value.data;
        const double inv_l = 1.0 / static_cast<double>(L);

        std::vector<std::complex<double>> gline(L);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t j = 0; j < d; ++j) {
                for (std::size_t t = 0; t < L; ++t)
                    gline[t] = {gv[(b * L + t) * d + j], 0.0};
                fft_detail::transform(gline.data(), L, false); // G

                if (mask_re->requires_grad || mask_im->requires_grad) {
                    Tensor* gmr = mask_re->requires_grad ? &Graph::ensure_grad(mask_re) : nullptr;
                    Tensor* gmi = mask_im->requires_grad ? &Graph::ensure_grad(mask_im) : nullptr;
                    const std::complex<double>* hs = ctx->h_spec.data() + (b * d + j) * L;
                    for (std::size_t k = 0; k < L; ++k) {
                        const std::complex<double> hg = hs[k] * std::conj(gline[k]);
                        if (gmr) gmr->data[k * d + j] += inv_l * hg.real();
                        if (gmi) gmi->data[k * d + j] -= inv_l * hg.imag();
                    }
                }
                if (h->requires_grad) {
                    Tensor& gh = Graph::ensure_grad(h);
                    for (std::size_t k = 0; k < L; ++k)
                        gline[k] *= std::complex<double>(mr[k * d + j], -mi[k * d + j]);
                    fft_detail::transform(gline.data(), L, true);
                    for (std::size_t t = 0; t < L; ++t)
                        gh.data[(b * L + t) * d + j] += ctx->window[t] * gline[t].real();
                }
            }
        }
    };
    return g.custom(std::move(out), {h, mask_re, mask_im}, backward, "spectral_filter");
}

// ---------------------------------------------------------------------------

FreqFilterBlock::FreqFilterBlock(ParamStore& store, std::string prefix, std::size_t d_model,
                                 std::size_t seq_len, double gain_bound,
                                 std::vector<FreqConfig> configs)
    : prefix_(std::move(prefix)), d_model_(d_model), seq_len_(seq_len),
      gain_bound_(gain_bound), configs_(std::move(configs)) {
    if (configs_.empty()) throw UsageError("freq filter: needs at least one config");
    if (gain_bound_ <= 0.0) throw UsageError("freq filter: gain bound must be positive");
    for (std::size_t i = 0; i < configs_.size(); ++i) {
        // zero mask at init: the filtered branch starts silent and the
        // residual stream passes through unchanged
        store.create(mask_name(i, false), {seq_len, d_model}, Init::Zero);
        store.create(mask_name(i, true), {seq_len, d_model}, Init::Zero);
    }
    if (configs_.size() > 1) {
        store.create(prefix_ + ".score.w", {d_model, configs_.size()}, Init::Xavier,
                     static_cast<double>(d_model), static_cast<double>(configs_.size()));
        store.create(prefix_ + ".score.b", {configs_.size()}, Init::Zero);
    }
}

std::string FreqFilterBlock::mask_name(std::size_t config_idx, bool imag) const {
    return prefix_ + ".s" + std::to_string(config_idx) + (imag ? ".mask_im" : ".mask_re");
}

Node* FreqFilterBlock::forward(Graph& g, Binding& p, Node* h) const {
    const Shape& s = h->value.shape;
    if (s.size() != 3 || s[1] != seq_len_ || s[2] != d_model_)
        throw ad::ShapeError("freq filter: expected (B," + std::to_string(seq_len_) + "," +
                             std::to_string(d_model_) + "), got " + shape_str(s));
    const double bound_tol = gain_bound_ * (1.0 + 1e-12) + 1e-12;

    std::vector<Node*> branches;
    for (std::size_t i = 0; i < configs_.size(); ++i) {
        Node* mre = p[mask_name(i, false)];
        Node* mim = p[mask_name(i, true)];
        for (std::size_t k = 0; k < mre->value.size(); ++k) {
            if (std::hypot(mre->value[k], mim->value[k]) > bound_tol)
                throw NumericError("freq filter: mask exceeds gain bound; project after updates");
        }
        const Tensor w = make_window(configs_[i].window, seq_len_);
        branches.push_back(spectral_filter(g, h, mre, mim,
                                           configs_[i].window == WindowKind::Rect ? nullptr : &w));
    }
    if (branches.size() == 1) return branches[0];

    Node* pooled = g.mean_axis(h, 1); // (B,d)
    Node* pi = g.softmax(ad::linear(g, pooled, p[prefix_ + ".score.w"], p[prefix_ + ".score.b"]));
    Node* acc = nullptr;
    for (std::size_t i = 0; i < branches.size(); ++i) {
        Node* wi = g.reshape(g.slice(pi, 1, i, 1), {s[0]});
        Node* term = ad::scale_rows(g, branches[i], wi);
        acc = acc ? g.add(acc, term) : term;
    }
    return acc;
}

Node* FreqFilterBlock::regularizer(Graph& g, Binding& p, double lam_smooth,
                                   double lam_sparse) const {
    Node* total = nullptr;
    for (std::size_t i = 0; i < configs_.size(); ++i) {
        Node* mag = g.hypot(p[mask_name(i, false)], p[mask_name(i, true)]); // (L,d)
        Node* term = nullptr;
        if (seq_len_ > 1) {
            Node* hi = g.slice(mag, 0, 1, seq_len_ - 1);
            Node* lo = g.slice(mag, 0, 0, seq_len_ - 1);
            Node* diff = g.sub(hi, lo);
            term = g.scale(g.sum(g.mul(diff, diff)), lam_smooth);
        } else {
            term = g.scalar_const(0.0);
        }
        term = g.add(term, g.scale(g.sum(mag), lam_sparse));
        total = total ? g.add(total, term) : term;
    }
    return total;
}

void FreqFilterBlock::project(ParamStore& store) const {
    for (std::size_t i = 0; i < configs_.size(); ++i) {
        project_mask_planes(store.at(mask_name(i, false)), store.at(mask_name(i, true)),
                            gain_bound_);
    }
}

} // namespace maestro
