#pragma once

#include <string>
#include <vector>

#include "maestro/params.hpp"

namespace maestro {

/// Attention over channels: one CxC mixing matrix per batch element,
/// computed from temporally mean-pooled per-channel summaries and shared
/// across all time steps. Cost is O(C^2 d + T C d).
class CrossChannelAttention {
public:
    CrossChannelAttention(ParamStore& store, std::string prefix, std::size_t d,
                          std::size_t d_k, std::size_t d_v);

    /// H (B,T,C,d) -> (B,T,C,d_v); alpha_capture receives the (B,C,C) matrix.
    ad::Node* forward(ad::Graph& g, Binding& p, ad::Node* h,
                      Tensor* alpha_capture = nullptr) const;

    /// The attention matrix alone, (B,C,C), rows on the simplex.
    ad::Node* attention_matrix(ad::Graph& g, Binding& p, ad::Node* h) const;

private:
    std::string prefix_;
    std::size_t d_, d_k_, d_v_;
};

/// w * seasonal + (1-w) * trend with a scalar sigmoid gate per batch element
/// learned from the pooled, concatenated component features.
class AdaptiveComponentFuse {
public:
    AdaptiveComponentFuse(ParamStore& store, std::string prefix, std::size_t d);

    ad::Node* forward(ad::Graph& g, Binding& p, ad::Node* seasonal, ad::Node* trend,
                      Tensor* weight_capture = nullptr) const;

private:
    std::string prefix_;
    std::size_t d_;
};

/// Convex combination of branch predictions (each (B,H)) under per-branch
/// weights (B,M); weights must come from a softmax upstream.
ad::Node* ensemble_combine(ad::Graph& g, const std::vector<ad::Node*>& branch_preds,
                           ad::Node* weights);

/// Adaptive ensemble head: per-branch affine predictors, a context MLP over
/// pooled branch features, and softmax gates.
class EnsembleHead {
public:
    EnsembleHead(ParamStore& store, std::string prefix, std::size_t d,
                 std::size_t n_branches, std::size_t d_context);

    /// features: one (B,H,d) tensor per branch. Returns the combined (B,H)
    /// prediction; weight_capture receives the (B,M) gate weights.
    ad::Node* forward(ad::Graph& g, Binding& p, const std::vector<ad::Node*>& features,
                      Tensor* weight_capture = nullptr, ad::Node** weights_out = nullptr) const;

private:
    std::string prefix_;
    std::size_t d_, n_branches_, d_context_;
};

/// lam_ent * sum_t sum_m w log w  +  lam_tv * sum_t ||w_t - w_{t-1}||^2
/// over a (T,M) weight sequence. The first term is the negative entropy, so
/// positive lam_ent rewards high-entropy (non-collapsed) weights. Rows must
/// lie on the simplex within 1e-9.
ad::Node* weight_regularizer(ad::Graph& g, ad::Node* weights, double lam_ent, double lam_tv);

} // namespace maestro
