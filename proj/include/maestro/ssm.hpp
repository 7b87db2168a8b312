#pragma once

#include <string>
#include <utility>

#include "maestro/params.hpp"

namespace maestro {

/// Zero-order-hold discretization of a diagonal continuous system:
/// A_d[i] = exp(a[i] dt), B_d row i = ((exp(a[i] dt) - 1) / a[i]) * B[i,:].
/// All a[i] must be strictly negative; dt must be positive.
std::pair<Tensor, Tensor> discretize(const Tensor& a_diag, const Tensor& b_mat, double dt);

/// Penalty = sum_i relu(a[i] + margin)^2 on the continuous diagonal. Zero
/// under the -softplus parameterization; nonzero only if a[i] > -margin.
double stability_penalty_value(const Tensor& a_diag, double margin = 1e-3);

/// h_t = a_t (*) h_{t-1} + u_t over rows of (L,N) inputs, h_0 = 0.
Tensor scan_sequential(const Tensor& a, const Tensor& u);
/// Same recurrence evaluated blockwise via the associative combination
/// (a2.a1, a2.u1 + u2); must agree with the sequential scan.
Tensor scan_blocked(const Tensor& a, const Tensor& u, std::size_t block);

/// Selective state-space block: input-dependent step size, stable diagonal
/// recurrence, sigmoid-gated readout, learnable feedthrough. Returns the
/// block output (no residual; the caller adds it to the stream).
class MambaBlock {
public:
    MambaBlock(ParamStore& store, std::string prefix, std::size_t d_model,
               std::size_t n_state);

    ad::Node* forward(ad::Graph& g, Binding& p, ad::Node* x) const; // (B,L,d)->(B,L,d)

    ad::Node* stability_penalty(ad::Graph& g, Binding& p, double margin = 1e-3) const;

    const std::string& prefix() const { return prefix_; }

private:
    std::string prefix_;
    std::size_t d_model_, n_state_;
};

} // namespace maestro
