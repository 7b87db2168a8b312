#pragma once

#include <string>
#include <vector>

#include "maestro/params.hpp"

namespace maestro {

struct ConvBranch {
    std::size_t kernel;
    std::size_t dilation;
};

/// Multi-scale depthwise-separable temporal convolutions with softmax
/// attention over the (kernel, dilation) branches. Branches are length
/// preserving (edge-replication padding) and evaluated in sorted (k, d)
/// order. Returns the aggregated map; the caller adds the residual.
class MsConvBlock {
public:
    MsConvBlock(ParamStore& store, std::string prefix, std::size_t d_model,
                std::vector<std::size_t> kernels, std::vector<std::size_t> dilations);

    ad::Node* forward(ad::Graph& g, Binding& p, ad::Node* h,
                      std::vector<std::string>* warnings = nullptr) const;

    /// Branch feature maps before aggregation. include_pointwise=false is
    /// the depthwise-only rig used by the combined-kernel equivalence check.
    std::vector<ad::Node*> branch_outputs(ad::Graph& g, Binding& p, ad::Node* h,
                                          bool include_pointwise,
                                          std::vector<std::string>* warnings = nullptr) const;

    /// Softmax branch weights from the temporally mean-pooled input, (B, n).
    ad::Node* branch_weights(ad::Graph& g, Binding& p, ad::Node* h) const;

    const std::vector<ConvBranch>& branches() const { return branches_; }

private:
    std::string branch_name(const ConvBranch& b) const;

    std::string prefix_;
    std::size_t d_model_;
    std::vector<ConvBranch> branches_;
};

/// Single adaptive kernel equivalent to the alpha-weighted branch sum:
/// each (d,k) kernel is dilation-expanded, center-aligned onto the widest
/// span, and combined as sum_b alpha_b * kernel_b. Rows are per channel.
Tensor combined_kernel_oracle(const std::vector<Tensor>& kernels,
                              const std::vector<std::size_t>& dilations,
                              const std::vector<double>& alphas);

/// Plain depthwise convolution with edge padding (oracle-side convolution).
Tensor depthwise_conv_edge_plain(const Tensor& x, const Tensor& kernel);

} // namespace maestro
