#pragma once

#include <string>
#include <vector>

#include "maestro/fft.hpp"
#include "maestro/params.hpp"

namespace maestro {

enum class WindowKind { Rect, Hann, Hamming };

WindowKind window_from_string(const std::string& s);
std::string window_to_string(WindowKind w);
Tensor make_window(WindowKind kind, std::size_t L);

/// Clips each complex mask bin to magnitude <= g_f, preserving phase.
/// Idempotent: a projected mask passes through unchanged.
void project_mask_planes(Tensor& re, Tensor& im, double g_f);

/// real(ifft(mask (*) fft(window (*) h))) along time for h (B,L,d with
/// mask planes (L,d). The learned mask is not conjugate-symmetric, so the
/// inverse transform is generally complex; the imaginary residue is
/// discarded, making this a real-linear map (see Lipschitz test). Gradients
/// flow to h and both mask planes.
ad::Node* spectral_filter(ad::Graph& g, ad::Node* h, ad::Node* mask_re, ad::Node* mask_im,
                          const Tensor* window = nullptr);

struct FreqConfig {
    WindowKind window = WindowKind::Rect;
};

/// Learnable frequency-domain filter with gain clipping; optionally several
/// analysis windows aggregated with softmax weights from the pooled input.
/// Returns the filtered map; the caller adds the residual.
class FreqFilterBlock {
public:
    FreqFilterBlock(ParamStore& store, std::string prefix, std::size_t d_model,
                    std::size_t seq_len, double gain_bound,
                    std::vector<FreqConfig> configs = {FreqConfig{}});

    ad::Node* forward(ad::Graph& g, Binding& p, ad::Node* h) const;

    /// lam_smooth * sum (|m_{w+1}| - |m_w|)^2 + lam_sparse * sum |m_w|,
    /// summed over bins, feature dims, and configs.
    ad::Node* regularizer(ad::Graph& g, Binding& p, double lam_smooth,
                          double lam_sparse) const;

    /// Clip every mask in the store to the gain bound (call after each
    /// optimizer step; the forward asserts the bound).
    void project(ParamStore& store) const;

    double gain_bound() const { return gain_bound_; }
    std::size_t num_configs() const { return configs_.size(); }
    std::string mask_name(std::size_t config_idx, bool imag) const;

private:
    std::string prefix_;
    std::size_t d_model_, seq_len_;
    double gain_bound_;
    std::vector<FreqConfig> configs_;
};

} // namespace maestro
