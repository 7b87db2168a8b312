#pragma once

#include <complex>

#include "maestro/graph.hpp"

namespace maestro {

struct DecompOutput {
    ad::Node* trend;
    ad::Node* seasonal;
};

/// Additive trend/seasonal split of x (B,L,D): centered length-K moving
/// average with edge-replication padding, seasonal = x - trend. K must be
/// odd and at most L.
DecompOutput decompose(ad::Graph& g, ad::Node* x, std::size_t K);

struct DecompTensors {
    Tensor trend;
    Tensor seasonal;
};

/// Same operation on plain tensors (used to fit per-component stats).
DecompTensors decompose_plain(const Tensor& x, std::size_t K);

/// Frequency response of the length-K moving average,
/// H(w) = (1/K) e^{-iw(K-1)/2} sin(Kw/2)/sin(w/2), H(0) = 1.
/// Test oracle for the low-pass behavior of decompose.
std::complex<double> ma_frequency_response(std::size_t K, double omega);

} // namespace maestro
