#include "maestro/decomp.hpp"

#include <cmath>

namespace maestro {

namespace {
void check_kernel(std::size_t K, std::size_t L) {
    if (K % 2 == 0) throw UsageError("decompose: kernel size must be odd, got " + std::to_string(K));
    if (K > L)
        throw UsageError("decompose: kernel size " + std::to_string(K) +
                         " exceeds window length " + std::to_string(L));
}
} // namespace

DecompOutput decompose(ad::Graph& g, ad::Node* x, std::size_t K) {
    const Shape& s = x->value.shape;
    if (s.size() != 3) throw ad::ShapeError("decompose: expected (B,L,D), got " + shape_str(s));
    const std::size_t D = s[2];
    check_kernel(K, s[1]);

    // depthwise constant averaging kernel; not a learnable parameter
    ad::Node* kernel = g.constant(Tensor::full({D, 1, K}, 1.0 / static_cast<double>(K)));
    const std::size_t half = (K - 1) / 2;
    ad::Node* ch_first = g.transpose(x, 1, 2);          // (B,D,L)
    ad::Node* padded = g.pad_edge(ch_first, 2, half, half);
    ad::Node* avg = g.conv1d(padded, kernel, 1, D);     // (B,D,L)
    ad::Node* trend = g.transpose(avg, 1, 2);           // (B,L,D)
    ad::Node* seasonal = g.sub(x, trend);
    return {trend, seasonal};
}

DecompTensors decompose_plain(const Tensor& x, std::size_t K) {
    ad::Graph g;
    auto out = decompose(g, g.constant(x), K);
    return {out.trend->value, out.seasonal->value};
}

std::complex<double> ma_frequency_response(std::size_t K, double omega) {
    if (std::abs(omega) < 1e-12) return {1.0, 0.0};
    const double k = static_cast<double>(K);
    const double ratio = std::sin(k * omega / 2.0) / std::sin(omega / 2.0);
    const double phase = -omega * (k - 1.0) / 2.0;
    return std::polar(ratio / k, phase);
}

} // namespace maestro
