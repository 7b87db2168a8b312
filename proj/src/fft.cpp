#include "maestro/fft.hpp"

#include <cmath>

namespace maestro {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

void fft_pow2(std::complex<double>* a, std::size_t n, bool inverse) {
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? kTwoPi : -kTwoPi) / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Bluestein's algorithm: expresses a length-n DFT as a convolution that is
// evaluated with power-of-two FFTs of size >= 2n-1.
void fft_bluestein(std::complex<double>* a, std::size_t n, bool inverse) {
    const std::size_t m = next_pow2(2 * n - 1);
    std::vector<std::complex<double>> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // angle = pi * k^2 / n, with k^2 reduced mod 2n to avoid overflow
        const std::size_t k2 = (k * k) % (2 * n);
        const double ang = (inverse ? 1.0 : -1.0) * M_PI * static_cast<double>(k2) /
                           static_cast<double>(n);
        chirp[k] = {std::cos(ang), std::sin(ang)};
    }
    std::vector<std::complex<double>> u(m), v(m);
    for (std::size_t k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
    v[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) v[k] = v[m - k] = std::conj(chirp[k]);
    fft_pow2(u.data(), m, false);
    fft_pow2(v.data(), m, false);
    for (std::size_t k = 0; k < m; ++k) u[k] *= v[k];
    fft_pow2(u.data(), m, true);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = u[k] * inv_m * chirp[k];
}
} // namespace

namespace fft_detail {
void transform(std::complex<double>* a, std::size_t n, bool inverse) {
    if (n == 0) throw DataError("fft: zero-length axis");
    if (n > 1) {
        if (is_pow2(n)) {
            fft_pow2(a, n, inverse);
        } else {
            fft_bluestein(a, n, inverse);
        }
    }
    if (inverse) {
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t k = 0; k < n; ++k) a[k] *= inv_n;
    }
}
} // namespace fft_detail

ComplexTensor::ComplexTensor(Shape s, std::vector<double> re, std::vector<double> im)
    : shape(std::move(s)), real(std::move(re)), imag(std::move(im)) {
    const auto n = shape_numel(shape);
    if (real.size() != n || imag.size() != n)
        throw DataError("complex tensor: plane lengths do not match shape " + shape_str(shape));
}

ComplexTensor ComplexTensor::zeros(Shape s) {
    const auto n = shape_numel(s);
    return ComplexTensor(std::move(s), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0));
}

ComplexTensor ComplexTensor::from_real(const Tensor& t) {
    return ComplexTensor(t.shape, t.data, std::vector<double>(t.size(), 0.0));
}

namespace {
ComplexTensor transform_axis(const ComplexTensor& x, std::size_t axis, bool inverse) {
    if (x.shape.empty() || axis >= x.shape.size())
        throw DataError("fft: axis out of range for shape " + shape_str(x.shape));
    const std::size_t n = x.shape[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape[i];
    for (std::size_t i = axis + 1; i < x.shape.size(); ++i) inner *= x.shape[i];

    ComplexTensor out = x;
    std::vector<std::complex<double>> line(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            for (std::size_t t = 0; t < n; ++t) {
                const std::size_t idx = base + t * inner;
                line[t] = {x.real[idx], x.imag[idx]};
            }
            fft_detail::transform(line.data(), n, inverse);
            for (std::size_t t = 0; t < n; ++t) {
                const std::size_t idx = base + t * inner;
                out.real[idx] = line[t].real();
                out.imag[idx] = line[t].imag();
            }
        }
    }
    return out;
}
} // namespace

ComplexTensor fft(const ComplexTensor& x, std::size_t axis) { return transform_axis(x, axis, false); }
ComplexTensor ifft(const ComplexTensor& z, std::size_t axis) { return transform_axis(z, axis, true); }

void fft_lines(std::vector<std::complex<double>>& buf, std::size_t n, bool inverse) {
    if (n == 0 || buf.size() % n != 0) throw DataError("fft_lines: buffer not a multiple of n");
    for (std::size_t off = 0; off < buf.size(); off += n)
        fft_detail::transform(buf.data() + off, n, inverse);
}

} // namespace maestro
