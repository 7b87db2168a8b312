#pragma once

#include <complex>
#include <vector>

#include "maestro/tensor.hpp"

namespace maestro {

/// Complex tensor stored as parallel real/imag planes (row-major, like Tensor).
struct ComplexTensor {
    Shape shape;
    std::vector<double> real;
    std::vector<double> imag;

    ComplexTensor() = default;
    ComplexTensor(Shape s, std::vector<double> re, std::vector<double> im);
    static ComplexTensor zeros(Shape s);
    static ComplexTensor from_real(const Tensor& t);

    std::size_t size() const { return real.size(); }
    std::complex<double> at(std::size_t i) const { return {real[i], imag[i]}; }
    void set(std::size_t i, std::complex<double> v) {
        real[i] = v.real();
        imag[i] = v.imag();
    }
};

namespace fft_detail {
/// In-place transform of one contiguous line. Radix-2 for powers of two,
/// Bluestein otherwise, so any positive length works. Convention: forward
/// is unscaled, inverse carries the 1/n factor (so ifft(fft(x)) == x and
/// ||fft(x)||_2 = sqrt(n) * ||x||_2).
void transform(std::complex<double>* a, std::size_t n, bool inverse);
} // namespace fft_detail

/// FFT along the given axis (default: last). Errors on empty input.
ComplexTensor fft(const ComplexTensor& x, std::size_t axis);
ComplexTensor ifft(const ComplexTensor& z, std::size_t axis);

inline ComplexTensor fft(const ComplexTensor& x) { return fft(x, x.shape.size() - 1); }
inline ComplexTensor ifft(const ComplexTensor& z) { return ifft(z, z.shape.size() - 1); }

/// Convenience: forward transform of each length-n line of a flat buffer.
void fft_lines(std::vector<std::complex<double>>& buf, std::size_t n, bool inverse);

} // namespace maestro
