#pragma once

#include <complex>
#include <span>
#include <vector>

namespace somn {

// Magnitude/phase view of the non-redundant half spectrum of a real signal.
// Bin count is floor(n/2)+1 for input length n. Phase of an exactly-zero bin
// is canonicalized to 0.
struct SpectralPair {
    std::vector<double> magnitude;
    std::vector<double> phase;

    size_t bins() const { return magnitude.size(); }
};

// In-place complex DFT, unnormalized forward, 1/n-scaled inverse.
// Mixed-radix (2,3,5) Cooley-Tukey with a Bluestein fallback, so any length
// works; plans (twiddle tables) are cached per length.
void fft(std::vector<std::complex<double>>& a, bool inverse);

SpectralPair rfft(std::span<const double> x);
SpectralPair rfft(std::span<const float> x);

// Inverse of rfft for a signal of length n. The half spectrum is extended to
// its Hermitian completion before the inverse transform, so the result is
// real by construction.
std::vector<double> irfft(const SpectralPair& sp, int n);

// rfft bin count for a real signal of length n.
inline int rfft_bins(int n) { return n / 2 + 1; }

}  // namespace somn
