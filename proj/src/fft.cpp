#include "somn/fft.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>

#include "somn/common.hpp"

namespace somn {
namespace {

using cd = std::complex<double>;

constexpr double kPi = 3.141592653589793238462643383279502884;

bool is_smooth(int n) {
    for (int p : {2, 3, 5})
        while (n % p == 0) n /= p;
    return n == 1;
}

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Forward roots of unity e^{-2*pi*i*k/n}, k = 0..n-1, shared per length.
struct Plan {
    int n;
    std::vector<cd> roots;

    explicit Plan(int n) : n(n), roots(static_cast<size_t>(n)) {
        for (int k = 0; k < n; ++k) {
            double a = -2.0 * kPi * k / n;
            roots[static_cast<size_t>(k)] = cd(std::cos(a), std::sin(a));
        }
    }
};

std::shared_ptr<const Plan> get_plan(int n) {
    static std::mutex mu;
    static std::map<int, std::shared_ptr<const Plan>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    auto plan = std::make_shared<const Plan>(n);
    cache.emplace(n, plan);
    return plan;
}

// Recursive decimation-in-time over factors 2/3/5. Computes the DFT of
// x[0], x[s], x[2s], ... (length n) into y[0..n). rstep is the index stride
// into the top-level root table (top_n / n).
void ct_fft(int n, int s, const cd* x, cd* y, const cd* roots, int rstep, int top_n) {
    if (n == 1) {
        y[0] = x[0];
        return;
    }
    int p = n % 2 == 0 ? 2 : (n % 3 == 0 ? 3 : 5);
    int m = n / p;
    for (int r = 0; r < p; ++r)
        ct_fft(m, s * p, x + static_cast<ptrdiff_t>(r) * s, y + static_cast<ptrdiff_t>(r) * m,
               roots, rstep * p, top_n);

    // y[r*m + k] currently holds DFT_m of residue class r; combine.
    if (p == 2) {
        int64_t idx = 0;
        for (int k = 0; k < m; ++k) {
            cd t0 = y[k];
            cd t1 = y[m + k] * roots[idx];
            y[k] = t0 + t1;
            y[m + k] = t0 - t1;
            idx += rstep;
            if (idx >= top_n) idx -= top_n;
        }
        return;
    }

    // w_p^{r*j} values live in the same table at stride top_n/p.
    cd wp[5][5];
    for (int r = 0; r < p; ++r)
        for (int j = 0; j < p; ++j)
            wp[r][j] = roots[static_cast<size_t>((static_cast<int64_t>(r) * j) % p * (top_n / p))];

    cd t[5];
    int64_t idx[5] = {0, 0, 0, 0, 0};
    int64_t step[5];
    for (int r = 0; r < p; ++r) step[r] = static_cast<int64_t>(r) * rstep % top_n;
    for (int k = 0; k < m; ++k) {
        for (int r = 0; r < p; ++r) {
            t[r] = y[static_cast<ptrdiff_t>(r) * m + k] * roots[idx[r]];
            idx[r] += step[r];
            if (idx[r] >= top_n) idx[r] -= top_n;
        }
        for (int j = 0; j < p; ++j) {
            cd acc = t[0];
            for (int r = 1; r < p; ++r) acc += t[r] * wp[r][j];
            y[static_cast<ptrdiff_t>(j) * m + k] = acc;
        }
    }
}

void fft_smooth(std::vector<cd>& a) {
    int n = static_cast<int>(a.size());
    auto plan = get_plan(n);
    std::vector<cd> out(a.size());
    ct_fft(n, 1, a.data(), out.data(), plan->roots.data(), 1, n);
    a.swap(out);
}

// Bluestein's chirp-z reduction to a power-of-two convolution; handles the
// lengths with prime factors other than 2/3/5.
void fft_bluestein(std::vector<cd>& a) {
    int n = static_cast<int>(a.size());
    int m = next_pow2(2 * n - 1);

    // chirp[j] = e^{-pi*i*j^2/n}; j^2 is reduced mod 2n to keep the angle
    // argument small and precise.
    std::vector<cd> chirp(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        int64_t q = (static_cast<int64_t>(j) * j) % (2LL * n);
        double ang = -kPi * static_cast<double>(q) / n;
        chirp[static_cast<size_t>(j)] = cd(std::cos(ang), std::sin(ang));
    }

    std::vector<cd> u(static_cast<size_t>(m)), v(static_cast<size_t>(m));
    for (int j = 0; j < n; ++j) u[static_cast<size_t>(j)] = a[static_cast<size_t>(j)] * chirp[static_cast<size_t>(j)];
    v[0] = std::conj(chirp[0]);
    for (int j = 1; j < n; ++j)
        v[static_cast<size_t>(j)] = v[static_cast<size_t>(m - j)] = std::conj(chirp[static_cast<size_t>(j)]);

    fft_smooth(u);
    fft_smooth(v);
    for (int j = 0; j < m; ++j) u[static_cast<size_t>(j)] *= v[static_cast<size_t>(j)];
    // Inverse power-of-two FFT via conjugation.
    for (auto& z : u) z = std::conj(z);
    fft_smooth(u);
    double inv_m = 1.0 / m;
    for (int j = 0; j < n; ++j)
        a[static_cast<size_t>(j)] = std::conj(u[static_cast<size_t>(j)]) * inv_m * chirp[static_cast<size_t>(j)];
}

}  // namespace

void fft(std::vector<cd>& a, bool inverse) {
    size_t n = a.size();
    if (n <= 1) return;
    if (inverse)
        for (auto& z : a) z = std::conj(z);

    if (is_smooth(static_cast<int>(n)))
        fft_smooth(a);
    else
        fft_bluestein(a);

    if (inverse) {
        double inv_n = 1.0 / static_cast<double>(n);
        for (auto& z : a) z = std::conj(z) * inv_n;
    }
}

namespace {

SpectralPair rfft_impl(const double* x, int n) {
    std::vector<cd> a(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) a[static_cast<size_t>(i)] = cd(x[i], 0.0);
    fft(a, false);

    int bins = rfft_bins(n);
    SpectralPair sp;
    sp.magnitude.resize(static_cast<size_t>(bins));
    sp.phase.resize(static_cast<size_t>(bins));
    for (int k = 0; k < bins; ++k) {
        const cd& z = a[static_cast<size_t>(k)];
        double mag = std::abs(z);
        sp.magnitude[static_cast<size_t>(k)] = mag;
        sp.phase[static_cast<size_t>(k)] = mag == 0.0 ? 0.0 : std::atan2(z.imag(), z.real());
    }
    return sp;
}

}  // namespace

SpectralPair rfft(std::span<const double> x) {
    return rfft_impl(x.data(), static_cast<int>(x.size()));
}

SpectralPair rfft(std::span<const float> x) {
    std::vector<double> tmp(x.begin(), x.end());
    return rfft_impl(tmp.data(), static_cast<int>(tmp.size()));
}

std::vector<double> irfft(const SpectralPair& sp, int n) {
    if (n < 1) throw UsageError("irfft: length must be >= 1");
    int bins = rfft_bins(n);
    if (static_cast<int>(sp.bins()) != bins)
        throw ShapeError("irfft: spectrum has " + std::to_string(sp.bins()) +
                         " bins, expected " + std::to_string(bins) + " for length " +
                         std::to_string(n));

    std::vector<cd> a(static_cast<size_t>(n));
    for (int k = 0; k < bins; ++k) {
        double mag = sp.magnitude[static_cast<size_t>(k)];
        double ph = sp.phase[static_cast<size_t>(k)];
        cd z = std::polar(mag, ph);
        // Bin 0 (and Nyquist for even n) must be real for a real signal.
        if (k == 0 || (n % 2 == 0 && k == n / 2)) z = cd(mag * std::cos(ph), 0.0);
        a[static_cast<size_t>(k)] = z;
        if (k > 0 && k < n - k) a[static_cast<size_t>(n - k)] = std::conj(z);
    }
    fft(a, true);

    std::vector<double> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = a[static_cast<size_t>(i)].real();
    return out;
}

}  // namespace somn
