#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>

#include "somn/signal.hpp"

namespace somn {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr int kTapsPerPhase = 32;
constexpr double kKaiserBeta = 8.6;

// Zero-order modified Bessel function of the first kind (series expansion,
// iterated to convergence).
double bessel_i0(double x) {
    double half = x / 2.0;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k < 64; ++k) {
        double y = half / k;
        term *= y * y;
        sum += term;
        if (term < sum * 1e-17) break;
    }
    return sum;
}

double kaiser(double beta, double t) {  // t in [-1, 1]
    if (t < -1.0 || t > 1.0) return 0.0;
    return bessel_i0(beta * std::sqrt(1.0 - t * t)) / bessel_i0(beta);
}

double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    return std::sin(kPi * x) / (kPi * x);
}

// Best rational approximation p/q of x with q <= max_den (continued
// fractions).
std::pair<int64_t, int64_t> rational_approx(double x, int64_t max_den) {
    int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    double frac = x;
    for (int iter = 0; iter < 64; ++iter) {
        int64_t a = static_cast<int64_t>(std::floor(frac));
        int64_t p2 = a * p1 + p0, q2 = a * q1 + q0;
        if (q2 > max_den) break;
        p0 = p1; q0 = q1; p1 = p2; q1 = q2;
        double rem = frac - static_cast<double>(a);
        if (rem < 1e-12) break;
        if (std::abs(static_cast<double>(p1) / q1 - x) < 1e-12 * x) break;
        frac = 1.0 / rem;
    }
    return {p1, q1};
}

// Polyphase filter bank for one up/down ratio: prototype lowpass of length
// kTapsPerPhase * L in the upsampled domain, Kaiser-windowed sinc, gain L.
struct FilterBank {
    int64_t up, down;
    std::vector<double> taps;  // length kTapsPerPhase * up

    FilterBank(int64_t l, int64_t m) : up(l), down(m) {
        const int64_t n = kTapsPerPhase * up;
        const double center = static_cast<double>(n - 1) / 2.0;
        const double q = static_cast<double>(std::max(up, down));
        taps.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            double t = (static_cast<double>(i) - center);
            taps[static_cast<size_t>(i)] =
                static_cast<double>(up) / q * sinc(t / q) * kaiser(kKaiserBeta, t / center);
        }
    }
};

std::shared_ptr<const FilterBank> get_filter(int64_t up, int64_t down) {
    static std::mutex mu;
    static std::map<std::pair<int64_t, int64_t>, std::shared_ptr<const FilterBank>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(up, down);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto fb = std::make_shared<const FilterBank>(up, down);
    cache.emplace(key, fb);
    return fb;
}

}  // namespace

Channel resample(const Channel& ch, double target_hz) {
    if (ch.rate <= 0.0) throw UsageError("resample: input rate must be > 0");
    if (target_hz <= 0.0) throw UsageError("resample: target rate must be > 0");
    if (ch.rate == target_hz) return ch;

    Channel out;
    out.label = ch.label;
    out.rate = target_hz;
    if (ch.samples.empty()) return out;

    auto [up, down] = rational_approx(target_hz / ch.rate, 1 << 13);
    auto fb = get_filter(up, down);
    const double* h = fb->taps.data();
    const int64_t n_taps = static_cast<int64_t>(fb->taps.size());
    const int64_t center = (n_taps - 1) / 2;

    const int64_t len_in = static_cast<int64_t>(ch.samples.size());
    const int64_t len_out = std::llround(static_cast<double>(len_in) * target_hz / ch.rate);
    out.samples.resize(static_cast<size_t>(len_out));

    for (int64_t n = 0; n < len_out; ++n) {
        // Position of output sample n in the upsampled (rate * up) domain.
        const int64_t pos = n * down + center;
        int64_t q = pos / up;            // newest contributing input sample
        int64_t j = pos - q * up;        // tap offset within the phase
        double acc = 0.0;
        for (int t = 0; t < kTapsPerPhase; ++t, j += up, --q) {
            if (q < 0 || q >= len_in) continue;  // zero padding outside
            acc += h[j] * static_cast<double>(ch.samples[static_cast<size_t>(q)]);
        }
        out.samples[static_cast<size_t>(n)] = static_cast<float>(acc);
    }
    return out;
}

Channel zscore(const Channel& ch, double eps) {
    Channel out;
    out.label = ch.label;
    out.rate = ch.rate;
    out.samples.resize(ch.samples.size());
    if (ch.samples.empty()) return out;

    double mean = 0.0;
    for (float v : ch.samples) mean += v;
    mean /= static_cast<double>(ch.samples.size());

    double var = 0.0;
    for (float v : ch.samples) {
        double d = v - mean;
        var += d * d;
    }
    var /= static_cast<double>(ch.samples.size());
    double denom = std::sqrt(var) + eps;

    for (size_t i = 0; i < ch.samples.size(); ++i)
        out.samples[i] = static_cast<float>((ch.samples[i] - mean) / denom);
    return out;
}

std::vector<Channel> harmonize_channels(std::vector<Channel> chs, int n, Rng& rng) {
    if (chs.empty()) throw DataError("harmonize_channels: no input channels");
    if (n < 1) throw UsageError("harmonize_channels: channel count must be >= 1");
    for (size_t i = 1; i < chs.size(); ++i) {
        if (chs[i].rate != chs[0].rate)
            throw DataError("harmonize_channels: channel rates differ (" + chs[i].label + ")");
        if (chs[i].samples.size() != chs[0].samples.size())
            throw DataError("harmonize_channels: channel lengths differ (" + chs[i].label + ")");
    }

    if (static_cast<int>(chs.size()) > n) {
        // Keep a uniformly random subset of n channels.
        std::vector<int> idx(chs.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        rng.shuffle(idx.begin(), idx.end());
        idx.resize(static_cast<size_t>(n));
        std::sort(idx.begin(), idx.end());
        std::vector<Channel> kept;
        kept.reserve(static_cast<size_t>(n));
        for (int i : idx) kept.push_back(std::move(chs[static_cast<size_t>(i)]));
        chs = std::move(kept);
    } else {
        while (static_cast<int>(chs.size()) < n) {
            Channel dummy;
            dummy.label = "dummy" + std::to_string(chs.size());
            dummy.rate = chs[0].rate;
            dummy.samples.assign(chs[0].samples.size(), 0.0f);
            chs.push_back(std::move(dummy));
        }
    }

    rng.shuffle(chs.begin(), chs.end());
    return chs;
}

}  // namespace somn
