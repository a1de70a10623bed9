#pragma once

// Complex-baseband containers and the DSP primitives every other module
// builds on: mixing, gain, noise, frequency shift, FIR low-pass,
// fractional and rational resampling, RSSI and phase-shift series.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace ctilab {

using IqSample = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;

/// Common air-interface simulation rate and the ZigBee receiver rate.
inline constexpr double kAirRateHz = 22e6;
inline constexpr double kReceiverRateHz = 4e6;

struct IqWaveform
{
    std::vector<IqSample> samples;
    double sample_rate_hz = 1.0;

    IqWaveform() = default;
    IqWaveform(std::vector<IqSample> s, double rate)
        : samples(std::move(s)), sample_rate_hz(rate)
    {
        require(std::isfinite(rate) && rate > 0.0, "sample rate must be positive");
    }

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
    double duration_s() const noexcept { return double(samples.size()) / sample_rate_hz; }
};

struct NoiseSpec
{
    double variance_per_component = 0.0;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Random numbers
//
// Reproducibility across platforms matters more than speed here, so nothing
// below goes through std::*_distribution (their algorithms are unspecified).
// Seeds are whitened with SplitMix64, the stream is std::mt19937_64 (fully
// specified by the standard), uniforms take the top 53 bits, and normals use
// the Box-Muller transform.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Derive an independent child seed from a parent seed and a stream tag.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept
{
    return splitmix64(splitmix64(parent) ^ (tag * 0xD1B54A32D192ED03ull));
}

class Rng
{
public:
    explicit Rng(std::uint64_t seed) : m_engine(splitmix64(seed)) {}

    std::uint64_t next_u64() { return m_engine(); }

    /// Uniform in [0, 1).
    double uniform() { return double(m_engine() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), unbiased by rejection.
    std::uint64_t below(std::uint64_t n)
    {
        require(n > 0, "Rng::below needs n > 0");
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = m_engine();
        } while (x >= limit);
        return x % n;
    }

    bool bit() { return (m_engine() >> 63) != 0; }

    /// Pair of independent standard normals (Box-Muller).
    std::pair<double, double> normal_pair()
    {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * kPi * u2;
        return {r * std::cos(theta), r * std::sin(theta)};
    }

private:
    std::mt19937_64 m_engine;
};

// ---------------------------------------------------------------------------
// Elementary waveform operations

inline double wrap_phase(double x) noexcept
{
    x = std::remainder(x, 2.0 * kPi);
    return x <= -kPi ? x + 2.0 * kPi : x;
}

inline double mean_power(std::span<const IqSample> s) noexcept
{
    if (s.empty())
        return 0.0;
    double acc = 0.0;
    for (const auto& v : s)
        acc += std::norm(v);
    return acc / double(s.size());
}

inline double mean_power(const IqWaveform& w) noexcept { return mean_power(w.samples); }

inline bool all_finite(const IqWaveform& w) noexcept
{
    return std::all_of(w.samples.begin(), w.samples.end(), [](const IqSample& v) {
        return std::isfinite(v.real()) && std::isfinite(v.imag());
    });
}

/// Element-wise sum; the shorter operand is zero-padded at its tail.
inline IqWaveform add_waveforms(const IqWaveform& a, const IqWaveform& b)
{
    if (a.sample_rate_hz != b.sample_rate_hz)
        fail(ErrorKind::RateMismatch, "add_waveforms: sample rates differ (" +
                                          std::to_string(a.sample_rate_hz) + " vs " +
                                          std::to_string(b.sample_rate_hz) + ")");
    const auto& longer = a.size() >= b.size() ? a : b;
    const auto& shorter = a.size() >= b.size() ? b : a;
    IqWaveform out = longer;
    for (std::size_t n = 0; n < shorter.size(); ++n)
        out.samples[n] += shorter.samples[n];
    return out;
}

inline IqWaveform scale(const IqWaveform& w, IqSample gain)
{
    require(std::isfinite(gain.real()) && std::isfinite(gain.imag()), "scale: gain must be finite");
    IqWaveform out = w;
    for (auto& v : out.samples)
        v *= gain;
    return out;
}

inline IqWaveform add_awgn(const IqWaveform& w, const NoiseSpec& noise)
{
    require(noise.variance_per_component >= 0.0, "add_awgn: variance must be nonnegative");
    IqWaveform out = w;
    if (noise.variance_per_component == 0.0)
        return out;
    const double sigma = std::sqrt(noise.variance_per_component);
    Rng rng(noise.seed);
    for (auto& v : out.samples) {
        const auto [gi, gq] = rng.normal_pair();
        v += IqSample(sigma * gi, sigma * gq);
    }
    return out;
}

/// Multiply sample n by exp(j*2*pi*offset*n/fs).
inline IqWaveform frequency_shift(const IqWaveform& w, double offset_hz)
{
    require(std::abs(offset_hz) < w.sample_rate_hz / 2.0,
            "frequency_shift: offset must be below Nyquist");
    IqWaveform out = w;
    if (offset_hz == 0.0)
        return out;
    const double step = 2.0 * kPi * offset_hz / w.sample_rate_hz;
    for (std::size_t n = 0; n < out.size(); ++n) {
        // Reduce the argument before sin/cos so long waveforms stay accurate.
        const double phase = std::remainder(step * double(n), 2.0 * kPi);
        out.samples[n] *= IqSample(std::cos(phase), std::sin(phase));
    }
    return out;
}

// ---------------------------------------------------------------------------
// FIR filtering

inline constexpr std::size_t kDefaultLowpassTaps = 63;

/// Hamming-windowed sinc low-pass with unit DC gain. Odd tap count.
inline std::vector<double> design_lowpass(double cutoff_hz, double sample_rate_hz,
                                          std::size_t taps = kDefaultLowpassTaps)
{
    require(taps % 2 == 1, "design_lowpass: tap count must be odd");
    require(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0,
            "design_lowpass: cutoff must lie in (0, fs/2)");
    const double fc = cutoff_hz / sample_rate_hz;
    const double mid = double(taps - 1) / 2.0;
    std::vector<double> h(taps);
    double sum = 0.0;
    for (std::size_t n = 0; n < taps; ++n) {
        const double x = double(n) - mid;
        const double sinc = x == 0.0 ? 2.0 * fc : std::sin(2.0 * kPi * fc * x) / (kPi * x);
        const double win = 0.54 - 0.46 * std::cos(2.0 * kPi * double(n) / double(taps - 1));
        h[n] = sinc * win;
        sum += h[n];
    }
    for (auto& v : h)
        v /= sum;
    return h;
}

/// Linear-phase FIR with the (taps-1)/2 group delay removed, so output[n]
/// aligns with input[n]. Samples outside the input are taken as zero.
inline std::vector<IqSample> fir_filter_aligned(std::span<const IqSample> x, std::span<const double> h)
{
    const std::ptrdiff_t n_in = std::ptrdiff_t(x.size());
    const std::ptrdiff_t taps = std::ptrdiff_t(h.size());
    const std::ptrdiff_t mid = (taps - 1) / 2;
    std::vector<IqSample> y(x.size());
    for (std::ptrdiff_t n = 0; n < n_in; ++n) {
        // y[n] = sum_k h[k] x[n + mid - k]
        const std::ptrdiff_t k_lo = std::max<std::ptrdiff_t>(0, n + mid - (n_in - 1));
        const std::ptrdiff_t k_hi = std::min<std::ptrdiff_t>(taps - 1, n + mid);
        double re = 0.0, im = 0.0;
        for (std::ptrdiff_t k = k_lo; k <= k_hi; ++k) {
            const IqSample& s = x[std::size_t(n + mid - k)];
            re += h[std::size_t(k)] * s.real();
            im += h[std::size_t(k)] * s.imag();
        }
        y[std::size_t(n)] = {re, im};
    }
    return y;
}

inline IqWaveform low_pass_filter(const IqWaveform& w, double cutoff_hz,
                                  std::size_t taps = kDefaultLowpassTaps)
{
    const auto h = design_lowpass(cutoff_hz, w.sample_rate_hz, taps);
    return IqWaveform(fir_filter_aligned(w.samples, h), w.sample_rate_hz);
}

/// Output variance of a white input divided by its input variance.
inline double noise_gain(std::span<const double> h) noexcept
{
    double acc = 0.0;
    for (double v : h)
        acc += v * v;
    return acc;
}

// ---------------------------------------------------------------------------
// Resampling

/// Band-limited interpolation at arbitrary (fractional) sample positions.
/// Blackman-windowed sinc kernel, weights renormalized to unit sum per
/// position. Positions outside the waveform see zeros.
inline std::vector<IqSample> interpolate_at(std::span<const IqSample> x, std::span<const double> positions,
                                            int half_width = 8)
{
    std::vector<IqSample> out(positions.size());
    const std::ptrdiff_t n_in = std::ptrdiff_t(x.size());
    for (std::size_t m = 0; m < positions.size(); ++m) {
        const double p = positions[m];
        const double base = std::floor(p);
        const double frac = p - base;
        const auto k0 = std::ptrdiff_t(base);
        if (frac == 0.0) {
            out[m] = (k0 >= 0 && k0 < n_in) ? x[std::size_t(k0)] : IqSample{};
            continue;
        }
        // sin(pi*(frac - j)) = (-1)^j sin(pi*frac)
        const double s0 = std::sin(kPi * frac);
        IqSample acc{};
        double wsum = 0.0;
        for (int j = -half_width + 1; j <= half_width; ++j) {
            const double d = frac - double(j); // distance from tap k0 + j
            const double sinc = ((j & 1) ? -s0 : s0) / (kPi * d);
            const double t = d / double(half_width); // in (-1, 1)
            const double win = 0.42 + 0.5 * std::cos(kPi * t) + 0.08 * std::cos(2.0 * kPi * t);
            const double wgt = sinc * win;
            wsum += wgt;
            const std::ptrdiff_t k = k0 + j;
            if (k >= 0 && k < n_in)
                acc += wgt * x[std::size_t(k)];
        }
        out[m] = acc / wsum;
    }
    return out;
}

/// Rational resampler (polyphase, windowed-sinc anti-imaging/anti-alias
/// filter). Output sample m corresponds to input time m * down / up.
inline IqWaveform resample_rational(const IqWaveform& w, int up, int down, int half_len_per_phase = 12)
{
    require(up >= 1 && down >= 1, "resample_rational: factors must be positive");
    const int taps = 2 * half_len_per_phase * up + 1;
    const double fs_up = w.sample_rate_hz * up;
    const double cutoff = 0.5 * std::min(w.sample_rate_hz, w.sample_rate_hz * up / down) * 0.9;
    auto h = design_lowpass(cutoff, fs_up, std::size_t(taps));
    for (auto& v : h)
        v *= up;
    const std::ptrdiff_t mid = (taps - 1) / 2;
    const std::ptrdiff_t n_in = std::ptrdiff_t(w.size());
    const std::size_t n_out = std::size_t((std::int64_t(w.size()) * up + down - 1) / down);
    std::vector<IqSample> y(n_out);
    for (std::size_t m = 0; m < n_out; ++m) {
        // Upsampled index t = m*down; y = sum_k h[k] xu[t + mid - k], xu nonzero at multiples of up.
        const std::ptrdiff_t t = std::ptrdiff_t(m) * down + mid;
        // k = t - i*up for input index i, with 0 <= k < taps
        std::ptrdiff_t i_hi = t / up;
        std::ptrdiff_t i_lo = (t - (taps - 1) + up - 1) / up;
        i_lo = std::max<std::ptrdiff_t>(i_lo, 0);
        i_hi = std::min<std::ptrdiff_t>(i_hi, n_in - 1);
        IqSample acc{};
        for (std::ptrdiff_t i = i_lo; i <= i_hi; ++i)
            acc += h[std::size_t(t - i * up)] * w.samples[std::size_t(i)];
        y[m] = acc;
    }
    return IqWaveform(std::move(y), w.sample_rate_hz * up / down);
}

// ---------------------------------------------------------------------------
// Per-sample series

inline std::vector<double> rssi_series(const IqWaveform& w)
{
    std::vector<double> out(w.size());
    std::transform(w.samples.begin(), w.samples.end(), out.begin(), [](const IqSample& s) { return std::norm(s); });
    return out;
}

/// Included angle between consecutive samples, angle(s[k+1] * conj(s[k])), in (-pi, pi].
inline std::vector<double> phase_shift_series(std::span<const IqSample> s)
{
    require(s.size() >= 2, "phase_shift_series: need at least two samples");
    std::vector<double> out(s.size() - 1);
    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
        double a = std::arg(s[k + 1] * std::conj(s[k]));
        out[k] = a <= -kPi ? kPi : a;
    }
    return out;
}

inline std::vector<double> phase_shift_series(const IqWaveform& w) { return phase_shift_series(w.samples); }

struct Autocorrelation
{
    std::vector<double> values;  // lags 1..max_lag
    bool zero_variance = false;
};

/// Biased, mean-removed autocorrelation normalized by lag 0.
inline Autocorrelation autocorrelation(std::span<const double> x, std::size_t max_lag)
{
    require(max_lag >= 1, "autocorrelation: max_lag must be at least 1");
    require(x.size() >= 2 * max_lag, "autocorrelation: need length >= 2*max_lag");
    const std::size_t n = x.size();
    double mean = 0.0;
    for (double v : x)
        mean += v;
    mean /= double(n);
    std::vector<double> c(n);
    double c0 = 0.0, scale2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        c[i] = x[i] - mean;
        c0 += c[i] * c[i];
        scale2 += x[i] * x[i];
    }
    Autocorrelation r;
    r.values.assign(max_lag, 0.0);
    // Relative floor: rounding residue of a constant sequence is not variance.
    if (c0 <= 1e-24 * std::max(scale2, 1e-300) || c0 == 0.0) {
        r.zero_variance = true;
        return r;
    }
    for (std::size_t lag = 1; lag <= max_lag; ++lag) {
        double acc = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i)
            acc += c[i] * c[i + lag];
        r.values[lag - 1] = acc / c0;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Radix-2 FFT (power-of-two lengths only; used for 64-point OFDM work)

inline void fft_inplace(std::vector<IqSample>& a, bool inverse)
{
    const std::size_t n = a.size();
    require(n >= 1 && (n & (n - 1)) == 0, "fft: length must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1)
            j ^= bit;
        j ^= bit;
        if (i < j)
            std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * kPi / double(len) * (inverse ? 1.0 : -1.0);
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                const IqSample wk(std::cos(ang * double(k)), std::sin(ang * double(k)));
                const IqSample u = a[i + k];
                const IqSample v = a[i + k + len / 2] * wk;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
    if (inverse)
        for (auto& v : a)
            v /= double(n);
}

} // namespace ctilab
