#pragma once

// Per-window signal features used by the detection and differentiation
// models: RSSI level, normalized RSSI variance, RSSI periodicity, and the
// phase-shift statistics.

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "channel.hpp"
#include "json_util.hpp"
#include "signal_core.hpp"
#include "zigbee_phy.hpp"

namespace ctilab {

inline constexpr std::size_t kPhaseBins = 32;
inline constexpr std::size_t kMinPeriodLag = 2;
inline constexpr std::size_t kMaxPeriodLag = 128;
inline constexpr std::size_t kMinPeriodRepeats = 8;

struct FeatureVector
{
    double rssi_mean = 0.0;
    double rssi_var_norm = 0.0;      // variance / mean^2
    double rssi_periodicity = 0.0;   // best comb-averaged autocorrelation over candidate periods
    int rssi_period_lag = 0;
    double phase_dev_var = 0.0;      // variance of the deviation from the nearest of +-pi/4
    double phase_spread = 0.0;       // fraction of shifts whose bin lies beyond +-pi/2
    std::array<double, kPhaseBins> phase_hist{};

    bool operator==(const FeatureVector&) const = default;
};

/// Circular histogram bin: bin b is centered on -pi + b * 2pi/32, so the
/// ideal +-pi/4 shifts sit at bin centers (12 and 20) rather than on edges.
inline std::size_t phase_bin(double angle) noexcept
{
    const double width = 2.0 * kPi / double(kPhaseBins);
    const double u = (angle + kPi) / width + 0.5;
    auto b = std::ptrdiff_t(std::floor(u));
    b %= std::ptrdiff_t(kPhaseBins);
    if (b < 0)
        b += std::ptrdiff_t(kPhaseBins);
    return std::size_t(b);
}

/// Signed deviation of a phase shift from the nearer ideal value +-pi/4.
inline double phase_deviation(double shift) noexcept
{
    return shift >= 0.0 ? shift - kPi / 4.0 : shift + kPi / 4.0;
}

/// Features over the listed symbol windows of a 4 MHz waveform whose frame
/// starts at `offset`. RSSI uses the 64 samples of each window; phase
/// shifts use the 64 transitions that begin inside each window.
inline FeatureVector features_over_windows(const IqWaveform& w, std::size_t offset,
                                           std::span<const std::size_t> symbols)
{
    require(!symbols.empty(), "extract_features: empty symbol range");
    std::vector<double> rssi;
    std::vector<double> shifts;
    rssi.reserve(symbols.size() * kSamplesPerSymbol);
    shifts.reserve(symbols.size() * kSamplesPerSymbol);
    for (std::size_t k : symbols) {
        const std::size_t base = offset + k * kSamplesPerSymbol;
        require(base + kSamplesPerSymbol <= w.size(), "extract_features: symbol window out of range");
        for (std::size_t n = 0; n < kSamplesPerSymbol; ++n) {
            const auto& s = w.samples[base + n];
            rssi.push_back(std::norm(s));
            if (base + n + 1 < w.size()) {
                double a = std::arg(w.samples[base + n + 1] * std::conj(s));
                shifts.push_back(a <= -kPi ? kPi : a);
            }
        }
    }

    FeatureVector f;
    double mean = 0.0;
    for (double v : rssi)
        mean += v;
    mean /= double(rssi.size());
    double var = 0.0;
    for (double v : rssi)
        var += (v - mean) * (v - mean);
    var /= double(rssi.size());
    f.rssi_mean = mean;
    f.rssi_var_norm = mean > 0.0 ? var / (mean * mean) : 0.0;

    // Periodicity of period P: mean autocorrelation over the lags P, 2P, ...
    // Averaging over the comb suppresses the victim cross term, which is
    // uncorrelated with the interferer's envelope period.
    const std::size_t max_lag = std::min(kMaxPeriodLag, rssi.size() / 2);
    if (max_lag >= kMinPeriodLag * kMinPeriodRepeats) {
        const auto ac = autocorrelation(rssi, max_lag);
        if (!ac.zero_variance) {
            f.rssi_periodicity = -1.0;
            for (std::size_t p = kMinPeriodLag; p * kMinPeriodRepeats <= max_lag; ++p) {
                double acc = 0.0;
                std::size_t count = 0;
                for (std::size_t lag = p; lag <= max_lag; lag += p, ++count)
                    acc += ac.values[lag - 1];
                const double comb = acc / double(count);
                if (comb > f.rssi_periodicity) {
                    f.rssi_periodicity = comb;
                    f.rssi_period_lag = int(p);
                }
            }
        }
    }

    if (!shifts.empty()) {
        double dmean = 0.0;
        for (double s : shifts)
            dmean += phase_deviation(s);
        dmean /= double(shifts.size());
        double dvar = 0.0;
        for (double s : shifts) {
            const double d = phase_deviation(s) - dmean;
            dvar += d * d;
        }
        f.phase_dev_var = dvar / double(shifts.size());
        for (double s : shifts)
            f.phase_hist[phase_bin(s)] += 1.0;
        for (auto& v : f.phase_hist)
            v /= double(shifts.size());
        for (std::size_t b = 0; b < kPhaseBins; ++b)
            if (b < kPhaseBins / 4 || b > 3 * kPhaseBins / 4)
                f.phase_spread += f.phase_hist[b];
    }
    return f;
}

struct SymbolRange
{
    std::size_t first = 0;
    std::size_t last = 0; // exclusive
};

/// Features over a contiguous symbol range of a received frame.
inline FeatureVector extract_features(const ReceivedBaseband& rx, SymbolRange range)
{
    require(range.last > range.first, "extract_features: empty symbol range");
    const std::size_t offset = align_preamble(rx.waveform);
    std::vector<std::size_t> idx;
    for (std::size_t k = range.first; k < range.last; ++k)
        idx.push_back(k);
    return features_over_windows(rx.waveform, offset, idx);
}

/// Total-variation distance between two phase histograms.
inline double tv_distance(const std::array<double, kPhaseBins>& a, const std::array<double, kPhaseBins>& b) noexcept
{
    double acc = 0.0;
    for (std::size_t i = 0; i < kPhaseBins; ++i)
        acc += std::abs(a[i] - b[i]);
    return 0.5 * acc;
}

inline Json feature_to_json(const FeatureVector& f)
{
    Json j;
    j["rssi_mean"] = f.rssi_mean;
    j["rssi_var_norm"] = f.rssi_var_norm;
    j["rssi_periodicity"] = f.rssi_periodicity;
    j["rssi_period_lag"] = f.rssi_period_lag;
    j["phase_dev_var"] = f.phase_dev_var;
    j["phase_spread"] = f.phase_spread;
    j["phase_hist"] = f.phase_hist;
    return j;
}

inline FeatureVector feature_from_json(const Json& j, const std::string& context)
{
    FeatureVector f;
    f.rssi_mean = json_field<double>(j, "rssi_mean", context);
    f.rssi_var_norm = json_field<double>(j, "rssi_var_norm", context);
    f.rssi_periodicity = json_field<double>(j, "rssi_periodicity", context);
    f.rssi_period_lag = json_field<int>(j, "rssi_period_lag", context);
    f.phase_dev_var = json_field<double>(j, "phase_dev_var", context);
    f.phase_spread = json_field<double>(j, "phase_spread", context);
    const auto hist = json_field<std::vector<double>>(j, "phase_hist", context);
    if (hist.size() != kPhaseBins)
        fail(ErrorKind::Schema, "field '" + context + ".phase_hist' must have 32 entries");
    std::copy(hist.begin(), hist.end(), f.phase_hist.begin());
    return f;
}

} // namespace ctilab
