#pragma once

// Baseband generators for the interference sources: 802.11b DSSS,
// 802.11g OFDM, Bluetooth GFSK and a second 802.15.4 transmitter.
// All output is at kAirRateHz, centered at 0 Hz, with unit mean power.

#include <array>
#include <cmath>
#include <string>
#include <string_view>

#include "signal_core.hpp"
#include "zigbee_phy.hpp"

namespace ctilab {

enum class InterfererKind { None, Wifi11b, Wifi11g, Bluetooth, Zigbee };

/// The four classes the differentiation model distinguishes, in tie-break order.
inline constexpr std::array<InterfererKind, 4> kInterfererClasses = {
    InterfererKind::Wifi11b, InterfererKind::Wifi11g, InterfererKind::Bluetooth, InterfererKind::Zigbee};

inline std::string_view to_string(InterfererKind k) noexcept
{
    switch (k) {
    case InterfererKind::None: return "none";
    case InterfererKind::Wifi11b: return "wifi11b";
    case InterfererKind::Wifi11g: return "wifi11g";
    case InterfererKind::Bluetooth: return "bluetooth";
    case InterfererKind::Zigbee: return "zigbee";
    }
    return "none";
}

inline InterfererKind interferer_kind_from_string(std::string_view s)
{
    for (auto k : {InterfererKind::None, InterfererKind::Wifi11b, InterfererKind::Wifi11g,
                   InterfererKind::Bluetooth, InterfererKind::Zigbee})
        if (s == to_string(k))
            return k;
    fail(ErrorKind::InvalidArgument,
         "unknown interferer kind '" + std::string(s) + "' (expected none|wifi11b|wifi11g|bluetooth|zigbee)");
}

inline int class_index(InterfererKind k)
{
    for (std::size_t i = 0; i < kInterfererClasses.size(); ++i)
        if (kInterfererClasses[i] == k)
            return int(i);
    return -1;
}

struct InterfererSpec
{
    InterfererKind kind = InterfererKind::None;
    double duration_s = 1e-3;
    std::uint64_t payload_seed = 0;
    double center_offset_hz = 0.0;  // interferer center minus victim center
    bool dqpsk = false;              // 802.11b: 2 Mbit/s DQPSK instead of 1 Mbit/s DBPSK
};

namespace detail {

inline std::size_t air_samples(const InterfererSpec& spec)
{
    require(std::isfinite(spec.duration_s) && spec.duration_s > 0.0, "interferer duration must be positive");
    return std::size_t(std::llround(spec.duration_s * kAirRateHz));
}

inline void expect_kind(const InterfererSpec& spec, InterfererKind k)
{
    if (spec.kind != k)
        fail(ErrorKind::InvalidArgument, "generator for " + std::string(to_string(k)) + " called with kind " +
                                             std::string(to_string(spec.kind)));
}

inline void normalize_power(IqWaveform& w)
{
    const double p = mean_power(w);
    if (p > 0.0)
        for (auto& v : w.samples)
            v /= std::sqrt(p);
}

} // namespace detail

// ---------------------------------------------------------------------------
// 802.11b

inline constexpr std::array<int, 11> kBarker11 = {1, -1, 1, 1, -1, 1, 1, 1, -1, -1, -1};
inline constexpr std::size_t kWifi11bSamplesPerChip = 2; // 11 Mchip/s at 22 MHz

/// DBPSK (or DQPSK) symbols at 1 Msym/s, Barker-spread, rectangular chips.
/// PLCP preamble/header are not generated.
inline IqWaveform gen_wifi11b(const InterfererSpec& spec)
{
    detail::expect_kind(spec, InterfererKind::Wifi11b);
    const std::size_t n = detail::air_samples(spec);
    const std::size_t sps = kBarker11.size() * kWifi11bSamplesPerChip;
    Rng rng(spec.payload_seed);
    std::vector<IqSample> out(n);
    double phase = 0.0;
    for (std::size_t start = 0; start < n; start += sps) {
        if (spec.dqpsk) {
            // Gray-coded dibits: 00 -> 0, 01 -> pi/2, 11 -> pi, 10 -> 3pi/2
            static constexpr std::array<double, 4> turn = {0.0, kPi / 2, 3 * kPi / 2, kPi};
            phase += turn[rng.below(4)];
        } else {
            phase += rng.bit() ? kPi : 0.0;
        }
        phase = wrap_phase(phase);
        const IqSample sym(std::cos(phase), std::sin(phase));
        for (std::size_t j = 0; j < sps && start + j < n; ++j)
            out[start + j] = double(kBarker11[j / kWifi11bSamplesPerChip]) * sym;
    }
    return IqWaveform(std::move(out), kAirRateHz);
}

// ---------------------------------------------------------------------------
// 802.11g

inline constexpr std::size_t kOfdmFft = 64;
inline constexpr std::size_t kOfdmCp = 16;
inline constexpr double kOfdmRateHz = 20e6;
inline constexpr std::array<int, 4> kOfdmPilots = {-21, -7, 7, 21};

/// Logical subcarrier indices (-26..26 without DC and pilots) carrying data.
inline const std::vector<int>& ofdm_data_subcarriers()
{
    static const std::vector<int> idx = [] {
        std::vector<int> v;
        for (int k = -26; k <= 26; ++k) {
            if (k == 0 || std::find(kOfdmPilots.begin(), kOfdmPilots.end(), k) != kOfdmPilots.end())
                continue;
            v.push_back(k);
        }
        return v;
    }();
    return idx;
}

inline std::size_t ofdm_bin(int subcarrier) noexcept
{
    return std::size_t((subcarrier + int(kOfdmFft)) % int(kOfdmFft));
}

/// One OFDM symbol at 20 MHz: 16-sample cyclic prefix + 64-sample body.
inline std::vector<IqSample> ofdm_symbol_20mhz(Rng& rng)
{
    std::vector<IqSample> bins(kOfdmFft);
    const double a = 1.0 / std::sqrt(2.0);
    for (int k : ofdm_data_subcarriers())
        bins[ofdm_bin(k)] = IqSample(rng.bit() ? a : -a, rng.bit() ? a : -a);
    static constexpr std::array<double, 4> pilot_values = {1.0, 1.0, 1.0, -1.0};
    for (std::size_t p = 0; p < kOfdmPilots.size(); ++p)
        bins[ofdm_bin(kOfdmPilots[p])] = pilot_values[p];
    fft_inplace(bins, true);
    std::vector<IqSample> out(bins.end() - kOfdmCp, bins.end());
    out.insert(out.end(), bins.begin(), bins.end());
    return out;
}

inline IqWaveform gen_wifi11g(const InterfererSpec& spec)
{
    detail::expect_kind(spec, InterfererKind::Wifi11g);
    const std::size_t n = detail::air_samples(spec);
    const std::size_t sym_len = kOfdmFft + kOfdmCp;
    // A spare symbol covers the resampler's reach past the last output.
    const std::size_t n_sym = std::size_t(std::ceil(double(n) * kOfdmRateHz / kAirRateHz / double(sym_len))) + 1;
    Rng rng(spec.payload_seed);
    std::vector<IqSample> base;
    base.reserve(n_sym * sym_len);
    for (std::size_t s = 0; s < n_sym; ++s) {
        const auto sym = ofdm_symbol_20mhz(rng);
        base.insert(base.end(), sym.begin(), sym.end());
    }
    auto out = resample_rational(IqWaveform(std::move(base), kOfdmRateHz), 11, 10);
    out.samples.resize(n);
    detail::normalize_power(out);
    return out;
}

// ---------------------------------------------------------------------------
// Bluetooth basic rate

inline constexpr double kBluetoothSymbolRateHz = 1e6;
inline constexpr double kBluetoothBt = 0.5;
inline constexpr double kBluetoothModIndex = 0.32;

/// GFSK, 1 Msym/s, BT = 0.5, h = 0.32. Single channel, no hopping.
inline IqWaveform gen_bluetooth(const InterfererSpec& spec)
{
    detail::expect_kind(spec, InterfererKind::Bluetooth);
    const std::size_t n = detail::air_samples(spec);
    const auto sps = std::size_t(kAirRateHz / kBluetoothSymbolRateHz);
    constexpr std::size_t guard = 2; // symbols of filter run-in on each side
    const std::size_t n_sym = (n + sps - 1) / sps + 2 * guard;

    // Gaussian frequency-shaping kernel, +-2 symbols, unit sum.
    const double sigma = std::sqrt(std::log(2.0)) / (2.0 * kPi * kBluetoothBt) * double(sps);
    const std::ptrdiff_t half = std::ptrdiff_t(2 * sps);
    std::vector<double> g(std::size_t(2 * half + 1));
    double gsum = 0.0;
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
        g[std::size_t(k + half)] = std::exp(-0.5 * double(k * k) / (sigma * sigma));
        gsum += g[std::size_t(k + half)];
    }
    for (auto& v : g)
        v /= gsum;

    Rng rng(spec.payload_seed);
    std::vector<double> nrz(n_sym * sps);
    for (std::size_t s = 0; s < n_sym; ++s) {
        const double v = rng.bit() ? 1.0 : -1.0;
        std::fill_n(nrz.begin() + std::ptrdiff_t(s * sps), sps, v);
    }
    std::vector<IqSample> out(n);
    double phase = 0.0;
    const std::ptrdiff_t total = std::ptrdiff_t(nrz.size());
    for (std::size_t m = 0; m < n; ++m) {
        const std::ptrdiff_t c = std::ptrdiff_t(m + guard * sps);
        double f = 0.0;
        for (std::ptrdiff_t k = -half; k <= half; ++k) {
            const std::ptrdiff_t idx = c - k;
            if (idx >= 0 && idx < total)
                f += g[std::size_t(k + half)] * nrz[std::size_t(idx)];
        }
        out[m] = IqSample(std::cos(phase), std::sin(phase));
        phase = wrap_phase(phase + kPi * kBluetoothModIndex * f / double(sps));
    }
    return IqWaveform(std::move(out), kAirRateHz);
}

// ---------------------------------------------------------------------------
// 802.15.4 interferer

/// Back-to-back frames with random 125-byte payloads, synthesized at the air rate.
inline IqWaveform gen_zigbee_interferer(const InterfererSpec& spec)
{
    detail::expect_kind(spec, InterfererKind::Zigbee);
    const std::size_t n = detail::air_samples(spec);
    const auto spc = std::size_t(kAirRateHz / kChipRateHz);
    const std::size_t chips_needed = n / spc + 1;
    Rng rng(spec.payload_seed);
    std::vector<std::uint8_t> chips;
    while (chips.size() < chips_needed) {
        std::vector<std::uint8_t> payload(kMaxPayloadBytes);
        for (auto& b : payload)
            b = std::uint8_t(rng.below(256));
        const auto c = build_frame(payload).chips();
        chips.insert(chips.end(), c.begin(), c.end());
    }
    chips.resize(chips_needed);
    auto out = synthesize_oqpsk(chips, kAirRateHz);
    out.samples.resize(n);
    return out;
}

/// Dispatch on kind; None yields an empty waveform. No frequency shift.
inline IqWaveform generate_interferer(const InterfererSpec& spec)
{
    switch (spec.kind) {
    case InterfererKind::None: return IqWaveform({}, kAirRateHz);
    case InterfererKind::Wifi11b: return gen_wifi11b(spec);
    case InterfererKind::Wifi11g: return gen_wifi11g(spec);
    case InterfererKind::Bluetooth: return gen_bluetooth(spec);
    case InterfererKind::Zigbee: return gen_zigbee_interferer(spec);
    }
    return IqWaveform({}, kAirRateHz);
}

/// generate_interferer followed by the center-frequency offset.
inline IqWaveform render_interferer(const InterfererSpec& spec)
{
    auto w = generate_interferer(spec);
    if (spec.center_offset_hz != 0.0 && !w.empty())
        w = frequency_shift(w, spec.center_offset_hz);
    return w;
}

} // namespace ctilab
