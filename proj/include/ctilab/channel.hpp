#pragma once

// Collision scenes: superpose victim, interferer and noise on the air,
// run the victim receiver front end (2 MHz low-pass, sampling with
// timing error and drift, 4 MHz output) and label every symbol with the
// ground truth implied by the scene geometry.

#include <cmath>
#include <string>
#include <vector>

#include "interferers.hpp"
#include "json_util.hpp"
#include "signal_core.hpp"
#include "zigbee_phy.hpp"

namespace ctilab {

inline constexpr double kVictimCutoffHz = 2e6;
inline constexpr int kInterpHalfWidth = 8;
inline constexpr int kSceneSchemaVersion = 1;

struct CollisionScene
{
    ZigbeeFrame victim_frame;
    IqSample h_z{1.0, 0.0};
    InterfererSpec interferer;
    IqSample h_x{0.0, 0.0};
    double interferer_delay_s = 0.0;
    NoiseSpec noise;
    double timing_offset_chips = 0.0;   // receiver sampling-phase error, [-0.5, 0.5]
    double sampling_drift_ppm = 0.0;    // receiver clock skew

    /// 20*log10(|h_z|/|h_x|); infinite when there is no interferer.
    double sir_db() const
    {
        if (interferer.kind == InterfererKind::None || std::abs(h_x) == 0.0)
            return INFINITY;
        return 20.0 * std::log10(std::abs(h_z) / std::abs(h_x));
    }

    bool has_interferer() const { return interferer.kind != InterfererKind::None && std::abs(h_x) > 0.0; }
    bool has_sync_error() const { return timing_offset_chips != 0.0 || sampling_drift_ppm != 0.0; }
};

enum class TruthLabel { Clean, SyncErrorOnly, CtiOverlap };

inline std::string_view to_string(TruthLabel t) noexcept
{
    switch (t) {
    case TruthLabel::Clean: return "clean";
    case TruthLabel::SyncErrorOnly: return "sync_error_only";
    case TruthLabel::CtiOverlap: return "cti_overlap";
    }
    return "clean";
}

struct SymbolTruth
{
    TruthLabel label = TruthLabel::Clean;
    InterfererKind kind = InterfererKind::None;  // set for CtiOverlap
    double overlap_fraction = 0.0;               // share of the window inside the raw burst
};

struct ReceivedBaseband
{
    IqWaveform waveform;
    std::vector<SymbolTruth> truth;
};

// ---------------------------------------------------------------------------
// Level helpers

inline const std::vector<double>& victim_lowpass()
{
    static const auto h = design_lowpass(kVictimCutoffHz, kAirRateHz);
    return h;
}

/// Pre-filter per-component noise variance giving `snr_db` in-band for a
/// unit-power victim after the receive filter.
inline double noise_variance_for_snr(double snr_db)
{
    return 1.0 / (2.0 * noise_gain(victim_lowpass()) * std::pow(10.0, snr_db / 10.0));
}

/// Interferer gain magnitude for a given in-band SIR against |h_z| = 1.
inline double gain_for_sir(double sir_db) { return std::pow(10.0, -sir_db / 20.0); }

/// Mean power of a waveform after the victim's receive filter, measured
/// away from the filter's edge transients when the waveform is long enough.
inline double inband_power(const IqWaveform& air)
{
    const auto y = fir_filter_aligned(air.samples, victim_lowpass());
    const std::size_t edge = victim_lowpass().size();
    if (y.size() > 4 * edge)
        return mean_power(std::span<const IqSample>(y).subspan(edge, y.size() - 2 * edge));
    return mean_power(y);
}

inline void validate_scene(const CollisionScene& s)
{
    require(std::abs(s.timing_offset_chips) <= 0.5, "scene: timing_offset_chips must lie in [-0.5, 0.5]");
    require(std::isfinite(s.sampling_drift_ppm) && std::abs(s.sampling_drift_ppm) < 1e5,
            "scene: sampling_drift_ppm out of range");
    require(s.interferer_delay_s >= 0.0, "scene: interferer_delay_s must be nonnegative");
    require(s.noise.variance_per_component >= 0.0, "scene: noise variance must be nonnegative");
    require(verify_fcs(s.victim_frame), "scene: victim frame FCS does not match its payload");
    require(s.victim_frame.payload.size() <= kMaxPayloadBytes, "scene: victim payload too long");
}

// ---------------------------------------------------------------------------
// Mixer

/// Receiver sample m is taken at air-rate position
///   (m / 4 MHz * (1 + drift) + timing_offset * Tc) * 22 MHz.
inline double receiver_sample_position(const CollisionScene& s, double m)
{
    const double t = m / kReceiverRateHz * (1.0 + s.sampling_drift_ppm * 1e-6) +
                     s.timing_offset_chips / kChipRateHz;
    return t * kAirRateHz;
}

inline ReceivedBaseband mix(const CollisionScene& scene)
{
    validate_scene(scene);
    const auto chips = scene.victim_frame.chips();
    IqWaveform air = synthesize_oqpsk(chips, kAirRateHz);
    for (auto& v : air.samples)
        v *= scene.h_z;
    const std::size_t n_air = air.size();

    std::ptrdiff_t burst_start = 0, burst_end = 0; // air-rate support [start, end)
    if (scene.has_interferer()) {
        const IqWaveform x = render_interferer(scene.interferer);
        const double p_in = inband_power(x);
        if (!(p_in > 1e-6))
            fail(ErrorKind::InvalidArgument, "scene: interferer has no energy inside the victim's receive band");
        const IqSample g = scene.h_x / std::sqrt(p_in);
        burst_start = std::ptrdiff_t(std::llround(scene.interferer_delay_s * kAirRateHz));
        burst_end = burst_start + std::ptrdiff_t(x.size());
        for (std::size_t n = 0; n < x.size(); ++n) {
            const std::size_t idx = std::size_t(burst_start) + n;
            if (idx >= n_air)
                break;
            air.samples[idx] += g * x.samples[n];
        }
    }
    air = add_awgn(air, scene.noise);
    const auto filtered = fir_filter_aligned(air.samples, victim_lowpass());

    const std::size_t n_rx = n_air / (std::size_t(kAirRateHz / kChipRateHz)) * kSamplesPerChip;
    std::vector<double> pos(n_rx);
    for (std::size_t m = 0; m < n_rx; ++m)
        pos[m] = receiver_sample_position(scene, double(m));

    ReceivedBaseband rx;
    rx.waveform = IqWaveform(interpolate_at(filtered, pos, kInterpHalfWidth), kReceiverRateHz);

    // Ground truth from geometry. The interferer's footprint at the
    // receiver is its burst widened by the filter and interpolator reach.
    const std::size_t n_sym = scene.victim_frame.symbol_count();
    const double reach = double(victim_lowpass().size() / 2 + kInterpHalfWidth);
    rx.truth.resize(n_sym);
    for (std::size_t k = 0; k < n_sym; ++k) {
        auto& t = rx.truth[k];
        const double lo = receiver_sample_position(scene, double(k * kSamplesPerSymbol));
        const double hi = receiver_sample_position(scene, double((k + 1) * kSamplesPerSymbol));
        const bool touched = scene.has_interferer() && burst_end > burst_start &&
                             hi - 1.0 + reach >= double(burst_start) && lo - reach < double(burst_end);
        if (scene.has_interferer()) {
            const double a = std::max(lo, double(burst_start));
            const double b = std::min(hi, double(std::min<std::ptrdiff_t>(burst_end, std::ptrdiff_t(n_air))));
            t.overlap_fraction = std::clamp((b - a) / (hi - lo), 0.0, 1.0);
        }
        if (touched) {
            t.label = TruthLabel::CtiOverlap;
            t.kind = scene.interferer.kind;
        } else if (scene.has_sync_error()) {
            t.label = TruthLabel::SyncErrorOnly;
        }
    }
    return rx;
}

// ---------------------------------------------------------------------------
// Scene construction helpers

/// Canonical partial-overlap scene: the interferer starts at victim symbol
/// `first_symbol` and lasts `n_symbols` symbols (0 = to the frame end).
/// Gains are set from in-band SIR/SNR with |h_z| = 1.
inline CollisionScene tail_collision_scene(const ZigbeeFrame& frame, InterfererKind kind, std::size_t first_symbol,
                                           std::size_t n_symbols, double sir_db, double snr_db, std::uint64_t seed)
{
    CollisionScene s;
    s.victim_frame = frame;
    const std::size_t n_sym = frame.symbol_count();
    require(first_symbol < n_sym, "tail_collision_scene: first symbol beyond the frame");
    if (n_symbols == 0 || first_symbol + n_symbols > n_sym)
        n_symbols = n_sym - first_symbol;
    const double t_sym = double(kSamplesPerSymbol) / kReceiverRateHz;
    s.interferer.kind = kind;
    s.interferer.duration_s = double(n_symbols) * t_sym;
    s.interferer.payload_seed = derive_seed(seed, 1);
    s.interferer_delay_s = double(first_symbol) * t_sym;
    s.h_x = kind == InterfererKind::None ? IqSample{} : IqSample(gain_for_sir(sir_db), 0.0);
    s.noise.variance_per_component = std::isfinite(snr_db) ? noise_variance_for_snr(snr_db) : 0.0;
    s.noise.seed = derive_seed(seed, 2);
    return s;
}

struct ReseedRule
{
    std::uint64_t seed = 0;
    double delay_jitter_s = 0.0;     // uniform in [-jitter, +jitter], clipped at 0
    bool fresh_interferer = true;
    bool fresh_noise = true;
};

/// k copies of the scene: copy 0 is the scene itself; later copies keep the
/// victim frame, gains and receiver impairments but draw new interferer
/// payloads, delays and noise as the rule dictates.
inline std::vector<CollisionScene> retransmission_scenes(const CollisionScene& scene, std::size_t k,
                                                         const ReseedRule& rule)
{
    require(k >= 1, "make_retransmissions: k must be at least 1");
    std::vector<CollisionScene> out(k, scene);
    for (std::size_t i = 1; i < k; ++i) {
        const std::uint64_t s = derive_seed(rule.seed, i);
        Rng rng(s);
        auto& c = out[i];
        if (rule.fresh_interferer)
            c.interferer.payload_seed = derive_seed(s, 1);
        if (rule.fresh_noise)
            c.noise.seed = derive_seed(s, 2);
        if (rule.delay_jitter_s > 0.0)
            c.interferer_delay_s = std::max(0.0, scene.interferer_delay_s +
                                                     rng.uniform(-rule.delay_jitter_s, rule.delay_jitter_s));
    }
    return out;
}

inline std::vector<ReceivedBaseband> make_retransmissions(const CollisionScene& scene, std::size_t k,
                                                          const ReseedRule& rule)
{
    std::vector<ReceivedBaseband> out;
    for (const auto& s : retransmission_scenes(scene, k, rule))
        out.push_back(mix(s));
    return out;
}

// ---------------------------------------------------------------------------
// JSON

inline Json scene_to_json(const CollisionScene& s)
{
    Json j;
    j["schema_version"] = kSceneSchemaVersion;
    j["victim"] = {{"payload_hex", to_hex(s.victim_frame.payload)}};
    j["h_z"] = complex_to_json(s.h_z);
    j["interferer"] = {{"kind", std::string(to_string(s.interferer.kind))},
                       {"duration_s", s.interferer.duration_s},
                       {"payload_seed", s.interferer.payload_seed},
                       {"center_offset_hz", s.interferer.center_offset_hz},
                       {"dqpsk", s.interferer.dqpsk}};
    j["h_x"] = complex_to_json(s.h_x);
    j["interferer_delay_s"] = s.interferer_delay_s;
    j["noise"] = {{"variance_per_component", s.noise.variance_per_component}, {"seed", s.noise.seed}};
    j["timing_offset_chips"] = s.timing_offset_chips;
    j["sampling_drift_ppm"] = s.sampling_drift_ppm;
    return j;
}

inline CollisionScene scene_from_json(const Json& j)
{
    if (!j.is_object())
        fail(ErrorKind::Schema, "scene must be a JSON object");
    CollisionScene s;
    const auto& victim = json_object(j, "victim", "");
    std::vector<std::uint8_t> payload;
    try {
        payload = from_hex(json_field<std::string>(victim, "payload_hex", "victim"));
    } catch (const Error& e) {
        fail(ErrorKind::Schema, std::string("field 'victim.payload_hex': ") + e.what());
    }
    if (payload.size() > kMaxPayloadBytes)
        fail(ErrorKind::Schema, "field 'victim.payload_hex': payload exceeds 125 bytes");
    s.victim_frame = build_frame(payload);
    s.h_z = complex_field(j, "h_z", "");
    const auto& itf = json_object(j, "interferer", "");
    try {
        s.interferer.kind = interferer_kind_from_string(json_field<std::string>(itf, "kind", "interferer"));
    } catch (const Error& e) {
        fail(ErrorKind::Schema, std::string("field 'interferer.kind': ") + e.what());
    }
    s.interferer.duration_s = json_field<double>(itf, "duration_s", "interferer");
    s.interferer.payload_seed = json_field<std::uint64_t>(itf, "payload_seed", "interferer");
    s.interferer.center_offset_hz = json_field<double>(itf, "center_offset_hz", "interferer");
    s.interferer.dqpsk = itf.contains("dqpsk") ? json_field<bool>(itf, "dqpsk", "interferer") : false;
    s.h_x = complex_field(j, "h_x", "");
    s.interferer_delay_s = json_field<double>(j, "interferer_delay_s", "");
    const auto& noise = json_object(j, "noise", "");
    s.noise.variance_per_component = json_field<double>(noise, "variance_per_component", "noise");
    s.noise.seed = json_field<std::uint64_t>(noise, "seed", "noise");
    s.timing_offset_chips = json_field<double>(j, "timing_offset_chips", "");
    s.sampling_drift_ppm = json_field<double>(j, "sampling_drift_ppm", "");
    if (s.interferer.kind != InterfererKind::None && !(s.interferer.duration_s > 0.0))
        fail(ErrorKind::Schema, "field 'interferer.duration_s' must be positive");
    if (std::abs(s.timing_offset_chips) > 0.5)
        fail(ErrorKind::Schema, "field 'timing_offset_chips' must lie in [-0.5, 0.5]");
    if (s.interferer_delay_s < 0.0)
        fail(ErrorKind::Schema, "field 'interferer_delay_s' must be nonnegative");
    if (s.noise.variance_per_component < 0.0)
        fail(ErrorKind::Schema, "field 'noise.variance_per_component' must be nonnegative");
    return s;
}

inline Json truth_to_json(const std::vector<SymbolTruth>& truth)
{
    Json arr = Json::array();
    for (std::size_t k = 0; k < truth.size(); ++k) {
        Json t;
        t["index"] = k;
        t["label"] = std::string(to_string(truth[k].label));
        t["kind"] = std::string(to_string(truth[k].kind));
        t["overlap_fraction"] = truth[k].overlap_fraction;
        arr.push_back(std::move(t));
    }
    return arr;
}

} // namespace ctilab
