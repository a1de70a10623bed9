#pragma once

// Randomized scene recipes shared by calibration and experiments. A recipe
// plus (kind, SIR, SNR, seed) determines one CollisionScene exactly.

#include <cmath>
#include <vector>

#include "channel.hpp"
#include "json_util.hpp"

namespace ctilab {

struct SceneRecipe
{
    std::size_t payload_bytes = 40;
    std::size_t overlap_first = 24;   // first victim symbol reached by the interferer
    std::size_t overlap_symbols = 12; // 0 = to the end of the frame
    double timing_offset_chips = 0.0;
    double sampling_drift_ppm = 0.0;
    // WiFi channels sit 2 or 3 MHz off the nearest 802.15.4 channel.
    std::vector<double> wifi_offsets_hz = {2e6, -3e6};
    double bluetooth_offset_max_hz = 300e3;
    double zigbee_offset_max_hz = 100e3;
    bool random_dqpsk = true;
};

inline CollisionScene make_scene(const SceneRecipe& r, InterfererKind kind, double sir_db, double snr_db,
                                 std::uint64_t seed)
{
    require(r.payload_bytes <= kMaxPayloadBytes, "recipe: payload_bytes exceeds 125");
    Rng rng(derive_seed(seed, 10));
    std::vector<std::uint8_t> payload(r.payload_bytes);
    for (auto& b : payload)
        b = std::uint8_t(rng.below(256));
    const auto frame = build_frame(payload);
    require(r.overlap_first < frame.symbol_count(), "recipe: overlap_first beyond the frame");
    auto s = tail_collision_scene(frame, kind, r.overlap_first, r.overlap_symbols, sir_db, snr_db, seed);
    s.timing_offset_chips = r.timing_offset_chips;
    s.sampling_drift_ppm = r.sampling_drift_ppm;
    switch (kind) {
    case InterfererKind::Wifi11b:
    case InterfererKind::Wifi11g:
        if (!r.wifi_offsets_hz.empty())
            s.interferer.center_offset_hz = r.wifi_offsets_hz[rng.below(r.wifi_offsets_hz.size())];
        break;
    case InterfererKind::Bluetooth:
        s.interferer.center_offset_hz = rng.uniform(-r.bluetooth_offset_max_hz, r.bluetooth_offset_max_hz);
        break;
    case InterfererKind::Zigbee:
        s.interferer.center_offset_hz = rng.uniform(-r.zigbee_offset_max_hz, r.zigbee_offset_max_hz);
        break;
    case InterfererKind::None: break;
    }
    s.interferer.dqpsk = kind == InterfererKind::Wifi11b && r.random_dqpsk && rng.bit();
    return s;
}

inline Json recipe_to_json(const SceneRecipe& r)
{
    Json j;
    j["payload_bytes"] = r.payload_bytes;
    j["overlap_first"] = r.overlap_first;
    j["overlap_symbols"] = r.overlap_symbols;
    j["timing_offset_chips"] = r.timing_offset_chips;
    j["sampling_drift_ppm"] = r.sampling_drift_ppm;
    j["wifi_offsets_hz"] = r.wifi_offsets_hz;
    j["bluetooth_offset_max_hz"] = r.bluetooth_offset_max_hz;
    j["zigbee_offset_max_hz"] = r.zigbee_offset_max_hz;
    j["random_dqpsk"] = r.random_dqpsk;
    return j;
}

/// Missing fields keep their defaults; present fields are type-checked.
inline SceneRecipe recipe_from_json(const Json& j, const std::string& context)
{
    if (!j.is_object())
        fail(ErrorKind::Schema, "field '" + context + "' must be an object");
    SceneRecipe r;
    auto opt = [&](const char* key, auto& dst) {
        if (j.contains(key))
            dst = json_field<std::decay_t<decltype(dst)>>(j, key, context);
    };
    opt("payload_bytes", r.payload_bytes);
    opt("overlap_first", r.overlap_first);
    opt("overlap_symbols", r.overlap_symbols);
    opt("timing_offset_chips", r.timing_offset_chips);
    opt("sampling_drift_ppm", r.sampling_drift_ppm);
    opt("wifi_offsets_hz", r.wifi_offsets_hz);
    opt("bluetooth_offset_max_hz", r.bluetooth_offset_max_hz);
    opt("zigbee_offset_max_hz", r.zigbee_offset_max_hz);
    opt("random_dqpsk", r.random_dqpsk);
    if (r.payload_bytes > kMaxPayloadBytes)
        fail(ErrorKind::Schema, "field '" + context + ".payload_bytes' exceeds 125");
    if (std::abs(r.timing_offset_chips) > 0.5)
        fail(ErrorKind::Schema, "field '" + context + ".timing_offset_chips' must lie in [-0.5, 0.5]");
    return r;
}

} // namespace ctilab
