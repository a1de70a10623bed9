#pragma once

// iq32: little-endian float32 samples interleaved I,Q,I,Q,... with a JSON
// sidecar at "<path>.json" holding {schema_version, sample_rate_hz, description}.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "signal_core.hpp"

namespace ctilab {

inline constexpr int kIq32SchemaVersion = 1;

struct Iq32File
{
    IqWaveform waveform;
    std::string description;
};

inline std::filesystem::path iq32_sidecar_path(const std::filesystem::path& path)
{
    return std::filesystem::path(path.string() + ".json");
}

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v)
{
    if constexpr (std::endian::native == std::endian::big)
        v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    return v;
}

} // namespace detail

inline void write_iq32(const std::filesystem::path& path, const IqWaveform& w, const std::string& description)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::Io, "cannot open for writing: " + path.string());
    std::vector<char> buf(w.size() * 8);
    for (std::size_t n = 0; n < w.size(); ++n) {
        const float parts[2] = {float(w.samples[n].real()), float(w.samples[n].imag())};
        for (int c = 0; c < 2; ++c) {
            std::uint32_t bits = std::bit_cast<std::uint32_t>(parts[c]);
            bits = detail::to_little_endian(bits);
            std::memcpy(buf.data() + n * 8 + std::size_t(c) * 4, &bits, 4);
        }
    }
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out)
        fail(ErrorKind::Io, "write failed: " + path.string());

    nlohmann::ordered_json side;
    side["schema_version"] = kIq32SchemaVersion;
    side["sample_rate_hz"] = w.sample_rate_hz;
    side["description"] = description;
    const auto side_path = iq32_sidecar_path(path);
    std::ofstream js(side_path, std::ios::trunc);
    if (!js)
        fail(ErrorKind::Io, "cannot open for writing: " + side_path.string());
    js << side.dump(2) << '\n';
}

inline Iq32File read_iq32(const std::filesystem::path& path)
{
    const auto side_path = iq32_sidecar_path(path);
    std::ifstream js(side_path);
    if (!js)
        fail(ErrorKind::Io, "missing sidecar: " + side_path.string());
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(js);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Schema, side_path.string() + ": " + e.what());
    }
    if (!side.contains("sample_rate_hz") || !side["sample_rate_hz"].is_number())
        fail(ErrorKind::Schema, side_path.string() + ": field 'sample_rate_hz' missing or not a number");

    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::Io, "cannot open for reading: " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() % 8 != 0)
        fail(ErrorKind::Schema, path.string() + ": size is not a multiple of 8 bytes");
    std::vector<IqSample> s(buf.size() / 8);
    for (std::size_t n = 0; n < s.size(); ++n) {
        float parts[2];
        for (int c = 0; c < 2; ++c) {
            std::uint32_t bits;
            std::memcpy(&bits, buf.data() + n * 8 + std::size_t(c) * 4, 4);
            parts[c] = std::bit_cast<float>(detail::to_little_endian(bits));
        }
        s[n] = {parts[0], parts[1]};
    }
    Iq32File f;
    f.waveform = IqWaveform(std::move(s), side["sample_rate_hz"].get<double>());
    f.description = side.value("description", std::string{});
    return f;
}

} // namespace ctilab
