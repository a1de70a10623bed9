#pragma once

// IEEE 802.15.4 2.4 GHz PHY: framing, DSSS spreading, half-sine OQPSK
// synthesis, non-coherent chip demodulation and nearest-PN symbol decoding.

#include <array>
#include <bit>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "signal_core.hpp"

namespace ctilab {

inline constexpr double kChipRateHz = 2e6;
inline constexpr std::size_t kChipsPerSymbol = 32;
inline constexpr std::size_t kSamplesPerChip = 2;                 // at kReceiverRateHz
inline constexpr std::size_t kSamplesPerSymbol = 64;              // at kReceiverRateHz
inline constexpr std::size_t kPreambleSymbols = 8;
inline constexpr std::size_t kHeaderSymbols = 12;                 // preamble + SFD + length
inline constexpr std::size_t kMaxPayloadBytes = 125;
inline constexpr std::uint8_t kSfd = 0xA7;

// ---------------------------------------------------------------------------
// Symbol-to-chip map

/// The sixteen 32-chip PN sequences, chip k of symbol s stored in bit k of
/// sequences[s]. Values are the 802.15.4 table verbatim (c0 first).
class PnTable
{
public:
    static const PnTable& standard()
    {
        static const PnTable table = [] {
            constexpr std::array<std::string_view, 16> rows = {
                "11011001110000110101001000101110", "11101101100111000011010100100010",
                "00101110110110011100001101010010", "00100010111011011001110000110101",
                "01010010001011101101100111000011", "00110101001000101110110110011100",
                "11000011010100100010111011011001", "10011100001101010010001011101101",
                "10001100100101100000011101111011", "10111000110010010110000001110111",
                "01111011100011001001011000000111", "01110111101110001100100101100000",
                "00000111011110111000110010010110", "01100000011101111011100011001001",
                "10010110000001110111101110001100", "11001001011000000111011110111000",
            };
            PnTable t;
            for (std::size_t s = 0; s < 16; ++s) {
                std::uint32_t v = 0;
                for (std::size_t k = 0; k < kChipsPerSymbol; ++k)
                    if (rows[s][k] == '1')
                        v |= 1u << k;
                t.m_seq[s] = v;
            }
            t.m_dmin = kChipsPerSymbol;
            for (std::size_t a = 0; a < 16; ++a)
                for (std::size_t b = a + 1; b < 16; ++b)
                    t.m_dmin = std::min<int>(t.m_dmin, std::popcount(t.m_seq[a] ^ t.m_seq[b]));
            // Decoding guarantees downstream assume at least 3-chip correction.
            if (t.m_dmin <= 6)
                fail(ErrorKind::InvalidArgument, "PN table minimum distance too small");
            return t;
        }();
        return table;
    }

    std::uint32_t sequence(std::size_t symbol) const { return m_seq.at(symbol); }
    int chip(std::size_t symbol, std::size_t k) const { return int((m_seq.at(symbol) >> k) & 1u); }
    int min_distance() const noexcept { return m_dmin; }
    const std::array<std::uint32_t, 16>& sequences() const noexcept { return m_seq; }

private:
    std::array<std::uint32_t, 16> m_seq{};
    int m_dmin = 0;
};

// ---------------------------------------------------------------------------
// Framing

/// CRC-16 with the reflected CCITT polynomial (0x8408), zero init, no final XOR.
inline std::uint16_t crc16_fcs(std::span<const std::uint8_t> data) noexcept
{
    std::uint16_t crc = 0;
    for (std::uint8_t byte : data) {
        crc ^= byte;
        for (int b = 0; b < 8; ++b)
            crc = (crc & 1u) ? std::uint16_t((crc >> 1) ^ 0x8408u) : std::uint16_t(crc >> 1);
    }
    return crc;
}

struct ZigbeeFrame
{
    std::vector<std::uint8_t> payload;
    std::uint16_t fcs = 0;

    std::uint8_t length_byte() const noexcept { return std::uint8_t(payload.size() + 2); }

    /// Whole PPDU: 4 preamble bytes, SFD, length, payload, FCS (low byte first).
    std::vector<std::uint8_t> bytes() const
    {
        std::vector<std::uint8_t> out = {0, 0, 0, 0, kSfd, length_byte()};
        out.insert(out.end(), payload.begin(), payload.end());
        out.push_back(std::uint8_t(fcs & 0xFF));
        out.push_back(std::uint8_t(fcs >> 8));
        return out;
    }

    /// Symbol (nibble) sequence, low nibble of each byte first.
    std::vector<std::uint8_t> symbols() const
    {
        std::vector<std::uint8_t> out;
        for (std::uint8_t b : bytes()) {
            out.push_back(b & 0x0F);
            out.push_back(b >> 4);
        }
        return out;
    }

    std::size_t symbol_count() const noexcept { return 2 * (8 + payload.size()); }

    std::vector<std::uint8_t> chips() const
    {
        const auto& table = PnTable::standard();
        std::vector<std::uint8_t> out;
        out.reserve(symbol_count() * kChipsPerSymbol);
        for (std::uint8_t s : symbols())
            for (std::size_t k = 0; k < kChipsPerSymbol; ++k)
                out.push_back(std::uint8_t(table.chip(s, k)));
        return out;
    }
};

inline ZigbeeFrame build_frame(std::span<const std::uint8_t> payload)
{
    require(payload.size() <= kMaxPayloadBytes,
            "build_frame: payload of " + std::to_string(payload.size()) + " bytes exceeds 125");
    ZigbeeFrame f;
    f.payload.assign(payload.begin(), payload.end());
    f.fcs = crc16_fcs(f.payload);
    return f;
}

inline bool verify_fcs(const ZigbeeFrame& f) noexcept { return crc16_fcs(f.payload) == f.fcs; }

inline std::string to_hex(std::span<const std::uint8_t> bytes)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (std::uint8_t b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0F]);
    }
    return out;
}

inline std::vector<std::uint8_t> from_hex(std::string_view hex)
{
    auto nibble = [&](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        fail(ErrorKind::InvalidArgument, "invalid hex digit '" + std::string(1, c) + "'");
    };
    require(hex.size() % 2 == 0, "hex string must have an even number of digits");
    std::vector<std::uint8_t> out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::uint8_t(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    return out;
}

// ---------------------------------------------------------------------------
// Modulation
//
// Chip-to-phase convention, shared by modulator and demodulator:
//   chip value c maps to amplitude a = 2c - 1; even chips ride on I, odd
//   chips on Q; every chip is a half-sine pulse of length 2*Tc starting at
//   k*Tc, so Q trails I by one chip period. Over chip interval k
//   ([k*Tc, (k+1)*Tc]) the carrier phase turns by +pi/2 (counter-clockwise)
//   or -pi/2, with direction
//       D_k = -a_{k-1} * a_k   for even k
//       D_k = +a_{k-1} * a_k   for odd k.
//   At 2 samples per chip this shows up as two consecutive phase shifts of
//   D_k * pi/4. The receiver recovers D_k and undoes the differential map.

/// Evaluate the half-sine OQPSK waveform at `sample_rate_hz`, which must be
/// an integer multiple of the chip rate. Length is (chips + 1) chip periods.
inline IqWaveform synthesize_oqpsk(std::span<const std::uint8_t> chips, double sample_rate_hz)
{
    const double ratio = sample_rate_hz / kChipRateHz;
    const auto spc = std::size_t(std::llround(ratio));
    require(spc >= 1 && std::abs(ratio - double(spc)) < 1e-9,
            "synthesize_oqpsk: sample rate must be an integer multiple of 2 MHz");
    const std::size_t n_chips = chips.size();
    const std::size_t n_samples = n_chips == 0 ? 0 : (n_chips + 1) * spc;
    std::vector<IqSample> out(n_samples);
    auto pulse = [&](std::size_t chip, std::size_t pos_in_pulse) {
        const double a = chips[chip] ? 1.0 : -1.0;
        return a * std::sin(kPi * double(pos_in_pulse) / double(2 * spc));
    };
    for (std::size_t n = 0; n < n_samples; ++n) {
        const std::size_t k = n / spc;
        const std::size_t r = n % spc;
        double i = 0.0, q = 0.0;
        if (k < n_chips)
            ((k & 1) ? q : i) += pulse(k, r);
        if (k >= 1 && k - 1 < n_chips)
            (((k - 1) & 1) ? q : i) += pulse(k - 1, r + spc);
        out[n] = {i, q};
    }
    return IqWaveform(std::move(out), sample_rate_hz);
}

/// Frame at the receiver rate: 64 samples per symbol plus a 2-sample tail.
inline IqWaveform modulate(const ZigbeeFrame& frame)
{
    const auto chips = frame.chips();
    return synthesize_oqpsk(chips, kReceiverRateHz);
}

// ---------------------------------------------------------------------------
// Demodulation and decoding

struct ChipDecision
{
    std::array<std::uint8_t, kChipsPerSymbol> chips{};
    std::array<double, kChipsPerSymbol> soft_quality{};

    std::uint32_t packed() const noexcept
    {
        std::uint32_t v = 0;
        for (std::size_t k = 0; k < kChipsPerSymbol; ++k)
            v |= std::uint32_t(chips[k] & 1u) << k;
        return v;
    }
};

struct SymbolDecode
{
    int symbol = 0;
    int hamming = 0;
    int runner_up_gap = 0;
};

inline SymbolDecode decode_symbol(std::uint32_t chips, const PnTable& table = PnTable::standard())
{
    SymbolDecode best{0, 33, 0};
    int second = 33;
    for (int s = 0; s < 16; ++s) {
        const int d = std::popcount(chips ^ table.sequence(std::size_t(s)));
        if (d < best.hamming) {
            second = best.hamming;
            best.symbol = s;
            best.hamming = d;
        } else if (d < second) {
            second = d;
        }
    }
    best.runner_up_gap = second - best.hamming;
    return best;
}

inline SymbolDecode decode_symbol(const ChipDecision& c, const PnTable& table = PnTable::standard())
{
    return decode_symbol(c.packed(), table);
}

/// Chip decisions for symbol window `symbol_index` of a 4 MHz waveform whose
/// frame starts at sample `offset`. The window needs samples
/// [offset + 64k, offset + 64k + 64].
///
/// Chip transitions are read from the sign of the phase turned over each
/// chip interval. The chip preceding the window is unknown to a
/// non-coherent receiver, so both polarities of the differential
/// reconstruction are formed and the one nearer the PN table is kept.
inline ChipDecision demodulate_chips(const IqWaveform& w, std::size_t symbol_index, std::size_t offset = 0)
{
    const std::size_t base = offset + symbol_index * kSamplesPerSymbol;
    if (base + kSamplesPerSymbol >= w.size())
        fail(ErrorKind::InvalidArgument, "demodulate_chips: symbol window " + std::to_string(symbol_index) +
                                             " out of range");
    const auto& s = w.samples;
    ChipDecision out;
    std::uint32_t x = 0;
    int prev = 1; // a_{-1} hypothesis
    for (std::size_t j = 0; j < kChipsPerSymbol; ++j) {
        const std::size_t b = base + 2 * j;
        const double turn = std::arg(s[b + 1] * std::conj(s[b])) + std::arg(s[b + 2] * std::conj(s[b + 1]));
        const int dir = turn >= 0.0 ? 1 : -1;
        const int a = prev * ((j & 1) ? dir : -dir);
        if (a > 0)
            x |= 1u << j;
        prev = a;
        out.soft_quality[j] = std::min(1.0, std::abs(turn) / (kPi / 2.0));
    }
    const auto& table = PnTable::standard();
    int min_d = 33, max_d = -1;
    for (std::uint32_t seq : table.sequences()) {
        const int d = std::popcount(x ^ seq);
        min_d = std::min(min_d, d);
        max_d = std::max(max_d, d);
    }
    if (int(kChipsPerSymbol) - max_d < min_d)
        x = ~x;
    for (std::size_t j = 0; j < kChipsPerSymbol; ++j)
        out.chips[j] = std::uint8_t((x >> j) & 1u);
    return out;
}

/// Normalized preamble correlation below this means "no frame".
inline constexpr double kPreambleFloor = 0.5;
inline constexpr std::size_t kPreambleSearchSpan = 1000;

inline const std::vector<IqSample>& preamble_template()
{
    static const std::vector<IqSample> tmpl = [] {
        // Preamble plus SFD: the preamble alone repeats every symbol, so the
        // SFD is needed to pin the frame start.
        std::vector<std::uint8_t> chips;
        const auto& table = PnTable::standard();
        std::vector<unsigned> symbols(kPreambleSymbols, 0u);
        symbols.push_back(kSfd & 0x0F);
        symbols.push_back(kSfd >> 4);
        for (unsigned sym : symbols)
            for (std::size_t k = 0; k < kChipsPerSymbol; ++k)
                chips.push_back(std::uint8_t(table.chip(sym, k)));
        auto w = synthesize_oqpsk(chips, kReceiverRateHz);
        w.samples.resize(symbols.size() * kSamplesPerSymbol);
        return w.samples;
    }();
    return tmpl;
}

struct Alignment
{
    std::size_t offset = 0;
    double correlation = 0.0;
};

/// Locate the frame start by normalized correlation with the preamble.
inline Alignment align_preamble_detail(const IqWaveform& w)
{
    require(w.sample_rate_hz == kReceiverRateHz, "align_preamble: waveform must be at 4 MHz");
    const auto& p = preamble_template();
    const std::size_t len = p.size();
    if (w.size() < len)
        fail(ErrorKind::NoFrameFound, "no frame found: waveform shorter than the preamble");
    double p_energy = 0.0;
    for (const auto& v : p)
        p_energy += std::norm(v);
    const std::size_t last = std::min(kPreambleSearchSpan, w.size() - len);
    double w_energy = 0.0;
    for (std::size_t n = 0; n < len; ++n)
        w_energy += std::norm(w.samples[n]);
    Alignment best{0, -1.0};
    for (std::size_t o = 0; o <= last; ++o) {
        if (o > 0) {
            w_energy += std::norm(w.samples[o + len - 1]) - std::norm(w.samples[o - 1]);
            w_energy = std::max(w_energy, 0.0);
        }
        IqSample acc{};
        for (std::size_t n = 0; n < len; ++n)
            acc += w.samples[o + n] * std::conj(p[n]);
        const double denom = std::sqrt(w_energy * p_energy);
        const double rho = denom > 0.0 ? std::abs(acc) / denom : 0.0;
        if (rho > best.correlation + 1e-12)
            best = {o, rho};
    }
    if (best.correlation < kPreambleFloor)
        fail(ErrorKind::NoFrameFound,
             "no frame found: preamble correlation " + std::to_string(best.correlation) + " below floor");
    return best;
}

inline std::size_t align_preamble(const IqWaveform& w) { return align_preamble_detail(w).offset; }

struct FrameDecode
{
    std::size_t offset = 0;
    std::vector<SymbolDecode> symbols;
    std::vector<std::uint8_t> psdu;      // length-byte-delimited bytes after the header
    std::vector<std::uint8_t> payload;   // psdu without the trailing FCS
    int length_byte = 0;
    bool sfd_ok = false;
    bool truncated = false;
    bool fcs_ok = false;
};

/// Number of complete symbol windows available after `offset`.
inline std::size_t available_symbols(const IqWaveform& w, std::size_t offset) noexcept
{
    if (w.size() <= offset + 1)
        return 0;
    return (w.size() - offset - 1) / kSamplesPerSymbol;
}

inline FrameDecode decode_frame_at(const IqWaveform& w, std::size_t offset)
{
    FrameDecode out;
    out.offset = offset;
    const std::size_t avail = available_symbols(w, offset);
    if (avail < kHeaderSymbols)
        fail(ErrorKind::NoFrameFound, "no frame found: waveform ends inside the header");
    for (std::size_t k = 0; k < kHeaderSymbols; ++k)
        out.symbols.push_back(decode_symbol(demodulate_chips(w, k, offset)));
    out.sfd_ok = out.symbols[8].symbol == (kSfd & 0x0F) && out.symbols[9].symbol == (kSfd >> 4);
    out.length_byte = (out.symbols[10].symbol | (out.symbols[11].symbol << 4)) & 0x7F;

    std::size_t total = kHeaderSymbols + 2 * std::size_t(out.length_byte);
    if (out.length_byte < 2 || total > avail) {
        out.truncated = true;
        total = kHeaderSymbols + ((avail - kHeaderSymbols) & ~std::size_t{1});
        if (out.length_byte >= 2)
            total = std::min(total, kHeaderSymbols + 2 * std::size_t(out.length_byte));
    }
    for (std::size_t k = kHeaderSymbols; k < total; ++k)
        out.symbols.push_back(decode_symbol(demodulate_chips(w, k, offset)));
    for (std::size_t k = kHeaderSymbols; k + 1 < total; k += 2)
        out.psdu.push_back(std::uint8_t(out.symbols[k].symbol | (out.symbols[k + 1].symbol << 4)));
    if (!out.truncated && out.psdu.size() >= 2) {
        out.payload.assign(out.psdu.begin(), out.psdu.end() - 2);
        const std::uint16_t rx_fcs = std::uint16_t(out.psdu[out.psdu.size() - 2] | (out.psdu.back() << 8));
        out.fcs_ok = out.sfd_ok && crc16_fcs(out.payload) == rx_fcs;
    }
    return out;
}

inline FrameDecode decode_frame(const IqWaveform& w)
{
    return decode_frame_at(w, align_preamble(w));
}

} // namespace ctilab
