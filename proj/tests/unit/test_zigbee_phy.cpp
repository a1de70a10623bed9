#include <gtest/gtest.h>

#include <bit>
#include <string>

#include "ctilab/zigbee_phy.hpp"

using namespace ctilab;

namespace {

// Bitwise long division of the reflected message by x^16 + x^12 + x^5 + 1,
// written directly from the polynomial rather than the shift-register form.
std::uint16_t crc_long_division(std::span<const std::uint8_t> data)
{
    std::vector<int> bits;
    for (std::uint8_t b : data)
        for (int k = 0; k < 8; ++k)
            bits.push_back((b >> k) & 1); // LSB first
    bits.insert(bits.end(), 16, 0);
    const int poly[17] = {1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}; // x^16 .. x^0
    for (std::size_t i = 0; i + 16 < bits.size(); ++i)
        if (bits[i])
            for (int k = 0; k <= 16; ++k)
                bits[i + std::size_t(k)] ^= poly[k];
    // Remainder coefficient of x^15 is the first of the last 16 bits; the
    // reflected register stores x^15 in bit 0.
    std::uint16_t r = 0;
    for (int k = 0; k < 16; ++k)
        if (bits[bits.size() - 16 + std::size_t(k)])
            r |= std::uint16_t(1u << k);
    return r;
}

struct BruteDecode
{
    int symbol;
    int hamming;
};

BruteDecode brute_decode(std::uint32_t x)
{
    const auto& t = PnTable::standard();
    BruteDecode best{-1, 99};
    for (int s = 0; s < 16; ++s) {
        int d = 0;
        for (int k = 0; k < 32; ++k)
            d += int(((x >> k) & 1u) != std::uint32_t(t.chip(std::size_t(s), std::size_t(k))));
        if (d < best.hamming)
            best = {s, d};
    }
    return best;
}

std::vector<std::uint8_t> random_payload(Rng& rng, std::size_t n)
{
    std::vector<std::uint8_t> p(n);
    for (auto& b : p)
        b = std::uint8_t(rng.below(256));
    return p;
}

IqWaveform prepend_zeros(const IqWaveform& w, std::size_t n)
{
    std::vector<IqSample> s(n);
    s.insert(s.end(), w.samples.begin(), w.samples.end());
    return IqWaveform(std::move(s), w.sample_rate_hz);
}

} // namespace

TEST(PnTable, ShapeAndDistance)
{
    const auto& t = PnTable::standard();
    EXPECT_EQ(t.sequences().size(), 16u);
    int dmin = 32;
    for (int a = 0; a < 16; ++a)
        for (int b = a + 1; b < 16; ++b)
            dmin = std::min(dmin, std::popcount(t.sequence(std::size_t(a)) ^ t.sequence(std::size_t(b))));
    EXPECT_EQ(t.min_distance(), dmin);
    EXPECT_GT(dmin, 6);
    // First chips of symbol 0 are 1101 1001.
    EXPECT_EQ(t.chip(0, 0), 1);
    EXPECT_EQ(t.chip(0, 1), 1);
    EXPECT_EQ(t.chip(0, 2), 0);
}

TEST(Crc, CheckValue)
{
    const std::string s = "123456789";
    const std::vector<std::uint8_t> bytes(s.begin(), s.end());
    EXPECT_EQ(crc16_fcs(bytes), 0x2189);
    EXPECT_EQ(crc_long_division(bytes), 0x2189);
}

TEST(Crc, MatchesLongDivision)
{
    Rng rng(31);
    for (int i = 0; i < 300; ++i) {
        const auto p = random_payload(rng, rng.below(126));
        ASSERT_EQ(crc16_fcs(p), crc_long_division(p));
    }
}

TEST(BuildFrame, EmptyPayload)
{
    const auto f = build_frame(std::vector<std::uint8_t>{});
    EXPECT_EQ(f.length_byte(), 2);
    EXPECT_EQ(f.symbol_count(), 16u);
    EXPECT_EQ(f.symbols().size(), 16u);
    EXPECT_TRUE(verify_fcs(f));
}

TEST(BuildFrame, LayoutAndNibbleOrder)
{
    const auto f = build_frame(std::vector<std::uint8_t>{0x3C});
    const auto b = f.bytes();
    ASSERT_EQ(b.size(), 9u);
    EXPECT_EQ(b[4], 0xA7);
    EXPECT_EQ(b[5], 3);
    EXPECT_EQ(b[6], 0x3C);
    const auto s = f.symbols();
    EXPECT_EQ(s[8], 0x7);
    EXPECT_EQ(s[9], 0xA);
    EXPECT_EQ(s[12], 0xC);
    EXPECT_EQ(s[13], 0x3);
    EXPECT_EQ(f.chips().size(), f.symbol_count() * 32);
}

TEST(BuildFrame, OversizeRejected)
{
    EXPECT_NO_THROW(build_frame(std::vector<std::uint8_t>(125)));
    EXPECT_THROW(build_frame(std::vector<std::uint8_t>(126)), Error);
}

TEST(BuildFrame, RoundTripFcs)
{
    Rng rng(5);
    for (int i = 0; i < 50; ++i)
        EXPECT_TRUE(verify_fcs(build_frame(random_payload(rng, rng.below(126)))));
}

TEST(Hex, RoundTripAndErrors)
{
    const std::vector<std::uint8_t> b = {0x00, 0xAB, 0x7F};
    EXPECT_EQ(to_hex(b), "00ab7f");
    EXPECT_EQ(from_hex("00AB7f"), b);
    EXPECT_THROW(from_hex("abc"), Error);
    EXPECT_THROW(from_hex("zz"), Error);
}

TEST(Modulate, LengthAndConstantEnvelope)
{
    Rng rng(6);
    const auto f = build_frame(random_payload(rng, 20));
    const auto w = modulate(f);
    EXPECT_EQ(w.size(), 64 * f.symbol_count() + 2);
    EXPECT_DOUBLE_EQ(w.sample_rate_hz, 4e6);
    const auto r = rssi_series(w);
    double lo = 1e9, hi = 0;
    for (std::size_t n = 2; n + 2 < r.size(); ++n) {
        lo = std::min(lo, r[n]);
        hi = std::max(hi, r[n]);
    }
    EXPECT_LT(hi / lo, 1.000001);
    EXPECT_LT((hi - lo) / hi, 1e-5);
}

TEST(Modulate, PhaseShiftsAreQuarterTurnHalves)
{
    Rng rng(7);
    const auto w = modulate(build_frame(random_payload(rng, 30)));
    const auto p = phase_shift_series(w);
    for (std::size_t n = 2; n + 4 < p.size(); ++n)
        ASSERT_NEAR(std::abs(p[n]), kPi / 4, 1e-6) << "sample " << n;
}

TEST(Demodulate, CleanLoopbackChipsExact)
{
    Rng rng(8);
    const auto f = build_frame(random_payload(rng, 40));
    const auto w = modulate(f);
    const auto& t = PnTable::standard();
    const auto sym = f.symbols();
    for (std::size_t k = 0; k < sym.size(); ++k)
        ASSERT_EQ(demodulate_chips(w, k).packed(), t.sequence(sym[k])) << "symbol " << k;
}

TEST(Demodulate, GlobalPhaseInvariant)
{
    Rng rng(9);
    const auto w = modulate(build_frame(random_payload(rng, 10)));
    const auto neg = scale(w, -1.0), rot = scale(w, std::polar(1.0, 1.1));
    for (std::size_t k = 0; k < 30; ++k) {
        EXPECT_EQ(demodulate_chips(neg, k).packed(), demodulate_chips(w, k).packed());
        EXPECT_EQ(demodulate_chips(rot, k).packed(), demodulate_chips(w, k).packed());
    }
}

TEST(Demodulate, ChipErrorRateAtTenDb)
{
    // Per-sample SNR of 10 dB on the unit-power 4 MHz waveform.
    Rng rng(10);
    const auto f = build_frame(random_payload(rng, 125));
    const auto clean = modulate(f);
    const auto& t = PnTable::standard();
    const auto sym = f.symbols();
    std::size_t chips = 0, errors = 0;
    for (std::uint64_t trial = 0; chips < 100000; ++trial) {
        const auto w = add_awgn(clean, {0.05, derive_seed(1234, trial)});
        for (std::size_t k = 0; k < sym.size(); ++k) {
            errors += std::size_t(std::popcount(demodulate_chips(w, k).packed() ^ t.sequence(sym[k])));
            chips += 32;
        }
    }
    EXPECT_LT(double(errors) / double(chips), 0.01);
}

TEST(Demodulate, WindowOutOfRange)
{
    const auto w = modulate(build_frame(std::vector<std::uint8_t>{}));
    EXPECT_NO_THROW(demodulate_chips(w, 15));
    EXPECT_THROW(demodulate_chips(w, 16), Error);
}

TEST(DecodeSymbol, ExactAndPerturbed)
{
    const auto& t = PnTable::standard();
    auto d = decode_symbol(t.sequence(5));
    EXPECT_EQ(d.symbol, 5);
    EXPECT_EQ(d.hamming, 0);
    d = decode_symbol(t.sequence(5) ^ 0b111u);
    EXPECT_EQ(d.symbol, 5);
    EXPECT_EQ(d.hamming, 3);
    const auto z = brute_decode(0);
    d = decode_symbol(0u);
    EXPECT_EQ(d.symbol, z.symbol);
    EXPECT_EQ(d.hamming, z.hamming);
}

TEST(DecodeSymbol, AgreesWithBruteForce)
{
    Rng rng(11);
    for (int i = 0; i < 100000; ++i) {
        const auto x = std::uint32_t(rng.next_u64());
        const auto d = decode_symbol(x);
        const auto b = brute_decode(x);
        ASSERT_EQ(d.symbol, b.symbol);
        ASSERT_EQ(d.hamming, b.hamming);
    }
}

TEST(DecodeSymbol, CorrectsUpToHalfDistance)
{
    const auto& t = PnTable::standard();
    const int kmax = (t.min_distance() - 1) / 2;
    Rng rng(12);
    for (int i = 0; i < 5000; ++i) {
        const auto s = std::size_t(rng.below(16));
        const int k = int(rng.below(std::uint64_t(kmax) + 1));
        std::uint32_t mask = 0;
        while (std::popcount(mask) < k)
            mask |= 1u << rng.below(32);
        const auto d = decode_symbol(t.sequence(s) ^ mask);
        ASSERT_EQ(d.symbol, int(s));
        ASSERT_EQ(d.hamming, k);
    }
}

TEST(Align, ZeroPrefixIsFound)
{
    const auto w = modulate(build_frame(std::vector<std::uint8_t>{1, 2, 3}));
    EXPECT_EQ(align_preamble(w), 0u);
    EXPECT_EQ(align_preamble(prepend_zeros(w, 100)), 100u);
}

TEST(Align, NoisyOffsetMostlyExact)
{
    const auto w = prepend_zeros(modulate(build_frame(std::vector<std::uint8_t>(20, 0x55))), 37);
    int exact = 0;
    for (std::uint64_t s = 0; s < 200; ++s)
        exact += align_preamble(add_awgn(w, {0.05, s})) == 37u;
    EXPECT_GE(exact, 198);
}

TEST(Align, PureNoiseIsNoFrame)
{
    const IqWaveform z(std::vector<IqSample>(3000), 4e6);
    try {
        align_preamble(add_awgn(z, {0.5, 3}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NoFrameFound);
    }
}

TEST(DecodeFrame, LoopbackRandomPayloads)
{
    Rng rng(13);
    for (int i = 0; i < 100; ++i) {
        const auto p = random_payload(rng, rng.below(126));
        const auto d = decode_frame(modulate(build_frame(p)));
        ASSERT_TRUE(d.fcs_ok);
        ASSERT_TRUE(d.sfd_ok);
        ASSERT_EQ(d.payload, p);
        for (const auto& s : d.symbols)
            ASSERT_EQ(s.hamming, 0);
    }
}

TEST(DecodeFrame, NoisySymbolBreaksFcs)
{
    Rng rng(14);
    auto w = modulate(build_frame(random_payload(rng, 10)));
    Rng noise(15);
    for (std::size_t n = 64 * 14; n < 64 * 15; ++n) {
        const auto [a, b] = noise.normal_pair();
        w.samples[n] = {a, b};
    }
    EXPECT_FALSE(decode_frame(w).fcs_ok);
}

TEST(DecodeFrame, TruncatedWaveform)
{
    auto w = modulate(build_frame(std::vector<std::uint8_t>(10, 0xEE)));
    w.samples.resize(64 * 20 + 1);
    const auto d = decode_frame(w);
    EXPECT_TRUE(d.truncated);
    EXPECT_FALSE(d.fcs_ok);
    w.samples.resize(64 * 11);
    EXPECT_THROW(decode_frame(w), Error);
}
