#include <gtest/gtest.h>

#include "ctilab/channel.hpp"
#include "ctilab/interferers.hpp"

using namespace ctilab;

namespace {

InterfererSpec spec(InterfererKind k, double duration_s, std::uint64_t seed, double offset_hz = 0.0)
{
    InterfererSpec s;
    s.kind = k;
    s.duration_s = duration_s;
    s.payload_seed = seed;
    s.center_offset_hz = offset_hz;
    return s;
}

// Interferer alone through the victim receive chain, 4 MHz output.
IqWaveform through_victim_chain(const InterfererSpec& itf)
{
    CollisionScene s;
    s.victim_frame = build_frame(std::vector<std::uint8_t>(40, 0));
    s.h_z = 0.0;
    s.h_x = 1.0;
    s.interferer = itf;
    return mix(s).waveform;
}

double var_norm(std::span<const double> r)
{
    double m = 0, v = 0;
    for (double x : r)
        m += x;
    m /= double(r.size());
    for (double x : r)
        v += (x - m) * (x - m);
    return v / double(r.size()) / (m * m);
}

std::vector<double> steady_rssi(const IqWaveform& w)
{
    const auto r = rssi_series(w);
    return std::vector<double>(r.begin() + 100, r.end() - 100);
}

} // namespace

TEST(InterfererKind, NamesRoundTrip)
{
    for (auto k : {InterfererKind::None, InterfererKind::Wifi11b, InterfererKind::Wifi11g, InterfererKind::Bluetooth,
                   InterfererKind::Zigbee})
        EXPECT_EQ(interferer_kind_from_string(to_string(k)), k);
    EXPECT_THROW(interferer_kind_from_string("lte"), Error);
}

TEST(Generators, WrongKindRejected)
{
    const auto s = spec(InterfererKind::Bluetooth, 1e-4, 1);
    EXPECT_THROW(gen_wifi11b(s), Error);
    EXPECT_THROW(gen_wifi11g(s), Error);
    EXPECT_THROW(gen_zigbee_interferer(s), Error);
    EXPECT_THROW(gen_bluetooth(spec(InterfererKind::Zigbee, 1e-4, 1)), Error);
}

TEST(Generators, NonPositiveDurationRejected)
{
    EXPECT_THROW(gen_wifi11b(spec(InterfererKind::Wifi11b, 0.0, 1)), Error);
    EXPECT_THROW(gen_bluetooth(spec(InterfererKind::Bluetooth, -1.0, 1)), Error);
}

TEST(Generators, NoneIsEmpty) { EXPECT_TRUE(generate_interferer(spec(InterfererKind::None, 1e-3, 1)).empty()); }

TEST(Generators, UnitPowerAndDeterminism)
{
    for (auto k : kInterfererClasses) {
        const auto s = spec(k, 2e-3, 77);
        const auto a = generate_interferer(s);
        EXPECT_DOUBLE_EQ(a.sample_rate_hz, kAirRateHz);
        EXPECT_EQ(a.size(), 44000u) << to_string(k);
        EXPECT_NEAR(mean_power(a), 1.0, 0.01) << to_string(k);
        EXPECT_EQ(a.samples, generate_interferer(s).samples) << to_string(k);
        EXPECT_NE(a.samples, generate_interferer(spec(k, 2e-3, 78)).samples) << to_string(k);
    }
}

TEST(Wifi11b, EightSymbolsLength)
{
    const auto w = gen_wifi11b(spec(InterfererKind::Wifi11b, 8e-6, 1));
    EXPECT_EQ(w.size(), 8u * 11u * 2u);
}

TEST(Wifi11b, ChipsFollowBarker)
{
    const auto w = gen_wifi11b(spec(InterfererKind::Wifi11b, 4e-6, 2));
    for (std::size_t s = 0; s < 4; ++s) {
        const IqSample sym = w.samples[s * 22];
        for (std::size_t j = 0; j < 22; ++j)
            ASSERT_LT(std::abs(w.samples[s * 22 + j] - double(kBarker11[j / 2]) * sym), 1e-12);
    }
}

TEST(Wifi11b, DqpskTurnsInQuarterSteps)
{
    auto s = spec(InterfererKind::Wifi11b, 200e-6, 3);
    s.dqpsk = true;
    const auto w = gen_wifi11b(s);
    bool quarter = false;
    for (std::size_t k = 1; k < 200; ++k) {
        const double d = std::abs(std::arg(w.samples[k * 22] * std::conj(w.samples[(k - 1) * 22])));
        const double steps = d / (kPi / 2);
        ASSERT_NEAR(steps, std::round(steps), 1e-9);
        quarter |= std::abs(d - kPi / 2) < 1e-9;
    }
    EXPECT_TRUE(quarter);
}

TEST(Wifi11b, FilteredEnvelopePeriodicAtOneMicrosecond)
{
    for (bool dqpsk : {false, true}) {
        auto s = spec(InterfererKind::Wifi11b, 1.5e-3, 4, 2e6);
        s.dqpsk = dqpsk;
        const auto r = steady_rssi(through_victim_chain(s));
        const auto acf = autocorrelation(r, 128);
        // Every multiple of the symbol period peaks equally; the fundamental
        // is the shortest lag reaching the maximum.
        double peak = 0;
        for (std::size_t lag = 2; lag <= 128; ++lag)
            peak = std::max(peak, acf.values[lag - 1]);
        std::size_t best = 2;
        while (acf.values[best - 1] < 0.95 * peak)
            ++best;
        for (std::size_t lag = 2; lag <= 128; ++lag)
            if (lag % 4 != 0)
                EXPECT_LT(acf.values[lag - 1], 0.5 * peak) << lag;
        EXPECT_EQ(best, 4u) << "dqpsk " << dqpsk; // 1 us at 4 MHz

        const auto g = steady_rssi(through_victim_chain(spec(InterfererKind::Wifi11g, 1.5e-3, 4, 2e6)));
        const auto acf_g = autocorrelation(g, 128);
        EXPECT_GT(acf.values[3], acf_g.values[3] + 0.2);
    }
}

TEST(Wifi11g, SymbolStructure)
{
    Rng rng(5);
    const auto sym = ofdm_symbol_20mhz(rng);
    ASSERT_EQ(sym.size(), 80u);
    for (std::size_t n = 0; n < 16; ++n)
        EXPECT_EQ(sym[n], sym[n + 64]);
    std::vector<IqSample> body(sym.begin() + 16, sym.end());
    fft_inplace(body, false);
    for (int k = -32; k < 32; ++k) {
        const bool used = k != 0 && k >= -26 && k <= 26;
        const double mag = std::abs(body[ofdm_bin(k)]);
        if (used)
            EXPECT_NEAR(mag, 1.0, 1e-9) << k;
        else
            EXPECT_LT(mag, 1e-9) << k;
    }
    EXPECT_EQ(ofdm_data_subcarriers().size(), 48u);
}

TEST(Wifi11g, EnvelopeMoreVariableThan11b)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const double g = var_norm(steady_rssi(through_victim_chain(spec(InterfererKind::Wifi11g, 1e-3, seed, 2e6))));
        const double b = var_norm(steady_rssi(through_victim_chain(spec(InterfererKind::Wifi11b, 1e-3, seed, 2e6))));
        const double bt = var_norm(steady_rssi(through_victim_chain(spec(InterfererKind::Bluetooth, 1e-3, seed))));
        const double zb = var_norm(steady_rssi(through_victim_chain(spec(InterfererKind::Zigbee, 1e-3, seed))));
        EXPECT_GT(g, b);
        EXPECT_GT(b, bt);
        EXPECT_GT(b, zb);
    }
}

TEST(Bluetooth, ConstantEnvelope)
{
    const auto r = rssi_series(gen_bluetooth(spec(InterfererKind::Bluetooth, 1e-3, 6)));
    const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
    EXPECT_LT((*hi - *lo) / *hi, 1e-5);
}

TEST(Bluetooth, PhaseShiftsSmallAndUnimodal)
{
    const auto p = phase_shift_series(gen_bluetooth(spec(InterfererKind::Bluetooth, 100000 / kAirRateHz, 7)));
    const double bound = kPi * kBluetoothModIndex / 22.0;
    std::array<int, 32> hist{};
    for (double v : p) {
        ASSERT_LE(std::abs(v), bound + 1e-12);
        hist[std::min<std::size_t>(31, std::size_t((v + bound) / (2 * bound) * 32))]++;
    }
    // Continuous values spread over the interval, unlike two ZigBee spikes.
    EXPECT_LT(bound, kPi / 22.0);
    int nonzero = 0;
    for (int h : hist)
        nonzero += h > 0;
    EXPECT_GT(nonzero, 16);
}

TEST(ZigbeeInterferer, ConstantEnvelopeAndBimodalShifts)
{
    const auto w = gen_zigbee_interferer(spec(InterfererKind::Zigbee, 100000 / kAirRateHz, 8));
    const auto r = rssi_series(w);
    double lo = 1e9, hi = 0;
    for (std::size_t n = 11; n < r.size(); ++n) {
        lo = std::min(lo, r[n]);
        hi = std::max(hi, r[n]);
    }
    EXPECT_LT((hi - lo) / hi, 1e-5);
    std::size_t plus = 0, minus = 0;
    const auto p = phase_shift_series(w);
    for (std::size_t n = 11; n < p.size(); ++n) {
        ASSERT_NEAR(std::abs(p[n]), kPi / 22.0, 1e-6);
        (p[n] > 0 ? plus : minus)++;
    }
    EXPECT_GT(plus, p.size() / 3);
    EXPECT_GT(minus, p.size() / 3);
}

TEST(RenderInterferer, AppliesOffset)
{
    const auto s = spec(InterfererKind::Bluetooth, 1e-4, 9, 1e6);
    auto base = s;
    base.center_offset_hz = 0.0;
    EXPECT_EQ(render_interferer(s).samples, frequency_shift(generate_interferer(base), 1e6).samples);
}
