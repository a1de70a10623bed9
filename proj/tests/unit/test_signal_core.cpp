#include <gtest/gtest.h>

#include <array>
#include <bit>
#include <cmath>
#include <set>
#include <filesystem>
#include <fstream>

#include "ctilab/iq32.hpp"
#include "ctilab/signal_core.hpp"
#include "ctilab/zigbee_phy.hpp"

using namespace ctilab;

namespace {

IqWaveform random_waveform(std::size_t n, std::uint64_t seed, double rate = 4e6)
{
    Rng rng(seed);
    std::vector<IqSample> s(n);
    for (auto& v : s) {
        const auto [a, b] = rng.normal_pair();
        v = {a, b};
    }
    return IqWaveform(std::move(s), rate);
}

IqWaveform tone(std::size_t n, double f, double fs)
{
    std::vector<IqSample> s(n);
    for (std::size_t k = 0; k < n; ++k)
        s[k] = std::polar(1.0, 2.0 * kPi * f * double(k) / fs);
    return IqWaveform(std::move(s), fs);
}

} // namespace

TEST(Waveform, RejectsNonPositiveRate)
{
    EXPECT_THROW(IqWaveform({}, 0.0), Error);
    EXPECT_THROW(IqWaveform({}, -1.0), Error);
    EXPECT_THROW(IqWaveform({}, NAN), Error);
}

TEST(AddWaveforms, IdentityAndInverse)
{
    const IqWaveform a({{1, 0}, {0, 1}}, 4e6), zero({{0, 0}, {0, 0}}, 4e6);
    EXPECT_EQ(add_waveforms(a, zero).samples, a.samples);
    const IqWaveform p({{1, 1}}, 4e6), m({{-1, -1}}, 4e6);
    EXPECT_EQ(add_waveforms(p, m).samples[0], IqSample(0, 0));
}

TEST(AddWaveforms, ZeroPadsShorterOperand)
{
    const IqWaveform a({{1, 0}, {2, 0}, {3, 0}}, 4e6), b({{1, 1}}, 4e6);
    const auto s = add_waveforms(b, a);
    ASSERT_EQ(s.size(), 3u);
    EXPECT_EQ(s.samples[0], IqSample(2, 1));
    EXPECT_EQ(s.samples[2], IqSample(3, 0));
}

TEST(AddWaveforms, SymbolPlusItselfDoublesEverySample)
{
    const auto w = modulate(build_frame(std::vector<std::uint8_t>{0x5A}));
    const IqWaveform sym(std::vector<IqSample>(w.samples.begin(), w.samples.begin() + 64), w.sample_rate_hz);
    const auto d = add_waveforms(sym, sym);
    for (std::size_t n = 0; n < 64; ++n)
        EXPECT_EQ(d.samples[n], 2.0 * sym.samples[n]);
}

TEST(AddWaveforms, RateMismatchIsRejected)
{
    try {
        add_waveforms(IqWaveform({{1, 0}}, 4e6), IqWaveform({{1, 0}}, 22e6));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::RateMismatch);
    }
}

TEST(Scale, IdentityRotationAndPower)
{
    const auto w = random_waveform(1000, 3);
    EXPECT_EQ(scale(w, 1.0).samples, w.samples);
    EXPECT_EQ(scale(IqWaveform({{1, 0}}, 4e6), {0, 1}).samples[0], IqSample(0, 1));

    const auto u = tone(4096, 1e5, 4e6); // unit power
    EXPECT_NEAR(mean_power(scale(u, 0.5)), 0.25, 1e-12);
    EXPECT_THROW(scale(u, {INFINITY, 0}), Error);
}

TEST(Scale, RssiScalesByGainSquared)
{
    const auto w = random_waveform(500, 4);
    const IqSample g(0.3, -1.7);
    const auto a = rssi_series(w), b = rssi_series(scale(w, g));
    for (std::size_t n = 0; n < a.size(); ++n)
        EXPECT_NEAR(b[n], std::norm(g) * a[n], 1e-12 * std::max(1.0, b[n]));
}

TEST(Awgn, ZeroVarianceIsIdentity)
{
    const auto w = random_waveform(100, 5);
    EXPECT_EQ(add_awgn(w, {0.0, 9}).samples, w.samples);
}

TEST(Awgn, EmpiricalVarianceMatches)
{
    const IqWaveform z(std::vector<IqSample>(1000000), 4e6);
    const auto n = add_awgn(z, {1.0, 42});
    double si = 0, sq = 0, mi = 0, mq = 0;
    for (const auto& v : n.samples) {
        mi += v.real();
        mq += v.imag();
    }
    mi /= double(n.size());
    mq /= double(n.size());
    for (const auto& v : n.samples) {
        si += (v.real() - mi) * (v.real() - mi);
        sq += (v.imag() - mq) * (v.imag() - mq);
    }
    EXPECT_NEAR(si / double(n.size()), 1.0, 0.01);
    EXPECT_NEAR(sq / double(n.size()), 1.0, 0.01);
}

TEST(Awgn, SameSeedSameNoise)
{
    const auto w = random_waveform(1000, 6);
    EXPECT_EQ(add_awgn(w, {0.3, 77}).samples, add_awgn(w, {0.3, 77}).samples);
    EXPECT_NE(add_awgn(w, {0.3, 77}).samples, add_awgn(w, {0.3, 78}).samples);
}

TEST(Rng, KnownSequenceIsStable)
{
    // Freezes the generator so seeds mean the same thing on every platform.
    Rng a(0), b(0);
    for (int i = 0; i < 10; ++i)
        EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng c(123);
    const double u = c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    for (int i = 0; i < 1000; ++i)
        EXPECT_LT(c.below(7), 7u);
}

TEST(Rng, BelowIsUnbiased)
{
    Rng r(9);
    std::array<int, 3> counts{};
    for (int i = 0; i < 30000; ++i)
        ++counts[r.below(3)];
    for (int c : counts)
        EXPECT_NEAR(c, 10000, 400); // ~4.5 sigma
}

TEST(DeriveSeed, DistinctTagsGiveDistinctSeeds)
{
    std::set<std::uint64_t> seen;
    for (std::uint64_t t = 0; t < 10000; ++t)
        seen.insert(derive_seed(1, t));
    EXPECT_EQ(seen.size(), 10000u);
}

TEST(FrequencyShift, ZeroIsIdentity)
{
    const auto w = random_waveform(64, 7);
    EXPECT_EQ(frequency_shift(w, 0.0).samples, w.samples);
}

TEST(FrequencyShift, QuarterRateCycles)
{
    const IqWaveform ones(std::vector<IqSample>(8, {1, 0}), 4e6);
    const auto s = frequency_shift(ones, 1e6);
    const IqSample expect[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    for (std::size_t n = 0; n < 8; ++n) {
        EXPECT_NEAR(s.samples[n].real(), expect[n % 4].real(), 1e-12);
        EXPECT_NEAR(s.samples[n].imag(), expect[n % 4].imag(), 1e-12);
    }
}

TEST(FrequencyShift, MagnitudeUnchanged)
{
    const auto w = random_waveform(20000, 8, 22e6);
    for (double f : {-3e6, 1.234e6, 10.9e6}) {
        const auto s = frequency_shift(w, f);
        for (std::size_t n = 0; n < w.size(); ++n)
            ASSERT_NEAR(std::abs(s.samples[n]), std::abs(w.samples[n]), 1e-12 * std::max(1.0, std::abs(w.samples[n])));
    }
}

TEST(FrequencyShift, BeyondNyquistIsRejected)
{
    const auto w = random_waveform(8, 1);
    EXPECT_THROW(frequency_shift(w, 2e6), Error);
    EXPECT_THROW(frequency_shift(w, -2.5e6), Error);
}

TEST(LowPass, DesignHasUnitDcGainAndSymmetry)
{
    const auto h = design_lowpass(2e6, 22e6);
    ASSERT_EQ(h.size(), 63u);
    double sum = 0;
    for (double v : h)
        sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (std::size_t k = 0; k < h.size(); ++k)
        EXPECT_NEAR(h[k], h[h.size() - 1 - k], 1e-15);
}

TEST(LowPass, DcPassesAfterTransient)
{
    const IqWaveform ones(std::vector<IqSample>(400, {1, 0}), 22e6);
    const auto y = low_pass_filter(ones, 2e6);
    for (std::size_t n = 63; n + 63 < y.size(); ++n)
        EXPECT_NEAR(std::abs(y.samples[n]), 1.0, 0.01);
}

TEST(LowPass, ToneAtTwiceCutoffIsSuppressed)
{
    const auto x = tone(4000, 4e6, 22e6);
    const auto y = low_pass_filter(x, 2e6);
    const std::span<const IqSample> mid(y.samples.data() + 100, y.size() - 200);
    EXPECT_LT(mean_power(mid), 0.01 * mean_power(x));
}

TEST(LowPass, IsLinear)
{
    const auto a = random_waveform(3000, 10, 22e6), b = random_waveform(3000, 11, 22e6);
    const auto lhs = low_pass_filter(add_waveforms(a, b), 2e6);
    const auto ra = low_pass_filter(a, 2e6), rb = low_pass_filter(b, 2e6);
    for (std::size_t n = 0; n < lhs.size(); ++n)
        ASSERT_LT(std::abs(lhs.samples[n] - (ra.samples[n] + rb.samples[n])), 1e-9);
}

TEST(LowPass, GroupDelayIsCompensated)
{
    // An impulse in the middle comes out centered on the same index.
    std::vector<IqSample> x(201);
    x[100] = 1.0;
    const auto y = low_pass_filter(IqWaveform(x, 22e6), 2e6);
    std::size_t peak = 0;
    for (std::size_t n = 0; n < y.size(); ++n)
        if (std::abs(y.samples[n]) > std::abs(y.samples[peak]))
            peak = n;
    EXPECT_EQ(peak, 100u);
}

TEST(LowPass, InvalidCutoffIsRejected)
{
    const auto w = random_waveform(10, 1, 22e6);
    EXPECT_THROW(low_pass_filter(w, 0.0), Error);
    EXPECT_THROW(low_pass_filter(w, 11e6), Error);
}

TEST(NoiseGain, MatchesFilteredWhiteNoisePower)
{
    const auto h = design_lowpass(2e6, 22e6);
    const IqWaveform z(std::vector<IqSample>(400000), 22e6);
    const auto n = add_awgn(z, {0.5, 3});
    const auto y = fir_filter_aligned(n.samples, h);
    EXPECT_NEAR(mean_power(y) / mean_power(n), noise_gain(h), 0.01 * noise_gain(h));
}

TEST(Interpolate, IntegerPositionsReturnSamples)
{
    const auto w = random_waveform(50, 12);
    std::vector<double> pos = {0, 5, 49};
    const auto y = interpolate_at(w.samples, pos);
    EXPECT_EQ(y[0], w.samples[0]);
    EXPECT_EQ(y[1], w.samples[5]);
    EXPECT_EQ(y[2], w.samples[49]);
}

TEST(Interpolate, BandLimitedToneIsReconstructed)
{
    const double fs = 22e6, f = 1e6;
    const auto x = tone(400, f, fs);
    std::vector<double> pos;
    for (double p = 100.0; p < 300.0; p += 0.37)
        pos.push_back(p);
    const auto y = interpolate_at(x.samples, pos);
    for (std::size_t m = 0; m < pos.size(); ++m)
        ASSERT_LT(std::abs(y[m] - std::polar(1.0, 2.0 * kPi * f * pos[m] / fs)), 2e-3);
}

TEST(Resample, LengthAndRate)
{
    const auto w = random_waveform(800, 13, 20e6);
    const auto r = resample_rational(w, 11, 10);
    EXPECT_EQ(r.size(), 880u);
    EXPECT_DOUBLE_EQ(r.sample_rate_hz, 22e6);
}

TEST(Resample, PreservesInBandTone)
{
    const auto x = tone(2000, 2e6, 20e6);
    const auto y = resample_rational(x, 11, 10);
    for (std::size_t m = 100; m + 100 < y.size(); ++m)
        ASSERT_LT(std::abs(y.samples[m] - std::polar(1.0, 2.0 * kPi * 2e6 * double(m) / 22e6)), 1e-2);
}

TEST(RssiSeries, Pythagorean) { EXPECT_DOUBLE_EQ(rssi_series(IqWaveform({{3, 4}}, 1.0))[0], 25.0); }

TEST(PhaseShiftSeries, ConstantAndQuarterRate)
{
    for (double v : phase_shift_series(IqWaveform(std::vector<IqSample>(10, {2, 1}), 1.0)))
        EXPECT_NEAR(v, 0.0, 1e-15);
    const IqWaveform q({{1, 0}, {0, 1}, {-1, 0}, {0, -1}, {1, 0}}, 4.0);
    for (double v : phase_shift_series(q))
        EXPECT_NEAR(v, kPi / 2, 1e-12);
}

TEST(PhaseShiftSeries, RangeIsHalfOpenAtMinusPi)
{
    const auto s = phase_shift_series(IqWaveform({{1, 0}, {-1, 0}}, 1.0));
    EXPECT_DOUBLE_EQ(s[0], kPi);
}

TEST(PhaseShiftSeries, GainInvariant)
{
    const auto w = random_waveform(1000, 14);
    const auto a = phase_shift_series(w), b = phase_shift_series(scale(w, {-0.2, 3.1}));
    for (std::size_t n = 0; n < a.size(); ++n) {
        const double d = std::abs(wrap_phase(a[n] - b[n]));
        ASSERT_LT(d, 1e-9);
    }
}

TEST(PhaseShiftSeries, TooShortIsRejected) { EXPECT_THROW(phase_shift_series(IqWaveform({{1, 0}}, 1.0)), Error); }

TEST(Autocorrelation, SquareWavePeaksAtItsPeriod)
{
    std::vector<double> x(256);
    for (std::size_t n = 0; n < x.size(); ++n)
        x[n] = (n % 8) < 4 ? 1.0 : -1.0;
    const auto r = autocorrelation(x, 16);
    EXPECT_GT(r.values[7], 0.9);
    // Independent oracle: direct formula at lag 8.
    double num = 0, den = 0;
    for (std::size_t n = 0; n < x.size(); ++n)
        den += x[n] * x[n];
    for (std::size_t n = 0; n + 8 < x.size(); ++n)
        num += x[n] * x[n + 8];
    EXPECT_NEAR(r.values[7], num / den, 1e-12);
}

TEST(Autocorrelation, WhiteNoiseIsSmall)
{
    Rng rng(2024);
    std::vector<double> x(4096);
    for (auto& v : x)
        v = rng.normal_pair().first;
    const auto r = autocorrelation(x, 128);
    EXPECT_FALSE(r.zero_variance);
    for (double v : r.values)
        EXPECT_LT(std::abs(v), 0.1);
}

TEST(Autocorrelation, ConstantIsFlagged)
{
    const std::vector<double> x(100, 3.5);
    const auto r = autocorrelation(x, 10);
    EXPECT_TRUE(r.zero_variance);
    for (double v : r.values)
        EXPECT_EQ(v, 0.0);
}

TEST(Autocorrelation, Preconditions)
{
    const std::vector<double> x(10, 1.0);
    EXPECT_THROW(autocorrelation(x, 0), Error);
    EXPECT_THROW(autocorrelation(x, 6), Error);
}

TEST(Fft, MatchesNaiveDft)
{
    const auto w = random_waveform(64, 15);
    auto a = w.samples;
    fft_inplace(a, false);
    for (std::size_t k = 0; k < 64; ++k) {
        IqSample acc{};
        for (std::size_t n = 0; n < 64; ++n)
            acc += w.samples[n] * std::polar(1.0, -2.0 * kPi * double(k * n) / 64.0);
        ASSERT_LT(std::abs(acc - a[k]), 1e-9);
    }
    fft_inplace(a, true);
    for (std::size_t n = 0; n < 64; ++n)
        ASSERT_LT(std::abs(a[n] - w.samples[n]), 1e-12);
}

TEST(Iq32, RoundTripAndSidecar)
{
    const auto dir = std::filesystem::temp_directory_path() / "ctilab_iq32_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "w.iq32";
    const auto w = random_waveform(257, 16, 22e6);
    write_iq32(path, w, "test waveform");
    EXPECT_EQ(std::filesystem::file_size(path), 257u * 8u);
    const auto f = read_iq32(path);
    EXPECT_EQ(f.description, "test waveform");
    EXPECT_DOUBLE_EQ(f.waveform.sample_rate_hz, 22e6);
    ASSERT_EQ(f.waveform.size(), w.size());
    for (std::size_t n = 0; n < w.size(); ++n) {
        EXPECT_EQ(f.waveform.samples[n].real(), double(float(w.samples[n].real())));
        EXPECT_EQ(f.waveform.samples[n].imag(), double(float(w.samples[n].imag())));
    }
    // Little-endian float32, I first.
    std::ifstream in(path, std::ios::binary);
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    const std::uint32_t bits = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
                               std::uint32_t(b[3]) << 24;
    EXPECT_EQ(std::bit_cast<float>(bits), float(w.samples[0].real()));
}

TEST(Iq32, Errors)
{
    const auto dir = std::filesystem::temp_directory_path() / "ctilab_iq32_test";
    std::filesystem::create_directories(dir);
    try {
        read_iq32(dir / "missing.iq32");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Io);
    }
    const auto bad = dir / "bad.iq32";
    std::ofstream(bad, std::ios::binary) << "12345";
    std::ofstream(iq32_sidecar_path(bad)) << R"({"sample_rate_hz": 4000000})";
    try {
        read_iq32(bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Schema);
    }
    std::ofstream(iq32_sidecar_path(bad)) << R"({"description": "x"})";
    EXPECT_THROW(read_iq32(bad), Error);
}
