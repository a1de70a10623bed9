#pragma once

// CTI detection, differentiation and filtration, plus the calibration run
// that fits their thresholds and class templates.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "channel.hpp"
#include "features.hpp"
#include "json_util.hpp"
#include "parallel.hpp"
#include "scenes.hpp"
#include "zigbee_phy.hpp"

namespace ctilab {

inline constexpr int kCalibrationSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Detection

struct DetectionConfig
{
    int hamming_threshold = 4;
    double randomness_threshold = 0.3;
    std::size_t window_symbols = 1;
};

inline void validate(const DetectionConfig& c)
{
    require(c.hamming_threshold >= 1 && c.hamming_threshold <= 32, "hamming_threshold must lie in [1, 32]");
    require(std::isfinite(c.randomness_threshold) && c.randomness_threshold > 0.0,
            "randomness_threshold must be positive");
    require(c.window_symbols >= 1, "window_symbols must be at least 1");
}

enum class Cause { Clean, SyncError, Cti, Unknown };

inline std::string_view to_string(Cause c) noexcept
{
    switch (c) {
    case Cause::Clean: return "clean";
    case Cause::SyncError: return "sync_error";
    case Cause::Cti: return "cti";
    case Cause::Unknown: return "unknown";
    }
    return "unknown";
}

struct SymbolVerdict
{
    std::size_t index = 0;
    SymbolDecode decode;
    bool corrupted = false;
    Cause cause = Cause::Clean;
    FeatureVector features;
};

struct Detection
{
    FrameDecode frame;
    std::vector<SymbolVerdict> verdicts;
};

/// Symbol indices of the feature window for symbol k: `window` symbols
/// centered on k, shifted to stay inside [0, n).
inline std::vector<std::size_t> feature_window(std::size_t k, std::size_t n, std::size_t window)
{
    window = std::min(window, n);
    std::size_t first = k >= window / 2 ? k - window / 2 : 0;
    first = std::min(first, n - window);
    std::vector<std::size_t> idx(window);
    std::iota(idx.begin(), idx.end(), first);
    return idx;
}

inline Detection detect_frame(const IqWaveform& w, FrameDecode frame, const DetectionConfig& cfg)
{
    validate(cfg);
    Detection out;
    const std::size_t n = frame.symbols.size();
    out.verdicts.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        SymbolVerdict v;
        v.index = k;
        v.decode = frame.symbols[k];
        v.corrupted = v.decode.hamming > cfg.hamming_threshold;
        try {
            const auto idx = feature_window(k, n, cfg.window_symbols);
            v.features = features_over_windows(w, frame.offset, idx);
            if (v.corrupted)
                v.cause = v.features.phase_dev_var > cfg.randomness_threshold ? Cause::Cti : Cause::SyncError;
        } catch (const Error&) {
            v.cause = v.corrupted ? Cause::Unknown : Cause::Clean;
        }
        out.verdicts.push_back(std::move(v));
    }
    out.frame = std::move(frame);
    return out;
}

/// Align, decode and classify every symbol of the frame.
inline Detection detect(const IqWaveform& w, const DetectionConfig& cfg)
{
    return detect_frame(w, decode_frame(w), cfg);
}

inline Detection detect(const ReceivedBaseband& rx, const DetectionConfig& cfg) { return detect(rx.waveform, cfg); }

struct Section
{
    std::size_t first = 0;
    std::size_t last = 0; // inclusive
    bool corrupted = false;
};

/// Maximal runs of corrupted / uncorrupted symbols.
inline std::vector<Section> partition_packet(std::span<const SymbolVerdict> verdicts)
{
    require(!verdicts.empty(), "partition_packet: no verdicts");
    std::vector<Section> out;
    for (std::size_t k = 0; k < verdicts.size(); ++k) {
        const bool c = verdicts[k].corrupted;
        if (out.empty() || out.back().corrupted != c)
            out.push_back({k, k, c});
        else
            out.back().last = k;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Differentiation

struct EnvelopeScales
{
    double periodicity = 1.0;
    double var_norm = 1.0;
    double phase_spread = 1.0;
};

struct Templates
{
    std::array<FeatureVector, 4> classes{}; // kInterfererClasses order
    FeatureVector clean{};
    EnvelopeScales scales;
    double low_confidence_distance = 1.0;
};

struct InterferenceClass
{
    InterfererKind label = InterfererKind::Wifi11b;
    double score_margin = 0.0;
    bool low_confidence = false;
    std::string stage;                            // "envelope" or "phase"
    std::array<double, 4> envelope_distance{};    // per class, in template-scale units
    std::array<double, 2> phase_distance{};       // TV distance to Bluetooth, Zigbee
    FeatureVector features;
};

inline double envelope_distance(const FeatureVector& f, const FeatureVector& t, const EnvelopeScales& s) noexcept
{
    const double a = (f.rssi_periodicity - t.rssi_periodicity) / s.periodicity;
    const double b = (f.rssi_var_norm - t.rssi_var_norm) / s.var_norm;
    const double c = (f.phase_spread - t.phase_spread) / s.phase_spread;
    return std::sqrt(a * a + b * b + c * c);
}

/// Two-stage nearest template. Stage one picks 802.11b, 802.11g or the
/// constant-envelope group from the envelope features; stage two splits
/// the group by phase-histogram TV distance. Ties go to the earlier class.
inline InterferenceClass classify(const FeatureVector& f, const Templates& t)
{
    InterferenceClass out;
    out.features = f;
    for (std::size_t c = 0; c < 4; ++c)
        out.envelope_distance[c] = envelope_distance(f, t.classes[c], t.scales);
    out.phase_distance = {tv_distance(f.phase_hist, t.classes[2].phase_hist),
                          tv_distance(f.phase_hist, t.classes[3].phase_hist)};

    const std::array<double, 3> group = {out.envelope_distance[0], out.envelope_distance[1],
                                         std::min(out.envelope_distance[2], out.envelope_distance[3])};
    std::size_t best = 0;
    for (std::size_t g = 1; g < 3; ++g)
        if (group[g] < group[best])
            best = g;
    double runner = INFINITY;
    for (std::size_t g = 0; g < 3; ++g)
        if (g != best)
            runner = std::min(runner, group[g]);

    if (best < 2) {
        out.stage = "envelope";
        out.label = kInterfererClasses[best];
        out.score_margin = runner - group[best];
    } else {
        out.stage = "phase";
        const bool bt = out.phase_distance[0] <= out.phase_distance[1];
        out.label = bt ? InterfererKind::Bluetooth : InterfererKind::Zigbee;
        out.score_margin = std::abs(out.phase_distance[0] - out.phase_distance[1]);
    }
    out.low_confidence = group[best] > t.low_confidence_distance;
    return out;
}

/// Classify the interference from the features of the listed symbol windows.
inline InterferenceClass differentiate_windows(const IqWaveform& w, std::size_t offset,
                                               std::span<const std::size_t> symbols, const Templates& t)
{
    if (symbols.empty())
        fail(ErrorKind::InvalidArgument, "differentiate: no Cti-labeled symbols");
    return classify(features_over_windows(w, offset, symbols), t);
}

inline std::vector<std::size_t> cti_symbols(const Detection& d)
{
    std::vector<std::size_t> idx;
    for (const auto& v : d.verdicts)
        if (v.cause == Cause::Cti)
            idx.push_back(v.index);
    return idx;
}

inline InterferenceClass differentiate(const IqWaveform& w, const Detection& d, const Templates& t)
{
    const auto idx = cti_symbols(d);
    return differentiate_windows(w, d.frame.offset, idx, t);
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationSettings
{
    std::uint64_t seed = 0x5eed0001;
    std::size_t clean_trials = 100;
    std::size_t sync_trials = 100;
    std::size_t class_trials = 100;
    std::vector<double> sir_grid_db = {0.0};
    double snr_db = 15.0;
    SceneRecipe recipe;
    double sync_offset_min_chips = 0.2;
    double sync_offset_max_chips = 0.5;
    double sync_drift_max_ppm = 400.0;
    double false_corruption_target = 0.01;
    double min_class_accuracy = 0.9;
    std::size_t window_symbols = 1;
    std::string date = "unspecified";
    unsigned workers = 1; // not part of the output
};

struct Calibration
{
    DetectionConfig detection;
    Templates templates;
    Json separation = Json::object();
    Json seed_manifest = Json::object();
    Json settings = Json::object();
    std::vector<std::string> warnings;
    std::string date;
};

/// Threshold where the share of `low` above it equals the share of `high`
/// at or below it. Plateaus of equal error resolve to their midpoint.
inline double equal_error_threshold(std::vector<double> low, std::vector<double> high)
{
    require(!low.empty() && !high.empty(), "equal_error_threshold: empty population");
    std::sort(low.begin(), low.end());
    std::sort(high.begin(), high.end());
    std::vector<double> all(low);
    all.insert(all.end(), high.begin(), high.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    auto rates = [&](double thr) {
        const double fl = double(low.end() - std::upper_bound(low.begin(), low.end(), thr)) / double(low.size());
        const double fh = double(std::upper_bound(high.begin(), high.end(), thr) - high.begin()) / double(high.size());
        return std::pair{fl, fh};
    };
    // Candidates: each distinct value; the threshold then sits between it
    // and the next value up.
    double best_gap = INFINITY, best_sum = INFINITY;
    std::size_t first = 0, last = 0;
    for (std::size_t i = 0; i < all.size(); ++i) {
        const auto [fl, fh] = rates(all[i]);
        const double gap = std::abs(fl - fh), sum = fl + fh;
        if (gap < best_gap - 1e-15 || (std::abs(gap - best_gap) <= 1e-15 && sum < best_sum - 1e-15)) {
            best_gap = gap;
            best_sum = sum;
            first = last = i;
        } else if (std::abs(gap - best_gap) <= 1e-15 && std::abs(sum - best_sum) <= 1e-15 && last + 1 == i) {
            last = i;
        }
    }
    const double lo = all[first];
    const double hi = last + 1 < all.size() ? all[last + 1] : all[last];
    return 0.5 * (lo + hi);
}

namespace detail {

struct SymbolStat
{
    int hamming = 0;
    double phase_dev_var = 0.0;
    bool full_overlap = false;
};

struct TrialStats
{
    std::vector<SymbolStat> symbols;
    std::optional<FeatureVector> clean_features;
};

inline TrialStats symbol_stats(const ReceivedBaseband& rx, bool want_clean_features)
{
    TrialStats out;
    const auto frame = decode_frame(rx.waveform);
    for (std::size_t k = 0; k < frame.symbols.size(); ++k) {
        SymbolStat s;
        s.hamming = frame.symbols[k].hamming;
        const std::size_t idx[1] = {k};
        s.phase_dev_var = features_over_windows(rx.waveform, frame.offset, idx).phase_dev_var;
        s.full_overlap = k < rx.truth.size() && rx.truth[k].label == TruthLabel::CtiOverlap &&
                         rx.truth[k].overlap_fraction >= 1.0;
        out.symbols.push_back(s);
    }
    if (want_clean_features) {
        std::vector<std::size_t> idx;
        for (std::size_t k = kHeaderSymbols; k < frame.symbols.size(); ++k)
            idx.push_back(k);
        if (!idx.empty())
            out.clean_features = features_over_windows(rx.waveform, frame.offset, idx);
    }
    return out;
}

inline FeatureVector mean_features(const std::vector<FeatureVector>& v)
{
    FeatureVector m;
    if (v.empty())
        return m;
    double lag = 0.0;
    for (const auto& f : v) {
        m.rssi_mean += f.rssi_mean;
        m.rssi_var_norm += f.rssi_var_norm;
        m.rssi_periodicity += f.rssi_periodicity;
        m.phase_dev_var += f.phase_dev_var;
        m.phase_spread += f.phase_spread;
        lag += f.rssi_period_lag;
        for (std::size_t b = 0; b < kPhaseBins; ++b)
            m.phase_hist[b] += f.phase_hist[b];
    }
    const double n = double(v.size());
    m.rssi_mean /= n;
    m.rssi_var_norm /= n;
    m.rssi_periodicity /= n;
    m.phase_dev_var /= n;
    m.phase_spread /= n;
    m.rssi_period_lag = int(std::lround(lag / n));
    for (auto& b : m.phase_hist)
        b /= n;
    return m;
}

inline double mean_of(const std::vector<double>& v)
{
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

} // namespace detail

inline Json calibration_settings_to_json(const CalibrationSettings& s)
{
    Json j;
    j["seed"] = s.seed;
    j["clean_trials"] = s.clean_trials;
    j["sync_trials"] = s.sync_trials;
    j["class_trials"] = s.class_trials;
    j["sir_grid_db"] = s.sir_grid_db;
    j["snr_db"] = s.snr_db;
    j["recipe"] = recipe_to_json(s.recipe);
    j["sync_offset_chips"] = {s.sync_offset_min_chips, s.sync_offset_max_chips};
    j["sync_drift_max_ppm"] = s.sync_drift_max_ppm;
    j["window_symbols"] = s.window_symbols;
    return j;
}

/// Seed of trial `trial` in calibration population `population`.
inline std::uint64_t calibration_seed(std::uint64_t base, std::uint64_t population, std::size_t trial)
{
    return derive_seed(derive_seed(base, population), trial);
}

/// Fit thresholds and templates on a fixed-seed scene suite. Problems with
/// the fit are returned in `warnings` rather than thrown.
inline Calibration calibrate(const CalibrationSettings& s)
{
    require(s.clean_trials >= 1 && s.sync_trials >= 1 && s.class_trials >= 1, "calibrate: trial counts must be >= 1");
    require(!s.sir_grid_db.empty(), "calibrate: empty SIR grid");
    Calibration cal;
    cal.date = s.date;
    cal.settings = calibration_settings_to_json(s);
    cal.detection.window_symbols = s.window_symbols;

    constexpr std::uint64_t kCleanPop = 1, kSyncPop = 2, kClassPop = 16;
    auto class_pop = [&](std::size_t c, std::size_t si) { return kClassPop + 16 * c + si; };
    Json pops = Json::array();
    pops.push_back({{"name", "clean"}, {"seed", derive_seed(s.seed, kCleanPop)}, {"trials", s.clean_trials},
                    {"snr_db", s.snr_db}});
    pops.push_back({{"name", "sync_error"}, {"seed", derive_seed(s.seed, kSyncPop)}, {"trials", s.sync_trials},
                    {"snr_db", s.snr_db}});
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t si = 0; si < s.sir_grid_db.size(); ++si)
            pops.push_back({{"name", std::string(to_string(kInterfererClasses[c]))},
                            {"seed", derive_seed(s.seed, class_pop(c, si))},
                            {"trials", s.class_trials},
                            {"sir_db", s.sir_grid_db[si]},
                            {"snr_db", s.snr_db}});
    cal.seed_manifest = {{"base_seed", s.seed}, {"populations", pops}};

    SceneRecipe clean_recipe = s.recipe;
    clean_recipe.timing_offset_chips = 0.0;
    clean_recipe.sampling_drift_ppm = 0.0;

    auto clean_scene = [&](std::size_t t) {
        return make_scene(clean_recipe, InterfererKind::None, 0.0, s.snr_db, calibration_seed(s.seed, kCleanPop, t));
    };
    auto sync_scene = [&](std::size_t t) {
        const auto seed = calibration_seed(s.seed, kSyncPop, t);
        auto sc = make_scene(clean_recipe, InterfererKind::None, 0.0, s.snr_db, seed);
        Rng rng(derive_seed(seed, 20));
        const double off = rng.uniform(s.sync_offset_min_chips, s.sync_offset_max_chips);
        sc.timing_offset_chips = rng.bit() ? off : -off;
        sc.sampling_drift_ppm = rng.uniform(-s.sync_drift_max_ppm, s.sync_drift_max_ppm);
        return sc;
    };
    const std::size_t n_cells = 4 * s.sir_grid_db.size();
    auto class_scene = [&](std::size_t i) {
        const std::size_t cell = i / s.class_trials, t = i % s.class_trials;
        const std::size_t c = cell / s.sir_grid_db.size(), si = cell % s.sir_grid_db.size();
        return std::pair{c, make_scene(clean_recipe, kInterfererClasses[c], s.sir_grid_db[si], s.snr_db,
                                       calibration_seed(s.seed, class_pop(c, si), t))};
    };

    auto failures = [&](const auto& results, const char* what) {
        for (std::size_t i = 0; i < results.size(); ++i)
            if (!results[i].value)
                cal.warnings.push_back(std::string(what) + " trial " + std::to_string(i) + " failed: " +
                                       results[i].error);
    };

    // Pass 1: raw symbol statistics.
    const auto clean = parallel_map<detail::TrialStats>(
        s.clean_trials, s.workers, [&](std::size_t t) { return detail::symbol_stats(mix(clean_scene(t)), true); });
    const auto sync = parallel_map<detail::TrialStats>(
        s.sync_trials, s.workers, [&](std::size_t t) { return detail::symbol_stats(mix(sync_scene(t)), false); });
    const auto cls = parallel_map<detail::TrialStats>(n_cells * s.class_trials, s.workers, [&](std::size_t i) {
        return detail::symbol_stats(mix(class_scene(i).second), false);
    });
    failures(clean, "clean");
    failures(sync, "sync_error");
    failures(cls, "class");

    // Hamming threshold: smallest t >= 1 with at most the target share of
    // clean symbols above it.
    std::vector<int> clean_h;
    std::vector<FeatureVector> clean_feats;
    for (const auto& r : clean)
        if (r.value) {
            for (const auto& sym : r.value->symbols)
                clean_h.push_back(sym.hamming);
            if (r.value->clean_features)
                clean_feats.push_back(*r.value->clean_features);
        }
    require(!clean_h.empty(), "calibrate: no usable clean trials");
    int t_fit = -1;
    double false_rate = 1.0;
    for (int t = 1; t <= 32; ++t) {
        const auto above = std::count_if(clean_h.begin(), clean_h.end(), [&](int h) { return h > t; });
        false_rate = double(above) / double(clean_h.size());
        if (false_rate <= s.false_corruption_target) {
            t_fit = t;
            break;
        }
    }
    if (t_fit < 0) {
        t_fit = 32;
        cal.warnings.push_back("insufficient separation: no hamming threshold meets the false-corruption target");
    }
    cal.detection.hamming_threshold = t_fit;

    // Randomness threshold: equal-error point between the phase-deviation
    // variance of sync-corrupted and fully overlapped CTI symbols.
    std::vector<double> sync_pdv, cti_pdv;
    for (const auto& r : sync)
        if (r.value)
            for (const auto& sym : r.value->symbols)
                if (sym.hamming > t_fit)
                    sync_pdv.push_back(sym.phase_dev_var);
    for (const auto& r : cls)
        if (r.value)
            for (const auto& sym : r.value->symbols)
                if (sym.full_overlap && sym.hamming > t_fit)
                    cti_pdv.push_back(sym.phase_dev_var);
    if (sync_pdv.empty() || cti_pdv.empty()) {
        cal.warnings.push_back("insufficient separation: empty sync-error or CTI population");
        cal.detection.randomness_threshold = 0.3;
    } else {
        cal.detection.randomness_threshold = equal_error_threshold(sync_pdv, cti_pdv);
    }
    const double thr = cal.detection.randomness_threshold;
    const double sync_err = sync_pdv.empty() ? 1.0
                                             : double(std::count_if(sync_pdv.begin(), sync_pdv.end(),
                                                                    [&](double v) { return v > thr; })) /
                                                   double(sync_pdv.size());
    const double cti_err = cti_pdv.empty() ? 1.0
                                           : double(std::count_if(cti_pdv.begin(), cti_pdv.end(),
                                                                  [&](double v) { return v <= thr; })) /
                                                 double(cti_pdv.size());

    // Pass 2: differentiation features through the fitted detector.
    const DetectionConfig cfg = cal.detection;
    const auto feats = parallel_map<std::optional<FeatureVector>>(
        n_cells * s.class_trials, s.workers, [&](std::size_t i) -> std::optional<FeatureVector> {
            const auto rx = mix(class_scene(i).second);
            const auto d = detect(rx, cfg);
            const auto idx = cti_symbols(d);
            if (idx.empty())
                return std::nullopt;
            return features_over_windows(rx.waveform, d.frame.offset, idx);
        });
    std::array<std::vector<FeatureVector>, 4> per_class;
    std::array<std::size_t, 4> undecided{};
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const std::size_t c = i / s.class_trials / s.sir_grid_db.size();
        if (feats[i].value && *feats[i].value)
            per_class[c].push_back(**feats[i].value);
        else
            ++undecided[c];
    }

    auto& tm = cal.templates;
    for (std::size_t c = 0; c < 4; ++c) {
        if (per_class[c].empty())
            cal.warnings.push_back("insufficient separation: no Cti symbols detected for " +
                                   std::string(to_string(kInterfererClasses[c])));
        tm.classes[c] = detail::mean_features(per_class[c]);
    }
    tm.clean = detail::mean_features(clean_feats);

    // Pooled within-class spread of each envelope feature.
    std::array<double, 3> ss{};
    std::size_t pooled = 0;
    for (std::size_t c = 0; c < 4; ++c)
        for (const auto& f : per_class[c]) {
            const auto& m = tm.classes[c];
            ss[0] += std::pow(f.rssi_periodicity - m.rssi_periodicity, 2);
            ss[1] += std::pow(f.rssi_var_norm - m.rssi_var_norm, 2);
            ss[2] += std::pow(f.phase_spread - m.phase_spread, 2);
            ++pooled;
        }
    auto spread = [&](double v) { return pooled > 4 ? std::max(std::sqrt(v / double(pooled - 4)), 1e-6) : 1.0; };
    tm.scales = {spread(ss[0]), spread(ss[1]), spread(ss[2])};

    // Training accuracy and the confidence radius.
    tm.low_confidence_distance = 0.0;
    std::array<double, 4> accuracy{};
    for (std::size_t c = 0; c < 4; ++c) {
        std::size_t hit = 0;
        for (const auto& f : per_class[c]) {
            tm.low_confidence_distance =
                std::max(tm.low_confidence_distance, envelope_distance(f, tm.classes[c], tm.scales));
            Templates probe = tm;
            probe.low_confidence_distance = INFINITY;
            hit += classify(f, probe).label == kInterfererClasses[c];
        }
        const std::size_t total = per_class[c].size() + undecided[c];
        accuracy[c] = total ? double(hit) / double(total) : 0.0;
        if (accuracy[c] < s.min_class_accuracy)
            cal.warnings.push_back("insufficient separation: training accuracy for " +
                                   std::string(to_string(kInterfererClasses[c])) + " is " +
                                   std::to_string(accuracy[c]));
    }
    if (!(tm.low_confidence_distance > 0.0))
        tm.low_confidence_distance = 1.0;

    // Separation report.
    auto mean_feature = [&](std::size_t c, double FeatureVector::* field) {
        std::vector<double> v;
        for (const auto& f : per_class[c])
            v.push_back(f.*field);
        return detail::mean_of(v);
    };
    const double per_b = mean_feature(0, &FeatureVector::rssi_periodicity);
    const double per_g = mean_feature(1, &FeatureVector::rssi_periodicity);
    const double vn_b = mean_feature(0, &FeatureVector::rssi_var_norm);
    const double vn_g = mean_feature(1, &FeatureVector::rssi_var_norm);
    const double tv_bt_clean = tv_distance(tm.classes[2].phase_hist, tm.clean.phase_hist);
    const double tv_zb_clean = tv_distance(tm.classes[3].phase_hist, tm.clean.phase_hist);
    Json sep;
    sep["wifi11b_periodic"] = {{"wifi11b_periodicity", per_b},
                               {"wifi11g_periodicity", per_g},
                               {"margin_in_scale_units", (per_b - per_g) / tm.scales.periodicity}};
    sep["wifi11g_aperiodic_high_variance"] = {{"wifi11g_var_norm", vn_g},
                                              {"wifi11b_var_norm", vn_b},
                                              {"margin_in_scale_units", (vn_g - vn_b) / tm.scales.var_norm}};
    sep["bluetooth_phase_distribution"] = {
        {"bluetooth_tv_to_clean", tv_bt_clean},
        {"zigbee_tv_to_clean", tv_zb_clean},
        {"bluetooth_tv_to_zigbee", tv_distance(tm.classes[2].phase_hist, tm.classes[3].phase_hist)},
        {"margin", tv_bt_clean - tv_zb_clean}};
    sep["detection"] = {{"clean_false_corruption", false_rate},
                        {"sync_error_population", sync_pdv.size()},
                        {"cti_population", cti_pdv.size()},
                        {"sync_error_mean_phase_dev_var", detail::mean_of(sync_pdv)},
                        {"cti_mean_phase_dev_var", detail::mean_of(cti_pdv)},
                        {"sync_error_rate_at_threshold", sync_err},
                        {"cti_error_rate_at_threshold", cti_err}};
    Json acc;
    for (std::size_t c = 0; c < 4; ++c)
        acc[std::string(to_string(kInterfererClasses[c]))] = accuracy[c];
    sep["training_accuracy"] = acc;
    cal.separation = sep;

    if (per_b - per_g <= 0.0)
        cal.warnings.push_back("insufficient separation: 802.11b is not more periodic than 802.11g");
    if (vn_g - vn_b <= 0.0)
        cal.warnings.push_back("insufficient separation: 802.11g envelope variance does not exceed 802.11b");
    if (tv_bt_clean - tv_zb_clean <= 0.0)
        cal.warnings.push_back("insufficient separation: Bluetooth phase histogram is not farther from clean "
                               "ZigBee than the ZigBee interferer's");
    if (std::max(sync_err, cti_err) > 0.1)
        cal.warnings.push_back("insufficient separation: sync-error/CTI equal-error rate above 10%");
    return cal;
}

// ---------------------------------------------------------------------------
// Calibration file

inline Json calibration_to_json(const Calibration& c)
{
    Json j;
    j["schema_version"] = kCalibrationSchemaVersion;
    j["calibration_date"] = c.date;
    j["thresholds"] = {{"hamming_threshold", c.detection.hamming_threshold},
                       {"randomness_threshold", c.detection.randomness_threshold},
                       {"window_symbols", c.detection.window_symbols}};
    Json tmpl;
    for (std::size_t k = 0; k < 4; ++k)
        tmpl[std::string(to_string(kInterfererClasses[k]))] = feature_to_json(c.templates.classes[k]);
    j["templates"] = tmpl;
    j["clean_template"] = feature_to_json(c.templates.clean);
    j["envelope_scales"] = {{"periodicity", c.templates.scales.periodicity},
                            {"var_norm", c.templates.scales.var_norm},
                            {"phase_spread", c.templates.scales.phase_spread}};
    j["low_confidence_distance"] = c.templates.low_confidence_distance;
    j["separation"] = c.separation;
    j["warnings"] = c.warnings;
    j["seed_manifest"] = c.seed_manifest;
    j["settings"] = c.settings;
    return j;
}

inline Calibration calibration_from_json(const Json& j)
{
    const int version = json_field<int>(j, "schema_version", "");
    if (version != kCalibrationSchemaVersion)
        fail(ErrorKind::Schema, "calibration schema_version " + std::to_string(version) + " is not supported");
    Calibration c;
    c.date = json_field<std::string>(j, "calibration_date", "");
    const auto& th = json_object(j, "thresholds", "");
    c.detection.hamming_threshold = json_field<int>(th, "hamming_threshold", "thresholds");
    c.detection.randomness_threshold = json_field<double>(th, "randomness_threshold", "thresholds");
    c.detection.window_symbols = json_field<std::size_t>(th, "window_symbols", "thresholds");
    try {
        validate(c.detection);
    } catch (const Error& e) {
        fail(ErrorKind::Schema, std::string("calibration thresholds: ") + e.what());
    }
    const auto& tmpl = json_object(j, "templates", "");
    for (std::size_t k = 0; k < 4; ++k) {
        const std::string name(to_string(kInterfererClasses[k]));
        c.templates.classes[k] = feature_from_json(json_object(tmpl, name, "templates"), "templates." + name);
    }
    c.templates.clean = feature_from_json(json_object(j, "clean_template", ""), "clean_template");
    const auto& sc = json_object(j, "envelope_scales", "");
    c.templates.scales.periodicity = json_field<double>(sc, "periodicity", "envelope_scales");
    c.templates.scales.var_norm = json_field<double>(sc, "var_norm", "envelope_scales");
    c.templates.scales.phase_spread = json_field<double>(sc, "phase_spread", "envelope_scales");
    if (!(c.templates.scales.periodicity > 0.0 && c.templates.scales.var_norm > 0.0 &&
          c.templates.scales.phase_spread > 0.0))
        fail(ErrorKind::Schema, "field 'envelope_scales' entries must be positive");
    c.templates.low_confidence_distance = json_field<double>(j, "low_confidence_distance", "");
    c.separation = j.value("separation", Json::object());
    c.seed_manifest = j.value("seed_manifest", Json::object());
    c.settings = j.value("settings", Json::object());
    if (j.contains("warnings"))
        c.warnings = json_field<std::vector<std::string>>(j, "warnings", "");
    return c;
}

// ---------------------------------------------------------------------------
// Filtration

enum class FiltrationSelect { CtiWindows, Corrupted, All };

inline std::string_view to_string(FiltrationSelect s) noexcept
{
    switch (s) {
    case FiltrationSelect::CtiWindows: return "cti";
    case FiltrationSelect::Corrupted: return "corrupted";
    case FiltrationSelect::All: return "all";
    }
    return "cti";
}

inline FiltrationSelect filtration_select_from_string(std::string_view s)
{
    for (auto v : {FiltrationSelect::CtiWindows, FiltrationSelect::Corrupted, FiltrationSelect::All})
        if (s == to_string(v))
            return v;
    fail(ErrorKind::InvalidArgument, "unknown selection '" + std::string(s) + "' (expected cti|corrupted|all)");
}

struct FiltrationOptions
{
    FiltrationSelect select = FiltrationSelect::CtiWindows;
    // Only copies classified as this kind contribute window selections.
    // Ignored when select is All.
    std::optional<InterfererKind> class_gate = InterfererKind::Wifi11g;
    // Spread-to-excess power ratio below which the copies are taken to
    // carry the same interference.
    double correlated_ratio = 0.5;
};

struct FiltrationSymbol
{
    std::size_t index = 0;
    bool combined = false;
    std::vector<int> pre_hamming; // per kept copy
    int pre_symbol = 0;           // first kept copy
    int post_hamming = 0;
    int post_symbol = 0;
    bool recovered = false;
};

struct FiltrationResult
{
    std::vector<std::size_t> kept_copies;
    std::vector<std::string> warnings;
    std::vector<std::optional<InterferenceClass>> copy_classes;
    std::vector<Detection> copy_detections;
    std::vector<FiltrationSymbol> symbols;
    std::size_t combined_windows = 0;
    std::size_t recovered = 0;
    std::size_t unrecovered = 0;
    bool correlated_interference = false;
    double residual_ratio = 0.0;
    FrameDecode post;
    IqWaveform combined;
};

/// Average the aligned copies over the selected symbol windows and decode
/// the result. The first kept copy supplies every other sample.
inline FiltrationResult filtrate(std::span<const IqWaveform> copies, const Calibration& cal,
                                 const FiltrationOptions& opt = {})
{
    if (copies.size() < 2)
        fail(ErrorKind::InvalidArgument, "filtrate: needs at least 2 copies of the frame, got " +
                                             std::to_string(copies.size()));
    FiltrationResult out;
    std::vector<const IqWaveform*> kept;
    for (std::size_t i = 0; i < copies.size(); ++i) {
        try {
            out.copy_detections.push_back(detect(copies[i], cal.detection));
            out.kept_copies.push_back(i);
            kept.push_back(&copies[i]);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NoFrameFound)
                throw;
            out.warnings.push_back("copy " + std::to_string(i) + " dropped: " + e.what());
        }
    }
    const std::size_t k = kept.size();
    if (k < 2)
        fail(ErrorKind::InvalidArgument, "filtrate: fewer than 2 copies could be aligned");

    std::size_t n_sym = SIZE_MAX;
    for (const auto& d : out.copy_detections)
        n_sym = std::min(n_sym, d.verdicts.size());

    // Window selection.
    std::vector<bool> selected(n_sym, opt.select == FiltrationSelect::All);
    bool any_gated = false;
    for (std::size_t c = 0; c < k; ++c) {
        const auto& d = out.copy_detections[c];
        std::optional<InterferenceClass> cls;
        if (!cti_symbols(d).empty())
            cls = differentiate(*kept[c], d, cal.templates);
        out.copy_classes.push_back(cls);
        if (opt.select == FiltrationSelect::All)
            continue;
        if (opt.class_gate && !(cls && cls->label == *opt.class_gate))
            continue;
        any_gated = true;
        for (std::size_t s = 0; s < n_sym; ++s) {
            const auto& v = d.verdicts[s];
            if (opt.select == FiltrationSelect::CtiWindows ? v.cause == Cause::Cti : v.corrupted)
                selected[s] = true;
        }
    }
    if (opt.select != FiltrationSelect::All && !any_gated)
        out.warnings.push_back(opt.class_gate ? "no copy classified as " + std::string(to_string(*opt.class_gate)) +
                                                    "; nothing combined"
                                              : std::string("no copy has selectable windows; nothing combined"));

    // Element-wise mean over samples [base, base + 64] of each selected window.
    const std::size_t o0 = out.copy_detections[0].frame.offset;
    std::vector<IqSample> comb = kept[0]->samples;
    double spread = 0.0, window_power = 0.0;
    std::size_t spread_n = 0;
    for (std::size_t s = 0; s < n_sym; ++s) {
        if (!selected[s])
            continue;
        ++out.combined_windows;
        for (std::size_t n = 0; n <= kSamplesPerSymbol; ++n) {
            const std::size_t rel = s * kSamplesPerSymbol + n;
            bool in_range = true;
            for (std::size_t c = 0; c < k; ++c)
                in_range = in_range && out.copy_detections[c].frame.offset + rel < kept[c]->size();
            if (!in_range)
                continue;
            IqSample sum{};
            for (std::size_t c = 0; c < k; ++c)
                sum += kept[c]->samples[out.copy_detections[c].frame.offset + rel];
            const IqSample mean = sum / double(k);
            comb[o0 + rel] = mean;
            for (std::size_t c = 0; c < k; ++c) {
                const IqSample x = kept[c]->samples[out.copy_detections[c].frame.offset + rel];
                spread += std::norm(x - mean);
                window_power += std::norm(x);
            }
            spread_n += k;
        }
    }
    out.combined = IqWaveform(std::move(comb), kReceiverRateHz);

    // Correlated-interference check: independent interference leaves the
    // copies spread apart by roughly the interference power; identical
    // interference leaves only the noise.
    if (spread_n > 0) {
        std::vector<double> clean_power;
        for (const auto& d : out.copy_detections)
            for (std::size_t s = kPreambleSymbols; s < n_sym; ++s)
                if (!d.verdicts[s].corrupted && !selected[s])
                    clean_power.push_back(d.verdicts[s].features.rssi_mean);
        const double ref = detail::mean_of(clean_power);
        const double excess = window_power / double(spread_n) - ref;
        const double unbiased_spread = spread / double(spread_n) * double(k) / double(k - 1);
        if (excess > 0.0) {
            out.residual_ratio = unbiased_spread / excess;
            out.correlated_interference = out.residual_ratio < opt.correlated_ratio;
        }
    }

    // Re-decode. Header fields come from the combined waveform.
    out.post = decode_frame_at(out.combined, o0);
    for (std::size_t s = 0; s < n_sym; ++s) {
        FiltrationSymbol fs;
        fs.index = s;
        fs.combined = selected[s];
        for (const auto& d : out.copy_detections)
            fs.pre_hamming.push_back(d.verdicts[s].decode.hamming);
        fs.pre_symbol = out.copy_detections[0].verdicts[s].decode.symbol;
        const auto post = s < out.post.symbols.size() ? out.post.symbols[s]
                                                       : decode_symbol(demodulate_chips(out.combined, s, o0));
        fs.post_hamming = post.hamming;
        fs.post_symbol = post.symbol;
        if (fs.combined) {
            const bool ok = fs.post_hamming <= cal.detection.hamming_threshold;
            fs.recovered = ok && out.copy_detections[0].verdicts[s].corrupted;
            out.recovered += fs.recovered;
            out.unrecovered += !ok;
        }
        out.symbols.push_back(std::move(fs));
    }
    return out;
}

} // namespace ctilab
