#pragma once

// Monte-Carlo experiments over class/SIR/SNR grids, metric tables with
// JSON and CSV export, and annotated packet reports.

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cti_models.hpp"
#include "json_util.hpp"
#include "parallel.hpp"
#include "scenes.hpp"

namespace ctilab {

inline constexpr int kPlanSchemaVersion = 1;
inline constexpr int kMetricsSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Packet reports

struct PacketCell
{
    std::size_t index = 0;
    int nibble = 0;
    int hamming = 0;
    bool corrupted = false;
    Cause cause = Cause::Clean;
    std::optional<InterfererKind> cls; // set on Cti cells once differentiated
    std::optional<int> post_nibble;
    std::optional<int> post_hamming;
    bool combined = false;
};

struct PacketReport
{
    std::size_t offset = 0;
    int length_byte = 0;
    bool sfd_ok = false;
    bool fcs_ok = false;
    std::vector<PacketCell> cells;
    std::vector<Section> sections;
    std::optional<InterferenceClass> classification;
    std::optional<bool> post_fcs_ok;
    std::size_t recovered = 0;
    std::size_t unrecovered = 0;
    bool correlated_interference = false;
    std::vector<std::string> warnings;
};

inline PacketReport annotate_packet(const Detection& d, const std::optional<InterferenceClass>& cls = std::nullopt,
                                    const FiltrationResult* filt = nullptr)
{
    PacketReport r;
    r.offset = d.frame.offset;
    r.length_byte = d.frame.length_byte;
    r.sfd_ok = d.frame.sfd_ok;
    r.fcs_ok = d.frame.fcs_ok;
    r.classification = cls;
    for (const auto& v : d.verdicts) {
        PacketCell c;
        c.index = v.index;
        c.nibble = v.decode.symbol;
        c.hamming = v.decode.hamming;
        c.corrupted = v.corrupted;
        c.cause = v.cause;
        if (cls && v.cause == Cause::Cti)
            c.cls = cls->label;
        r.cells.push_back(c);
    }
    if (!d.verdicts.empty())
        r.sections = partition_packet(d.verdicts);
    if (filt) {
        for (const auto& fs : filt->symbols)
            if (fs.index < r.cells.size()) {
                auto& c = r.cells[fs.index];
                c.post_nibble = fs.post_symbol;
                c.post_hamming = fs.post_hamming;
                c.combined = fs.combined;
            }
        r.post_fcs_ok = filt->post.fcs_ok;
        r.recovered = filt->recovered;
        r.unrecovered = filt->unrecovered;
        r.correlated_interference = filt->correlated_interference;
        r.warnings = filt->warnings;
    }
    return r;
}

inline Json classification_to_json(const InterferenceClass& c)
{
    Json j;
    j["label"] = std::string(to_string(c.label));
    j["score_margin"] = c.score_margin;
    j["low_confidence"] = c.low_confidence;
    j["stage"] = c.stage;
    Json ed;
    for (std::size_t k = 0; k < 4; ++k)
        ed[std::string(to_string(kInterfererClasses[k]))] = c.envelope_distance[k];
    j["envelope_distance"] = ed;
    j["phase_distance"] = {{"bluetooth", c.phase_distance[0]}, {"zigbee", c.phase_distance[1]}};
    j["features"] = feature_to_json(c.features);
    return j;
}

inline Json report_to_json(const PacketReport& r)
{
    Json j;
    j["schema_version"] = kReportSchemaVersion;
    j["offset"] = r.offset;
    j["length_byte"] = r.length_byte;
    j["sfd_ok"] = r.sfd_ok;
    j["fcs_ok"] = r.fcs_ok;
    Json cells = Json::array();
    for (const auto& c : r.cells) {
        Json x;
        x["index"] = c.index;
        char hex[2] = {"0123456789abcdef"[c.nibble & 0xF], 0};
        x["nibble"] = std::string(hex);
        x["hamming"] = c.hamming;
        x["corrupted"] = c.corrupted;
        x["cause"] = std::string(to_string(c.cause));
        x["class"] = c.cls ? Json(std::string(to_string(*c.cls))) : Json(nullptr);
        if (c.post_nibble) {
            char ph[2] = {"0123456789abcdef"[*c.post_nibble & 0xF], 0};
            x["combined"] = c.combined;
            x["post_nibble"] = std::string(ph);
            x["post_hamming"] = *c.post_hamming;
        }
        cells.push_back(std::move(x));
    }
    j["cells"] = cells;
    Json sec = Json::array();
    for (const auto& s : r.sections)
        sec.push_back({{"first", s.first}, {"last", s.last}, {"kind", s.corrupted ? "corrupted" : "correct"}});
    j["sections"] = sec;
    j["classification"] = r.classification ? classification_to_json(*r.classification) : Json(nullptr);
    if (r.post_fcs_ok) {
        j["filtration"] = {{"post_fcs_ok", *r.post_fcs_ok},
                           {"recovered", r.recovered},
                           {"unrecovered", r.unrecovered},
                           {"correlated_interference", r.correlated_interference},
                           {"warnings", r.warnings}};
    }
    return j;
}

/// Fixed-width rendering, 16 symbols per block:
///   sym   symbol index
///   hex   decoded nibble
///   ham   Hamming distance to the nearest PN sequence
///   flag  . clean, S sync error, C CTI, ? unknown
///   cls   b/g/B/Z for the differentiated class of CTI symbols
///   post  nibble and Hamming after filtration (combined windows only)
inline std::string render_text(const PacketReport& r)
{
    std::ostringstream os;
    os << "frame offset " << r.offset << "  length " << r.length_byte << "  sfd " << (r.sfd_ok ? "ok" : "bad")
       << "  fcs " << (r.fcs_ok ? "ok" : "bad") << '\n';
    if (r.classification)
        os << "interference " << to_string(r.classification->label) << "  margin " << r.classification->score_margin
           << (r.classification->low_confidence ? "  (low confidence)" : "") << '\n';
    auto cls_char = [](const PacketCell& c) {
        if (!c.cls)
            return ' ';
        switch (*c.cls) {
        case InterfererKind::Wifi11b: return 'b';
        case InterfererKind::Wifi11g: return 'g';
        case InterfererKind::Bluetooth: return 'B';
        case InterfererKind::Zigbee: return 'Z';
        default: return ' ';
        }
    };
    auto flag_char = [](const PacketCell& c) {
        switch (c.cause) {
        case Cause::Clean: return '.';
        case Cause::SyncError: return 'S';
        case Cause::Cti: return 'C';
        case Cause::Unknown: return '?';
        }
        return '?';
    };
    const bool post = !r.cells.empty() && r.cells.front().post_nibble.has_value();
    char buf[16];
    for (std::size_t start = 0; start < r.cells.size(); start += 16) {
        const std::size_t end = std::min(start + 16, r.cells.size());
        std::string sym = "sym ", hex = "hex ", ham = "ham ", flag = "flag", cls = "cls ", ph = "post", phm = "pham";
        for (std::size_t k = start; k < end; ++k) {
            const auto& c = r.cells[k];
            std::snprintf(buf, sizeof buf, "%4zu", c.index);
            sym += buf;
            std::snprintf(buf, sizeof buf, "%4x", c.nibble);
            hex += buf;
            std::snprintf(buf, sizeof buf, "%4d", c.hamming);
            ham += buf;
            flag += std::string(3, ' ') + flag_char(c);
            cls += std::string(3, ' ') + cls_char(c);
            if (post && c.combined) {
                std::snprintf(buf, sizeof buf, "%4x", *c.post_nibble);
                ph += buf;
                std::snprintf(buf, sizeof buf, "%4d", *c.post_hamming);
                phm += buf;
            } else {
                ph += "   -";
                phm += "   -";
            }
        }
        os << '\n' << sym << '\n' << hex << '\n' << ham << '\n' << flag << '\n' << cls << '\n';
        if (post)
            os << ph << '\n' << phm << '\n';
    }
    os << "\nsections\n";
    for (const auto& s : r.sections) {
        std::snprintf(buf, sizeof buf, "%4zu", s.first);
        os << "  " << buf;
        std::snprintf(buf, sizeof buf, "%4zu", s.last);
        os << " .." << buf << "  " << (s.corrupted ? "corrupted" : "correct") << '\n';
    }
    if (r.post_fcs_ok)
        os << "filtration: recovered " << r.recovered << ", unrecovered " << r.unrecovered << ", fcs "
           << (*r.post_fcs_ok ? "ok" : "bad") << (r.correlated_interference ? ", correlated interference" : "")
           << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Plans

struct ExperimentPlan
{
    std::vector<InterfererKind> classes;
    std::vector<double> sir_grid_db;
    std::vector<double> snr_grid_db;
    std::size_t trials_per_cell = 1;
    std::uint64_t base_seed = 0;
    SceneRecipe scene_template;
    // Filtration runs when copies >= 2.
    std::size_t copies = 0;
    double delay_jitter_s = 0.0;
    bool independent_interference = true;
    FiltrationOptions filtration;
};

inline constexpr std::size_t kMaxGridPoints = 4096;

inline void validate(const ExperimentPlan& p)
{
    require(!p.classes.empty(), "plan: classes must not be empty");
    require(!p.sir_grid_db.empty() && !p.snr_grid_db.empty(), "plan: SIR and SNR grids must not be empty");
    require(p.sir_grid_db.size() < kMaxGridPoints && p.snr_grid_db.size() < kMaxGridPoints,
            "plan: grids are limited to 4095 points");
    require(p.trials_per_cell >= 1 && p.trials_per_cell <= 0xFFFFFFFFu, "plan: trials_per_cell must be >= 1");
    for (std::size_t i = 0; i < p.classes.size(); ++i)
        for (std::size_t j = i + 1; j < p.classes.size(); ++j)
            require(p.classes[i] != p.classes[j], "plan: duplicate class");
}

/// Seed of trial t in cell (kind, sir index, snr index). The key packs the
/// four indices into disjoint bit fields; splitmix64 is a bijection, so
/// distinct keys never share a seed for a given base.
inline std::uint64_t trial_seed(std::uint64_t base, InterfererKind kind, std::size_t sir_index,
                                std::size_t snr_index, std::size_t trial)
{
    const std::uint64_t key = (std::uint64_t(kind) << 56) | (std::uint64_t(sir_index) << 44) |
                              (std::uint64_t(snr_index) << 32) | std::uint64_t(trial & 0xFFFFFFFFu);
    return splitmix64(key ^ splitmix64(base));
}

inline Json plan_to_json(const ExperimentPlan& p)
{
    Json j;
    j["schema_version"] = kPlanSchemaVersion;
    Json cls = Json::array();
    for (auto k : p.classes)
        cls.push_back(std::string(to_string(k)));
    j["classes"] = cls;
    j["sir_grid_db"] = p.sir_grid_db;
    j["snr_grid_db"] = p.snr_grid_db;
    j["trials_per_cell"] = p.trials_per_cell;
    j["base_seed"] = p.base_seed;
    j["scene_template"] = recipe_to_json(p.scene_template);
    j["filtration"] = {{"copies", p.copies},
                       {"delay_jitter_s", p.delay_jitter_s},
                       {"independent_interference", p.independent_interference},
                       {"select", std::string(to_string(p.filtration.select))},
                       {"class_gate", p.filtration.class_gate ? std::string(to_string(*p.filtration.class_gate))
                                                              : std::string("any")}};
    return j;
}

inline ExperimentPlan plan_from_json(const Json& j)
{
    if (!j.is_object())
        fail(ErrorKind::Schema, "plan must be a JSON object");
    const int version = json_field<int>(j, "schema_version", "");
    if (version != kPlanSchemaVersion)
        fail(ErrorKind::Schema, "plan schema_version " + std::to_string(version) + " is not supported");
    ExperimentPlan p;
    for (const auto& name : json_field<std::vector<std::string>>(j, "classes", "")) {
        try {
            p.classes.push_back(interferer_kind_from_string(name));
        } catch (const Error& e) {
            fail(ErrorKind::Schema, std::string("field 'classes': ") + e.what());
        }
    }
    p.sir_grid_db = json_field<std::vector<double>>(j, "sir_grid_db", "");
    p.snr_grid_db = json_field<std::vector<double>>(j, "snr_grid_db", "");
    p.trials_per_cell = json_field<std::size_t>(j, "trials_per_cell", "");
    p.base_seed = json_field<std::uint64_t>(j, "base_seed", "");
    if (j.contains("scene_template"))
        p.scene_template = recipe_from_json(j.at("scene_template"), "scene_template");
    if (j.contains("filtration")) {
        const auto& f = json_object(j, "filtration", "");
        if (f.contains("copies"))
            p.copies = json_field<std::size_t>(f, "copies", "filtration");
        if (f.contains("delay_jitter_s"))
            p.delay_jitter_s = json_field<double>(f, "delay_jitter_s", "filtration");
        if (f.contains("independent_interference"))
            p.independent_interference = json_field<bool>(f, "independent_interference", "filtration");
        try {
            if (f.contains("select"))
                p.filtration.select = filtration_select_from_string(json_field<std::string>(f, "select", "filtration"));
            if (f.contains("class_gate")) {
                const auto g = json_field<std::string>(f, "class_gate", "filtration");
                if (g == "any")
                    p.filtration.class_gate.reset();
                else
                    p.filtration.class_gate = interferer_kind_from_string(g);
            }
        } catch (const Error& e) {
            fail(ErrorKind::Schema, std::string("field 'filtration': ") + e.what());
        }
    }
    try {
        validate(p);
    } catch (const Error& e) {
        fail(ErrorKind::Schema, e.what());
    }
    return p;
}

// ---------------------------------------------------------------------------
// Metrics

/// Raw counts for one (SIR, SNR) cell. Rates are derived on export.
struct CellCounts
{
    double sir_db = 0.0;
    double snr_db = 0.0;
    std::size_t trials = 0;
    std::size_t failed_trials = 0;
    // Cti as the positive class; only fully overlapped symbols count as
    // true Cti, partially grazed ones are not scored.
    std::size_t cti_tp = 0, cti_fp = 0, cti_fn = 0;
    // SyncError as the positive class over corrupted symbols.
    std::size_t sync_tp = 0, sync_fp = 0, sync_fn = 0;
    std::size_t non_cti_symbols = 0, false_cti = 0;
    std::size_t clean_symbols = 0, false_corruption = 0;
    std::array<std::array<std::size_t, 4>, 4> confusion{}; // [true][predicted]
    std::array<std::size_t, 4> undecided{};                // no Cti symbol found
    std::size_t filt_symbols = 0, pre_errors = 0, post_errors = 0;
    std::size_t failed_packets = 0, recovered_packets = 0;

    bool operator==(const CellCounts&) const = default;
};

struct TrialFailure
{
    std::string kind;
    double sir_db = 0.0;
    double snr_db = 0.0;
    std::size_t trial = 0;
    std::string error;

    bool operator==(const TrialFailure&) const = default;
};

struct MetricsTable
{
    std::vector<CellCounts> cells;
    std::vector<TrialFailure> failures;

    bool operator==(const MetricsTable&) const = default;
};

/// Metric names in CSV order; each cell contributes one row per name.
inline const std::vector<std::string>& metric_names()
{
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v = {"trials",         "failed_trials",         "cti_precision",
                                      "cti_recall",     "sync_precision",        "sync_recall",
                                      "false_cti_rate", "false_corruption_rate"};
        for (auto k : kInterfererClasses)
            v.push_back("accuracy_" + std::string(to_string(k)));
        for (auto t : kInterfererClasses)
            for (auto p : kInterfererClasses)
                v.push_back("confusion_" + std::string(to_string(t)) + "_as_" + std::string(to_string(p)));
        for (auto k : kInterfererClasses)
            v.push_back("undecided_" + std::string(to_string(k)));
        v.insert(v.end(), {"pre_filtration_ser", "post_filtration_ser", "packet_recovery_rate"});
        return v;
    }();
    return names;
}

/// Metric values of a cell in metric_names() order; undefined rates
/// (zero denominators) are nullopt.
inline std::vector<std::optional<double>> metric_values(const CellCounts& c)
{
    auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
        if (den == 0)
            return std::nullopt;
        return double(num) / double(den);
    };
    std::vector<std::optional<double>> v = {double(c.trials),
                                            double(c.failed_trials),
                                            ratio(c.cti_tp, c.cti_tp + c.cti_fp),
                                            ratio(c.cti_tp, c.cti_tp + c.cti_fn),
                                            ratio(c.sync_tp, c.sync_tp + c.sync_fp),
                                            ratio(c.sync_tp, c.sync_tp + c.sync_fn),
                                            ratio(c.false_cti, c.non_cti_symbols),
                                            ratio(c.false_corruption, c.clean_symbols)};
    for (std::size_t t = 0; t < 4; ++t) {
        std::size_t row = c.undecided[t];
        for (auto n : c.confusion[t])
            row += n;
        v.push_back(ratio(c.confusion[t][t], row));
    }
    for (const auto& row : c.confusion)
        for (auto n : row)
            v.push_back(double(n));
    for (auto n : c.undecided)
        v.push_back(double(n));
    v.push_back(ratio(c.pre_errors, c.filt_symbols));
    v.push_back(ratio(c.post_errors, c.filt_symbols));
    v.push_back(ratio(c.recovered_packets, c.failed_packets));
    return v;
}

inline Json metrics_to_json(const MetricsTable& m)
{
    Json j;
    j["schema_version"] = kMetricsSchemaVersion;
    Json cells = Json::array();
    for (const auto& c : m.cells) {
        Json x;
        x["sir_db"] = c.sir_db;
        x["snr_db"] = c.snr_db;
        Json counts;
        counts["trials"] = c.trials;
        counts["failed_trials"] = c.failed_trials;
        counts["cti"] = {c.cti_tp, c.cti_fp, c.cti_fn};
        counts["sync"] = {c.sync_tp, c.sync_fp, c.sync_fn};
        counts["non_cti_symbols"] = c.non_cti_symbols;
        counts["false_cti"] = c.false_cti;
        counts["clean_symbols"] = c.clean_symbols;
        counts["false_corruption"] = c.false_corruption;
        counts["confusion"] = c.confusion;
        counts["undecided"] = c.undecided;
        counts["filtration"] = {c.filt_symbols, c.pre_errors, c.post_errors, c.failed_packets, c.recovered_packets};
        x["counts"] = counts;
        Json rates;
        const auto vals = metric_values(c);
        const auto& names = metric_names();
        for (std::size_t i = 0; i < names.size(); ++i)
            rates[names[i]] = vals[i] ? Json(*vals[i]) : Json(nullptr);
        x["metrics"] = rates;
        cells.push_back(std::move(x));
    }
    j["cells"] = cells;
    Json f = Json::array();
    for (const auto& t : m.failures)
        f.push_back(
            {{"kind", t.kind}, {"sir_db", t.sir_db}, {"snr_db", t.snr_db}, {"trial", t.trial}, {"error", t.error}});
    j["failures"] = f;
    return j;
}

inline MetricsTable metrics_from_json(const Json& j)
{
    const int version = json_field<int>(j, "schema_version", "");
    if (version != kMetricsSchemaVersion)
        fail(ErrorKind::Schema, "metrics schema_version " + std::to_string(version) + " is not supported");
    MetricsTable m;
    const auto cells = json_field<Json>(j, "cells", "");
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const std::string ctx = "cells[" + std::to_string(i) + "]";
        const auto& x = cells[i];
        CellCounts c;
        c.sir_db = json_field<double>(x, "sir_db", ctx);
        c.snr_db = json_field<double>(x, "snr_db", ctx);
        const auto& k = json_object(x, "counts", ctx);
        const std::string kc = ctx + ".counts";
        c.trials = json_field<std::size_t>(k, "trials", kc);
        c.failed_trials = json_field<std::size_t>(k, "failed_trials", kc);
        const auto cti = json_field<std::array<std::size_t, 3>>(k, "cti", kc);
        c.cti_tp = cti[0], c.cti_fp = cti[1], c.cti_fn = cti[2];
        const auto sync = json_field<std::array<std::size_t, 3>>(k, "sync", kc);
        c.sync_tp = sync[0], c.sync_fp = sync[1], c.sync_fn = sync[2];
        c.non_cti_symbols = json_field<std::size_t>(k, "non_cti_symbols", kc);
        c.false_cti = json_field<std::size_t>(k, "false_cti", kc);
        c.clean_symbols = json_field<std::size_t>(k, "clean_symbols", kc);
        c.false_corruption = json_field<std::size_t>(k, "false_corruption", kc);
        c.confusion = json_field<std::array<std::array<std::size_t, 4>, 4>>(k, "confusion", kc);
        c.undecided = json_field<std::array<std::size_t, 4>>(k, "undecided", kc);
        const auto f = json_field<std::array<std::size_t, 5>>(k, "filtration", kc);
        c.filt_symbols = f[0], c.pre_errors = f[1], c.post_errors = f[2], c.failed_packets = f[3],
        c.recovered_packets = f[4];
        m.cells.push_back(c);
    }
    if (j.contains("failures"))
        for (const auto& t : j.at("failures"))
            m.failures.push_back({json_field<std::string>(t, "kind", "failures"),
                                  json_field<double>(t, "sir_db", "failures"),
                                  json_field<double>(t, "snr_db", "failures"),
                                  json_field<std::size_t>(t, "trial", "failures"),
                                  json_field<std::string>(t, "error", "failures")});
    return m;
}

/// Long format: sir_db,snr_db,metric,value. Undefined rates leave value empty.
inline std::string metrics_to_csv(const MetricsTable& m)
{
    std::string out = "sir_db,snr_db,metric,value\n";
    const auto& names = metric_names();
    for (const auto& c : m.cells) {
        const auto vals = metric_values(c);
        const std::string prefix = Json(c.sir_db).dump() + "," + Json(c.snr_db).dump() + ",";
        for (std::size_t i = 0; i < names.size(); ++i)
            out += prefix + names[i] + "," + (vals[i] ? Json(*vals[i]).dump() : std::string()) + "\n";
    }
    return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::Io, "cannot open for writing: " + path.string());
    out << text;
    if (!out)
        fail(ErrorKind::Io, "write failed: " + path.string());
}

/// Writes metrics.json and metrics.csv into `dir`, creating it if needed.
inline void export_tables(const MetricsTable& m, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        fail(ErrorKind::Io, "cannot create directory " + dir.string() + ": " + ec.message());
    write_json_file(dir / "metrics.json", metrics_to_json(m));
    write_text_file(dir / "metrics.csv", metrics_to_csv(m));
}

// ---------------------------------------------------------------------------
// Running

struct TrialOutcome
{
    CellCounts counts; // one trial's contribution
    std::optional<Json> report;
};

struct RunOptions
{
    unsigned workers = 1;
    bool keep_reports = false;
};

struct RunResult
{
    MetricsTable table;
    // Key "kind/sir_index/snr_index/trial" -> report, in plan order.
    std::vector<std::pair<std::string, Json>> reports;
};

inline TrialOutcome run_trial(const ExperimentPlan& plan, const Calibration& cal, InterfererKind kind, double sir_db,
                              double snr_db, std::uint64_t seed, bool keep_report)
{
    TrialOutcome out;
    auto& c = out.counts;
    c.trials = 1;
    const auto scene = make_scene(plan.scene_template, kind, sir_db, snr_db, seed);
    std::vector<CollisionScene> scenes{scene};
    if (plan.copies >= 2) {
        ReseedRule rule;
        rule.seed = derive_seed(seed, 30);
        rule.delay_jitter_s = plan.delay_jitter_s;
        rule.fresh_interferer = plan.independent_interference;
        scenes = retransmission_scenes(scene, plan.copies, rule);
    }
    std::vector<ReceivedBaseband> rx;
    for (const auto& s : scenes)
        rx.push_back(mix(s));

    const auto det = detect(rx[0], cal.detection);
    for (const auto& v : det.verdicts) {
        if (v.index >= rx[0].truth.size())
            break;
        const auto& t = rx[0].truth[v.index];
        const bool full = t.label == TruthLabel::CtiOverlap && t.overlap_fraction >= 1.0;
        const bool partial = t.label == TruthLabel::CtiOverlap && !full;
        const bool said_cti = v.cause == Cause::Cti;
        if (!partial) {
            if (full && said_cti)
                ++c.cti_tp;
            else if (full)
                ++c.cti_fn;
            else if (said_cti)
                ++c.cti_fp;
        }
        if (t.label != TruthLabel::CtiOverlap) {
            ++c.non_cti_symbols;
            c.false_cti += said_cti;
        }
        if (t.label == TruthLabel::Clean) {
            ++c.clean_symbols;
            c.false_corruption += v.corrupted;
        }
        if (v.corrupted && !partial) {
            const bool said_sync = v.cause == Cause::SyncError;
            if (t.label == TruthLabel::SyncErrorOnly)
                said_sync ? ++c.sync_tp : ++c.sync_fn;
            else if (said_sync)
                ++c.sync_fp;
        }
    }

    std::optional<InterferenceClass> cls;
    if (!cti_symbols(det).empty())
        cls = differentiate(rx[0].waveform, det, cal.templates);
    const int truth_class = class_index(kind);
    if (truth_class >= 0) {
        if (cls)
            ++c.confusion[std::size_t(truth_class)][std::size_t(class_index(cls->label))];
        else
            ++c.undecided[std::size_t(truth_class)];
    }

    std::optional<FiltrationResult> filt;
    if (plan.copies >= 2) {
        std::vector<IqWaveform> waves;
        for (const auto& r : rx)
            waves.push_back(r.waveform);
        filt = filtrate(waves, cal, plan.filtration);
        const auto truth_symbols = scene.victim_frame.symbols();
        const auto& pre = det.verdicts;
        for (std::size_t k = 0; k < truth_symbols.size() && k < filt->symbols.size() && k < pre.size(); ++k) {
            ++c.filt_symbols;
            c.pre_errors += pre[k].decode.symbol != truth_symbols[k];
            c.post_errors += filt->symbols[k].post_symbol != truth_symbols[k];
        }
        if (!det.frame.fcs_ok) {
            ++c.failed_packets;
            c.recovered_packets += filt->post.fcs_ok;
        }
    }
    if (keep_report)
        out.report = report_to_json(annotate_packet(det, cls, filt ? &*filt : nullptr));
    return out;
}

inline void accumulate(CellCounts& into, const CellCounts& c)
{
    into.trials += c.trials;
    into.failed_trials += c.failed_trials;
    into.cti_tp += c.cti_tp, into.cti_fp += c.cti_fp, into.cti_fn += c.cti_fn;
    into.sync_tp += c.sync_tp, into.sync_fp += c.sync_fp, into.sync_fn += c.sync_fn;
    into.non_cti_symbols += c.non_cti_symbols, into.false_cti += c.false_cti;
    into.clean_symbols += c.clean_symbols, into.false_corruption += c.false_corruption;
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t p = 0; p < 4; ++p)
            into.confusion[t][p] += c.confusion[t][p];
        into.undecided[t] += c.undecided[t];
    }
    into.filt_symbols += c.filt_symbols, into.pre_errors += c.pre_errors, into.post_errors += c.post_errors;
    into.failed_packets += c.failed_packets, into.recovered_packets += c.recovered_packets;
}

/// Every (class, SIR, SNR, trial) runs as an independent task; the table is
/// reduced in plan order, so it does not depend on the worker count.
inline RunResult run_plan(const ExperimentPlan& plan, const Calibration& cal, const RunOptions& opt = {})
{
    validate(plan);
    const std::size_t n_sir = plan.sir_grid_db.size(), n_snr = plan.snr_grid_db.size();
    const std::size_t n_cls = plan.classes.size(), n_t = plan.trials_per_cell;
    const std::size_t total = n_sir * n_snr * n_cls * n_t;
    struct Key
    {
        std::size_t si, ni, ci, t;
    };
    auto key = [&](std::size_t i) {
        return Key{i / (n_snr * n_cls * n_t), i / (n_cls * n_t) % n_snr, i / n_t % n_cls, i % n_t};
    };
    const auto results = parallel_map<TrialOutcome>(total, opt.workers, [&](std::size_t i) {
        const auto k = key(i);
        const auto kind = plan.classes[k.ci];
        return run_trial(plan, cal, kind, plan.sir_grid_db[k.si], plan.snr_grid_db[k.ni],
                         trial_seed(plan.base_seed, kind, k.si, k.ni, k.t), opt.keep_reports);
    });

    RunResult out;
    for (std::size_t si = 0; si < n_sir; ++si)
        for (std::size_t ni = 0; ni < n_snr; ++ni) {
            CellCounts cell;
            cell.sir_db = plan.sir_grid_db[si];
            cell.snr_db = plan.snr_grid_db[ni];
            out.table.cells.push_back(cell);
        }
    for (std::size_t i = 0; i < total; ++i) {
        const auto k = key(i);
        auto& cell = out.table.cells[k.si * n_snr + k.ni];
        const auto kind = plan.classes[k.ci];
        if (results[i].value) {
            accumulate(cell, results[i].value->counts);
            if (results[i].value->report)
                out.reports.emplace_back(std::string(to_string(kind)) + "_sir" + std::to_string(k.si) + "_snr" +
                                             std::to_string(k.ni) + "_t" + std::to_string(k.t),
                                         *results[i].value->report);
        } else {
            ++cell.trials;
            ++cell.failed_trials;
            out.table.failures.push_back({std::string(to_string(kind)), plan.sir_grid_db[k.si],
                                          plan.snr_grid_db[k.ni], k.t, results[i].error});
        }
    }
    return out;
}

} // namespace ctilab
