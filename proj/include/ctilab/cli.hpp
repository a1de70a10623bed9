#pragma once

// The ctilab command line. run_cli is separate from main so tests can call
// it in-process. Exit codes: 0 success, 1 internal error, 2 usage or
// validation error, 3 analysis failure (no frame, nothing to classify,
// insufficient calibration separation).

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "channel.hpp"
#include "cti_models.hpp"
#include "harness.hpp"
#include "interferers.hpp"
#include "iq32.hpp"
#include "zigbee_phy.hpp"

namespace ctilab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitAnalysis = 3;

inline int exit_code_for(ErrorKind k) noexcept
{
    switch (k) {
    case ErrorKind::NoFrameFound:
    case ErrorKind::Insufficient: return kExitAnalysis;
    case ErrorKind::InvalidArgument:
    case ErrorKind::RateMismatch:
    case ErrorKind::Schema:
    case ErrorKind::Io: return kExitUsage;
    }
    return kExitInternal;
}

/// "1ms", "250us", "0.002s" or a bare number of seconds.
inline double parse_duration(const std::string& text)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        fail(ErrorKind::InvalidArgument, "bad duration '" + text + "'");
    }
    const std::string unit = text.substr(used);
    double scale = 1.0;
    if (unit == "ms")
        scale = 1e-3;
    else if (unit == "us")
        scale = 1e-6;
    else if (!unit.empty() && unit != "s")
        fail(ErrorKind::InvalidArgument, "bad duration unit '" + unit + "' (expected s, ms or us)");
    v *= scale;
    if (!(std::isfinite(v) && v > 0.0))
        fail(ErrorKind::InvalidArgument, "duration must be positive");
    return v;
}

/// YYYY-MM-DD from SOURCE_DATE_EPOCH if set, else the current UTC date.
inline std::string default_calibration_date()
{
    std::time_t t = std::time(nullptr);
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env && *env) {
        try {
            t = std::time_t(std::stoll(env));
        } catch (const std::exception&) {
            fail(ErrorKind::InvalidArgument, "SOURCE_DATE_EPOCH is not an integer");
        }
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[16];
    std::strftime(buf, sizeof buf, "%Y-%m-%d", &tm);
    return buf;
}

struct CliGlobals
{
    std::optional<std::uint64_t> seed;
    bool verbose = false;
    std::string out;
};

namespace cli_detail {

inline void require_out(const CliGlobals& g)
{
    if (g.out.empty())
        fail(ErrorKind::InvalidArgument, "--out is required");
}

inline Calibration load_calibration(const std::string& path)
{
    if (path.empty())
        fail(ErrorKind::InvalidArgument, "--calib is required (run 'ctilab calibrate' to create one)");
    return calibration_from_json(read_json_file(path));
}

} // namespace cli_detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"Cross-technology interference lab for 802.15.4 receivers", "ctilab"};
    app.require_subcommand(1);
    app.fallthrough();
    CliGlobals g;
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "Random seed");
    app.add_flag("-v,--verbose", g.verbose, "Verbose progress on stderr");
    app.add_option("--out", g.out, "Output file or directory");

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a victim frame or an interferer waveform");
    std::string gen_kind, gen_duration = "1ms", gen_payload;
    double gen_offset = 0.0;
    bool gen_dqpsk = false;
    gen->add_option("--kind", gen_kind, "zigbee|wifi11b|wifi11g|bluetooth")
        ->required()
        ->check(CLI::IsMember({"zigbee", "wifi11b", "wifi11g", "bluetooth"}));
    gen->add_option("--duration", gen_duration, "Interferer duration, e.g. 1ms (ignored for zigbee)");
    gen->add_option("--payload-hex", gen_payload, "Victim payload for --kind zigbee");
    gen->add_option("--center-offset-hz", gen_offset, "Interferer center offset");
    gen->add_flag("--dqpsk", gen_dqpsk, "802.11b at 2 Mbit/s DQPSK");

    // mix
    auto* mixc = app.add_subcommand("mix", "Run a scene through the channel");
    std::string scene_path, truth_path;
    mixc->add_option("--scene", scene_path, "Scene JSON")->required();
    mixc->add_option("--truth", truth_path, "Truth JSON (default: <out>.truth.json)");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "Detect, differentiate or filtrate CTI in received frames");
    std::vector<std::string> rx_paths;
    std::string calib_path, mode = "detect", select = "cti", gate = "wifi11g", text_out;
    analyze->add_option("--rx", rx_paths, "Received iq32 file(s); filtrate takes 2 or more")->required();
    analyze->add_option("--calib", calib_path, "Calibration JSON");
    analyze->add_option("--mode", mode, "detect|differentiate|filtrate")
        ->check(CLI::IsMember({"detect", "differentiate", "filtrate"}));
    analyze->add_option("--select", select, "Filtration windows: cti|corrupted|all")
        ->check(CLI::IsMember({"cti", "corrupted", "all"}));
    analyze->add_option("--class-gate", gate, "Only combine windows of copies of this class, or 'any'")
        ->check(CLI::IsMember({"any", "wifi11b", "wifi11g", "bluetooth", "zigbee"}));
    analyze->add_option("--text-out", text_out, "Also write the fixed-width rendering here");

    // calibrate
    auto* calibrate_cmd = app.add_subcommand("calibrate", "Fit detection thresholds and class templates");
    std::size_t cal_trials = 0;
    std::vector<double> cal_sir;
    std::string cal_date;
    unsigned workers = default_workers();
    calibrate_cmd->add_option("--trials", cal_trials, "Trials per population (default 100)");
    calibrate_cmd->add_option("--sir-grid", cal_sir, "SIR grid in dB (default 0)");
    calibrate_cmd->add_option("--date", cal_date, "Calibration date recorded in the file");
    calibrate_cmd->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

    // experiment
    auto* experiment = app.add_subcommand("experiment", "Run a Monte-Carlo experiment plan");
    std::string plan_path, exp_calib;
    bool keep_reports = false;
    experiment->add_option("--plan", plan_path, "Plan JSON")->required();
    experiment->add_option("--calib", exp_calib, "Calibration JSON")->required();
    experiment->add_flag("--keep-reports", keep_reports, "Write one packet report per trial");
    experiment->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "ctilab: " << e.what() << '\n';
        return kExitUsage;
    }
    if (seed_opt->count() > 0)
        g.seed = seed_value;
    auto log = [&](const std::string& msg) {
        if (g.verbose)
            err << msg << '\n';
    };

    try {
        if (gen->parsed()) {
            cli_detail::require_out(g);
            const std::uint64_t seed = g.seed.value_or(1);
            IqWaveform w;
            std::string desc;
            if (gen_kind == "zigbee") {
                std::vector<std::uint8_t> payload;
                if (!gen->get_option("--payload-hex")->empty()) {
                    payload = from_hex(gen_payload);
                } else {
                    Rng rng(seed);
                    payload.resize(20);
                    for (auto& b : payload)
                        b = std::uint8_t(rng.below(256));
                }
                const auto frame = build_frame(payload);
                w = modulate(frame);
                desc = "zigbee frame payload=" + to_hex(payload);
            } else {
                InterfererSpec spec;
                spec.kind = interferer_kind_from_string(gen_kind);
                spec.duration_s = parse_duration(gen_duration);
                spec.payload_seed = seed;
                spec.center_offset_hz = gen_offset;
                spec.dqpsk = gen_dqpsk;
                w = render_interferer(spec);
                desc = gen_kind + " seed=" + std::to_string(seed);
            }
            write_iq32(g.out, w, desc);
            out << "samples " << w.size() << "  sample_rate_hz " << w.sample_rate_hz << "  mean_power "
                << mean_power(w) << '\n';
            return kExitOk;
        }

        if (mixc->parsed()) {
            cli_detail::require_out(g);
            const auto scene = scene_from_json(read_json_file(scene_path));
            validate_scene(scene);
            const auto rx = mix(scene);
            const std::string tp = truth_path.empty() ? g.out + ".truth.json" : truth_path;
            write_iq32(g.out, rx.waveform, "mix of " + std::filesystem::path(scene_path).filename().string());
            Json truth;
            truth["schema_version"] = kSceneSchemaVersion;
            truth["symbols"] = truth_to_json(rx.truth);
            write_json_file(tp, truth);
            std::size_t cti = 0;
            for (const auto& t : rx.truth)
                cti += t.label == TruthLabel::CtiOverlap;
            out << "samples " << rx.waveform.size() << "  symbols " << rx.truth.size() << "  cti_overlap " << cti
                << '\n';
            return kExitOk;
        }

        if (analyze->parsed()) {
            const auto cal = cli_detail::load_calibration(calib_path);
            if (mode == "filtrate" && rx_paths.size() < 2)
                fail(ErrorKind::InvalidArgument,
                     "filtrate needs at least 2 copies of the frame: pass --rx once per retransmission");
            if (mode != "filtrate" && rx_paths.size() != 1)
                fail(ErrorKind::InvalidArgument, mode + " takes exactly one --rx file");
            std::vector<IqWaveform> waves;
            for (const auto& p : rx_paths) {
                auto f = read_iq32(p);
                if (f.waveform.sample_rate_hz != kReceiverRateHz)
                    fail(ErrorKind::RateMismatch, p + ": received baseband must be at 4 MHz");
                waves.push_back(std::move(f.waveform));
            }
            PacketReport report;
            if (mode == "filtrate") {
                FiltrationOptions opt;
                opt.select = filtration_select_from_string(select);
                if (gate == "any")
                    opt.class_gate.reset();
                else
                    opt.class_gate = interferer_kind_from_string(gate);
                const auto f = filtrate(waves, cal, opt);
                for (const auto& wmsg : f.warnings)
                    err << "warning: " << wmsg << '\n';
                const auto& d0 = f.copy_detections.front();
                report = annotate_packet(d0, f.copy_classes.front(), &f);
            } else {
                const auto d = detect(waves[0], cal.detection);
                std::optional<InterferenceClass> cls;
                if (mode == "differentiate") {
                    if (cti_symbols(d).empty())
                        fail(ErrorKind::Insufficient, "no Cti-labeled symbols to differentiate");
                    cls = differentiate(waves[0], d, cal.templates);
                }
                report = annotate_packet(d, cls);
            }
            const std::string text = render_text(report);
            if (!g.out.empty())
                write_json_file(g.out, report_to_json(report));
            if (!text_out.empty())
                write_text_file(text_out, text);
            out << text;
            return kExitOk;
        }

        if (calibrate_cmd->parsed()) {
            cli_detail::require_out(g);
            CalibrationSettings s;
            if (g.seed)
                s.seed = *g.seed;
            if (cal_trials > 0)
                s.clean_trials = s.sync_trials = s.class_trials = cal_trials;
            if (!cal_sir.empty())
                s.sir_grid_db = cal_sir;
            s.date = cal_date.empty() ? default_calibration_date() : cal_date;
            s.workers = workers;
            log("calibrating with seed " + std::to_string(s.seed));
            const auto cal = calibrate(s);
            write_json_file(g.out, calibration_to_json(cal));
            out << "hamming_threshold " << cal.detection.hamming_threshold << "  randomness_threshold "
                << cal.detection.randomness_threshold << '\n';
            for (const auto& w : cal.warnings)
                err << "warning: " << w << '\n';
            return cal.warnings.empty() ? kExitOk : kExitAnalysis;
        }

        if (experiment->parsed()) {
            cli_detail::require_out(g);
            const auto plan = plan_from_json(read_json_file(plan_path));
            const auto cal = cli_detail::load_calibration(exp_calib);
            log("running " + std::to_string(plan.classes.size() * plan.sir_grid_db.size() * plan.snr_grid_db.size() *
                                            plan.trials_per_cell) +
                " trials");
            const auto res = run_plan(plan, cal, {workers, keep_reports});
            export_tables(res.table, g.out);
            if (keep_reports) {
                const auto dir = std::filesystem::path(g.out) / "reports";
                std::filesystem::create_directories(dir);
                for (const auto& [name, j] : res.reports)
                    write_json_file(dir / (name + ".json"), j);
            }
            out << "cells " << res.table.cells.size() << "  failed trials " << res.table.failures.size() << '\n';
            for (const auto& f : res.table.failures)
                err << "trial failed: " << f.kind << " sir " << f.sir_db << " snr " << f.snr_db << " #" << f.trial
                    << ": " << f.error << '\n';
            return res.table.failures.empty() ? kExitOk : kExitInternal;
        }
    } catch (const Error& e) {
        err << "ctilab: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "ctilab: internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitUsage;
}

} // namespace ctilab
