#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aavit/data.hpp"
#include "aavit/errors.hpp"
#include "aavit/metrics.hpp"
#include "aavit/model.hpp"
#include "aavit/synth.hpp"
#include "aavit/trainer.hpp"

// Command implementations behind the aavit binary: synth, train, eval,
// report, ablate. Everything here is a library call so tests can drive the
// commands in-process; the binary is a thin argv adapter.
//
// Exit codes: 0 success, 2 configuration error (bad flags, bad config file,
// bad hyperparameters), 3 data error (missing/malformed inputs, unwritable
// outputs), 4 numeric abort (non-finite values), 1 anything unexpected.

namespace aavit {

struct RunSpec {
    std::string command;
    std::filesystem::path config_path;
    std::filesystem::path manifest_path;
    std::filesystem::path out_dir;
    std::vector<std::string> overrides;  // dotted key=value, e.g. model.depth=2
    std::optional<std::uint64_t> seed;

    // eval
    std::filesystem::path checkpoint;
    std::string split = "auto";  // auto = dev (if present) + test
    bool per_video = false;

    // report
    std::filesystem::path scores;
    std::filesystem::path scores_dev;

    // train / ablate
    bool select_best_dev = false;

    // synth
    std::size_t synth_count = 64;
    std::size_t synth_count_dev = 32;
    std::size_t synth_count_test = 32;
    std::size_t synth_size = 32;
};

// ---------------------------------------------------------------------------
// Config files and overrides
// ---------------------------------------------------------------------------

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    nlohmann::json raw;  // post-override JSON, embedded into run metadata
};

namespace detail {

inline void apply_override(nlohmann::json& root, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw config_error("override '" + kv + "' is not of the form key=value");
    }
    const std::string key = kv.substr(0, eq);
    const std::string raw_value = kv.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw_value);
    } catch (const nlohmann::json::exception&) {
        value = raw_value;  // unquoted strings pass through
    }
    nlohmann::json* node = &root;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot - start);
        if (part.empty()) throw config_error("override key '" + key + "' has an empty segment");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

}  // namespace detail

/// Reads the JSON config {"model": {...}, "train": {...}}, applies dotted
/// overrides, then the seed override (which pins both model.seed and
/// train.seed).
inline RunConfig load_run_config(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides,
                                 std::optional<std::uint64_t> seed) {
    std::ifstream is(path);
    if (!is) throw config_error("config file not found: " + path.string());
    nlohmann::json raw;
    try {
        raw = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw config_error("cannot parse config " + path.string() + ": " + e.what());
    }
    for (const auto& kv : overrides) detail::apply_override(raw, kv);
    if (seed) {
        raw["model"]["seed"] = *seed;
        raw["train"]["seed"] = *seed;
    }
    for (const auto& [key, val] : raw.items()) {
        if (key != "model" && key != "train") {
            throw config_error("unknown config section '" + key + "' in " + path.string());
        }
    }
    RunConfig cfg;
    cfg.model = ModelConfig::from_json(raw.value("model", nlohmann::json::object()));
    cfg.train = TrainConfig::from_json(raw.value("train", nlohmann::json::object()));
    cfg.raw = raw;
    return cfg;
}

namespace detail {

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot write " + path.string());
    os << j.dump(2) << "\n";
}

inline void ensure_out_dir(const std::filesystem::path& out_dir) {
    if (out_dir.empty()) throw config_error("--out is required");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw data_error("cannot create " + out_dir.string() + ": " + ec.message());
}

/// Run metadata common to every command; no timestamps so artifacts hash
/// stably.
inline nlohmann::json run_metadata(const RunSpec& spec) {
    nlohmann::json j{{"command", spec.command},
                     {"format_versions",
                      {{"checkpoint", kCheckpointVersion},
                       {"manifest_header", kManifestHeader},
                       {"score_header", kScoreHeader}}}};
    if (spec.seed) j["seed"] = *spec.seed;
    if (!spec.overrides.empty()) j["overrides"] = spec.overrides;
    return j;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void run_synth(const RunSpec& spec) {
    detail::ensure_out_dir(spec.out_dir);
    SynthSpec s;
    s.per_class_train = spec.synth_count;
    s.per_class_dev = spec.synth_count_dev;
    s.per_class_test = spec.synth_count_test;
    s.image_size = spec.synth_size;
    s.seed = spec.seed.value_or(s.seed);
    SampleManifest m = synth_corpus(spec.out_dir, s);
    nlohmann::json meta = detail::run_metadata(spec);
    meta["synth"] = {{"per_class_train", s.per_class_train},
                     {"per_class_dev", s.per_class_dev},
                     {"per_class_test", s.per_class_test},
                     {"image_size", s.image_size},
                     {"seed", s.seed}};
    meta["outputs"] = {{"manifest", "manifest.csv"}, {"images", m.entries.size()}};
    detail::write_json(spec.out_dir / "run.json", meta);
    std::cout << m.summary_table();
}

inline TrainResult run_train(const RunSpec& spec) {
    RunConfig cfg = load_run_config(spec.config_path, spec.overrides, spec.seed);
    if (spec.manifest_path.empty()) throw config_error("--manifest is required");
    SampleManifest manifest = load_manifest(spec.manifest_path);
    detail::ensure_out_dir(spec.out_dir);
    TrainResult result =
        train(cfg.model, cfg.train, manifest, spec.out_dir, {spec.select_best_dev});
    nlohmann::json meta = detail::run_metadata(spec);
    meta["config"] = {{"model", cfg.model.to_json()}, {"train", cfg.train.to_json()}};
    meta["batch_order_hash"] = detail::hash_hex(result.batch_order_hash);
    meta["outputs"] = {{"final_checkpoint", result.final_checkpoint.filename().string()},
                       {"selected_checkpoint", result.selected_checkpoint.filename().string()},
                       {"loss_history", "loss.csv"}};
    if (result.best_dev_eer) meta["best_dev_eer"] = *result.best_dev_eer;
    detail::write_json(spec.out_dir / "run.json", meta);
    return result;
}

namespace detail {

struct SplitScores {
    std::string column;  // "Development" / "Test" / "Train"
    std::string key;     // json key: dev / test / train
    std::vector<ScoreRecord> records;
};

/// Shared by eval/report/ablate: writes report.json + report.txt (and echoes
/// the table to stdout when wanted).
inline nlohmann::json emit_report(const std::filesystem::path& out_dir,
                                  const std::vector<SplitScores>& splits,
                                  const std::string& model_name, bool per_video,
                                  const SampleManifest* manifest) {
    nlohmann::json js{{"model", model_name}, {"splits", nlohmann::json::object()}};
    std::vector<std::pair<std::string, EvalReport>> columns;
    for (const auto& s : splits) {
        std::vector<ScoreRecord> records = s.records;
        if (per_video) {
            if (!manifest) throw config_error("--per-video needs --manifest");
            records = aggregate_by_video(records, *manifest);
        }
        EvalReport rep = evaluate_scores(records);
        js["splits"][s.key] = report_json(rep);
        columns.emplace_back(s.column, rep);
    }
    write_json(out_dir / "report.json", js);
    std::ofstream os(out_dir / "report.txt");
    if (!os) throw data_error("cannot write " + (out_dir / "report.txt").string());
    os << report_table(columns, model_name);
    return js;
}

}  // namespace detail

inline nlohmann::json run_eval(const RunSpec& spec) {
    if (spec.checkpoint.empty()) throw config_error("--checkpoint is required");
    if (spec.manifest_path.empty()) throw config_error("--manifest is required");
    SampleManifest manifest = load_manifest(spec.manifest_path);
    detail::ensure_out_dir(spec.out_dir);
    Checkpoint ckpt = load_checkpoint(spec.checkpoint);

    std::vector<Split> wanted;
    if (spec.split == "auto") {
        if (!manifest.split_indices(Split::dev).empty()) wanted.push_back(Split::dev);
        if (!manifest.split_indices(Split::test).empty()) wanted.push_back(Split::test);
        if (wanted.empty()) throw data_error("manifest has neither dev nor test samples");
    } else {
        wanted.push_back(split_from_string(spec.split));
    }

    std::vector<detail::SplitScores> scored;
    for (Split s : wanted) {
        detail::SplitScores ss;
        ss.key = to_string(s);
        ss.column = s == Split::dev ? "Development" : (s == Split::test ? "Test" : "Train");
        ss.records = score_split(ckpt.config, ckpt.params, manifest, s);
        if (ss.records.empty()) throw data_error("split '" + ss.key + "' is empty");
        write_scores(spec.out_dir / ("scores_" + ss.key + ".csv"), ss.records);
        if (spec.per_video) {
            write_scores(spec.out_dir / ("scores_" + ss.key + "_by_video.csv"),
                         aggregate_by_video(ss.records, manifest));
        }
        scored.push_back(std::move(ss));
    }
    const std::string model_name = display_name(ckpt.config.head_kind);
    nlohmann::json report = detail::emit_report(spec.out_dir, scored, model_name,
                                                spec.per_video, &manifest);
    nlohmann::json meta = detail::run_metadata(spec);
    meta["checkpoint_config"] = ckpt.config.to_json();
    meta["outputs"] = {{"report", "report.json"}};
    detail::write_json(spec.out_dir / "run.json", meta);
    std::ifstream table(spec.out_dir / "report.txt");
    std::cout << table.rdbuf();
    return report;
}

inline nlohmann::json run_report(const RunSpec& spec) {
    if (spec.scores.empty()) throw config_error("--scores is required");
    detail::ensure_out_dir(spec.out_dir);
    std::optional<SampleManifest> manifest;
    if (!spec.manifest_path.empty()) manifest = load_manifest(spec.manifest_path);
    std::vector<detail::SplitScores> scored;
    if (!spec.scores_dev.empty()) {
        scored.push_back({"Development", "dev", read_scores(spec.scores_dev)});
    }
    scored.push_back({"Test", "test", read_scores(spec.scores)});
    nlohmann::json report =
        detail::emit_report(spec.out_dir, scored, "scores", spec.per_video,
                            manifest ? &*manifest : nullptr);
    detail::write_json(spec.out_dir / "run.json", detail::run_metadata(spec));
    std::ifstream table(spec.out_dir / "report.txt");
    std::cout << table.rdbuf();
    return report;
}

/// Trains the three head variants with identical seeds and batch orders,
/// evaluates each on the test split, and writes the three-row comparison.
inline nlohmann::json run_ablation(const RunSpec& spec) {
    RunConfig base = load_run_config(spec.config_path, spec.overrides, spec.seed);
    if (spec.manifest_path.empty()) throw config_error("--manifest is required");
    SampleManifest manifest = load_manifest(spec.manifest_path);
    detail::ensure_out_dir(spec.out_dir);

    static constexpr HeadKind kOrder[3] = {HeadKind::aamlp, HeadKind::aamlp_no_attention,
                                           HeadKind::baseline_vit};
    nlohmann::json rows = nlohmann::json::array();
    std::vector<std::uint64_t> hashes;
    std::vector<double> eers;
    for (HeadKind kind : kOrder) {
        ModelConfig mc = base.model;
        mc.head_kind = kind;
        const std::filesystem::path run_dir = spec.out_dir / to_string(kind);
        TrainResult tr = train(mc, base.train, manifest, run_dir, {spec.select_best_dev});
        std::vector<ScoreRecord> records = evaluate(tr.selected_checkpoint, manifest, Split::test);
        write_scores(run_dir / "scores_test.csv", records);
        const EerResult e = eer(records);
        hashes.push_back(tr.batch_order_hash);
        eers.push_back(e.eer);
        rows.push_back({{"model", display_name(kind)},
                        {"head_kind", to_string(kind)},
                        {"eer", e.eer},
                        {"threshold", e.threshold},
                        {"batch_order_hash", detail::hash_hex(tr.batch_order_hash)},
                        {"run_dir", to_string(kind)}});
    }
    for (std::size_t i = 1; i < hashes.size(); ++i) {
        if (hashes[i] != hashes[0]) {
            throw contract_error("ablation batch orders diverged between variants");
        }
    }

    nlohmann::json meta = detail::run_metadata(spec);
    meta["config"] = {{"model", base.model.to_json()}, {"train", base.train.to_json()}};
    nlohmann::json report{{"rows", rows},
                          {"batch_order_hash", detail::hash_hex(hashes[0])},
                          {"run", meta}};
    detail::write_json(spec.out_dir / "ablation.json", report);

    std::ostringstream table;
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s += std::string(w - s.size(), ' ');
        return s;
    };
    table << pad("Feature", 10) << pad("Model", 22) << "EER (%)\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        table << pad(i == 0 ? "Raw RGB" : "", 10)
              << pad(rows[i]["model"].get<std::string>(), 22)
              << format_percent(eers[i]) << "\n";
    }
    std::ofstream os(spec.out_dir / "ablation.txt");
    if (!os) throw data_error("cannot write " + (spec.out_dir / "ablation.txt").string());
    os << table.str();
    std::cout << table.str();
    return report;
}

/// Maps library errors onto documented exit codes.
template <typename F>
int guarded(F&& body) {
    try {
        body();
        return 0;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const shape_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const contract_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}

inline int run_command(const RunSpec& spec) {
    return guarded([&] {
        if (spec.command == "synth") run_synth(spec);
        else if (spec.command == "train") run_train(spec);
        else if (spec.command == "eval") run_eval(spec);
        else if (spec.command == "report") run_report(spec);
        else if (spec.command == "ablate") run_ablation(spec);
        else throw config_error("unknown command '" + spec.command + "'");
    });
}

}  // namespace aavit
