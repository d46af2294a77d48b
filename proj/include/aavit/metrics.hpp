#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aavit/data.hpp"
#include "aavit/errors.hpp"

// Biometric evaluation: FAR, MDR, EER, HTER and the DET curve. The decision
// rule is "judged real iff score >= alpha". FAR is the fraction of attack
// samples judged real, MDR the fraction of real samples judged spoofed.
// Note on naming: some sources swap the labels "false rejection rate" /
// "false acceptance rate" for these; the formulas implemented here are the
// count ratios just described.

namespace aavit {

struct ScoreRecord {
    std::string id;
    double score = 0.0;  // liveness score in [0,1], higher = more real
    Label label = Label::real;
};

namespace detail {
struct ClassCounts {
    std::size_t n_real = 0, n_attack = 0;
};
inline ClassCounts count_classes(const std::vector<ScoreRecord>& records) {
    ClassCounts c;
    for (const auto& r : records) (r.label == Label::real ? c.n_real : c.n_attack)++;
    return c;
}
}  // namespace detail

/// False alarm rate at alpha: attacks judged real / total attacks.
inline double far(const std::vector<ScoreRecord>& records, double alpha) {
    std::size_t attacks = 0, judged_real = 0;
    for (const auto& r : records) {
        if (r.label == Label::attack) {
            ++attacks;
            if (r.score >= alpha) ++judged_real;
        }
    }
    if (attacks == 0) throw data_error("FAR undefined: no attack records");
    return static_cast<double>(judged_real) / static_cast<double>(attacks);
}

/// Miss detection rate at alpha: reals judged spoofed / total reals.
inline double mdr(const std::vector<ScoreRecord>& records, double alpha) {
    std::size_t reals = 0, judged_spoof = 0;
    for (const auto& r : records) {
        if (r.label == Label::real) {
            ++reals;
            if (r.score < alpha) ++judged_spoof;
        }
    }
    if (reals == 0) throw data_error("MDR undefined: no real records");
    return static_cast<double>(judged_spoof) / static_cast<double>(reals);
}

/// Half total error rate at alpha.
inline double hter(const std::vector<ScoreRecord>& records, double alpha) {
    return (far(records, alpha) + mdr(records, alpha)) / 2.0;
}

/// Candidate thresholds for the EER sweep: every distinct score, the
/// midpoints between adjacent distinct scores, 0, and a value above every
/// valid score.
inline std::vector<double> eer_candidate_thresholds(const std::vector<ScoreRecord>& records) {
    std::vector<double> scores;
    scores.reserve(records.size());
    for (const auto& r : records) scores.push_back(r.score);
    std::sort(scores.begin(), scores.end());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
    std::vector<double> cands;
    cands.push_back(0.0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        cands.push_back(scores[i]);
        if (i + 1 < scores.size()) cands.push_back((scores[i] + scores[i + 1]) / 2.0);
    }
    cands.push_back(1.0 + 1e-9);
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    return cands;
}

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

/// Discrete EER: sweep the candidate thresholds, keep the alpha minimizing
/// |FAR - MDR| (ties: smaller FAR+MDR, then smaller alpha), and report
/// (FAR + MDR)/2 there. At that alpha the HTER equals the EER by
/// construction.
inline EerResult eer(const std::vector<ScoreRecord>& records) {
    auto counts = detail::count_classes(records);
    if (counts.n_real == 0 || counts.n_attack == 0) {
        throw data_error("EER undefined: need both real and attack records");
    }
    double best_alpha = 0.0, best_gap = 0.0, best_total = 0.0;
    bool first = true;
    for (double alpha : eer_candidate_thresholds(records)) {
        const double f = far(records, alpha);
        const double m = mdr(records, alpha);
        const double gap = std::abs(f - m);
        const double total = f + m;
        if (first || gap < best_gap || (gap == best_gap && total < best_total)) {
            first = false;
            best_gap = gap;
            best_total = total;
            best_alpha = alpha;
        }
    }
    return {hter(records, best_alpha), best_alpha};
}

struct DetPoint {
    double threshold = 0.0;
    double far = 0.0;
    double mdr = 0.0;
};

/// DET curve on n_points thresholds evenly spanning [min score, max score].
inline std::vector<DetPoint> det_curve(const std::vector<ScoreRecord>& records,
                                       std::size_t n_points) {
    if (n_points < 2) throw contract_error("det_curve needs at least 2 points");
    auto counts = detail::count_classes(records);
    if (counts.n_real == 0 || counts.n_attack == 0) {
        throw data_error("DET undefined: need both real and attack records");
    }
    double lo = records[0].score, hi = records[0].score;
    for (const auto& r : records) {
        lo = std::min(lo, r.score);
        hi = std::max(hi, r.score);
    }
    std::vector<DetPoint> det;
    det.reserve(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        const double a = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_points - 1);
        det.push_back({a, far(records, a), mdr(records, a)});
    }
    return det;
}

/// Collapses frame records to one record per video: mean score, majority
/// label. Frame ids must resolve through the manifest.
inline std::vector<ScoreRecord> aggregate_by_video(const std::vector<ScoreRecord>& records,
                                                   const SampleManifest& manifest) {
    std::map<std::string, std::size_t> by_path;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        by_path[manifest.entries[i].path] = i;
    struct Group {
        double score_sum = 0.0;
        std::size_t n = 0, n_real = 0;
    };
    std::map<std::string, Group> groups;  // ordered: deterministic output
    for (const auto& r : records) {
        auto it = by_path.find(r.id);
        if (it == by_path.end()) throw data_error("score id '" + r.id + "' not in manifest");
        auto& g = groups[manifest.entries[it->second].video_id];
        g.score_sum += r.score;
        g.n += 1;
        if (r.label == Label::real) g.n_real += 1;
    }
    std::vector<ScoreRecord> out;
    out.reserve(groups.size());
    for (const auto& [vid, g] : groups) {
        out.push_back({vid, g.score_sum / static_cast<double>(g.n),
                       2 * g.n_real >= g.n ? Label::real : Label::attack});
    }
    return out;
}

struct EvalReport {
    double eer = 0.0;
    double threshold = 0.0;
    double hter = 0.0;
    std::vector<DetPoint> det;
    std::size_t n_real = 0, n_attack = 0;
    std::size_t n_attacks_judged_real = 0, n_reals_judged_spoof = 0;
};

inline EvalReport evaluate_scores(const std::vector<ScoreRecord>& records,
                                  std::size_t det_points = 50) {
    EvalReport rep;
    const EerResult e = eer(records);
    rep.eer = e.eer;
    rep.threshold = e.threshold;
    rep.hter = hter(records, e.threshold);
    rep.det = det_curve(records, det_points);
    auto counts = detail::count_classes(records);
    rep.n_real = counts.n_real;
    rep.n_attack = counts.n_attack;
    for (const auto& r : records) {
        if (r.label == Label::attack && r.score >= e.threshold) ++rep.n_attacks_judged_real;
        if (r.label == Label::real && r.score < e.threshold) ++rep.n_reals_judged_spoof;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Score files and reports
// ---------------------------------------------------------------------------

namespace detail {
/// Shortest round-trip decimal form; keeps score files byte-stable.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}
}  // namespace detail

inline constexpr const char* kScoreHeader = "id,score,label";

inline void write_scores(const std::filesystem::path& path,
                         const std::vector<ScoreRecord>& records) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot write score file " + path.string());
    os << kScoreHeader << "\n";
    for (const auto& r : records) {
        os << r.id << "," << detail::format_double(r.score) << "," << to_string(r.label) << "\n";
    }
}

inline std::vector<ScoreRecord> read_scores(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open score file " + path.string());
    std::string line;
    if (!std::getline(is, line) || detail::split_csv_line(line) != std::vector<std::string>{"id", "score", "label"}) {
        throw data_error(path.string() + ": bad score header, expected '" +
                         std::string(kScoreHeader) + "'");
    }
    std::vector<ScoreRecord> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 3) {
            throw data_error(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
        }
        double score = 0.0;
        auto res = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), score);
        if (res.ec != std::errc() || res.ptr != fields[1].data() + fields[1].size() ||
            !std::isfinite(score) || score < 0.0 || score > 1.0) {
            throw data_error(path.string() + ":" + std::to_string(lineno) + ": bad score '" +
                             fields[1] + "'");
        }
        out.push_back({fields[0], score, label_from_string(fields[2])});
    }
    return out;
}

inline nlohmann::json report_json(const EvalReport& rep) {
    nlohmann::json det = nlohmann::json::array();
    for (const auto& p : rep.det) {
        det.push_back({{"threshold", p.threshold}, {"far", p.far}, {"mdr", p.mdr}});
    }
    return {{"eer", rep.eer},
            {"threshold", rep.threshold},
            {"hter", rep.hter},
            {"det", det},
            {"counts",
             {{"n_real", rep.n_real},
              {"n_attack", rep.n_attack},
              {"n_attacks_judged_real", rep.n_attacks_judged_real},
              {"n_reals_judged_spoof", rep.n_reals_judged_spoof}}}};
}

inline std::string format_percent(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
    return buf;
}

/// EER table, one column per scored split (e.g. Development and Test).
inline std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& columns,
                                const std::string& model_name) {
    std::ostringstream os;
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s += std::string(w - s.size(), ' ');
        return s;
    };
    const std::size_t model_w = std::max<std::size_t>(model_name.size() + 2, 21);
    os << pad("Feature", 10) << pad("Model", model_w) << "EER (%)\n";
    os << pad("", 10) << pad("", model_w);
    for (std::size_t i = 0; i < columns.size(); ++i) {
        os << (i + 1 < columns.size() ? pad(columns[i].first, 13) : columns[i].first);
    }
    os << "\n" << pad("Raw RGB", 10) << pad(model_name, model_w);
    for (std::size_t i = 0; i < columns.size(); ++i) {
        const std::string v = format_percent(columns[i].second.eer);
        os << (i + 1 < columns.size() ? pad(v, 13) : v);
    }
    os << "\n";
    return os.str();
}

/// Convenience overload: Development column when dev is present, then Test.
inline std::string report_table(const EvalReport* dev, const EvalReport& test,
                                const std::string& model_name) {
    std::vector<std::pair<std::string, EvalReport>> cols;
    if (dev) cols.emplace_back("Development", *dev);
    cols.emplace_back("Test", test);
    return report_table(cols, model_name);
}

}  // namespace aavit
