#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aavit/errors.hpp"
#include "aavit/image.hpp"
#include "aavit/rng.hpp"
#include "aavit/tensor.hpp"

// Dataset manifests and batching. A manifest is a UTF-8 CSV with header
//   path,label,attack_type,split,video_id
// where paths are relative to the manifest file. Splits must be disjoint by
// video_id, mirroring the subject-disjoint corpus layout.

namespace aavit {

enum class Label { real, attack };
enum class AttackType { none, print, phone, table };
enum class Split { train, dev, test };

inline std::string to_string(Label l) { return l == Label::real ? "real" : "attack"; }
inline std::string to_string(AttackType a) {
    switch (a) {
        case AttackType::none: return "none";
        case AttackType::print: return "print";
        case AttackType::phone: return "phone";
        case AttackType::table: return "table";
    }
    throw contract_error("bad AttackType");
}
inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    throw contract_error("bad Split");
}

inline Label label_from_string(const std::string& s) {
    if (s == "real") return Label::real;
    if (s == "attack") return Label::attack;
    throw data_error("unknown label '" + s + "'");
}
inline AttackType attack_type_from_string(const std::string& s) {
    if (s == "none") return AttackType::none;
    if (s == "print") return AttackType::print;
    if (s == "phone") return AttackType::phone;
    if (s == "table") return AttackType::table;
    throw data_error("unknown attack_type '" + s + "'");
}
inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "dev") return Split::dev;
    if (s == "test") return Split::test;
    throw data_error("unknown split '" + s + "'");
}

/// Class index used everywhere: real = 0, attack = 1. The liveness score is
/// the probability of class 0.
inline int class_index(Label l) { return l == Label::real ? 0 : 1; }

struct SampleEntry {
    std::string path;  // relative to the manifest root; doubles as sample id
    Label label = Label::real;
    AttackType attack_type = AttackType::none;
    Split split = Split::train;
    std::string video_id;
};

inline constexpr const char* kManifestHeader = "path,label,attack_type,split,video_id";

struct SampleManifest {
    std::filesystem::path root;
    std::vector<SampleEntry> entries;

    std::vector<std::size_t> split_indices(Split s) const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].split == s) idx.push_back(i);
        return idx;
    }

    std::size_t count(Split s, AttackType a) const {
        std::size_t c = 0;
        for (const auto& e : entries)
            if (e.split == s && e.attack_type == a) ++c;
        return c;
    }

    std::filesystem::path resolve(const SampleEntry& e) const { return root / e.path; }

    std::optional<SampleEntry> find(const std::string& id) const {
        for (const auto& e : entries)
            if (e.path == id) return e;
        return std::nullopt;
    }

    /// Enforces every invariant at once and reports all offenders.
    void validate() const {
        if (entries.empty()) throw data_error("empty manifest");
        std::vector<std::string> problems;
        std::set<std::string> seen_paths;
        std::map<std::string, std::set<Split>> video_splits;
        for (const auto& e : entries) {
            if (!seen_paths.insert(e.path).second) problems.push_back("duplicate path " + e.path);
            if ((e.label == Label::real) != (e.attack_type == AttackType::none)) {
                problems.push_back("label/attack_type mismatch for " + e.path + " (" +
                                   to_string(e.label) + "/" + to_string(e.attack_type) + ")");
            }
            if (e.video_id.empty()) problems.push_back("empty video_id for " + e.path);
            video_splits[e.video_id].insert(e.split);
        }
        for (const auto& [vid, splits] : video_splits) {
            if (splits.size() > 1) {
                std::string which;
                for (Split s : splits) which += (which.empty() ? "" : "+") + to_string(s);
                problems.push_back("video_id " + vid + " appears in splits " + which);
            }
        }
        if (!problems.empty()) {
            std::string msg = "manifest validation failed:";
            for (const auto& p : problems) msg += "\n  " + p;
            throw data_error(msg);
        }
    }

    /// Count table in the corpus-summary layout (rows per type, one column
    /// per split, plus a total row).
    std::string summary_table() const {
        static constexpr std::array<AttackType, 4> kTypes = {
            AttackType::none, AttackType::print, AttackType::phone, AttackType::table};
        static constexpr std::array<const char*, 4> kNames = {"Real-access", "Print-attack",
                                                              "Phone-attack", "Table-attack"};
        std::ostringstream os;
        os << "Type          Training (#)  Development (#)  Test (#)\n";
        std::array<std::size_t, 3> totals = {0, 0, 0};
        for (std::size_t t = 0; t < kTypes.size(); ++t) {
            std::array<std::size_t, 3> c = {count(Split::train, kTypes[t]),
                                            count(Split::dev, kTypes[t]),
                                            count(Split::test, kTypes[t])};
            for (int i = 0; i < 3; ++i) totals[i] += c[i];
            os << kNames[t];
            os << std::string(14 - std::string(kNames[t]).size(), ' ');
            std::string c0 = std::to_string(c[0]), c1 = std::to_string(c[1]);
            os << c0 << std::string(14 - c0.size(), ' ') << c1
               << std::string(17 - c1.size(), ' ') << c[2] << "\n";
        }
        std::string t0 = std::to_string(totals[0]), t1 = std::to_string(totals[1]);
        os << "Total         " << t0 << std::string(14 - t0.size(), ' ') << t1
           << std::string(17 - t1.size(), ' ') << totals[2] << "\n";
        return os.str();
    }
};

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}
}  // namespace detail

/// Parses and validates a manifest CSV. Paths in the file resolve against
/// root_dir.
inline SampleManifest build_manifest(const std::filesystem::path& root_dir,
                                     const std::filesystem::path& schema_file) {
    std::ifstream is(schema_file);
    if (!is) throw data_error("cannot open manifest " + schema_file.string());
    SampleManifest m;
    m.root = root_dir;
    std::string line;
    if (!std::getline(is, line)) throw data_error("empty manifest");
    {
        auto fields = detail::split_csv_line(line);
        std::string joined;
        for (std::size_t i = 0; i < fields.size(); ++i) joined += (i ? "," : "") + fields[i];
        if (joined != kManifestHeader) {
            throw data_error(schema_file.string() + ": bad header '" + line + "', expected '" +
                             kManifestHeader + "'");
        }
    }
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 5) {
            throw data_error(schema_file.string() + ":" + std::to_string(lineno) +
                             ": expected 5 fields, got " + std::to_string(fields.size()));
        }
        try {
            m.entries.push_back({fields[0], label_from_string(fields[1]),
                                 attack_type_from_string(fields[2]),
                                 split_from_string(fields[3]), fields[4]});
        } catch (const data_error& e) {
            throw data_error(schema_file.string() + ":" + std::to_string(lineno) + ": " +
                             e.what());
        }
    }
    m.validate();
    return m;
}

/// Convenience: manifest whose paths are relative to its own directory.
inline SampleManifest load_manifest(const std::filesystem::path& csv_path) {
    return build_manifest(csv_path.parent_path(), csv_path);
}

inline void save_manifest(const SampleManifest& m, const std::filesystem::path& csv_path) {
    std::ofstream os(csv_path);
    if (!os) throw data_error("cannot write manifest " + csv_path.string());
    os << kManifestHeader << "\n";
    for (const auto& e : m.entries) {
        os << e.path << "," << to_string(e.label) << "," << to_string(e.attack_type) << ","
           << to_string(e.split) << "," << e.video_id << "\n";
    }
}

struct Batch {
    Tensor<float> images;  // [B x H x W x 3]
    std::vector<int> labels;
    std::vector<std::string> ids;

    std::size_t size() const { return labels.size(); }

    /// Copy of sample b as an [H x W x 3] tensor.
    Tensor<float> image(std::size_t b) const {
        const std::size_t h = images.dim(1), w = images.dim(2);
        const std::size_t stride = h * w * 3;
        std::vector<float> px(images.value().begin() + static_cast<std::ptrdiff_t>(b * stride),
                              images.value().begin() + static_cast<std::ptrdiff_t>((b + 1) * stride));
        return Tensor<float>::from_data({h, w, 3}, std::move(px));
    }
};

/// One epoch of seeded batches over a split. The epoch order is the
/// epoch_permutation of the split's manifest-order samples; the last partial
/// batch is kept.
class BatchIter {
public:
    BatchIter(const SampleManifest& manifest, Split split, std::size_t batch_size,
              std::uint64_t seed, std::size_t epoch)
        : manifest_(&manifest), batch_size_(batch_size) {
        if (batch_size == 0) throw contract_error("batch_size must be positive");
        indices_ = manifest.split_indices(split);
        if (indices_.empty()) {
            throw contract_error("split '" + to_string(split) + "' is empty");
        }
        order_ = epoch_permutation(indices_.size(), seed, epoch);
    }

    /// Permutation of the split applied this epoch (positions into the
    /// split's manifest order).
    const std::vector<std::size_t>& order() const { return order_; }
    std::uint64_t order_hash() const { return permutation_hash(order_); }

    std::optional<Batch> next() {
        if (cursor_ >= order_.size()) return std::nullopt;
        const std::size_t take = std::min(batch_size_, order_.size() - cursor_);
        Batch b;
        std::vector<float> pixels;
        std::size_t h = 0, w = 0;
        for (std::size_t i = 0; i < take; ++i) {
            const SampleEntry& e = manifest_->entries[indices_[order_[cursor_ + i]]];
            Tensor<float> img = load_ppm(manifest_->resolve(e));
            if (i == 0) {
                h = img.dim(0);
                w = img.dim(1);
                pixels.reserve(take * img.size());
            } else if (img.dim(0) != h || img.dim(1) != w) {
                throw data_error("image size mismatch in batch at " + e.path);
            }
            pixels.insert(pixels.end(), img.value().begin(), img.value().end());
            b.labels.push_back(class_index(e.label));
            b.ids.push_back(e.path);
        }
        cursor_ += take;
        b.images = Tensor<float>::from_data({take, h, w, 3}, std::move(pixels));
        return b;
    }

private:
    const SampleManifest* manifest_;
    std::size_t batch_size_;
    std::vector<std::size_t> indices_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

}  // namespace aavit
