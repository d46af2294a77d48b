#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aavit/checkpoint.hpp"
#include "aavit/data.hpp"
#include "aavit/errors.hpp"
#include "aavit/metrics.hpp"
#include "aavit/model.hpp"
#include "aavit/tensor.hpp"

// Supervised training: softmax cross-entropy, bias-corrected Adam, seeded
// epoch loop with periodic checkpoints, per-epoch dev-split EER, and score
// emission for the metrics module. A run is a pure function of
// (manifest bytes, configs, seed).

namespace aavit {

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 8;
    std::size_t epochs = 10;
    std::size_t max_steps = 0;  // 0 = bounded by epochs only
    std::uint64_t seed = 42;
    std::size_t checkpoint_every = 0;  // steps; 0 = final checkpoint only

    void validate() const {
        // lr == 0 is allowed: it turns a run into a no-op probe.
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw config_error("lr must be finite and >= 0");
        if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
            throw config_error("betas must lie in (0, 1)");
        }
        if (!(eps > 0.0)) throw config_error("eps must be positive");
        if (batch_size == 0) throw config_error("batch_size must be positive");
    }

    nlohmann::json to_json() const {
        return {{"lr", lr},
                {"beta1", beta1},
                {"beta2", beta2},
                {"eps", eps},
                {"batch_size", batch_size},
                {"epochs", epochs},
                {"max_steps", max_steps},
                {"seed", seed},
                {"checkpoint_every", checkpoint_every}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        try {
            for (const auto& [key, val] : j.items()) {
                if (key == "lr") c.lr = val.get<double>();
                else if (key == "beta1") c.beta1 = val.get<double>();
                else if (key == "beta2") c.beta2 = val.get<double>();
                else if (key == "eps") c.eps = val.get<double>();
                else if (key == "batch_size") c.batch_size = val.get<std::size_t>();
                else if (key == "epochs") c.epochs = val.get<std::size_t>();
                else if (key == "max_steps") c.max_steps = val.get<std::size_t>();
                else if (key == "seed") c.seed = val.get<std::uint64_t>();
                else if (key == "checkpoint_every") c.checkpoint_every = val.get<std::size_t>();
                else throw config_error("unknown train config key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw config_error(std::string("bad train config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

/// First/second moment buffers per parameter tensor, in canonical order.
struct AdamState {
    struct Slot {
        std::vector<float> m, v;
    };
    std::vector<Slot> slots;
    std::size_t step = 0;

    static AdamState init(ModelParams<float>& params) {
        AdamState s;
        for (auto& [name, t] : params.named_tensors()) {
            s.slots.push_back({std::vector<float>(t->size(), 0.0f),
                               std::vector<float>(t->size(), 0.0f)});
        }
        return s;
    }
};

/// Bias-corrected Adam update of one buffer; step_count is the post-increment
/// step (1 on the first update).
inline void adam_update(std::vector<float>& value, const std::vector<float>& grad,
                        std::vector<float>& m, std::vector<float>& v, std::size_t step_count,
                        const TrainConfig& cfg) {
    if (grad.size() != value.size() || m.size() != value.size() || v.size() != value.size()) {
        throw shape_error("adam_update: buffer sizes disagree");
    }
    const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
    const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
    for (std::size_t j = 0; j < value.size(); ++j) {
        m[j] = static_cast<float>(cfg.beta1) * m[j] + static_cast<float>(1.0 - cfg.beta1) * grad[j];
        v[j] = static_cast<float>(cfg.beta2) * v[j] +
               static_cast<float>(1.0 - cfg.beta2) * grad[j] * grad[j];
        const double mhat = m[j] / b1t;
        const double vhat = v[j] / b2t;
        value[j] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

/// One Adam step over every parameter tensor from the gradients backward()
/// stored on them.
inline void adam_step(ModelParams<float>& params, AdamState& state, const TrainConfig& cfg) {
    auto named = params.named_tensors();
    if (named.size() != state.slots.size()) {
        throw contract_error("optimizer state does not match parameter set");
    }
    state.step += 1;
    for (std::size_t i = 0; i < named.size(); ++i) {
        Tensor<float>& t = *named[i].second;
        if (!t.has_grad()) {
            throw contract_error("adam_step: no gradient for " + named[i].first);
        }
        adam_update(t.mutable_value(), t.grad(), state.slots[i].m, state.slots[i].v, state.step,
                    cfg);
    }
}

struct LossPoint {
    std::size_t step = 0;
    double loss = 0.0;
    std::optional<double> dev_eer;  // filled on the last step of an epoch
};

struct TrainResult {
    std::filesystem::path final_checkpoint;
    std::filesystem::path selected_checkpoint;  // best-dev when requested, else final
    std::vector<LossPoint> history;
    std::uint64_t batch_order_hash = 0;  // fold over every epoch's permutation
    std::optional<double> best_dev_eer;
};

struct TrainOptions {
    bool select_best_dev = false;
};

/// Mean cross-entropy over a batch, built as one graph so a single backward
/// populates every parameter gradient.
inline Tensor<float> batch_loss(const Batch& batch, const ModelConfig& cfg,
                                const ModelParams<float>& params) {
    Tensor<float> total;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        Tensor<float> loss = cross_entropy(model_logits(batch.image(b), cfg, params),
                                           static_cast<std::size_t>(batch.labels[b]));
        total = b == 0 ? loss : add(total, loss);
    }
    return scale(total, 1.0f / static_cast<float>(batch.size()));
}

/// Scores one split in manifest order: score = P(real).
inline std::vector<ScoreRecord> score_split(const ModelConfig& cfg, ModelParams<float>& params,
                                            const SampleManifest& manifest, Split split) {
    std::vector<ScoreRecord> records;
    for (const auto& e : manifest.entries) {
        if (e.split != split) continue;
        Tensor<float> probs = model_forward(load_ppm(manifest.resolve(e)), cfg, params);
        records.push_back({e.path, static_cast<double>(probs.value()[0]), e.label});
    }
    return records;
}

inline void write_loss_history(const std::filesystem::path& path,
                               const std::vector<LossPoint>& history) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot write loss history " + path.string());
    os << "step,loss,dev_eer\n";
    for (const auto& p : history) {
        os << p.step << "," << detail::format_double(p.loss) << ",";
        if (p.dev_eer) os << detail::format_double(*p.dev_eer);
        os << "\n";
    }
}

/// Full training loop. Emits checkpoints and the loss history into out_dir.
inline TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         const SampleManifest& manifest, const std::filesystem::path& out_dir,
                         const TrainOptions& options = {}) {
    model_cfg.validate();
    train_cfg.validate();
    if (manifest.split_indices(Split::train).empty()) {
        throw data_error("manifest has no train split");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw data_error("cannot create " + out_dir.string() + ": " + ec.message());

    ModelParams<float> params = ModelParams<float>::init(model_cfg);
    params.set_requires_grad();
    AdamState opt = AdamState::init(params);
    const bool has_dev = !manifest.split_indices(Split::dev).empty();

    TrainResult result;
    result.batch_order_hash = 0x243F6A8885A308D3ULL;
    std::size_t step = 0;
    bool stop = false;
    for (std::size_t epoch = 0; epoch < train_cfg.epochs && !stop; ++epoch) {
        BatchIter batches(manifest, Split::train, train_cfg.batch_size, train_cfg.seed, epoch);
        result.batch_order_hash = mix_seed(result.batch_order_hash, batches.order_hash());
        while (auto batch = batches.next()) {
            ++step;
            double loss_value = 0.0;
            try {
                params.zero_grads();
                Tensor<float> loss = batch_loss(*batch, model_cfg, params);
                loss_value = static_cast<double>(loss.item());
                backward(loss);
            } catch (const numeric_error& e) {
                throw numeric_error("training aborted at step " + std::to_string(step) + ": " +
                                    e.what());
            }
            adam_step(params, opt, train_cfg);
            result.history.push_back({step, loss_value, std::nullopt});
            if (train_cfg.checkpoint_every != 0 && step % train_cfg.checkpoint_every == 0) {
                save_checkpoint(out_dir / ("ckpt_step" + std::to_string(step) + ".aavt"),
                                model_cfg, params);
            }
            if (train_cfg.max_steps != 0 && step >= train_cfg.max_steps) {
                stop = true;
                break;
            }
        }
        if (has_dev && !result.history.empty()) {
            const EerResult dev = eer(score_split(model_cfg, params, manifest, Split::dev));
            result.history.back().dev_eer = dev.eer;
            if (options.select_best_dev &&
                (!result.best_dev_eer || dev.eer < *result.best_dev_eer)) {
                result.best_dev_eer = dev.eer;
                save_checkpoint(out_dir / "best_dev.aavt", model_cfg, params);
            }
        }
    }
    result.final_checkpoint = out_dir / "final.aavt";
    save_checkpoint(result.final_checkpoint, model_cfg, params);
    result.selected_checkpoint = options.select_best_dev && result.best_dev_eer
                                     ? out_dir / "best_dev.aavt"
                                     : result.final_checkpoint;
    write_loss_history(out_dir / "loss.csv", result.history);
    return result;
}

/// Loads a checkpoint and scores a split in manifest order.
inline std::vector<ScoreRecord> evaluate(const std::filesystem::path& checkpoint_path,
                                         const SampleManifest& manifest, Split split) {
    if (manifest.split_indices(split).empty()) {
        throw contract_error("split '" + to_string(split) + "' is empty");
    }
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    return score_split(ckpt.config, ckpt.params, manifest, split);
}

}  // namespace aavit
