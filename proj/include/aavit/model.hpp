#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aavit/errors.hpp"
#include "aavit/rng.hpp"
#include "aavit/tensor.hpp"

// Patch embedding, pre-norm transformer encoder, and the three classification
// heads: the plain ViT head (mean over features between the two FC layers),
// the pooling-only variant, and the pooling + attention variant.

namespace aavit {

enum class HeadKind { baseline_vit, aamlp_no_attention, aamlp };

inline std::string to_string(HeadKind k) {
    switch (k) {
        case HeadKind::baseline_vit: return "vit";
        case HeadKind::aamlp_no_attention: return "aamlp_no_attention";
        case HeadKind::aamlp: return "aamlp";
    }
    throw contract_error("bad HeadKind");
}

inline HeadKind head_kind_from_string(const std::string& s) {
    if (s == "vit") return HeadKind::baseline_vit;
    if (s == "aamlp_no_attention") return HeadKind::aamlp_no_attention;
    if (s == "aamlp") return HeadKind::aamlp;
    throw config_error("unknown head_kind '" + s + "' (expected vit | aamlp_no_attention | aamlp)");
}

/// Row label used in reports, matching the ablation table wording.
inline std::string display_name(HeadKind k) {
    switch (k) {
        case HeadKind::baseline_vit: return "ViT";
        case HeadKind::aamlp_no_attention: return "AAViT w/o attention";
        case HeadKind::aamlp: return "AAViT";
    }
    throw contract_error("bad HeadKind");
}

struct ModelConfig {
    std::size_t image_size = 256;
    std::size_t patch_size = 16;
    std::size_t embed_dim = 768;
    std::size_t depth = 12;
    std::size_t num_heads = 12;
    std::size_t mlp_hidden = 3072;  // width of the head's first FC
    HeadKind head_kind = HeadKind::aamlp;
    std::size_t pool_out = 8;
    std::size_t num_classes = 2;
    std::uint64_t seed = 42;

    std::size_t patches_per_side() const { return image_size / patch_size; }
    std::size_t n_patches() const { return patches_per_side() * patches_per_side(); }
    std::size_t patch_dim() const { return patch_size * patch_size * 3; }
    std::size_t encoder_mlp_hidden() const { return 4 * embed_dim; }
    /// Width of the flattened head output feeding the final FC.
    std::size_t head_flat_dim() const {
        return head_kind == HeadKind::baseline_vit ? n_patches() : n_patches() * pool_out;
    }

    void validate() const {
        if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0) {
            throw config_error("image_size " + std::to_string(image_size) +
                               " must be a positive multiple of patch_size " +
                               std::to_string(patch_size));
        }
        if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
            throw config_error("embed_dim " + std::to_string(embed_dim) +
                               " must be divisible by num_heads " + std::to_string(num_heads));
        }
        if (mlp_hidden == 0) throw config_error("mlp_hidden must be positive");
        if (pool_out == 0 || pool_out > mlp_hidden) {
            throw config_error("pool_out " + std::to_string(pool_out) +
                               " must be in [1, mlp_hidden=" + std::to_string(mlp_hidden) + "]");
        }
        if (num_classes < 2) throw config_error("num_classes must be at least 2");
    }

    nlohmann::json to_json() const {
        return {{"image_size", image_size}, {"patch_size", patch_size},
                {"embed_dim", embed_dim},   {"depth", depth},
                {"num_heads", num_heads},   {"mlp_hidden", mlp_hidden},
                {"head_kind", to_string(head_kind)},
                {"pool_out", pool_out},     {"num_classes", num_classes},
                {"seed", seed}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        try {
            for (const auto& [key, val] : j.items()) {
                if (key == "image_size") c.image_size = val.get<std::size_t>();
                else if (key == "patch_size") c.patch_size = val.get<std::size_t>();
                else if (key == "embed_dim") c.embed_dim = val.get<std::size_t>();
                else if (key == "depth") c.depth = val.get<std::size_t>();
                else if (key == "num_heads") c.num_heads = val.get<std::size_t>();
                else if (key == "mlp_hidden") c.mlp_hidden = val.get<std::size_t>();
                else if (key == "head_kind") c.head_kind = head_kind_from_string(val.get<std::string>());
                else if (key == "pool_out") c.pool_out = val.get<std::size_t>();
                else if (key == "num_classes") c.num_classes = val.get<std::size_t>();
                else if (key == "seed") c.seed = val.get<std::uint64_t>();
                else throw config_error("unknown model config key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw config_error(std::string("bad model config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

/// Every learnable tensor, in the canonical (checkpoint and init) order
/// given by named_tensors().
template <typename S>
struct ModelParams {
    struct Block {
        Tensor<S> ln1_gain, ln1_bias;
        Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor<S> ln2_gain, ln2_bias;
        Tensor<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };

    Tensor<S> patch_weight, patch_bias;  // [patch_dim x d], [d]
    Tensor<S> pos_embed;                 // [n x d]
    std::vector<Block> blocks;
    Tensor<S> head_fc1_w, head_fc1_b;                    // [d x h], [h]
    Tensor<S> head_attn_wq, head_attn_wk, head_attn_wv;  // [P x P], aamlp only
    Tensor<S> head_fc2_w, head_fc2_b;                    // [flat x C], [C]

    bool has_head_attention() const { return head_attn_wq.defined(); }

    /// Canonical order: patch projection, positional embedding, encoder
    /// blocks in depth order (norms, then q/k/v/o, then the block MLP), then
    /// the head. Checkpoints and the optimizer both follow this order.
    std::vector<std::pair<std::string, Tensor<S>*>> named_tensors() {
        std::vector<std::pair<std::string, Tensor<S>*>> out;
        out.emplace_back("patch.weight", &patch_weight);
        out.emplace_back("patch.bias", &patch_bias);
        out.emplace_back("pos_embed", &pos_embed);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            auto& b = blocks[i];
            const std::string p = "block" + std::to_string(i) + ".";
            out.emplace_back(p + "ln1.gain", &b.ln1_gain);
            out.emplace_back(p + "ln1.bias", &b.ln1_bias);
            out.emplace_back(p + "attn.wq", &b.wq);
            out.emplace_back(p + "attn.bq", &b.bq);
            out.emplace_back(p + "attn.wk", &b.wk);
            out.emplace_back(p + "attn.bk", &b.bk);
            out.emplace_back(p + "attn.wv", &b.wv);
            out.emplace_back(p + "attn.bv", &b.bv);
            out.emplace_back(p + "attn.wo", &b.wo);
            out.emplace_back(p + "attn.bo", &b.bo);
            out.emplace_back(p + "ln2.gain", &b.ln2_gain);
            out.emplace_back(p + "ln2.bias", &b.ln2_bias);
            out.emplace_back(p + "mlp.w1", &b.mlp_w1);
            out.emplace_back(p + "mlp.b1", &b.mlp_b1);
            out.emplace_back(p + "mlp.w2", &b.mlp_w2);
            out.emplace_back(p + "mlp.b2", &b.mlp_b2);
        }
        out.emplace_back("head.fc1.weight", &head_fc1_w);
        out.emplace_back("head.fc1.bias", &head_fc1_b);
        if (head_attn_wq.defined()) {
            out.emplace_back("head.attn.wq", &head_attn_wq);
            out.emplace_back("head.attn.wk", &head_attn_wk);
            out.emplace_back("head.attn.wv", &head_attn_wv);
        }
        out.emplace_back("head.fc2.weight", &head_fc2_w);
        out.emplace_back("head.fc2.bias", &head_fc2_b);
        return out;
    }

    void set_requires_grad(bool b = true) {
        for (auto& [name, t] : named_tensors()) t->set_requires_grad(b);
    }

    void zero_grads() {
        for (auto& [name, t] : named_tensors()) t->zero_grad();
    }

    /// Allocates tensors with the shapes implied by the config, all zero.
    static ModelParams shaped(const ModelConfig& cfg) {
        cfg.validate();
        const std::size_t d = cfg.embed_dim, n = cfg.n_patches(), pd = cfg.patch_dim();
        const std::size_t eh = cfg.encoder_mlp_hidden();
        ModelParams p;
        p.patch_weight = Tensor<S>::zeros({pd, d});
        p.patch_bias = Tensor<S>::zeros({d});
        p.pos_embed = Tensor<S>::zeros({n, d});
        p.blocks.resize(cfg.depth);
        for (auto& b : p.blocks) {
            b.ln1_gain = Tensor<S>::zeros({d});
            b.ln1_bias = Tensor<S>::zeros({d});
            b.wq = Tensor<S>::zeros({d, d});
            b.bq = Tensor<S>::zeros({d});
            b.wk = Tensor<S>::zeros({d, d});
            b.bk = Tensor<S>::zeros({d});
            b.wv = Tensor<S>::zeros({d, d});
            b.bv = Tensor<S>::zeros({d});
            b.wo = Tensor<S>::zeros({d, d});
            b.bo = Tensor<S>::zeros({d});
            b.ln2_gain = Tensor<S>::zeros({d});
            b.ln2_bias = Tensor<S>::zeros({d});
            b.mlp_w1 = Tensor<S>::zeros({d, eh});
            b.mlp_b1 = Tensor<S>::zeros({eh});
            b.mlp_w2 = Tensor<S>::zeros({eh, d});
            b.mlp_b2 = Tensor<S>::zeros({d});
        }
        p.head_fc1_w = Tensor<S>::zeros({d, cfg.mlp_hidden});
        p.head_fc1_b = Tensor<S>::zeros({cfg.mlp_hidden});
        if (cfg.head_kind == HeadKind::aamlp) {
            p.head_attn_wq = Tensor<S>::zeros({cfg.pool_out, cfg.pool_out});
            p.head_attn_wk = Tensor<S>::zeros({cfg.pool_out, cfg.pool_out});
            p.head_attn_wv = Tensor<S>::zeros({cfg.pool_out, cfg.pool_out});
        }
        p.head_fc2_w = Tensor<S>::zeros({cfg.head_flat_dim(), cfg.num_classes});
        p.head_fc2_b = Tensor<S>::zeros({cfg.num_classes});
        return p;
    }

    /// Seeded init: weight matrices uniform in +-1/sqrt(fan_in), positional
    /// embedding normal(0, 0.02), layer-norm gains 1, all biases 0. RNG draws
    /// happen in canonical tensor order; deterministic tensors consume none.
    static ModelParams init(const ModelConfig& cfg) {
        ModelParams p = shaped(cfg);
        SplitMix64 rng(cfg.seed);
        auto fill_uniform = [&rng](Tensor<S>& t, std::size_t fan_in) {
            const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& v : t.mutable_value()) v = static_cast<S>(rng.uniform(-b, b));
        };
        auto fill_normal = [&rng](Tensor<S>& t, double sd) {
            for (auto& v : t.mutable_value()) v = static_cast<S>(sd * rng.normal());
        };
        auto fill_ones = [](Tensor<S>& t) {
            for (auto& v : t.mutable_value()) v = S(1);
        };
        const std::size_t d = cfg.embed_dim;
        fill_uniform(p.patch_weight, cfg.patch_dim());
        fill_normal(p.pos_embed, 0.02);
        for (auto& b : p.blocks) {
            fill_ones(b.ln1_gain);
            fill_uniform(b.wq, d);
            fill_uniform(b.wk, d);
            fill_uniform(b.wv, d);
            fill_uniform(b.wo, d);
            fill_ones(b.ln2_gain);
            fill_uniform(b.mlp_w1, d);
            fill_uniform(b.mlp_w2, cfg.encoder_mlp_hidden());
        }
        fill_uniform(p.head_fc1_w, d);
        if (cfg.head_kind == HeadKind::aamlp) {
            fill_uniform(p.head_attn_wq, cfg.pool_out);
            fill_uniform(p.head_attn_wk, cfg.pool_out);
            fill_uniform(p.head_attn_wv, cfg.pool_out);
        }
        fill_uniform(p.head_fc2_w, cfg.head_flat_dim());
        return p;
    }

    template <typename T>
    static ModelParams from(const ModelConfig& cfg, ModelParams<T>& other) {
        ModelParams p = shaped(cfg);
        auto mine = p.named_tensors();
        auto theirs = other.named_tensors();
        if (mine.size() != theirs.size()) throw contract_error("parameter set mismatch");
        for (std::size_t i = 0; i < mine.size(); ++i) {
            auto& dst = mine[i].second->mutable_value();
            const auto& src = theirs[i].second->value();
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<S>(src[j]);
        }
        return p;
    }
};

/// Attention weights captured during a forward pass, for inspection tests.
template <typename S>
struct ForwardTrace {
    std::vector<Tensor<S>> encoder_attention;  // one [n x n] per (block, head)
    std::vector<Tensor<S>> head_attention;     // [n x n] when the AAMLP attention ran
};

// ---------------------------------------------------------------------------
// Forward pieces
// ---------------------------------------------------------------------------

/// Cuts an [H x W x 3] image (values in [0,1], channel-last) into
/// non-overlapping patches in row-major patch order; each output row is one
/// patch flattened pixel-row-major, channel innermost. The image is treated
/// as constant data, so the result is a graph leaf.
template <typename S>
Tensor<S> patchify(const Tensor<S>& image, std::size_t patch_size) {
    if (image.rank() != 3 || image.dim(2) != 3) {
        throw shape_error("patchify: expected [H x W x 3], got " + shape_str(image.shape()));
    }
    const std::size_t h = image.dim(0), w = image.dim(1);
    if (h != w || patch_size == 0 || h % patch_size != 0) {
        throw shape_error("patchify: image " + shape_str(image.shape()) +
                          " not divisible into square patches of " + std::to_string(patch_size));
    }
    const std::size_t side = h / patch_size;
    const std::size_t n = side * side;
    const std::size_t pdim = patch_size * patch_size * 3;
    std::vector<S> out(n * pdim);
    const auto& px = image.value();
    for (std::size_t pr = 0; pr < side; ++pr) {
        for (std::size_t pc = 0; pc < side; ++pc) {
            S* row = out.data() + (pr * side + pc) * pdim;
            std::size_t k = 0;
            for (std::size_t y = 0; y < patch_size; ++y) {
                for (std::size_t x = 0; x < patch_size; ++x) {
                    const std::size_t base = ((pr * patch_size + y) * w + pc * patch_size + x) * 3;
                    row[k++] = px[base];
                    row[k++] = px[base + 1];
                    row[k++] = px[base + 2];
                }
            }
        }
    }
    return Tensor<S>::from_data({n, pdim}, std::move(out));
}

/// Linear projection of patches plus the learned positional embedding.
template <typename S>
Tensor<S> embed(const Tensor<S>& patches, const ModelParams<S>& params) {
    return add(add_rowwise(matmul(patches, params.patch_weight), params.patch_bias),
               params.pos_embed);
}

/// Standard multi-head scaled dot-product self-attention over tokens.
template <typename S>
Tensor<S> multi_head_self_attention(const Tensor<S>& x,
                                    const typename ModelParams<S>::Block& blk,
                                    std::size_t num_heads, ForwardTrace<S>* trace) {
    const std::size_t d = x.dim(1);
    const std::size_t dh = d / num_heads;
    Tensor<S> q = add_rowwise(matmul(x, blk.wq), blk.bq);
    Tensor<S> k = add_rowwise(matmul(x, blk.wk), blk.bk);
    Tensor<S> v = add_rowwise(matmul(x, blk.wv), blk.bv);
    const S inv_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<Tensor<S>> heads;
    heads.reserve(num_heads);
    for (std::size_t hI = 0; hI < num_heads; ++hI) {
        Tensor<S> qh = slice_cols(q, hI * dh, (hI + 1) * dh);
        Tensor<S> kh = slice_cols(k, hI * dh, (hI + 1) * dh);
        Tensor<S> vh = slice_cols(v, hI * dh, (hI + 1) * dh);
        Tensor<S> att = softmax_rowwise(scale(matmul(qh, transpose(kh)), inv_scale));
        if (trace) trace->encoder_attention.push_back(att);
        heads.push_back(matmul(att, vh));
    }
    Tensor<S> merged = num_heads == 1 ? heads[0] : concat_cols(heads);
    return add_rowwise(matmul(merged, blk.wo), blk.bo);
}

/// `depth` pre-norm blocks: x += MHSA(LN(x)); x += MLP(LN(x)).
template <typename S>
Tensor<S> encoder_forward(const Tensor<S>& tokens, const ModelConfig& cfg,
                          const ModelParams<S>& params, ForwardTrace<S>* trace = nullptr) {
    Tensor<S> x = tokens;
    for (const auto& blk : params.blocks) {
        Tensor<S> normed = layer_norm(x, blk.ln1_gain, blk.ln1_bias);
        x = add(x, multi_head_self_attention(normed, blk, cfg.num_heads, trace));
        Tensor<S> normed2 = layer_norm(x, blk.ln2_gain, blk.ln2_bias);
        Tensor<S> hidden = gelu(add_rowwise(matmul(normed2, blk.mlp_w1), blk.mlp_b1));
        x = add(x, add_rowwise(matmul(hidden, blk.mlp_w2), blk.mlp_b2));
    }
    return x;
}

/// Baseline ViT head: FC1 -> GELU -> mean over the feature axis (one scalar
/// per token) -> FC2 over the n token means.
template <typename S>
Tensor<S> head_baseline(const Tensor<S>& tokens, const ModelConfig& cfg,
                        const ModelParams<S>& params) {
    if (cfg.head_kind != HeadKind::baseline_vit) {
        throw contract_error("head_baseline called with head_kind " + to_string(cfg.head_kind));
    }
    Tensor<S> u = gelu(add_rowwise(matmul(tokens, params.head_fc1_w), params.head_fc1_b));
    Tensor<S> means = adaptive_avg_pool_1d(u, 1);  // [n x 1], the per-token average
    Tensor<S> flat = reshape(means, {std::size_t(1), tokens.dim(0)});
    Tensor<S> logits = add_rowwise(matmul(flat, params.head_fc2_w), params.head_fc2_b);
    return reshape(logits, {cfg.num_classes});
}

/// AAMLP head: FC1 -> GELU -> adaptive average pooling h -> P per token, then
/// (optionally) single-head scaled dot-product self-attention over the n
/// pooled token vectors, then FC2 over the flattened n*P values.
template <typename S>
Tensor<S> head_aamlp(const Tensor<S>& tokens, const ModelConfig& cfg,
                     const ModelParams<S>& params, bool attention_enabled,
                     ForwardTrace<S>* trace = nullptr) {
    const HeadKind expected =
        attention_enabled ? HeadKind::aamlp : HeadKind::aamlp_no_attention;
    if (cfg.head_kind != expected) {
        throw contract_error("head_aamlp(attention=" +
                             std::string(attention_enabled ? "on" : "off") +
                             ") called with head_kind " + to_string(cfg.head_kind));
    }
    if (cfg.pool_out > cfg.mlp_hidden) {
        throw config_error("pool_out exceeds mlp_hidden");
    }
    Tensor<S> u = gelu(add_rowwise(matmul(tokens, params.head_fc1_w), params.head_fc1_b));
    Tensor<S> pooled = adaptive_avg_pool_1d(u, cfg.pool_out);  // [n x P]
    Tensor<S> a = pooled;
    if (attention_enabled) {
        Tensor<S> q = matmul(pooled, params.head_attn_wq);
        Tensor<S> k = matmul(pooled, params.head_attn_wk);
        Tensor<S> v = matmul(pooled, params.head_attn_wv);
        const S inv_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cfg.pool_out)));
        Tensor<S> att = softmax_rowwise(scale(matmul(q, transpose(k)), inv_scale));
        if (trace) trace->head_attention.push_back(att);
        a = matmul(att, v);
    }
    Tensor<S> flat = reshape(a, {std::size_t(1), tokens.dim(0) * cfg.pool_out});
    Tensor<S> logits = add_rowwise(matmul(flat, params.head_fc2_w), params.head_fc2_b);
    return reshape(logits, {cfg.num_classes});
}

/// Logits of the configured head for one image.
template <typename S>
Tensor<S> model_logits(const Tensor<S>& image, const ModelConfig& cfg,
                       const ModelParams<S>& params, ForwardTrace<S>* trace = nullptr) {
    Tensor<S> tokens = encoder_forward(embed(patchify(image, cfg.patch_size), params), cfg,
                                       params, trace);
    switch (cfg.head_kind) {
        case HeadKind::baseline_vit: return head_baseline(tokens, cfg, params);
        case HeadKind::aamlp_no_attention: return head_aamlp(tokens, cfg, params, false, trace);
        case HeadKind::aamlp: return head_aamlp(tokens, cfg, params, true, trace);
    }
    throw contract_error("bad HeadKind");
}

/// Class probabilities for one image. The liveness score is the probability
/// of class 0 (real access).
template <typename S>
Tensor<S> model_forward(const Tensor<S>& image, const ModelConfig& cfg,
                        const ModelParams<S>& params, ForwardTrace<S>* trace = nullptr) {
    return softmax_rowwise(model_logits(image, cfg, params, trace));
}

}  // namespace aavit
