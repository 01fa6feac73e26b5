#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "msq/common.hpp"
#include "msq/image.hpp"
#include "msq/queries.hpp"
#include "msq/shapeworld.hpp"
#include "msq/tensor.hpp"

namespace msq {

// ---------------------------------------------------------------------------
// tokenizer over the closed caption vocabulary
// ---------------------------------------------------------------------------

class Vocabulary {
public:
    Vocabulary() {
        for (const auto& w : grammar_words()) {
            ids_[w] = static_cast<int>(words_.size());
            words_.push_back(w);
        }
    }

    int size() const { return static_cast<int>(words_.size()); }

    int id(const std::string& word) const {
        auto it = ids_.find(word);
        if (it == ids_.end()) throw TokenizeError("unknown word: " + word);
        return it->second;
    }

    const std::string& word(int id) const {
        if (id < 0 || id >= size()) throw TokenizeError("token id out of range");
        return words_[static_cast<size_t>(id)];
    }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> ids_;
};

inline std::vector<int> tokenize_text(const Vocabulary& vocab, const std::string& caption) {
    std::vector<int> ids;
    std::istringstream is(caption);
    std::string w;
    while (is >> w) ids.push_back(vocab.id(w));
    return ids;
}

inline std::string detokenize(const Vocabulary& vocab, const std::vector<int>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) out += ' ';
        out += vocab.word(ids[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// M-RoPE
// ---------------------------------------------------------------------------

struct MRopePosition {
    int t = 0;
    int h = 0;
    int w = 0;
};

inline std::vector<MRopePosition> text_positions(int n, int base = 0) {
    std::vector<MRopePosition> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back({base + i, base + i, base + i});
    return out;
}

namespace detail {

// Per-row cos/sin tables for rotary pairs over a head of width head_dim.
// Channels split into three even-sized groups for (t, h, w); each group is
// floor(head_dim/3) rounded down to even. Remainder pairs stay unrotated
// (cos=1, sin=0). Heads share the table, so it tiles across the full width.
inline void mrope_tables(const std::vector<MRopePosition>& positions, int width, int head_dim,
                         TensorPtr& cos_out, TensorPtr& sin_out, double base = 10000.0) {
    if (head_dim % 2 != 0) throw DimensionError("mrope: head width must be even");
    const int rows = static_cast<int>(positions.size());
    const int group = (head_dim / 3) & ~1;  // even
    const int pairs_per_group = group / 2;
    const int head_pairs = head_dim / 2;
    const int heads = width / head_dim;
    if (heads * head_dim != width) throw DimensionError("mrope: width not divisible by head width");
    cos_out = Tensor::full({rows, width / 2}, 1.0);
    sin_out = Tensor::full({rows, width / 2}, 0.0);
    for (int r = 0; r < rows; ++r) {
        const int comp[3] = {positions[r].t, positions[r].h, positions[r].w};
        for (int g = 0; g < 3; ++g) {
            for (int i = 0; i < pairs_per_group; ++i) {
                const double freq =
                    std::pow(base, -2.0 * i / static_cast<double>(group));
                const double angle = comp[g] * freq;
                const double c = std::cos(angle), s = std::sin(angle);
                for (int hh = 0; hh < heads; ++hh) {
                    const int pair = hh * head_pairs + g * pairs_per_group + i;
                    cos_out->data[static_cast<size_t>(r) * (width / 2) + pair] = c;
                    sin_out->data[static_cast<size_t>(r) * (width / 2) + pair] = s;
                }
            }
        }
    }
}

}  // namespace detail

// Rotary transform with (t, h, w) component groups, applied pairwise.
// head_dim selects the per-head channel span; pass x->cols() to treat the
// whole width as one head.
inline TensorPtr mrope_apply(const TensorPtr& x, const std::vector<MRopePosition>& positions,
                             int head_dim = 0) {
    const int width = x->cols();
    if (head_dim == 0) head_dim = width;
    if (static_cast<int>(positions.size()) != x->rows())
        throw DimensionError("mrope_apply: position list length mismatch");
    TensorPtr cos_t, sin_t;
    detail::mrope_tables(positions, width, head_dim, cos_t, sin_t);
    return rotate_pairs(x, cos_t, sin_t);
}

// ---------------------------------------------------------------------------
// frozen autoregressive backbone
// ---------------------------------------------------------------------------

struct BackboneConfig {
    int d = 64;
    int n_layers = 2;
    int n_heads = 4;
    int patch = 4;       // vision patch size before the 2x2 merge
    int max_seq = 512;
    int mlp_ratio = 4;

    int head_dim() const { return d / n_heads; }
};

struct AttentionWeights {
    TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerWeights {
    TensorPtr ln1_g, ln1_b, ln2_g, ln2_b;
    AttentionWeights attn;
    TensorPtr w1, b1, w2, b2;
};

// All parameters are created frozen (requires_grad = false); the training
// loop never registers them with the optimizer.
struct BackboneParams {
    BackboneConfig config;
    bool frozen = true;
    TensorPtr embedding;  // V x d
    std::vector<LayerWeights> layers;
    TensorPtr final_ln_g, final_ln_b;
    TensorPtr merge_w, merge_b;  // 4*3p^2 -> d

    std::vector<std::pair<std::string, TensorPtr>> named_params() const {
        std::vector<std::pair<std::string, TensorPtr>> out;
        out.emplace_back("embedding", embedding);
        for (size_t l = 0; l < layers.size(); ++l) {
            const auto& L = layers[l];
            const std::string p = "layer" + std::to_string(l) + ".";
            out.emplace_back(p + "ln1_g", L.ln1_g);
            out.emplace_back(p + "ln1_b", L.ln1_b);
            out.emplace_back(p + "ln2_g", L.ln2_g);
            out.emplace_back(p + "ln2_b", L.ln2_b);
            out.emplace_back(p + "wq", L.attn.wq);
            out.emplace_back(p + "bq", L.attn.bq);
            out.emplace_back(p + "wk", L.attn.wk);
            out.emplace_back(p + "bk", L.attn.bk);
            out.emplace_back(p + "wv", L.attn.wv);
            out.emplace_back(p + "bv", L.attn.bv);
            out.emplace_back(p + "wo", L.attn.wo);
            out.emplace_back(p + "bo", L.attn.bo);
            out.emplace_back(p + "w1", L.w1);
            out.emplace_back(p + "b1", L.b1);
            out.emplace_back(p + "w2", L.w2);
            out.emplace_back(p + "b2", L.b2);
        }
        out.emplace_back("final_ln_g", final_ln_g);
        out.emplace_back("final_ln_b", final_ln_b);
        out.emplace_back("merge_w", merge_w);
        out.emplace_back("merge_b", merge_b);
        return out;
    }
};

inline BackboneParams init_backbone(const BackboneConfig& cfg, const Vocabulary& vocab,
                                    SeededRng& rng) {
    if (cfg.d % cfg.n_heads != 0) throw ConfigError("backbone width must divide into heads");
    if (cfg.head_dim() % 2 != 0) throw ConfigError("backbone head width must be even");
    constexpr double init_std = 0.02;
    BackboneParams p;
    p.config = cfg;
    const bool rg = false;  // frozen
    p.embedding = Tensor::randn({vocab.size(), cfg.d}, rng, init_std, rg);
    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerWeights L;
        L.ln1_g = Tensor::full({cfg.d}, 1.0, rg);
        L.ln1_b = Tensor::full({cfg.d}, 0.0, rg);
        L.ln2_g = Tensor::full({cfg.d}, 1.0, rg);
        L.ln2_b = Tensor::full({cfg.d}, 0.0, rg);
        L.attn.wq = Tensor::randn({cfg.d, cfg.d}, rng, init_std, rg);
        L.attn.bq = Tensor::full({cfg.d}, 0.0, rg);
        L.attn.wk = Tensor::randn({cfg.d, cfg.d}, rng, init_std, rg);
        L.attn.bk = Tensor::full({cfg.d}, 0.0, rg);
        L.attn.wv = Tensor::randn({cfg.d, cfg.d}, rng, init_std, rg);
        L.attn.bv = Tensor::full({cfg.d}, 0.0, rg);
        L.attn.wo = Tensor::randn({cfg.d, cfg.d}, rng, init_std, rg);
        L.attn.bo = Tensor::full({cfg.d}, 0.0, rg);
        L.w1 = Tensor::randn({cfg.d, cfg.mlp_ratio * cfg.d}, rng, init_std, rg);
        L.b1 = Tensor::full({cfg.mlp_ratio * cfg.d}, 0.0, rg);
        L.w2 = Tensor::randn({cfg.mlp_ratio * cfg.d, cfg.d}, rng, init_std, rg);
        L.b2 = Tensor::full({cfg.d}, 0.0, rg);
        p.layers.push_back(std::move(L));
    }
    p.final_ln_g = Tensor::full({cfg.d}, 1.0, rg);
    p.final_ln_b = Tensor::full({cfg.d}, 0.0, rg);
    const int merged_in = 4 * 3 * cfg.patch * cfg.patch;
    p.merge_w = Tensor::randn({merged_in, cfg.d}, rng, init_std, rg);
    p.merge_b = Tensor::full({cfg.d}, 0.0, rg);
    return p;
}

// NaViT-style token reduction: p x p patches, each 2x2 patch neighborhood
// concatenated and projected back to width d, quartering the token count.
inline TensorPtr patchify_merge(const BackboneParams& params, const Image& image) {
    const int p = params.config.patch;
    if (image.h % (2 * p) != 0 || image.w % (2 * p) != 0)
        throw DimensionError("patchify_merge: image extents must be divisible by 2*patch");
    const int gh = image.h / p, gw = image.w / p;
    const int d_patch = 3 * p * p;
    const int mh = gh / 2, mw = gw / 2;
    auto merged_in = Tensor::create({mh * mw, 4 * d_patch});
    for (int my = 0; my < mh; ++my) {
        for (int mx = 0; mx < mw; ++mx) {
            double* row = merged_in->data.data() +
                          static_cast<size_t>(my * mw + mx) * (4 * d_patch);
            int off = 0;
            for (int ny = 0; ny < 2; ++ny) {
                for (int nx = 0; nx < 2; ++nx) {
                    const int py = (2 * my + ny) * p, px = (2 * mx + nx) * p;
                    for (int y = 0; y < p; ++y)
                        for (int x = 0; x < p; ++x)
                            for (int c = 0; c < 3; ++c) row[off++] = image.at(py + y, px + x, c);
                }
            }
        }
    }
    return add_row_bias(matmul(merged_in, params.merge_w), params.merge_b);
}

struct HiddenStates {
    TensorPtr h;  // L_total x d
    int text_len = 0;
    int visual_len = 0;
    std::vector<ScaleSpan> query_spans;  // global row indices into h
};

namespace detail {

inline TensorPtr causal_mask(int n) {
    auto mask = Tensor::create({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) mask->data[static_cast<size_t>(i) * n + j] = -1e30;
    return mask;
}

inline TensorPtr multihead_attention(const AttentionWeights& w, const TensorPtr& x, int n_heads,
                                     const TensorPtr& rope_cos, const TensorPtr& rope_sin,
                                     const TensorPtr& mask) {
    const int d = x->cols();
    const int hd = d / n_heads;
    auto q = add_row_bias(matmul(x, w.wq), w.bq);
    auto k = add_row_bias(matmul(x, w.wk), w.bk);
    auto v = add_row_bias(matmul(x, w.wv), w.bv);
    if (rope_cos) {
        q = rotate_pairs(q, rope_cos, rope_sin);
        k = rotate_pairs(k, rope_cos, rope_sin);
    }
    std::vector<TensorPtr> heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int h = 0; h < n_heads; ++h) {
        auto qh = slice_cols(q, h * hd, (h + 1) * hd);
        auto kh = slice_cols(k, h * hd, (h + 1) * hd);
        auto vh = slice_cols(v, h * hd, (h + 1) * hd);
        auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        if (mask) scores = add(scores, mask);
        heads.push_back(matmul(softmax_rows(scores), vh));
    }
    return add_row_bias(matmul(concat_cols(heads), w.wo), w.bo);
}

}  // namespace detail

// Encoder pass over [text; visual; assembled queries] with causal attention.
// Text tokens use (i, i, i) rope positions, visual tokens share a constant
// temporal index with (h, w) spanning the merged grid, and query tokens
// continue text-like at their global sequence index.
inline HiddenStates backbone_forward(const BackboneParams& params, const std::vector<int>& text_ids,
                                     const std::optional<Image>& image, const QueryBank& bank) {
    const auto& cfg = params.config;
    auto assembled = assemble_sequence(bank);
    std::vector<TensorPtr> parts;
    std::vector<MRopePosition> positions;

    const int t_len = static_cast<int>(text_ids.size());
    if (t_len > 0) {
        parts.push_back(embedding_lookup(params.embedding, text_ids));
        for (int i = 0; i < t_len; ++i) positions.push_back({i, i, i});
    }
    int v_len = 0;
    if (image) {
        auto vis = patchify_merge(params, *image);
        v_len = vis->rows();
        const int mw = image->w / (2 * cfg.patch);
        for (int i = 0; i < v_len; ++i) positions.push_back({t_len, i / mw, i % mw});
        parts.push_back(vis);
    }
    parts.push_back(assembled.tokens);
    const int q_len = assembled.tokens->rows();
    for (int i = 0; i < q_len; ++i) {
        const int pos = t_len + v_len + i;
        positions.push_back({pos, pos, pos});
    }

    const int total = t_len + v_len + q_len;
    if (total > cfg.max_seq) throw CapacityError("sequence exceeds configured maximum length");

    auto x = parts.size() == 1 ? parts[0] : concat_rows(parts);
    TensorPtr rope_cos, rope_sin;
    detail::mrope_tables(positions, cfg.d, cfg.head_dim(), rope_cos, rope_sin);
    auto mask = detail::causal_mask(total);

    for (const auto& L : params.layers) {
        auto attn_in = layer_norm(x, L.ln1_g, L.ln1_b);
        x = add(x, detail::multihead_attention(L.attn, attn_in, cfg.n_heads, rope_cos, rope_sin,
                                               mask));
        auto mlp_in = layer_norm(x, L.ln2_g, L.ln2_b);
        auto hidden = gelu(add_row_bias(matmul(mlp_in, L.w1), L.b1));
        x = add(x, add_row_bias(matmul(hidden, L.w2), L.b2));
    }
    x = layer_norm(x, params.final_ln_g, params.final_ln_b);

    HiddenStates out;
    out.h = x;
    out.text_len = t_len;
    out.visual_len = v_len;
    out.query_spans = assembled.spans;
    for (auto& sp : out.query_spans) {
        sp.begin += t_len + v_len;
        sp.end += t_len + v_len;
    }
    return out;
}

}  // namespace msq
