#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "msq/common.hpp"
#include "msq/connector.hpp"
#include "msq/queries.hpp"
#include "msq/rng.hpp"
#include "msq/tensor.hpp"

namespace msq {

// ---------------------------------------------------------------------------
// rectified-flow interpolants
// ---------------------------------------------------------------------------

// Linear interpolant between per-sample noise and data with velocity target
// x1 - x0; t is uniform per sample.
struct FlowBatch {
    TensorPtr x0;        // B x D, standard normal
    TensorPtr x1;        // B x D, data
    std::vector<double> t;
    TensorPtr xt;        // (1-t) x0 + t x1
    TensorPtr v_target;  // x1 - x0
};

// xt = (1-t) x0 + t x1, exact at both endpoints.
inline double rectified_interpolant(double x0, double x1, double t) {
    return (1.0 - t) * x0 + t * x1;
}

inline FlowBatch flow_interpolate(const TensorPtr& x1, SeededRng& rng) {
    check_finite(*x1, "flow_interpolate: x1");
    const int b = x1->rows(), d = x1->cols();
    FlowBatch fb;
    fb.x1 = x1;
    fb.x0 = Tensor::create({b, d});
    for (auto& v : fb.x0->data) v = rng.normal();
    fb.t.resize(static_cast<size_t>(b));
    for (auto& t : fb.t) t = rng.uniform();
    fb.xt = Tensor::create({b, d});
    fb.v_target = Tensor::create({b, d});
    for (int i = 0; i < b; ++i) {
        const double t = fb.t[static_cast<size_t>(i)];
        for (int j = 0; j < d; ++j) {
            const size_t idx = static_cast<size_t>(i) * d + j;
            fb.xt->data[idx] = rectified_interpolant(fb.x0->data[idx], fb.x1->data[idx], t);
            fb.v_target->data[idx] = fb.x1->data[idx] - fb.x0->data[idx];
        }
    }
    return fb;
}

// ---------------------------------------------------------------------------
// diffusion transformer
// ---------------------------------------------------------------------------

struct DitConfig {
    int img_h = 16;
    int img_w = 16;
    int patch = 2;
    int width = 64;
    int blocks = 2;
    int heads = 4;
    int d_c = 64;
    int mlp_ratio = 4;

    int grid_h() const { return img_h / patch; }
    int grid_w() const { return img_w / patch; }
    int token_count() const { return grid_h() * grid_w(); }
    int patch_dim() const { return 3 * patch * patch; }
    int flat_dim() const { return img_h * img_w * 3; }

    // Tap for scale k of K sits after block ceil(blocks * (k+1) / K):
    // shallow blocks align to coarse scales, deep blocks to fine ones.
    int tap_block(int k, int n_scales) const {
        return (blocks * (k + 1) + n_scales - 1) / n_scales;
    }

    void validate() const {
        if (img_h % patch != 0 || img_w % patch != 0)
            throw ConfigError("dit: image extents must divide by patch");
        if (width % heads != 0) throw ConfigError("dit: width must divide into heads");
        if (width % 4 != 0) throw ConfigError("dit: width must be divisible by 4");
        if (blocks < 1) throw ConfigError("dit: needs at least one block");
    }
};

struct DitBlockWeights {
    TensorPtr ln1_g, ln1_b;
    TensorPtr self_wq, self_bq, self_wk, self_bk, self_wv, self_bv, self_wo, self_bo;
    TensorPtr lnc_g, lnc_b;
    TensorPtr cross_wq, cross_bq, cross_wk, cross_bk, cross_wv, cross_bv, cross_wo, cross_bo;
    TensorPtr ln2_g, ln2_b;
    TensorPtr w1, b1, w2, b2;
};

struct DitParams {
    DitConfig config;
    TensorPtr patch_in_w, patch_in_b;
    std::vector<DitBlockWeights> blocks;
    TensorPtr final_ln_g, final_ln_b;
    TensorPtr head_w, head_b;  // zero-initialized: v_pred starts at 0
    TensorPtr pos;             // fixed 2-D sinusoid over the token grid
    std::vector<int> patch_index;    // image flat -> token-major gather
    std::vector<int> unpatch_index;  // token-major -> image flat gather

    std::vector<std::pair<std::string, TensorPtr>> named_params() const {
        std::vector<std::pair<std::string, TensorPtr>> out;
        out.emplace_back("patch_in_w", patch_in_w);
        out.emplace_back("patch_in_b", patch_in_b);
        for (size_t i = 0; i < blocks.size(); ++i) {
            const auto& bl = blocks[i];
            const std::string p = "block" + std::to_string(i) + ".";
            out.emplace_back(p + "ln1_g", bl.ln1_g);
            out.emplace_back(p + "ln1_b", bl.ln1_b);
            out.emplace_back(p + "self_wq", bl.self_wq);
            out.emplace_back(p + "self_bq", bl.self_bq);
            out.emplace_back(p + "self_wk", bl.self_wk);
            out.emplace_back(p + "self_bk", bl.self_bk);
            out.emplace_back(p + "self_wv", bl.self_wv);
            out.emplace_back(p + "self_bv", bl.self_bv);
            out.emplace_back(p + "self_wo", bl.self_wo);
            out.emplace_back(p + "self_bo", bl.self_bo);
            out.emplace_back(p + "lnc_g", bl.lnc_g);
            out.emplace_back(p + "lnc_b", bl.lnc_b);
            out.emplace_back(p + "cross_wq", bl.cross_wq);
            out.emplace_back(p + "cross_bq", bl.cross_bq);
            out.emplace_back(p + "cross_wk", bl.cross_wk);
            out.emplace_back(p + "cross_bk", bl.cross_bk);
            out.emplace_back(p + "cross_wv", bl.cross_wv);
            out.emplace_back(p + "cross_bv", bl.cross_bv);
            out.emplace_back(p + "cross_wo", bl.cross_wo);
            out.emplace_back(p + "cross_bo", bl.cross_bo);
            out.emplace_back(p + "ln2_g", bl.ln2_g);
            out.emplace_back(p + "ln2_b", bl.ln2_b);
            out.emplace_back(p + "w1", bl.w1);
            out.emplace_back(p + "b1", bl.b1);
            out.emplace_back(p + "w2", bl.w2);
            out.emplace_back(p + "b2", bl.b2);
        }
        out.emplace_back("final_ln_g", final_ln_g);
        out.emplace_back("final_ln_b", final_ln_b);
        out.emplace_back("head_w", head_w);
        out.emplace_back("head_b", head_b);
        return out;
    }
};

inline DitParams init_dit(const DitConfig& cfg, SeededRng& rng) {
    cfg.validate();
    constexpr double init_std = 0.02;
    DitParams p;
    p.config = cfg;
    const int w = cfg.width, pd = cfg.patch_dim();
    p.patch_in_w = Tensor::randn({pd, w}, rng, init_std, true);
    p.patch_in_b = Tensor::full({w}, 0.0, true);
    for (int i = 0; i < cfg.blocks; ++i) {
        DitBlockWeights bl;
        bl.ln1_g = Tensor::full({w}, 1.0, true);
        bl.ln1_b = Tensor::full({w}, 0.0, true);
        bl.self_wq = Tensor::randn({w, w}, rng, init_std, true);
        bl.self_bq = Tensor::full({w}, 0.0, true);
        bl.self_wk = Tensor::randn({w, w}, rng, init_std, true);
        bl.self_bk = Tensor::full({w}, 0.0, true);
        bl.self_wv = Tensor::randn({w, w}, rng, init_std, true);
        bl.self_bv = Tensor::full({w}, 0.0, true);
        bl.self_wo = Tensor::randn({w, w}, rng, init_std, true);
        bl.self_bo = Tensor::full({w}, 0.0, true);
        bl.lnc_g = Tensor::full({w}, 1.0, true);
        bl.lnc_b = Tensor::full({w}, 0.0, true);
        bl.cross_wq = Tensor::randn({w, w}, rng, init_std, true);
        bl.cross_bq = Tensor::full({w}, 0.0, true);
        bl.cross_wk = Tensor::randn({cfg.d_c, w}, rng, init_std, true);
        bl.cross_bk = Tensor::full({w}, 0.0, true);
        bl.cross_wv = Tensor::randn({cfg.d_c, w}, rng, init_std, true);
        bl.cross_bv = Tensor::full({w}, 0.0, true);
        bl.cross_wo = Tensor::randn({w, w}, rng, init_std, true);
        bl.cross_bo = Tensor::full({w}, 0.0, true);
        bl.ln2_g = Tensor::full({w}, 1.0, true);
        bl.ln2_b = Tensor::full({w}, 0.0, true);
        bl.w1 = Tensor::randn({w, cfg.mlp_ratio * w}, rng, init_std, true);
        bl.b1 = Tensor::full({cfg.mlp_ratio * w}, 0.0, true);
        bl.w2 = Tensor::randn({cfg.mlp_ratio * w, w}, rng, init_std, true);
        bl.b2 = Tensor::full({w}, 0.0, true);
        p.blocks.push_back(std::move(bl));
    }
    p.final_ln_g = Tensor::full({w}, 1.0, true);
    p.final_ln_b = Tensor::full({w}, 0.0, true);
    p.head_w = Tensor::full({w, pd}, 0.0, true);
    p.head_b = Tensor::full({pd}, 0.0, true);
    p.pos = positional_grid({cfg.grid_h(), cfg.grid_w()}, w);

    // patchify permutations
    p.patch_index.resize(static_cast<size_t>(cfg.token_count()) * pd);
    p.unpatch_index.resize(p.patch_index.size());
    int k = 0;
    for (int ty = 0; ty < cfg.grid_h(); ++ty)
        for (int tx = 0; tx < cfg.grid_w(); ++tx)
            for (int y = 0; y < cfg.patch; ++y)
                for (int x = 0; x < cfg.patch; ++x)
                    for (int c = 0; c < 3; ++c) {
                        const int flat =
                            ((ty * cfg.patch + y) * cfg.img_w + tx * cfg.patch + x) * 3 + c;
                        p.patch_index[static_cast<size_t>(k)] = flat;
                        p.unpatch_index[static_cast<size_t>(flat)] = k;
                        ++k;
                    }
    return p;
}

// Sinusoidal embedding of the interpolation time, added to every token.
inline TensorPtr time_embedding(double t, int width) {
    auto out = Tensor::create({width});
    const int pairs = width / 2;
    const double scaled = 1000.0 * t;
    for (int i = 0; i < pairs; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / pairs);
        out->data[2 * i] = std::sin(scaled * freq);
        out->data[2 * i + 1] = std::cos(scaled * freq);
    }
    return out;
}

struct DitOutput {
    TensorPtr v_pred;                 // 1 x flat_dim
    std::vector<TensorPtr> taps;      // token_count x width, ascending scale order
};

namespace detail {

inline TensorPtr dit_attention(const TensorPtr& q_src, const TensorPtr& kv_src,
                               const TensorPtr& wq, const TensorPtr& bq, const TensorPtr& wk,
                               const TensorPtr& bk, const TensorPtr& wv, const TensorPtr& bv,
                               const TensorPtr& wo, const TensorPtr& bo, int heads) {
    const int w = wq->cols();
    const int hd = w / heads;
    auto q = add_row_bias(matmul(q_src, wq), bq);
    auto k = add_row_bias(matmul(kv_src, wk), bk);
    auto v = add_row_bias(matmul(kv_src, wv), bv);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<TensorPtr> outs;
    for (int h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * hd, (h + 1) * hd);
        auto kh = slice_cols(k, h * hd, (h + 1) * hd);
        auto vh = slice_cols(v, h * hd, (h + 1) * hd);
        auto attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
        outs.push_back(matmul(attn, vh));
    }
    return add_row_bias(matmul(concat_cols(outs), wo), bo);
}

}  // namespace detail

// One denoising forward pass: patchify x_t, add positional and time
// embeddings, run self-attention / cross-attention(cond) / MLP blocks,
// project back to pixel space. Taps are recorded after the block assigned to
// each scale.
inline DitOutput dit_forward(const DitParams& params, const TensorPtr& xt_flat, double t,
                             const ConditioningSet& cond) {
    const auto& cfg = params.config;
    if (xt_flat->numel() != cfg.flat_dim()) throw DimensionError("dit_forward: bad input size");
    if (cond.tokens.empty()) throw ConfigError("dit_forward: empty conditioning set");

    std::vector<TensorPtr> cond_parts = cond.tokens;
    auto cond_cat = cond_parts.size() == 1 ? cond_parts[0] : concat_rows(cond_parts);
    if (cond_cat->cols() != cfg.d_c) throw DimensionError("dit_forward: conditioning width");

    auto flat = xt_flat->shape.size() == 2 && xt_flat->shape[0] == 1
                    ? xt_flat
                    : reshape(xt_flat, {1, cfg.flat_dim()});
    auto patches = reshape(gather_elements(flat, params.patch_index),
                           {cfg.token_count(), cfg.patch_dim()});
    auto x = add_row_bias(matmul(patches, params.patch_in_w), params.patch_in_b);
    x = add(x, params.pos);
    x = add_row_bias(x, time_embedding(t, cfg.width));

    const int n_scales = static_cast<int>(cond.tokens.size());
    DitOutput out;
    out.taps.resize(static_cast<size_t>(n_scales));
    for (int b = 0; b < cfg.blocks; ++b) {
        const auto& bl = params.blocks[static_cast<size_t>(b)];
        auto sa_in = layer_norm(x, bl.ln1_g, bl.ln1_b);
        x = add(x, detail::dit_attention(sa_in, sa_in, bl.self_wq, bl.self_bq, bl.self_wk,
                                         bl.self_bk, bl.self_wv, bl.self_bv, bl.self_wo,
                                         bl.self_bo, cfg.heads));
        auto ca_in = layer_norm(x, bl.lnc_g, bl.lnc_b);
        x = add(x, detail::dit_attention(ca_in, cond_cat, bl.cross_wq, bl.cross_bq, bl.cross_wk,
                                         bl.cross_bk, bl.cross_wv, bl.cross_bv, bl.cross_wo,
                                         bl.cross_bo, cfg.heads));
        auto mlp_in = layer_norm(x, bl.ln2_g, bl.ln2_b);
        x = add(x, add_row_bias(matmul(gelu(add_row_bias(matmul(mlp_in, bl.w1), bl.b1)), bl.w2),
                                bl.b2));
        for (int k = 0; k < n_scales; ++k)
            if (cfg.tap_block(k, n_scales) == b + 1) out.taps[static_cast<size_t>(k)] = x;
    }
    for (int k = 0; k < n_scales; ++k)
        if (!out.taps[static_cast<size_t>(k)])
            throw ConfigError("dit_forward: scale tap not assigned to any block");

    auto y = layer_norm(x, params.final_ln_g, params.final_ln_b);
    auto head = add_row_bias(matmul(y, params.head_w), params.head_b);
    out.v_pred = gather_elements(reshape(head, {1, cfg.flat_dim()}), params.unpatch_index);
    return out;
}

inline TensorPtr fm_loss(const TensorPtr& v_pred, const TensorPtr& v_target) {
    return mse(v_pred, v_target);
}

// ---------------------------------------------------------------------------
// multi-scale representation alignment
// ---------------------------------------------------------------------------

struct AlignParams {
    std::vector<TensorPtr> w;  // width -> d_c per scale
    std::vector<TensorPtr> b;

    std::vector<std::pair<std::string, TensorPtr>> named_params() const {
        std::vector<std::pair<std::string, TensorPtr>> out;
        for (size_t k = 0; k < w.size(); ++k) {
            const std::string p = "scale" + std::to_string(k) + ".";
            out.emplace_back(p + "w", w[k]);
            out.emplace_back(p + "b", b[k]);
        }
        return out;
    }
};

inline AlignParams init_align(size_t scale_count, int width, int d_c, SeededRng& rng) {
    AlignParams p;
    for (size_t k = 0; k < scale_count; ++k) {
        p.w.push_back(Tensor::randn({width, d_c}, rng, 0.02, true));
        p.b.push_back(Tensor::full({d_c}, 0.0, true));
    }
    return p;
}

// Mean-pools DiT tokens into the scale's nearest spatial buckets. Buckets
// coarser than the token grid average their tokens; finer buckets replicate
// the nearest token.
inline TensorPtr build_pool_matrix(const ScaleSpec& scale, int grid_h, int grid_w) {
    const int n = scale.token_count();
    const int t = grid_h * grid_w;
    auto pool = Tensor::create({n, t});
    for (int r = 0; r < scale.grid_h; ++r) {
        for (int c = 0; c < scale.grid_w; ++c) {
            const int bucket = r * scale.grid_w + c;
            std::vector<int> members;
            for (int ty = 0; ty < grid_h; ++ty)
                for (int tx = 0; tx < grid_w; ++tx)
                    if (ty * scale.grid_h / grid_h == r && tx * scale.grid_w / grid_w == c)
                        members.push_back(ty * grid_w + tx);
            if (members.empty()) {
                const int ty = std::min(grid_h - 1, (2 * r + 1) * grid_h / (2 * scale.grid_h));
                const int tx = std::min(grid_w - 1, (2 * c + 1) * grid_w / (2 * scale.grid_w));
                members.push_back(ty * grid_w + tx);
            }
            const double weight = 1.0 / static_cast<double>(members.size());
            for (int m : members) pool->data[static_cast<size_t>(bucket) * t + m] = weight;
        }
    }
    return pool;
}

// Scale-wise consistency loss: pooled DiT taps, projected to the semantic
// width, against gradient-detached condition tokens; unweighted mean over
// scales. Gradients reach the DiT and the projections, never the connector.
inline TensorPtr msr_align_loss(const std::vector<TensorPtr>& taps, const ConditioningSet& semantic,
                                const AlignParams& proj, const std::vector<ScaleSpec>& scales,
                                int grid_h, int grid_w) {
    if (taps.size() != semantic.tokens.size() || taps.size() != proj.w.size() ||
        taps.size() != scales.size())
        throw ConfigError("msr_align_loss: scale count mismatch");
    TensorPtr total;
    for (size_t k = 0; k < taps.size(); ++k) {
        auto pooled = matmul(build_pool_matrix(scales[k], grid_h, grid_w), taps[k]);
        auto projected = add_row_bias(matmul(pooled, proj.w[k]), proj.b[k]);
        auto term = mse(projected, detach(semantic.tokens[k]));
        total = total ? add(total, term) : term;
    }
    return scale(total, 1.0 / static_cast<double>(taps.size()));
}

// ---------------------------------------------------------------------------
// loss combination
// ---------------------------------------------------------------------------

struct LossBreakdown {
    TensorPtr fm;
    TensorPtr align;
    TensorPtr total;

    double fm_value() const { return fm->item(); }
    double align_value() const { return align->item(); }
    double total_value() const { return total->item(); }
};

inline LossBreakdown total_loss(const TensorPtr& fm, const TensorPtr& align, double lambda_align) {
    if (lambda_align < 0.0) throw ConfigError("total_loss: negative alignment weight");
    LossBreakdown lb;
    lb.fm = fm;
    lb.align = align;
    lb.total = add(fm, scale(align, lambda_align));
    return lb;
}

// ---------------------------------------------------------------------------
// Euler sampler
// ---------------------------------------------------------------------------

using VelocityFn = std::function<std::vector<double>(const std::vector<double>&, double)>;

// Plain Euler integration of dx/dt = v(x, t) from t=0 to 1 in n equal steps.
inline std::vector<double> euler_integrate(const VelocityFn& v, std::vector<double> x, int n) {
    if (n < 1) throw ConfigError("euler_integrate: need at least one step");
    const double dt = 1.0 / static_cast<double>(n);
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / n;
        auto vel = v(x, t);
        if (vel.size() != x.size()) throw DimensionError("euler_integrate: velocity size");
        for (size_t j = 0; j < x.size(); ++j) {
            x[j] += dt * vel[j];
            if (!std::isfinite(x[j]))
                throw NumericError("euler_integrate: non-finite state at step " +
                                   std::to_string(i));
        }
    }
    return x;
}

// Draws x0 ~ N(0, I), integrates the learned field, clamps to [0,1] at the
// very end only.
inline std::vector<double> euler_sample(const DitParams& params, const ConditioningSet& cond,
                                        int steps, SeededRng& rng) {
    NoGrad ng;
    std::vector<double> x(static_cast<size_t>(params.config.flat_dim()));
    for (auto& v : x) v = rng.normal();
    auto field = [&](const std::vector<double>& state, double t) {
        auto xt = Tensor::from_data({1, params.config.flat_dim()},
                                    std::vector<double>(state.begin(), state.end()));
        return dit_forward(params, xt, t, cond).v_pred->data;
    };
    x = euler_integrate(field, std::move(x), steps);
    for (auto& v : x) v = std::clamp(v, 0.0, 1.0);
    return x;
}

// ---------------------------------------------------------------------------
// small planar velocity model for flow sanity checks
// ---------------------------------------------------------------------------

// Two-hidden-layer MLP v(x, t) on the plane; used to verify that the
// flow-matching loss plus the Euler sampler reproduce a known 2-D mixture.
struct PlanarVelocityMlp {
    TensorPtr w1, b1, w2, b2, w3, b3;

    static PlanarVelocityMlp init(int hidden, SeededRng& rng) {
        PlanarVelocityMlp m;
        m.w1 = Tensor::randn({3, hidden}, rng, 0.5, true);
        m.b1 = Tensor::full({hidden}, 0.0, true);
        m.w2 = Tensor::randn({hidden, hidden}, rng, std::sqrt(2.0 / hidden), true);
        m.b2 = Tensor::full({hidden}, 0.0, true);
        m.w3 = Tensor::full({hidden, 2}, 0.0, true);
        m.b3 = Tensor::full({2}, 0.0, true);
        return m;
    }

    std::vector<TensorPtr> params() const { return {w1, b1, w2, b2, w3, b3}; }

    // rows of xt with matching t values; input features are (x, y, t)
    TensorPtr forward(const TensorPtr& xt, const std::vector<double>& t) const {
        const int b = xt->rows();
        auto input = Tensor::create({b, 3});
        for (int i = 0; i < b; ++i) {
            input->data[static_cast<size_t>(i) * 3 + 0] = xt->data[static_cast<size_t>(i) * 2 + 0];
            input->data[static_cast<size_t>(i) * 3 + 1] = xt->data[static_cast<size_t>(i) * 2 + 1];
            input->data[static_cast<size_t>(i) * 3 + 2] = t[static_cast<size_t>(i)];
        }
        auto h1 = gelu(add_row_bias(matmul(input, w1), b1));
        auto h2 = gelu(add_row_bias(matmul(h1, w2), b2));
        return add_row_bias(matmul(h2, w3), b3);
    }
};

}  // namespace msq
