#pragma once

#include <string>
#include <vector>

#include "msq/backbone.hpp"
#include "msq/queries.hpp"
#include "msq/tensor.hpp"

namespace msq {

// Per-scale condition tokens in the diffusion model's conditioning space.
struct ConditioningSet {
    int d_c = 0;
    std::vector<TensorPtr> tokens;  // N_k x d_c per scale
};

// Trainable bridge from backbone query states to conditioning space: one
// affine map plus layer norm per scale.
struct ConnectorParams {
    int d = 0;
    int d_c = 0;
    std::vector<TensorPtr> w;     // d x d_c
    std::vector<TensorPtr> b;     // d_c
    std::vector<TensorPtr> ln_g;  // d_c
    std::vector<TensorPtr> ln_b;  // d_c

    std::vector<std::pair<std::string, TensorPtr>> named_params() const {
        std::vector<std::pair<std::string, TensorPtr>> out;
        for (size_t k = 0; k < w.size(); ++k) {
            const std::string p = "scale" + std::to_string(k) + ".";
            out.emplace_back(p + "w", w[k]);
            out.emplace_back(p + "b", b[k]);
            out.emplace_back(p + "ln_g", ln_g[k]);
            out.emplace_back(p + "ln_b", ln_b[k]);
        }
        return out;
    }
};

// Square projections start at identity so a freshly initialized connector is
// just layer_norm; rectangular ones fall back to random init.
inline ConnectorParams init_connector(size_t scale_count, int d, int d_c, SeededRng& rng) {
    ConnectorParams p;
    p.d = d;
    p.d_c = d_c;
    for (size_t k = 0; k < scale_count; ++k) {
        TensorPtr w;
        if (d == d_c) {
            w = Tensor::create({d, d_c}, true);
            for (int i = 0; i < d; ++i) w->data[static_cast<size_t>(i) * d_c + i] = 1.0;
        } else {
            w = Tensor::randn({d, d_c}, rng, 0.02, true);
        }
        p.w.push_back(w);
        p.b.push_back(Tensor::full({d_c}, 0.0, true));
        p.ln_g.push_back(Tensor::full({d_c}, 1.0, true));
        p.ln_b.push_back(Tensor::full({d_c}, 0.0, true));
    }
    return p;
}

inline std::vector<TensorPtr> read_query_states(const HiddenStates& h) {
    return slice_scales(h.h, h.query_spans);
}

inline ConditioningSet project_condition(const std::vector<TensorPtr>& states,
                                         const ConnectorParams& params) {
    if (states.size() != params.w.size())
        throw DimensionError("project_condition: scale count mismatch");
    ConditioningSet cond;
    cond.d_c = params.d_c;
    for (size_t k = 0; k < states.size(); ++k) {
        if (states[k]->cols() != params.d)
            throw DimensionError("project_condition: input width mismatch");
        auto projected = add_row_bias(matmul(states[k], params.w[k]), params.b[k]);
        cond.tokens.push_back(layer_norm(projected, params.ln_g[k], params.ln_b[k]));
    }
    return cond;
}

}  // namespace msq
