#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msq/common.hpp"
#include "msq/tensor.hpp"

namespace msq {

// One spatial resolution of learnable query tokens.
struct ScaleSpec {
    int grid_h = 0;
    int grid_w = 0;
    int token_count() const { return grid_h * grid_w; }
};

using ScaleSet = std::vector<ScaleSpec>;

inline void validate_scales(const ScaleSet& scales) {
    if (scales.empty()) throw ConfigError("scale set must be nonempty");
    for (size_t k = 0; k < scales.size(); ++k) {
        if (scales[k].grid_h < 1 || scales[k].grid_w < 1)
            throw ConfigError("scale grid extents must be positive");
        if (k > 0) {
            if (scales[k].token_count() <= scales[k - 1].token_count())
                throw ConfigError("scales must be strictly ordered by increasing token count");
            if (scales[k].grid_h == scales[k - 1].grid_h &&
                scales[k].grid_w == scales[k - 1].grid_w)
                throw ConfigError("duplicate scale");
        }
    }
}

// Parameter-free 2-D sinusoidal grid encoding. The first d/2 channels encode
// the row index, the last d/2 the column index; within each half, channel
// pair i is (sin, cos) of pos / 10000^(i / (d/4)).
inline TensorPtr positional_grid(const ScaleSpec& scale, int d) {
    if (d % 4 != 0) throw ConfigError("positional_grid: width must be divisible by 4");
    const int n = scale.token_count();
    auto out = Tensor::create({n, d});
    const int half = d / 2;
    const int pairs = half / 2;
    for (int r = 0; r < scale.grid_h; ++r) {
        for (int c = 0; c < scale.grid_w; ++c) {
            double* row = out->data.data() + static_cast<size_t>(r * scale.grid_w + c) * d;
            for (int i = 0; i < pairs; ++i) {
                const double freq = std::pow(10000.0, -static_cast<double>(i) / pairs);
                row[2 * i] = std::sin(r * freq);
                row[2 * i + 1] = std::cos(r * freq);
                row[half + 2 * i] = std::sin(c * freq);
                row[half + 2 * i + 1] = std::cos(c * freq);
            }
        }
    }
    return out;
}

// Learnable query matrices with boundary markers and fixed positional grids,
// one entry per scale.
struct QueryBank {
    int d = 0;
    ScaleSet scales;
    std::vector<TensorPtr> q;             // N_k x d, trainable
    std::vector<TensorPtr> start_marker;  // d, trainable
    std::vector<TensorPtr> end_marker;    // d, trainable
    std::vector<TensorPtr> pos;           // N_k x d, fixed

    size_t scale_count() const { return scales.size(); }
};

inline QueryBank init_query_bank(const ScaleSet& scales, int d, SeededRng& rng) {
    validate_scales(scales);
    if (d % 4 != 0) throw ConfigError("init_query_bank: width must be divisible by 4");
    QueryBank bank;
    bank.d = d;
    bank.scales = scales;
    constexpr double init_std = 0.02;
    for (const auto& s : scales) {
        bank.q.push_back(Tensor::randn({s.token_count(), d}, rng, init_std, true));
        bank.start_marker.push_back(Tensor::randn({1, d}, rng, init_std, true));
        bank.end_marker.push_back(Tensor::randn({1, d}, rng, init_std, true));
        bank.pos.push_back(positional_grid(s, d));
    }
    return bank;
}

// Half-open [begin, end) row range of one scale's query tokens (markers
// excluded) inside the assembled sequence.
struct ScaleSpan {
    int scale_id = 0;
    int begin = 0;
    int end = 0;
};

struct AssembledSequence {
    TensorPtr tokens;  // L x d
    std::vector<ScaleSpan> spans;
    int length() const { return tokens->rows(); }
};

// Concatenates [start_k; Q_k + P_k; end_k] blocks in ascending scale order.
// Positional encodings are added to query rows only; markers stay as-is
// (equivalently, they receive a zero positional vector).
inline AssembledSequence assemble_sequence(const QueryBank& bank) {
    AssembledSequence seq;
    std::vector<TensorPtr> blocks;
    int row = 0;
    for (size_t k = 0; k < bank.scale_count(); ++k) {
        const int n = bank.scales[k].token_count();
        blocks.push_back(bank.start_marker[k]);
        blocks.push_back(add(bank.q[k], bank.pos[k]));
        blocks.push_back(bank.end_marker[k]);
        seq.spans.push_back({static_cast<int>(k), row + 1, row + 1 + n});
        row += n + 2;
    }
    seq.tokens = concat_rows(blocks);
    return seq;
}

// Extracts the query-position rows per scale; marker rows are dropped.
inline std::vector<TensorPtr> slice_scales(const TensorPtr& h,
                                           const std::vector<ScaleSpan>& spans) {
    std::vector<TensorPtr> out;
    out.reserve(spans.size());
    const int rows = h->rows();
    for (const auto& sp : spans) {
        if (sp.begin < 0 || sp.end > rows || sp.begin > sp.end)
            throw DimensionError("slice_scales: span out of bounds");
        out.push_back(slice_rows(h, sp.begin, sp.end));
    }
    return out;
}

}  // namespace msq
