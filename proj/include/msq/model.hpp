#pragma once

#include <string>
#include <utility>
#include <vector>

#include "msq/backbone.hpp"
#include "msq/connector.hpp"
#include "msq/flow.hpp"
#include "msq/image.hpp"
#include "msq/queries.hpp"

namespace msq {

// Model-side hyperparameters; the training config embeds one of these.
struct ModelConfig {
    ScaleSet scales{{2, 2}, {4, 4}};
    int d = 64;
    int d_c = 64;
    int backbone_layers = 2;
    int backbone_heads = 4;
    int backbone_patch = 4;
    int max_seq = 512;
    int dit_width = 64;
    int dit_blocks = 2;
    int dit_heads = 4;
    int dit_patch = 2;
    int image_size = 16;

    BackboneConfig backbone_config() const {
        BackboneConfig cfg;
        cfg.d = d;
        cfg.n_layers = backbone_layers;
        cfg.n_heads = backbone_heads;
        cfg.patch = backbone_patch;
        cfg.max_seq = max_seq;
        return cfg;
    }

    DitConfig dit_config() const {
        DitConfig cfg;
        cfg.img_h = image_size;
        cfg.img_w = image_size;
        cfg.patch = dit_patch;
        cfg.width = dit_width;
        cfg.blocks = dit_blocks;
        cfg.heads = dit_heads;
        cfg.d_c = d_c;
        return cfg;
    }

    void validate() const {
        validate_scales(scales);
        if (d % 4 != 0) throw ConfigError("model width must be divisible by 4");
        if (image_size < 2 || image_size % 2 != 0)
            throw ConfigError("image size must be even and >= 2");
        dit_config().validate();
    }
};

// Everything with parameters: the frozen backbone plus the trainable bank,
// connector, DiT and alignment projections.
struct ModelBundle {
    ModelConfig config;
    Vocabulary vocab;
    BackboneParams backbone;
    QueryBank bank;
    ConnectorParams connector;
    DitParams dit;
    AlignParams align;

    std::vector<std::pair<std::string, TensorPtr>> bank_params() const {
        std::vector<std::pair<std::string, TensorPtr>> out;
        for (size_t k = 0; k < bank.scale_count(); ++k) {
            const std::string p = "scale" + std::to_string(k) + ".";
            out.emplace_back(p + "q", bank.q[k]);
            out.emplace_back(p + "start", bank.start_marker[k]);
            out.emplace_back(p + "end", bank.end_marker[k]);
        }
        return out;
    }

    // Deterministic order: bank, connector, dit, alignment projections.
    std::vector<TensorPtr> trainable_tensors() const {
        std::vector<TensorPtr> out;
        for (const auto& [n, t] : bank_params()) out.push_back(t);
        for (const auto& [n, t] : connector.named_params()) out.push_back(t);
        for (const auto& [n, t] : dit.named_params()) out.push_back(t);
        for (const auto& [n, t] : align.named_params()) out.push_back(t);
        return out;
    }
};

// The backbone seed is fixed by the run seed; its parameters are a documented
// random initialization and never train.
inline ModelBundle init_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    ModelBundle m;
    m.config = config;
    SeededRng root(seed);
    auto backbone_rng = root.split("backbone");
    m.backbone = init_backbone(config.backbone_config(), m.vocab, backbone_rng);
    auto bank_rng = root.split("bank");
    m.bank = init_query_bank(config.scales, config.d, bank_rng);
    auto connector_rng = root.split("connector");
    m.connector = init_connector(config.scales.size(), config.d, config.d_c, connector_rng);
    auto dit_rng = root.split("dit");
    m.dit = init_dit(config.dit_config(), dit_rng);
    auto align_rng = root.split("align");
    m.align = init_align(config.scales.size(), config.dit_width, config.d_c, align_rng);
    return m;
}

// Caption -> frozen backbone -> connector conditioning.
inline ConditioningSet condition_for(const ModelBundle& m, const std::vector<int>& text_ids,
                                     const std::optional<Image>& image = std::nullopt) {
    auto h = backbone_forward(m.backbone, text_ids, image, m.bank);
    return project_condition(read_query_states(h), m.connector);
}

inline Image generate(const ModelBundle& m, const std::vector<int>& text_ids, int euler_steps,
                      SeededRng& rng) {
    NoGrad ng;
    auto cond = condition_for(m, text_ids);
    auto flat = euler_sample(m.dit, cond, euler_steps, rng);
    return Image::from_flat(flat, m.config.image_size, m.config.image_size);
}

inline Image generate_caption(const ModelBundle& m, const std::string& caption, int euler_steps,
                              SeededRng& rng) {
    return generate(m, tokenize_text(m.vocab, caption), euler_steps, rng);
}

}  // namespace msq
