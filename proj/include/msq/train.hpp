#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "msq/checkpoint.hpp"
#include "msq/model.hpp"
#include "msq/optim.hpp"
#include "msq/shapeworld.hpp"

namespace msq {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    ModelConfig model;
    double lambda_align = 0.5;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 4;
    int64_t steps = 600;
    uint64_t seed = 1234;
    int dataset_size = 256;
    int euler_steps = 100;
    std::string optimizer = "adam";
    int64_t checkpoint_interval = 0;  // 0: only at the end

    void validate() const {
        model.validate();
        if (lambda_align < 0) throw ConfigError("lambda_align must be >= 0");
        if (lr <= 0 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1 || adam_eps <= 0)
            throw ConfigError("bad optimizer hyperparameters");
        if (batch_size < 1 || steps < 1 || dataset_size < 1 || euler_steps < 1)
            throw ConfigError("batch size, steps, dataset size and euler steps must be positive");
        if (optimizer != "adam" && optimizer != "sgd")
            throw ConfigError("optimizer must be adam or sgd");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["scales"] = nlohmann::json::array();
        for (const auto& s : model.scales) j["scales"].push_back({s.grid_h, s.grid_w});
        j["d"] = model.d;
        j["d_c"] = model.d_c;
        j["backbone_layers"] = model.backbone_layers;
        j["backbone_heads"] = model.backbone_heads;
        j["backbone_patch"] = model.backbone_patch;
        j["max_seq"] = model.max_seq;
        j["dit_width"] = model.dit_width;
        j["dit_blocks"] = model.dit_blocks;
        j["dit_heads"] = model.dit_heads;
        j["dit_patch"] = model.dit_patch;
        j["image_size"] = model.image_size;
        j["lambda_align"] = lambda_align;
        j["lr"] = lr;
        j["beta1"] = beta1;
        j["beta2"] = beta2;
        j["adam_eps"] = adam_eps;
        j["batch_size"] = batch_size;
        j["steps"] = steps;
        j["seed"] = seed;
        j["dataset_size"] = dataset_size;
        j["euler_steps"] = euler_steps;
        j["optimizer"] = optimizer;
        j["checkpoint_interval"] = checkpoint_interval;
        return j;
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        if (j.contains("scales")) {
            c.model.scales.clear();
            for (const auto& s : j.at("scales"))
                c.model.scales.push_back({s.at(0).get<int>(), s.at(1).get<int>()});
        }
        auto get = [&](const char* key, auto& slot) {
            if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
        };
        get("d", c.model.d);
        get("d_c", c.model.d_c);
        get("backbone_layers", c.model.backbone_layers);
        get("backbone_heads", c.model.backbone_heads);
        get("backbone_patch", c.model.backbone_patch);
        get("max_seq", c.model.max_seq);
        get("dit_width", c.model.dit_width);
        get("dit_blocks", c.model.dit_blocks);
        get("dit_heads", c.model.dit_heads);
        get("dit_patch", c.model.dit_patch);
        get("image_size", c.model.image_size);
        get("lambda_align", c.lambda_align);
        get("lr", c.lr);
        get("beta1", c.beta1);
        get("beta2", c.beta2);
        get("adam_eps", c.adam_eps);
        get("batch_size", c.batch_size);
        get("steps", c.steps);
        get("seed", c.seed);
        get("dataset_size", c.dataset_size);
        get("euler_steps", c.euler_steps);
        get("optimizer", c.optimizer);
        get("checkpoint_interval", c.checkpoint_interval);
        return c;
    }

    // Everything that must agree for a checkpoint to be resumable; the step
    // budget and checkpoint cadence may change between runs.
    nlohmann::json fingerprint() const {
        auto j = to_json();
        j.erase("steps");
        j.erase("checkpoint_interval");
        return j;
    }
};

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

struct TrainSample {
    SceneDescription scene;
    std::string caption;
    std::vector<int> token_ids;
    std::vector<double> image_flat;
};

// Scenes are drawn with a uniform object count (1..4, then uniform given the
// count) so single-object captions are a quarter of the data.
inline std::vector<TrainSample> make_dataset(const TrainConfig& cfg, const Vocabulary& vocab) {
    auto rng = SeededRng(cfg.seed).split("data");
    std::vector<TrainSample> out;
    out.reserve(static_cast<size_t>(cfg.dataset_size));
    for (int i = 0; i < cfg.dataset_size; ++i) {
        TrainSample s;
        const int count = 1 + static_cast<int>(rng.below(4));
        s.scene = gen_scene(rng, {.count = count});
        s.caption = caption_scene(s.scene);
        s.token_ids = tokenize_text(vocab, s.caption);
        s.image_flat = render_scene(s.scene, cfg.model.image_size).rgb;
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<uint8_t> encode_u64_pair(uint64_t a, uint64_t b) {
    std::vector<uint8_t> out;
    put_u64(out, a);
    put_u64(out, b);
    return out;
}

inline std::pair<uint64_t, uint64_t> decode_u64_pair(const std::vector<uint8_t>& bytes) {
    ByteReader r{bytes};
    uint64_t a = r.u64("u64 pair");
    uint64_t b = r.u64("u64 pair");
    return {a, b};
}

}  // namespace detail

using OptimizerVariant = std::variant<Adam, Sgd>;

inline OptimizerVariant make_optimizer(const TrainConfig& cfg, const ModelBundle& m) {
    if (cfg.optimizer == "sgd") return OptimizerVariant{Sgd(m.trainable_tensors(), cfg.lr)};
    return OptimizerVariant{
        Adam(m.trainable_tensors(), {cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps})};
}

inline CheckpointFile make_checkpoint(const TrainConfig& cfg, const ModelBundle& m,
                                      const OptimizerVariant& opt, const SeededRng& flow_rng,
                                      const SeededRng& batch_rng, int64_t step) {
    CheckpointFile ck;
    auto add_section = [&](std::string name, std::vector<uint8_t> bytes) {
        ck.sections.push_back({std::move(name), std::move(bytes)});
    };
    const std::string config_text = cfg.to_json().dump();
    add_section("meta/config", std::vector<uint8_t>(config_text.begin(), config_text.end()));
    {
        std::vector<uint8_t> b;
        detail::put_u64(b, static_cast<uint64_t>(step));
        add_section("meta/step", std::move(b));
    }
    add_section("rng/flow", detail::encode_u64_pair(flow_rng.seed(), flow_rng.state()));
    add_section("rng/batch", detail::encode_u64_pair(batch_rng.seed(), batch_rng.state()));
    add_section("params/bank", encode_param_group(m.bank_params()));
    add_section("params/connector", encode_param_group(m.connector.named_params()));
    add_section("params/dit", encode_param_group(m.dit.named_params()));
    add_section("params/align", encode_param_group(m.align.named_params()));
    add_section("params/backbone", encode_param_group(m.backbone.named_params()));
    add_section("optim/state",
                encode_f64(std::visit([](const auto& o) { return o.state_blob(); }, opt)));
    return ck;
}

inline TrainConfig config_from_checkpoint(const CheckpointFile& ck) {
    const auto& sec = ck.require("meta/config");
    const std::string text(sec.bytes.begin(), sec.bytes.end());
    try {
        return TrainConfig::from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("bad embedded config: ") + e.what());
    }
}

inline void load_params_into(const CheckpointFile& ck, ModelBundle& m) {
    decode_param_group(ck.require("params/bank").bytes, m.bank_params(), "params/bank");
    decode_param_group(ck.require("params/connector").bytes, m.connector.named_params(),
                       "params/connector");
    decode_param_group(ck.require("params/dit").bytes, m.dit.named_params(), "params/dit");
    decode_param_group(ck.require("params/align").bytes, m.align.named_params(), "params/align");
    decode_param_group(ck.require("params/backbone").bytes, m.backbone.named_params(),
                       "params/backbone");
}

// Rebuilds a complete model from the embedded config and parameter blobs.
inline std::pair<TrainConfig, ModelBundle> load_model(const CheckpointFile& ck) {
    auto cfg = config_from_checkpoint(ck);
    cfg.validate();
    auto bundle = init_model(cfg.model, cfg.seed);
    load_params_into(ck, bundle);
    return {std::move(cfg), std::move(bundle)};
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainLogRow {
    int64_t step = 0;
    double fm = 0;
    double align = 0;
    double total = 0;
    double ms = 0;
};

struct TrainResult {
    CheckpointFile checkpoint;
    std::vector<TrainLogRow> log;
    int64_t final_step = 0;
};

struct TrainHooks {
    std::function<void(const TrainLogRow&)> on_log;
    std::function<void(int64_t, const CheckpointFile&)> on_checkpoint;
};

// One full (or resumed) run: scenes -> captions/renders -> frozen backbone ->
// connector -> flow interpolation -> DiT -> combined loss -> Adam on the
// trainable groups only. Deterministic given the config seed.
inline TrainResult train_run(const TrainConfig& cfg,
                             const std::optional<CheckpointFile>& resume = std::nullopt,
                             const TrainHooks& hooks = {}) {
    cfg.validate();
    auto bundle = init_model(cfg.model, cfg.seed);
    auto opt = make_optimizer(cfg, bundle);
    SeededRng root(cfg.seed);
    auto flow_rng = root.split("flow");
    auto batch_rng = root.split("batch");
    int64_t start_step = 0;

    if (resume) {
        auto embedded = config_from_checkpoint(*resume);
        if (embedded.fingerprint() != cfg.fingerprint())
            throw SchemaError("resume checkpoint was produced by a different configuration");
        load_params_into(*resume, bundle);
        std::visit([&](auto& o) { o.restore_state(decode_f64(resume->require("optim/state").bytes)); },
                   opt);
        auto [fs, fst] = detail::decode_u64_pair(resume->require("rng/flow").bytes);
        flow_rng.restore(fs, fst);
        auto [bs, bst] = detail::decode_u64_pair(resume->require("rng/batch").bytes);
        batch_rng.restore(bs, bst);
        detail::ByteReader r{resume->require("meta/step").bytes};
        start_step = static_cast<int64_t>(r.u64("meta/step"));
    }

    const auto dataset = make_dataset(cfg, bundle.vocab);
    const int flat_dim = cfg.model.image_size * cfg.model.image_size * 3;
    const auto dit_cfg = cfg.model.dit_config();
    TrainResult result;

    for (int64_t step = start_step + 1; step <= cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        std::visit([](auto& o) { o.zero_grad(); }, opt);

        TensorPtr fm_sum, align_sum;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& sample = dataset[batch_rng.below(static_cast<uint64_t>(dataset.size()))];
            auto cond = condition_for(bundle, sample.token_ids);
            auto x1 = Tensor::from_data({1, flat_dim}, sample.image_flat);
            auto fb = flow_interpolate(x1, flow_rng);
            auto out = dit_forward(bundle.dit, fb.xt, fb.t[0], cond);
            auto fm_i = fm_loss(out.v_pred, fb.v_target);
            fm_sum = fm_sum ? add(fm_sum, fm_i) : fm_i;
            if (cfg.lambda_align > 0.0) {
                auto align_i = msr_align_loss(out.taps, cond, bundle.align, cfg.model.scales,
                                              dit_cfg.grid_h(), dit_cfg.grid_w());
                align_sum = align_sum ? add(align_sum, align_i) : align_i;
            }
        }
        auto fm_mean = scale(fm_sum, 1.0 / cfg.batch_size);
        auto align_mean =
            align_sum ? scale(align_sum, 1.0 / cfg.batch_size) : Tensor::scalar(0.0);
        auto lb = total_loss(fm_mean, align_mean, cfg.lambda_align);

        if (!std::isfinite(lb.total_value())) {
            std::ostringstream os;
            os << "non-finite loss at step " << step << " (fm=" << lb.fm_value()
               << ", align=" << lb.align_value() << ")";
            throw NumericError(os.str());
        }

        backward(lb.total);
        std::visit([](auto& o) { o.step(); }, opt);

        const auto t1 = std::chrono::steady_clock::now();
        TrainLogRow row{step, lb.fm_value(), lb.align_value(), lb.total_value(),
                        std::chrono::duration<double, std::milli>(t1 - t0).count()};
        result.log.push_back(row);
        if (hooks.on_log) hooks.on_log(row);
        if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 &&
            step != cfg.steps && hooks.on_checkpoint) {
            hooks.on_checkpoint(step, make_checkpoint(cfg, bundle, opt, flow_rng, batch_rng, step));
        }
    }

    result.final_step = cfg.steps;
    result.checkpoint = make_checkpoint(cfg, bundle, opt, flow_rng, batch_rng, cfg.steps);
    return result;
}

}  // namespace msq
