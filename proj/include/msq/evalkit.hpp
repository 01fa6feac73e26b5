#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msq/common.hpp"
#include "msq/image.hpp"
#include "msq/model.hpp"
#include "msq/shapeworld.hpp"

namespace msq {

// ---------------------------------------------------------------------------
// palette snapping and object detection
// ---------------------------------------------------------------------------

struct SnapResult {
    Image image;
    double mean_distance = 0.0;  // mean L2 distance moved, fidelity diagnostic
};

// Projects every pixel to the nearest of {white} + palette. Ties break toward
// white, then palette order.
inline SnapResult snap_to_palette(const Image& img) {
    SnapResult out;
    out.image = img;
    double total = 0.0;
    const int pixels = img.h * img.w;
    for (int i = 0; i < pixels; ++i) {
        const double r = img.rgb[static_cast<size_t>(i) * 3];
        const double g = img.rgb[static_cast<size_t>(i) * 3 + 1];
        const double b = img.rgb[static_cast<size_t>(i) * 3 + 2];
        double best = (r - 1) * (r - 1) + (g - 1) * (g - 1) + (b - 1) * (b - 1);  // white
        int best_idx = -1;
        for (int c = 0; c < kColorCount; ++c) {
            const auto& p = kPalette[static_cast<size_t>(c)];
            const double d =
                (r - p[0]) * (r - p[0]) + (g - p[1]) * (g - p[1]) + (b - p[2]) * (b - p[2]);
            if (d < best) {
                best = d;
                best_idx = c;
            }
        }
        const double* target =
            best_idx < 0 ? nullptr : kPalette[static_cast<size_t>(best_idx)].data();
        out.image.rgb[static_cast<size_t>(i) * 3] = target ? target[0] : 1.0;
        out.image.rgb[static_cast<size_t>(i) * 3 + 1] = target ? target[1] : 1.0;
        out.image.rgb[static_cast<size_t>(i) * 3 + 2] = target ? target[2] : 1.0;
        total += std::sqrt(best);
    }
    out.mean_distance = pixels > 0 ? total / pixels : 0.0;
    return out;
}

// Fill-ratio signatures measured off the rasterizer and frozen: a square
// fills its bounding box exactly, a circle covers ~0.78-0.89 of it across
// the sizes in use, a triangle ~0.5-0.67.
constexpr double kSquareFillThreshold = 0.95;
constexpr double kCircleFillThreshold = 0.70;

// Segments non-white pixels by exact palette color per cell, classifies the
// dominant blob by its bounding-box fill ratio, and emits one detection per
// occupied cell. strict mode treats any non-palette pixel as a broken
// renderer/sampler contract.
inline std::vector<SceneObject> detect_objects(const Image& img, bool strict = true) {
    if (img.h != img.w || img.h % 2 != 0) throw VerifierError("detector expects square even images");
    const int cell = img.h / 2;
    const int min_pixels = std::max(1, cell * cell / 16);
    std::vector<SceneObject> out;
    for (int cy = 0; cy < 2; ++cy) {
        for (int cx = 0; cx < 2; ++cx) {
            std::array<int, 4> count{};
            for (int y = cy * cell; y < (cy + 1) * cell; ++y) {
                for (int x = cx * cell; x < (cx + 1) * cell; ++x) {
                    const double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
                    if (r == 1.0 && g == 1.0 && b == 1.0) continue;
                    int match = -1;
                    for (int c = 0; c < kColorCount; ++c) {
                        const auto& p = kPalette[static_cast<size_t>(c)];
                        if (r == p[0] && g == p[1] && b == p[2]) {
                            match = c;
                            break;
                        }
                    }
                    if (match < 0) {
                        if (strict)
                            throw VerifierError("non-palette pixel at (" + std::to_string(x) +
                                                "," + std::to_string(y) + ")");
                        continue;
                    }
                    ++count[static_cast<size_t>(match)];
                }
            }
            int total = count[0] + count[1] + count[2] + count[3];
            if (total < min_pixels) continue;
            int dominant = 0;
            for (int c = 1; c < kColorCount; ++c)
                if (count[static_cast<size_t>(c)] > count[static_cast<size_t>(dominant)])
                    dominant = c;
            if (count[static_cast<size_t>(dominant)] < min_pixels) continue;
            const auto& p = kPalette[static_cast<size_t>(dominant)];
            int x0 = img.w, x1 = -1, y0 = img.h, y1 = -1, filled = 0;
            for (int y = cy * cell; y < (cy + 1) * cell; ++y)
                for (int x = cx * cell; x < (cx + 1) * cell; ++x)
                    if (img.at(y, x, 0) == p[0] && img.at(y, x, 1) == p[1] &&
                        img.at(y, x, 2) == p[2]) {
                        ++filled;
                        x0 = std::min(x0, x);
                        x1 = std::max(x1, x);
                        y0 = std::min(y0, y);
                        y1 = std::max(y1, y);
                    }
            const double bbox = static_cast<double>(x1 - x0 + 1) * (y1 - y0 + 1);
            const double fill = filled / bbox;
            ObjShape shape = ObjShape::triangle;
            if (fill >= kSquareFillThreshold)
                shape = ObjShape::square;
            else if (fill >= kCircleFillThreshold)
                shape = ObjShape::circle;
            out.push_back({shape, static_cast<ObjColor>(dominant), cy * 2 + cx});
        }
    }
    return out;
}

// Category predicate over a generated image: snap, detect, test.
inline bool score_prompt(const Prompt& prompt, const Image& img) {
    auto snapped = snap_to_palette(img);
    return prompt_satisfied(prompt, detect_objects(snapped.image, true));
}

// ---------------------------------------------------------------------------
// aggregation, display rounding, psnr
// ---------------------------------------------------------------------------

inline double aggregate_geneval(const std::array<double, 6>& category_scores) {
    double sum = 0.0;
    for (double v : category_scores) {
        if (v < 0.0 || v > 1.0) throw ConfigError("category score out of [0,1]");
        sum += v;
    }
    return sum / 6.0;
}

// Half-up to two decimals, display only; stored values stay unrounded.
inline double display_round2(double v) { return std::floor(v * 100.0 + 0.5) / 100.0; }

constexpr double kPsnrCap = 99.0;

inline double psnr(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w) throw DimensionError("psnr: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = a.rgb[i] - b.rgb[i];
        acc += d * d;
    }
    const double mse_v = acc / static_cast<double>(a.rgb.size());
    if (mse_v == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse_v));
}

// ---------------------------------------------------------------------------
// prompt sampling per category
// ---------------------------------------------------------------------------

constexpr std::array<Category, 6> kAllCategories{
    Category::single_object, Category::two_object, Category::counting,
    Category::colors,        Category::position,   Category::color_attribution};

namespace detail {

inline ObjColor rand_color(SeededRng& rng) { return static_cast<ObjColor>(rng.below(4)); }
inline ObjShape rand_shape(SeededRng& rng) { return static_cast<ObjShape>(rng.below(3)); }

}  // namespace detail

// Draws a prompt caption from the category's template family. The canonical
// caption grammar parses every form emitted here.
inline std::string sample_prompt_caption(Category cat, SeededRng& rng) {
    std::ostringstream os;
    switch (cat) {
        case Category::single_object: {
            os << "one " << color_name(detail::rand_color(rng)) << " "
               << shape_name(detail::rand_shape(rng));
            break;
        }
        case Category::two_object: {
            auto s1 = detail::rand_shape(rng);
            auto s2 = s1;
            while (s2 == s1) s2 = detail::rand_shape(rng);
            os << "a " << shape_name(s1) << " and a " << shape_name(s2);
            break;
        }
        case Category::counting: {
            const int n = 2 + static_cast<int>(rng.below(3));
            os << count_word(n) << " " << color_name(detail::rand_color(rng)) << " "
               << shape_plural(detail::rand_shape(rng));
            break;
        }
        case Category::colors: {
            os << "a " << color_name(detail::rand_color(rng)) << " "
               << shape_name(detail::rand_shape(rng));
            break;
        }
        case Category::position: {
            auto c1 = detail::rand_color(rng);
            auto s1 = detail::rand_shape(rng);
            auto c2 = detail::rand_color(rng);
            auto s2 = detail::rand_shape(rng);
            while (c1 == c2 && s1 == s2) {
                c2 = detail::rand_color(rng);
                s2 = detail::rand_shape(rng);
            }
            static const char* rel_words[] = {"left of", "right of", "above", "below"};
            os << "a " << color_name(c1) << " " << shape_name(s1) << " "
               << rel_words[rng.below(4)] << " a " << color_name(c2) << " " << shape_name(s2);
            break;
        }
        case Category::color_attribution: {
            auto s1 = detail::rand_shape(rng);
            auto s2 = s1;
            while (s2 == s1) s2 = detail::rand_shape(rng);
            auto c1 = detail::rand_color(rng);
            auto c2 = c1;
            while (c2 == c1) c2 = detail::rand_color(rng);
            os << "a " << color_name(c1) << " " << shape_name(s1) << " and a " << color_name(c2)
               << " " << shape_name(s2);
            break;
        }
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// evaluation report
// ---------------------------------------------------------------------------

struct EvalReport {
    std::array<double, 6> accuracy{};
    std::array<int, 6> n{};
    std::array<double, 6> chance{};  // empirical no-skill baseline per category
    double overall = 0.0;            // unrounded; display rounds to 2 decimals
    uint64_t seed = 0;
    int euler_steps = 0;
    int chance_trials = 0;
    double mean_snap_distance = 0.0;
    bool empty_warning = false;

    nlohmann::json to_json() const {
        nlohmann::json j;
        for (size_t i = 0; i < 6; ++i) {
            nlohmann::json cat;
            cat["accuracy"] = accuracy[i];
            cat["n"] = n[i];
            cat["chance"] = chance[i];
            j["categories"][category_name(kAllCategories[i])] = cat;
        }
        j["overall"] = overall;
        j["overall_display"] = display_round2(overall);
        j["seed"] = seed;
        j["euler_steps"] = euler_steps;
        j["chance_trials"] = chance_trials;
        j["mean_snap_distance"] = mean_snap_distance;
        if (empty_warning) j["warning"] = "no prompts evaluated";
        return j;
    }

    std::string to_table() const {
        std::ostringstream os;
        os << std::left << std::setw(20) << "category" << std::right << std::setw(10) << "acc"
           << std::setw(10) << "chance" << std::setw(8) << "n" << "\n";
        for (size_t i = 0; i < 6; ++i) {
            os << std::left << std::setw(20) << category_name(kAllCategories[i]) << std::right
               << std::fixed << std::setprecision(2) << std::setw(10) << display_round2(accuracy[i])
               << std::setw(10) << display_round2(chance[i]) << std::setw(8) << n[i] << "\n";
        }
        os << std::left << std::setw(20) << "overall" << std::right << std::fixed
           << std::setprecision(2) << std::setw(10) << display_round2(overall) << "\n";
        if (empty_warning) os << "warning: no prompts evaluated\n";
        return os.str();
    }
};

// Training and baseline scenes share the same distribution: uniform object
// count, then uniform scene given the count.
inline SceneDescription sample_eval_scene(SeededRng& rng) {
    const int count = 1 + static_cast<int>(rng.below(4));
    return gen_scene(rng, {.count = count});
}

// No-skill baseline: scores category prompts against renders of independently
// drawn scenes. Computed empirically, never asserted as a constant.
inline double chance_baseline(Category cat, int trials, SeededRng& rng) {
    if (trials < 1) return 0.0;
    int hits = 0;
    for (int i = 0; i < trials; ++i) {
        const auto prompt = parse_caption(sample_prompt_caption(cat, rng));
        const auto scene = sample_eval_scene(rng);
        if (prompt_satisfied(prompt, scene.objects)) ++hits;
    }
    return static_cast<double>(hits) / trials;
}

struct CategoryEval {
    double accuracy = 0.0;
    int n = 0;
    double mean_snap_distance = 0.0;
};

inline CategoryEval eval_category(const ModelBundle& m, Category cat, int n_prompts,
                                  SeededRng& rng, int euler_steps) {
    CategoryEval out;
    out.n = n_prompts;
    if (n_prompts < 1) return out;
    int hits = 0;
    double snap_total = 0.0;
    for (int i = 0; i < n_prompts; ++i) {
        const auto caption = sample_prompt_caption(cat, rng);
        const auto prompt = parse_caption(caption);
        auto img = generate_caption(m, caption, euler_steps, rng);
        auto snapped = snap_to_palette(img);
        snap_total += snapped.mean_distance;
        if (prompt_satisfied(prompt, detect_objects(snapped.image, true))) ++hits;
    }
    out.accuracy = static_cast<double>(hits) / n_prompts;
    out.mean_snap_distance = snap_total / n_prompts;
    return out;
}

// Full six-category compositional evaluation of a trained model.
inline EvalReport run_eval(const ModelBundle& m, int n_per_category, uint64_t seed,
                           int euler_steps, int chance_trials = 2000) {
    EvalReport report;
    report.seed = seed;
    report.euler_steps = euler_steps;
    report.chance_trials = chance_trials;
    SeededRng root(seed);
    double snap_total = 0.0;
    std::array<double, 6> scores{};
    for (size_t i = 0; i < 6; ++i) {
        auto cat_rng = root.split(std::string("eval/") + category_name(kAllCategories[i]));
        auto ce = eval_category(m, kAllCategories[i], n_per_category, cat_rng, euler_steps);
        report.accuracy[i] = ce.accuracy;
        report.n[i] = ce.n;
        snap_total += ce.mean_snap_distance;
        auto chance_rng = root.split(std::string("chance/") + category_name(kAllCategories[i]));
        report.chance[i] = chance_baseline(kAllCategories[i], chance_trials, chance_rng);
        scores[i] = report.accuracy[i];
    }
    report.overall = aggregate_geneval(scores);
    report.mean_snap_distance = n_per_category > 0 ? snap_total / 6.0 : 0.0;
    report.empty_warning = n_per_category < 1;
    return report;
}

}  // namespace msq
