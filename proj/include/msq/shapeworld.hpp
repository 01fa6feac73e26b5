#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "msq/common.hpp"
#include "msq/image.hpp"
#include "msq/rng.hpp"

namespace msq {

// ---------------------------------------------------------------------------
// scenes
// ---------------------------------------------------------------------------

enum class ObjShape : int { circle = 0, square = 1, triangle = 2 };
enum class ObjColor : int { red = 0, green = 1, blue = 2, yellow = 3 };

constexpr int kShapeCount = 3;
constexpr int kColorCount = 4;
constexpr int kCellCount = 4;  // 2x2 grid, row-major

// Exact palette; every rendered non-background pixel carries one of these.
constexpr std::array<std::array<double, 3>, 4> kPalette{{
    {1.0, 0.0, 0.0},  // red
    {0.0, 1.0, 0.0},  // green
    {0.0, 0.0, 1.0},  // blue
    {1.0, 1.0, 0.0},  // yellow
}};

inline const char* shape_name(ObjShape s) {
    switch (s) {
        case ObjShape::circle: return "circle";
        case ObjShape::square: return "square";
        default: return "triangle";
    }
}
inline const char* shape_plural(ObjShape s) {
    switch (s) {
        case ObjShape::circle: return "circles";
        case ObjShape::square: return "squares";
        default: return "triangles";
    }
}
inline const char* color_name(ObjColor c) {
    switch (c) {
        case ObjColor::red: return "red";
        case ObjColor::green: return "green";
        case ObjColor::blue: return "blue";
        default: return "yellow";
    }
}
inline const char* count_word(int n) {
    static const char* words[] = {"", "one", "two", "three", "four"};
    if (n < 1 || n > 4) throw GenerationError("count word out of range");
    return words[n];
}

inline int cell_row(int cell) { return cell / 2; }
inline int cell_col(int cell) { return cell % 2; }

struct SceneObject {
    ObjShape shape;
    ObjColor color;
    int cell;  // 0..3

    bool operator==(const SceneObject&) const = default;
};

struct SceneDescription {
    std::vector<SceneObject> objects;  // sorted by cell, at most one per cell

    bool operator==(const SceneDescription&) const = default;
};

inline void validate_scene(const SceneDescription& scene) {
    if (scene.objects.empty() || scene.objects.size() > 4)
        throw GenerationError("scene must contain 1..4 objects");
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        if (scene.objects[i].cell < 0 || scene.objects[i].cell >= kCellCount)
            throw GenerationError("object cell out of range");
        if (i > 0 && scene.objects[i].cell <= scene.objects[i - 1].cell)
            throw GenerationError("objects must occupy distinct ascending cells");
    }
}

struct GenConstraints {
    std::optional<int> count;
    std::optional<ObjColor> color;
    std::optional<ObjShape> shape;
};

// Uniform over valid scenes subject to the constraints: count classes are
// weighted by their exact scene counts, so the unconstrained draw is uniform
// over all 28560 scenes.
inline SceneDescription gen_scene(SeededRng& rng, const GenConstraints& cons = {}) {
    const int variants = (cons.shape ? 1 : kShapeCount) * (cons.color ? 1 : kColorCount);
    int count;
    if (cons.count) {
        count = *cons.count;
        if (count < 1 || count > 4) throw GenerationError("unsatisfiable count constraint");
    } else {
        const double v = variants;
        std::array<double, 4> weight{};  // C(4,c) * v^c for c = 1..4
        const double binom[5] = {1, 4, 6, 4, 1};
        double total = 0.0;
        for (int c = 1; c <= 4; ++c) {
            weight[c - 1] = binom[c] * std::pow(v, c);
            total += weight[c - 1];
        }
        double u = rng.uniform() * total;
        count = 4;
        for (int c = 1; c <= 4; ++c) {
            if (u < weight[c - 1]) {
                count = c;
                break;
            }
            u -= weight[c - 1];
        }
    }
    // uniform cell subset of the requested size
    std::array<int, 4> cells{0, 1, 2, 3};
    for (int i = 0; i < count; ++i) {
        const int j = i + static_cast<int>(rng.below(4 - i));
        std::swap(cells[i], cells[j]);
    }
    std::sort(cells.begin(), cells.begin() + count);
    SceneDescription scene;
    for (int i = 0; i < count; ++i) {
        const int v = static_cast<int>(rng.below(static_cast<uint64_t>(variants)));
        ObjShape s = cons.shape ? *cons.shape
                                : static_cast<ObjShape>(v % kShapeCount);
        ObjColor c = cons.color ? *cons.color
                                : static_cast<ObjColor>(cons.shape ? v : v / kShapeCount);
        scene.objects.push_back({s, c, cells[i]});
    }
    validate_scene(scene);
    return scene;
}

// Invokes fn for every valid scene (28560 of them).
template <typename Fn>
inline void enumerate_scenes(Fn&& fn) {
    // cell state: 0 = empty, 1..12 = (shape, color)
    for (int s0 = 0; s0 < 13; ++s0)
        for (int s1 = 0; s1 < 13; ++s1)
            for (int s2 = 0; s2 < 13; ++s2)
                for (int s3 = 0; s3 < 13; ++s3) {
                    const int states[4] = {s0, s1, s2, s3};
                    SceneDescription scene;
                    for (int cell = 0; cell < 4; ++cell) {
                        if (states[cell] == 0) continue;
                        const int v = states[cell] - 1;
                        scene.objects.push_back({static_cast<ObjShape>(v % kShapeCount),
                                                 static_cast<ObjColor>(v / kShapeCount), cell});
                    }
                    if (!scene.objects.empty()) fn(scene);
                }
}

// ---------------------------------------------------------------------------
// rasterizer
// ---------------------------------------------------------------------------

// White background, exact palette fills, fixed margins. Pure function of
// (scene, size).
inline Image render_scene(const SceneDescription& scene, int size) {
    if (size < 2 || size % 2 != 0) throw DimensionError("render size must be even and >= 2");
    validate_scene(scene);
    Image img(size, size, 1.0);
    const int cell = size / 2;
    const int margin = cell >= 3 ? std::max(1, cell / 8) : 0;
    const int inner = cell - 2 * margin;
    for (const auto& obj : scene.objects) {
        const int x0 = cell_col(obj.cell) * cell + margin;
        const int y0 = cell_row(obj.cell) * cell + margin;
        const auto& rgb = kPalette[static_cast<int>(obj.color)];
        auto put = [&](int x, int y) {
            img.at(y, x, 0) = rgb[0];
            img.at(y, x, 1) = rgb[1];
            img.at(y, x, 2) = rgb[2];
        };
        switch (obj.shape) {
            case ObjShape::square:
                for (int y = 0; y < inner; ++y)
                    for (int x = 0; x < inner; ++x) put(x0 + x, y0 + y);
                break;
            case ObjShape::circle: {
                const double cx = (inner - 1) / 2.0, cy = (inner - 1) / 2.0;
                const double r = inner / 2.0;
                for (int y = 0; y < inner; ++y)
                    for (int x = 0; x < inner; ++x)
                        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) put(x0 + x, y0 + y);
                break;
            }
            case ObjShape::triangle: {
                // apex top-center, base along the bottom edge
                const double ax = (inner - 1) / 2.0, ay = 0.0;
                const double bx = 0.0, by = inner - 1.0;
                const double cx2 = inner - 1.0, cy2 = inner - 1.0;
                auto cross = [](double ox, double oy, double px, double py, double qx, double qy) {
                    return (px - ox) * (qy - oy) - (py - oy) * (qx - ox);
                };
                for (int y = 0; y < inner; ++y)
                    for (int x = 0; x < inner; ++x) {
                        const double d1 = cross(ax, ay, bx, by, x, y);
                        const double d2 = cross(bx, by, cx2, cy2, x, y);
                        const double d3 = cross(cx2, cy2, ax, ay, x, y);
                        const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
                        const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
                        if (!(neg && pos)) put(x0 + x, y0 + y);
                    }
                break;
            }
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// caption grammar
// ---------------------------------------------------------------------------

enum class Category : int {
    single_object = 0,
    two_object = 1,
    counting = 2,
    colors = 3,
    position = 4,
    color_attribution = 5,
};

inline const char* category_name(Category c) {
    static const char* names[] = {"single_object", "two_object",   "counting",
                                  "colors",        "position",     "color_attribution"};
    return names[static_cast<int>(c)];
}

enum class Relation : int { left_of = 0, right_of = 1, above = 2, below = 3 };

struct PromptObject {
    std::optional<ObjColor> color;
    ObjShape shape;

    bool matches(const SceneObject& o) const {
        return o.shape == shape && (!color || o.color == *color);
    }
    bool operator==(const PromptObject&) const = default;
};

// Parsed caption constraints; the category selects the predicate.
struct Prompt {
    Category category;
    std::vector<PromptObject> objects;
    int count = 0;                           // counting only
    Relation relation = Relation::left_of;  // position only

    bool operator==(const Prompt&) const = default;
};

// Canonical caption per scene. Count-1 scenes read "one red circle";
// uniform multi-object scenes use counted plurals; mixed pairs use a spatial
// relation; larger mixed scenes list every object in cell order.
inline std::string caption_scene(const SceneDescription& scene) {
    validate_scene(scene);
    const auto& objs = scene.objects;
    std::ostringstream os;
    const bool all_same = std::all_of(objs.begin(), objs.end(), [&](const SceneObject& o) {
        return o.shape == objs[0].shape && o.color == objs[0].color;
    });
    if (objs.size() == 1) {
        os << "one " << color_name(objs[0].color) << " " << shape_name(objs[0].shape);
    } else if (all_same) {
        os << count_word(static_cast<int>(objs.size())) << " " << color_name(objs[0].color) << " "
           << shape_plural(objs[0].shape);
    } else if (objs.size() == 2) {
        const auto &a = objs[0], &b = objs[1];
        if (cell_col(a.cell) != cell_col(b.cell)) {
            const auto& l = cell_col(a.cell) < cell_col(b.cell) ? a : b;
            const auto& r = cell_col(a.cell) < cell_col(b.cell) ? b : a;
            os << "a " << color_name(l.color) << " " << shape_name(l.shape) << " left of a "
               << color_name(r.color) << " " << shape_name(r.shape);
        } else {
            const auto& t = cell_row(a.cell) < cell_row(b.cell) ? a : b;
            const auto& u = cell_row(a.cell) < cell_row(b.cell) ? b : a;
            os << "a " << color_name(t.color) << " " << shape_name(t.shape) << " above a "
               << color_name(u.color) << " " << shape_name(u.shape);
        }
    } else {
        for (size_t i = 0; i < objs.size(); ++i) {
            if (i > 0) os << " and ";
            os << "a " << color_name(objs[i].color) << " " << shape_name(objs[i].shape);
        }
    }
    return os.str();
}

// Closed vocabulary backing the tokenizer.
inline const std::vector<std::string>& grammar_words() {
    static const std::vector<std::string> words = {
        "a",      "and",  "one",   "two",    "three",  "four",      "left",
        "right",  "above", "below", "of",     "red",    "green",     "blue",
        "yellow", "circle", "square", "triangle", "circles", "squares", "triangles"};
    return words;
}

namespace detail {

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

inline std::optional<ObjColor> color_from_word(const std::string& w) {
    for (int c = 0; c < kColorCount; ++c)
        if (w == color_name(static_cast<ObjColor>(c))) return static_cast<ObjColor>(c);
    return std::nullopt;
}

inline std::optional<ObjShape> shape_from_word(const std::string& w, bool* plural = nullptr) {
    for (int s = 0; s < kShapeCount; ++s) {
        if (w == shape_name(static_cast<ObjShape>(s))) {
            if (plural) *plural = false;
            return static_cast<ObjShape>(s);
        }
        if (w == shape_plural(static_cast<ObjShape>(s))) {
            if (plural) *plural = true;
            return static_cast<ObjShape>(s);
        }
    }
    return std::nullopt;
}

inline std::optional<int> count_from_word(const std::string& w) {
    for (int n = 1; n <= 4; ++n)
        if (w == count_word(n)) return n;
    return std::nullopt;
}

// Parses "[color] shape" starting at position i; advances i.
inline PromptObject parse_object(const std::vector<std::string>& w, size_t& i, bool* plural,
                                 const std::string& caption) {
    if (i >= w.size()) throw ParseError("caption ended early: " + caption);
    PromptObject obj{};
    if (auto c = color_from_word(w[i])) {
        obj.color = c;
        ++i;
    }
    if (i >= w.size()) throw ParseError("expected a shape word: " + caption);
    auto s = shape_from_word(w[i], plural);
    if (!s) throw ParseError("expected a shape word, got '" + w[i] + "'");
    obj.shape = *s;
    ++i;
    return obj;
}

}  // namespace detail

// Inverse of the caption templates; also accepts the color-free prompt forms
// used by the evaluation harness ("a circle and a square", "two triangles").
inline Prompt parse_caption(const std::string& caption) {
    const auto w = detail::split_words(caption);
    if (w.empty()) throw ParseError("empty caption");
    Prompt p{};
    size_t i = 0;
    if (auto n = detail::count_from_word(w[0])) {
        i = 1;
        bool plural = false;
        auto obj = detail::parse_object(w, i, &plural, caption);
        if (i != w.size()) throw ParseError("trailing words in counted caption: " + caption);
        if (*n == 1) {
            if (plural) throw ParseError("'one' with plural shape: " + caption);
            p.category = Category::single_object;
            p.objects = {obj};
        } else {
            if (!plural) throw ParseError("count word needs a plural shape: " + caption);
            p.category = Category::counting;
            p.count = *n;
            p.objects = {obj};
        }
        return p;
    }
    if (w[0] != "a") throw ParseError("caption must start with a count word or 'a': " + caption);
    i = 1;
    bool plural = false;
    auto first = detail::parse_object(w, i, &plural, caption);
    if (plural) throw ParseError("article with plural shape: " + caption);
    if (i == w.size()) {
        // "a [color] shape"
        p.category = first.color ? Category::colors : Category::single_object;
        p.objects = {first};
        return p;
    }
    if (w[i] == "and") {
        p.objects = {first};
        while (i < w.size() && w[i] == "and") {
            ++i;
            if (i >= w.size() || w[i] != "a") throw ParseError("expected 'a' after 'and'");
            ++i;
            p.objects.push_back(detail::parse_object(w, i, &plural, caption));
            if (plural) throw ParseError("article with plural shape: " + caption);
        }
        if (i != w.size()) throw ParseError("trailing words in list caption: " + caption);
        const bool any_color = std::any_of(p.objects.begin(), p.objects.end(),
                                           [](const PromptObject& o) { return o.color.has_value(); });
        p.category = any_color ? Category::color_attribution : Category::two_object;
        return p;
    }
    // relation form
    Relation rel;
    if (w[i] == "left" || w[i] == "right") {
        rel = w[i] == "left" ? Relation::left_of : Relation::right_of;
        ++i;
        if (i >= w.size() || w[i] != "of") throw ParseError("expected 'of' after left/right");
        ++i;
    } else if (w[i] == "above" || w[i] == "below") {
        rel = w[i] == "above" ? Relation::above : Relation::below;
        ++i;
    } else {
        throw ParseError("unexpected word '" + w[i] + "' in caption: " + caption);
    }
    if (i >= w.size() || w[i] != "a") throw ParseError("expected 'a' after relation word");
    ++i;
    auto second = detail::parse_object(w, i, &plural, caption);
    if (plural) throw ParseError("article with plural shape: " + caption);
    if (i != w.size()) throw ParseError("trailing words in relation caption: " + caption);
    p.category = Category::position;
    p.relation = rel;
    p.objects = {first, second};
    return p;
}

namespace detail {

// Distinct-object matching: every prompt object must be satisfied by a
// different scene object.
inline bool match_all_distinct(const std::vector<PromptObject>& want,
                               const std::vector<SceneObject>& have, size_t wi,
                               std::vector<bool>& used) {
    if (wi == want.size()) return true;
    for (size_t j = 0; j < have.size(); ++j) {
        if (used[j] || !want[wi].matches(have[j])) continue;
        used[j] = true;
        if (match_all_distinct(want, have, wi + 1, used)) return true;
        used[j] = false;
    }
    return false;
}

}  // namespace detail

// Category-specific predicate over a detected or ground-truth object list.
inline bool prompt_satisfied(const Prompt& p, const std::vector<SceneObject>& objects) {
    switch (p.category) {
        case Category::single_object: {
            return std::any_of(objects.begin(), objects.end(),
                               [&](const SceneObject& o) { return p.objects[0].matches(o); });
        }
        case Category::two_object:
        case Category::color_attribution: {
            std::vector<bool> used(objects.size(), false);
            return detail::match_all_distinct(p.objects, objects, 0, used);
        }
        case Category::counting: {
            const auto n = std::count_if(objects.begin(), objects.end(),
                                         [&](const SceneObject& o) { return p.objects[0].matches(o); });
            return n == p.count;
        }
        case Category::colors: {
            bool found = false;
            for (const auto& o : objects) {
                if (o.shape != p.objects[0].shape) continue;
                if (!p.objects[0].matches(o)) return false;  // same shape, wrong color
                found = true;
            }
            return found;
        }
        case Category::position: {
            for (size_t a = 0; a < objects.size(); ++a) {
                for (size_t b = 0; b < objects.size(); ++b) {
                    if (a == b) continue;
                    if (!p.objects[0].matches(objects[a]) || !p.objects[1].matches(objects[b]))
                        continue;
                    const int ca = cell_col(objects[a].cell), cb = cell_col(objects[b].cell);
                    const int ra = cell_row(objects[a].cell), rb = cell_row(objects[b].cell);
                    switch (p.relation) {
                        case Relation::left_of:
                            if (ca < cb) return true;
                            break;
                        case Relation::right_of:
                            if (ca > cb) return true;
                            break;
                        case Relation::above:
                            if (ra < rb) return true;
                            break;
                        case Relation::below:
                            if (ra > rb) return true;
                            break;
                    }
                }
            }
            return false;
        }
    }
    return false;
}

// Uniform draw over scenes satisfying a prompt; GenerationError if none do.
inline SceneDescription gen_scene_for_prompt(SeededRng& rng, const Prompt& p) {
    std::vector<SceneDescription> matching;
    enumerate_scenes([&](const SceneDescription& s) {
        if (prompt_satisfied(p, s.objects)) matching.push_back(s);
    });
    if (matching.empty()) throw GenerationError("no scene satisfies the prompt");
    return matching[rng.below(matching.size())];
}

// ---------------------------------------------------------------------------
// manifest records, filtering, edit-chain statistics
// ---------------------------------------------------------------------------

struct ManifestRecord {
    std::string id;
    int width = 0;
    int height = 0;
    double watermark_score = 0.0;
    double clip_score = 0.0;
    std::string caption;
    std::optional<std::string> edit_chain_id;
    std::optional<int> edit_step;
};

inline ManifestRecord parse_manifest_record(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad json: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("manifest record must be a json object");
    ManifestRecord r;
    try {
        r.id = j.at("id").get<std::string>();
        r.width = j.at("width").get<int>();
        r.height = j.at("height").get<int>();
        r.watermark_score = j.at("watermark_score").get<double>();
        r.clip_score = j.at("clip_score").get<double>();
        r.caption = j.at("caption").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("missing or mistyped field: ") + e.what());
    }
    if (r.width < 1 || r.height < 1) throw ParseError("record " + r.id + ": non-positive extent");
    if (j.contains("edit_chain_id")) r.edit_chain_id = j.at("edit_chain_id").get<std::string>();
    if (j.contains("edit_step")) {
        r.edit_step = j.at("edit_step").get<int>();
        if (*r.edit_step < 1) throw ParseError("record " + r.id + ": edit_step must be positive");
    }
    return r;
}

inline std::string manifest_record_to_json(const ManifestRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["width"] = r.width;
    j["height"] = r.height;
    j["watermark_score"] = r.watermark_score;
    j["clip_score"] = r.clip_score;
    j["caption"] = r.caption;
    if (r.edit_chain_id) j["edit_chain_id"] = *r.edit_chain_id;
    if (r.edit_step) j["edit_step"] = *r.edit_step;
    return j.dump();
}

struct FilterThresholds {
    double max_aspect = 2.5;
    double max_watermark = 0.5;
    double min_clip = 0.45;
};

struct RejectedRecord {
    ManifestRecord record;
    std::vector<std::string> reasons;
};

struct FilterResult {
    std::vector<ManifestRecord> kept;
    std::vector<RejectedRecord> rejected;
};

inline std::vector<std::string> filter_violations(const ManifestRecord& r,
                                                  const FilterThresholds& t) {
    std::vector<std::string> reasons;
    const double aspect =
        std::max(static_cast<double>(r.width) / r.height, static_cast<double>(r.height) / r.width);
    std::ostringstream os;
    if (aspect > t.max_aspect) {
        os.str("");
        os << "aspect " << aspect << " > " << t.max_aspect;
        reasons.push_back(os.str());
    }
    if (r.watermark_score > t.max_watermark) {
        os.str("");
        os << "watermark " << r.watermark_score << " > " << t.max_watermark;
        reasons.push_back(os.str());
    }
    if (r.clip_score < t.min_clip) {
        os.str("");
        os << "clip " << r.clip_score << " < " << t.min_clip;
        reasons.push_back(os.str());
    }
    return reasons;
}

// Inclusive thresholds: kept iff aspect <= max_aspect, watermark <= max
// and clip >= min. Input order is preserved in both outputs.
inline FilterResult filter_manifest(const std::vector<ManifestRecord>& records,
                                    const FilterThresholds& t = {}) {
    FilterResult out;
    for (const auto& r : records) {
        auto reasons = filter_violations(r, t);
        if (reasons.empty())
            out.kept.push_back(r);
        else
            out.rejected.push_back({r, std::move(reasons)});
    }
    return out;
}

struct FilterStreamStats {
    size_t total = 0;
    size_t kept = 0;
    size_t rejected = 0;
    size_t parse_errors = 0;
};

// Line-oriented filter: kept lines pass through byte-identical, rejections
// and per-record parse errors go to the diagnostic stream. Never aborts.
inline FilterStreamStats filter_manifest_stream(std::istream& in, std::ostream& kept_out,
                                                std::ostream& diag_out,
                                                const FilterThresholds& t = {}) {
    FilterStreamStats stats;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ++stats.total;
        ManifestRecord r;
        try {
            r = parse_manifest_record(line);
        } catch (const ParseError& e) {
            ++stats.parse_errors;
            diag_out << "line " << lineno << ": parse error: " << e.what() << "\n";
            continue;
        }
        auto reasons = filter_violations(r, t);
        if (reasons.empty()) {
            ++stats.kept;
            kept_out << line << "\n";
        } else {
            ++stats.rejected;
            diag_out << r.id << ": rejected:";
            for (const auto& reason : reasons) diag_out << " [" << reason << "]";
            diag_out << "\n";
        }
    }
    return stats;
}

struct EditChainHistogram {
    int64_t two = 0;
    int64_t three = 0;
    int64_t four = 0;
    int64_t five_plus = 0;

    bool operator==(const EditChainHistogram&) const = default;
};

// Groups records by chain id and buckets chains by length. Records without
// a chain id are ignored; single-step chains are excluded.
inline EditChainHistogram edit_chain_stats(const std::vector<ManifestRecord>& records) {
    std::map<std::string, std::vector<int>> chains;
    for (const auto& r : records) {
        if (!r.edit_chain_id) continue;
        if (!r.edit_step)
            throw IntegrityError("chain " + *r.edit_chain_id + ": record without edit_step");
        chains[*r.edit_chain_id].push_back(*r.edit_step);
    }
    EditChainHistogram h;
    for (auto& [id, steps] : chains) {
        std::sort(steps.begin(), steps.end());
        for (size_t i = 0; i < steps.size(); ++i) {
            if (steps[i] != static_cast<int>(i) + 1)
                throw IntegrityError("chain " + id + ": steps not consecutive from 1");
        }
        const size_t len = steps.size();
        if (len < 2) continue;
        if (len == 2)
            ++h.two;
        else if (len == 3)
            ++h.three;
        else if (len == 4)
            ++h.four;
        else
            ++h.five_plus;
    }
    return h;
}

}  // namespace msq
