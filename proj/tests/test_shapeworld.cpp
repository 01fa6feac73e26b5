#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <sstream>

#include "msq/shapeworld.hpp"

using namespace msq;

TEST_CASE("gen_scene honors constraints") {
    SeededRng rng(1);
    SECTION("fully pinned single object") {
        for (int i = 0; i < 20; ++i) {
            auto s = gen_scene(rng, {1, ObjColor::red, ObjShape::circle});
            REQUIRE(s.objects.size() == 1);
            REQUIRE(s.objects[0].color == ObjColor::red);
            REQUIRE(s.objects[0].shape == ObjShape::circle);
        }
    }
    SECTION("count 4 fills every cell") {
        auto s = gen_scene(rng, {.count = 4});
        REQUIRE(s.objects.size() == 4);
        for (int i = 0; i < 4; ++i) REQUIRE(s.objects[i].cell == i);
    }
    SECTION("bad count is a generation error") {
        REQUIRE_THROWS_AS(gen_scene(rng, {.count = 5}), GenerationError);
    }
}

TEST_CASE("unconstrained draws have uniform shape marginals") {
    SeededRng rng(77);
    int64_t counts[3] = {0, 0, 0};
    int64_t total = 0;
    for (int i = 0; i < 10000; ++i) {
        auto s = gen_scene(rng);
        for (const auto& o : s.objects) {
            ++counts[static_cast<int>(o.shape)];
            ++total;
        }
    }
    const double p = 1.0 / 3.0;
    const double sigma = std::sqrt(total * p * (1 - p));
    for (int k = 0; k < 3; ++k) REQUIRE(std::abs(counts[k] - total * p) < 3 * sigma);
}

TEST_CASE("gen_scene is deterministic per seed") {
    SeededRng a(5), b(5);
    for (int i = 0; i < 50; ++i) REQUIRE(gen_scene(a) == gen_scene(b));
}

TEST_CASE("renderer basics") {
    SECTION("empty scene is rejected, single object fills one cell") {
        SceneDescription empty;
        REQUIRE_THROWS_AS(render_scene(empty, 16), GenerationError);
    }
    SECTION("background-only cells stay white") {
        SceneDescription s{{{ObjShape::square, ObjColor::red, 0}}};
        auto img = render_scene(s, 16);
        for (int y = 0; y < 16; ++y)
            for (int x = 8; x < 16; ++x)
                for (int c = 0; c < 3; ++c) REQUIRE(img.at(y, x, c) == 1.0);
    }
    SECTION("every non-white pixel of a red square is exact palette red") {
        SceneDescription s{{{ObjShape::square, ObjColor::red, 0}}};
        auto img = render_scene(s, 16);
        int filled = 0;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                const bool white =
                    img.at(y, x, 0) == 1.0 && img.at(y, x, 1) == 1.0 && img.at(y, x, 2) == 1.0;
                if (white) continue;
                ++filled;
                REQUIRE(img.at(y, x, 0) == 1.0);
                REQUIRE(img.at(y, x, 1) == 0.0);
                REQUIRE(img.at(y, x, 2) == 0.0);
            }
        REQUIRE(filled == 36);  // 6x6 inner box at cell 8, margin 1
    }
    SECTION("rendering is a pure function of scene and size") {
        SeededRng rng(3);
        auto s = gen_scene(rng);
        auto a = render_scene(s, 32);
        auto b = render_scene(s, 32);
        REQUIRE(a.rgb == b.rgb);
    }
    SECTION("odd sizes are rejected") {
        SceneDescription s{{{ObjShape::square, ObjColor::red, 0}}};
        REQUIRE_THROWS_AS(render_scene(s, 15), DimensionError);
    }
    SECTION("every rendered pixel is background or exact palette") {
        SeededRng rng(4);
        for (int i = 0; i < 30; ++i) {
            auto img = render_scene(gen_scene(rng), 16);
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x) {
                    bool ok = img.at(y, x, 0) == 1.0 && img.at(y, x, 1) == 1.0 &&
                              img.at(y, x, 2) == 1.0;
                    for (const auto& p : kPalette)
                        ok = ok || (img.at(y, x, 0) == p[0] && img.at(y, x, 1) == p[1] &&
                                    img.at(y, x, 2) == p[2]);
                    REQUIRE(ok);
                }
        }
    }
}

TEST_CASE("caption templates") {
    REQUIRE(caption_scene({{{ObjShape::circle, ObjColor::red, 2}}}) == "one red circle");
    REQUIRE(caption_scene({{{ObjShape::triangle, ObjColor::yellow, 0},
                            {ObjShape::triangle, ObjColor::yellow, 3}}}) == "two yellow triangles");
    REQUIRE(caption_scene({{{ObjShape::square, ObjColor::blue, 0},
                            {ObjShape::triangle, ObjColor::green, 1}}}) ==
            "a blue square left of a green triangle");
    REQUIRE(caption_scene({{{ObjShape::square, ObjColor::blue, 0},
                            {ObjShape::circle, ObjColor::red, 2}}}) ==
            "a blue square above a red circle");
}

TEST_CASE("caption round trip over the whole grammar") {
    int checked = 0;
    enumerate_scenes([&](const SceneDescription& s) {
        const auto caption = caption_scene(s);
        const auto prompt = parse_caption(caption);
        REQUIRE(prompt_satisfied(prompt, s.objects));
        // category must match the template family
        const bool all_same =
            std::all_of(s.objects.begin(), s.objects.end(), [&](const SceneObject& o) {
                return o.shape == s.objects[0].shape && o.color == s.objects[0].color;
            });
        if (s.objects.size() == 1) {
            REQUIRE(prompt.category == Category::single_object);
            REQUIRE(prompt.objects[0].color == s.objects[0].color);
            REQUIRE(prompt.objects[0].shape == s.objects[0].shape);
        } else if (all_same) {
            REQUIRE(prompt.category == Category::counting);
            REQUIRE(prompt.count == static_cast<int>(s.objects.size()));
        } else if (s.objects.size() == 2) {
            REQUIRE(prompt.category == Category::position);
        } else {
            REQUIRE(prompt.category == Category::color_attribution);
            REQUIRE(prompt.objects.size() == s.objects.size());
        }
        ++checked;
    });
    REQUIRE(checked == 28560);
}

TEST_CASE("parse_caption accepts evaluation prompt forms") {
    auto p = parse_caption("a circle and a square");
    REQUIRE(p.category == Category::two_object);
    REQUIRE_FALSE(p.objects[0].color.has_value());

    p = parse_caption("two triangles");
    REQUIRE(p.category == Category::counting);
    REQUIRE(p.count == 2);

    p = parse_caption("a red circle");
    REQUIRE(p.category == Category::colors);

    p = parse_caption("a red square right of a blue circle");
    REQUIRE(p.category == Category::position);
    REQUIRE(p.relation == Relation::right_of);

    REQUIRE_THROWS_AS(parse_caption("one purple circle"), ParseError);
    REQUIRE_THROWS_AS(parse_caption(""), ParseError);
}

TEST_CASE("prompt predicates") {
    std::vector<SceneObject> objs{{ObjShape::circle, ObjColor::red, 1}};
    REQUIRE(prompt_satisfied(parse_caption("one red circle"), objs));
    REQUIRE_FALSE(prompt_satisfied(parse_caption("one blue circle"), objs));
    REQUIRE_FALSE(prompt_satisfied(parse_caption("two red circles"), objs));

    std::vector<SceneObject> pair{{ObjShape::square, ObjColor::red, 0},
                                  {ObjShape::circle, ObjColor::blue, 1}};
    REQUIRE(prompt_satisfied(parse_caption("a red square left of a blue circle"), pair));
    std::vector<SceneObject> mirrored{{ObjShape::circle, ObjColor::blue, 0},
                                      {ObjShape::square, ObjColor::red, 1}};
    REQUIRE_FALSE(prompt_satisfied(parse_caption("a red square left of a blue circle"), mirrored));

    // colors requires every instance of the shape to match
    std::vector<SceneObject> mixed{{ObjShape::circle, ObjColor::red, 0},
                                   {ObjShape::circle, ObjColor::blue, 1}};
    REQUIRE_FALSE(prompt_satisfied(parse_caption("a red circle"), mixed));

    // color attribution needs two distinct objects
    std::vector<SceneObject> one{{ObjShape::circle, ObjColor::red, 0}};
    REQUIRE_FALSE(prompt_satisfied(parse_caption("a red circle and a red circle"), one));
}

TEST_CASE("gen_scene_for_prompt produces satisfying scenes") {
    SeededRng rng(8);
    auto p = parse_caption("a green triangle right of a yellow square");
    for (int i = 0; i < 5; ++i) {
        auto s = gen_scene_for_prompt(rng, p);
        REQUIRE(prompt_satisfied(p, s.objects));
    }
}

TEST_CASE("manifest record parsing") {
    auto r = parse_manifest_record(
        R"({"id":"x1","width":100,"height":50,"watermark_score":0.2,"clip_score":0.7,)"
        R"("caption":"one red circle","extra_field":42})");
    REQUIRE(r.id == "x1");
    REQUIRE(r.width == 100);
    REQUIRE_FALSE(r.edit_chain_id.has_value());

    REQUIRE_THROWS_AS(parse_manifest_record("not json"), ParseError);
    REQUIRE_THROWS_AS(parse_manifest_record(R"({"id":"x","width":10,"height":10})"), ParseError);
    REQUIRE_THROWS_AS(
        parse_manifest_record(
            R"({"id":"x","width":0,"height":10,"watermark_score":0,"clip_score":1,"caption":""})"),
        ParseError);

    auto round = parse_manifest_record(manifest_record_to_json(r));
    REQUIRE(round.id == r.id);
    REQUIRE(round.clip_score == r.clip_score);
}

namespace {

ManifestRecord rec(std::string id, int w, int h, double wm, double clip) {
    ManifestRecord r;
    r.id = std::move(id);
    r.width = w;
    r.height = h;
    r.watermark_score = wm;
    r.clip_score = clip;
    r.caption = "c";
    return r;
}

}  // namespace

TEST_CASE("filter thresholds are inclusive") {
    FilterThresholds t;
    SECTION("all three at the boundary is kept") {
        auto res = filter_manifest({rec("b", 1000, 400, 0.5, 0.45)}, t);
        REQUIRE(res.kept.size() == 1);
        REQUIRE(res.rejected.empty());
    }
    SECTION("aspect violation carries the reason") {
        auto res = filter_manifest({rec("a", 1000, 100, 0.0, 0.9)}, t);
        REQUIRE(res.kept.empty());
        REQUIRE(res.rejected.size() == 1);
        REQUIRE(res.rejected[0].reasons.size() == 1);
        REQUIRE(res.rejected[0].reasons[0].find("aspect") != std::string::npos);
    }
    SECTION("two violations give two reasons") {
        auto res = filter_manifest({rec("c", 100, 100, 0.51, 0.44)}, t);
        REQUIRE(res.rejected.size() == 1);
        REQUIRE(res.rejected[0].reasons.size() == 2);
    }
    SECTION("filtering is idempotent and order preserving") {
        std::vector<ManifestRecord> records;
        SeededRng rng(11);
        for (int i = 0; i < 200; ++i)
            records.push_back(rec("r" + std::to_string(i), 100 + static_cast<int>(rng.below(400)),
                                  100, rng.uniform(), rng.uniform()));
        auto once = filter_manifest(records, t);
        auto twice = filter_manifest(once.kept, t);
        REQUIRE(twice.rejected.empty());
        REQUIRE(twice.kept.size() == once.kept.size());
        for (size_t i = 0; i < once.kept.size(); ++i)
            REQUIRE(twice.kept[i].id == once.kept[i].id);
        REQUIRE(once.kept.size() + once.rejected.size() == records.size());
        // order preserved
        size_t ki = 0, ri = 0;
        for (const auto& r : records) {
            if (ki < once.kept.size() && once.kept[ki].id == r.id) {
                ++ki;
            } else {
                REQUIRE(once.rejected[ri].record.id == r.id);
                ++ri;
            }
        }
    }
}

TEST_CASE("streaming filter collects parse errors without aborting") {
    std::istringstream in(
        R"({"id":"ok","width":100,"height":100,"watermark_score":0.1,"clip_score":0.9,"caption":"x"})"
        "\nTHIS IS NOT JSON\n"
        R"({"id":"bad","width":1000,"height":100,"watermark_score":0.1,"clip_score":0.9,"caption":"x"})"
        "\n");
    std::ostringstream kept, diag;
    auto stats = filter_manifest_stream(in, kept, diag);
    REQUIRE(stats.total == 3);
    REQUIRE(stats.kept == 1);
    REQUIRE(stats.rejected == 1);
    REQUIRE(stats.parse_errors == 1);
    REQUIRE(stats.kept + stats.rejected + stats.parse_errors == stats.total);
    REQUIRE(kept.str().find("\"ok\"") != std::string::npos);
    REQUIRE(diag.str().find("parse error") != std::string::npos);
    REQUIRE(diag.str().find("aspect") != std::string::npos);
}

namespace {

std::vector<ManifestRecord> chain_fixture(const std::string& prefix, int chains, int length) {
    std::vector<ManifestRecord> out;
    for (int c = 0; c < chains; ++c) {
        for (int s = 1; s <= length; ++s) {
            auto r = rec(prefix + std::to_string(c) + "_" + std::to_string(s), 64, 64, 0.0, 1.0);
            r.edit_chain_id = prefix + std::to_string(c);
            r.edit_step = s;
            out.push_back(r);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("edit chain stats") {
    SECTION("empty manifest gives an all-zero histogram") {
        REQUIRE(edit_chain_stats({}) == EditChainHistogram{});
    }
    SECTION("chains bucket by length, singles and chainless records ignored") {
        auto records = chain_fixture("a", 3, 2);
        auto more = chain_fixture("b", 2, 5);
        auto single = chain_fixture("s", 4, 1);
        auto longer = chain_fixture("c", 1, 7);
        records.insert(records.end(), more.begin(), more.end());
        records.insert(records.end(), single.begin(), single.end());
        records.insert(records.end(), longer.begin(), longer.end());
        records.push_back(rec("plain", 10, 10, 0, 1));
        auto h = edit_chain_stats(records);
        REQUIRE(h == EditChainHistogram{3, 0, 0, 3});
    }
    SECTION("non-consecutive steps raise an integrity error naming the chain") {
        auto records = chain_fixture("z", 1, 3);
        records[1].edit_step = 5;
        try {
            edit_chain_stats(records);
            FAIL("expected IntegrityError");
        } catch (const IntegrityError& e) {
            REQUIRE(std::string(e.what()).find("z0") != std::string::npos);
        }
    }
}

TEST_CASE("ppm round trip is bit exact") {
    SeededRng rng(13);
    for (int i = 0; i < 5; ++i) {
        auto img = render_scene(gen_scene(rng), 16);
        std::ostringstream os(std::ios::binary);
        write_ppm(os, img);
        const std::string bytes = os.str();
        std::istringstream is(bytes, std::ios::binary);
        auto back = read_ppm(is);
        REQUIRE(back.h == img.h);
        REQUIRE(back.w == img.w);
        REQUIRE(back.rgb == img.rgb);  // palette values quantize exactly
        std::ostringstream os2(std::ios::binary);
        write_ppm(os2, back);
        REQUIRE(os2.str() == bytes);
    }
}
