#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "msq/checkpoint.hpp"
#include "msq/optim.hpp"

using namespace msq;

TEST_CASE("adam first step has the closed form") {
    auto p = Tensor::from_data({1}, {0.0}, true);
    Adam opt({p}, {0.1, 0.9, 0.999, 1e-8});
    p->ensure_grad();
    p->grad[0] = 1.0;
    opt.step();
    // bias-corrected first step moves by lr/(1+eps)
    REQUIRE(p->data[0] == Catch::Approx(-0.1).margin(1e-8));
    REQUIRE(opt.step_count() == 1);
}

TEST_CASE("adam with zero gradient leaves fresh parameters unchanged") {
    SeededRng rng(1);
    auto p = Tensor::randn({3, 3}, rng, 1.0, true);
    const auto before = p->data;
    Adam opt({p});
    for (int i = 0; i < 5; ++i) opt.step();  // grads never touched
    REQUIRE(p->data == before);
}

TEST_CASE("adam refuses frozen parameters") {
    auto frozen = Tensor::full({2}, 1.0, false);
    REQUIRE_THROWS_AS(Adam({frozen}), ConfigError);
    REQUIRE_THROWS_AS(Sgd({frozen}, 0.1), ConfigError);
}

TEST_CASE("adam state round trips through the blob") {
    SeededRng rng(2);
    auto p = Tensor::randn({4}, rng, 1.0, true);
    Adam a({p}, {0.01, 0.9, 0.999, 1e-8});
    for (int i = 0; i < 3; ++i) {
        p->ensure_grad();
        for (auto& g : p->grad) g = rng.normal();
        a.step();
    }
    auto blob = a.state_blob();
    auto q = Tensor::from_data({4}, p->data, true);
    Adam b({q}, {0.01, 0.9, 0.999, 1e-8});
    b.restore_state(blob);
    REQUIRE(b.step_count() == 3);
    REQUIRE(b.state_blob() == blob);
    REQUIRE_THROWS_AS(b.restore_state(std::vector<double>{1.0}), SchemaError);
}

TEST_CASE("sgd step") {
    auto p = Tensor::from_data({2}, {1.0, 2.0}, true);
    Sgd opt({p}, 0.5);
    p->ensure_grad();
    p->grad[0] = 1.0;
    p->grad[1] = -2.0;
    opt.step();
    REQUIRE(p->data[0] == 0.5);
    REQUIRE(p->data[1] == 3.0);
}

TEST_CASE("f64 codec is bit exact") {
    SeededRng rng(3);
    std::vector<double> values;
    for (int i = 0; i < 100; ++i) values.push_back(rng.normal(0, 1e6));
    values.push_back(0.0);
    values.push_back(-0.0);
    values.push_back(1e-300);
    REQUIRE(decode_f64(encode_f64(values)) == values);
    REQUIRE_THROWS_AS(decode_f64(std::vector<uint8_t>(7, 0)), LoadError);
}

TEST_CASE("checkpoint file round trip is byte identical") {
    SeededRng rng(4);
    CheckpointFile ck;
    ck.sections.push_back({"meta/config", {1, 2, 3, 4}});
    ck.sections.push_back({"empty", {}});
    ck.sections.push_back({"params/tiny", encode_f64({rng.normal(), rng.normal()})});

    auto bytes = ck.serialize();
    auto back = CheckpointFile::deserialize(bytes);
    REQUIRE(back.sections.size() == 3);
    REQUIRE(back.serialize() == bytes);

    SECTION("file io") {
        const std::string path = "ckpt_test_roundtrip.bin";
        ck.save(path);
        auto loaded = CheckpointFile::load(path);
        REQUIRE(loaded.serialize() == bytes);
        std::remove(path.c_str());
    }
    SECTION("single corrupt payload byte names the section") {
        auto corrupt = bytes;
        corrupt.back() ^= 0x40;  // last byte of the params/tiny payload
        try {
            CheckpointFile::deserialize(corrupt);
            FAIL("expected LoadError");
        } catch (const LoadError& e) {
            const std::string msg = e.what();
            REQUIRE(msg.find("checksum") != std::string::npos);
            REQUIRE(msg.find("params/tiny") != std::string::npos);
        }
    }
    SECTION("truncation is detected") {
        auto truncated = bytes;
        truncated.resize(truncated.size() - 3);
        REQUIRE_THROWS_AS(CheckpointFile::deserialize(truncated), LoadError);
    }
    SECTION("unknown version is rejected") {
        auto versioned = bytes;
        versioned[8] = 99;  // version field follows the 8-byte magic
        REQUIRE_THROWS_AS(CheckpointFile::deserialize(versioned), LoadError);
    }
    SECTION("bad magic is rejected") {
        auto bad = bytes;
        bad[0] = 'X';
        REQUIRE_THROWS_AS(CheckpointFile::deserialize(bad), LoadError);
    }
}

TEST_CASE("param groups load only into matching tensors") {
    SeededRng rng(5);
    auto a = Tensor::randn({2, 3}, rng, 1.0, true);
    auto b = Tensor::randn({4}, rng, 1.0, true);
    auto bytes = encode_param_group({{"a", a}, {"b", b}});

    SECTION("round trip restores values") {
        auto a2 = Tensor::create({2, 3}, true);
        auto b2 = Tensor::create({4}, true);
        decode_param_group(bytes, {{"a", a2}, {"b", b2}}, "g");
        REQUIRE(a2->data == a->data);
        REQUIRE(b2->data == b->data);
    }
    SECTION("shape mismatch is a schema error, not silent truncation") {
        auto a2 = Tensor::create({3, 2}, true);
        auto b2 = Tensor::create({4}, true);
        REQUIRE_THROWS_AS(decode_param_group(bytes, {{"a", a2}, {"b", b2}}, "g"), SchemaError);
    }
    SECTION("name mismatch is a schema error") {
        auto a2 = Tensor::create({2, 3}, true);
        auto b2 = Tensor::create({4}, true);
        REQUIRE_THROWS_AS(decode_param_group(bytes, {{"z", a2}, {"b", b2}}, "g"), SchemaError);
    }
    SECTION("count mismatch is a schema error") {
        auto a2 = Tensor::create({2, 3}, true);
        REQUIRE_THROWS_AS(decode_param_group(bytes, {{"a", a2}}, "g"), SchemaError);
    }
}
