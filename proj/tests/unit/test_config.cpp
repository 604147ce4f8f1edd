// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include "hbgl/config.hpp"
#include "hbgl/errors.hpp"

#include <cstdlib>

using namespace hbgl;

TEST_CASE("round trip through JSON") {
    for (const char* name : {"default", "desk", "tiny"}) {
        const auto cfg = preset(name);
        const auto back = run_config_from_json(to_json(cfg));
        CHECK(to_json(back) == to_json(cfg));
        CHECK(back.encoder == cfg.encoder);
    }
    CHECK_THROWS_AS(preset("huge"), ConfigError);
}

TEST_CASE("default hyperparameters") {
    const auto c = preset("default");
    CHECK(c.global.mask_ratio_start == 0.15);
    CHECK(c.global.mask_ratio_max == 0.45);
    CHECK(c.global.steps == 300);
    CHECK(c.global.learning_rate == 1e-3);
    CHECK(c.local.batch_size == 12);
    CHECK(c.local.learning_rate == 3e-5);
    CHECK(c.threshold == 0.5);
    const auto j = to_json(c);
    CHECK(j["local"]["learning_rate"].get<double>() == 3e-5);
    CHECK(j["local"]["batch_size"].get<int>() == 12);
}

TEST_CASE("strict parsing") {
    Json j = to_json(preset("tiny"));
    j["global"]["stepz"] = 3;
    try {
        run_config_from_json(j);
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("global.stepz") != std::string::npos);
    }
    j = to_json(preset("tiny"));
    j["global"]["steps"] = "many";
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    j = to_json(preset("tiny"));
    j["seed"] = -1;
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    j = to_json(preset("tiny"));
    j["global"]["mask_ratio_max"] = 1.5;
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(Json::array()), ConfigError);
    // Sections may be partial.
    CHECK(run_config_from_json(Json::parse(R"({"global": {"steps": 500}})")).global.steps == 500);
}

TEST_CASE("dotted overrides") {
    Json j = to_json(preset("tiny"));
    apply_override(j, "global.learning_rate=1e-4");
    apply_override(j, "local.empty_level=zero");
    apply_override(j, "seed=42");
    const auto c = run_config_from_json(j);
    CHECK(c.global.learning_rate == 1e-4);
    CHECK(c.empty_level == EmptyLevel::kZero);
    CHECK(c.seed == 42);
    CHECK_THROWS_AS(apply_override(j, "noequals"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "a..b=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "seed.x=1"), ConfigError);
}

TEST_CASE("module seeds derive from the run seed") {
    auto a = preset("tiny");
    auto b = preset("tiny");
    b.seed = 1;
    b.resolve_seeds();
    CHECK(a.mlm.seed != b.mlm.seed);
    CHECK(a.global.seed != b.global.seed);
    CHECK(a.local.seed != b.local.seed);
    CHECK(a.mlm.seed != a.global.seed);
    CHECK(a.data.seed == b.data.seed);
    auto c = preset("tiny");
    c.resolve_seeds();
    CHECK(c.local.seed == a.local.seed);
}

TEST_CASE("seed from the environment") {
    ::unsetenv("HBGL_SEED");
    CHECK_FALSE(seed_from_env().has_value());
    ::setenv("HBGL_SEED", "17", 1);
    CHECK(seed_from_env() == 17u);
    ::setenv("HBGL_SEED", "-3", 1);
    CHECK_THROWS_AS(seed_from_env(), ConfigError);
    ::setenv("HBGL_SEED", "12x", 1);
    CHECK_THROWS_AS(seed_from_env(), ConfigError);
    ::unsetenv("HBGL_SEED");
}

TEST_CASE("missing config file") {
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
    CHECK_FALSE(version_string().empty());
}
