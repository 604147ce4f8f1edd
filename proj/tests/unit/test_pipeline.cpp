// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include "hbgl/pipeline.hpp"

using namespace hbgl;

TEST_CASE("tiny experiment is deterministic and self-consistent") {
    const auto cfg = preset("tiny");
    ExperimentOptions opts;
    opts.check_invariants = true;
    const auto a = run_experiment(cfg, opts);
    const auto b = run_experiment(cfg, opts);
    CHECK(a.manifest == b.manifest);
    CHECK(a.local_test.to_json(prepare_data(cfg.data).hierarchy) == b.local_test.to_json(prepare_data(cfg.data).hierarchy));
    REQUIRE(a.flat_test.has_value());
    REQUIRE(a.random_init_test.has_value());
    CHECK(a.manifest["config"] == to_json(cfg));
    CHECK(a.manifest.contains("version"));

    for (auto it = a.invariants.begin(); it != a.invariants.end(); ++it) {
        if (!it.value().is_object()) continue;
        CHECK_MESSAGE(it.value()["pass"].get<bool>(), it.key());
    }
    for (const char* key : {"frozen_encoder", "schedule", "weight_tying", "no_leakage", "cache_agreement"})
        CHECK_MESSAGE(a.invariants.contains(key), key);
}

TEST_CASE("schedule check") {
    GlobalTrainConfig g;
    g.steps = 3;
    g.mask_ratio_start = 0.0;
    g.mask_ratio_max = 0.3;
    GlobalTrainReport r;
    r.increment = 0.1;
    r.ratios = {0.0, 0.1, 0.2};
    CHECK(schedule_is_arithmetic(r, g));
    r.ratios[2] = 0.25;
    CHECK_FALSE(schedule_is_arithmetic(r, g));
    r.ratios = {0.0, 0.1};
    CHECK_FALSE(schedule_is_arithmetic(r, g));
}

TEST_CASE("prepared data binds labels and vocabulary") {
    const auto d = prepare_data(preset("tiny").data);
    CHECK(d.hierarchy.size() == 9);
    CHECK(d.train.size() == 84);
    for (std::size_t i = 0; i < d.hierarchy.size(); ++i)
        for (const auto& w : split_words(d.hierarchy.name(static_cast<LabelId>(i)))) CHECK(d.vocab.find(w).has_value());
    CHECK(gold_of(d.test).size() == d.test.size());
}
