// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include "hbgl/errors.hpp"
#include "hbgl/hierarchy.hpp"
#include "support.hpp"

#include <algorithm>
#include <sstream>

using namespace hbgl;

namespace {

const char* kWorldTravel = R"({"labels": [
  {"name": "World", "parents": []},
  {"name": "Travel", "parents": []},
  {"name": "Europe", "parents": ["World"]},
  {"name": "France", "parents": ["Travel"]}
]})";

LabelHierarchy sport() {
    return LabelHierarchy::build({"Sport", "Baseball", "Football"}, {{}, {0}, {0}});
}

}  // namespace

TEST_CASE("levels follow the longest path from a root") {
    const auto h = load_taxonomy(kWorldTravel);
    CHECK(h.size() == 4);
    CHECK(h.max_level() == 2);
    CHECK(h.level(h.id_of("World")) == 1);
    CHECK(h.level(h.id_of("Travel")) == 1);
    CHECK(h.level(h.id_of("Europe")) == 2);
    CHECK(h.level(h.id_of("France")) == 2);
}

TEST_CASE("multi-parent label sits below its deepest parent") {
    const auto h = LabelHierarchy::build({"a", "b", "c", "d"}, {{}, {0}, {1}, {0, 2}});
    CHECK(h.level(3) == 4);
    CHECK(h.max_level() == 4);
}

TEST_CASE("ids follow file order, not topological order") {
    const auto h = load_taxonomy(R"({"labels": [{"name": "child", "parents": ["root"]},
                                                {"name": "root", "parents": []}]})");
    CHECK(h.id_of("child") == 0);
    CHECK(h.level(0) == 2);
    CHECK(h.level(1) == 1);
}

TEST_CASE("invalid taxonomies are rejected") {
    SUBCASE("empty") {
        try {
            load_taxonomy(R"({"labels": []})");
            FAIL("expected an error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()) == "empty taxonomy");
        }
    }
    SUBCASE("self loop names the label") {
        try {
            load_taxonomy(R"({"labels": [{"name": "France", "parents": ["France"]}]})");
            FAIL("expected an error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("France") != std::string::npos);
            CHECK(std::string(e.what()).find("cycle") != std::string::npos);
        }
    }
    SUBCASE("longer cycle") {
        CHECK_THROWS_AS(LabelHierarchy::build({"a", "b", "c"}, {{2}, {0}, {1}}), ValidationError);
    }
    SUBCASE("duplicate name") {
        CHECK_THROWS_AS(LabelHierarchy::build({"a", "a"}, {{}, {}}), ValidationError);
    }
    SUBCASE("unknown parent name") {
        CHECK_THROWS_AS(load_taxonomy(R"({"labels": [{"name": "a", "parents": ["zz"]}]})"), ValidationError);
    }
    SUBCASE("malformed JSON carries a byte offset") {
        try {
            load_taxonomy(R"({"labels": [ {"name": "a", )");
            FAIL("expected an error");
        } catch (const ParseError& e) {
            CHECK(e.byte_offset() > 0);
            CHECK(std::string(e.kind()) == "parse_error");
        }
    }
}

TEST_CASE("local hierarchy partitions targets by level") {
    const auto h = load_taxonomy(kWorldTravel);
    const LabelId world = h.id_of("World"), travel = h.id_of("Travel"), europe = h.id_of("Europe"),
                  france = h.id_of("France");
    const LabelSet all{world, travel, europe, france};
    auto lh = local_hierarchy_of(h, all);
    REQUIRE(lh.depth() == 2);
    CHECK(lh.levels[0] == LabelSet{world, travel});
    CHECK(lh.levels[1] == LabelSet{europe, france});

    lh = local_hierarchy_of(h, LabelSet{france});
    CHECK(lh.levels[0].empty());
    CHECK(lh.levels[1] == LabelSet{france});

    lh = local_hierarchy_of(h, LabelSet{});
    CHECK(lh.depth() == 2);
    CHECK(lh.levels[0].empty());
    CHECK(lh.levels[1].empty());

    CHECK_THROWS_AS(local_hierarchy_of(h, LabelSet{7}), IndexError);
}

TEST_CASE("sibling leaves") {
    const auto h = sport();
    CHECK(sibling_leaves(h, 1, 2));
    CHECK(sibling_leaves(h, 2, 1));
    CHECK_FALSE(sibling_leaves(h, 1, 1));
    CHECK_FALSE(sibling_leaves(h, 0, 1));

    const auto chain = LabelHierarchy::build({"a", "b", "c"}, {{}, {0}, {1}});
    CHECK_FALSE(sibling_leaves(chain, 0, 2));
}

TEST_CASE("upward closure") {
    const auto h = load_taxonomy(kWorldTravel);
    CHECK(is_upward_closed(h, LabelSet{h.id_of("World"), h.id_of("Europe")}));
    CHECK_FALSE(is_upward_closed(h, LabelSet{h.id_of("Europe")}));
}

TEST_CASE("random DAG properties") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto h = testing::random_dag(1 + rng() % 40, rng);
        for (std::size_t i = 0; i < h.size(); ++i) {
            const auto v = static_cast<LabelId>(i);
            CHECK(h.level(v) >= 1);
            CHECK(h.level(v) <= h.max_level());
            CHECK((h.level(v) == 1) == h.parents(v).empty());
            int expect = 1;
            for (LabelId p : h.parents(v)) {
                expect = std::max(expect, h.level(p) + 1);
                const auto ch = h.children(p);
                CHECK(std::find(ch.begin(), ch.end(), v) != ch.end());
            }
            CHECK(h.level(v) == expect);
            for (std::size_t j = 0; j < h.size(); ++j) {
                const auto w = static_cast<LabelId>(j);
                CHECK(sibling_leaves(h, v, w) == sibling_leaves(h, w, v));
            }
            CHECK_FALSE(sibling_leaves(h, v, v));
        }

        LabelSet targets;
        for (std::size_t i = 0; i < h.size(); ++i)
            if (rng() % 3 == 0) targets.push_back(static_cast<LabelId>(i));
        const auto lh = local_hierarchy_of(h, targets);
        CHECK(lh.all() == targets);
        std::size_t total = 0;
        for (int lvl = 1; lvl <= static_cast<int>(lh.depth()); ++lvl) {
            total += lh.levels[lvl - 1].size();
            for (LabelId id : lh.levels[lvl - 1]) CHECK(h.level(id) == lvl);
        }
        CHECK(total == targets.size());

        CHECK(load_taxonomy(h.to_json()) == h);
    }
}

TEST_CASE("labels_at_level lists each level in id order") {
    const auto h = load_taxonomy(kWorldTravel);
    CHECK(h.labels_at_level(1) == std::vector<LabelId>{0, 1});
    CHECK(h.labels_at_level(2) == std::vector<LabelId>{2, 3});
    CHECK_THROWS_AS(h.labels_at_level(3), IndexError);
}
