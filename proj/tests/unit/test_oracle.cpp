// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include "hbgl/global_embed.hpp"
#include "support.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

TEST_CASE("finite differences of a quadratic") {
    const auto g = oracle::fd_gradient([](const std::vector<double>& x) { return x[0] * x[0]; }, {1.5}, 1e-4);
    // Central differences are exact for quadratics up to rounding.
    CHECK(g[0] == doctest::Approx(3.0).epsilon(1e-8));
}

TEST_CASE("edge mask of the 3-chain matches the library") {
    const auto h = hbgl::LabelHierarchy::build({"a", "b", "c"}, {{}, {0}, {1}});
    const auto expect = oracle::BoolMat{{true, true, false}, {true, true, true}, {false, true, true}};
    CHECK(oracle::mask_from_edges(3, testing::edges_of(h)) == expect);
    CHECK(testing::to_bool(hbgl::global_attention_mask(h)) == expect);
}

TEST_CASE("bilinear expansion is exact for integer inputs") {
    const oracle::Mat wq{{1, 2}, {0, -1}}, wk{{3, 0}, {1, 1}};
    const std::vector<double> a1{1, 0}, b1{0, 2}, a2{-1, 1}, b2{2, 2};
    std::vector<double> u1{1, 2}, u2{1, 3};
    CHECK(oracle::split_label_logit_sum(a1, b1, a2, b2, wq, wk) == oracle::raw_logit(u2, u1, wq, wk));
}

TEST_CASE("oracles refuse oversized instances") {
    CHECK_THROWS_AS(oracle::mask_from_edges(51, {}), oracle::SizeCapError);
    CHECK_THROWS_AS(oracle::packed_mask(40, 5), oracle::SizeCapError);
    CHECK_NOTHROW(oracle::packed_mask(36, 5));
}

TEST_CASE("loop BCE closed forms") {
    CHECK(oracle::loop_bce({{0.5}}, {{1.0}}) == doctest::Approx(std::log(2.0)));
    CHECK(oracle::loop_bce({{1.0, 0.0}}, {{1.0, 0.0}}) == doctest::Approx(2 * 1.1920929e-7).epsilon(1e-3));
}

TEST_CASE("production code never includes the oracle") {
    namespace fs = std::filesystem;
    const std::regex include_oracle(R"(#\s*include\s*[<"][^>"]*oracle)");
    std::vector<std::string> offenders;
    for (const char* dir : {"src", "include", "tools", "python"}) {
        const fs::path root = fs::path(HBGL_SOURCE_DIR) / dir;
        if (!fs::exists(root)) continue;
        for (const auto& entry : fs::recursive_directory_iterator(root)) {
            if (!entry.is_regular_file()) continue;
            std::ifstream in(entry.path());
            std::stringstream ss;
            ss << in.rdbuf();
            const std::string text = ss.str();
            if (std::regex_search(text, include_oracle) || text.find("oracle::") != std::string::npos)
                offenders.push_back(entry.path().string());
        }
    }
    CHECK_MESSAGE(offenders.empty(), "oracle referenced from: " << (offenders.empty() ? "" : offenders.front()));
}
