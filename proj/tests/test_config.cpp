#include <doctest.h>

#include <stdexcept>

#include "fbsde/config.hpp"

using namespace fbsde;

TEST_CASE("config round-trips through JSON unchanged") {
    ExperimentConfig c;
    c.benchmark = "quadratic";
    c.N = 12345;
    c.M = 256;
    c.seed = 99;
    c.eps_ladder = {0.25, 0.125, 0.0625};
    c.spike_u = {1.0};
    c.degree = 4;
    c.output_dir = "out";
    auto text = c.to_json();
    auto back = ExperimentConfig::from_json_text(text);
    CHECK(back.to_json() == text);
}

TEST_CASE("defaults survive a partial JSON document") {
    auto c = ExperimentConfig::from_json_text(R"({"benchmark": "linear", "N": 42})");
    CHECK(c.benchmark == "linear");
    CHECK(c.N == 42);
    CHECK(c.M == 512);
    CHECK(c.degree == 3);
}

TEST_CASE("malformed JSON is rejected with a diagnostic") {
    CHECK_THROWS_AS(ExperimentConfig::from_json_text("{nope"), std::invalid_argument);
}

TEST_CASE("validation rejects bad fields") {
    ExperimentConfig c;
    c.benchmark = "no-such-benchmark";
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = ExperimentConfig{};
    c.N = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = ExperimentConfig{};
    c.M = 512;
    c.eps_ladder = {0.013};  // not a multiple of dt
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = ExperimentConfig{};
    c.eps_ladder = {0.0625, 0.125};  // increasing
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = ExperimentConfig{};
    c.spike_s = 0.921875;  // aligned, but s + eps leaves [0, T]
    c.eps_ladder = {0.125};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    c = ExperimentConfig{};
    c.eps_ladder = {0.125, 0.0625};
    CHECK_NOTHROW(c.validate());
}
