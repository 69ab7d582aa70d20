#include "neuroloc/config.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace neuroloc;
using nlohmann::json;

TEST_CASE("toml subset") {
    const auto j = parse_toml(R"(
# comment
name = "demo"   # trailing comment
seeds = [1, 2,
         3]
flag = true
neg = -4
big = 1e3
up = inf
mixed = [[1, 2], ["a"]]
point = { x = 1.5, y = "b" }

[headmodel]
grid_spacing_mm = 5.0

[a.b]
c = 'literal'

[[solvers]]
method = "mne"
lambda_grid = [0.1]

[[solvers]]
method = "sloreta"
lambda_grid = [
  0.1,  # first
  1.0,
]
)");
    CHECK(j["name"] == "demo");
    CHECK(j["seeds"] == json::array({1, 2, 3}));
    CHECK(j["flag"] == true);
    CHECK(j["neg"] == -4);
    CHECK(j["big"].get<double>() == 1000.0);
    CHECK(std::isinf(j["up"].get<double>()));
    CHECK(j["mixed"][1][0] == "a");
    CHECK(j["point"]["x"].get<double>() == 1.5);
    CHECK(j["point"]["y"] == "b");
    CHECK(j["headmodel"]["grid_spacing_mm"].get<double>() == 5.0);
    CHECK(j["a"]["b"]["c"] == "literal");
    REQUIRE(j["solvers"].size() == 2);
    CHECK(j["solvers"][1]["method"] == "sloreta");
    CHECK(j["solvers"][1]["lambda_grid"].size() == 2);
}

TEST_CASE("toml errors carry line numbers") {
    CHECK_THROWS_WITH_AS(parse_toml("a = 1\nb = \n"), doctest::Contains("TOML line 2"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_toml("a = 1\na = 2\n"), doctest::Contains("TOML line 2"), std::invalid_argument);
    CHECK_THROWS_AS(parse_toml("s = \"unterminated\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_toml("[table\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_toml("x = [1, 2\n"), std::invalid_argument);
}

TEST_CASE("example config loads and validates") {
    const auto c = load_config(NEUROLOC_SOURCE_DIR "/configs/quick.toml");
    CHECK(c.name == "quick");
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2});
    REQUIRE(c.solvers.size() == 3);
    CHECK(c.solvers[0].p_grid == std::vector<double>{0.0, 0.5});
    CHECK(c.solvers[1].p_grid == std::vector<double>{0.0});
    CHECK(*c.solvers[2].deep_prior.iterations == 300);
    CHECK(c.source.nearest_to == Vec3(25, 12, 30));
    CHECK_NOTHROW(validate(c));
}

TEST_CASE("json round trip and hash") {
    auto c = builtin_config("deep-analog");
    c.noise.target_psnr_db = std::numeric_limits<double>::infinity();
    c.source.moment_nam = Vec3(1, 2, 3);
    c.solvers[2].deep_prior.iterations = 77;
    const auto j = config_to_json(c);
    CHECK(j["noise"]["target_psnr_db"] == "inf");
    const auto back = config_from_json(json::parse(j.dump()));
    CHECK(config_to_json(back) == j);
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c).size() == 16);

    auto moved = c;
    moved.output_dir = "/elsewhere";
    CHECK(config_hash(moved) == config_hash(c));
    auto changed = c;
    changed.solvers[0].lambda_grid.back() *= 1.0000001;
    CHECK(config_hash(changed) != config_hash(c));

    CHECK_THROWS_WITH_AS(config_from_json(json{{"nmae", "typo"}}), doctest::Contains("nmae"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(json{{"noise", {{"psnr", 3}}}}), std::invalid_argument);
}

TEST_CASE("validation") {
    auto ok = builtin_config("shallow-analog");
    CHECK_NOTHROW(validate(ok));

    auto expect_bad = [&](auto mutate, const char* fragment) {
        auto c = ok;
        mutate(c);
        CHECK_THROWS_WITH_AS(validate(c), doctest::Contains(fragment), std::invalid_argument);
    };
    expect_bad([](ExperimentConfig& c) { c.solvers[0].lambda_grid.clear(); }, "non-empty");
    expect_bad([](ExperimentConfig& c) { c.solvers[0].lambda_grid = {1.0, 0.5}; }, "strictly increasing");
    expect_bad([](ExperimentConfig& c) { c.solvers[0].lambda_grid = {1.0, 1.0}; }, "strictly increasing");
    expect_bad([](ExperimentConfig& c) { c.solvers[0].lambda_grid = {-1.0}; }, ">= 0");
    expect_bad([](ExperimentConfig& c) { c.solvers[0].method = "beamformer"; }, "unknown solver");
    expect_bad([](ExperimentConfig& c) { c.solvers[1].p_grid = {0.5}; }, "sloreta");
    expect_bad([](ExperimentConfig& c) { c.solvers.clear(); }, "solver");
    expect_bad([](ExperimentConfig& c) { c.seeds.clear(); }, "seeds");
    expect_bad([](ExperimentConfig& c) { c.headmodel.region_radius_mm = 95; }, "region_radius");
    expect_bad([](ExperimentConfig& c) { c.noise.shape = "pink"; }, "noise shape");
    expect_bad([](ExperimentConfig& c) { c.solvers[2].deep_prior.iterations = 0; }, "iterations");
    expect_bad([](ExperimentConfig& c) { c.solvers[2].deep_prior.learning_rate = 0.0; }, "learning_rate");
}

TEST_CASE("built-in configs") {
    CHECK(builtin_config_names() == std::vector<std::string>{"shallow-analog", "deep-analog"});
    const auto shallow = builtin_config("shallow-analog");
    const auto deep = builtin_config("deep-analog");
    CHECK(shallow.source.nearest_to.norm() == doctest::Approx(0.75 * 70));
    CHECK(deep.source.nearest_to.norm() == doctest::Approx(0.35 * 70));
    CHECK(shallow.noise.target_psnr_db == 21.6);
    CHECK(shallow.seeds.size() >= 3);
    for (const auto& c : {shallow, deep}) {
        for (const auto& s : c.solvers) {
            const auto grid = log_grid(1e-3, 1e3, 13, s.method == "deep_prior");
            REQUIRE(s.lambda_grid.size() == grid.size());
            for (std::size_t i = 0; i < grid.size(); ++i) CHECK(s.lambda_grid[i] == grid[i]);
        }
    }
    CHECK(config_hash(shallow) != config_hash(deep));
    CHECK_THROWS_AS(builtin_config("auditory"), std::invalid_argument);
}

TEST_CASE("log grid and deep prior overrides") {
    const auto g = log_grid(1e-3, 1e3, 13);
    REQUIRE(g.size() == 13);
    CHECK(g.front() == doctest::Approx(1e-3));
    CHECK(g[6] == doctest::Approx(1.0));
    CHECK(g.back() == doctest::Approx(1e3));
    const auto z = log_grid(0.1, 1, 2, true);
    CHECK(z == std::vector<double>{0.0, 0.1, 1.0});

    DeepPriorOverrides o;
    o.iterations = 10;
    o.beta2 = 0.99;
    const auto d = deep_prior_config(o, 0.5, 0.25, 7);
    CHECK(d.iterations == 10);
    CHECK(d.adam.beta2 == 0.99);
    CHECK(d.adam.beta1 == 0.9);
    CHECK(d.learning_rate == 1e-2);
    CHECK(d.lambda == 0.5);
    CHECK(d.p == 0.25);
    CHECK(d.seed == 7);
}
