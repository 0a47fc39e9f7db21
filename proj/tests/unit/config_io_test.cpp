#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "../support.hpp"
#include "trajforge/config.hpp"
#include "trajforge/error.hpp"
#include "trajforge/io.hpp"

using namespace trajforge;

namespace {

std::string config_error(std::string_view text) {
  try {
    (void)parse_run_config(text);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
    return e.what();
  }
  FAIL("config accepted");
  return {};
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("trajforge-unit-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults") {
    RunConfig c;
    CHECK(c.ingest.radius_km == 1.0);
    CHECK(c.ingest.min_minutes == 20.0);
    CHECK(c.ingest.min_visits == 3);
    CHECK(c.gen.temperature == 1.2);
    CHECK(c.train.batch_size == 48);
    CHECK(c.train.epochs == 20);
    CHECK(c.lora.rank == 16);
    CHECK(c.lora.alpha == 32.0);
    CHECK(c.lora.dropout == doctest::Approx(0.02));
    CHECK(c.timespec.slot_minutes == 15);
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("parsing") {
    const auto c = parse_run_config(R"(
# a comment
seed = 42   # trailing comment
threads = 2
[grid]
n_rows = 8
cell_km = 0.5
[lora]
enabled = true
targets = ["wq", "wk", "w2"]
[train]
permute = "once"
learning_rate = 1e-3
[paths]
report = "out/report.json"
)");
    CHECK(c.seed == 42);
    CHECK(c.threads == 2);
    CHECK(c.grid.n_rows == 8);
    CHECK(c.grid.cell_km == 0.5);
    CHECK(c.use_lora);
    CHECK(c.lora.targets == std::vector<std::string>{"wq", "wk", "w2"});
    CHECK(c.train.permute == PermuteMode::Once);
    CHECK(c.train.learning_rate == 1e-3);
    CHECK(c.paths.report == "out/report.json");

    auto f = c;
    f.finalize();
    CHECK(f.train.seed == 42);
    CHECK(f.gen.seed == 42);
  }

  TEST_CASE("rejections name the line") {
    CHECK(config_error("seed = 1\nbogus = 2\n").find("line 2") != std::string::npos);
    CHECK(config_error("[grid]\nn_rows = 3\ncolour = 1\n").find("grid.colour") != std::string::npos);
    CHECK(config_error("[nowhere]\n").find("unknown section") != std::string::npos);
    CHECK(config_error("seed = \"x\"\n").find("line 1") != std::string::npos);
    CHECK(config_error("[grid]\nn_rows = 1.5\n").find("integer") != std::string::npos);
    CHECK(config_error("seed 4\n").find("key = value") != std::string::npos);
    CHECK(config_error("[train]\npermute = \"sideways\"\n").find("line 2") != std::string::npos);

    auto bad = parse_run_config("[model]\nd_model = 30\nn_heads = 4\n");
    CHECK_THROWS_AS(bad.finalize(), Error);
  }

  TEST_CASE("format and parse agree") {
    RunConfig c;
    c.seed = 9;
    c.grid.n_cols = 7;
    c.lora.targets = {"wo"};
    c.train.permute = PermuteMode::Off;
    c.paths.checkpoint = "m.glma";
    const auto back = parse_run_config(format_run_config(c));
    CHECK(back.to_json() == c.to_json());

    const auto dir = scratch_dir("config");
    std::ofstream(dir / "c.toml") << format_run_config(c);
    CHECK(load_run_config(dir / "c.toml").to_json() == c.to_json());
    std::filesystem::remove_all(dir);
  }
}

TEST_SUITE("io") {
  TEST_CASE("dataset files") {
    Rng rng = make_rng(81, "io");
    const auto ds = tfsupport::random_dataset(rng, 30, tfsupport::small_grid(), TimeSpec{});
    const auto dir = scratch_dir("io");
    const auto path = dir / "d.jsonl";
    write_dataset(path, ds);
    CHECK(std::filesystem::exists(header_path_for(path)));
    CHECK(header_path_for(path).filename() == "d.header.json");
    const auto back = read_dataset(path);
    CHECK(back.trajectories == ds.trajectories);
    CHECK(back.grid == ds.grid);
    CHECK(back.timespec == ds.timespec);

    // a visit outside the declared grid is rejected on read
    std::ofstream(path, std::ios::app) << R"({"id":"bad","visits":[[1,99,1]]})" << "\n";
    CHECK_THROWS_AS((void)read_dataset(path), Error);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS((void)read_dataset(path), Error);
  }

  TEST_CASE("trajectory json") {
    const Trajectory t{"x", {{1, 2, 3}, {9, 4, 1}}};
    CHECK(to_json(t).dump() == R"({"id":"x","visits":[[1,2,3],[9,4,1]]})");
    CHECK(trajectory_from_json(to_json(t)) == t);
    CHECK_THROWS_AS((void)trajectory_from_json(nlohmann::json::parse(R"({"id":"x","visits":[[1,2]]})")), Error);
  }

  TEST_CASE("constraint files") {
    const std::vector<ConstraintSet> sets = {{std::string("t1"), {{5, 28, 32, 4}, {6, 40, 40, {}}}},
                                             {std::nullopt, {{1, 0, 2, {}}}}};
    std::stringstream ss;
    write_constraints(ss, sets);
    const auto text = ss.str();
    CHECK(text.find(R"("for":"t1")") != std::string::npos);
    CHECK(text.find(R"([6,40,40,null])") != std::string::npos);
    CHECK(read_constraints(ss) == sets);
  }
}
