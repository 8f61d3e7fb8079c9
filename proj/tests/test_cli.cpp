#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "sf/cli.hpp"

namespace fs = std::filesystem;

namespace {

int call(std::vector<std::string> args) {
  args.insert(args.begin(), "sf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return sf::run(int(argv.size()), argv.data());
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("sf-cli-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

} // namespace

TEST_CASE("exit codes") {
  CHECK(call({"gradcheck"}) == 0);
  CHECK(call({"gradcheck", "--no_such_flag", "1"}) == 1);
  CHECK(call({"frobnicate"}) == 1);
  CHECK(call({}) == 1);
  CHECK(call({"forecast", "--checkpoint", "/nonexistent/model.sfck", "--input", "/nonexistent/x.csv", "--horizon", "5"}) == 2);
}

TEST_CASE("synth writes one row per step") {
  TempDir dir;
  const auto out = dir.path / "s.csv";
  REQUIRE(call({"synth", "--kind", "sinusoidal", "--period", "8", "--length", "64", "--out", out.string()}) == 0);
  const auto rows = lines(out);
  REQUIRE(rows.size() == 65);
  CHECK(rows[0] == "value");

  const auto again = dir.path / "t.csv";
  REQUIRE(call({"synth", "--kind", "sinusoidal", "--period", "8", "--length", "64", "--out", again.string()}) == 0);
  CHECK(slurp(out) == slurp(again));
}

TEST_CASE("flags override the config file") {
  TempDir dir;
  const auto cfg = dir.path / "run.cfg";
  {
    std::ofstream os(cfg);
    os << "# synthetic run\nlength = 40\nperiod=8\n";
  }
  const auto a = dir.path / "a.csv", b = dir.path / "b.csv";
  REQUIRE(call({"synth", "--config", cfg.string(), "--out", a.string()}) == 0);
  CHECK(lines(a).size() == 41);
  REQUIRE(call({"synth", "--config", cfg.string(), "--length", "12", "--out", b.string()}) == 0);
  CHECK(lines(b).size() == 13);

  {
    std::ofstream os(cfg);
    os << "not_a_key = 3\n";
  }
  CHECK(call({"synth", "--config", cfg.string(), "--out", a.string()}) == 1);
  CHECK(call({"synth", "--config", (dir.path / "missing.cfg").string()}) == 1);
}

TEST_CASE("train, forecast and eval end to end") {
  TempDir dir;
  const auto shards = dir.path / "shards";
  REQUIRE(call({"synth", "--family", "corpus", "--count", "8", "--length", "200", "--seed", "3", "--format", "shard",
                "--out", shards.string()}) == 0);
  CHECK(fs::exists(shards));
  REQUIRE(call({"stats", "--input", shards.string()}) == 0);

  const auto model = dir.path / "m.sfck";
  const std::vector<std::string> tiny{"--dim", "16", "--patch_len", "4", "--max_patches", "8", "--main_blocks", "1",
                                      "--stp_blocks", "2", "--experts", "2", "--top_k", "1"};
  std::vector<std::string> train{"train", "--data", shards.string(), "--out", model.string(), "--steps", "3",
                                 "--batch_size", "2", "--log_every", "0"};
  train.insert(train.end(), tiny.begin(), tiny.end());
  REQUIRE(call(train) == 0);
  REQUIRE(fs::exists(model));

  const auto input = dir.path / "in.csv";
  REQUIRE(call({"synth", "--period", "8", "--length", "50", "--out", input.string()}) == 0);
  const auto fc = dir.path / "fc.csv";
  REQUIRE(call({"forecast", "--checkpoint", model.string(), "--input", input.string(), "--horizon", "10", "--out",
                fc.string()}) == 0);
  const auto rows = lines(fc);
  REQUIRE(rows.size() == 11);
  CHECK(rows[0].rfind("step,", 0) == 0);
  CHECK(std::count(rows[0].begin(), rows[0].end(), ',') == 9);

  const auto fr = dir.path / "fr.csv";
  REQUIRE(call({"forecast", "--checkpoint", model.string(), "--input", input.string(), "--horizon", "10", "--mode",
                "rolling", "--out", fr.string()}) == 0);
  CHECK(lines(fr).size() == 11);

  CHECK(call({"eval", "--checkpoint", model.string(), "--input", input.string(), "--horizon", "8"}) == 0);
  CHECK(call({"forecast", "--checkpoint", model.string(), "--input", input.string(), "--horizon", "0"}) == 1);
}
