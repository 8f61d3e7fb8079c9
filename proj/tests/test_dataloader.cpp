#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>
#include <set>

#include "sf/dataloader.hpp"

using namespace sf;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("sf-test-" + tag + "-" + std::to_string(std::random_device{}()));
    fs::remove_all(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

Series ramp(Index n, double start = 0.0) {
  Series s(static_cast<std::size_t>(n));
  for (Index t = 0; t < n; ++t) s[std::size_t(t)] = start + double(t);
  return s;
}

} // namespace

TEST_CASE("shard round trip is bit-exact at storage precision") {
  TempDir dir("roundtrip");
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.0f, 10.0f);
  std::vector<Series> series;
  for (int i = 0; i < 7; ++i) {
    Series s(static_cast<std::size_t>(50 + 31 * i));
    for (auto& v : s) v = double(n(rng));
    series.push_back(s);
  }
  const auto m = build_shards(series, kMiB, dir.path, 9);
  CHECK(m.total_series() == 7);
  const auto back = read_all_series(ShardManifest::load(dir.path));
  CHECK(back == series);

  const auto loaded = ShardManifest::load(dir.path);
  CHECK(loaded.root_seed == 9);
  CHECK(loaded.shard_bytes == kMiB);
  REQUIRE(loaded.shards.size() == m.shards.size());
  CHECK(loaded.shards[0].crc == m.shards[0].crc);

  // Values beyond float precision come back rounded to float.
  TempDir d2("rounding");
  build_shards({Series{0.1, 1.0 / 3.0, 12345.678901}}, kMiB, d2.path, 0);
  const auto r = read_all_series(ShardManifest::load(d2.path));
  CHECK(r[0][0] == double(0.1f));
  CHECK(r[0][1] == double(float(1.0 / 3.0)));
}

TEST_CASE("shard packing arithmetic") {
  TempDir one("one");
  const auto m1 = build_shards({ramp(1000)}, 1ull << 40, one.path, 0);
  CHECK(m1.shards.size() == 1);
  CHECK(m1.total_points() == 1000);

  // Records of 16 + 4 * 100000 bytes: two fit in 1 MiB, three do not.
  TempDir ten("ten");
  std::vector<Series> equal(10, ramp(100000));
  const auto m = build_shards(equal, kMiB, ten.path, 0);
  CHECK(m.shards.size() == 5);
  for (const auto& s : m.shards) {
    CHECK(s.series == 2);
    CHECK(s.bytes == 2 * record_bytes(100000));
  }

  // A series longer than one shard is cut into segments and joined on read.
  TempDir big("big");
  const Index max_points = Index((kMiB - 16) / 4);
  const auto long_series = ramp(2 * max_points + 5);
  const auto mb = build_shards({ramp(10), long_series}, kMiB, big.path, 0);
  CHECK(mb.total_series() == 2);
  REQUIRE(mb.splits.size() == 1);
  CHECK(mb.splits[0].series_id == 1);
  CHECK(mb.splits[0].segments == 3);
  const auto joined = read_all_series(ShardManifest::load(big.path));
  REQUIRE(joined.size() == 2);
  CHECK(joined[1] == long_series);

  TempDir empty("empty");
  CHECK_THROWS_AS(build_shards({}, kMiB, empty.path, 0), InputError);
  CHECK_FALSE(fs::exists(empty.path / kManifestName));
  CHECK_THROWS_AS(build_shards({ramp(10)}, 1000, empty.path, 0), ConfigError);
}

TEST_CASE("corrupted shards are rejected") {
  TempDir dir("corrupt");
  const auto m = build_shards({ramp(300), ramp(200)}, kMiB, dir.path, 0);
  {
    std::fstream f(dir.path / m.shards[0].file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(read_shard(ShardManifest::load(dir.path), 0), ChecksumError);
  fs::resize_file(dir.path / m.shards[0].file, 100);
  CHECK_THROWS_AS(read_shard(ShardManifest::load(dir.path), 0), ChecksumError);
}

TEST_CASE("window sampling") {
  const Index n = 4, p = 2, h = 1;
  const Index window = (n + h + 1) * p;

  TempDir exact("exact");
  build_shards({ramp(window, 100.0)}, kMiB, exact.path, 0);
  WindowSampler only(ShardManifest::load(exact.path), 1);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5; ++i) CHECK(only.sample_window(n, p, h, i, rng).window() == ramp(window, 100.0));
  const auto w = only.sample_window(n, p, h, 0, rng);
  CHECK(w.input.size() == std::size_t(n * p));
  CHECK(w.targets.size() == std::size_t((h + 1) * p));

  // Two candidate windows: starts 0 and 1 must be equally likely.
  TempDir two("two");
  build_shards({ramp(window + 1)}, kMiB, two.path, 0);
  WindowSampler sampler(ShardManifest::load(two.path), 1);
  std::mt19937_64 draw(4);
  const int draws = 100000;
  int first = 0;
  for (int i = 0; i < draws; ++i) first += sampler.sample_window(n, p, h, 0, draw).input[0] == 0.0;
  CHECK(std::abs(double(first) / draws - 0.5) <= 0.01);

  // Same seed, same sequence.
  std::mt19937_64 r1(5), r2(5);
  for (int i = 0; i < 20; ++i)
    CHECK(sampler.sample_window(n, p, h, i, r1).input == sampler.sample_window(n, p, h, i, r2).input);

  // Windows longer than every series are reported, not looped on.
  CHECK_THROWS_AS(sampler.sample_window(n + 5, p, h, 0, draw), SamplerError);
}

TEST_CASE("active shard rotation") {
  TempDir dir("rotate");
  std::vector<Series> series(12, ramp(100000));
  WindowSampler s(build_shards(series, kMiB, dir.path, 0), 2, 10, 7);
  const auto a0 = s.active_shards(0);
  CHECK(a0.size() == 2);
  CHECK(s.active_shards(9) == a0);
  CHECK(s.active_shards(10) != a0);
  std::set<Index> seen;
  for (Index step = 0; step < 30; step += 10)
    for (Index i : s.active_shards(step)) seen.insert(i);
  CHECK(seen.size() == 6);
  WindowSampler again(ShardManifest::load(dir.path), 2, 10, 7);
  CHECK(again.active_shards(20) == s.active_shards(20));
}

TEST_CASE("mixture sampling") {
  const Index n = 2, p = 2, h = 0;
  TempDir a("mixa"), b("mixb");
  WindowSampler sa(build_shards({ramp(40, 0.0)}, kMiB, a.path, 0), 1, 100, 1, 0);
  WindowSampler sb(build_shards({ramp(40, 1000.0)}, kMiB, b.path, 0), 1, 100, 2, 1);

  MixtureSampler only_a({&sa, &sb}, {1.0, 0.0});
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const auto w = only_a.sample_window(n, p, h, 0, rng);
    CHECK(w.source == 0);
    CHECK(w.input[0] < 1000.0);
  }

  MixtureSampler half({&sa, &sb}, {1.0, 1.0});
  int from_a = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) from_a += half.sample_window(n, p, h, 0, rng).source == 0;
  CHECK(std::abs(double(from_a) / draws - 0.5) <= 0.02);

  MixtureSampler single({&sa}, {3.0});
  std::mt19937_64 r1(8), r2(8);
  CHECK(single.sample_window(n, p, h, 0, r1).input == sa.sample_window(n, p, h, 0, r2).input);

  CHECK_THROWS_AS(MixtureSampler({&sa, &sb}, {1.0}), ConfigError);
  CHECK_THROWS_AS(MixtureSampler({&sa, &sb}, {0.0, 0.0}), ConfigError);
}

TEST_CASE("shard queue residency") {
  TempDir dir("queue");
  std::vector<Series> series(6, ramp(100000));
  const auto m = build_shards(series, kMiB, dir.path, 0);
  REQUIRE(m.shards.size() == 3);

  ShardQueue roomy(m, 3);
  for (int round = 0; round < 4; ++round)
    for (Index s = 0; s < 3; ++s) roomy.acquire(s);
  CHECK(roomy.stats().evictions == 0);
  CHECK(roomy.stats().loads == 3);

  ShardQueue tight(m, 1);
  for (int i = 0; i < 10; ++i) tight.acquire(i % 2);
  CHECK(tight.stats().loads == 10);
  CHECK(tight.stats().evictions == 9);

  ShardQueue two(m, 2);
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<Index> pick(0, 2);
  for (int i = 0; i < 200; ++i) {
    auto held = two.acquire(pick(rng));
    CHECK(two.stats().resident_bytes <= 2 * m.shard_bytes);
    CHECK(held->records.size() == 2);
  }
  CHECK(two.stats().peak_resident_bytes <= 3 * m.shard_bytes);
}

TEST_CASE("CSV series") {
  TempDir dir("csv");
  fs::create_directories(dir.path);
  const auto path = dir.path / "s.csv";
  {
    std::ofstream os(path);
    os << "time,value\n0,1.5\n1,-2\n\n2,3e-1\n";
  }
  CHECK(read_csv_series(path) == Series{1.5, -2.0, 0.3});
  const Series s{0.1, 1.0 / 3.0, -7.25};
  write_csv_series(path, s);
  CHECK(read_csv_series(path) == s);
  {
    std::ofstream os(path);
    os << "x\n1\n";
  }
  CHECK_THROWS_AS(read_csv_series(path), InputError);
  {
    std::ofstream os(path);
    os << "value\nabc\n";
  }
  CHECK_THROWS_AS(read_csv_series(path), InputError);
}
