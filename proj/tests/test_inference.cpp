#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "sf/inference.hpp"

using namespace sf;

namespace {

ModelConfig small(Index p, Index n, Index l, Index h) {
  ModelConfig c = ModelConfig::tiny_reference();
  c.patch_len = p;
  c.max_patches = n;
  c.main_blocks = l;
  c.stp_blocks = h;
  return c;
}

std::vector<double> wave(Index length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<double> x(static_cast<std::size_t>(length));
  for (Index t = 0; t < length; ++t) x[std::size_t(t)] = 3.0 + std::sin(0.21 * double(t)) + 0.3 * n(rng);
  return x;
}

Index ceil_div(Index a, Index b) { return (a + b - 1) / b; }

} // namespace

TEST_CASE("adaptive depth") {
  const auto c = small(16, 8, 2, 16);
  CHECK(inference_depth(c, 1) == 0);
  CHECK(inference_depth(c, 16) == 0);
  CHECK(inference_depth(c, 17) == 1);
  CHECK(inference_depth(c, 272) == 16);
  CHECK(inference_depth(c, 1000) == 16);
  CHECK(c.native_horizon() == 272);

  const auto params = ModelParams<double>::init(c, 1);
  InferenceStats st;
  const auto f = forecast<double>(wave(100, 1), 272, params, &st);
  CHECK(f.horizon() == 272);
  CHECK(f.values.rows() == c.n_quantiles());
  CHECK(st.passes == 1);
  CHECK(st.blocks == c.main_blocks + 16);
}

TEST_CASE("shorter horizons are exact prefixes") {
  const auto c = small(4, 6, 2, 3);
  const auto params = ModelParams<double>::init(c, 2);
  const auto x = wave(50, 2);
  const Index full = c.native_horizon();
  const auto longest = forecast<double>(x, full, params);
  for (Index f = 1; f <= full; ++f) {
    const auto part = forecast<double>(x, f, params);
    CHECK(part.values == longest.values.leftCols(f));
  }
}

TEST_CASE("rolling baseline") {
  const auto c = small(4, 6, 2, 3);
  const auto params = ModelParams<double>::init(c, 3);
  const auto x = wave(40, 3);
  CHECK(forecast_rolling_ntp<double>(x, 4, params).values == forecast<double>(x, 4, params).values);

  for (Index f : {1, 3, 4, 5, 9, 16, 17, 40}) {
    InferenceStats roll, serial;
    forecast_rolling_ntp<double>(x, f, params, &roll);
    forecast<double>(x, f, params, &serial);
    CHECK(roll.passes == ceil_div(f, c.patch_len));
    CHECK(roll.blocks == ceil_div(f, c.patch_len) * c.main_blocks);
    const Index windows = ceil_div(f, c.native_horizon());
    CHECK(serial.passes == windows);
    const Index last = f - (windows - 1) * c.native_horizon();
    CHECK(serial.blocks == (windows - 1) * (c.main_blocks + c.stp_blocks) + c.main_blocks + inference_depth(c, last));
  }

  const auto big = small(16, 4, 1, 16);
  InferenceStats st;
  forecast_rolling_ntp<double>(wave(64, 4), 272, ModelParams<double>::init(big, 4), &st);
  CHECK(st.passes == 17);
}

TEST_CASE("context is truncated to the bound") {
  const auto c = small(4, 6, 2, 2);
  const auto params = ModelParams<double>::init(c, 5);
  const auto x = wave(200, 5);
  const std::vector<double> tail(x.end() - c.max_patches * c.patch_len, x.end());
  CHECK(forecast<double>(x, 30, params).values == forecast<double>(tail, 30, params).values);
}

TEST_CASE("forecasts are affine equivariant") {
  const auto c = small(4, 6, 2, 2);
  const auto params = ModelParams<double>::init(c, 6);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto x = wave(37, 10 + s);
    const double a = 0.5 + double(s), b = -4.0 + 3.0 * double(s);
    std::vector<double> y(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) y[t] = a * x[t] + b;
    const auto fx = forecast<double>(x, 20, params), fy = forecast<double>(y, 20, params);
    const Eigen::MatrixXd expect = (a * fx.values.array() + b).matrix();
    CHECK(((fy.values - expect).array().abs() / expect.array().abs().max(1.0)).maxCoeff() < 1e-9);
  }
}

TEST_CASE("monotone rearrangement") {
  Eigen::MatrixXd v(3, 2);
  v << 3, 1, 1, 2, 2, 0;
  monotone_rearrange(v);
  CHECK(v.col(0) == Eigen::Vector3d(1, 2, 3));
  CHECK(v.col(1) == Eigen::Vector3d(0, 1, 2));

  const auto c = small(4, 6, 2, 2);
  const auto params = ModelParams<double>::init(c, 7);
  const auto x = wave(30, 7);
  const auto raw = forecast<double>(x, 12, params, nullptr, ForecastOptions{false});
  const auto sorted = forecast<double>(x, 12, params);
  for (Index t = 0; t < 12; ++t) {
    std::vector<double> a(raw.values.col(t).data(), raw.values.col(t).data() + raw.values.rows());
    std::vector<double> b(sorted.values.col(t).data(), sorted.values.col(t).data() + sorted.values.rows());
    CHECK(std::is_sorted(b.begin(), b.end()));
    std::sort(a.begin(), a.end());
    CHECK(a == b);
  }
}

TEST_CASE("shift-token variant forecasts") {
  auto c = small(4, 6, 2, 3);
  c.stp_variant = StpVariant::ShiftToken;
  const auto params = ModelParams<double>::init(c, 8);
  const auto x = wave(40, 8);
  InferenceStats st;
  const auto f = forecast<double>(x, 40, params, &st);
  CHECK(f.values.allFinite());
  CHECK(st.passes == ceil_div(40, c.native_horizon()));
  const auto longest = forecast<double>(x, c.native_horizon(), params);
  CHECK(forecast<double>(x, 8, params).values == longest.values.leftCols(8));
}

TEST_CASE("MASE") {
  const std::vector<double> ins{1, 3, 2, 5, 4}, act{4, 6};
  CHECK(mase(act, act, ins).value == 0.0);
  const std::vector<double> off{5, 4};
  // In-sample naive error: (2 + 1 + 3 + 1) / 4.
  CHECK(mase(off, act, ins).value == doctest::Approx((1.0 + 2.0) / 2 / 1.75));

  const std::vector<double> periodic{1, 2, 3, 1, 2, 3, 1, 2, 3};
  const std::vector<double> cont{1, 2, 3};
  const auto deg = mase(cont, cont, periodic, 3);
  CHECK(deg.degenerate);
  CHECK(deg.value == 0.0);
  CHECK(mase(std::vector<double>{1.5}, std::vector<double>{1.0}, periodic, 3).degenerate);

  // Naive one-step forecasts of random walks score about 1 on average.
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n;
  double total = 0;
  const int trials = 200;
  for (int i = 0; i < trials; ++i) {
    std::vector<double> w(301);
    for (std::size_t t = 1; t < w.size(); ++t) w[t] = w[t - 1] + n(rng);
    const std::vector<double> insample(w.begin(), w.end() - 1);
    total += mase(std::vector<double>{insample.back()}, std::vector<double>{w.back()}, insample).value;
  }
  CHECK(std::abs(total / trials - 1.0) < 0.1);
}

TEST_CASE("CRPS approximation") {
  ForecastDistribution d;
  d.values.resize(d.levels.size(), 3);
  const std::vector<double> y{1.0, -2.0, 4.0};
  for (Index k = 0; k < d.levels.size(); ++k) d.values.row(k) = Eigen::RowVector3d(1.0, -2.0, 4.0);
  CHECK(eval_crps_wql(d, y) == 0.0);

  auto up = d, down = d;
  up.values.array() += 0.7;
  down.values.array() -= 0.7;
  CHECK(eval_crps_wql(up, y) == doctest::Approx(eval_crps_wql(down, y)).epsilon(1e-14));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (Index i = 0; i < d.values.size(); ++i) d.values.data()[i] = n(rng);
  double brute = 0, den = 0;
  for (double v : y) den += std::abs(v);
  for (Index k = 0; k < d.levels.size(); ++k) {
    double num = 0;
    const double q = d.levels.levels[std::size_t(k)];
    for (Index t = 0; t < 3; ++t) {
      const double e = y[std::size_t(t)] - d.values(k, t);
      num += e >= 0 ? q * e : (q - 1) * e;
    }
    brute += 2 * num / den;
  }
  CHECK(eval_crps_wql(d, y) == doctest::Approx(brute / double(d.levels.size())).epsilon(1e-13));
}

TEST_CASE("evaluation report") {
  const auto c = small(4, 6, 2, 2);
  const auto params = ModelParams<float>::init(c, 9);
  std::vector<std::vector<double>> series{wave(80, 1), wave(90, 2)};
  const auto rep = evaluate<float>(params, series, 16);
  CHECK(rep.mase_per_series.size() == 2);
  CHECK(std::isfinite(rep.mase));
  CHECK(std::isfinite(rep.crps_wql));
  CHECK(rep.passes_serial == 2 * ceil_div(16, c.native_horizon()));
  CHECK(rep.passes_rolling == 2 * 4);
  const auto text = rep.to_text();
  for (const char* key : {"\"mase\"", "\"crps_wql\"", "\"passes_serial\"", "\"passes_rolling\"", "\"wall_ms_p50\""})
    CHECK(text.find(key) != std::string::npos);

  const auto rows = bench_inference<float>(params, {4, 12}, 3);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].blocks_serial == c.main_blocks + 2);
  CHECK(rows[1].blocks_rolling == 3 * c.main_blocks);
}
