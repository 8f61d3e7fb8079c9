#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <complex>
#include <numbers>
#include <random>

#include "sf/datagen.hpp"
#include "sf/tokenizer.hpp"

using namespace sf;

namespace {

constexpr double kPi = std::numbers::pi;

Series white_noise(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Series x(static_cast<std::size_t>(n));
  for (auto& v : x) v = d(rng);
  return x;
}

Series random_walk(Index n, std::uint64_t seed) {
  Series x = white_noise(n, seed);
  for (std::size_t t = 1; t < x.size(); ++t) x[t] += x[t - 1];
  return x;
}

// Dickey-Fuller regression with a constant and `lag` lagged differences,
// solved through the normal equations.
double ols_adf(const Series& x, Index lag) {
  const Index n = Index(x.size()) - 1 - lag;
  const Index k = 2 + lag;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> ys;
  for (Index t = lag + 1; t < Index(x.size()); ++t) {
    Eigen::VectorXd r(k);
    r(0) = 1.0;
    r(1) = x[std::size_t(t - 1)];
    for (Index j = 1; j <= lag; ++j) r(1 + j) = x[std::size_t(t - j)] - x[std::size_t(t - j - 1)];
    const double y = x[std::size_t(t)] - x[std::size_t(t - 1)];
    a += r * r.transpose();
    b += y * r;
    rows.push_back(r);
    ys.push_back(y);
  }
  const Eigen::MatrixXd inv = a.inverse();
  const Eigen::VectorXd beta = inv * b;
  double rss = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) rss += std::pow(ys[i] - rows[i].dot(beta), 2);
  const double s2 = rss / double(n - k);
  return beta(1) / std::sqrt(s2 * inv(1, 1));
}

// 1 - H(p) / log(m) over periodogram bins 1..T/2 from a direct DFT.
double direct_forecastability(const Series& x) {
  const std::size_t t_len = x.size(), m = t_len / 2;
  std::vector<double> power(m);
  for (std::size_t k = 1; k <= m; ++k) {
    std::complex<double> s = 0;
    for (std::size_t t = 0; t < t_len; ++t) s += x[t] * std::polar(1.0, -2.0 * kPi * double(k * t) / double(t_len));
    power[k - 1] = std::norm(s);
  }
  double total = 0;
  for (double p : power) total += p;
  double h = 0;
  for (double p : power)
    if (p > 0) h -= p / total * std::log(p / total);
  return 1.0 - h / std::log(double(m));
}

Series sinusoid(Index n, double period, double phase = 0.0) {
  Series x(static_cast<std::size_t>(n));
  for (Index t = 0; t < n; ++t) x[std::size_t(t)] = std::sin(2 * kPi * double(t) / period + phase);
  return x;
}

} // namespace

TEST_CASE("signal components") {
  SignalSpec lin;
  lin.components = {{}};
  lin.components[0].kind = SignalKind::Linear;
  lin.components[0].slope = 1.0;
  lin.length = 4;
  CHECK(gen_signal(lin) == Series{0, 1, 2, 3});

  SignalSpec step;
  step.components = {{}};
  step.components[0].kind = SignalKind::Step;
  step.components[0].location = 2;
  step.length = 4;
  CHECK(gen_signal(step) == Series{0, 0, 1, 1});

  SignalComponent sin8;
  sin8.period = 8;
  SignalComponent trend;
  trend.kind = SignalKind::Linear;
  trend.slope = 0.1;
  SignalSpec sum;
  sum.components = {sin8, trend};
  sum.length = 32;
  const auto s = gen_signal(sum);
  for (Index t = 0; t < 32; ++t) CHECK(s[std::size_t(t)] == doctest::Approx(sin8.at(double(t)) + trend.at(double(t))));

  sum.combine = Combine::Multiplicative;
  trend.intercept = 1.0;
  sum.components = {sin8, trend};
  const auto p = gen_signal(sum);
  for (Index t = 0; t < 32; ++t) CHECK(p[std::size_t(t)] == doctest::Approx(sin8.at(double(t)) * trend.at(double(t))));

  SignalSpec noisy;
  noisy.noise_sigma = 0.5;
  noisy.seed = 42;
  CHECK(gen_signal(noisy) == gen_signal(noisy));
  noisy.seed = 43;
  CHECK(gen_signal(noisy) != gen_signal(SignalSpec{noisy.components, noisy.combine, 0.5, 64, 42}));

  CHECK(parse_signal_kind(to_string(SignalKind::Impulse)) == SignalKind::Impulse);
  CHECK_THROWS_AS(parse_signal_kind("sawtooth"), ConfigError);
}

TEST_CASE("seed derivation is deterministic and spread out") {
  CHECK(sub_seed(7, 3) == sub_seed(7, 3));
  CHECK(sub_seed(7, 3) != sub_seed(7, 4));
  CHECK(sub_seed(7, 3) != sub_seed(8, 3));
  CorpusSpec spec;
  spec.count = 3;
  spec.length = 128;
  spec.seed = 5;
  const auto a = make_corpus(spec);
  CHECK(a == make_corpus(spec));
  CHECK(a[1] == corpus_series(spec, 1));
  CHECK(a[0] != a[1]);
}

TEST_CASE("Fourier resampling") {
  const auto x = sinusoid(64, 8.0, 0.3);
  const auto same = resample(x, 1, 1);
  REQUIRE(same.size() == x.size());
  for (std::size_t t = 0; t < x.size(); ++t) CHECK(std::abs(same[t] - x[t]) < 1e-9);

  const auto up = resample(x, 2, 1);
  REQUIRE(up.size() == 128);
  double worst = 0;
  for (Index t = 0; t < 128; ++t)
    worst = std::max(worst, std::abs(up[std::size_t(t)] - std::sin(2 * kPi * double(t) / 16.0 + 0.3)));
  CHECK(worst < 1e-6);

  const auto back = resample(up, 1, 2);
  REQUIRE(back.size() == x.size());
  for (std::size_t t = 0; t < x.size(); ++t) CHECK(std::abs(back[t] - x[t]) < 1e-6);

  CHECK_THROWS_AS(resample(x, 9, 1), InputError);
  CHECK(augmentation_factors().size() == 9);
}

TEST_CASE("value flip") {
  Series s{1, -2};
  value_flip(s);
  CHECK(s == Series{-1, 2});
  auto w = white_noise(50, 3);
  const auto orig = w;
  value_flip(w);
  value_flip(w);
  CHECK(w == orig);

  // Zero-mean window: the normalized flip is the negated normalization.
  Series z = sinusoid(64, 16.0);
  auto zf = z;
  value_flip(zf);
  const auto a = renormalize(z), b = renormalize(zf);
  for (std::size_t t = 0; t < z.size(); ++t) CHECK(b.values[t] == doctest::Approx(-a.values[t]).epsilon(1e-12));
}

TEST_CASE("ADF statistic against the normal-equation oracle") {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (Index lag : {0, 2, 7}) {
      const auto w = white_noise(500, seed);
      const auto r = random_walk(500, seed + 10);
      const double a = adf_statistic(w, lag).statistic, b = ols_adf(w, lag);
      CHECK(std::abs(a - b) <= 1e-8 * std::max(1.0, std::abs(b)));
      const double c = adf_statistic(r, lag).statistic, d = ols_adf(r, lag);
      CHECK(std::abs(c - d) <= 1e-8 * std::max(1.0, std::abs(d)));
    }
  }
  CHECK(adf_statistic(white_noise(500, 11), 0).statistic < -10.0);
  CHECK(adf_statistic(random_walk(500, 12), 0).statistic > -2.0);
  CHECK(schwert_lag(100) == 12);

  Series trend(200);
  for (std::size_t t = 0; t < trend.size(); ++t) trend[t] = double(t + 1);
  const auto tr = adf_statistic(trend, 0);
  CHECK(std::abs(tr.gamma) < 1e-10);
  CHECK(tr.trend_dominated);
  CHECK(std::isfinite(tr.statistic));

  const Series flat(100, 3.0);
  const auto deg = adf_statistic(flat, 0);
  CHECK(deg.degenerate);
  CHECK(deg.statistic == -std::numeric_limits<double>::infinity());
}

TEST_CASE("forecastability") {
  const auto tone = sinusoid(1024, 1024.0 / 32.0);
  CHECK(forecastability(tone) > 0.99);
  CHECK(forecastability(white_noise(1024, 5)) < 0.2);
  CHECK(forecastability(Series(256, 2.0)) == 0.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = seed % 2 ? white_noise(200 + Index(seed), seed) : random_walk(300, seed);
    const double f = forecastability(x);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    CHECK(f == doctest::Approx(direct_forecastability(x)).epsilon(1e-9));
  }
}

TEST_CASE("length-weighted dataset complexity") {
  const auto a = white_noise(400, 1), b = random_walk(400, 2), c = white_noise(1200, 3);
  const auto single = dataset_complexity({a});
  CHECK(single.adf == doctest::Approx(adf_statistic(a).statistic));
  CHECK(single.forecastability == doctest::Approx(forecastability(a)));

  const auto pair = dataset_complexity({a, b});
  CHECK(pair.adf == doctest::Approx((adf_statistic(a).statistic + adf_statistic(b).statistic) / 2));
  CHECK(pair.forecastability == doctest::Approx((forecastability(a) + forecastability(b)) / 2));

  const auto three = dataset_complexity({a, b, c});
  double adf = 0, fc = 0;
  for (const auto* s : {&a, &b, &c}) {
    adf += double(s->size()) / 2000.0 * adf_statistic(*s).statistic;
    fc += double(s->size()) / 2000.0 * forecastability(*s);
  }
  CHECK(three.adf == doctest::Approx(adf).epsilon(1e-12));
  CHECK(three.forecastability == doctest::Approx(fc).epsilon(1e-12));

  const auto with_flat = dataset_complexity({a, Series(400, 1.0)});
  CHECK(with_flat.degenerate_variates == 1);
  CHECK(with_flat.adf == doctest::Approx(adf_statistic(a).statistic));
}
