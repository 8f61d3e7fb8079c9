#include "sf/datagen.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>

namespace sf {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t sub_seed(std::uint64_t root, std::uint64_t index) { return splitmix64(splitmix64(root) ^ index); }

std::string to_string(SignalKind k) {
  switch (k) {
    case SignalKind::Linear: return "linear";
    case SignalKind::Sinusoidal: return "sinusoidal";
    case SignalKind::Exponential: return "exponential";
    case SignalKind::Power: return "power";
    case SignalKind::Impulse: return "impulse";
    case SignalKind::Step: return "step";
  }
  return "?";
}

SignalKind parse_signal_kind(std::string_view s) {
  for (auto k : {SignalKind::Linear, SignalKind::Sinusoidal, SignalKind::Exponential, SignalKind::Power,
                 SignalKind::Impulse, SignalKind::Step})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown signal kind '" + std::string(s) +
                    "' (linear|sinusoidal|exponential|power|impulse|step)");
}

Combine parse_combine(std::string_view s) {
  if (s == "additive" || s == "add") return Combine::Additive;
  if (s == "multiplicative" || s == "mul") return Combine::Multiplicative;
  throw ConfigError("unknown combine mode '" + std::string(s) + "' (additive|multiplicative)");
}

double SignalComponent::at(double t) const {
  switch (kind) {
    case SignalKind::Linear: return intercept + slope * t;
    case SignalKind::Sinusoidal: return amplitude * std::sin(2.0 * std::numbers::pi * t / period + phase);
    case SignalKind::Exponential: return amplitude * std::exp(rate * t);
    case SignalKind::Power: return amplitude * std::pow(t, exponent);
    case SignalKind::Impulse: return t == double(location) ? amplitude : 0.0;
    case SignalKind::Step: return t >= double(location) ? amplitude : 0.0;
  }
  return 0.0;
}

void SignalComponent::validate() const {
  if (kind == SignalKind::Sinusoidal && !(period > 0.0)) throw InputError("sinusoid period must be positive");
  if (kind == SignalKind::Power && !(exponent >= 0.0)) throw InputError("power exponent must be non-negative");
  for (double v : {amplitude, period, phase, slope, intercept, rate, exponent})
    if (!std::isfinite(v)) throw InputError("signal parameters must be finite");
}

void SignalSpec::validate() const {
  if (length < 1) throw InputError("signal length must be >= 1");
  if (components.empty()) throw InputError("signal needs at least one component");
  if (!(noise_sigma >= 0.0)) throw InputError("noise_sigma must be non-negative");
  for (const auto& c : components) c.validate();
}

Series gen_signal(const SignalSpec& spec) {
  spec.validate();
  Series out(static_cast<std::size_t>(spec.length));
  for (Index t = 0; t < spec.length; ++t) {
    double v = spec.combine == Combine::Additive ? 0.0 : 1.0;
    for (const auto& c : spec.components) {
      if (spec.combine == Combine::Additive)
        v += c.at(double(t));
      else
        v *= c.at(double(t));
    }
    out[std::size_t(t)] = v;
  }
  if (spec.noise_sigma > 0.0) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (auto& v : out) v += noise(rng);
  }
  for (double v : out)
    if (!std::isfinite(v)) throw InputError("signal overflowed to a non-finite value");
  return out;
}

Series corpus_series(const CorpusSpec& spec, Index i) {
  std::mt19937_64 rng(sub_seed(spec.seed, std::uint64_t(i)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto log_uniform = [&](double lo, double hi) { return lo * std::pow(hi / lo, u(rng)); };
  const double amp = log_uniform(0.5, 2.0);

  SignalSpec s;
  s.length = spec.length;
  s.components.clear();
  SignalComponent main;
  main.kind = SignalKind::Sinusoidal;
  main.amplitude = amp;
  main.period = log_uniform(spec.min_period, spec.max_period);
  main.phase = 2.0 * std::numbers::pi * u(rng);
  s.components.push_back(main);
  if (u(rng) < 0.5) {
    SignalComponent second = main;
    second.amplitude = amp * (0.2 + 0.4 * u(rng));
    second.period = log_uniform(spec.min_period, spec.max_period);
    second.phase = 2.0 * std::numbers::pi * u(rng);
    s.components.push_back(second);
  }
  SignalComponent trend;
  trend.kind = SignalKind::Linear;
  trend.intercept = 4.0 * u(rng) - 2.0;
  trend.slope = amp * spec.max_slope * (2.0 * u(rng) - 1.0);
  s.components.push_back(trend);
  s.noise_sigma = spec.noise_sigma * amp;
  s.seed = rng();
  Series out = gen_signal(s);

  if (u(rng) < 0.25) {
    // Slowly growing or shrinking oscillation amplitude.
    SignalSpec env;
    env.length = spec.length;
    env.combine = Combine::Additive;
    SignalComponent ramp;
    ramp.kind = SignalKind::Linear;
    ramp.intercept = 1.0;
    ramp.slope = (u(rng) - 0.5) / double(spec.length);
    env.components = {ramp};
    const Series e = gen_signal(env);
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = trend.at(double(t)) + (out[t] - trend.at(double(t))) * e[t];
  }
  return out;
}

std::vector<Series> make_corpus(const CorpusSpec& spec) {
  if (spec.count < 1 || spec.length < 1) throw InputError("corpus needs count >= 1 and length >= 1");
  if (!(spec.min_period > 0.0 && spec.max_period >= spec.min_period)) throw InputError("invalid period range");
  std::vector<Series> out;
  out.reserve(std::size_t(spec.count));
  for (Index i = 0; i < spec.count; ++i) out.push_back(corpus_series(spec, i));
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation.

Series resample_to_length(std::span<const double> series, Index n) {
  const Index nx = Index(series.size());
  if (nx < 1) throw InputError("resample: empty series");
  if (n < 2) throw InputError("resample: result would have fewer than 2 samples");
  if (n == nx) return Series(series.begin(), series.end());

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> in(series.begin(), series.end()), spec_x, spec_y(static_cast<std::size_t>(n));
  fft.fwd(spec_x, in);

  const Index m = std::min(n, nx);
  const Index nyq = m / 2 + 1;
  for (Index k = 0; k < nyq; ++k) spec_y[std::size_t(k)] = spec_x[std::size_t(k)];
  if (m > 2)
    for (Index k = 1; k <= m - nyq; ++k) spec_y[std::size_t(n - k)] = spec_x[std::size_t(nx - k)];
  if (m % 2 == 0) {
    if (n < nx) {
      spec_y[std::size_t(m / 2)] += spec_x[std::size_t(nx - m / 2)];
    } else {
      spec_y[std::size_t(m / 2)] *= 0.5;
      spec_y[std::size_t(n - m / 2)] = spec_y[std::size_t(m / 2)];
    }
  }
  std::vector<std::complex<double>> out_c;
  fft.inv(out_c, spec_y);
  Series out(static_cast<std::size_t>(n));
  const double scale = double(n) / double(nx);
  for (Index t = 0; t < n; ++t) out[std::size_t(t)] = out_c[std::size_t(t)].real() * scale;
  return out;
}

Series resample(std::span<const double> series, Index num, Index den) {
  if (series.size() < 4) throw InputError("resample: need at least 4 samples");
  if (num < 1 || den < 1 || 8 * num < den || num > 8 * den) throw InputError("resample: factor outside [1/8, 8]");
  const Index n = Index(std::llround(double(series.size()) * double(num) / double(den)));
  return resample_to_length(series, n);
}

void value_flip(std::span<double> values) {
  for (auto& v : values) v = -v;
}

const std::vector<ResampleFactor>& augmentation_factors() {
  static const std::vector<ResampleFactor> f{{1, 4}, {1, 3}, {1, 2}, {2, 3}, {1, 1}, {3, 2}, {2, 1}, {3, 1}, {4, 1}};
  return f;
}

// ---------------------------------------------------------------------------
// Complexity statistics.

Index schwert_lag(Index length) { return Index(std::floor(12.0 * std::pow(double(length) / 100.0, 0.25))); }

void adf_design(std::span<const double> x, Index lag, Eigen::MatrixXd& design, Eigen::VectorXd& response) {
  const Index t_len = Index(x.size());
  if (lag < 0) throw InputError("adf: negative lag");
  if (t_len < lag + 10) throw InputError("adf: series too short for lag " + std::to_string(lag));
  const Index rows = t_len - 1 - lag;
  design.resize(rows, 2 + lag);
  response.resize(rows);
  for (Index r = 0; r < rows; ++r) {
    const Index t = r + lag + 1;
    response(r) = x[std::size_t(t)] - x[std::size_t(t - 1)];
    design(r, 0) = 1.0;
    design(r, 1) = x[std::size_t(t - 1)];
    for (Index k = 1; k <= lag; ++k) design(r, 1 + k) = x[std::size_t(t - k)] - x[std::size_t(t - k - 1)];
  }
}

AdfResult adf_statistic(std::span<const double> series, Index lag) {
  AdfResult res;
  res.lag = lag < 0 ? schwert_lag(Index(series.size())) : lag;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  adf_design(series, res.lag, x, y);
  res.observations = x.rows();

  const Eigen::VectorXd dx = y;
  const double mean_dx = dx.mean();
  const double sd_dx = std::sqrt((dx.array() - mean_dx).square().mean());
  res.trend_dominated = std::abs(mean_dx) >= sd_dx;

  const Index k = x.cols();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < k || x.rows() <= k) {
    res.degenerate = true;
    res.statistic = -std::numeric_limits<double>::infinity();
    return res;
  }
  const Eigen::VectorXd beta = qr.solve(y);
  const double rss = (y - x * beta).squaredNorm();
  const double s2 = rss / double(x.rows() - k);
  // (X^T X)^-1 = P R^-1 R^-T P^T.
  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd rinv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd cov_p = rinv * rinv.transpose();
  const auto& perm = qr.colsPermutation().indices();
  double var_gamma = 0.0;
  for (Index i = 0; i < k; ++i)
    if (perm(i) == 1) var_gamma = cov_p(i, i);
  res.gamma = beta(1);
  // An exact fit leaves the t-statistic undefined; report 0.
  if (rss <= 1e-24 * std::max(y.squaredNorm(), 1e-300)) return res;
  const double se = std::sqrt(s2 * var_gamma);
  res.statistic = se > 0.0 ? res.gamma / se : 0.0;
  return res;
}

std::vector<double> periodogram(std::span<const double> series) {
  const Index t_len = Index(series.size());
  if (t_len < 4) throw InputError("periodogram: need at least 4 samples");
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> in(series.begin(), series.end()), spec;
  fft.fwd(spec, in);
  const Index m = t_len / 2;
  std::vector<double> out(static_cast<std::size_t>(m));
  for (Index k = 1; k <= m; ++k) out[std::size_t(k - 1)] = std::norm(spec[std::size_t(k)]);
  return out;
}

double forecastability(std::span<const double> series) {
  const auto power = periodogram(series);
  double total = 0.0, peak = 0.0;
  for (double p : power) {
    total += p;
    peak = std::max(peak, p);
  }
  // Power at round-off level relative to the signal counts as zero.
  double scale = 0.0;
  for (double v : series) scale += v * v;
  if (!(total > 1e-24 * std::max(scale, 1e-300) * double(series.size())) || !(peak > 0.0)) return 0.0;
  double h = 0.0;
  for (double p : power) {
    const double q = p / total;
    if (q > 0.0) h -= q * std::log(q);
  }
  const double m = double(power.size());
  return std::clamp(1.0 - h / std::log(m), 0.0, 1.0);
}

ComplexityPoint dataset_complexity(const std::vector<Series>& variates) {
  if (variates.empty()) throw InputError("dataset_complexity: no variates");
  ComplexityPoint out;
  double total = 0.0, adf_total = 0.0;
  for (const auto& v : variates) total += double(v.size());
  for (const auto& v : variates) {
    const double w = double(v.size());
    out.forecastability += w / total * forecastability(v);
    const auto adf = adf_statistic(v);
    if (adf.degenerate) {
      ++out.degenerate_variates;
      continue;
    }
    out.adf += w * adf.statistic;
    adf_total += w;
  }
  out.adf = adf_total > 0.0 ? out.adf / adf_total : -std::numeric_limits<double>::infinity();
  return out;
}

} // namespace sf
