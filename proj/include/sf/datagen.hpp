#pragma once

// Synthetic signals, augmentation and dataset complexity statistics.

#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sf/numerics.hpp"

namespace sf {

using Series = std::vector<double>;

/// splitmix64 finalizer; used to derive independent sub-seeds.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t sub_seed(std::uint64_t root, std::uint64_t index);

enum class SignalKind { Linear, Sinusoidal, Exponential, Power, Impulse, Step };
enum class Combine { Additive, Multiplicative };

std::string to_string(SignalKind k);
SignalKind parse_signal_kind(std::string_view s);
Combine parse_combine(std::string_view s);

/// One elementary signal over t = 0, 1, ...
///   linear       intercept + slope * t
///   sinusoidal   amplitude * sin(2 pi t / period + phase)
///   exponential  amplitude * exp(rate * t)
///   power        amplitude * t^exponent
///   impulse      amplitude at t == location, else 0
///   step         amplitude for t >= location, else 0
struct SignalComponent {
  SignalKind kind = SignalKind::Sinusoidal;
  double amplitude = 1.0;
  double period = 16.0;
  double phase = 0.0;
  double slope = 1.0;
  double intercept = 0.0;
  double rate = 0.01;
  double exponent = 2.0;
  Index location = 0;

  double at(double t) const;
  void validate() const;
};

struct SignalSpec {
  std::vector<SignalComponent> components{SignalComponent{}};
  Combine combine = Combine::Additive;
  double noise_sigma = 0.0;
  Index length = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Components combined elementwise, plus Gaussian noise drawn from `seed`.
Series gen_signal(const SignalSpec& spec);

/// Settings of the sinusoid-plus-trend family used for training corpora.
struct CorpusSpec {
  Index count = 256;
  Index length = 1024;
  std::uint64_t seed = 0;
  double min_period = 4.0;
  double max_period = 64.0;
  double max_slope = 0.01;   // per step, relative to the amplitude
  double noise_sigma = 0.1;  // relative to the amplitude
};

/// Random members of the family: one or two sinusoids, a linear trend, an
/// optional multiplicative envelope, Gaussian noise. Series i depends only on
/// (seed, i).
std::vector<Series> make_corpus(const CorpusSpec& spec);
Series corpus_series(const CorpusSpec& spec, Index i);

// ---------------------------------------------------------------------------
// Augmentation.

/// Fourier resampling to exactly `n` samples (spectrum truncation or
/// zero-padding, Nyquist bin split or joined as in scipy.signal.resample).
Series resample_to_length(std::span<const double> series, Index n);

/// Resamples by num/den to round(T * num / den) samples; r in [1/8, 8].
Series resample(std::span<const double> series, Index num, Index den);

/// Negates every value in place.
void value_flip(std::span<double> values);

struct ResampleFactor {
  Index num = 1;
  Index den = 1;
  double value() const { return double(num) / double(den); }
};

/// {1/4, 1/3, 1/2, 2/3, 1, 3/2, 2, 3, 4}
const std::vector<ResampleFactor>& augmentation_factors();

// ---------------------------------------------------------------------------
// Complexity statistics.

struct AdfResult {
  double statistic = 0.0;  // t-statistic of gamma; -inf when degenerate
  double gamma = 0.0;
  Index lag = 0;
  Index observations = 0;
  bool degenerate = false;       // singular regression
  bool trend_dominated = false;  // |mean diff| >= std of diffs
};

/// Schwert rule floor(12 (T/100)^(1/4)).
Index schwert_lag(Index length);

/// Design matrix and response of the constant/no-trend regression
/// dx_t = c + gamma x_{t-1} + sum_k phi_k dx_{t-k}; columns [1, x_{t-1}, dx lags].
void adf_design(std::span<const double> series, Index lag, Eigen::MatrixXd& design, Eigen::VectorXd& response);

/// lag < 0 selects the Schwert rule.
AdfResult adf_statistic(std::span<const double> series, Index lag = -1);

/// Raw periodogram |X_k|^2 for k = 1..floor(T/2).
std::vector<double> periodogram(std::span<const double> series);

/// 1 - H(p) / log(M) over the normalized periodogram; 0 for zero power.
double forecastability(std::span<const double> series);

struct ComplexityPoint {
  double adf = 0.0;
  double forecastability = 0.0;
  Index degenerate_variates = 0;
};

/// Length-weighted means of the per-variate statistics. Degenerate ADF
/// variates are left out of the ADF mean and counted.
ComplexityPoint dataset_complexity(const std::vector<Series>& variates);

} // namespace sf
