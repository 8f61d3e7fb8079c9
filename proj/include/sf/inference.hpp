#pragma once

// Forecasting (single-pass serial with adaptive depth, outer autoregression
// past the native window), the rolling next-token baseline, metrics and the
// compute benchmark.

#include <span>
#include <vector>

#include "sf/objectives.hpp"

namespace sf {

struct ForecastOptions {
  bool monotone = true;  // sort quantiles at every step
};

struct ForecastDistribution {
  Eigen::MatrixXd values;  // Q x F, original scale
  QuantileGrid levels;

  Index horizon() const { return values.cols(); }
  /// Row of the level closest to 0.5.
  Eigen::VectorXd median() const;
};

struct InferenceStats {
  Index passes = 0;  // model forward passes
  Index blocks = 0;  // TimeMoE block invocations, including those inside TimeSTP
  Index windows = 0; // outer autoregression windows
};

/// Serial depth used for a window of `horizon` steps: min(H, max(0, ceil(F/P) - 1)).
Index inference_depth(const ModelConfig& config, Index horizon);

/// Forecast `horizon` steps after `series`. Only the last max_patches * P
/// points are used as context.
template <class S>
ForecastDistribution forecast(std::span<const double> series, Index horizon, const ModelParams<S>& params,
                              InferenceStats* stats = nullptr, const ForecastOptions& options = {});

/// Main blocks only, one patch per pass, median fed back, full recompute.
template <class S>
ForecastDistribution forecast_rolling_ntp(std::span<const double> series, Index horizon, const ModelParams<S>& params,
                                          InferenceStats* stats = nullptr, const ForecastOptions& options = {});

/// Rearranges each column into non-decreasing order.
void monotone_rearrange(Eigen::MatrixXd& values);

struct MaseResult {
  double value = 0.0;
  bool degenerate = false;  // seasonal-naive in-sample error was zero
};

inline constexpr double kMaseEps = 1e-8;

MaseResult mase(std::span<const double> forecast, std::span<const double> actuals, std::span<const double> insample,
                Index season = 1);

/// Mean over levels of wQL in data scale across the full horizon.
double eval_crps_wql(const ForecastDistribution& dist, std::span<const double> actuals);

struct EvalReport {
  std::vector<double> mase_per_series;
  double mase = 0.0;
  double crps_wql = 0.0;
  double mase_rolling = 0.0;
  double crps_wql_rolling = 0.0;
  Index degenerate = 0;
  Index passes_serial = 0;
  Index passes_rolling = 0;
  Index blocks_serial = 0;
  Index blocks_rolling = 0;
  double wall_ms_p50 = 0.0;          // serial forecast, per series
  double wall_ms_rolling_p50 = 0.0;

  std::string to_text() const;
};

/// Holds out the last `horizon` points of every series and forecasts them
/// from the rest, in serial and rolling mode.
template <class S>
EvalReport evaluate(const ModelParams<S>& params, const std::vector<std::vector<double>>& series, Index horizon,
                    Index season = 1, const ForecastOptions& options = {});

struct BenchRow {
  Index horizon = 0;
  Index blocks_serial = 0;
  Index blocks_rolling = 0;
  Index passes_serial = 0;
  Index passes_rolling = 0;
  double wall_ms_serial = 0.0;   // median over repetitions
  double wall_ms_rolling = 0.0;
};

template <class S>
std::vector<BenchRow> bench_inference(const ModelParams<S>& params, const std::vector<Index>& horizons,
                                      Index repetitions, std::uint64_t seed = 0);

double median(std::vector<double> v);

} // namespace sf
