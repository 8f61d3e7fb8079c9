#include "sf/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace sf {

Eigen::VectorXd ForecastDistribution::median() const { return values.row(levels.median_index()).transpose(); }

Index inference_depth(const ModelConfig& config, Index horizon) {
  const Index patches = (horizon + config.patch_len - 1) / config.patch_len;
  return std::min(config.stp_blocks, std::max<Index>(0, patches - 1));
}

void monotone_rearrange(Eigen::MatrixXd& values) {
  for (Index t = 0; t < values.cols(); ++t) {
    auto col = values.col(t);
    std::sort(col.begin(), col.end());
  }
}

namespace {

std::span<const double> context_tail(std::span<const double> series, const ModelConfig& config) {
  if (series.empty()) throw InputError("forecast: empty series");
  const auto limit = std::size_t(config.max_patches * config.patch_len);
  return series.size() > limit ? series.last(limit) : series;
}

/// Forecasts up to (H+1)P steps in one pass; returns Q x horizon in original scale.
template <class S>
Eigen::MatrixXd forecast_window(std::span<const double> series, Index horizon, Index depth,
                                const ModelParams<S>& params, ForwardCounters& counters) {
  const ModelConfig& cfg = params.config;
  const Index p = cfg.patch_len;
  const Index q_count = cfg.n_quantiles();
  const auto ctx = context_tail(series, cfg);
  const Normalized norm = renormalize(ctx);
  const Patches<S> patches = patchify<S>(norm.values, p);
  const Index n = patches.count();
  const Index median_row = cfg.quantiles.median_index();

  FuturePatchFn<S> future = [&](Index, Index, const Mat<S>& depth_output) -> Vec<S> {
    const Mat<S> proj = patch_project<S>(depth_output.bottomRows(1), params.head);
    return proj.row(0).segment(median_row * p, p).transpose();
  };
  const bool shift = cfg.stp_variant == StpVariant::ShiftToken && depth > 0;
  const auto out = forward_sequence<S>(params, patches, n, depth, nullptr, nullptr, &counters,
                                       shift ? &future : nullptr);

  Eigen::MatrixXd values(q_count, (depth + 1) * p);
  for (Index j = 0; j <= depth; ++j) {
    const Mat<S> proj = patch_project<S>(out.depth(j).bottomRows(1), params.head);
    for (Index k = 0; k < q_count; ++k)
      values.block(k, j * p, 1, p) = proj.row(0).segment(k * p, p).template cast<double>();
  }
  Eigen::MatrixXd result = values.leftCols(horizon);
  result = denormalize(result, norm.stats);
  return result;
}

template <class S, class Window>
ForecastDistribution autoregress(std::span<const double> series, Index horizon, const ModelParams<S>& params,
                                 InferenceStats* stats, const ForecastOptions& options, Index window_steps,
                                 Window&& window) {
  if (horizon < 1) throw InputError("forecast: horizon must be >= 1");
  const ModelConfig& cfg = params.config;
  ForecastDistribution dist;
  dist.levels = cfg.quantiles;
  dist.values.resize(cfg.n_quantiles(), horizon);
  std::vector<double> context(series.begin(), series.end());
  ForwardCounters counters;
  Index done = 0, windows = 0;
  while (done < horizon) {
    const Index steps = std::min(window_steps, horizon - done);
    Eigen::MatrixXd block = window(std::span<const double>(context), steps, counters);
    if (options.monotone) monotone_rearrange(block);
    dist.values.middleCols(done, steps) = block;
    done += steps;
    ++windows;
    if (done < horizon) {
      const Eigen::VectorXd med = block.row(cfg.quantiles.median_index()).transpose();
      context.insert(context.end(), med.data(), med.data() + med.size());
    }
  }
  if (!dist.values.allFinite()) throw NumericError("forecast produced non-finite values");
  if (stats) {
    stats->passes += counters.passes;
    stats->blocks += counters.blocks;
    stats->windows += windows;
  }
  return dist;
}

} // namespace

template <class S>
ForecastDistribution forecast(std::span<const double> series, Index horizon, const ModelParams<S>& params,
                              InferenceStats* stats, const ForecastOptions& options) {
  const ModelConfig& cfg = params.config;
  const Index native = (cfg.stp_blocks + 1) * cfg.patch_len;
  return autoregress<S>(series, horizon, params, stats, options, native,
                        [&](std::span<const double> ctx, Index steps, ForwardCounters& c) {
                          return forecast_window<S>(ctx, steps, inference_depth(cfg, steps), params, c);
                        });
}

template <class S>
ForecastDistribution forecast_rolling_ntp(std::span<const double> series, Index horizon, const ModelParams<S>& params,
                                          InferenceStats* stats, const ForecastOptions& options) {
  return autoregress<S>(series, horizon, params, stats, options, params.config.patch_len,
                        [&](std::span<const double> ctx, Index steps, ForwardCounters& c) {
                          return forecast_window<S>(ctx, steps, 0, params, c);
                        });
}

MaseResult mase(std::span<const double> forecast, std::span<const double> actuals, std::span<const double> insample,
                Index season) {
  if (forecast.size() != actuals.size() || forecast.empty()) throw InputError("mase: horizon mismatch");
  if (season < 1 || Index(insample.size()) <= season) throw InputError("mase: in-sample length must exceed season");
  double num = 0.0;
  for (std::size_t t = 0; t < forecast.size(); ++t) num += std::abs(forecast[t] - actuals[t]);
  num /= double(forecast.size());
  double den = 0.0;
  for (std::size_t t = std::size_t(season); t < insample.size(); ++t)
    den += std::abs(insample[t] - insample[t - std::size_t(season)]);
  den /= double(insample.size() - std::size_t(season));
  MaseResult r;
  r.degenerate = !(den > 0.0);
  r.value = num / std::max(den, kMaseEps);
  return r;
}

double eval_crps_wql(const ForecastDistribution& dist, std::span<const double> actuals) {
  if (Index(actuals.size()) != dist.horizon()) throw InputError("eval_crps_wql: horizon mismatch");
  double total = 0.0;
  for (Index k = 0; k < dist.levels.size(); ++k) {
    const Eigen::VectorXd row = dist.values.row(k).transpose();
    total += wql(actuals, std::span<const double>(row.data(), std::size_t(row.size())), dist.levels.levels[std::size_t(k)]);
  }
  return total / double(dist.levels.size());
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(10);
  os << "{\n"
     << "  \"mase\": " << mase << ",\n"
     << "  \"crps_wql\": " << crps_wql << ",\n"
     << "  \"passes_serial\": " << passes_serial << ",\n"
     << "  \"passes_rolling\": " << passes_rolling << ",\n"
     << "  \"wall_ms_p50\": " << wall_ms_p50 << ",\n"
     << "  \"mase_rolling\": " << mase_rolling << ",\n"
     << "  \"crps_wql_rolling\": " << crps_wql_rolling << ",\n"
     << "  \"blocks_serial\": " << blocks_serial << ",\n"
     << "  \"blocks_rolling\": " << blocks_rolling << ",\n"
     << "  \"wall_ms_rolling_p50\": " << wall_ms_rolling_p50 << ",\n"
     << "  \"series\": " << mase_per_series.size() << ",\n"
     << "  \"degenerate\": " << degenerate << "\n"
     << "}\n";
  return os.str();
}

template <class S>
EvalReport evaluate(const ModelParams<S>& params, const std::vector<std::vector<double>>& series, Index horizon,
                    Index season, const ForecastOptions& options) {
  if (series.empty()) throw InputError("evaluate: no series");
  EvalReport rep;
  std::vector<double> wall, wall_rolling;
  using clock = std::chrono::steady_clock;
  for (const auto& s : series) {
    if (Index(s.size()) <= horizon + season) throw InputError("evaluate: series too short for the horizon");
    const std::span<const double> all(s);
    const auto insample = all.first(s.size() - std::size_t(horizon));
    const auto actual = all.last(std::size_t(horizon));

    InferenceStats st, st_roll;
    auto t0 = clock::now();
    const auto dist = forecast<S>(insample, horizon, params, &st, options);
    auto t1 = clock::now();
    const auto roll = forecast_rolling_ntp<S>(insample, horizon, params, &st_roll, options);
    auto t2 = clock::now();
    wall.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    wall_rolling.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());

    const Eigen::VectorXd med = dist.median(), med_roll = roll.median();
    const auto m = mase(std::span<const double>(med.data(), std::size_t(horizon)), actual, insample, season);
    const auto m_roll = mase(std::span<const double>(med_roll.data(), std::size_t(horizon)), actual, insample, season);
    rep.mase_per_series.push_back(m.value);
    rep.degenerate += m.degenerate ? 1 : 0;
    rep.mase += m.value;
    rep.mase_rolling += m_roll.value;
    rep.crps_wql += eval_crps_wql(dist, actual);
    rep.crps_wql_rolling += eval_crps_wql(roll, actual);
    rep.passes_serial += st.passes;
    rep.passes_rolling += st_roll.passes;
    rep.blocks_serial += st.blocks;
    rep.blocks_rolling += st_roll.blocks;
  }
  const double n = double(series.size());
  rep.mase /= n;
  rep.mase_rolling /= n;
  rep.crps_wql /= n;
  rep.crps_wql_rolling /= n;
  rep.wall_ms_p50 = median(wall);
  rep.wall_ms_rolling_p50 = median(wall_rolling);
  return rep;
}

template <class S>
std::vector<BenchRow> bench_inference(const ModelParams<S>& params, const std::vector<Index>& horizons,
                                      Index repetitions, std::uint64_t seed) {
  if (repetitions < 1) throw ConfigError("bench: repetitions must be >= 1");
  const ModelConfig& cfg = params.config;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<double> x(static_cast<std::size_t>(cfg.max_patches * cfg.patch_len));
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = std::sin(2.0 * std::numbers::pi * double(t) / 24.0) + noise(rng);

  using clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  for (Index f : horizons) {
    BenchRow row;
    row.horizon = f;
    std::vector<double> ws, wr;
    for (Index r = 0; r < repetitions; ++r) {
      InferenceStats s1, s2;
      auto t0 = clock::now();
      forecast<S>(x, f, params, &s1);
      auto t1 = clock::now();
      forecast_rolling_ntp<S>(x, f, params, &s2);
      auto t2 = clock::now();
      ws.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      wr.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
      row.blocks_serial = s1.blocks;
      row.blocks_rolling = s2.blocks;
      row.passes_serial = s1.passes;
      row.passes_rolling = s2.passes;
    }
    row.wall_ms_serial = median(ws);
    row.wall_ms_rolling = median(wr);
    rows.push_back(row);
  }
  return rows;
}

#define SF_INSTANTIATE(S)                                                                                      \
  template ForecastDistribution forecast<S>(std::span<const double>, Index, const ModelParams<S>&,              \
                                            InferenceStats*, const ForecastOptions&);                          \
  template ForecastDistribution forecast_rolling_ntp<S>(std::span<const double>, Index, const ModelParams<S>&,  \
                                                        InferenceStats*, const ForecastOptions&);              \
  template EvalReport evaluate<S>(const ModelParams<S>&, const std::vector<std::vector<double>>&, Index, Index,  \
                                  const ForecastOptions&);                                                     \
  template std::vector<BenchRow> bench_inference<S>(const ModelParams<S>&, const std::vector<Index>&, Index,     \
                                                    std::uint64_t);

SF_INSTANTIATE(float)
SF_INSTANTIATE(double)
#undef SF_INSTANTIATE

} // namespace sf
