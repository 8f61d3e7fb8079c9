#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "sf/objectives.hpp"
#include "sf/trainer.hpp"

using namespace sf;

namespace {

using Row = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// Pinball loss written out from the piecewise definition.
double naive_pinball(double x, double xhat, double q) {
  const double e = x - xhat;
  return e >= 0 ? q * e : (q - 1.0) * e;
}

} // namespace

TEST_CASE("pinball loss") {
  CHECK(pinball(1.7, 1.7, 0.3) == 0.0);
  CHECK(pinball(2.0, 1.0, 0.5) == 0.5);
  CHECK(pinball(1.0, 2.0, 0.5) == 0.5);
  CHECK(pinball(0.0, 1.0, 0.9) == doctest::Approx(0.1).epsilon(1e-15));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng), xhat = u(rng), q = (u(rng) + 3) / 6;
    CHECK(pinball(x, xhat, q) == doctest::Approx(naive_pinball(x, xhat, q)).epsilon(1e-14));
    CHECK(pinball(x, xhat, q) >= 0.0);
  }
}

TEST_CASE("weighted quantile loss") {
  const std::vector<double> x{1, 1}, zero{0, 0};
  CHECK(wql(x, x, 0.2) == 0.0);
  CHECK(wql(x, zero, 0.5) == 1.0);
  const std::vector<double> off{0.3, -0.2};
  const double guarded = wql(zero, off, 0.5);
  CHECK(std::isfinite(guarded));
  CHECK(guarded == doctest::Approx(2.0 * 0.25 / kWqlEps));
}

TEST_CASE("pred_loss over quantile levels") {
  QuantileGrid grid;
  const Index p = 6, q = grid.size();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  Row target(p), mask = Row::Ones(p);
  for (Index t = 0; t < p; ++t) target(t) = n(rng);
  Mat<double> preds(q, p);
  for (Index k = 0; k < q; ++k) preds.row(k) = target;
  CHECK(pred_loss<double>(target, mask, preds, grid) == 0.0);

  for (Index i = 0; i < preds.size(); ++i) preds.data()[i] = n(rng);
  double num = 0, den = 0;
  for (Index t = 0; t < p; ++t) den += std::abs(target(t));
  for (Index k = 0; k < q; ++k)
    for (Index t = 0; t < p; ++t) num += naive_pinball(target(t), preds(k, t), grid.levels[std::size_t(k)]);
  CHECK(pred_loss<double>(target, mask, preds, grid) == doctest::Approx(2.0 * num / den / double(q)).epsilon(1e-13));

  QuantileGrid median;
  median.levels = {0.5};
  Mat<double> one = preds.topRows(1);
  double abs_err = 0;
  for (Index t = 0; t < p; ++t) abs_err += std::abs(target(t) - one(0, t));
  CHECK(pred_loss<double>(target, mask, one, median) == doctest::Approx(abs_err / den).epsilon(1e-13));

  // Masked positions contribute nothing.
  Row masked = mask;
  masked(0) = 0;
  Mat<double> moved = preds;
  moved.col(0).array() += 50.0;
  CHECK(pred_loss<double>(target, masked, moved, grid) == pred_loss<double>(target, masked, preds, grid));
}

TEST_CASE("head shape at the large configuration") {
  const auto config = ModelConfig::large();
  HeadParams<float> head{Mat<float>::Zero(config.dim, config.n_quantiles() * config.patch_len),
                         Vec<float>::Zero(config.n_quantiles() * config.patch_len)};
  Mat<float> h = Mat<float>::Random(3, config.dim);
  Mat<float> proj = patch_project<float>(h, head);
  Mat<float> patch = as_quantile_patch<float>(proj.row(0), config.n_quantiles());
  CHECK(patch.rows() == 9);
  CHECK(patch.cols() == 16);
  CHECK(patch.isZero(0.0f));
}

TEST_CASE("serial loss weights") {
  const auto pre = stp_weights(4, Stage::Pretrain);
  CHECK(pre == std::vector<double>{1, 1, 1, 1});
  const auto post = stp_weights(16, Stage::Posttrain);
  const double expect[] = {1.0, 0.70711, 0.57735, 0.5};
  for (int j = 0; j < 4; ++j) CHECK(post[std::size_t(j)] == doctest::Approx(expect[j]).epsilon(1e-5));
  for (std::size_t j = 0; j < post.size(); ++j) CHECK(post[j] == 1.0 / std::sqrt(double(j + 1)));
  CHECK(post.back() == 0.25);
}

TEST_CASE("stage loss arithmetic") {
  CHECK(stage_loss(1.0, 2.0, 1.0, 0.01) == doctest::Approx(3.01).epsilon(1e-15));
  CHECK(stage_loss(1.0, 2.0, 7.0, 0.0) == 3.0);
}

TEST_CASE("sequence losses against a direct recomputation") {
  auto config = ModelConfig::tiny_reference();
  auto params = ModelParams<double>::init(config, 3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  const Index ctx = config.max_patches, h = config.stp_blocks;
  std::vector<double> window(static_cast<std::size_t>((ctx + h + 1) * config.patch_len));
  for (std::size_t t = 0; t < window.size(); ++t) window[t] = std::sin(0.4 * double(t)) + 0.1 * n(rng);
  const auto targets = prepare_window<double>(window, ctx, config.patch_len);
  const auto trace = forward_sequence(params, targets, ctx, h);

  auto direct = [&](Index depth) {
    double s = 0;
    const Mat<double> proj = patch_project<double>(trace.depth(depth), params.head);
    for (Index i = 0; i < ctx; ++i)
      s += pred_loss<double>(targets.values.row(i + depth + 1), targets.masks.row(i + depth + 1),
                             as_quantile_patch<double>(proj.row(i), config.n_quantiles()), config.quantiles);
    return s;
  };

  const double ntp = ntp_loss(trace, targets, params.head, config.quantiles);
  CHECK(ntp == doctest::Approx(direct(0)).epsilon(1e-13));
  CHECK(std::isfinite(ntp));
  CHECK(ntp > 0.0);

  for (Stage stage : {Stage::Pretrain, Stage::Posttrain}) {
    const auto w = stp_weights(h, stage);
    double expect = 0;
    for (Index j = 1; j <= h; ++j) expect += w[std::size_t(j - 1)] * direct(j);
    expect /= double(h);
    CHECK(stp_loss(trace, targets, params.head, config.quantiles, w) == doctest::Approx(expect).epsilon(1e-13));
    auto parts = sequence_loss(trace, targets, params.head, config.quantiles, w);
    CHECK(parts.ntp == doctest::Approx(ntp).epsilon(1e-13));
    CHECK(parts.per_depth.size() == std::size_t(h + 1));
  }

  // A single serial block is its weight times the loss at offset 2.
  const std::vector<double> one{0.7};
  CHECK(stp_loss(trace, targets, params.head, config.quantiles, one) ==
        doctest::Approx(0.7 * direct(1)).epsilon(1e-13));

  // A single perfectly predicted token costs nothing.
  HeadParams<double> exact{Mat<double>::Zero(config.dim, config.n_quantiles() * config.patch_len),
                           Vec<double>::Zero(config.n_quantiles() * config.patch_len)};
  for (Index k = 0; k < config.n_quantiles(); ++k)
    exact.b.segment(k * config.patch_len, config.patch_len) = targets.values.row(1).transpose();
  CHECK(offset_pred_loss<double>(trace.depth(0).topRows(1), exact, targets, 1, config.quantiles) == 0.0);
}

TEST_CASE("the stage switch changes only the serial weights") {
  TrainConfig a, b;
  a.stage = Stage::Pretrain;
  b.stage = Stage::Posttrain;
  std::istringstream ta(a.to_text()), tb(b.to_text());
  std::string la, lb;
  std::vector<std::string> differ;
  while (std::getline(ta, la) && std::getline(tb, lb))
    if (la != lb) differ.push_back(la.substr(0, la.find('=')));
  CHECK(differ == std::vector<std::string>{"stage"});
  CHECK(stp_weights(4, a.stage) != stp_weights(4, b.stage));
}
