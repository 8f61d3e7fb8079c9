#pragma once

// Quantile head and the training losses built on it. All losses operate on
// normalized values.

#include <span>
#include <vector>

#include "sf/backbone.hpp"

namespace sf {

inline constexpr double kWqlEps = 1e-8;

enum class Stage { Pretrain, Posttrain };

std::string to_string(Stage s);

/// h (rows x D) -> rows x (Q * P); column k * P + t is level k at step t.
template <class S>
Mat<S> patch_project(const MatRef<S>& h, const HeadParams<S>& head);

/// One row of patch_project reshaped to Q x P.
template <class S>
Mat<S> as_quantile_patch(const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>& row, Index n_quantiles);

double pinball(double x, double xhat, double q);

/// d pinball / d xhat (the subgradient -q is used at x == xhat).
double pinball_grad(double x, double xhat, double q);

double wql(std::span<const double> x, std::span<const double> xhat, double q);

/// Mean over levels of wQL on one target patch. `preds` is Q x P; positions
/// with mask 0 are left out of both sums. When `dpreds` is given it receives
/// scale * d loss / d preds.
template <class S>
double pred_loss(const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>& target,
                 const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>& mask, const MatRef<S>& preds,
                 const QuantileGrid& grid, Mat<S>* dpreds = nullptr, double scale = 1.0);

/// sum_i pred_loss(target row i + offset, head(h row i)) over all rows of h.
/// Optionally accumulates scale * gradients into dh and dhead.
template <class S>
double offset_pred_loss(const MatRef<S>& h, const HeadParams<S>& head, const Patches<S>& targets, Index offset,
                        const QuantileGrid& grid, Mat<S>* dh = nullptr, HeadParams<S>* dhead = nullptr,
                        double scale = 1.0);

/// Per-depth weights of the serial objective: all ones for pre-training,
/// 1/sqrt(j) for post-training.
std::vector<double> stp_weights(Index horizon, Stage stage);

/// Next-token loss of the main stack output; targets hold N+1 patches.
template <class S>
double ntp_loss(const SequenceOutput<S>& trace, const Patches<S>& targets, const HeadParams<S>& head,
                const QuantileGrid& grid);

/// (1/H) sum_j w_j sum_i pred_loss(x_{i+j+1}, head(h_i^{L+j})), H = weights.size().
template <class S>
double stp_loss(const SequenceOutput<S>& trace, const Patches<S>& targets, const HeadParams<S>& head,
                const QuantileGrid& grid, const std::vector<double>& weights);

double stage_loss(double ntp, double stp, double aux, double alpha);

struct LossParts {
  double ntp = 0.0;
  double stp = 0.0;  // weighted and divided by H
  std::vector<double> per_depth;  // unweighted sums, depth 0 = NTP
  std::vector<double> per_depth_tokens;
};

/// NTP + weighted STP of one sequence with optional gradients wrt each depth
/// output (d_depth[j], sized like trace.depth(j)) and the head.
template <class S>
LossParts sequence_loss(const SequenceOutput<S>& trace, const Patches<S>& targets, const HeadParams<S>& head,
                        const QuantileGrid& grid, const std::vector<double>& weights,
                        std::vector<Mat<S>>* d_depth = nullptr, HeadParams<S>* dhead = nullptr,
                        double scale = 1.0);

} // namespace sf
