#include "sf/objectives.hpp"

#include <cmath>

namespace sf {

std::string to_string(Stage s) { return s == Stage::Pretrain ? "pretrain" : "posttrain"; }

template <class S>
Mat<S> patch_project(const MatRef<S>& h, const HeadParams<S>& head) {
  Mat<S> out = h * head.w;
  out.rowwise() += head.b.transpose();
  return out;
}

template <class S>
Mat<S> as_quantile_patch(const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>& row, Index n_quantiles) {
  const Index p = row.size() / n_quantiles;
  Mat<S> out(n_quantiles, p);
  for (Index k = 0; k < n_quantiles; ++k) out.row(k) = row.segment(k * p, p);
  return out;
}

double pinball(double x, double xhat, double q) { return x < xhat ? (1.0 - q) * (xhat - x) : q * (x - xhat); }

double pinball_grad(double x, double xhat, double q) { return x < xhat ? 1.0 - q : -q; }

double wql(std::span<const double> x, std::span<const double> xhat, double q) {
  if (x.size() != xhat.size()) throw InputError("wql: length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    num += pinball(x[t], xhat[t], q);
    den += std::abs(x[t]);
  }
  return 2.0 * num / std::max(den, kWqlEps);
}

template <class S>
double pred_loss(const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>& target,
                 const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>& mask, const MatRef<S>& preds,
                 const QuantileGrid& grid, Mat<S>* dpreds, double scale) {
  const Index q_count = grid.size();
  const Index p = target.size();
  if (preds.rows() != q_count || preds.cols() != p) throw InputError("pred_loss: prediction shape mismatch");
  double den = 0.0;
  for (Index t = 0; t < p; ++t)
    if (mask(t) != S(0)) den += std::abs(double(target(t)));
  const double inv = 2.0 / (std::max(den, kWqlEps) * double(q_count));
  double total = 0.0;
  for (Index k = 0; k < q_count; ++k) {
    const double q = grid.levels[std::size_t(k)];
    for (Index t = 0; t < p; ++t) {
      if (mask(t) == S(0)) continue;
      const double x = double(target(t)), xhat = double(preds(k, t));
      total += pinball(x, xhat, q);
      if (dpreds) (*dpreds)(k, t) += S(scale * inv * pinball_grad(x, xhat, q));
    }
  }
  return total * inv;
}

template <class S>
double offset_pred_loss(const MatRef<S>& h, const HeadParams<S>& head, const Patches<S>& targets, Index offset,
                        const QuantileGrid& grid, Mat<S>* dh, HeadParams<S>* dhead, double scale) {
  const Index n = h.rows();
  const Index q_count = grid.size();
  const Index p = targets.values.cols();
  if (head.w.cols() != q_count * p) throw InputError("offset_pred_loss: head width does not match Q * P");
  if (n + offset > targets.count())
    throw InputError("offset_pred_loss: targets end at patch " + std::to_string(targets.count()) + ", need " +
                     std::to_string(n + offset));
  const Mat<S> proj = patch_project<S>(h, head);
  const bool grads = dh || dhead;
  Mat<S> dproj = grads ? Mat<S>::Zero(n, q_count * p) : Mat<S>();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Mat<S> preds = as_quantile_patch<S>(proj.row(i), q_count);
    Mat<S> dpreds;
    if (grads) dpreds = Mat<S>::Zero(q_count, p);
    total += pred_loss<S>(targets.values.row(i + offset), targets.masks.row(i + offset), preds, grid,
                          grads ? &dpreds : nullptr, scale);
    if (grads)
      for (Index k = 0; k < q_count; ++k) dproj.row(i).segment(k * p, p) = dpreds.row(k);
  }
  if (dhead) {
    dhead->w.noalias() += h.transpose() * dproj;
    dhead->b += dproj.colwise().sum().transpose();
  }
  if (dh) dh->noalias() += dproj * head.w.transpose();
  return total;
}

std::vector<double> stp_weights(Index horizon, Stage stage) {
  std::vector<double> w(static_cast<std::size_t>(std::max<Index>(horizon, 0)), 1.0);
  if (stage == Stage::Posttrain)
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = 1.0 / std::sqrt(double(j + 1));
  return w;
}

template <class S>
double ntp_loss(const SequenceOutput<S>& trace, const Patches<S>& targets, const HeadParams<S>& head,
                const QuantileGrid& grid) {
  return offset_pred_loss<S>(trace.depth(0), head, targets, 1, grid);
}

template <class S>
double stp_loss(const SequenceOutput<S>& trace, const Patches<S>& targets, const HeadParams<S>& head,
                const QuantileGrid& grid, const std::vector<double>& weights) {
  return sequence_loss<S>(trace, targets, head, grid, weights).stp;
}

double stage_loss(double ntp, double stp, double aux, double alpha) { return ntp + stp + alpha * aux; }

template <class S>
LossParts sequence_loss(const SequenceOutput<S>& trace, const Patches<S>& targets, const HeadParams<S>& head,
                        const QuantileGrid& grid, const std::vector<double>& weights, std::vector<Mat<S>>* d_depth,
                        HeadParams<S>* dhead, double scale) {
  const Index horizon = Index(weights.size());
  if (trace.depth_count() - 1 < horizon)
    throw ContractViolation("sequence_loss: trace depth " + std::to_string(trace.depth_count() - 1) +
                            " is below the horizon " + std::to_string(horizon));
  LossParts parts;
  if (d_depth) {
    d_depth->assign(std::size_t(trace.depth_count()), Mat<S>());
    for (Index j = 0; j < trace.depth_count(); ++j)
      (*d_depth)[std::size_t(j)] = Mat<S>::Zero(trace.depth(j).rows(), trace.depth(j).cols());
  }
  const Index n = trace.depth(0).rows();
  for (Index j = 0; j <= horizon; ++j) {
    const double w = j == 0 ? 1.0 : weights[std::size_t(j - 1)] / double(horizon);
    const double v = offset_pred_loss<S>(trace.depth(j), head, targets, j + 1, grid,
                                         d_depth ? &(*d_depth)[std::size_t(j)] : nullptr, dhead, scale * w);
    parts.per_depth.push_back(v);
    parts.per_depth_tokens.push_back(double(n));
    if (j == 0)
      parts.ntp = v;
    else
      parts.stp += w * v;
  }
  return parts;
}

#define SF_INSTANTIATE(S)                                                                                      \
  template Mat<S> patch_project<S>(const MatRef<S>&, const HeadParams<S>&);                                     \
  template Mat<S> as_quantile_patch<S>(const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>&, Index);    \
  template double pred_loss<S>(const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>&,                    \
                               const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>&, const MatRef<S>&,  \
                               const QuantileGrid&, Mat<S>*, double);                                           \
  template double offset_pred_loss<S>(const MatRef<S>&, const HeadParams<S>&, const Patches<S>&, Index,         \
                                      const QuantileGrid&, Mat<S>*, HeadParams<S>*, double);                    \
  template double ntp_loss<S>(const SequenceOutput<S>&, const Patches<S>&, const HeadParams<S>&,                \
                              const QuantileGrid&);                                                             \
  template double stp_loss<S>(const SequenceOutput<S>&, const Patches<S>&, const HeadParams<S>&,                \
                              const QuantileGrid&, const std::vector<double>&);                                 \
  template LossParts sequence_loss<S>(const SequenceOutput<S>&, const Patches<S>&, const HeadParams<S>&,        \
                                      const QuantileGrid&, const std::vector<double>&, std::vector<Mat<S>>*,    \
                                      HeadParams<S>*, double);

SF_INSTANTIATE(float)
SF_INSTANTIATE(double)
#undef SF_INSTANTIATE

} // namespace sf
