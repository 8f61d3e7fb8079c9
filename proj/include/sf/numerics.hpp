#pragma once

// Dense layer primitives with hand-written backward passes, plus a
// central-difference gradient oracle used to verify them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sf/error.hpp"

namespace sf {

using Index = Eigen::Index;

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using MatRef = Eigen::Ref<const Mat<S>>;
template <class S>
using VecRef = Eigen::Ref<const Vec<S>>;

/// Denominator floor for l2_normalize.
inline constexpr double kL2Eps = 1e-12;

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

/// Throws NumericError naming `what` when `x` holds NaN or Inf.
template <class Derived>
void require_finite(const Eigen::DenseBase<Derived>& x, std::string_view what) {
  if (!x.allFinite()) throw NumericError("non-finite values in " + std::string(what));
}

// ---------------------------------------------------------------------------
// RMSNorm over the last axis (rows of x).

/// y = gain * x / sqrt(mean(x^2) + eps). `inv_rms`, when given, receives
/// 1/sqrt(mean(x^2)+eps) per row for the backward pass.
template <class S>
Mat<S> rmsnorm(const MatRef<S>& x, const VecRef<S>& gain, S eps, Vec<S>* inv_rms = nullptr);

/// Returns dx; accumulates into dgain.
template <class S>
Mat<S> rmsnorm_backward(const MatRef<S>& x, const VecRef<S>& gain, const VecRef<S>& inv_rms,
                        const MatRef<S>& dy, Vec<S>& dgain);

// ---------------------------------------------------------------------------
// Row-wise l2 normalization with a guarded denominator max(|v|, kL2Eps).

template <class S>
Mat<S> l2_normalize(const MatRef<S>& v, Vec<S>* norms = nullptr);

/// `y` is the forward output, `norms` the guarded denominators.
template <class S>
Mat<S> l2_normalize_backward(const MatRef<S>& y, const VecRef<S>& norms, const MatRef<S>& dy);

// ---------------------------------------------------------------------------
// Rotary position embedding.

/// Per-position cos/sin of angle position * theta_base^(-2m/d), m < d/2.
template <class S>
struct RopeTable {
  Mat<S> cos;  // positions x d/2
  Mat<S> sin;

  /// Rows are positions first..first+count-1, each scaled by position_scale.
  static RopeTable build(Index count, Index dim, double theta_base, double position_scale = 1.0,
                         Index first = 0);
};

/// Rotates pairs (2m, 2m+1) of every row r by table row r. `inverse`
/// applies the transpose rotation (used for the backward pass).
template <class S>
Mat<S> rotary_apply(const MatRef<S>& v, const RopeTable<S>& table, bool inverse = false);

/// Single-vector form: rotates v as a token at `position`.
template <class S>
Vec<S> rotary_rotate(const VecRef<S>& v, double position, double theta_base);

// ---------------------------------------------------------------------------
// Softmax.

/// Row softmax of tau * scores. With `causal`, entries j > i are exactly 0
/// and never enter the row normalizer.
template <class S>
Mat<S> scaled_masked_softmax(const MatRef<S>& scores, S tau, bool causal);

/// Gradient w.r.t. the softmax logits given probabilities p and dL/dp.
template <class S>
Mat<S> softmax_backward(const MatRef<S>& p, const MatRef<S>& dp);

/// Plain row softmax (no mask, no temperature).
template <class S>
Mat<S> softmax_rows(const MatRef<S>& logits);

// ---------------------------------------------------------------------------
// Activations.

template <class S>
inline S sigmoid(S x) {
  return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

template <class S>
inline S softplus(S x) {
  return x > S(20) ? x : std::log1p(std::exp(x));
}

/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) {
  return y > 20.0 ? y : std::log(std::expm1(y));
}

template <class S>
Mat<S> silu(const MatRef<S>& x);

/// d silu(x) / dx evaluated elementwise, multiplied into dy.
template <class S>
Mat<S> silu_backward(const MatRef<S>& x, const MatRef<S>& dy);

// ---------------------------------------------------------------------------
// Finite-difference oracle.
//
// A parameter set is any type with a `for_each_tensor(P&, f)` overload
// (found by ADL) that calls f(name, tensor) for every Eigen tensor it owns.

inline void for_each_tensor(Vec<double>& v, auto&& f) {
  f(std::string_view("theta"), v);
}
inline void for_each_tensor(const Vec<double>& v, auto&& f) {
  f(std::string_view("theta"), v);
}

struct GradCheckReport {
  std::string param_name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t coords_checked = 0;
  bool passed = true;
};

/// Selects the coordinates visited by the oracle; all by default.
using CoordinateFilter = std::function<bool(std::string_view tensor, Index index)>;

/// Central differences (f(theta+eps) - f(theta-eps)) / 2eps for every
/// selected coordinate; unselected coordinates are left at zero. Throws
/// ContractViolation if two evaluations at the same point disagree.
template <class Params>
Params finite_diff_gradient(const std::function<double(const Params&)>& loss, const Params& params,
                            double epsilon, const CoordinateFilter& filter = {}) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-4))
    throw ConfigError("finite_diff_gradient: epsilon outside [1e-6, 1e-4]");
  const double base_a = loss(params);
  const double base_b = loss(params);
  if (base_a != base_b)
    throw ContractViolation("finite_diff_gradient: loss function is not deterministic");

  Params probe = params;
  Params grad = params;
  for_each_tensor(grad, [](std::string_view, auto& t) { t.setZero(); });

  // Collect raw pointers once so that probe and grad walk in lockstep.
  struct Slot {
    std::string name;
    double* probe;
    double* grad;
    Index size;
  };
  std::vector<Slot> slots;
  for_each_tensor(probe, [&](std::string_view name, auto& t) {
    slots.push_back({std::string(name), t.data(), nullptr, t.size()});
  });
  std::size_t k = 0;
  for_each_tensor(grad, [&](std::string_view, auto& t) { slots[k++].grad = t.data(); });

  for (const auto& slot : slots) {
    for (Index i = 0; i < slot.size; ++i) {
      if (filter && !filter(slot.name, i)) continue;
      const double saved = slot.probe[i];
      slot.probe[i] = saved + epsilon;
      const double up = loss(probe);
      slot.probe[i] = saved - epsilon;
      const double down = loss(probe);
      slot.probe[i] = saved;
      slot.grad[i] = (up - down) / (2.0 * epsilon);
    }
  }
  return grad;
}

/// Relative error |a-n| / max(|a|, |n|, abs_floor); a coordinate passes when
/// this is below rel_tol or |a-n| is below abs_floor.
struct GradCheckTolerance {
  double rel_tol = 1e-4;
  double abs_floor = 1e-8;
};

/// Compares analytic and numeric gradients tensor by tensor, grouping the
/// results with `family_of(name)`.
template <class Params>
std::vector<GradCheckReport> compare_gradients(
    const Params& analytic, const Params& numeric,
    const std::function<std::string(std::string_view)>& family_of, GradCheckTolerance tol,
    const CoordinateFilter& filter = {}) {
  struct View {
    std::string name;
    const double* data;
    Index size;
  };
  std::vector<View> a, n;
  for_each_tensor(analytic, [&](std::string_view name, const auto& t) {
    a.push_back({std::string(name), t.data(), t.size()});
  });
  for_each_tensor(numeric, [&](std::string_view name, const auto& t) {
    n.push_back({std::string(name), t.data(), t.size()});
  });
  if (a.size() != n.size()) throw ConfigError("compare_gradients: parameter sets differ");

  std::vector<GradCheckReport> reports;
  auto report_for = [&](const std::string& family) -> GradCheckReport& {
    for (auto& r : reports)
      if (r.param_name == family) return r;
    reports.push_back({family});
    return reports.back();
  };
  for (std::size_t s = 0; s < a.size(); ++s) {
    GradCheckReport& r = report_for(family_of(a[s].name));
    for (Index i = 0; i < a[s].size; ++i) {
      if (filter && !filter(a[s].name, i)) continue;
      const double ga = a[s].data[i];
      const double gn = n[s].data[i];
      const double abs_err = std::abs(ga - gn);
      const double rel_err = abs_err / std::max({std::abs(ga), std::abs(gn), tol.abs_floor});
      ++r.coords_checked;
      r.max_abs_err = std::max(r.max_abs_err, abs_err);
      // Coordinates under the absolute floor are agreement by definition.
      if (abs_err >= tol.abs_floor) r.max_rel_err = std::max(r.max_rel_err, rel_err);
    }
  }
  for (auto& r : reports) r.passed = r.max_rel_err < tol.rel_tol || r.max_abs_err < tol.abs_floor;
  return reports;
}

} // namespace sf
