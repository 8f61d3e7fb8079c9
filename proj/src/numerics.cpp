#include "sf/numerics.hpp"

namespace sf {

template <class S>
Mat<S> rmsnorm(const MatRef<S>& x, const VecRef<S>& gain, S eps, Vec<S>* inv_rms) {
  const Index d = x.cols();
  if (d < 1 || gain.size() != d) throw ConfigError("rmsnorm: gain size does not match last axis");
  if (eps < S(0)) throw ConfigError("rmsnorm: eps must be non-negative");
  require_finite(x, "rmsnorm input");
  Mat<S> y(x.rows(), d);
  if (inv_rms) inv_rms->resize(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const S ms = x.row(r).squaredNorm() / S(d);
    const S denom = std::sqrt(ms + eps);
    if (!(denom > S(0))) throw NumericError("rmsnorm: zero row with eps = 0");
    const S inv = S(1) / denom;
    y.row(r) = (x.row(r) * inv).cwiseProduct(gain.transpose());
    if (inv_rms) (*inv_rms)(r) = inv;
  }
  return y;
}

template <class S>
Mat<S> rmsnorm_backward(const MatRef<S>& x, const VecRef<S>& gain, const VecRef<S>& inv_rms,
                        const MatRef<S>& dy, Vec<S>& dgain) {
  const Index d = x.cols();
  Mat<S> dx(x.rows(), d);
  for (Index r = 0; r < x.rows(); ++r) {
    const S inv = inv_rms(r);
    dgain.noalias() += (dy.row(r).cwiseProduct(x.row(r)) * inv).transpose();
    const auto gdy = dy.row(r).cwiseProduct(gain.transpose());
    const S dot = gdy.dot(x.row(r));
    dx.row(r) = gdy * inv - x.row(r) * (dot * inv * inv * inv / S(d));
  }
  return dx;
}

template <class S>
Mat<S> l2_normalize(const MatRef<S>& v, Vec<S>* norms) {
  Mat<S> y(v.rows(), v.cols());
  if (norms) norms->resize(v.rows());
  for (Index r = 0; r < v.rows(); ++r) {
    const S n = std::max(v.row(r).norm(), S(kL2Eps));
    y.row(r) = v.row(r) / n;
    if (norms) (*norms)(r) = n;
  }
  return y;
}

template <class S>
Mat<S> l2_normalize_backward(const MatRef<S>& y, const VecRef<S>& norms, const MatRef<S>& dy) {
  Mat<S> dv(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const S n = norms(r);
    if (n > S(kL2Eps))
      dv.row(r) = (dy.row(r) - y.row(r) * y.row(r).dot(dy.row(r))) / n;
    else
      dv.row(r) = dy.row(r) / n;  // guarded branch: denominator is constant
  }
  return dv;
}

template <class S>
RopeTable<S> RopeTable<S>::build(Index count, Index dim, double theta_base, double position_scale,
                                 Index first) {
  if (dim % 2 != 0) throw ConfigError("rotary embedding requires an even head dimension");
  if (!(theta_base > 1.0)) throw ConfigError("rotary embedding requires theta_base > 1");
  RopeTable t;
  const Index half = dim / 2;
  t.cos.resize(count, half);
  t.sin.resize(count, half);
  for (Index m = 0; m < half; ++m) {
    const double freq = std::pow(theta_base, -2.0 * double(m) / double(dim));
    for (Index p = 0; p < count; ++p) {
      const double angle = double(first + p) * position_scale * freq;
      t.cos(p, m) = S(std::cos(angle));
      t.sin(p, m) = S(std::sin(angle));
    }
  }
  return t;
}

template <class S>
Mat<S> rotary_apply(const MatRef<S>& v, const RopeTable<S>& table, bool inverse) {
  const Index half = v.cols() / 2;
  if (v.cols() % 2 != 0) throw ConfigError("rotary embedding requires an even dimension");
  if (table.cos.rows() < v.rows() || table.cos.cols() != half)
    throw ConfigError("rotary table does not cover the input");
  const S sign = inverse ? S(-1) : S(1);
  Mat<S> out(v.rows(), v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    for (Index m = 0; m < half; ++m) {
      const S c = table.cos(r, m);
      const S s = sign * table.sin(r, m);
      const S a = v(r, 2 * m);
      const S b = v(r, 2 * m + 1);
      out(r, 2 * m) = a * c - b * s;
      out(r, 2 * m + 1) = a * s + b * c;
    }
  }
  return out;
}

template <class S>
Vec<S> rotary_rotate(const VecRef<S>& v, double position, double theta_base) {
  if (position < 0) throw ConfigError("rotary_rotate: negative position");
  auto table = RopeTable<S>::build(1, v.size(), theta_base, position, 1);
  Mat<S> row = v.transpose();
  return rotary_apply<S>(row, table).transpose();
}

template <class S>
Mat<S> scaled_masked_softmax(const MatRef<S>& scores, S tau, bool causal) {
  if (!(tau > S(0))) throw ConfigError("softmax temperature must be positive");
  const Index n = scores.rows();
  Mat<S> p = Mat<S>::Zero(n, scores.cols());
  for (Index i = 0; i < n; ++i) {
    const Index width = causal ? std::min(i + 1, scores.cols()) : scores.cols();
    auto logits = (scores.row(i).head(width) * tau).eval();
    const S mx = logits.maxCoeff();
    auto e = (logits.array() - mx).exp().eval();
    p.row(i).head(width) = e / e.sum();
  }
  return p;
}

template <class S>
Mat<S> softmax_backward(const MatRef<S>& p, const MatRef<S>& dp) {
  Mat<S> ds(p.rows(), p.cols());
  for (Index i = 0; i < p.rows(); ++i) {
    const S dot = p.row(i).dot(dp.row(i));
    ds.row(i) = p.row(i).cwiseProduct((dp.row(i).array() - dot).matrix());
  }
  return ds;
}

template <class S>
Mat<S> softmax_rows(const MatRef<S>& logits) {
  Mat<S> p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const S mx = logits.row(i).maxCoeff();
    auto e = (logits.row(i).array() - mx).exp().eval();
    p.row(i) = e / e.sum();
  }
  return p;
}

template <class S>
Mat<S> silu(const MatRef<S>& x) {
  return x.unaryExpr([](S v) { return v * sigmoid(v); });
}

template <class S>
Mat<S> silu_backward(const MatRef<S>& x, const MatRef<S>& dy) {
  return x.binaryExpr(dy, [](S v, S g) {
    const S s = sigmoid(v);
    return g * (s * (S(1) + v * (S(1) - s)));
  });
}

#define SF_INSTANTIATE(S)                                                                        \
  template Mat<S> rmsnorm<S>(const MatRef<S>&, const VecRef<S>&, S, Vec<S>*);                    \
  template Mat<S> rmsnorm_backward<S>(const MatRef<S>&, const VecRef<S>&, const VecRef<S>&,      \
                                      const MatRef<S>&, Vec<S>&);                                \
  template Mat<S> l2_normalize<S>(const MatRef<S>&, Vec<S>*);                                    \
  template Mat<S> l2_normalize_backward<S>(const MatRef<S>&, const VecRef<S>&, const MatRef<S>&); \
  template struct RopeTable<S>;                                                                  \
  template Mat<S> rotary_apply<S>(const MatRef<S>&, const RopeTable<S>&, bool);                  \
  template Vec<S> rotary_rotate<S>(const VecRef<S>&, double, double);                            \
  template Mat<S> scaled_masked_softmax<S>(const MatRef<S>&, S, bool);                           \
  template Mat<S> softmax_backward<S>(const MatRef<S>&, const MatRef<S>&);                       \
  template Mat<S> softmax_rows<S>(const MatRef<S>&);                                             \
  template Mat<S> silu<S>(const MatRef<S>&);                                                     \
  template Mat<S> silu_backward<S>(const MatRef<S>&, const MatRef<S>&);

SF_INSTANTIATE(float)
SF_INSTANTIATE(double)
#undef SF_INSTANTIATE

} // namespace sf
