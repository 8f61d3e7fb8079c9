#include "sf/tokenizer.hpp"

#include <cmath>

namespace sf {

Normalized renormalize(std::span<const double> series) {
  if (series.empty()) throw InputError("renormalize: empty series");
  double mu = 0.0;
  for (double v : series) {
    if (!std::isfinite(v)) throw InputError("renormalize: non-finite value in series");
    mu += v;
  }
  mu /= double(series.size());
  double var = 0.0;
  for (double v : series) var += (v - mu) * (v - mu);
  var /= double(series.size());
  Normalized out;
  out.stats = {mu, std::max(std::sqrt(var), kSigmaFloor)};
  out.values = apply_norm(series, out.stats);
  return out;
}

std::vector<double> apply_norm(std::span<const double> series, const NormStats& stats) {
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = (series[i] - stats.mu) / stats.sigma;
  return out;
}

double denormalize(double pred, const NormStats& stats) { return stats.sigma * pred + stats.mu; }

template <class S>
Patches<S> patchify(std::span<const double> series, Index patch_len) {
  if (patch_len < 1) throw ConfigError("patchify: patch length must be >= 1");
  if (series.empty()) throw InputError("patchify: empty series");
  const Index t = Index(series.size());
  const Index n = (t + patch_len - 1) / patch_len;
  const Index pad = n * patch_len - t;
  Patches<S> p;
  p.values = Mat<S>::Zero(n, patch_len);
  p.masks = Mat<S>::Zero(n, patch_len);
  for (Index k = 0; k < t; ++k) {
    const Index slot = k + pad;
    p.values(slot / patch_len, slot % patch_len) = S(series[std::size_t(k)]);
    p.masks(slot / patch_len, slot % patch_len) = S(1);
  }
  return p;
}

template <class S>
std::vector<double> unpatchify(const Patches<S>& patches) {
  std::vector<double> out;
  for (Index r = 0; r < patches.values.rows(); ++r)
    for (Index c = 0; c < patches.values.cols(); ++c)
      if (patches.masks(r, c) != S(0)) out.push_back(double(patches.values(r, c)));
  return out;
}

template <class S>
EmbedderParams<S> EmbedderParams<S>::zeros(Index patch_len, Index hidden, Index dim) {
  EmbedderParams p;
  p.skip_w = Mat<S>::Zero(2 * patch_len, dim);
  p.hidden_w = Mat<S>::Zero(2 * patch_len, hidden);
  p.hidden_b = Vec<S>::Zero(hidden);
  p.out_w = Mat<S>::Zero(hidden, dim);
  p.out_b = Vec<S>::Zero(dim);
  return p;
}

template <class S>
Mat<S> embed_patches(const Patches<S>& patches, const EmbedderParams<S>& params,
                     EmbedCache<S>* cache) {
  const Index p = params.patch_len();
  if (patches.values.cols() != p || patches.masks.cols() != p ||
      patches.masks.rows() != patches.values.rows())
    throw ConfigError("embed_patches: patch length does not match embedder");
  Mat<S> z(patches.values.rows(), 2 * p);
  z.leftCols(p) = patches.values.cwiseProduct(patches.masks);
  z.rightCols(p) = patches.masks;
  Mat<S> pre = z * params.hidden_w;
  pre.rowwise() += params.hidden_b.transpose();
  Mat<S> act = silu<S>(pre);
  Mat<S> h = z * params.skip_w;
  h.noalias() += act * params.out_w;
  h.rowwise() += params.out_b.transpose();
  if (cache) {
    cache->z = std::move(z);
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return h;
}

template <class S>
Mat<S> embed_backward(const EmbedderParams<S>& params, const EmbedCache<S>& cache, const MatRef<S>& dh,
                      EmbedderParams<S>& grads) {
  const Index p = params.patch_len();
  grads.skip_w.noalias() += cache.z.transpose() * dh;
  grads.out_w.noalias() += cache.act.transpose() * dh;
  grads.out_b.noalias() += dh.colwise().sum().transpose();
  Mat<S> dact = dh * params.out_w.transpose();
  Mat<S> dpre = silu_backward<S>(cache.pre, dact);
  grads.hidden_w.noalias() += cache.z.transpose() * dpre;
  grads.hidden_b.noalias() += dpre.colwise().sum().transpose();
  Mat<S> dz = dh * params.skip_w.transpose();
  dz.noalias() += dpre * params.hidden_w.transpose();
  // Values enter as value * mask.
  return dz.leftCols(p).cwiseProduct(cache.z.rightCols(p));
}

template <class S>
std::vector<Mat<S>> embed_patches(const PatchBatch<S>& batch, const EmbedderParams<S>& params) {
  std::vector<Mat<S>> out;
  out.reserve(batch.rows.size());
  for (const auto& row : batch.rows) out.push_back(embed_patches(row, params));
  return out;
}

#define SF_INSTANTIATE(S)                                                                         \
  template Patches<S> patchify<S>(std::span<const double>, Index);                                \
  template std::vector<double> unpatchify<S>(const Patches<S>&);                                  \
  template struct EmbedderParams<S>;                                                              \
  template Mat<S> embed_patches<S>(const Patches<S>&, const EmbedderParams<S>&, EmbedCache<S>*);  \
  template Mat<S> embed_backward<S>(const EmbedderParams<S>&, const EmbedCache<S>&, const MatRef<S>&, \
                                    EmbedderParams<S>&);                                          \
  template std::vector<Mat<S>> embed_patches<S>(const PatchBatch<S>&, const EmbedderParams<S>&);

SF_INSTANTIATE(float)
SF_INSTANTIATE(double)
#undef SF_INSTANTIATE

} // namespace sf
