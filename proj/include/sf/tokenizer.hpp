#pragma once

// Instance re-normalization, left-padded patching and the patch embedder.

#include <span>
#include <vector>

#include "sf/numerics.hpp"

namespace sf {

inline constexpr double kSigmaFloor = 1e-8;

/// Mean and (floored) standard deviation of an input window.
struct NormStats {
  double mu = 0.0;
  double sigma = 1.0;
};

struct Normalized {
  std::vector<double> values;
  NormStats stats;
};

/// x~ = (x - mu) / sigma with the population standard deviation floored at
/// kSigmaFloor. Throws InputError on an empty or non-finite series.
Normalized renormalize(std::span<const double> series);

/// Applies a given set of statistics (targets share their input's stats).
std::vector<double> apply_norm(std::span<const double> series, const NormStats& stats);

/// x^ = sigma * x~ + mu, elementwise.
template <class Derived>
auto denormalize(const Eigen::MatrixBase<Derived>& pred, const NormStats& stats) {
  using S = typename Derived::Scalar;
  return ((pred.array() * S(stats.sigma)) + S(stats.mu)).matrix();
}
double denormalize(double pred, const NormStats& stats);

/// Left-padded patches of a (normalized) series. Rows are patches.
template <class S>
struct Patches {
  Mat<S> values;  // N x P, pads are 0
  Mat<S> masks;   // N x P, 1 = observed
  Index count() const { return values.rows(); }
};

/// N = ceil(T / P) patches; the first patch is left-padded with zeros and
/// mask 0 when P does not divide T.
template <class S>
Patches<S> patchify(std::span<const double> series, Index patch_len);

/// Observed values of a patch matrix, in order (inverse of patchify).
template <class S>
std::vector<double> unpatchify(const Patches<S>& patches);

/// Normalized patches of a training/inference batch.
template <class S>
struct PatchBatch {
  std::vector<Patches<S>> rows;
  std::vector<NormStats> stats;
  Index n_patches = 0;  // patches per row fed to the backbone
  Index batch() const { return Index(rows.size()); }
};

/// Residual patch embedder: h0 = z Ws + silu(z W1 + b1) W2 + b2 with
/// z = concat(patch, mask) in R^{2P}.
template <class S>
struct EmbedderParams {
  Mat<S> skip_w;    // 2P x D
  Mat<S> hidden_w;  // 2P x Dh
  Vec<S> hidden_b;  // Dh
  Mat<S> out_w;     // Dh x D
  Vec<S> out_b;     // D

  static EmbedderParams zeros(Index patch_len, Index hidden, Index dim);
  Index patch_len() const { return skip_w.rows() / 2; }
  Index dim() const { return skip_w.cols(); }
};

template <class S>
struct EmbedCache {
  Mat<S> z;    // N x 2P
  Mat<S> pre;  // N x Dh, before activation
  Mat<S> act;  // N x Dh
};

/// Embeds every patch row. Values at masked positions are forced to 0 so
/// pad contents never reach the network.
template <class S>
Mat<S> embed_patches(const Patches<S>& patches, const EmbedderParams<S>& params,
                     EmbedCache<S>* cache = nullptr);

/// Accumulates parameter gradients; returns d/d(patch values) (N x P).
template <class S>
Mat<S> embed_backward(const EmbedderParams<S>& params, const EmbedCache<S>& cache, const MatRef<S>& dh,
                      EmbedderParams<S>& grads);

/// Batched form returning one N x D embedding per row.
template <class S>
std::vector<Mat<S>> embed_patches(const PatchBatch<S>& batch, const EmbedderParams<S>& params);

} // namespace sf
