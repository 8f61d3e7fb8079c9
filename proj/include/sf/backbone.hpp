#pragma once

// Decoder-only stack: L TimeMoE blocks followed by up to H TimeSTP blocks.
// Every layer has a forward that optionally records a cache and a backward
// that consumes it, accumulating parameter gradients into a ModelParams of
// the same shape.

#include <functional>
#include <vector>

#include "sf/params.hpp"

namespace sf {

/// Router statistics of one MoE layer, accumulated over a batch.
struct RoutingStats {
  Vec<double> assigned;  // (token, slot) assignments per expert
  Vec<double> affinity;  // summed router probabilities per expert
  double tokens = 0.0;
  Index top_k = 1;

  static RoutingStats zeros(Index experts, Index top_k);
  void merge(const RoutingStats& other);
  /// f_j = assigned_j / (K * tokens)
  Vec<double> fractions() const;
  /// P_j = affinity_j / tokens
  Vec<double> mean_affinity() const;
};

/// Load-balancing loss E * sum_j f_j P_j of one layer.
double aux_loss(const RoutingStats& stats);

/// Mean of the per-layer losses.
double aux_loss(const std::vector<RoutingStats>& layers);

/// Per-layer dL/da_j added to every token's affinity when the aux loss is
/// weighted by `weight` and averaged over `layers`.
std::vector<Vec<double>> aux_affinity_grad(const std::vector<RoutingStats>& layers, double weight);

struct ForwardCounters {
  Index blocks = 0;  // TimeMoE block invocations (main + inside TimeSTP)
  Index passes = 0;  // model forward passes
};

// ---------------------------------------------------------------------------
// Attention.

template <class S>
struct HeadCache {
  Mat<S> qn, kn;        // l2-normalized projections
  Vec<S> qnorm, knorm;  // guarded norms
  Mat<S> qr, kr;        // after rotation
  Mat<S> scores;        // A = qr kr^T
  Mat<S> probs;         // masked softmax(tau A)
  S tau = S(1);
};

template <class S>
struct AttentionCache {
  Mat<S> x;
  Mat<S> v;
  Mat<S> concat;
  std::vector<HeadCache<S>> heads;
};

/// QK-normalized causal multi-head attention with rotary positions. Rows of
/// `x` are tokens at positions 0..N-1 of `rope`. The residual is added by
/// the caller.
template <class S>
Mat<S> attention_forward(const MatRef<S>& x, const AttentionParams<S>& params, const RopeTable<S>& rope,
                         AttentionCache<S>* cache = nullptr);

template <class S>
Mat<S> attention_backward(const AttentionParams<S>& params, const AttentionCache<S>& cache,
                          const RopeTable<S>& rope, const MatRef<S>& dout, AttentionParams<S>& grads);

// ---------------------------------------------------------------------------
// Mixture of experts.

/// Indices of the K largest entries of a row, ties broken by lower index.
std::vector<Index> top_k_indices(const Eigen::Ref<const Eigen::RowVectorXd>& row, Index k);

template <class S>
struct ExpertCache {
  std::vector<Index> tokens;  // rows routed to this expert, ascending
  Vec<S> gates;
  Mat<S> pre;  // tokens x D_ff
  Mat<S> act;
  Mat<S> out;  // tokens x D, ungated expert output
};

template <class S>
struct MoECache {
  Mat<S> x;
  Mat<S> affinity;  // N x E
  Mat<S> gates;     // N x E, top-K affinities, zeros elsewhere
  std::vector<ExpertCache<S>> experts;
};

/// Sparse top-K mixture: out_i = sum_j g_ji FFN_j(x_i), g = affinity kept
/// only on the top-K experts (no renormalization). `stats`, when given,
/// accumulates routing counts for the load-balancing loss.
template <class S>
Mat<S> moe_forward(const MatRef<S>& x, const MoEParams<S>& params, Index top_k,
                   MoECache<S>* cache = nullptr, RoutingStats* stats = nullptr);

/// `d_affinity` (length E) is added to dL/da for every token.
template <class S>
Mat<S> moe_backward(const MoEParams<S>& params, const MoECache<S>& cache, const MatRef<S>& dout,
                    const Vec<double>& d_affinity, MoEParams<S>& grads);

// ---------------------------------------------------------------------------
// Blocks.

template <class S>
struct BlockCache {
  Mat<S> h;
  Vec<S> inv1;
  AttentionCache<S> attn;
  Mat<S> u;
  Vec<S> inv2;
  MoECache<S> moe;
};

/// u = MHA(RMSNorm(h)) + h;  h' = MoE(RMSNorm(u)) + u.
template <class S>
Mat<S> timemoe_block(const MatRef<S>& h, const BlockParams<S>& params, const ModelConfig& config,
                     const RopeTable<S>& rope, BlockCache<S>* cache = nullptr, RoutingStats* stats = nullptr);

template <class S>
Mat<S> timemoe_block_backward(const BlockParams<S>& params, const ModelConfig& config, const BlockCache<S>& cache,
                              const RopeTable<S>& rope, const MatRef<S>& dout, const Vec<double>& d_affinity,
                              BlockParams<S>& grads);

template <class S>
struct StpCache {
  Mat<S> prev, init;  // RMSNorm inputs
  Vec<S> inv_prev, inv_init;
  Mat<S> cat;  // N x 2D
  BlockCache<S> block;
};

/// h_bar = concat(RMSNorm(h_prev), RMSNorm(h_init)) * fusion; out = TimeMoE(h_bar).
/// `h_init` holds the initial embeddings fused with each token (the token's
/// own for the serial variant, shifted ones for the shift-token variant).
template <class S>
Mat<S> timestp_block(const MatRef<S>& h_prev, const MatRef<S>& h_init, const StpParams<S>& params,
                     const ModelConfig& config, const RopeTable<S>& rope, StpCache<S>* cache = nullptr,
                     RoutingStats* stats = nullptr);

/// Spec-level form selecting block j (1-based) of a parameter set.
template <class S>
Mat<S> timestp_block(const MatRef<S>& h_prev, const MatRef<S>& h0, Index j, const ModelParams<S>& params,
                     const RopeTable<S>& rope);

/// Returns d h_prev; writes d h_init.
template <class S>
Mat<S> timestp_block_backward(const StpParams<S>& params, const ModelConfig& config, const StpCache<S>& cache,
                              const RopeTable<S>& rope, const MatRef<S>& dout, const Vec<double>& d_affinity,
                              StpParams<S>& grads, Mat<S>& d_init);

// ---------------------------------------------------------------------------
// Whole model, one sequence.

/// Supplies the normalized patch at context row `row` (>= n_ctx) for the
/// shift-token variant at inference, when no real future input exists.
/// `depth_output` is the embedding produced at depth j - 1.
template <class S>
using FuturePatchFn = std::function<Vec<S>(Index row, Index j, const Mat<S>& depth_output)>;

template <class S>
struct SequenceTape {
  Index n_ctx = 0;
  Index n_embedded = 0;
  RopeTable<S> rope;
  EmbedCache<S> embed;
  std::vector<BlockCache<S>> main;
  std::vector<StpCache<S>> stp;
};

template <class S>
struct SequenceOutput {
  /// levels[0] = h0, levels[l] = h^l for l = 1..L+depth (N x D each).
  std::vector<Mat<S>> levels;
  Index main_blocks = 0;
  /// Embedding used by the head at serial depth j (0 = main stack output).
  const Mat<S>& depth(Index j) const { return levels[std::size_t(main_blocks + j)]; }
  Index depth_count() const { return Index(levels.size()) - main_blocks; }
};

/// Runs embedder, the L main blocks and the first `depth` TimeSTP blocks on
/// rows [0, n_ctx) of `patches`. For the shift-token variant, rows beyond
/// n_ctx (when present) are real future inputs; missing ones come from
/// `future`. Throws ContextLengthError when n_ctx > max_patches.
template <class S>
SequenceOutput<S> forward_sequence(const ModelParams<S>& params, const Patches<S>& patches, Index n_ctx,
                                   Index depth, SequenceTape<S>* tape = nullptr,
                                   std::vector<RoutingStats>* routing = nullptr,
                                   ForwardCounters* counters = nullptr,
                                   const FuturePatchFn<S>* future = nullptr);

/// Backpropagates dL/d(depth output j) for j = 0..depth, plus the
/// per-layer aux affinity gradients, accumulating into `grads`.
template <class S>
void backward_sequence(const ModelParams<S>& params, const Patches<S>& patches, const SequenceTape<S>& tape,
                       const std::vector<Mat<S>>& d_depth, const std::vector<Vec<double>>& d_affinity,
                       ModelParams<S>& grads);

// ---------------------------------------------------------------------------
// Batched forward.

template <class S>
struct ForwardTrace {
  /// embeddings[level][b]; level 0 = h0, L = main output, L+j = STP block j.
  std::vector<std::vector<Mat<S>>> embeddings;
  std::vector<RoutingStats> routing;  // one per executed MoE layer
  Index main_blocks = 0;
  Index depth = 0;
  Index block_invocations = 0;

  const Mat<S>& at_depth(Index j, Index b) const {
    return embeddings[std::size_t(main_blocks + j)][std::size_t(b)];
  }
};

/// Forward over a batch; depth in [0, H].
template <class S>
ForwardTrace<S> model_forward(const PatchBatch<S>& batch, const ModelParams<S>& params, Index depth);

} // namespace sf
