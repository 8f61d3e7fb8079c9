#include "sf/backbone.hpp"

#include <algorithm>
#include <numeric>

namespace sf {

// ---------------------------------------------------------------------------
// Routing statistics and the load-balancing loss.

RoutingStats RoutingStats::zeros(Index experts, Index top_k) {
  RoutingStats s;
  s.assigned = Vec<double>::Zero(experts);
  s.affinity = Vec<double>::Zero(experts);
  s.top_k = top_k;
  return s;
}

void RoutingStats::merge(const RoutingStats& other) {
  if (assigned.size() == 0) {
    *this = other;
    return;
  }
  assigned += other.assigned;
  affinity += other.affinity;
  tokens += other.tokens;
}

Vec<double> RoutingStats::fractions() const { return assigned / (double(top_k) * tokens); }

Vec<double> RoutingStats::mean_affinity() const { return affinity / tokens; }

double aux_loss(const RoutingStats& stats) {
  if (!(stats.tokens > 0)) throw InputError("aux_loss: no routed tokens");
  const double e = double(stats.assigned.size());
  return e * stats.fractions().dot(stats.mean_affinity());
}

double aux_loss(const std::vector<RoutingStats>& layers) {
  if (layers.empty()) return 0.0;
  double total = 0.0;
  for (const auto& l : layers) total += aux_loss(l);
  return total / double(layers.size());
}

std::vector<Vec<double>> aux_affinity_grad(const std::vector<RoutingStats>& layers, double weight) {
  std::vector<Vec<double>> out;
  out.reserve(layers.size());
  for (const auto& l : layers) {
    const double e = double(l.assigned.size());
    // d/da_{j,t} of E * sum_j f_j * (sum_t a_{j,t} / T), with f_j held fixed.
    out.push_back(l.fractions() * (weight * e / (l.tokens * double(layers.size()))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention.

template <class S>
Mat<S> attention_forward(const MatRef<S>& x, const AttentionParams<S>& params, const RopeTable<S>& rope,
                         AttentionCache<S>* cache) {
  const Index n = x.rows();
  const Index heads = params.tau_logit.size();
  const Index dh = params.wq.cols() / heads;
  const Mat<S> q = x * params.wq;
  const Mat<S> k = x * params.wk;
  Mat<S> v = x * params.wv;
  Mat<S> concat(n, heads * dh);
  std::vector<HeadCache<S>> local(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    HeadCache<S>& hc = local[std::size_t(h)];
    hc.qn = l2_normalize<S>(q.middleCols(h * dh, dh), &hc.qnorm);
    hc.kn = l2_normalize<S>(k.middleCols(h * dh, dh), &hc.knorm);
    hc.qr = rotary_apply<S>(hc.qn, rope);
    hc.kr = rotary_apply<S>(hc.kn, rope);
    hc.scores.noalias() = hc.qr * hc.kr.transpose();
    hc.tau = softplus(params.tau_logit(h));
    hc.probs = scaled_masked_softmax<S>(hc.scores, hc.tau, true);
    concat.middleCols(h * dh, dh).noalias() = hc.probs * v.middleCols(h * dh, dh);
  }
  Mat<S> out = concat * params.wo;
  if (cache) {
    cache->x = x;
    cache->v = std::move(v);
    cache->concat = std::move(concat);
    cache->heads = std::move(local);
  }
  return out;
}

template <class S>
Mat<S> attention_backward(const AttentionParams<S>& params, const AttentionCache<S>& cache,
                          const RopeTable<S>& rope, const MatRef<S>& dout, AttentionParams<S>& grads) {
  const Index heads = params.tau_logit.size();
  const Index dh = params.wq.cols() / heads;
  const Index n = cache.x.rows();
  grads.wo.noalias() += cache.concat.transpose() * dout;
  const Mat<S> dconcat = dout * params.wo.transpose();
  Mat<S> dq(n, heads * dh), dk(n, heads * dh), dv(n, heads * dh);
  for (Index h = 0; h < heads; ++h) {
    const HeadCache<S>& hc = cache.heads[std::size_t(h)];
    const auto d_o = dconcat.middleCols(h * dh, dh);
    const Mat<S> dp = d_o * cache.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = hc.probs.transpose() * d_o;
    const Mat<S> dlogits = softmax_backward<S>(hc.probs, dp);
    const S dtau = dlogits.cwiseProduct(hc.scores).sum();
    grads.tau_logit(h) += dtau * sigmoid(params.tau_logit(h));
    const Mat<S> dscores = dlogits * hc.tau;
    const Mat<S> dqr = dscores * hc.kr;
    const Mat<S> dkr = dscores.transpose() * hc.qr;
    const Mat<S> dqn = rotary_apply<S>(dqr, rope, true);
    const Mat<S> dkn = rotary_apply<S>(dkr, rope, true);
    dq.middleCols(h * dh, dh) = l2_normalize_backward<S>(hc.qn, hc.qnorm, dqn);
    dk.middleCols(h * dh, dh) = l2_normalize_backward<S>(hc.kn, hc.knorm, dkn);
  }
  grads.wq.noalias() += cache.x.transpose() * dq;
  grads.wk.noalias() += cache.x.transpose() * dk;
  grads.wv.noalias() += cache.x.transpose() * dv;
  Mat<S> dx = dq * params.wq.transpose();
  dx.noalias() += dk * params.wk.transpose();
  dx.noalias() += dv * params.wv.transpose();
  return dx;
}

// ---------------------------------------------------------------------------
// Mixture of experts.

std::vector<Index> top_k_indices(const Eigen::Ref<const Eigen::RowVectorXd>& row, Index k) {
  std::vector<Index> idx(static_cast<std::size_t>(row.size()));
  std::iota(idx.begin(), idx.end(), Index(0));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](Index a, Index b) {
    return row(a) > row(b) || (row(a) == row(b) && a < b);
  });
  idx.resize(std::size_t(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <class S>
Mat<S> moe_forward(const MatRef<S>& x, const MoEParams<S>& params, Index top_k, MoECache<S>* cache,
                   RoutingStats* stats) {
  const Index n = x.rows();
  const Index e_count = params.router.cols();
  if (top_k < 1 || top_k > e_count) throw ConfigError("moe_forward: require 1 <= K <= E");
  Mat<S> affinity = softmax_rows<S>(x * params.router);
  Mat<S> gates = Mat<S>::Zero(n, e_count);
  std::vector<ExpertCache<S>> experts(static_cast<std::size_t>(e_count));
  for (Index t = 0; t < n; ++t) {
    const Eigen::RowVectorXd row = affinity.row(t).template cast<double>();
    for (Index j : top_k_indices(row, top_k)) {
      gates(t, j) = affinity(t, j);
      experts[std::size_t(j)].tokens.push_back(t);
    }
  }
  Mat<S> out = Mat<S>::Zero(n, x.cols());
  for (Index j = 0; j < e_count; ++j) {
    ExpertCache<S>& ec = experts[std::size_t(j)];
    if (ec.tokens.empty()) continue;
    const auto& ep = params.experts[std::size_t(j)];
    const Mat<S> xe = x(ec.tokens, Eigen::all);
    ec.gates.resize(Index(ec.tokens.size()));
    for (std::size_t i = 0; i < ec.tokens.size(); ++i) ec.gates(Index(i)) = gates(ec.tokens[i], j);
    // Coefficient-wise products keep each row independent of the routed count.
    ec.pre.noalias() = xe.lazyProduct(ep.w_in);
    ec.act = silu<S>(ec.pre);
    ec.out.noalias() = ec.act.lazyProduct(ep.w_out);
    for (std::size_t i = 0; i < ec.tokens.size(); ++i)
      out.row(ec.tokens[i]) += ec.gates(Index(i)) * ec.out.row(Index(i));
  }
  if (stats) {
    if (stats->assigned.size() == 0) *stats = RoutingStats::zeros(e_count, top_k);
    for (Index j = 0; j < e_count; ++j) stats->assigned(j) += double(experts[std::size_t(j)].tokens.size());
    stats->affinity += affinity.colwise().sum().transpose().template cast<double>();
    stats->tokens += double(n);
  }
  if (cache) {
    cache->x = x;
    cache->affinity = std::move(affinity);
    cache->gates = std::move(gates);
    cache->experts = std::move(experts);
  }
  return out;
}

template <class S>
Mat<S> moe_backward(const MoEParams<S>& params, const MoECache<S>& cache, const MatRef<S>& dout,
                    const Vec<double>& d_affinity, MoEParams<S>& grads) {
  const Index n = cache.x.rows();
  const Index e_count = params.router.cols();
  Mat<S> da = Mat<S>::Zero(n, e_count);
  if (d_affinity.size() == e_count) da.rowwise() += d_affinity.transpose().template cast<S>();
  Mat<S> dx = Mat<S>::Zero(n, cache.x.cols());
  for (Index j = 0; j < e_count; ++j) {
    const ExpertCache<S>& ec = cache.experts[std::size_t(j)];
    if (ec.tokens.empty()) continue;
    const auto& ep = params.experts[std::size_t(j)];
    auto& eg = grads.experts[std::size_t(j)];
    const Index m = Index(ec.tokens.size());
    Mat<S> dy(m, dout.cols());
    for (Index i = 0; i < m; ++i) {
      const Index t = ec.tokens[std::size_t(i)];
      da(t, j) += dout.row(t).dot(ec.out.row(i));
      dy.row(i) = ec.gates(i) * dout.row(t);
    }
    eg.w_out.noalias() += ec.act.transpose() * dy;
    const Mat<S> dact = dy * ep.w_out.transpose();
    const Mat<S> dpre = silu_backward<S>(ec.pre, dact);
    const Mat<S> xe = cache.x(ec.tokens, Eigen::all);
    eg.w_in.noalias() += xe.transpose() * dpre;
    const Mat<S> dxe = dpre * ep.w_in.transpose();
    for (Index i = 0; i < m; ++i) dx.row(ec.tokens[std::size_t(i)]) += dxe.row(i);
  }
  const Mat<S> dlogits = softmax_backward<S>(cache.affinity, da);
  grads.router.noalias() += cache.x.transpose() * dlogits;
  dx.noalias() += dlogits * params.router.transpose();
  return dx;
}

// ---------------------------------------------------------------------------
// Blocks.

template <class S>
Mat<S> timemoe_block(const MatRef<S>& h, const BlockParams<S>& params, const ModelConfig& config,
                     const RopeTable<S>& rope, BlockCache<S>* cache, RoutingStats* stats) {
  const S eps = S(config.rms_eps);
  Vec<S> inv1, inv2;
  const Mat<S> xn = rmsnorm<S>(h, params.attn_norm, eps, &inv1);
  Mat<S> u = h + attention_forward<S>(xn, params.attn, rope, cache ? &cache->attn : nullptr);
  const Mat<S> un = rmsnorm<S>(u, params.moe_norm, eps, &inv2);
  Mat<S> out = u + moe_forward<S>(un, params.moe, config.top_k, cache ? &cache->moe : nullptr, stats);
  if (cache) {
    cache->h = h;
    cache->inv1 = std::move(inv1);
    cache->u = std::move(u);
    cache->inv2 = std::move(inv2);
  }
  return out;
}

template <class S>
Mat<S> timemoe_block_backward(const BlockParams<S>& params, const ModelConfig&, const BlockCache<S>& cache,
                              const RopeTable<S>& rope, const MatRef<S>& dout, const Vec<double>& d_affinity,
                              BlockParams<S>& grads) {
  const Mat<S> dun = moe_backward<S>(params.moe, cache.moe, dout, d_affinity, grads.moe);
  Mat<S> du = dout;
  du += rmsnorm_backward<S>(cache.u, params.moe_norm, cache.inv2, dun, grads.moe_norm);
  const Mat<S> dxn = attention_backward<S>(params.attn, cache.attn, rope, du, grads.attn);
  Mat<S> dh = du;
  dh += rmsnorm_backward<S>(cache.h, params.attn_norm, cache.inv1, dxn, grads.attn_norm);
  return dh;
}

template <class S>
Mat<S> timestp_block(const MatRef<S>& h_prev, const MatRef<S>& h_init, const StpParams<S>& params,
                     const ModelConfig& config, const RopeTable<S>& rope, StpCache<S>* cache,
                     RoutingStats* stats) {
  if (h_prev.rows() != h_init.rows() || h_prev.cols() != h_init.cols())
    throw ConfigError("timestp_block: input shapes differ");
  const S eps = S(config.rms_eps);
  const Index d = h_prev.cols();
  Vec<S> inv_prev, inv_init;
  Mat<S> cat(h_prev.rows(), 2 * d);
  cat.leftCols(d) = rmsnorm<S>(h_prev, params.prev_norm, eps, &inv_prev);
  cat.rightCols(d) = rmsnorm<S>(h_init, params.init_norm, eps, &inv_init);
  const Mat<S> fused = cat * params.fusion;
  Mat<S> out = timemoe_block<S>(fused, params.block, config, rope, cache ? &cache->block : nullptr, stats);
  if (cache) {
    cache->prev = h_prev;
    cache->init = h_init;
    cache->inv_prev = std::move(inv_prev);
    cache->inv_init = std::move(inv_init);
    cache->cat = std::move(cat);
  }
  return out;
}

template <class S>
Mat<S> timestp_block(const MatRef<S>& h_prev, const MatRef<S>& h0, Index j, const ModelParams<S>& params,
                     const RopeTable<S>& rope) {
  if (j < 1 || j > Index(params.stp.size())) throw ConfigError("timestp_block: block index out of range");
  return timestp_block<S>(h_prev, h0, params.stp[std::size_t(j - 1)], params.config, rope);
}

template <class S>
Mat<S> timestp_block_backward(const StpParams<S>& params, const ModelConfig& config, const StpCache<S>& cache,
                              const RopeTable<S>& rope, const MatRef<S>& dout, const Vec<double>& d_affinity,
                              StpParams<S>& grads, Mat<S>& d_init) {
  const Index d = cache.prev.cols();
  const Mat<S> dfused = timemoe_block_backward<S>(params.block, config, cache.block, rope, dout, d_affinity,
                                                  grads.block);
  grads.fusion.noalias() += cache.cat.transpose() * dfused;
  const Mat<S> dcat = dfused * params.fusion.transpose();
  d_init = rmsnorm_backward<S>(cache.init, params.init_norm, cache.inv_init, dcat.rightCols(d), grads.init_norm);
  return rmsnorm_backward<S>(cache.prev, params.prev_norm, cache.inv_prev, dcat.leftCols(d), grads.prev_norm);
}

// ---------------------------------------------------------------------------
// Whole model.

namespace {

template <class S>
Patches<S> leading_rows(const Patches<S>& p, Index rows) {
  return {p.values.topRows(rows), p.masks.topRows(rows)};
}

} // namespace

template <class S>
SequenceOutput<S> forward_sequence(const ModelParams<S>& params, const Patches<S>& patches, Index n_ctx,
                                   Index depth, SequenceTape<S>* tape, std::vector<RoutingStats>* routing,
                                   ForwardCounters* counters, const FuturePatchFn<S>* future) {
  const ModelConfig& cfg = params.config;
  if (n_ctx < 1) throw InputError("forward: empty context");
  if (n_ctx > cfg.max_patches)
    throw ContextLengthError("forward: " + std::to_string(n_ctx) + " patches exceed max_patches " +
                             std::to_string(cfg.max_patches));
  if (depth < 0 || depth > cfg.stp_blocks) throw ConfigError("forward: depth outside [0, H]");
  if (patches.count() < n_ctx) throw InputError("forward: fewer patches than context length");

  const bool shift = cfg.stp_variant == StpVariant::ShiftToken && depth > 0;
  const Index n_embed = shift ? std::min(patches.count(), n_ctx + depth) : n_ctx;
  Mat<S> h0 = embed_patches<S>(leading_rows(patches, n_embed), params.embed, tape ? &tape->embed : nullptr);
  require_finite(h0, "patch embeddings");
  RopeTable<S> rope = RopeTable<S>::build(n_ctx, cfg.head_dim(), cfg.theta_base, cfg.rope_scale);

  const Index n_layers = cfg.main_blocks + depth;
  if (routing) routing->assign(std::size_t(n_layers), RoutingStats::zeros(cfg.experts, cfg.top_k));
  if (tape) {
    tape->n_ctx = n_ctx;
    tape->n_embedded = n_embed;
    tape->main.assign(std::size_t(cfg.main_blocks), {});
    tape->stp.assign(std::size_t(depth), {});
  }
  if (counters) ++counters->passes;

  SequenceOutput<S> out;
  out.main_blocks = cfg.main_blocks;
  out.levels.reserve(std::size_t(n_layers + 1));
  out.levels.push_back(h0.topRows(n_ctx));
  for (Index l = 0; l < cfg.main_blocks; ++l) {
    out.levels.push_back(timemoe_block<S>(out.levels.back(), params.main[std::size_t(l)], cfg, rope,
                                          tape ? &tape->main[std::size_t(l)] : nullptr,
                                          routing ? &(*routing)[std::size_t(l)] : nullptr));
    if (counters) ++counters->blocks;
  }
  for (Index j = 1; j <= depth; ++j) {
    Mat<S> init;
    if (shift) {
      // Token i fuses with the initial embedding of token i + j.
      while (h0.rows() < n_ctx + j) {
        if (!future) throw InputError("forward: shift-token variant needs future patches");
        const Vec<S> patch = (*future)(h0.rows(), j, out.levels.back());
        Patches<S> extra{patch.transpose(), Mat<S>::Ones(1, patch.size())};
        Mat<S> row = embed_patches<S>(extra, params.embed);
        h0.conservativeResize(h0.rows() + 1, Eigen::NoChange);
        h0.bottomRows(1) = row;
      }
      init = h0.middleRows(j, n_ctx);
    } else {
      init = out.levels[0];
    }
    const std::size_t li = std::size_t(cfg.main_blocks + j - 1);
    out.levels.push_back(timestp_block<S>(out.levels.back(), init, params.stp[std::size_t(j - 1)], cfg, rope,
                                          tape ? &tape->stp[std::size_t(j - 1)] : nullptr,
                                          routing ? &(*routing)[li] : nullptr));
    if (counters) ++counters->blocks;
  }
  for (const auto& lvl : out.levels) require_finite(lvl, "block output");
  if (tape) tape->rope = std::move(rope);
  return out;
}

template <class S>
void backward_sequence(const ModelParams<S>& params, const Patches<S>& patches, const SequenceTape<S>& tape,
                       const std::vector<Mat<S>>& d_depth, const std::vector<Vec<double>>& d_affinity,
                       ModelParams<S>& grads) {
  (void)patches;
  const ModelConfig& cfg = params.config;
  const Index depth = Index(tape.stp.size());
  const Index n_ctx = tape.n_ctx;
  if (Index(d_depth.size()) != depth + 1) throw ConfigError("backward: need one gradient per depth");
  const bool shift = cfg.stp_variant == StpVariant::ShiftToken && depth > 0;
  static const Vec<double> no_aux;
  auto aux = [&](Index layer) -> const Vec<double>& {
    return std::size_t(layer) < d_affinity.size() ? d_affinity[std::size_t(layer)] : no_aux;
  };

  Mat<S> dh0 = Mat<S>::Zero(tape.n_embedded, cfg.dim);
  Mat<S> dcur = d_depth[std::size_t(depth)];
  for (Index j = depth; j >= 1; --j) {
    Mat<S> dinit;
    Mat<S> dprev = timestp_block_backward<S>(params.stp[std::size_t(j - 1)], cfg, tape.stp[std::size_t(j - 1)],
                                             tape.rope, dcur, aux(cfg.main_blocks + j - 1),
                                             grads.stp[std::size_t(j - 1)], dinit);
    if (shift)
      dh0.middleRows(j, n_ctx) += dinit;
    else
      dh0.topRows(n_ctx) += dinit;
    dcur = dprev + d_depth[std::size_t(j - 1)];
  }
  for (Index l = cfg.main_blocks - 1; l >= 0; --l)
    dcur = timemoe_block_backward<S>(params.main[std::size_t(l)], cfg, tape.main[std::size_t(l)], tape.rope, dcur,
                                     aux(l), grads.main[std::size_t(l)]);
  dh0.topRows(n_ctx) += dcur;
  embed_backward<S>(params.embed, tape.embed, dh0, grads.embed);
}

template <class S>
ForwardTrace<S> model_forward(const PatchBatch<S>& batch, const ModelParams<S>& params, Index depth) {
  ForwardTrace<S> trace;
  trace.main_blocks = params.config.main_blocks;
  trace.depth = depth;
  trace.embeddings.resize(std::size_t(params.config.main_blocks + depth + 1));
  ForwardCounters counters;
  for (Index b = 0; b < batch.batch(); ++b) {
    const auto& row = batch.rows[std::size_t(b)];
    const Index n_ctx = batch.n_patches > 0 ? batch.n_patches : row.count();
    std::vector<RoutingStats> routing;
    // A batched invocation of a block counts once, so only row 0 is counted.
    auto out = forward_sequence<S>(params, row, n_ctx, depth, nullptr, &routing, b == 0 ? &counters : nullptr);
    for (std::size_t lvl = 0; lvl < out.levels.size(); ++lvl) trace.embeddings[lvl].push_back(std::move(out.levels[lvl]));
    if (trace.routing.empty())
      trace.routing = std::move(routing);
    else
      for (std::size_t l = 0; l < routing.size(); ++l) trace.routing[l].merge(routing[l]);
  }
  trace.block_invocations = counters.blocks;
  return trace;
}

#define SF_INSTANTIATE(S)                                                                                   \
  template Mat<S> attention_forward<S>(const MatRef<S>&, const AttentionParams<S>&, const RopeTable<S>&,      \
                                       AttentionCache<S>*);                                                 \
  template Mat<S> attention_backward<S>(const AttentionParams<S>&, const AttentionCache<S>&,                \
                                        const RopeTable<S>&, const MatRef<S>&, AttentionParams<S>&);        \
  template Mat<S> moe_forward<S>(const MatRef<S>&, const MoEParams<S>&, Index, MoECache<S>*, RoutingStats*); \
  template Mat<S> moe_backward<S>(const MoEParams<S>&, const MoECache<S>&, const MatRef<S>&,                \
                                  const Vec<double>&, MoEParams<S>&);                                       \
  template Mat<S> timemoe_block<S>(const MatRef<S>&, const BlockParams<S>&, const ModelConfig&,             \
                                   const RopeTable<S>&, BlockCache<S>*, RoutingStats*);                     \
  template Mat<S> timemoe_block_backward<S>(const BlockParams<S>&, const ModelConfig&, const BlockCache<S>&, \
                                            const RopeTable<S>&, const MatRef<S>&, const Vec<double>&,      \
                                            BlockParams<S>&);                                               \
  template Mat<S> timestp_block<S>(const MatRef<S>&, const MatRef<S>&, const StpParams<S>&,                 \
                                   const ModelConfig&, const RopeTable<S>&, StpCache<S>*, RoutingStats*);   \
  template Mat<S> timestp_block<S>(const MatRef<S>&, const MatRef<S>&, Index, const ModelParams<S>&,        \
                                   const RopeTable<S>&);                                                    \
  template Mat<S> timestp_block_backward<S>(const StpParams<S>&, const ModelConfig&, const StpCache<S>&,    \
                                            const RopeTable<S>&, const MatRef<S>&, const Vec<double>&,      \
                                            StpParams<S>&, Mat<S>&);                                        \
  template SequenceOutput<S> forward_sequence<S>(const ModelParams<S>&, const Patches<S>&, Index, Index,    \
                                                 SequenceTape<S>*, std::vector<RoutingStats>*,              \
                                                 ForwardCounters*, const FuturePatchFn<S>*);                \
  template void backward_sequence<S>(const ModelParams<S>&, const Patches<S>&, const SequenceTape<S>&,      \
                                     const std::vector<Mat<S>>&, const std::vector<Vec<double>>&,           \
                                     ModelParams<S>&);                                                      \
  template ForwardTrace<S> model_forward<S>(const PatchBatch<S>&, const ModelParams<S>&, Index);

SF_INSTANTIATE(float)
SF_INSTANTIATE(double)
#undef SF_INSTANTIATE

} // namespace sf
