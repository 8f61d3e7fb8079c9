#pragma once

// Learnable weights of the whole model and a name-ordered tensor visitor
// shared by the optimizer, the checkpoint writer and the gradient oracle.

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "sf/config.hpp"
#include "sf/tokenizer.hpp"

namespace sf {

/// Linear maps are stored input-major so that y = x * W for row inputs.
template <class S>
struct AttentionParams {
  Mat<S> wq, wk, wv;  // D x (heads * d_head), heads side by side
  Mat<S> wo;          // (heads * d_head) x D
  Vec<S> tau_logit;   // per head; tau = softplus(tau_logit)
};

template <class S>
struct ExpertParams {
  Mat<S> w_in;   // D x D_ff
  Mat<S> w_out;  // D_ff x D
};

template <class S>
struct MoEParams {
  Mat<S> router;  // D x E; column j is W_j
  std::vector<ExpertParams<S>> experts;
};

template <class S>
struct BlockParams {
  Vec<S> attn_norm;
  AttentionParams<S> attn;
  Vec<S> moe_norm;
  MoEParams<S> moe;
};

template <class S>
struct StpParams {
  Vec<S> prev_norm;  // RMSNorm gain for the preceding depth's embeddings
  Vec<S> init_norm;  // RMSNorm gain for the initial patch embeddings
  Mat<S> fusion;     // 2D x D, i.e. M_j transposed
  BlockParams<S> block;
};

template <class S>
struct HeadParams {
  Mat<S> w;  // D x (Q * P), quantile-major columns
  Vec<S> b;  // Q * P
};

template <class S>
struct ModelParams {
  ModelConfig config;
  EmbedderParams<S> embed;
  std::vector<BlockParams<S>> main;
  std::vector<StpParams<S>> stp;
  HeadParams<S> head;

  /// All-zero tensors with the shapes implied by `config`.
  static ModelParams zeros(const ModelConfig& config);
  /// Truncated-normal(0.02) matrices, unit gains, zero biases,
  /// tau = sqrt(d_head), fusion = [I | 0] + noise.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  std::size_t parameter_count() const;
};

template <class T, class S>
ModelParams<T> cast_params(const ModelParams<S>& p);

// ---------------------------------------------------------------------------
// Visitors. f(name, tensor_0, tensor_1, ...) is called once per tensor, in a
// fixed order, with matching tensors taken from each argument.

namespace detail {

template <class F, class... P>
void zip_block(const std::string& prefix, F& f, P&... b) {
  f(prefix + ".attn_norm", b.attn_norm...);
  f(prefix + ".attn.wq", b.attn.wq...);
  f(prefix + ".attn.wk", b.attn.wk...);
  f(prefix + ".attn.wv", b.attn.wv...);
  f(prefix + ".attn.wo", b.attn.wo...);
  f(prefix + ".attn.tau", b.attn.tau_logit...);
  f(prefix + ".moe_norm", b.moe_norm...);
  f(prefix + ".moe.router", b.moe.router...);
  const auto& first = std::get<0>(std::tie(b...));
  for (std::size_t e = 0; e < first.moe.experts.size(); ++e) {
    const std::string ep = prefix + ".moe.expert." + std::to_string(e);
    f(ep + ".w_in", b.moe.experts[e].w_in...);
    f(ep + ".w_out", b.moe.experts[e].w_out...);
  }
}

} // namespace detail

template <class F, class... P>
void zip_tensors(F&& f, P&... p) {
  const auto& first = std::get<0>(std::tie(p...));
  f(std::string("embed.skip_w"), p.embed.skip_w...);
  f(std::string("embed.hidden_w"), p.embed.hidden_w...);
  f(std::string("embed.hidden_b"), p.embed.hidden_b...);
  f(std::string("embed.out_w"), p.embed.out_w...);
  f(std::string("embed.out_b"), p.embed.out_b...);
  for (std::size_t l = 0; l < first.main.size(); ++l)
    detail::zip_block("main." + std::to_string(l), f, p.main[l]...);
  for (std::size_t j = 0; j < first.stp.size(); ++j) {
    const std::string sp = "stp." + std::to_string(j + 1);
    f(sp + ".prev_norm", p.stp[j].prev_norm...);
    f(sp + ".init_norm", p.stp[j].init_norm...);
    f(sp + ".fusion", p.stp[j].fusion...);
    detail::zip_block(sp + ".block", f, p.stp[j].block...);
  }
  f(std::string("head.w"), p.head.w...);
  f(std::string("head.b"), p.head.b...);
}

template <class S, class F>
void for_each_tensor(ModelParams<S>& p, F&& f) {
  zip_tensors([&](const std::string& name, auto& t) { f(std::string_view(name), t); }, p);
}
template <class S, class F>
void for_each_tensor(const ModelParams<S>& p, F&& f) {
  zip_tensors([&](const std::string& name, const auto& t) { f(std::string_view(name), t); }, p);
}

/// Coarse parameter family of a tensor name (embedder, attn.wq, tau, router,
/// experts, stp.fusion, head, norm...), used to group gradient reports.
std::string parameter_family(std::string_view name);

/// Weight decay applies to matrices only (not gains, biases, temperatures).
template <class T>
bool is_decayed(const T& tensor) {
  return tensor.cols() > 1;
}

} // namespace sf
