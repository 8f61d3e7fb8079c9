#include "sf/params.hpp"

#include <random>

namespace sf {

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

template <class S>
BlockParams<S> zero_block(const ModelConfig& c) {
  const Index d = c.dim;
  const Index inner = c.n_heads() * c.head_dim();
  BlockParams<S> b;
  b.attn_norm = Vec<S>::Zero(d);
  b.attn.wq = Mat<S>::Zero(d, inner);
  b.attn.wk = Mat<S>::Zero(d, inner);
  b.attn.wv = Mat<S>::Zero(d, inner);
  b.attn.wo = Mat<S>::Zero(inner, d);
  b.attn.tau_logit = Vec<S>::Zero(c.n_heads());
  b.moe_norm = Vec<S>::Zero(d);
  b.moe.router = Mat<S>::Zero(d, c.experts);
  b.moe.experts.resize(std::size_t(c.experts));
  for (auto& e : b.moe.experts) {
    e.w_in = Mat<S>::Zero(d, c.d_ff());
    e.w_out = Mat<S>::Zero(c.d_ff(), d);
  }
  return b;
}

} // namespace

template <class S>
ModelParams<S> ModelParams<S>::zeros(const ModelConfig& c) {
  c.validate();
  ModelParams p;
  p.config = c;
  p.embed = EmbedderParams<S>::zeros(c.patch_len, c.d_embed_hidden(), c.dim);
  for (Index l = 0; l < c.main_blocks; ++l) p.main.push_back(zero_block<S>(c));
  for (Index j = 0; j < c.stp_blocks; ++j) {
    StpParams<S> s;
    s.prev_norm = Vec<S>::Zero(c.dim);
    s.init_norm = Vec<S>::Zero(c.dim);
    s.fusion = Mat<S>::Zero(2 * c.dim, c.dim);
    s.block = zero_block<S>(c);
    p.stp.push_back(std::move(s));
  }
  p.head.w = Mat<S>::Zero(c.dim, c.n_quantiles() * c.patch_len);
  p.head.b = Vec<S>::Zero(c.n_quantiles() * c.patch_len);
  return p;
}

template <class S>
ModelParams<S> ModelParams<S>::init(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = zeros(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto trunc_normal = [&] {
    double z;
    do z = normal(rng);
    while (std::abs(z) > 2.0);
    return 0.02 * z;
  };
  const double tau0 = softplus_inverse(std::sqrt(double(c.head_dim())));
  for_each_tensor(p, [&](std::string_view name, auto& t) {
    if (ends_with(name, "norm")) {
      t.setOnes();
    } else if (ends_with(name, ".tau")) {
      t.setConstant(S(tau0));
    } else if (t.cols() == 1) {
      t.setZero();
    } else {
      for (Index i = 0; i < t.size(); ++i) t.data()[i] = S(trunc_normal());
      if (ends_with(name, ".fusion")) t.topRows(c.dim).diagonal().array() += S(1);
    }
  });
  return p;
}

template <class S>
std::size_t ModelParams<S>::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](std::string_view, const auto& t) { n += std::size_t(t.size()); });
  return n;
}

template <class T, class S>
ModelParams<T> cast_params(const ModelParams<S>& p) {
  ModelParams<T> out = ModelParams<T>::zeros(p.config);
  zip_tensors([](const std::string&, auto& dst, const auto& src) { dst = src.template cast<T>(); }, out, p);
  return out;
}

std::string parameter_family(std::string_view name) {
  if (name.starts_with("embed.")) return "embedder";
  if (name.starts_with("head.")) return "head";
  if (ends_with(name, ".fusion")) return "stp.fusion";
  if (ends_with(name, "norm")) return "rmsnorm_gain";
  for (std::string_view w : {"wq", "wk", "wv", "wo"})
    if (ends_with(name, std::string(".attn.") + std::string(w))) return "attn." + std::string(w);
  if (ends_with(name, ".attn.tau")) return "tau";
  if (ends_with(name, ".moe.router")) return "router";
  if (name.find(".moe.expert.") != std::string_view::npos) return "experts";
  return std::string(name);
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);
template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, float>(const ModelParams<float>&);
template ModelParams<double> cast_params<double, double>(const ModelParams<double>&);

} // namespace sf
