#include "sf/trainer.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "sf/parallel.hpp"

namespace sf {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_real(std::string_view key, std::string_view v) {
  const auto s = trim(v);
  if (s == "inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double out = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for '" + std::string(key) + "': " + s);
  }
}

Index parse_index(std::string_view key, std::string_view v) {
  const double d = parse_real(key, v);
  if (d != std::floor(d) || std::abs(d) > 9e15) throw ConfigError("invalid integer for '" + std::string(key) + "'");
  return Index(d);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration.

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(peak_lr >= 0.0)) throw ConfigError("peak_lr must be >= 0");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw ConfigError("warmup_frac must lie in [0, 1]");
  if (!(min_lr_frac >= 0.0 && min_lr_frac <= 1.0)) throw ConfigError("min_lr_frac must lie in [0, 1]");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  double wsum = 0.0;
  for (double w : mixture_weights) {
    if (!(w >= 0.0)) throw ConfigError("mixture weights must be non-negative");
    wsum += w;
  }
  if (mixture_weights.empty() || !(wsum > 0.0)) throw ConfigError("mixture weights must not all be zero");
  if (max_patches < 0) throw ConfigError("max_patches must be >= 0");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0) || !(resample_prob >= 0.0 && resample_prob <= 1.0))
    throw ConfigError("augmentation probabilities must lie in [0, 1]");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (checkpoint_every < 0 || log_every < 0) throw ConfigError("intervals must be >= 0");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "stage=" << to_string(stage) << '\n'
     << "steps=" << steps << '\n'
     << "batch_size=" << batch_size << '\n'
     << "peak_lr=" << fmt(peak_lr) << '\n'
     << "warmup_frac=" << fmt(warmup_frac) << '\n'
     << "min_lr_frac=" << fmt(min_lr_frac) << '\n'
     << "weight_decay=" << fmt(weight_decay) << '\n'
     << "clip_norm=" << fmt(clip_norm) << '\n'
     << "alpha=" << fmt(alpha) << '\n'
     << "beta1=" << fmt(beta1) << '\n'
     << "beta2=" << fmt(beta2) << '\n'
     << "adam_eps=" << fmt(adam_eps) << '\n'
     << "seed=" << seed << '\n'
     << "mixture_weights=";
  for (std::size_t i = 0; i < mixture_weights.size(); ++i) os << (i ? "," : "") << fmt(mixture_weights[i]);
  os << '\n'
     << "max_patches=" << max_patches << '\n'
     << "flip_prob=" << fmt(flip_prob) << '\n'
     << "resample_prob=" << fmt(resample_prob) << '\n'
     << "workers=" << workers << '\n'
     << "checkpoint_every=" << checkpoint_every << '\n'
     << "log_every=" << log_every << '\n';
  return os.str();
}

void TrainConfig::set(std::string_view key, std::string_view value) {
  if (key == "stage") {
    const auto v = trim(value);
    if (v == "pretrain") stage = Stage::Pretrain;
    else if (v == "posttrain") stage = Stage::Posttrain;
    else throw ConfigError("unknown stage '" + v + "' (pretrain|posttrain)");
  } else if (key == "steps") steps = parse_index(key, value);
  else if (key == "batch_size") batch_size = parse_index(key, value);
  else if (key == "peak_lr") peak_lr = parse_real(key, value);
  else if (key == "warmup_frac") warmup_frac = parse_real(key, value);
  else if (key == "min_lr_frac") min_lr_frac = parse_real(key, value);
  else if (key == "weight_decay") weight_decay = parse_real(key, value);
  else if (key == "clip_norm") clip_norm = parse_real(key, value);
  else if (key == "alpha") alpha = parse_real(key, value);
  else if (key == "beta1") beta1 = parse_real(key, value);
  else if (key == "beta2") beta2 = parse_real(key, value);
  else if (key == "adam_eps") adam_eps = parse_real(key, value);
  else if (key == "seed") seed = std::uint64_t(parse_index(key, value));
  else if (key == "mixture_weights") {
    mixture_weights.clear();
    std::string_view rest = value;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      mixture_weights.push_back(parse_real(key, rest.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  } else if (key == "max_patches") max_patches = parse_index(key, value);
  else if (key == "flip_prob") flip_prob = parse_real(key, value);
  else if (key == "resample_prob") resample_prob = parse_real(key, value);
  else if (key == "workers") workers = parse_index(key, value);
  else if (key == "checkpoint_every") checkpoint_every = parse_index(key, value);
  else if (key == "log_every") log_every = parse_index(key, value);
  else throw ConfigError("unknown training config key '" + std::string(key) + "'");
}

TrainConfig TrainConfig::from_text(std::string_view text) {
  TrainConfig c;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line: " + t);
    c.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  c.validate();
  return c;
}

double learning_rate(const TrainConfig& config, Index step) {
  const Index total = std::max<Index>(config.steps, 1);
  const Index warmup = Index(std::llround(config.warmup_frac * double(total)));
  if (step < warmup) return config.peak_lr * double(step + 1) / double(warmup);
  const Index decay = total - warmup;
  if (decay <= 1) return config.peak_lr;
  const double progress = std::min(1.0, double(step - warmup) / double(decay - 1));
  const double floor = config.min_lr_frac * config.peak_lr;
  return floor + 0.5 * (config.peak_lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Objective.

template <class S>
Patches<S> prepare_window(std::span<const double> window, Index n_ctx, Index patch_len) {
  const auto ctx = std::size_t(n_ctx * patch_len);
  if (ctx == 0 || window.size() < ctx) throw InputError("prepare_window: window shorter than the context");
  if (window.size() % std::size_t(patch_len) != 0)
    throw InputError("prepare_window: window length is not a multiple of the patch length");
  const NormStats stats = renormalize(window.first(ctx)).stats;
  const auto normalized = apply_norm(window, stats);
  return patchify<S>(normalized, patch_len);
}

template <class S>
BatchLoss batch_objective(const ModelParams<S>& params, const std::vector<Patches<S>>& windows, Index n_ctx,
                          const std::vector<double>& weights, double alpha, ModelParams<S>* grads, Index workers) {
  const Index batch = Index(windows.size());
  if (batch == 0) throw InputError("batch_objective: empty batch");
  const Index depth = Index(weights.size());
  const ModelConfig& cfg = params.config;

  std::vector<SequenceTape<S>> tapes(grads ? std::size_t(batch) : 0);
  std::vector<SequenceOutput<S>> outputs(static_cast<std::size_t>(batch));
  std::vector<std::vector<RoutingStats>> routing(static_cast<std::size_t>(batch));
  parallel_for(batch, workers, [&](Index b) {
    outputs[std::size_t(b)] = forward_sequence<S>(params, windows[std::size_t(b)], n_ctx, depth,
                                                  grads ? &tapes[std::size_t(b)] : nullptr, &routing[std::size_t(b)]);
  });
  std::vector<RoutingStats> layers = routing[0];
  for (Index b = 1; b < batch; ++b)
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].merge(routing[std::size_t(b)][l]);

  BatchLoss out;
  out.aux = aux_loss(layers);
  const std::vector<Vec<double>> d_aff = grads ? aux_affinity_grad(layers, alpha) : std::vector<Vec<double>>{};
  std::vector<LossParts> parts(static_cast<std::size_t>(batch));
  std::vector<ModelParams<S>> sample_grads(grads ? std::size_t(batch) : 0);
  const double scale = 1.0 / double(batch);
  parallel_for(batch, workers, [&](Index b) {
    const auto& w = windows[std::size_t(b)];
    if (!grads) {
      parts[std::size_t(b)] = sequence_loss<S>(outputs[std::size_t(b)], w, params.head, cfg.quantiles, weights);
      return;
    }
    ModelParams<S>& g = sample_grads[std::size_t(b)];
    g = ModelParams<S>::zeros(cfg);
    std::vector<Mat<S>> d_depth;
    parts[std::size_t(b)] =
        sequence_loss<S>(outputs[std::size_t(b)], w, params.head, cfg.quantiles, weights, &d_depth, &g.head, scale);
    backward_sequence<S>(params, w, tapes[std::size_t(b)], d_depth, d_aff, g);
  });

  out.per_depth.assign(std::size_t(depth + 1), 0.0);
  for (const auto& p : parts) {
    out.ntp += p.ntp * scale;
    out.stp += p.stp * scale;
    for (std::size_t j = 0; j < p.per_depth.size(); ++j) out.per_depth[j] += p.per_depth[j] / (double(batch) * double(n_ctx));
  }
  out.total = out.ntp + out.stp + alpha * out.aux;
  if (grads) {
    *grads = ModelParams<S>::zeros(cfg);
    for (const auto& g : sample_grads)
      zip_tensors([](const std::string&, auto& acc, const auto& x) { acc += x; }, *grads, g);
  }
  return out;
}

template <class S>
double global_norm(const ModelParams<S>& grads) {
  double sq = 0.0;
  for_each_tensor(grads, [&](std::string_view, const auto& t) { sq += t.template cast<double>().squaredNorm(); });
  return std::sqrt(sq);
}

template <class S>
double clip_global_norm(ModelParams<S>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (std::isfinite(max_norm) && norm > max_norm) {
    const S factor = S(max_norm / norm);
    for_each_tensor(grads, [&](std::string_view, auto& t) { t *= factor; });
  }
  return norm;
}

template <class S>
OptimizerState<S> OptimizerState<S>::zeros(const ModelConfig& config) {
  OptimizerState s;
  s.m = ModelParams<S>::zeros(config);
  s.v = ModelParams<S>::zeros(config);
  return s;
}

template <class S>
void adamw_update(ModelParams<S>& params, const ModelParams<S>& grads, OptimizerState<S>& state,
                  const TrainConfig& config, double lr) {
  state.step += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, double(state.step));
  const double c2 = 1.0 - std::pow(b2, double(state.step));
  zip_tensors(
      [&](const std::string&, auto& p, const auto& g, auto& m, auto& v) {
        m = S(b1) * m + S(1.0 - b1) * g;
        v = S(b2) * v + S(1.0 - b2) * g.cwiseAbs2();
        const double decay = is_decayed(p) ? config.weight_decay : 0.0;
        auto step = (m.array() / S(c1)) / ((v.array() / S(c2)).sqrt() + S(config.adam_eps));
        p.array() -= S(lr) * (step + S(decay) * p.array());
      },
      params, grads, state.m, state.v);
}

template <class S>
StepReport train_step(ModelParams<S>& params, OptimizerState<S>& state, const std::vector<Patches<S>>& windows,
                      const TrainConfig& config) {
  StepReport r;
  r.step = state.step;
  r.lr = learning_rate(config, state.step);
  const auto weights = stp_weights(params.config.stp_blocks, config.stage);
  ModelParams<S> grads;
  try {
    r.loss = batch_objective<S>(params, windows, params.config.max_patches, weights, config.alpha, &grads,
                                config.workers);
  } catch (const NumericError&) {
    r.skipped = true;
    return r;
  }
  r.grad_norm = global_norm(grads);
  if (!std::isfinite(r.loss.total) || !std::isfinite(r.grad_norm)) {
    r.skipped = true;
    return r;
  }
  clip_global_norm(grads, config.clip_norm);
  adamw_update(params, grads, state, config, r.lr);
  return r;
}

template <class S>
ModelParams<S> extend_context(const ModelParams<S>& params, Index new_max_patches) {
  if (new_max_patches < params.config.max_patches)
    throw ConfigError("extend_context: cannot shrink max_patches from " + std::to_string(params.config.max_patches) +
                      " to " + std::to_string(new_max_patches));
  ModelParams<S> out = params;
  out.config.max_patches = new_max_patches;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints.
//
// Layout (little-endian):
//   "SFCK" u32 version u32 dtype_bytes
//   u64 config_len, config text
//   u64 tensor_count, then per tensor: u32 name_len, name, u32 ndim, u64 dims[ndim], u64 byte_offset
//   u64 payload_len, payload
//   u8 has_state; if 1: u64 step, u64 text_len, train config text, m payload, v payload
//   u32 crc32 of everything above

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class T>
  void pod(T v) {
    bytes(&v, sizeof v);
  }
  void text(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}
  void bytes(void* p, std::size_t n) {
    if (n > size_ - pos_) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    std::memcpy(p, data_ + pos_, n);
    pos_ += n;
  }
  template <class T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string text(std::size_t limit = std::size_t(1) << 30) {
    const auto n = pod<std::uint64_t>();
    if (n > limit || n > size_ - pos_) throw CheckpointError("checkpoint truncated or corrupt string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

template <class S>
void write_payload(Writer& w, const ModelParams<S>& p) {
  for_each_tensor(p, [&](std::string_view, const auto& t) { w.bytes(t.data(), std::size_t(t.size()) * sizeof(S)); });
}

template <class S>
void read_payload(Reader& r, ModelParams<S>& p) {
  for_each_tensor(p, [&](std::string_view, auto& t) { r.bytes(t.data(), std::size_t(t.size()) * sizeof(S)); });
}

struct TensorRecord {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::uint64_t offset = 0;
};

template <class S>
std::vector<TensorRecord> tensor_records(const ModelParams<S>& p) {
  std::vector<TensorRecord> out;
  std::uint64_t offset = 0;
  for_each_tensor(p, [&](std::string_view name, const auto& t) {
    TensorRecord rec{std::string(name), {}, offset};
    if (t.cols() == 1)
      rec.dims = {std::uint64_t(t.rows())};
    else
      rec.dims = {std::uint64_t(t.rows()), std::uint64_t(t.cols())};
    offset += std::uint64_t(t.size()) * sizeof(S);
    out.push_back(std::move(rec));
  });
  return out;
}

std::string first_config_mismatch(const ModelConfig& stored, const ModelConfig& expected) {
  std::istringstream a(stored.to_text()), b(expected.to_text());
  std::string la, lb;
  while (std::getline(a, la) && std::getline(b, lb)) {
    if (la == lb) continue;
    const auto key = la.substr(0, la.find('='));
    if (key == "max_patches" || key == "rope_scale") continue;
    return "config key '" + key + "': checkpoint has '" + la.substr(la.find('=') + 1) + "', expected '" +
           lb.substr(lb.find('=') + 1) + "'";
  }
  return {};
}

template <class T>
Checkpoint<T> decode(Reader& r, const ModelConfig& config, const std::vector<TensorRecord>& records) {
  Checkpoint<T> ck;
  ck.params = ModelParams<T>::zeros(config);
  const auto expected = tensor_records(ck.params);
  if (expected.size() != records.size())
    throw CheckpointError("checkpoint holds " + std::to_string(records.size()) + " tensors, config implies " +
                          std::to_string(expected.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].name != expected[i].name || records[i].dims != expected[i].dims ||
        records[i].offset != expected[i].offset)
      throw CheckpointError("tensor mismatch at '" + expected[i].name + "' (found '" + records[i].name + "')");
  }
  const auto payload_len = r.pod<std::uint64_t>();
  std::uint64_t want = 0;
  for_each_tensor(ck.params, [&](std::string_view, const auto& t) { want += std::uint64_t(t.size()) * sizeof(T); });
  if (payload_len != want) throw CheckpointError("checkpoint payload size does not match its tensor table");
  read_payload(r, ck.params);
  const auto has_state = r.pod<std::uint8_t>();
  if (has_state > 1) throw CheckpointError("corrupt training-state flag");
  if (has_state) {
    OptimizerState<T> st = OptimizerState<T>::zeros(config);
    st.step = Index(r.pod<std::uint64_t>());
    ck.train_config = r.text();
    read_payload(r, st.m);
    read_payload(r, st.v);
    ck.optimizer = std::move(st);
  }
  ck.stored_dtype = sizeof(T);
  return ck;
}

template <class T, class S>
Checkpoint<T> convert(Checkpoint<S>&& in) {
  if constexpr (std::is_same_v<T, S>) {
    return std::move(in);
  } else {
    Checkpoint<T> out;
    out.params = cast_params<T>(in.params);
    if (in.optimizer) {
      OptimizerState<T> st;
      st.step = in.optimizer->step;
      st.m = cast_params<T>(in.optimizer->m);
      st.v = cast_params<T>(in.optimizer->v);
      out.optimizer = std::move(st);
    }
    out.train_config = std::move(in.train_config);
    out.stored_dtype = in.stored_dtype;
    return out;
  }
}

} // namespace

template <class S>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<S>& params,
                     const OptimizerState<S>* optimizer, const std::string& train_config) {
  Writer w;
  w.bytes("SFCK", 4);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint32_t>(sizeof(S));
  w.text(params.config.to_text());
  const auto records = tensor_records(params);
  w.pod<std::uint64_t>(records.size());
  std::uint64_t payload = 0;
  for (const auto& rec : records) {
    w.pod<std::uint32_t>(std::uint32_t(rec.name.size()));
    w.bytes(rec.name.data(), rec.name.size());
    w.pod<std::uint32_t>(std::uint32_t(rec.dims.size()));
    std::uint64_t count = 1;
    for (auto d : rec.dims) {
      w.pod<std::uint64_t>(d);
      count *= d;
    }
    w.pod<std::uint64_t>(rec.offset);
    payload += count * sizeof(S);
  }
  w.pod<std::uint64_t>(payload);
  write_payload(w, params);
  w.pod<std::uint8_t>(optimizer ? 1 : 0);
  if (optimizer) {
    w.pod<std::uint64_t>(std::uint64_t(optimizer->step));
    w.text(train_config);
    write_payload(w, optimizer->m);
    write_payload(w, optimizer->v);
  }
  auto& buf = w.buffer();
  const auto crc = std::uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), uInt(buf.size())));
  w.pod<std::uint32_t>(crc);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp + "' for writing");
    os.write(buf.data(), std::streamsize(buf.size()));
    if (!os) throw IoError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

template <class S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 16) throw CheckpointError("checkpoint '" + path.string() + "' is truncated");
  if (std::memcmp(buf.data(), "SFCK", 4) != 0) throw CheckpointError("'" + path.string() + "' is not a checkpoint");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  const auto crc = std::uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), uInt(buf.size() - 4)));

  Reader r(buf.data(), buf.size() - 4);
  char magic[4];
  r.bytes(magic, 4);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  if (crc != stored_crc) throw CheckpointError("checkpoint '" + path.string() + "' is truncated or corrupt (CRC)");
  const auto dtype = r.pod<std::uint32_t>();
  if (dtype != 4 && dtype != 8) throw CheckpointError("unsupported checkpoint dtype " + std::to_string(dtype));
  ModelConfig config = ModelConfig::from_text(r.text(1 << 20));
  const std::string mismatch = expected ? first_config_mismatch(config, *expected) : std::string();
  const auto count = r.pod<std::uint64_t>();
  if (count > (1u << 20)) throw CheckpointError("corrupt tensor count");
  std::vector<TensorRecord> records(count);
  for (auto& rec : records) {
    const auto len = r.pod<std::uint32_t>();
    if (len > 4096) throw CheckpointError("corrupt tensor name length");
    rec.name.resize(len);
    r.bytes(rec.name.data(), len);
    const auto ndim = r.pod<std::uint32_t>();
    if (ndim < 1 || ndim > 2) throw CheckpointError("tensor '" + rec.name + "' has unsupported rank");
    rec.dims.resize(ndim);
    for (auto& d : rec.dims) d = r.pod<std::uint64_t>();
    rec.offset = r.pod<std::uint64_t>();
  }
  if (!mismatch.empty()) {
    auto want = *expected;
    want.max_patches = config.max_patches;
    want.rope_scale = config.rope_scale;
    const auto wanted = tensor_records(ModelParams<float>::zeros(want));
    std::string tensor = "(none)";
    for (std::size_t i = 0; i < std::max(records.size(), wanted.size()); ++i) {
      if (i < records.size() && i < wanted.size() && records[i].name == wanted[i].name &&
          records[i].dims == wanted[i].dims)
        continue;
      tensor = i < wanted.size() ? wanted[i].name : records[i].name;
      break;
    }
    throw CheckpointError("checkpoint does not match the model config: first mismatched tensor '" + tensor +
                          "'; " + mismatch);
  }
  if (dtype == 4) return convert<S>(decode<float>(r, config, records));
  return convert<S>(decode<double>(r, config, records));
}

// ---------------------------------------------------------------------------
// Training loop.

Series draw_training_window(MixtureSampler& data, const ModelConfig& model, const TrainConfig& config, Index step,
                            std::mt19937_64& rng) {
  const Index length = (model.max_patches + model.stp_blocks + 1) * model.patch_len;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool flip = u(rng) < config.flip_prob;
  const bool resample_it = u(rng) < config.resample_prob;
  const auto& factors = augmentation_factors();
  const ResampleFactor factor = factors[std::size_t(std::uniform_int_distribution<std::size_t>(0, factors.size() - 1)(rng))];
  const Index source = data.pick_source(rng);
  WindowSampler& sampler = data.source(source);

  Series window;
  if (resample_it && factor.num != factor.den) {
    const Index raw = Index(std::llround(double(length) * double(factor.den) / double(factor.num)));
    try {
      window = resample_to_length(sampler.sample_span(std::max<Index>(raw, 4), step, rng), length);
    } catch (const SamplerError&) {
      window.clear();
    }
  }
  if (window.empty()) window = sampler.sample_span(length, step, rng);
  if (flip) value_flip(window);
  return window;
}

template <class S>
std::vector<Patches<S>> training_batch(MixtureSampler& data, const ModelConfig& model, const TrainConfig& config,
                                       Index step) {
  std::mt19937_64 rng(sub_seed(config.seed, std::uint64_t(step)));
  std::vector<Patches<S>> out;
  out.reserve(std::size_t(config.batch_size));
  for (Index b = 0; b < config.batch_size; ++b) {
    const Series w = draw_training_window(data, model, config, step, rng);
    out.push_back(prepare_window<S>(w, model.max_patches, model.patch_len));
  }
  return out;
}

template <class S>
TrainRun<S> train_loop(ModelParams<S> params, OptimizerState<S> state, MixtureSampler& data,
                       const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  TrainRun<S> run;
  for (Index step = state.step; step < config.steps; ++step) {
    const auto batch = training_batch<S>(data, params.config, config, step);
    StepReport rep = train_step<S>(params, state, batch, config);
    if (rep.skipped) {
      // Parameters and moments stay as they were; the schedule moves on.
      state.step = step + 1;
      ++run.skipped;
    }
    run.history.push_back(rep);
    if (hooks.on_step) hooks.on_step(rep);
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0) {
      if (!hooks.checkpoint_dir.empty()) {
        std::filesystem::create_directories(hooks.checkpoint_dir);
        save_checkpoint<S>(hooks.checkpoint_dir / ("step-" + std::to_string(step + 1) + ".sfck"), params, &state,
                           config.to_text());
      }
      if (hooks.on_interval) hooks.on_interval(step + 1);
    }
  }
  run.params = std::move(params);
  run.state = std::move(state);
  return run;
}

template <class S>
TrainRun<S> run_pretrain(const ModelConfig& model, const TrainConfig& config, MixtureSampler& data,
                         const TrainHooks& hooks) {
  TrainConfig cfg = config;
  cfg.stage = Stage::Pretrain;
  ModelConfig m = model;
  if (cfg.max_patches > 0) m.max_patches = cfg.max_patches;
  auto params = ModelParams<S>::init(m, cfg.seed);
  return train_loop<S>(std::move(params), OptimizerState<S>::zeros(m), data, cfg, hooks);
}

template <class S>
TrainRun<S> run_posttrain(const ModelParams<S>& pretrained, const TrainConfig& config, MixtureSampler& data,
                          const TrainHooks& hooks) {
  TrainConfig cfg = config;
  cfg.stage = Stage::Posttrain;
  ModelParams<S> params = pretrained;
  if (cfg.max_patches > params.config.max_patches) params = extend_context(params, cfg.max_patches);
  const ModelConfig m = params.config;
  return train_loop<S>(std::move(params), OptimizerState<S>::zeros(m), data, cfg, hooks);
}

// ---------------------------------------------------------------------------
// Gradient check.

std::vector<GradCheckReport> gradient_check_suite(const ModelConfig& config, const GradCheckOptions& options) {
  config.validate();
  const Index n_ctx = config.max_patches;
  const Index p = config.patch_len;
  const Index len = (n_ctx + config.stp_blocks + 1) * p;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Patches<double>> windows;
  for (Index b = 0; b < options.batch; ++b) {
    const double period = 3.0 + 9.0 * unif(rng), phase = 6.283 * unif(rng), slope = unif(rng) - 0.5;
    std::vector<double> x(std::size_t(len), 0.0);
    for (Index t = 0; t < len; ++t)
      x[std::size_t(t)] = std::sin(6.283185307179586 * double(t) / period + phase) + 0.05 * slope * double(t) + noise(rng);
    windows.push_back(prepare_window<double>(x, n_ctx, p));
  }
  const auto params = ModelParams<double>::init(config, options.seed);
  const auto weights = stp_weights(config.stp_blocks, options.stage);

  ModelParams<double> analytic;
  batch_objective<double>(params, windows, n_ctx, weights, options.alpha, &analytic);
  if (options.corrupt) options.corrupt(analytic);
  const std::function<double(const ModelParams<double>&)> loss = [&](const ModelParams<double>& q) {
    return batch_objective<double>(q, windows, n_ctx, weights, options.alpha).total;
  };
  const auto numeric = finite_diff_gradient(loss, params, options.epsilon);
  return compare_gradients(analytic, numeric, std::function<std::string(std::string_view)>(parameter_family),
                           options.tolerance);
}

#define SF_INSTANTIATE(S)                                                                                      \
  template Patches<S> prepare_window<S>(std::span<const double>, Index, Index);                                \
  template BatchLoss batch_objective<S>(const ModelParams<S>&, const std::vector<Patches<S>>&, Index,           \
                                        const std::vector<double>&, double, ModelParams<S>*, Index);            \
  template double global_norm<S>(const ModelParams<S>&);                                                        \
  template double clip_global_norm<S>(ModelParams<S>&, double);                                                 \
  template struct OptimizerState<S>;                                                                            \
  template void adamw_update<S>(ModelParams<S>&, const ModelParams<S>&, OptimizerState<S>&, const TrainConfig&, \
                                double);                                                                        \
  template StepReport train_step<S>(ModelParams<S>&, OptimizerState<S>&, const std::vector<Patches<S>>&,        \
                                    const TrainConfig&);                                                        \
  template ModelParams<S> extend_context<S>(const ModelParams<S>&, Index);                                      \
  template void save_checkpoint<S>(const std::filesystem::path&, const ModelParams<S>&, const OptimizerState<S>*, \
                                   const std::string&);                                                         \
  template Checkpoint<S> load_checkpoint<S>(const std::filesystem::path&, const ModelConfig*);                  \
  template std::vector<Patches<S>> training_batch<S>(MixtureSampler&, const ModelConfig&, const TrainConfig&,    \
                                                     Index);                                                    \
  template TrainRun<S> train_loop<S>(ModelParams<S>, OptimizerState<S>, MixtureSampler&, const TrainConfig&,     \
                                     const TrainHooks&);                                                        \
  template TrainRun<S> run_pretrain<S>(const ModelConfig&, const TrainConfig&, MixtureSampler&,                  \
                                       const TrainHooks&);                                                      \
  template TrainRun<S> run_posttrain<S>(const ModelParams<S>&, const TrainConfig&, MixtureSampler&,              \
                                        const TrainHooks&);

SF_INSTANTIATE(float)
SF_INSTANTIATE(double)
#undef SF_INSTANTIATE

} // namespace sf
