#include "sf/config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace sf {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

Index parse_index(std::string_view key, std::string_view v) {
  Index out = 0;
  const auto s = trim(v);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("invalid integer for '" + std::string(key) + "': " + s);
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  const auto s = trim(v);
  try {
    std::size_t used = 0;
    const double out = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for '" + std::string(key) + "': " + s);
  }
}

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

} // namespace

Index QuantileGrid::median_index() const {
  Index best = 0;
  for (Index k = 1; k < size(); ++k)
    if (std::abs(levels[std::size_t(k)] - 0.5) < std::abs(levels[std::size_t(best)] - 0.5)) best = k;
  return best;
}

void QuantileGrid::validate() const {
  if (levels.empty()) throw ConfigError("quantile grid is empty");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (!(levels[k] > 0.0 && levels[k] < 1.0)) throw ConfigError("quantile level outside (0, 1)");
    if (k > 0 && !(levels[k] > levels[k - 1]))
      throw ConfigError("quantile levels must be strictly increasing");
  }
}

std::string to_string(StpVariant v) { return v == StpVariant::Serial ? "serial" : "shift_token"; }

StpVariant parse_stp_variant(std::string_view s) {
  if (s == "serial") return StpVariant::Serial;
  if (s == "shift_token") return StpVariant::ShiftToken;
  throw ConfigError("unknown stp_variant '" + std::string(s) + "' (serial|shift_token)");
}

void ModelConfig::validate() const {
  if (dim < 1 || patch_len < 1 || max_patches < 1) throw ConfigError("dim, patch_len, max_patches must be >= 1");
  if (main_blocks < 0 || stp_blocks < 0) throw ConfigError("block counts must be non-negative");
  if (experts < 1 || top_k < 1 || top_k > experts) throw ConfigError("require 1 <= top_k <= experts");
  if (heads < 0 || dim % n_heads() != 0) throw ConfigError("dim must be divisible by the head count");
  if (head_dim() % 2 != 0) throw ConfigError("head dimension must be even for rotary embedding");
  if (!(theta_base > 1.0)) throw ConfigError("theta_base must exceed 1");
  if (!(rope_scale > 0.0)) throw ConfigError("rope_scale must be positive");
  if (!(rms_eps > 0.0)) throw ConfigError("rms_eps must be positive");
  quantiles.validate();
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "dim=" << dim << '\n'
     << "patch_len=" << patch_len << '\n'
     << "max_patches=" << max_patches << '\n'
     << "main_blocks=" << main_blocks << '\n'
     << "stp_blocks=" << stp_blocks << '\n'
     << "experts=" << experts << '\n'
     << "top_k=" << top_k << '\n'
     << "heads=" << heads << '\n'
     << "ffn_dim=" << ffn_dim << '\n'
     << "embed_hidden=" << embed_hidden << '\n'
     << "quantiles=";
  for (std::size_t k = 0; k < quantiles.levels.size(); ++k)
    os << (k ? "," : "") << format_real(quantiles.levels[k]);
  os << '\n'
     << "theta_base=" << format_real(theta_base) << '\n'
     << "rope_scale=" << format_real(rope_scale) << '\n'
     << "rms_eps=" << format_real(rms_eps) << '\n'
     << "stp_variant=" << to_string(stp_variant) << '\n';
  return os.str();
}

void ModelConfig::set(std::string_view key, std::string_view value) {
  if (key == "dim") dim = parse_index(key, value);
  else if (key == "patch_len") patch_len = parse_index(key, value);
  else if (key == "max_patches") max_patches = parse_index(key, value);
  else if (key == "main_blocks") main_blocks = parse_index(key, value);
  else if (key == "stp_blocks") stp_blocks = parse_index(key, value);
  else if (key == "experts") experts = parse_index(key, value);
  else if (key == "top_k") top_k = parse_index(key, value);
  else if (key == "heads") heads = parse_index(key, value);
  else if (key == "ffn_dim") ffn_dim = parse_index(key, value);
  else if (key == "embed_hidden") embed_hidden = parse_index(key, value);
  else if (key == "theta_base") theta_base = parse_real(key, value);
  else if (key == "rope_scale") rope_scale = parse_real(key, value);
  else if (key == "rms_eps") rms_eps = parse_real(key, value);
  else if (key == "stp_variant") stp_variant = parse_stp_variant(trim(value));
  else if (key == "quantiles") {
    quantiles.levels.clear();
    std::string_view rest = value;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      quantiles.levels.push_back(parse_real(key, rest.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  } else {
    throw ConfigError("unknown model config key '" + std::string(key) + "'");
  }
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  ModelConfig c;
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

ModelConfig ModelConfig::large() {
  ModelConfig c;
  c.dim = 1024;
  c.patch_len = 16;
  c.max_patches = 180;
  c.main_blocks = 24;
  c.stp_blocks = 16;
  c.experts = 32;
  c.top_k = 2;
  return c;
}

ModelConfig ModelConfig::tiny_reference() {
  ModelConfig c;
  c.dim = 16;
  c.patch_len = 4;
  c.max_patches = 4;
  c.main_blocks = 2;
  c.stp_blocks = 2;
  c.experts = 4;
  c.top_k = 2;
  c.quantiles.levels = {0.1, 0.5, 0.9};
  return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

} // namespace sf
