#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "sf/numerics.hpp"

namespace sf {

/// Ascending quantile levels in (0, 1).
struct QuantileGrid {
  std::vector<double> levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

  Index size() const { return Index(levels.size()); }
  /// Index of the level closest to 0.5 (the feedback quantile).
  Index median_index() const;
  void validate() const;

  bool operator==(const QuantileGrid&) const = default;
};

enum class StpVariant {
  Serial,      // fuse with the token's own initial embedding
  ShiftToken,  // fuse with the initial embedding of the token j steps ahead
};

std::string to_string(StpVariant v);
StpVariant parse_stp_variant(std::string_view s);

struct ModelConfig {
  Index dim = 64;          // D
  Index patch_len = 8;     // P
  Index max_patches = 32;  // N_max
  Index main_blocks = 4;   // L
  Index stp_blocks = 4;    // H
  Index experts = 8;       // E
  Index top_k = 2;         // K
  Index heads = 0;         // 0: max(1, D / 64)
  Index ffn_dim = 0;       // 0: 2D
  Index embed_hidden = 0;  // 0: D
  QuantileGrid quantiles;
  double theta_base = 10000.0;
  double rope_scale = 1.0;  // < 1 interpolates positions after context extension
  double rms_eps = 1e-6;
  StpVariant stp_variant = StpVariant::Serial;

  Index n_heads() const { return heads > 0 ? heads : std::max<Index>(1, dim / 64); }
  Index head_dim() const { return dim / n_heads(); }
  Index d_ff() const { return ffn_dim > 0 ? ffn_dim : 2 * dim; }
  Index d_embed_hidden() const { return embed_hidden > 0 ? embed_hidden : dim; }
  Index n_quantiles() const { return quantiles.size(); }
  /// Native single-pass horizon (H + 1) * P.
  Index native_horizon() const { return (stp_blocks + 1) * patch_len; }

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  /// Shape-relevant fields as `key=value` lines (stable order).
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);

  /// Assigns one `key=value` pair; throws ConfigError on unknown keys.
  void set(std::string_view key, std::string_view value);

  /// D=1024, P=16, N=180 (2880 points), L=24, H=16, E=32, K=2.
  static ModelConfig large();
  /// D=16, P=4, N=4, L=2, H=2, E=4, K=2, Q=3: the gradient-check config.
  static ModelConfig tiny_reference();
  /// D=64, L=4, H=4, E=8, K=2, N=32, P=8.
  static ModelConfig desk();

  bool operator==(const ModelConfig&) const = default;
};

} // namespace sf
