#pragma once

// Shard files, their manifest, an LRU queue of resident shards, and window
// samplers over it.
//
// Shard record (little-endian): u64 series id, u64 length, length x f32.
// The manifest is a text index ending in a line "end", followed by a binary
// footer: u32 shard count, then one u32 CRC32 per shard.

#include <cstdint>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "sf/datagen.hpp"

namespace sf {

inline constexpr std::uint64_t kMiB = std::uint64_t(1) << 20;
inline constexpr std::uint64_t kDefaultShardBytes = 4 * kMiB;
inline constexpr std::uint32_t kManifestVersion = 1;
inline constexpr const char* kManifestName = "manifest.txt";

/// $SF_DATA_DIR when set, else the current directory.
std::filesystem::path data_root();

struct ShardEntry {
  std::string file;  // relative to the manifest directory
  std::uint64_t bytes = 0;
  std::uint64_t series = 0;  // records, counting split segments
  std::uint64_t points = 0;
  std::uint32_t crc = 0;
};

struct SplitEntry {
  std::uint64_t series_id = 0;
  std::uint64_t segments = 0;
};

struct ShardManifest {
  std::uint32_t version = kManifestVersion;
  std::uint64_t root_seed = 0;
  std::uint64_t shard_bytes = kDefaultShardBytes;
  std::vector<ShardEntry> shards;
  std::vector<SplitEntry> splits;
  std::filesystem::path dir;

  std::uint64_t total_points() const;
  std::uint64_t total_series() const;  // input series, not segments
  void save() const;
  static ShardManifest load(const std::filesystem::path& dir);
};

inline std::uint64_t record_bytes(std::uint64_t points) { return 16 + 4 * points; }

/// Writes `series` into shard files of at most shard_bytes each. A series
/// never straddles two shards; one that does not fit in a single shard is cut
/// into independent segments (same id) recorded in the manifest. On failure
/// every file written so far is removed.
ShardManifest build_shards(const std::vector<Series>& series, std::uint64_t shard_bytes,
                           const std::filesystem::path& out_dir, std::uint64_t root_seed = 0);

struct SeriesRecord {
  std::uint64_t id = 0;
  std::vector<float> values;
};

struct LoadedShard {
  Index index = 0;
  std::uint64_t bytes = 0;
  std::vector<SeriesRecord> records;

  /// Number of length-`window` windows inside each record, and their total.
  std::vector<std::uint64_t> eligible(Index window) const;
};

/// Reads and checksum-verifies one shard file.
LoadedShard read_shard(const ShardManifest& manifest, Index shard);

/// Every stored series in id order, split segments joined, as doubles.
std::vector<Series> read_all_series(const ShardManifest& manifest);

struct QueueStats {
  Index loads = 0;
  Index evictions = 0;
  std::uint64_t resident_bytes = 0;
  std::uint64_t peak_resident_bytes = 0;
};

/// At most `capacity` shards resident; least recently acquired is evicted.
/// Acquired shards stay valid for their holder after eviction.
class ShardQueue {
 public:
  ShardQueue(ShardManifest manifest, Index capacity);

  std::shared_ptr<const LoadedShard> acquire(Index shard);
  const ShardManifest& manifest() const { return manifest_; }
  Index capacity() const { return capacity_; }
  QueueStats stats() const;
  bool resident(Index shard) const;

 private:
  ShardManifest manifest_;
  Index capacity_;
  mutable std::mutex mutex_;
  std::list<Index> order_;  // front = most recent
  std::unordered_map<Index, std::shared_ptr<const LoadedShard>> loaded_;
  QueueStats stats_;
};

struct WindowSample {
  Series input;    // N * P values
  Series targets;  // (H + 1) * P values that follow the input
  Index source = 0;

  Series window() const;
};

/// Draws windows from one shard collection. The active shard set at a given
/// training step is a deterministic function of (seed, step): a seeded
/// permutation of shards walked `active` shards at a time, advancing every
/// `rotate_every` steps.
class WindowSampler {
 public:
  WindowSampler(ShardManifest manifest, Index active, Index rotate_every = 100, std::uint64_t seed = 0,
                Index source = 0);

  std::vector<Index> active_shards(Index step) const;

  /// A uniformly random contiguous span of `length` points within one series
  /// of the active set, shards weighted by their eligible-span counts.
  Series sample_span(Index length, Index step, std::mt19937_64& rng);

  WindowSample sample_window(Index n, Index p, Index h, Index step, std::mt19937_64& rng);


  ShardQueue& queue() { return queue_; }
  Index source() const { return source_; }

 private:
  ShardQueue queue_;
  Index active_;
  Index rotate_every_;
  std::vector<Index> permutation_;
  Index source_;
};

/// Span sampling on an explicit set of in-memory shards.
Series sample_span(const std::vector<std::shared_ptr<const LoadedShard>>& shards, Index length,
                   std::mt19937_64& rng);

/// Picks a source with probability weight / sum(weights), then samples from it.
class MixtureSampler {
 public:
  MixtureSampler(std::vector<WindowSampler*> sources, std::vector<double> weights);

  Index pick_source(std::mt19937_64& rng);
  WindowSample sample_window(Index n, Index p, Index h, Index step, std::mt19937_64& rng);
  WindowSampler& source(Index i) { return *sources_[std::size_t(i)]; }
  Index size() const { return Index(sources_.size()); }

 private:
  std::vector<WindowSampler*> sources_;
  std::vector<double> weights_;
};

/// One series from a CSV file with a `value` column.
Series read_csv_series(const std::filesystem::path& path);
void write_csv_series(const std::filesystem::path& path, const Series& series);

} // namespace sf
