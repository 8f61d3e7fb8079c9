#include "sf/dataloader.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sf {

namespace fs = std::filesystem;

namespace {

std::uint32_t crc_of(const std::vector<char>& buf) {
  return std::uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), uInt(buf.size())));
}

template <class T>
void put(std::vector<char>& buf, T v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  buf.insert(buf.end(), p, p + sizeof v);
}

std::vector<char> slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::vector<char>& buf) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(buf.data(), std::streamsize(buf.size()));
  os.flush();
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\"");
  return s.substr(b, e - b + 1);
}

} // namespace

fs::path data_root() {
  const char* env = std::getenv("SF_DATA_DIR");
  return env && *env ? fs::path(env) : fs::current_path();
}

// ---------------------------------------------------------------------------
// Manifest.

std::uint64_t ShardManifest::total_points() const {
  std::uint64_t n = 0;
  for (const auto& s : shards) n += s.points;
  return n;
}

std::uint64_t ShardManifest::total_series() const {
  std::uint64_t n = 0;
  for (const auto& s : shards) n += s.series;
  for (const auto& sp : splits) n -= sp.segments - 1;
  return n;
}

void ShardManifest::save() const {
  std::ostringstream os;
  os << "sfshards " << version << '\n'
     << "root_seed " << root_seed << '\n'
     << "shard_bytes " << shard_bytes << '\n';
  for (const auto& s : shards) os << "shard " << s.file << ' ' << s.bytes << ' ' << s.series << ' ' << s.points << '\n';
  for (const auto& sp : splits) os << "split " << sp.series_id << ' ' << sp.segments << '\n';
  os << "end\n";
  const std::string text = os.str();
  std::vector<char> buf(text.begin(), text.end());
  put<std::uint32_t>(buf, std::uint32_t(shards.size()));
  for (const auto& s : shards) put<std::uint32_t>(buf, s.crc);
  write_file(dir / kManifestName, buf);
}

ShardManifest ShardManifest::load(const fs::path& dir) {
  const auto buf = slurp(dir / kManifestName);
  const std::string all(buf.begin(), buf.end());
  const auto end = all.find("\nend\n");
  if (end == std::string::npos) throw IoError("manifest in '" + dir.string() + "' has no end marker");
  ShardManifest m;
  m.dir = dir;
  std::istringstream is(all.substr(0, end + 1));
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "sfshards") {
      ls >> m.version;
      if (m.version != kManifestVersion) throw IoError("unsupported manifest version " + std::to_string(m.version));
      header = true;
    } else if (tag == "root_seed") {
      ls >> m.root_seed;
    } else if (tag == "shard_bytes") {
      ls >> m.shard_bytes;
    } else if (tag == "shard") {
      ShardEntry e;
      ls >> e.file >> e.bytes >> e.series >> e.points;
      m.shards.push_back(e);
    } else if (tag == "split") {
      SplitEntry sp;
      ls >> sp.series_id >> sp.segments;
      m.splits.push_back(sp);
    } else if (!tag.empty()) {
      throw IoError("manifest: unknown line '" + line + "'");
    }
    if (ls.fail()) throw IoError("manifest: malformed line '" + line + "'");
  }
  if (!header) throw IoError("manifest: missing header");
  const std::size_t footer = end + 5;
  if (buf.size() < footer + 4) throw IoError("manifest footer truncated");
  std::uint32_t count;
  std::memcpy(&count, buf.data() + footer, 4);
  if (count != m.shards.size() || buf.size() != footer + 4 + 4 * std::size_t(count))
    throw IoError("manifest footer does not match its shard list");
  for (std::size_t i = 0; i < m.shards.size(); ++i) std::memcpy(&m.shards[i].crc, buf.data() + footer + 4 + 4 * i, 4);
  return m;
}

// ---------------------------------------------------------------------------
// Writing.

ShardManifest build_shards(const std::vector<Series>& series, std::uint64_t shard_bytes, const fs::path& out_dir,
                           std::uint64_t root_seed) {
  if (series.empty()) throw InputError("build_shards: no input series");
  if (shard_bytes < kMiB) throw ConfigError("build_shards: shard_bytes must be at least 1 MiB");
  for (const auto& s : series)
    if (s.empty()) throw InputError("build_shards: empty series");

  ShardManifest m;
  m.root_seed = root_seed;
  m.shard_bytes = shard_bytes;
  m.dir = out_dir;
  std::vector<fs::path> written;
  try {
    fs::create_directories(out_dir);
    const std::uint64_t max_points = (shard_bytes - 16) / 4;
    std::vector<char> buf;
    ShardEntry cur;
    auto flush = [&] {
      if (buf.empty()) return;
      char name[32];
      std::snprintf(name, sizeof name, "shard-%05zu.bin", m.shards.size());
      cur.file = name;
      cur.bytes = buf.size();
      cur.crc = crc_of(buf);
      written.push_back(out_dir / cur.file);
      write_file(written.back(), buf);
      m.shards.push_back(cur);
      cur = ShardEntry{};
      buf.clear();
    };
    for (std::size_t id = 0; id < series.size(); ++id) {
      const auto& s = series[id];
      const std::uint64_t segments = (s.size() + max_points - 1) / max_points;
      if (segments > 1) m.splits.push_back({id, segments});
      for (std::uint64_t seg = 0; seg < segments; ++seg) {
        const std::uint64_t begin = seg * max_points;
        const std::uint64_t len = std::min<std::uint64_t>(max_points, s.size() - begin);
        if (!buf.empty() && buf.size() + record_bytes(len) > shard_bytes) flush();
        put<std::uint64_t>(buf, id);
        put<std::uint64_t>(buf, len);
        for (std::uint64_t t = 0; t < len; ++t) put<float>(buf, float(s[begin + t]));
        cur.series += 1;
        cur.points += len;
      }
    }
    flush();
    m.save();
    return m;
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    fs::remove(out_dir / kManifestName, ec);
    throw;
  }
}

// ---------------------------------------------------------------------------
// Reading.

std::vector<std::uint64_t> LoadedShard::eligible(Index window) const {
  std::vector<std::uint64_t> out(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto len = Index(records[i].values.size());
    out[i] = len >= window ? std::uint64_t(len - window + 1) : 0;
  }
  return out;
}

LoadedShard read_shard(const ShardManifest& manifest, Index shard) {
  if (shard < 0 || shard >= Index(manifest.shards.size())) throw InputError("read_shard: index out of range");
  const auto& entry = manifest.shards[std::size_t(shard)];
  const auto buf = slurp(manifest.dir / entry.file);
  if (buf.size() != entry.bytes)
    throw ChecksumError("shard '" + entry.file + "' has " + std::to_string(buf.size()) + " bytes, manifest says " +
                        std::to_string(entry.bytes));
  if (crc_of(buf) != entry.crc) throw ChecksumError("shard '" + entry.file + "' fails its CRC32 check");
  LoadedShard out;
  out.index = shard;
  out.bytes = buf.size();
  std::size_t pos = 0;
  while (pos < buf.size()) {
    if (buf.size() - pos < 16) throw ChecksumError("shard '" + entry.file + "' ends inside a record header");
    SeriesRecord rec;
    std::uint64_t len;
    std::memcpy(&rec.id, buf.data() + pos, 8);
    std::memcpy(&len, buf.data() + pos + 8, 8);
    pos += 16;
    if (len > (buf.size() - pos) / 4) throw ChecksumError("shard '" + entry.file + "' ends inside a record");
    rec.values.resize(len);
    std::memcpy(rec.values.data(), buf.data() + pos, 4 * len);
    pos += 4 * len;
    out.records.push_back(std::move(rec));
  }
  if (out.records.size() != entry.series) throw ChecksumError("shard '" + entry.file + "' record count mismatch");
  return out;
}

std::vector<Series> read_all_series(const ShardManifest& manifest) {
  std::vector<Series> out;
  std::uint64_t last_id = 0;
  for (Index s = 0; s < Index(manifest.shards.size()); ++s) {
    for (auto& rec : read_shard(manifest, s).records) {
      if (out.empty() || rec.id != last_id) out.emplace_back();
      out.back().insert(out.back().end(), rec.values.begin(), rec.values.end());
      last_id = rec.id;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Queue.

ShardQueue::ShardQueue(ShardManifest manifest, Index capacity) : manifest_(std::move(manifest)), capacity_(capacity) {
  if (capacity < 1) throw ConfigError("shard queue capacity must be >= 1");
  if (manifest_.shards.empty()) throw InputError("shard queue: manifest lists no shards");
}

std::shared_ptr<const LoadedShard> ShardQueue::acquire(Index shard) {
  std::lock_guard lock(mutex_);
  if (auto it = loaded_.find(shard); it != loaded_.end()) {
    order_.remove(shard);
    order_.push_front(shard);
    return it->second;
  }
  auto ptr = std::make_shared<const LoadedShard>(read_shard(manifest_, shard));
  stats_.loads += 1;
  stats_.resident_bytes += ptr->bytes;
  stats_.peak_resident_bytes = std::max(stats_.peak_resident_bytes, stats_.resident_bytes);
  loaded_.emplace(shard, ptr);
  order_.push_front(shard);
  while (Index(order_.size()) > capacity_) {
    const Index victim = order_.back();
    order_.pop_back();
    stats_.resident_bytes -= loaded_.at(victim)->bytes;
    loaded_.erase(victim);
    stats_.evictions += 1;
  }
  return ptr;
}

QueueStats ShardQueue::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

bool ShardQueue::resident(Index shard) const {
  std::lock_guard lock(mutex_);
  return loaded_.count(shard) > 0;
}

// ---------------------------------------------------------------------------
// Sampling.

Series WindowSample::window() const {
  Series w = input;
  w.insert(w.end(), targets.begin(), targets.end());
  return w;
}

Series sample_span(const std::vector<std::shared_ptr<const LoadedShard>>& shards, Index length,
                   std::mt19937_64& rng) {
  if (length < 1) throw InputError("sample_span: length must be >= 1");
  std::vector<std::vector<std::uint64_t>> counts;
  std::uint64_t total = 0;
  for (const auto& s : shards) {
    counts.push_back(s->eligible(length));
    for (auto c : counts.back()) total += c;
  }
  if (total == 0)
    throw SamplerError("no active series holds a window of " + std::to_string(length) + " points");
  std::uniform_int_distribution<std::uint64_t> pick(0, total - 1);
  std::uint64_t k = pick(rng);
  for (std::size_t s = 0; s < shards.size(); ++s) {
    for (std::size_t r = 0; r < counts[s].size(); ++r) {
      if (k < counts[s][r]) {
        const auto& v = shards[s]->records[r].values;
        return Series(v.begin() + std::ptrdiff_t(k), v.begin() + std::ptrdiff_t(k) + length);
      }
      k -= counts[s][r];
    }
  }
  throw SamplerError("sample_span: window index out of range");
}

WindowSampler::WindowSampler(ShardManifest manifest, Index active, Index rotate_every, std::uint64_t seed,
                             Index source)
    : queue_(std::move(manifest), active), active_(active), rotate_every_(rotate_every), source_(source) {
  if (rotate_every < 1) throw ConfigError("rotate_every must be >= 1");
  permutation_.resize(queue_.manifest().shards.size());
  for (std::size_t i = 0; i < permutation_.size(); ++i) permutation_[i] = Index(i);
  std::mt19937_64 rng(sub_seed(seed, 0x5348415244ull));
  std::shuffle(permutation_.begin(), permutation_.end(), rng);
}

std::vector<Index> WindowSampler::active_shards(Index step) const {
  const Index n = Index(permutation_.size());
  const Index a = std::min(active_, n);
  const Index start = ((step / rotate_every_) * a) % n;
  std::vector<Index> out;
  for (Index i = 0; i < a; ++i) out.push_back(permutation_[std::size_t((start + i) % n)]);
  return out;
}

Series WindowSampler::sample_span(Index length, Index step, std::mt19937_64& rng) {
  std::vector<std::shared_ptr<const LoadedShard>> shards;
  for (Index s : active_shards(step)) shards.push_back(queue_.acquire(s));
  return sf::sample_span(shards, length, rng);
}

WindowSample WindowSampler::sample_window(Index n, Index p, Index h, Index step, std::mt19937_64& rng) {
  if (n < 1 || p < 1 || h < 0) throw ConfigError("sample_window: need N >= 1, P >= 1, H >= 0");
  Series span = sample_span((n + h + 1) * p, step, rng);
  WindowSample out;
  out.input.assign(span.begin(), span.begin() + n * p);
  out.targets.assign(span.begin() + n * p, span.end());
  out.source = source_;
  return out;
}

MixtureSampler::MixtureSampler(std::vector<WindowSampler*> sources, std::vector<double> weights)
    : sources_(std::move(sources)), weights_(std::move(weights)) {
  if (sources_.empty() || sources_.size() != weights_.size())
    throw ConfigError("mixture: need one weight per source");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw ConfigError("mixture: weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw ConfigError("mixture: weights must not all be zero");
}

Index MixtureSampler::pick_source(std::mt19937_64& rng) {
  if (sources_.size() == 1) return 0;
  std::discrete_distribution<Index> d(weights_.begin(), weights_.end());
  return d(rng);
}

WindowSample MixtureSampler::sample_window(Index n, Index p, Index h, Index step, std::mt19937_64& rng) {
  const Index s = pick_source(rng);
  WindowSample w = sources_[std::size_t(s)]->sample_window(n, p, h, step, rng);
  w.source = s;
  return w;
}

// ---------------------------------------------------------------------------
// CSV.

Series read_csv_series(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw InputError("'" + path.string() + "' is empty");
  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header.push_back(trim(cell));
  }
  const auto it = std::find(header.begin(), header.end(), "value");
  if (it == header.end()) throw InputError("'" + path.string() + "' has no 'value' column");
  const auto col = std::size_t(it - header.begin());
  Series out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    for (std::size_t c = 0; c <= col; ++c)
      if (!std::getline(ls, cell, ',')) throw InputError(path.string() + ":" + std::to_string(row) + ": missing column");
    cell = trim(cell);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw InputError(path.string() + ":" + std::to_string(row) + ": not a number: '" + cell + "'");
    }
  }
  if (out.empty()) throw InputError("'" + path.string() + "' holds no values");
  return out;
}

void write_csv_series(const fs::path& path, const Series& series) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.precision(17);
  os << "value\n";
  for (double v : series) os << v << '\n';
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

} // namespace sf
