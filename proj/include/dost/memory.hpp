#pragma once

// Streaming memory: the memory placeholder (ring buffer of the last L+H
// observations), the reservoir-sampled streaming memory buffer, and episodic
// batches drawn from it.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dost/errors.hpp"
#include "dost/io.hpp"
#include "dost/tensor.hpp"

namespace dost {

/// One labelled sample: x covers [origin-L+1, origin], y covers [origin+1, origin+H].
struct MemoryEntry {
  Tensor x;  // [L×N×d], raw units
  Tensor y;  // [H×N×d], raw units
  std::int64_t origin_time = 0;
};

/// Fixed-capacity ring of the most recent L+H observations X_t ∈ R^{N×d}.
class MemoryPlaceholder {
 public:
  MemoryPlaceholder(std::size_t lookback, std::size_t horizon, std::size_t locations, std::size_t features,
                    std::int64_t first_time = 0)
      : lookback_(lookback),
        horizon_(horizon),
        row_shape_{locations, features},
        slots_(lookback + horizon),
        next_time_(first_time) {
    if (lookback == 0 || horizon == 0) throw ConfigError("memory placeholder needs positive L and H");
  }

  std::size_t capacity() const { return slots_.size(); }
  std::size_t size() const { return static_cast<std::size_t>(std::min<std::uint64_t>(seen_, capacity())); }
  std::uint64_t seen() const { return seen_; }
  bool full() const { return seen_ >= capacity(); }

  /// Timestep of the most recent push.
  std::int64_t current_time() const { return next_time_ - 1; }

  void push(const Tensor& row) {
    if (row.shape() != row_shape_) {
      throw DimensionError("memory placeholder expects observations of shape " + shape_string(row_shape_) +
                           ", got " + shape_string(row.shape()));
    }
    slots_[head_] = row;
    head_ = (head_ + 1) % capacity();
    ++seen_;
    ++next_time_;
  }

  /// i-th oldest retained observation.
  const Tensor& at(std::size_t i) const {
    if (i >= size()) throw std::out_of_range("memory placeholder index out of range");
    const std::size_t start = full() ? head_ : 0;
    return slots_[(start + i) % capacity()];
  }

  std::vector<Tensor> contents() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i));
    return out;
  }

  /// Stacks the newest `count` observations into [count×N×d].
  Tensor latest(std::size_t count) const {
    if (count == 0 || count > size()) throw LengthError("not enough observations in the memory placeholder");
    return stack(size() - count, count);
  }

  /// The sample whose horizon became fully observed with the latest push.
  std::optional<MemoryEntry> extract() const {
    if (!full()) return std::nullopt;
    MemoryEntry e;
    e.x = stack(0, lookback_);
    e.y = stack(lookback_, horizon_);
    e.origin_time = current_time() - static_cast<std::int64_t>(horizon_);
    return e;
  }

 private:
  Tensor stack(std::size_t from, std::size_t count) const {
    const std::size_t row = shape_size(row_shape_);
    Tensor out(Shape{count, row_shape_[0], row_shape_[1]});
    for (std::size_t i = 0; i < count; ++i) {
      const Tensor& r = at(from + i);
      std::copy(r.raw(), r.raw() + row, out.raw() + i * row);
    }
    return out;
  }

  std::size_t lookback_, horizon_;
  Shape row_shape_;
  std::vector<Tensor> slots_;
  std::size_t head_ = 0;
  std::uint64_t seen_ = 0;
  std::int64_t next_time_ = 0;
};

/// Uniform draw without replacement from the buffer.
struct EpisodicBatch {
  std::vector<MemoryEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

/// M-slot reservoir (Vitter's Algorithm R). After n offers since the last
/// reset, each offered entry is present with probability min(1, M/n).
class StreamingMemoryBuffer {
 public:
  explicit StreamingMemoryBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("streaming memory buffer needs at least one slot");
    slots_.reserve(capacity);
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  std::uint64_t items_seen() const { return items_seen_; }
  const std::vector<MemoryEntry>& slots() const { return slots_; }

  /// Returns true when the entry was stored.
  template <typename Rng>
  bool offer(MemoryEntry entry, Rng& rng) {
    ++items_seen_;
    if (slots_.size() < capacity_) {
      slots_.push_back(std::move(entry));
      return true;
    }
    std::uniform_int_distribution<std::uint64_t> pick(0, items_seen_ - 1);
    const std::uint64_t j = pick(rng);
    if (j < capacity_) {
      slots_[static_cast<std::size_t>(j)] = std::move(entry);
      return true;
    }
    return false;
  }

  void reset() {
    slots_.clear();
    items_seen_ = 0;
  }

  template <typename Rng>
  EpisodicBatch sample(std::size_t count, Rng& rng) const {
    EpisodicBatch batch;
    const std::size_t k = std::min(count, slots_.size());
    if (k == 0) return batch;
    // Partial Fisher-Yates over slot indices.
    std::vector<std::size_t> idx(slots_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      batch.entries.push_back(slots_[idx[i]]);
    }
    return batch;
  }

  // Snapshot layout: manifest
  //   dost-smb 1
  //   capacity <M>
  //   items_seen <n>
  //   entries <count>
  //   x_shape <L> <N> <d>
  //   y_shape <H> <N> <d>
  // then per entry: origin_time as little-endian i64, x values, y values (f64).
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write memory snapshot " + path.string());
    out << "dost-smb 1\n" << "capacity " << capacity_ << '\n' << "items_seen " << items_seen_ << '\n';
    out << "entries " << slots_.size() << '\n';
    const Shape xs = slots_.empty() ? Shape{0, 0, 0} : slots_.front().x.shape();
    const Shape ys = slots_.empty() ? Shape{0, 0, 0} : slots_.front().y.shape();
    out << "x_shape " << xs[0] << ' ' << xs[1] << ' ' << xs[2] << '\n';
    out << "y_shape " << ys[0] << ' ' << ys[1] << ' ' << ys[2] << '\n';
    for (const auto& e : slots_) {
      io::write_i64(out, e.origin_time);
      io::write_f64(out, e.x.data());
      io::write_f64(out, e.y.data());
    }
    if (!out) throw ParseError("failed writing memory snapshot " + path.string());
  }

  static StreamingMemoryBuffer load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("cannot open memory snapshot " + path.string());
    if (io::expect_line(in, "snapshot header") != "dost-smb 1") throw ParseError("not a memory snapshot");
    auto field = [&in](const char* key, std::size_t arity) {
      std::istringstream line(io::expect_line(in, key));
      std::string tag;
      line >> tag;
      if (tag != key) throw ParseError(std::string("memory snapshot: expected '") + key + "'");
      std::vector<std::uint64_t> vals(arity);
      for (auto& v : vals) line >> v;
      if (!line) throw ParseError(std::string("memory snapshot: malformed '") + key + "'");
      return vals;
    };
    const auto capacity = field("capacity", 1)[0];
    const auto seen = field("items_seen", 1)[0];
    const auto count = field("entries", 1)[0];
    const auto xs = field("x_shape", 3);
    const auto ys = field("y_shape", 3);
    if (count > capacity || seen < count) throw ParseError("memory snapshot: inconsistent counters");
    StreamingMemoryBuffer smb(capacity);
    for (std::uint64_t i = 0; i < count; ++i) {
      MemoryEntry e;
      e.origin_time = io::read_i64(in);
      e.x = Tensor(Shape{xs[0], xs[1], xs[2]});
      e.y = Tensor(Shape{ys[0], ys[1], ys[2]});
      io::read_f64(in, e.x.data());
      io::read_f64(in, e.y.data());
      smb.slots_.push_back(std::move(e));
    }
    smb.items_seen_ = seen;
    return smb;
  }

 private:
  std::size_t capacity_;
  std::vector<MemoryEntry> slots_;
  std::uint64_t items_seen_ = 0;
};

}  // namespace dost
