#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <atomic>
#include <unordered_map>
#include <vector>

namespace kbc {

using VertexId = std::uint32_t;
using RelId = std::uint32_t;

struct Triple {
  VertexId head = 0;
  RelId rel = 0;
  VertexId tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Packs (head, rel, tail) into one key. 21 bits per vertex and 22 for the
// relation cover every benchmark we care about (2M entities, 4M relations).
inline std::uint64_t pack_triple(VertexId h, RelId r, VertexId t) {
  return (static_cast<std::uint64_t>(h) << 43) |
         (static_cast<std::uint64_t>(r) << 21) | static_cast<std::uint64_t>(t);
}

inline std::uint64_t pack_pair(std::uint32_t a, std::uint32_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
}

// Dense-id string vocabulary. Ids are assigned in first-seen order so that
// repeated loads of the same files produce identical id assignments.
class Vocabulary {
 public:
  std::uint32_t add_or_get(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it != index_.end()) return it->second;
    auto id = static_cast<std::uint32_t>(names_.size());
    names_.emplace_back(name);
    index_.emplace(names_.back(), id);
    return id;
  }

  // Returns id or npos when absent.
  static constexpr std::uint32_t npos = 0xffffffffu;
  std::uint32_t find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? npos : it->second;
  }

  const std::string& name(std::uint32_t id) const {
    if (id >= names_.size()) throw std::out_of_range("Vocabulary: bad id " + std::to_string(id));
    return names_[id];
  }

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

// Minimal open-addressing map from uint64 keys to uint32 payloads, for the
// traversal inner loops where std::unordered_map overhead shows up. Keys must
// never be ~0 (the empty sentinel). clear() keeps capacity.
class FlatMap64 {
 public:
  static constexpr std::uint64_t kEmpty = ~0ull;

  FlatMap64() { rehash(16); }

  void clear() {
    std::fill(keys_.begin(), keys_.end(), kEmpty);
    size_ = 0;
  }

  std::size_t size() const { return size_; }

  // Returns (slot value reference, inserted flag).
  std::pair<std::uint32_t*, bool> emplace(std::uint64_t key, std::uint32_t value) {
    if ((size_ + 1) * 10 >= keys_.size() * 7) rehash(keys_.size() * 2);
    std::size_t i = probe(key);
    if (keys_[i] == kEmpty) {
      keys_[i] = key;
      vals_[i] = value;
      ++size_;
      return {&vals_[i], true};
    }
    return {&vals_[i], false};
  }

  const std::uint32_t* find(std::uint64_t key) const {
    std::size_t i = probe(key);
    return keys_[i] == kEmpty ? nullptr : &vals_[i];
  }

 private:
  std::size_t probe(std::uint64_t key) const {
    std::size_t i = (key * 0x9e3779b97f4a7c15ull) & mask_;
    while (keys_[i] != kEmpty && keys_[i] != key) i = (i + 1) & mask_;
    return i;
  }

  void rehash(std::size_t cap) {
    std::vector<std::uint64_t> old_keys = std::move(keys_);
    std::vector<std::uint32_t> old_vals = std::move(vals_);
    keys_.assign(cap, kEmpty);
    vals_.assign(cap, 0);
    mask_ = cap - 1;
    size_ = 0;
    for (std::size_t i = 0; i < old_keys.size(); ++i)
      if (old_keys[i] != kEmpty) emplace(old_keys[i], old_vals[i]);
  }

  std::vector<std::uint64_t> keys_;
  std::vector<std::uint32_t> vals_;
  std::size_t size_ = 0;
  std::size_t mask_ = 0;
};

// splitmix64; used to derive per-task seeds from (global seed, task id).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must be
// independent; each writes only its own output slot.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::thread::hardware_concurrency();
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  unsigned k = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  pool.reserve(k);
  for (unsigned i = 0; i < k; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace kbc
