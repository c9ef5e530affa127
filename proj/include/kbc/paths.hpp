#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>

#include "kbc/kg.hpp"

namespace kbc {

// Directed triples excluded from traversal. Training masks exactly the query
// edge and its inverse, so this stays tiny and membership is a linear scan.
class EdgeMask {
 public:
  EdgeMask() = default;

  static EdgeMask none() { return {}; }

  // The per-example training mask: the triple itself plus its inverse.
  static EdgeMask for_query(const KnowledgeGraph& g, const Triple& t) {
    EdgeMask m;
    m.items_.push_back(t);
    m.items_.push_back(Triple{t.tail, g.inverse(t.rel), t.head});
    return m;
  }

  void add(const Triple& t) { items_.push_back(t); }

  bool contains(VertexId h, RelId r, VertexId t) const {
    for (const Triple& e : items_)
      if (e.head == h && e.rel == r && e.tail == t) return true;
    return false;
  }

  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<Triple> items_;
};

// Relation-path identifiers. Paths are interned as a trie over relation ids;
// an id is stable for the lifetime of the interner and identifies the full
// relation sequence from the root.
using PathId = std::int32_t;
constexpr PathId kEmptyPath = -1;

class PathInterner {
 public:
  static constexpr RelId kMaxRel = (1u << 12) - 1;

  PathId extend(PathId parent, RelId rel) {
    if (rel > kMaxRel) throw std::invalid_argument("PathInterner: relation id exceeds 4095");
    const std::uint64_t key =
        (static_cast<std::uint64_t>(parent + 1) << 12) | static_cast<std::uint64_t>(rel);
    auto [slot, inserted] = index_.emplace(key, static_cast<std::uint32_t>(nodes_.size()));
    if (inserted) {
      const std::uint32_t d = parent == kEmptyPath ? 1 : nodes_[parent].depth + 1;
      nodes_.push_back(Node{parent, rel, d});
    }
    return static_cast<PathId>(*slot);
  }

  std::uint32_t depth(PathId p) const { return nodes_[static_cast<std::size_t>(p)].depth; }
  RelId last(PathId p) const { return nodes_[static_cast<std::size_t>(p)].rel; }
  PathId parent(PathId p) const { return nodes_[static_cast<std::size_t>(p)].parent; }

  // Relation sequence in walk order (first hop first).
  void sequence(PathId p, std::vector<RelId>& out) const {
    out.clear();
    for (PathId cur = p; cur != kEmptyPath; cur = nodes_[static_cast<std::size_t>(cur)].parent)
      out.push_back(nodes_[static_cast<std::size_t>(cur)].rel);
    std::reverse(out.begin(), out.end());
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    PathId parent;
    RelId rel;
    std::uint32_t depth;
  };
  std::vector<Node> nodes_;
  FlatMap64 index_;
};

// Sparse table for one (source, destination) pair: per relation path the walk
// count and, when an edge scorer is active, the summed path score
// sum_{p} sigma(p). Entries are sorted by path id.
struct PathEntry {
  PathId path;
  double count;
  double weighted;
};

struct PathCounts {
  std::vector<PathEntry> entries;

  double count_of(PathId p) const {
    for (const PathEntry& e : entries)
      if (e.path == p) return e.count;
    return 0.0;
  }
  double weighted_of(PathId p) const {
    for (const PathEntry& e : entries)
      if (e.path == p) return e.weighted;
    return 0.0;
  }
  bool empty() const { return entries.empty(); }
};

// Per-edge scores laid out to mirror the graph's adjacency arrays, so the
// traversal reads an array instead of invoking a scorer per transition.
class EdgeScoreCache {
 public:
  template <class ScoreFn>  // double(VertexId h, RelId r, VertexId t)
  EdgeScoreCache(const KnowledgeGraph& g, ScoreFn&& fn) {
    const std::size_t n = g.vertex_count();
    out_offsets_.assign(n + 1, 0);
    in_offsets_.assign(n + 1, 0);
    for (VertexId v = 0; v < n; ++v) {
      out_offsets_[v + 1] = out_offsets_[v] + g.out(v).size();
      in_offsets_[v + 1] = in_offsets_[v] + g.in(v).size();
    }
    out_scores_.resize(out_offsets_[n]);
    in_scores_.resize(in_offsets_[n]);
    for (VertexId v = 0; v < n; ++v) {
      auto oe = g.out(v);
      for (std::size_t i = 0; i < oe.size(); ++i) {
        const double s = fn(v, oe[i].rel, oe[i].to);
        if (!std::isfinite(s)) throw std::runtime_error("edge scorer returned non-finite value");
        out_scores_[out_offsets_[v] + i] = s;
      }
      auto ie = g.in(v);
      for (std::size_t i = 0; i < ie.size(); ++i)
        in_scores_[in_offsets_[v] + i] = fn(ie[i].to, ie[i].rel, v);
    }
  }

  std::span<const double> out_scores(VertexId v) const {
    return {out_scores_.data() + out_offsets_[v], out_offsets_[v + 1] - out_offsets_[v]};
  }
  std::span<const double> in_scores(VertexId v) const {
    return {in_scores_.data() + in_offsets_[v], in_offsets_[v + 1] - in_offsets_[v]};
  }

 private:
  std::vector<std::size_t> out_offsets_, in_offsets_;
  std::vector<double> out_scores_, in_scores_;
};

// One merged traversal state: all walks from the source realizing `path` and
// currently standing at `vertex`. `wsum` accumulates sum over those walks of
// the partial path score (zero when no scorer is active).
struct WalkState {
  PathId path;
  VertexId vertex;
  double count;
  double wsum;
};

namespace detail {

inline std::uint64_t state_key(PathId p, VertexId v) {
  return (static_cast<std::uint64_t>(p) << 21) | static_cast<std::uint64_t>(v);
}

// Level-synchronous walk expansion with state merging. Calls
// emit(level, states) with the merged states of each level 1..max_len.
// Backward mode walks in-edges (sequences are then in reverse walk order).
template <bool kBackward, class Emit>
void walk_levels(const KnowledgeGraph& g, VertexId source, std::uint32_t max_len,
                 const EdgeMask& mask, const EdgeScoreCache* scores, PathInterner& interner,
                 Emit&& emit) {
  if (max_len == 0) return;
  std::vector<WalkState> cur, next;
  FlatMap64 merge;
  cur.push_back(WalkState{kEmptyPath, source, 1.0, 0.0});
  for (std::uint32_t level = 1; level <= max_len; ++level) {
    next.clear();
    merge.clear();
    for (const WalkState& st : cur) {
      const auto edges = kBackward ? g.in(st.vertex) : g.out(st.vertex);
      std::span<const double> es;
      if (scores)
        es = kBackward ? scores->in_scores(st.vertex) : scores->out_scores(st.vertex);
      for (std::size_t i = 0; i < edges.size(); ++i) {
        const AdjEdge& e = edges[i];
        if (!mask.empty()) {
          const bool skip = kBackward ? mask.contains(e.to, e.rel, st.vertex)
                                      : mask.contains(st.vertex, e.rel, e.to);
          if (skip) continue;
        }
        const PathId child = interner.extend(st.path, e.rel);
        auto [slot, inserted] =
            merge.emplace(state_key(child, e.to), static_cast<std::uint32_t>(next.size()));
        if (inserted) next.push_back(WalkState{child, e.to, 0.0, 0.0});
        WalkState& dst = next[*slot];
        dst.count += st.count;
        if (scores) dst.wsum += st.wsum + st.count * es[i];
      }
    }
    emit(level, static_cast<const std::vector<WalkState>&>(next));
    cur.swap(next);
    if (cur.empty()) return;
  }
}

}  // namespace detail

// All relation paths of length <= max_len from u, per destination. Result is
// sorted by destination, each table sorted by path id.
inline std::vector<std::pair<VertexId, PathCounts>> count_paths_all_destinations(
    const KnowledgeGraph& g, VertexId u, std::uint32_t max_len, const EdgeMask& mask,
    PathInterner& interner, const EdgeScoreCache* scores = nullptr) {
  std::unordered_map<VertexId, PathCounts> tables;
  detail::walk_levels<false>(g, u, max_len, mask, scores, interner,
                             [&](std::uint32_t, const std::vector<WalkState>& states) {
                               for (const WalkState& st : states)
                                 tables[st.vertex].entries.push_back(
                                     PathEntry{st.path, st.count, st.wsum});
                             });
  std::vector<std::pair<VertexId, PathCounts>> out(
      std::make_move_iterator(tables.begin()), std::make_move_iterator(tables.end()));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [v, t] : out)
    std::sort(t.entries.begin(), t.entries.end(),
              [](const PathEntry& a, const PathEntry& b) { return a.path < b.path; });
  return out;
}

// KGE-weighted variant of the above; table values carry sum_p sigma(p).
inline std::vector<std::pair<VertexId, PathCounts>> weighted_paths_all_destinations(
    const KnowledgeGraph& g, VertexId u, std::uint32_t max_len, const EdgeMask& mask,
    const EdgeScoreCache& scores, PathInterner& interner) {
  return count_paths_all_destinations(g, u, max_len, mask, interner, &scores);
}

// Relation-path counts between one (u, v) pair. Meets a forward frontier of
// depth ceil(L/2) with a backward frontier from v, which keeps per-pair cost
// near the geometric mean of the two fan-outs instead of the full fan.
inline PathCounts count_paths(const KnowledgeGraph& g, VertexId u, VertexId v,
                              std::uint32_t max_len, const EdgeMask& mask,
                              PathInterner& interner, const EdgeScoreCache* scores = nullptr) {
  if (max_len == 0) throw std::invalid_argument("count_paths: max_len must be >= 1");
  const std::uint32_t fwd_depth = (max_len + 1) / 2;
  const std::uint32_t bwd_depth = max_len - fwd_depth;

  std::unordered_map<std::uint64_t, std::pair<double, double>> acc;  // path -> (count, wsum)
  auto add = [&](PathId p, double c, double s) {
    auto& slot = acc[static_cast<std::uint64_t>(p)];
    slot.first += c;
    slot.second += s;
  };

  std::vector<WalkState> frontier;  // forward states at depth fwd_depth
  detail::walk_levels<false>(g, u, fwd_depth, mask, scores, interner,
                             [&](std::uint32_t level, const std::vector<WalkState>& states) {
                               for (const WalkState& st : states)
                                 if (st.vertex == v) add(st.path, st.count, st.wsum);
                               if (level == fwd_depth) frontier = states;
                             });

  if (bwd_depth > 0 && !frontier.empty()) {
    // Group the forward frontier by vertex.
    std::unordered_map<VertexId, std::vector<std::uint32_t>> by_vertex;
    for (std::uint32_t i = 0; i < frontier.size(); ++i)
      by_vertex[frontier[i].vertex].push_back(i);

    std::vector<RelId> suffix;
    detail::walk_levels<true>(
        g, v, bwd_depth, mask, scores, interner,
        [&](std::uint32_t, const std::vector<WalkState>& bstates) {
          for (const WalkState& bs : bstates) {
            auto it = by_vertex.find(bs.vertex);
            if (it == by_vertex.end()) continue;
            // Backward sequences are reversed; append them to the forward
            // prefix in walk order.
            interner.sequence(bs.path, suffix);
            for (std::uint32_t fi : it->second) {
              const WalkState& fs = frontier[fi];
              PathId full = fs.path;
              for (auto r = suffix.rbegin(); r != suffix.rend(); ++r)
                full = interner.extend(full, *r);
              add(full, fs.count * bs.count, fs.count * bs.wsum + bs.count * fs.wsum);
            }
          }
        });
  }

  PathCounts out;
  out.entries.reserve(acc.size());
  for (const auto& [p, cs] : acc)
    out.entries.push_back(PathEntry{static_cast<PathId>(p), cs.first, cs.second});
  std::sort(out.entries.begin(), out.entries.end(),
            [](const PathEntry& a, const PathEntry& b) { return a.path < b.path; });
  return out;
}

// Dense id space over the relation paths observed between given endpoints.
// Ids are assigned in lexicographic order of the relation-id sequences, so
// they are stable across runs.
class PathVocabulary {
 public:
  PathVocabulary() = default;

  explicit PathVocabulary(std::vector<std::vector<RelId>> sequences) {
    std::sort(sequences.begin(), sequences.end());
    sequences.erase(std::unique(sequences.begin(), sequences.end()), sequences.end());
    paths_ = std::move(sequences);
    for (std::uint32_t i = 0; i < paths_.size(); ++i) index_.emplace(hash_of(paths_[i]), i);
  }

  std::optional<std::uint32_t> find(std::span<const RelId> seq) const {
    auto [lo, hi] = index_.equal_range(hash_of(seq));
    for (auto it = lo; it != hi; ++it) {
      const auto& cand = paths_[it->second];
      if (cand.size() == seq.size() && std::equal(cand.begin(), cand.end(), seq.begin()))
        return it->second;
    }
    return std::nullopt;
  }

  const std::vector<RelId>& sequence(std::uint32_t id) const { return paths_.at(id); }
  std::size_t size() const { return paths_.size(); }

 private:
  static std::uint64_t hash_of(std::span<const RelId> seq) {
    std::uint64_t h = 1469598103934665603ull;
    for (RelId r : seq) {
      h ^= r + 1;
      h *= 1099511628211ull;
    }
    return h;
  }

  std::vector<std::vector<RelId>> paths_;
  std::unordered_multimap<std::uint64_t, std::uint32_t> index_;
};

struct MaskedPair {
  VertexId source;
  VertexId dest;
  EdgeMask mask;
};

// Vocabulary of exactly the relation paths observed between the given pairs.
inline PathVocabulary build_path_vocabulary(const KnowledgeGraph& g,
                                            std::span<const MaskedPair> pairs,
                                            std::uint32_t max_len, PathInterner& interner) {
  std::unordered_set<PathId> seen;
  for (const MaskedPair& p : pairs) {
    PathCounts t = count_paths(g, p.source, p.dest, max_len, p.mask, interner);
    for (const PathEntry& e : t.entries) seen.insert(e.path);
  }
  std::vector<std::vector<RelId>> seqs;
  seqs.reserve(seen.size());
  std::vector<RelId> scratch;
  for (PathId p : seen) {
    interner.sequence(p, scratch);
    seqs.push_back(scratch);
  }
  return PathVocabulary(std::move(seqs));
}

// Graph-wide dense count table for paths of exactly `length`:
// cell[r1..rL] = number of walks realizing that relation path anywhere.
struct PathCountMatrix {
  std::uint32_t length = 0;
  std::uint32_t relation_count = 0;
  std::vector<double> cells;  // row-major, index = sum_i r_i * R^(L-1-i)

  std::size_t index_of(std::span<const RelId> seq) const {
    std::size_t idx = 0;
    for (RelId r : seq) idx = idx * relation_count + r;
    return idx;
  }
  double cell(std::span<const RelId> seq) const { return cells[index_of(seq)]; }
};

// With an edge-score cache the cells hold the summed path scores
// sum_{u,v} sum_{p} sigma(p) instead of counts.
inline PathCountMatrix path_count_matrix(const KnowledgeGraph& g, std::uint32_t length,
                                         std::size_t cell_cap = 10'000'000,
                                         const EdgeScoreCache* scores = nullptr) {
  if (length == 0) throw std::invalid_argument("path_count_matrix: length must be >= 1");
  const std::size_t r = g.relation_count();
  std::size_t cells = 1;
  for (std::uint32_t i = 0; i < length; ++i) {
    if (cells > cell_cap / std::max<std::size_t>(r, 1))
      throw std::runtime_error(
          "path_count_matrix: |R|^length exceeds the cell cap; use sparse per-pair counts");
    cells *= r;
  }
  PathCountMatrix m;
  m.length = length;
  m.relation_count = static_cast<std::uint32_t>(r);
  m.cells.assign(cells, 0.0);

  PathInterner interner;
  std::vector<std::size_t> cell_index;  // PathId -> dense index
  std::vector<RelId> scratch;
  for (VertexId u = 0; u < g.vertex_count(); ++u) {
    detail::walk_levels<false>(g, u, length, EdgeMask::none(), scores, interner,
                               [&](std::uint32_t level, const std::vector<WalkState>& states) {
                                 if (level != length) return;
                                 for (const WalkState& st : states) {
                                   const auto id = static_cast<std::size_t>(st.path);
                                   if (id >= cell_index.size())
                                     cell_index.resize(interner.size(),
                                                       std::numeric_limits<std::size_t>::max());
                                   if (cell_index[id] == std::numeric_limits<std::size_t>::max()) {
                                     interner.sequence(st.path, scratch);
                                     cell_index[id] = m.index_of(scratch);
                                   }
                                   m.cells[cell_index[id]] += scores ? st.wsum : st.count;
                                 }
                               });
  }
  return m;
}

inline void write_matrix_csv(const PathCountMatrix& m, const Vocabulary& relations,
                             std::ostream& out) {
  const std::size_t r = m.relation_count;
  std::size_t rows = 1;
  for (std::uint32_t i = 0; i + 1 < m.length; ++i) rows *= r;
  out << "path";
  for (std::size_t c = 0; c < r; ++c) out << ',' << relations.name(static_cast<std::uint32_t>(c));
  out << '\n';
  std::vector<RelId> prefix(m.length > 0 ? m.length - 1 : 0);
  for (std::size_t row = 0; row < rows; ++row) {
    std::size_t rem = row;
    for (std::size_t i = prefix.size(); i-- > 0;) {
      prefix[i] = static_cast<RelId>(rem % r);
      rem /= r;
    }
    for (std::size_t i = 0; i < prefix.size(); ++i)
      out << (i ? "|" : "") << relations.name(prefix[i]);
    for (std::size_t c = 0; c < r; ++c) out << ',' << m.cells[row * r + c];
    out << '\n';
  }
}

// Fraction of queries whose destination is reachable from the source within
// each depth 1..max_len, walking the (train) graph minus the per-query mask.
inline std::vector<double> reachability_fraction(const KnowledgeGraph& g,
                                                 std::span<const Triple> queries,
                                                 std::uint32_t max_len) {
  std::vector<std::size_t> reached(max_len + 1, 0);
  std::vector<std::uint32_t> visited_epoch(g.vertex_count(), 0);
  std::uint32_t epoch = 0;
  std::vector<VertexId> frontier, next;
  for (const Triple& q : queries) {
    const EdgeMask mask = EdgeMask::for_query(g, q);
    ++epoch;
    std::uint32_t found_at = 0;
    frontier.assign(1, q.head);
    visited_epoch[q.head] = epoch;
    for (std::uint32_t d = 1; d <= max_len && found_at == 0; ++d) {
      next.clear();
      for (VertexId v : frontier) {
        for (const AdjEdge& e : g.out(v)) {
          if (mask.contains(v, e.rel, e.to)) continue;
          if (e.to == q.tail) {
            found_at = d;
            break;
          }
          if (visited_epoch[e.to] != epoch) {
            visited_epoch[e.to] = epoch;
            next.push_back(e.to);
          }
        }
        if (found_at) break;
      }
      frontier.swap(next);
    }
    if (found_at)
      for (std::uint32_t d = found_at; d <= max_len; ++d) ++reached[d];
  }
  std::vector<double> fractions(max_len);
  for (std::uint32_t d = 1; d <= max_len; ++d)
    fractions[d - 1] =
        queries.empty() ? 0.0 : static_cast<double>(reached[d]) / static_cast<double>(queries.size());
  return fractions;
}

// Fused query scoring: adds into out[v] the sum over relation paths of
// value(path) * mass(path, source -> v), where mass is the walk count or,
// with an edge-score cache, the summed path score. Equivalent to building the
// per-destination tables and dotting them with `value`, without materializing
// the final (largest) level.
template <class PathValue>
void score_destinations(const KnowledgeGraph& g, VertexId source, std::uint32_t max_len,
                        const EdgeMask& mask, const EdgeScoreCache* scores,
                        PathInterner& interner, PathValue&& value, std::span<double> out) {
  if (max_len == 0) return;
  const std::uint32_t walk_depth = max_len >= 2 ? max_len - 1 : 1;
  const std::size_t nrel = g.relation_count();
  constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> ext_vals;
  FlatMap64 slot_of, ext_map;

  detail::walk_levels<false>(
      g, source, walk_depth, mask, scores, interner,
      [&](std::uint32_t level, const std::vector<WalkState>& states) {
        for (const WalkState& st : states) {
          const double val = value(st.path);
          if (val != 0.0) out[st.vertex] += val * (scores ? st.wsum : st.count);
        }
        if (max_len < 2 || level != walk_depth) return;
        // Final hop: expand once more without merging, caching
        // value(prefix + r) per (prefix, r).
        slot_of.clear();
        std::uint32_t nslots = 0;
        for (const WalkState& st : states) {
          auto [s, inserted] =
              slot_of.emplace(static_cast<std::uint64_t>(st.path) + 1, nslots);
          if (inserted) ++nslots;
        }
        // Dense (prefix, rel) table when it fits; hashed memo otherwise
        // (wide relation vocabularies make the dense table wasteful).
        const bool dense = static_cast<std::size_t>(nslots) * nrel <= 8'000'000;
        if (dense)
          ext_vals.assign(static_cast<std::size_t>(nslots) * nrel, kUnset);
        else {
          ext_map.clear();
          ext_vals.clear();
        }
        for (const WalkState& st : states) {
          const auto edges = g.out(st.vertex);
          std::span<const double> es;
          if (scores) es = scores->out_scores(st.vertex);
          const std::uint32_t slot =
              dense ? *slot_of.find(static_cast<std::uint64_t>(st.path) + 1) : 0;
          for (std::size_t i = 0; i < edges.size(); ++i) {
            const AdjEdge& e = edges[i];
            if (!mask.empty() && mask.contains(st.vertex, e.rel, e.to)) continue;
            double cell;
            if (dense) {
              double& c = ext_vals[static_cast<std::size_t>(slot) * nrel + e.rel];
              if (std::isnan(c)) c = value(interner.extend(st.path, e.rel));
              cell = c;
            } else {
              const std::uint64_t key =
                  (static_cast<std::uint64_t>(st.path) << 12) | static_cast<std::uint64_t>(e.rel);
              auto [vi, inserted] =
                  ext_map.emplace(key, static_cast<std::uint32_t>(ext_vals.size()));
              if (inserted) ext_vals.push_back(value(interner.extend(st.path, e.rel)));
              cell = ext_vals[*vi];
            }
            if (cell != 0.0)
              out[e.to] += cell * (scores ? st.wsum + st.count * es[i] : st.count);
          }
        }
      });
}

}  // namespace kbc
