#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <unordered_set>

#include "kbc/core.hpp"

namespace kbc {

// One adjacency slot: the relation label and the far endpoint.
struct AdjEdge {
  RelId rel;
  VertexId to;
  friend bool operator==(const AdjEdge&, const AdjEdge&) = default;
  friend auto operator<=>(const AdjEdge&, const AdjEdge&) = default;
};

// Immutable after construction; shareable across threads.
//
// The relation vocabulary is the augmented one: ids [0, base_relations) are
// the relations found in the input, ids [base_relations, 2*base_relations)
// their inverses, named "<r>^-1".
class KnowledgeGraph {
 public:
  Vocabulary entities;
  Vocabulary relations;
  std::uint32_t base_relations = 0;
  std::vector<Triple> edges;          // deduplicated, sorted
  std::size_t duplicates_dropped = 0; // duplicate input triples, see build()

  bool augmented = true;

  RelId inverse(RelId r) const {
    if (!augmented)
      throw std::logic_error("KnowledgeGraph: inverse() on a graph built without inverses");
    return r < base_relations ? r + base_relations : r - base_relations;
  }

  std::size_t vertex_count() const { return entities.size(); }
  std::size_t relation_count() const { return relations.size(); }

  bool has_edge(VertexId h, RelId r, VertexId t) const {
    return edge_set_.count(pack_triple(h, r, t)) != 0;
  }

  std::span<const AdjEdge> out(VertexId v) const {
    return {out_edges_.data() + out_offsets_[v], out_offsets_[v + 1] - out_offsets_[v]};
  }
  // in(v) lists edges (w, r, v) as {rel, w}.
  std::span<const AdjEdge> in(VertexId v) const {
    return {in_edges_.data() + in_offsets_[v], in_offsets_[v + 1] - in_offsets_[v]};
  }

  // Builds the graph from raw triples: adds the inverse of every triple
  // (relation id shifted by |R|), drops duplicates, and indexes adjacency.
  static KnowledgeGraph augment_inverses(std::span<const Triple> triples,
                                         Vocabulary entities, Vocabulary relations) {
    for (const Triple& t : triples) {
      if (t.head >= entities.size() || t.tail >= entities.size())
        throw std::invalid_argument("augment_inverses: vertex id out of range");
      if (t.rel >= relations.size())
        throw std::invalid_argument("augment_inverses: relation id out of range");
    }
    // Id packing elsewhere assumes these bounds (21-bit vertices, 12-bit
    // augmented relations); every benchmark fits with room to spare.
    if (entities.size() >= (1u << 21))
      throw std::invalid_argument("augment_inverses: more than 2^21 entities unsupported");
    if (relations.size() * 2 >= (1u << 12))
      throw std::invalid_argument("augment_inverses: more than 2047 base relations unsupported");
    KnowledgeGraph g;
    g.base_relations = static_cast<std::uint32_t>(relations.size());
    for (std::uint32_t r = 0; r < g.base_relations; ++r)
      relations.add_or_get(relations.name(r) + "^-1");
    g.entities = std::move(entities);
    g.relations = std::move(relations);

    g.edges.reserve(triples.size() * 2);
    for (const Triple& t : triples) {
      g.edges.push_back(t);
      g.edges.push_back(Triple{t.tail, t.rel + g.base_relations, t.head});
    }
    std::sort(g.edges.begin(), g.edges.end());
    auto last = std::unique(g.edges.begin(), g.edges.end());
    // Each dropped (triple, inverse) pair stems from one duplicated input line.
    g.duplicates_dropped = static_cast<std::size_t>(g.edges.end() - last) / 2;
    g.edges.erase(last, g.edges.end());
    g.build_indexes();
    return g;
  }

  // Graph over the original relations only (no inverse edges); used for the
  // figure-style path statistics. inverse() is unavailable on such graphs.
  static KnowledgeGraph without_inverses(std::span<const Triple> triples, Vocabulary entities,
                                         Vocabulary relations) {
    for (const Triple& t : triples) {
      if (t.head >= entities.size() || t.tail >= entities.size())
        throw std::invalid_argument("without_inverses: vertex id out of range");
      if (t.rel >= relations.size())
        throw std::invalid_argument("without_inverses: relation id out of range");
    }
    KnowledgeGraph g;
    g.augmented = false;
    g.base_relations = static_cast<std::uint32_t>(relations.size());
    g.entities = std::move(entities);
    g.relations = std::move(relations);
    g.edges.assign(triples.begin(), triples.end());
    std::sort(g.edges.begin(), g.edges.end());
    auto last = std::unique(g.edges.begin(), g.edges.end());
    g.duplicates_dropped = static_cast<std::size_t>(g.edges.end() - last);
    g.edges.erase(last, g.edges.end());
    g.build_indexes();
    return g;
  }

 private:
  void build_indexes() {
    const std::size_t n = entities.size();
    out_offsets_.assign(n + 1, 0);
    in_offsets_.assign(n + 1, 0);
    for (const Triple& e : edges) {
      ++out_offsets_[e.head + 1];
      ++in_offsets_[e.tail + 1];
    }
    for (std::size_t v = 0; v < n; ++v) {
      out_offsets_[v + 1] += out_offsets_[v];
      in_offsets_[v + 1] += in_offsets_[v];
    }
    out_edges_.resize(edges.size());
    in_edges_.resize(edges.size());
    std::vector<std::size_t> ocur(out_offsets_.begin(), out_offsets_.end() - 1);
    std::vector<std::size_t> icur(in_offsets_.begin(), in_offsets_.end() - 1);
    edge_set_.reserve(edges.size() * 2);
    for (const Triple& e : edges) {
      out_edges_[ocur[e.head]++] = AdjEdge{e.rel, e.tail};
      in_edges_[icur[e.tail]++] = AdjEdge{e.rel, e.head};
      edge_set_.insert(pack_triple(e.head, e.rel, e.tail));
    }
    // edges is sorted (h, r, t), so out lists come out sorted by (rel, to);
    // in lists need their own pass for (rel, from) order.
    for (std::size_t v = 0; v < n; ++v)
      std::sort(in_edges_.begin() + static_cast<std::ptrdiff_t>(in_offsets_[v]),
                in_edges_.begin() + static_cast<std::ptrdiff_t>(in_offsets_[v + 1]));
  }

  std::vector<std::size_t> out_offsets_, in_offsets_;
  std::vector<AdjEdge> out_edges_, in_edges_;
  std::unordered_set<std::uint64_t> edge_set_;
};

// Reads tab-separated triples, extending the given vocabularies in first-seen
// order. Line order is preserved; duplicates are kept (graph construction
// deduplicates).
inline std::vector<Triple> load_triples(const std::string& path, Vocabulary& entities,
                                        Vocabulary& relations) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open triple file: " + path);
  std::vector<Triple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos ||
        line.find('\t', tab2 + 1) != std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected head<TAB>relation<TAB>tail");
    }
    Triple t;
    t.head = entities.add_or_get(std::string_view(line).substr(0, tab1));
    t.rel = relations.add_or_get(std::string_view(line).substr(tab1 + 1, tab2 - tab1 - 1));
    t.tail = entities.add_or_get(std::string_view(line).substr(tab2 + 1));
    out.push_back(t);
  }
  if (out.empty()) throw std::runtime_error("triple file has no triples: " + path);
  return out;
}

inline void save_triples(const std::string& path, std::span<const Triple> triples,
                         const Vocabulary& entities, const Vocabulary& relations) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write triple file: " + path);
  for (const Triple& t : triples)
    out << entities.name(t.head) << '\t' << relations.name(t.rel) << '\t'
        << entities.name(t.tail) << '\n';
}

// Train/valid/test triples over shared vocabularies. Vocabularies cover the
// union of the splits; entities seen only in valid/test are legal query
// subjects and simply have no paths.
struct DatasetSplits {
  Vocabulary entities;
  Vocabulary relations;  // base relations only (no inverses)
  std::vector<Triple> train, valid, test;

  KnowledgeGraph train_graph() const {
    return KnowledgeGraph::augment_inverses(train, entities, relations);
  }
};

inline DatasetSplits load_dataset(const std::string& train_path, const std::string& valid_path,
                                  const std::string& test_path) {
  DatasetSplits s;
  s.train = load_triples(train_path, s.entities, s.relations);
  s.valid = load_triples(valid_path, s.entities, s.relations);
  s.test = load_triples(test_path, s.entities, s.relations);
  auto as_set = [](const std::vector<Triple>& v) {
    std::unordered_set<std::uint64_t> set;
    set.reserve(v.size() * 2);
    for (const Triple& t : v) set.insert(pack_triple(t.head, t.rel, t.tail));
    return set;
  };
  auto train_set = as_set(s.train);
  auto valid_set = as_set(s.valid);
  for (const Triple& t : s.valid)
    if (train_set.count(pack_triple(t.head, t.rel, t.tail)))
      throw std::runtime_error("dataset splits overlap: valid triple also in train");
  for (const Triple& t : s.test) {
    auto key = pack_triple(t.head, t.rel, t.tail);
    if (train_set.count(key) || valid_set.count(key))
      throw std::runtime_error("dataset splits overlap: test triple also in train/valid");
  }
  return s;
}

// Conventional filenames under a dataset directory.
inline DatasetSplits load_dataset_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  return load_dataset((fs::path(dir) / "train.txt").string(),
                      (fs::path(dir) / "valid.txt").string(),
                      (fs::path(dir) / "test.txt").string());
}

// Known answers per query (h, r) over the union of splits, in the augmented
// relation space: each split triple <h,r,t> contributes t to (h,r) and h to
// (t, r^-1). Used for filtered ranking.
class FilterIndex {
 public:
  FilterIndex(const DatasetSplits& splits, std::uint32_t base_relations) {
    auto add = [&](const Triple& t) {
      known_[pack_pair(t.head, t.rel)].push_back(t.tail);
      known_[pack_pair(t.tail, t.rel + base_relations)].push_back(t.head);
    };
    for (const Triple& t : splits.train) add(t);
    for (const Triple& t : splits.valid) add(t);
    for (const Triple& t : splits.test) add(t);
    for (auto& [k, v] : known_) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  }

  std::span<const VertexId> known_tails(VertexId h, RelId r) const {
    auto it = known_.find(pack_pair(h, r));
    if (it == known_.end()) return {};
    return it->second;
  }

 private:
  std::unordered_map<std::uint64_t, std::vector<VertexId>> known_;
};

// Candidate destinations for query (h, r) targeting t: every vertex except
// the other known answers. t itself is always retained.
inline std::vector<VertexId> filter_candidates(VertexId h, RelId r, VertexId t,
                                               const FilterIndex& filter,
                                               std::size_t vertex_count) {
  auto known = filter.known_tails(h, r);
  std::vector<VertexId> out;
  out.reserve(vertex_count);
  for (VertexId v = 0; v < vertex_count; ++v) {
    if (v != t && std::binary_search(known.begin(), known.end(), v)) continue;
    out.push_back(v);
  }
  return out;
}

}  // namespace kbc
