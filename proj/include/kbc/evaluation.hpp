#pragma once

#include <functional>
#include <memory>

#include "kbc/kge.hpp"
#include "kbc/models.hpp"

namespace kbc {

// Tie-aware rank summary for one query: n = candidates strictly outscoring
// the target, m_tied = size of the target's exact-score tie block (target
// included), both after filtering. Ties use exact floating-point equality;
// the tie class that matters in practice is the all-zero unreachable block,
// which is exact.
struct QueryResult {
  std::uint32_t n_higher = 0;
  std::uint32_t m_tied = 1;
};

// `filtered` lists known answers to remove (sorted); the target itself is
// always retained even when listed.
inline QueryResult rank_query(std::span<const double> scores, VertexId target,
                              std::span<const VertexId> filtered) {
  const double target_score = scores[target];
  QueryResult r;
  std::size_t fi = 0;
  for (VertexId v = 0; v < scores.size(); ++v) {
    while (fi < filtered.size() && filtered[fi] < v) ++fi;
    const bool is_filtered = fi < filtered.size() && filtered[fi] == v;
    if (is_filtered && v != target) continue;
    if (scores[v] > target_score) ++r.n_higher;
    else if (v != target && scores[v] == target_score) ++r.m_tied;
  }
  return r;
}

// Mean reciprocal rank with the tie block sharing ranks n+1..n+m.
inline double mrr_of(const QueryResult& r) {
  double acc = 0.0;
  for (std::uint32_t k = r.n_higher + 1; k <= r.n_higher + r.m_tied; ++k)
    acc += 1.0 / static_cast<double>(k);
  return acc / static_cast<double>(r.m_tied);
}

// Fraction of the tie block's ranks that fall within K.
inline double hits_at_k(const QueryResult& r, std::uint32_t k) {
  if (k < 1) throw std::invalid_argument("hits_at_k: K must be >= 1");
  if (r.n_higher >= k) return 0.0;
  const std::uint32_t inside = std::min(k - r.n_higher, r.m_tied);
  return static_cast<double>(inside) / static_cast<double>(r.m_tied);
}

struct RankingReport {
  double mrr = 0.0, hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
  std::size_t n_queries = 0;
  bool with_inverses = true;
};

struct RelationBreakdownRow {
  RelId relation = 0;
  std::size_t n_queries = 0;
  double mrr = 0.0, hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
};

// Fills out[v] with the query's score for every destination v. One instance
// per worker thread; implementations keep their own traversal scratch.
class DestinationScorer {
 public:
  virtual ~DestinationScorer() = default;
  virtual void score(VertexId source, RelId relation, const EdgeMask& mask,
                     std::span<double> out) = 0;
  // Queries whose relation had no model (scored all-zero).
  virtual std::size_t missing_model_queries() const { return 0; }
};

using ScorerFactory = std::function<std::unique_ptr<DestinationScorer>()>;

// Trained models keyed by (augmented) relation id.
class ModelSet {
 public:
  void add(ModelVariant m) {
    const RelId r = std::visit([](const auto& x) { return x.relation; }, m);
    models_[r] = std::move(m);
  }
  const ModelVariant* find(RelId r) const {
    auto it = models_.find(r);
    return it == models_.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return models_.size(); }
  template <class Fn>
  void for_each(Fn&& fn) const {
    std::vector<RelId> keys;
    keys.reserve(models_.size());
    for (const auto& [r, m] : models_) keys.push_back(r);
    std::sort(keys.begin(), keys.end());
    for (RelId r : keys) fn(r, models_.at(r));
  }

 private:
  std::unordered_map<RelId, ModelVariant> models_;
};

// Scores queries by relation-path counting over the train graph and the
// relation's CM/MP model. Relations without a model score all-zero (warned
// through missing_model_queries).
class PathModelScorer : public DestinationScorer {
 public:
  PathModelScorer(const KnowledgeGraph& g, const ModelSet& models, const EdgeScoreCache* kge)
      : graph_(&g), models_(&models), kge_(kge) {}

  void score(VertexId source, RelId relation, const EdgeMask& mask,
             std::span<double> out) override {
    const ModelVariant* m = models_->find(relation);
    if (!m) {
      ++missing_;
      return;
    }
    if (const MpModel* mp = std::get_if<MpModel>(m)) {
      auto it = mp_values_.find(relation);
      if (it == mp_values_.end())
        it = mp_values_.emplace(relation, MpPathValue(*mp, interner_)).first;
      score_destinations(*graph_, source, mp->max_length, mask,
                         mp->kge_weighted ? kge_ : nullptr, interner_, it->second, out);
    } else {
      const CmModel& cm = std::get<CmModel>(*m);
      auto it = cm_values_.find(relation);
      if (it == cm_values_.end()) it = cm_values_.emplace(relation, CmPathValue(cm, interner_)).first;
      score_destinations(*graph_, source, cm.max_length, mask, nullptr, interner_, it->second,
                         out);
    }
  }

  std::size_t missing_model_queries() const override { return missing_; }

 private:
  const KnowledgeGraph* graph_;
  const ModelSet* models_;
  const EdgeScoreCache* kge_;
  PathInterner interner_;
  std::unordered_map<RelId, MpPathValue> mp_values_;
  std::unordered_map<RelId, CmPathValue> cm_values_;
  std::size_t missing_ = 0;
};

// Scores queries directly from an embedding table (used to sanity-check the
// desk-scale trainer); raw similarity / negated distance, which is rank-
// equivalent to the calibrated edge scores.
class KgeOnlyScorer : public DestinationScorer {
 public:
  explicit KgeOnlyScorer(const EmbeddingTable& table) : table_(&table) {}

  void score(VertexId source, RelId relation, const EdgeMask&, std::span<double> out) override {
    for (VertexId v = 0; v < out.size(); ++v)
      out[v] = table_->family == KgeFamily::similarity
                   ? kge_similarity(*table_, source, relation, v)
                   : -kge_distance(*table_, source, relation, v);
  }

 private:
  const EmbeddingTable* table_;
};

struct EvalOptions {
  bool with_inverses = true;   // also rank <t, r^-1, ?> -> h per triple
  bool mask_query_edges = false;  // for train-split self-evaluation
  unsigned threads = 0;       // 0 = hardware concurrency
};

struct EvalResult {
  RankingReport report;
  std::vector<RelationBreakdownRow> by_relation;
  std::size_t missing_model_queries = 0;
};

struct EvalQuery {
  VertexId source;
  RelId relation;
  VertexId target;
};

inline std::vector<EvalQuery> make_queries(std::span<const Triple> triples,
                                           std::uint32_t base_relations, bool with_inverses) {
  std::vector<EvalQuery> q;
  q.reserve(triples.size() * (with_inverses ? 2 : 1));
  for (const Triple& t : triples) q.push_back(EvalQuery{t.head, t.rel, t.tail});
  if (with_inverses)
    for (const Triple& t : triples)
      q.push_back(EvalQuery{t.tail, t.rel + base_relations, t.head});
  return q;
}

// Filtered, tie-aware ranking over an evaluation split. Scores come from the
// per-worker scorers; candidates known from any split are filtered per query;
// averages are unweighted means over evaluated queries.
inline EvalResult evaluate(const KnowledgeGraph& g, std::span<const Triple> eval_triples,
                           const FilterIndex& filter, const ScorerFactory& make_scorer,
                           const EvalOptions& opt) {
  if (eval_triples.empty()) throw std::invalid_argument("evaluate: empty evaluation split");
  const std::vector<EvalQuery> queries =
      make_queries(eval_triples, g.base_relations, opt.with_inverses);

  struct PerQuery {
    QueryResult rank;
  };
  std::vector<PerQuery> results(queries.size());

  unsigned threads = opt.threads ? opt.threads : std::thread::hardware_concurrency();
  threads = std::max(1u, threads);

  struct Worker {
    std::unique_ptr<DestinationScorer> scorer;
    std::vector<double> scores;
  };
  std::vector<Worker> workers(threads);

  // Block-cyclic assignment keeps per-worker state reuse high while the
  // result layout stays independent of scheduling.
  std::atomic<std::size_t> cursor{0};
  constexpr std::size_t kChunk = 16;
  auto body = [&](Worker& w) {
    if (!w.scorer) {
      w.scorer = make_scorer();
      w.scores.assign(g.vertex_count(), 0.0);
    }
    for (;;) {
      const std::size_t begin = cursor.fetch_add(kChunk);
      if (begin >= queries.size()) return;
      const std::size_t end = std::min(begin + kChunk, queries.size());
      for (std::size_t i = begin; i < end; ++i) {
        const EvalQuery& q = queries[i];
        std::fill(w.scores.begin(), w.scores.end(), 0.0);
        const EdgeMask mask =
            opt.mask_query_edges
                ? EdgeMask::for_query(g, Triple{q.source, q.relation, q.target})
                : EdgeMask::none();
        w.scorer->score(q.source, q.relation, mask, w.scores);
        results[i].rank = rank_query(w.scores, q.target, filter.known_tails(q.source, q.relation));
      }
    }
  };

  if (threads == 1) {
    body(workers[0]);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back([&, i] { body(workers[i]); });
    for (auto& t : pool) t.join();
  }

  EvalResult out;
  out.report.with_inverses = opt.with_inverses;
  out.report.n_queries = queries.size();
  std::unordered_map<RelId, RelationBreakdownRow> rows;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const QueryResult& r = results[i].rank;
    const double mrr = mrr_of(r);
    const double h1 = hits_at_k(r, 1), h3 = hits_at_k(r, 3), h10 = hits_at_k(r, 10);
    out.report.mrr += mrr;
    out.report.hits1 += h1;
    out.report.hits3 += h3;
    out.report.hits10 += h10;
    RelationBreakdownRow& row = rows[queries[i].relation];
    row.relation = queries[i].relation;
    ++row.n_queries;
    row.mrr += mrr;
    row.hits1 += h1;
    row.hits3 += h3;
    row.hits10 += h10;
  }
  const double n = static_cast<double>(queries.size());
  out.report.mrr /= n;
  out.report.hits1 /= n;
  out.report.hits3 /= n;
  out.report.hits10 /= n;
  for (auto& [r, row] : rows) {
    const double rn = static_cast<double>(row.n_queries);
    row.mrr /= rn;
    row.hits1 /= rn;
    row.hits3 /= rn;
    row.hits10 /= rn;
    out.by_relation.push_back(row);
  }
  std::sort(out.by_relation.begin(), out.by_relation.end(),
            [](const auto& a, const auto& b) { return a.relation < b.relation; });
  for (const Worker& w : workers)
    if (w.scorer) out.missing_model_queries += w.scorer->missing_model_queries();
  return out;
}

inline nlohmann::json to_json(const RankingReport& r) {
  return {{"mrr", r.mrr},   {"hits1", r.hits1},           {"hits3", r.hits3},
          {"hits10", r.hits10}, {"n_queries", r.n_queries}, {"mode", r.with_inverses ? "with-inverses" : "direct-only"}};
}

}  // namespace kbc
