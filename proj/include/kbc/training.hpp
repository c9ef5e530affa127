#pragma once

#include <chrono>
#include <random>

#include "kbc/evaluation.hpp"
#include "kbc/kge.hpp"

namespace kbc {

enum class ModelKind { cm, mp, mp_kge };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::cm: return "cm";
    case ModelKind::mp: return "mp";
    case ModelKind::mp_kge: return "mp-kge";
  }
  return "?";
}

struct TrainConfig {
  double lr = 1.0;               // Adagrad step size
  double margin = 1.0;           // gamma
  std::uint32_t batch = 8;       // |B+| = |B-|
  std::uint32_t max_iters = 1000;
  std::uint32_t rule_length = 3; // m
  double alpha = 0.7;
  std::uint64_t seed = 7;
  std::uint32_t eval_every = 50; // validation cadence, iterations
  std::uint32_t patience = 10;   // evaluations without improvement

  void validate() const {
    if (lr <= 0.0 || margin <= 0.0 || batch < 1 || rule_length < 1)
      throw std::invalid_argument("TrainConfig: lr, margin > 0; batch, rule_length >= 1");
    if (alpha <= 0.5 || alpha > 1.0)
      throw std::invalid_argument("TrainConfig: alpha must lie in (0.5, 1]");
  }
};

struct AdagradState {
  std::vector<double> accum;
  double eps = 1e-10;

  explicit AdagradState(std::size_t n) : accum(n, 0.0) {}
};

inline void adagrad_step(std::vector<double>& params, std::span<const double> grads,
                         AdagradState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.accum.size())
    throw std::invalid_argument("adagrad_step: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double gi = grads[i];
    if (!std::isfinite(gi))
      throw std::runtime_error("adagrad_step: non-finite gradient at index " + std::to_string(i));
    state.accum[i] += gi * gi;
    params[i] -= lr * gi / std::sqrt(state.accum[i] + state.eps);
  }
}

// Thrown by the negative sampler when even uniform pair rejection cannot find
// a non-edge (near-complete relations).
class SaturatedRelation : public std::runtime_error {
 public:
  explicit SaturatedRelation(RelId r)
      : std::runtime_error("negative sampling saturated for relation " + std::to_string(r)) {}
};

struct Batch {
  std::vector<std::uint32_t> positive_index;            // into the positives list
  std::vector<std::pair<VertexId, VertexId>> negatives; // (h', t') with <h',r,t'> not an edge
};

inline std::vector<Triple> relation_triples(const KnowledgeGraph& g, RelId r) {
  std::vector<Triple> out;
  for (const Triple& t : g.edges)
    if (t.rel == r) out.push_back(t);
  return out;
}

// Positives uniform with replacement; negatives by corrupting the tail of a
// uniform positive (rejecting edges, 100 attempts), falling back to uniform
// (h', t') pair rejection.
inline Batch sample_batch(const KnowledgeGraph& g, RelId r, std::span<const Triple> positives,
                          std::uint32_t b, std::mt19937_64& rng) {
  if (positives.empty())
    throw std::invalid_argument("sample_batch: relation has no positive triples");
  std::uniform_int_distribution<std::uint32_t> rand_pos(
      0, static_cast<std::uint32_t>(positives.size() - 1));
  std::uniform_int_distribution<VertexId> rand_vertex(
      0, static_cast<VertexId>(g.vertex_count() - 1));
  Batch batch;
  batch.positive_index.reserve(b);
  for (std::uint32_t i = 0; i < b; ++i) batch.positive_index.push_back(rand_pos(rng));
  batch.negatives.reserve(b);
  for (std::uint32_t i = 0; i < b; ++i) {
    bool found = false;
    for (int attempt = 0; attempt < 100 && !found; ++attempt) {
      const Triple& base = positives[rand_pos(rng)];
      const VertexId t = rand_vertex(rng);
      if (!g.has_edge(base.head, r, t)) {
        batch.negatives.emplace_back(base.head, t);
        found = true;
      }
    }
    for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
      const VertexId h = rand_vertex(rng);
      const VertexId t = rand_vertex(rng);
      if (!g.has_edge(h, r, t)) {
        batch.negatives.emplace_back(h, t);
        found = true;
      }
    }
    if (!found) throw SaturatedRelation(r);
  }
  return batch;
}

// Minibatch margin ranking loss over precomputed tables:
//   sum_{i in B+} sum_{j in B-} max(0, s-_j - s+_i + gamma).
// Gradients flow through strictly positive hinge terms only (the max at
// exactly zero is treated as inactive).
inline double mp_batch_loss(const MpModel& m, std::span<const VocabCounts* const> pos,
                            std::span<const VocabCounts* const> neg, double margin,
                            MpGradients* grads) {
  std::vector<double> sp(pos.size()), sn(neg.size());
  for (std::size_t i = 0; i < pos.size(); ++i) sp[i] = mp_score(m, *pos[i]);
  for (std::size_t j = 0; j < neg.size(); ++j) sn[j] = mp_score(m, *neg[j]);
  double loss = 0.0;
  std::vector<double> pos_mult(pos.size(), 0.0), neg_mult(neg.size(), 0.0);
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t j = 0; j < neg.size(); ++j) {
      const double h = sn[j] - sp[i] + margin;
      if (h > 0.0) {
        loss += h;
        pos_mult[i] -= 1.0;
        neg_mult[j] += 1.0;
      }
    }
  if (grads) {
    for (std::size_t i = 0; i < pos.size(); ++i)
      if (pos_mult[i] != 0.0) mp_accumulate_gradients(m, *pos[i], pos_mult[i], *grads);
    for (std::size_t j = 0; j < neg.size(); ++j)
      if (neg_mult[j] != 0.0) mp_accumulate_gradients(m, *neg[j], neg_mult[j], *grads);
  }
  return loss;
}

inline double cm_batch_loss(const CmModel& m, std::span<const SeqCounts* const> pos,
                            std::span<const SeqCounts* const> neg, double margin,
                            CmGradients* grads) {
  std::vector<double> sp(pos.size()), sn(neg.size());
  for (std::size_t i = 0; i < pos.size(); ++i) sp[i] = cm_score(m, *pos[i]);
  for (std::size_t j = 0; j < neg.size(); ++j) sn[j] = cm_score(m, *neg[j]);
  double loss = 0.0;
  std::vector<double> pos_mult(pos.size(), 0.0), neg_mult(neg.size(), 0.0);
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t j = 0; j < neg.size(); ++j) {
      const double h = sn[j] - sp[i] + margin;
      if (h > 0.0) {
        loss += h;
        pos_mult[i] -= 1.0;
        neg_mult[j] += 1.0;
      }
    }
  if (grads) {
    for (std::size_t i = 0; i < pos.size(); ++i)
      if (pos_mult[i] != 0.0) cm_accumulate_gradients(m, *pos[i], pos_mult[i], *grads);
    for (std::size_t j = 0; j < neg.size(); ++j)
      if (neg_mult[j] != 0.0) cm_accumulate_gradients(m, *neg[j], neg_mult[j], *grads);
  }
  return loss;
}

struct TrainLogRow {
  std::uint32_t iteration = 0;
  double loss = 0.0;
  double val_mrr = -1.0;  // -1 = not measured this iteration
  double wall_seconds = 0.0;
};

struct TrainedRelation {
  ModelVariant model;
  std::vector<TrainLogRow> log;
  std::size_t positives = 0;
  std::size_t vocabulary_size = 0;
  bool saturated = false;  // negative sampling hit the fallback cap
};

namespace detail {

// Validation queries touching one augmented relation: direct triples for
// base relations, reversed triples for inverse relations.
inline std::vector<std::pair<VertexId, VertexId>> relation_queries(
    std::span<const Triple> split, RelId relation, std::uint32_t base_relations) {
  std::vector<std::pair<VertexId, VertexId>> q;
  if (relation < base_relations) {
    for (const Triple& t : split)
      if (t.rel == relation) q.emplace_back(t.head, t.tail);
  } else {
    const RelId base = relation - base_relations;
    for (const Triple& t : split)
      if (t.rel == base) q.emplace_back(t.tail, t.head);
  }
  return q;
}

template <class Value>
double validation_mrr(const KnowledgeGraph& g, RelId relation, std::uint32_t max_length,
                      std::span<const std::pair<VertexId, VertexId>> queries,
                      const FilterIndex& filter, const EdgeScoreCache* kge,
                      PathInterner& interner, Value&& value) {
  if (queries.empty()) return -1.0;
  std::vector<double> scores(g.vertex_count());
  double acc = 0.0;
  for (const auto& [source, target] : queries) {
    std::fill(scores.begin(), scores.end(), 0.0);
    score_destinations(g, source, max_length, EdgeMask::none(), kge, interner, value, scores);
    acc += mrr_of(rank_query(scores, target, filter.known_tails(source, relation)));
  }
  return acc / static_cast<double>(queries.size());
}

}  // namespace detail

// Trains one relation's model. Masked path tables for positives are built
// once and cached; negative tables are unmasked and cached per (h, t). Early
// stopping tracks validation MRR (when the relation has validation queries)
// and the best snapshot is restored at the end.
//
// Returns nullopt when the relation has no training triples.
inline std::optional<TrainedRelation> train_relation(const KnowledgeGraph& g,
                                                     const DatasetSplits& splits,
                                                     const FilterIndex& filter, RelId relation,
                                                     ModelKind kind, const TrainConfig& cfg,
                                                     const EdgeScoreCache* kge = nullptr) {
  cfg.validate();
  if (kind == ModelKind::mp_kge && !kge)
    throw std::invalid_argument("train_relation: mp-kge requires an edge-score cache");
  const bool weighted = kind == ModelKind::mp_kge;
  const std::vector<Triple> positives = relation_triples(g, relation);
  if (positives.empty()) return std::nullopt;

  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  TrainedRelation out;
  out.positives = positives.size();
  PathInterner interner;

  // Masked tables for every positive (also the vocabulary support).
  std::vector<PathCounts> pos_tables;
  pos_tables.reserve(positives.size());
  for (const Triple& p : positives) {
    pos_tables.push_back(count_paths(g, p.head, p.tail, cfg.rule_length,
                                     EdgeMask::for_query(g, p), interner,
                                     weighted ? kge : nullptr));
  }

  std::vector<RelId> scratch;
  const auto valid_queries = detail::relation_queries(splits.valid, relation, g.base_relations);
  std::mt19937_64 rng(mix_seed(cfg.seed, relation));

  auto log_eval = [&](std::uint32_t iter, double loss, double val) {
    out.log.push_back(TrainLogRow{iter, loss, val, elapsed()});
  };

  if (kind == ModelKind::mp || kind == ModelKind::mp_kge) {
    std::vector<std::vector<RelId>> seqs;
    {
      std::unordered_set<PathId> seen;
      for (const PathCounts& t : pos_tables)
        for (const PathEntry& e : t.entries) seen.insert(e.path);
      seqs.reserve(seen.size());
      for (PathId p : seen) {
        interner.sequence(p, scratch);
        seqs.push_back(scratch);
      }
    }
    MpModel model = make_mp_model(relation, cfg.rule_length, PathVocabulary(std::move(seqs)),
                                  weighted);
    out.vocabulary_size = model.vocab.size();

    std::vector<VocabCounts> pos_counts(positives.size());
    for (std::size_t i = 0; i < positives.size(); ++i)
      pos_counts[i] = to_vocab_counts(pos_tables[i], interner, model.vocab, weighted);
    pos_tables.clear();
    pos_tables.shrink_to_fit();

    std::unordered_map<std::uint64_t, VocabCounts> neg_cache;
    auto negative_table = [&](VertexId h, VertexId t) -> const VocabCounts& {
      const std::uint64_t key = pack_pair(h, t);
      auto it = neg_cache.find(key);
      if (it == neg_cache.end()) {
        const PathCounts raw = count_paths(g, h, t, cfg.rule_length, EdgeMask::none(), interner,
                                           weighted ? kge : nullptr);
        it = neg_cache.emplace(key, to_vocab_counts(raw, interner, model.vocab, weighted)).first;
      }
      return it->second;
    };

    auto val_mrr = [&] {
      MpPathValue value(model, interner);
      return detail::validation_mrr(g, relation, model.max_length, valid_queries, filter,
                                    weighted ? kge : nullptr, interner, value);
    };

    double best_val = val_mrr();
    std::vector<double> best_weights = model.weights;
    log_eval(0, 0.0, best_val);

    if (!model.weights.empty()) {
      AdagradState state(model.weights.size());
      MpGradients grads(model);
      std::uint32_t evals_since_best = 0;
      for (std::uint32_t iter = 1; iter <= cfg.max_iters; ++iter) {
        Batch batch;
        try {
          batch = sample_batch(g, relation, positives, cfg.batch, rng);
        } catch (const SaturatedRelation&) {
          out.saturated = true;
          break;
        }
        std::vector<const VocabCounts*> bp, bn;
        for (std::uint32_t i : batch.positive_index) bp.push_back(&pos_counts[i]);
        for (const auto& [h, t] : batch.negatives) bn.push_back(&negative_table(h, t));
        grads.reset();
        const double loss = mp_batch_loss(model, bp, bn, cfg.margin, &grads);
        adagrad_step(model.weights, grads.weights, state, cfg.lr);
        project_simplex(model.weights);

        double val = -1.0;
        if (cfg.eval_every && iter % cfg.eval_every == 0) {
          val = val_mrr();
          if (val > best_val + 1e-12) {
            best_val = val;
            best_weights = model.weights;
            evals_since_best = 0;
          } else if (++evals_since_best >= cfg.patience && !valid_queries.empty()) {
            log_eval(iter, loss, val);
            break;
          }
        }
        log_eval(iter, loss, val);
      }
      if (!valid_queries.empty()) model.weights = best_weights;
    }
    out.model = std::move(model);
    return out;
  }

  // CM: cache tables keyed by explicit sequences so negatives may introduce
  // paths never seen around positives.
  CmModel model = make_cm_model(relation, cfg.rule_length,
                                static_cast<std::uint32_t>(g.relation_count()), cfg.alpha);
  auto to_seq_counts = [&](const PathCounts& t) {
    SeqCounts sc;
    sc.reserve(t.entries.size());
    for (const PathEntry& e : t.entries) {
      interner.sequence(e.path, scratch);
      sc.emplace_back(scratch, e.count);
    }
    return sc;
  };
  std::vector<SeqCounts> pos_counts(positives.size());
  for (std::size_t i = 0; i < positives.size(); ++i) pos_counts[i] = to_seq_counts(pos_tables[i]);
  pos_tables.clear();
  pos_tables.shrink_to_fit();

  std::unordered_map<std::uint64_t, SeqCounts> neg_cache;
  auto negative_table = [&](VertexId h, VertexId t) -> const SeqCounts& {
    const std::uint64_t key = pack_pair(h, t);
    auto it = neg_cache.find(key);
    if (it == neg_cache.end())
      it = neg_cache
               .emplace(key, to_seq_counts(count_paths(g, h, t, cfg.rule_length, EdgeMask::none(),
                                                       interner)))
               .first;
    return it->second;
  };

  auto val_mrr = [&] {
    CmPathValue value(model, interner);
    return detail::validation_mrr(g, relation, model.max_length, valid_queries, filter, nullptr,
                                  interner, value);
  };

  double best_val = val_mrr();
  CmModel best_model = model;
  log_eval(0, 0.0, best_val);

  // One optimizer state per parameter vector; the conjunction packs
  // (beta, w) into a single vector.
  std::vector<std::vector<AdagradState>> pred_state;
  std::vector<AdagradState> conj_state;
  for (const CmSubModel& sub : model.by_length) {
    std::vector<AdagradState> hops;
    for (const auto& row : sub.pred) hops.emplace_back(row.size());
    pred_state.push_back(std::move(hops));
    conj_state.emplace_back(sub.conj.weights.size() + 1);
  }

  CmGradients grads(model);
  std::uint32_t evals_since_best = 0;
  for (std::uint32_t iter = 1; iter <= cfg.max_iters; ++iter) {
    Batch batch;
    try {
      batch = sample_batch(g, relation, positives, cfg.batch, rng);
    } catch (const SaturatedRelation&) {
      out.saturated = true;
      break;
    }
    std::vector<const SeqCounts*> bp, bn;
    for (std::uint32_t i : batch.positive_index) bp.push_back(&pos_counts[i]);
    for (const auto& [h, t] : batch.negatives) bn.push_back(&negative_table(h, t));
    grads.reset();
    const double loss = cm_batch_loss(model, bp, bn, cfg.margin, &grads);

    for (std::size_t len = 0; len < model.by_length.size(); ++len) {
      CmSubModel& sub = model.by_length[len];
      for (std::size_t hop = 0; hop < sub.pred.size(); ++hop) {
        adagrad_step(sub.pred[hop], grads.by_length[len].pred[hop], pred_state[len][hop], cfg.lr);
        project_simplex(sub.pred[hop]);
      }
      std::vector<double> packed(sub.conj.weights.size() + 1);
      std::vector<double> packed_grad(packed.size());
      packed[0] = sub.conj.beta;
      std::copy(sub.conj.weights.begin(), sub.conj.weights.end(), packed.begin() + 1);
      packed_grad[0] = grads.by_length[len].conj_beta;
      std::copy(grads.by_length[len].conj_w.begin(), grads.by_length[len].conj_w.end(),
                packed_grad.begin() + 1);
      adagrad_step(packed, packed_grad, conj_state[len], cfg.lr);
      sub.conj.beta = packed[0];
      std::copy(packed.begin() + 1, packed.end(), sub.conj.weights.begin());
      project_conjunction(sub.conj);
    }

    double val = -1.0;
    if (cfg.eval_every && iter % cfg.eval_every == 0) {
      val = val_mrr();
      if (val > best_val + 1e-12) {
        best_val = val;
        best_model = model;
        evals_since_best = 0;
      } else if (++evals_since_best >= cfg.patience && !valid_queries.empty()) {
        log_eval(iter, loss, val);
        break;
      }
    }
    log_eval(iter, loss, val);
  }
  if (!valid_queries.empty()) model = best_model;
  out.model = std::move(model);
  return out;
}

// Spec-level convenience: computes the masked positive tables and unmasked
// negative tables on the fly and returns the batch loss (gradients optional).
// Training uses the cached path above; both routes share the same loss.
inline double batch_loss(const MpModel& m, const KnowledgeGraph& g,
                         std::span<const Triple> batch_pos,
                         std::span<const std::pair<VertexId, VertexId>> batch_neg, double margin,
                         const EdgeScoreCache* kge = nullptr, MpGradients* grads = nullptr) {
  PathInterner interner;
  std::vector<VocabCounts> pos, neg;
  for (const Triple& p : batch_pos)
    pos.push_back(to_vocab_counts(count_paths(g, p.head, p.tail, m.max_length,
                                              EdgeMask::for_query(g, p), interner,
                                              m.kge_weighted ? kge : nullptr),
                                  interner, m.vocab, m.kge_weighted));
  for (const auto& [h, t] : batch_neg)
    neg.push_back(to_vocab_counts(count_paths(g, h, t, m.max_length, EdgeMask::none(), interner,
                                              m.kge_weighted ? kge : nullptr),
                                  interner, m.vocab, m.kge_weighted));
  std::vector<const VocabCounts*> bp, bn;
  for (const auto& t : pos) bp.push_back(&t);
  for (const auto& t : neg) bn.push_back(&t);
  return mp_batch_loss(m, bp, bn, margin, grads);
}

}  // namespace kbc
