#pragma once

#include <variant>

#include <json.hpp>

#include "kbc/logic.hpp"
#include "kbc/paths.hpp"

namespace kbc {

using RelationPath = std::vector<RelId>;

// Mixture over whole relation paths: one simplex-constrained weight per
// observed path of length 1..max_length, pooled into a single vocabulary.
// score(u, v) = sum_r count[r] * w_r (or the KGE-weighted mass in place of
// counts when kge_weighted is set).
struct MpModel {
  RelId relation = 0;
  std::uint32_t max_length = 0;
  bool kge_weighted = false;
  PathVocabulary vocab;
  std::vector<double> weights;
};

// Chain of per-hop relation mixtures combined by a weighted conjunction, one
// sub-model per exact rule length; the final score sums the per-length
// scores. score_l(u, v) = sum_{|r|=l} count[r] * and(w^1_{r_1} .. w^l_{r_l}).
struct CmSubModel {
  std::vector<std::vector<double>> pred;  // [hop][relation], each row a simplex
  LnnConjunction conj;
};

struct CmModel {
  RelId relation = 0;
  std::uint32_t max_length = 0;
  double alpha = 0.7;
  std::uint32_t relation_space = 0;  // |R+|
  std::vector<CmSubModel> by_length; // index l-1 holds the length-l sub-model
};

inline CmModel make_cm_model(RelId relation, std::uint32_t max_length,
                             std::uint32_t relation_space, double alpha) {
  CmModel m;
  m.relation = relation;
  m.max_length = max_length;
  m.alpha = alpha;
  m.relation_space = relation_space;
  for (std::uint32_t len = 1; len <= max_length; ++len) {
    CmSubModel sub;
    sub.pred.assign(len, uniform_simplex(relation_space));
    sub.conj = initial_conjunction(len, alpha);
    m.by_length.push_back(std::move(sub));
  }
  return m;
}

inline MpModel make_mp_model(RelId relation, std::uint32_t max_length, PathVocabulary vocab,
                             bool kge_weighted) {
  MpModel m;
  m.relation = relation;
  m.max_length = max_length;
  m.kge_weighted = kge_weighted;
  m.vocab = std::move(vocab);
  if (m.vocab.size() > 0) m.weights = uniform_simplex(m.vocab.size());
  return m;
}

// ---- scoring ---------------------------------------------------------------

// Sparse table keyed by vocabulary id.
using VocabCounts = std::vector<std::pair<std::uint32_t, double>>;
// Sparse table keyed by explicit relation sequence.
using SeqCounts = std::vector<std::pair<RelationPath, double>>;

inline double mp_score(const MpModel& m, const VocabCounts& counts) {
  double acc = 0.0;
  for (const auto& [id, c] : counts) {
    if (id >= m.weights.size())
      throw std::invalid_argument("mp_score: vocabulary id out of range");
    acc += m.weights[id] * c;
  }
  return acc;
}

// Identical contract with KGE-weighted mass in place of counts.
inline double mp_score_weighted(const MpModel& m, const VocabCounts& weighted) {
  return mp_score(m, weighted);
}

inline double cm_path_value(const CmModel& m, std::span<const RelId> seq,
                            std::vector<double>& x_scratch) {
  const std::size_t len = seq.size();
  if (len == 0 || len > m.max_length)
    throw std::invalid_argument("cm_score: path length outside 1..max_length");
  const CmSubModel& sub = m.by_length[len - 1];
  x_scratch.resize(len);
  for (std::size_t i = 0; i < len; ++i) {
    if (seq[i] >= m.relation_space)
      throw std::invalid_argument("cm_score: unknown relation id " + std::to_string(seq[i]));
    x_scratch[i] = sub.pred[i][seq[i]];
  }
  return conj_forward(sub.conj, x_scratch);
}

inline double cm_score(const CmModel& m, const SeqCounts& counts) {
  double acc = 0.0;
  std::vector<double> x;
  for (const auto& [seq, c] : counts) acc += c * cm_path_value(m, seq, x);
  return acc;
}

// ---- gradients --------------------------------------------------------------

struct MpGradients {
  std::vector<double> weights;

  explicit MpGradients(const MpModel& m) : weights(m.weights.size(), 0.0) {}
  void reset() { std::fill(weights.begin(), weights.end(), 0.0); }
};

struct CmGradients {
  struct Sub {
    std::vector<std::vector<double>> pred;
    double conj_beta = 0.0;
    std::vector<double> conj_w;
  };
  std::vector<Sub> by_length;

  explicit CmGradients(const CmModel& m) {
    for (const CmSubModel& sub : m.by_length) {
      Sub g;
      g.pred.assign(sub.pred.size(), std::vector<double>(m.relation_space, 0.0));
      g.conj_w.assign(sub.conj.weights.size(), 0.0);
      by_length.push_back(std::move(g));
    }
  }
  void reset() {
    for (Sub& g : by_length) {
      for (auto& row : g.pred) std::fill(row.begin(), row.end(), 0.0);
      g.conj_beta = 0.0;
      std::fill(g.conj_w.begin(), g.conj_w.end(), 0.0);
    }
  }
};

// d score / d w_r = count[r]; scaled by upstream.
inline void mp_accumulate_gradients(const MpModel& m, const VocabCounts& counts, double upstream,
                                    MpGradients& out) {
  (void)m;
  for (const auto& [id, c] : counts) out.weights[id] += c * upstream;
}

// Chains through the conjunction into each hop's mixture at the relation the
// path selects.
inline void cm_accumulate_gradients(const CmModel& m, const SeqCounts& counts, double upstream,
                                    CmGradients& out) {
  std::vector<double> x;
  for (const auto& [seq, c] : counts) {
    const std::size_t len = seq.size();
    const CmSubModel& sub = m.by_length[len - 1];
    CmGradients::Sub& g = out.by_length[len - 1];
    x.resize(len);
    for (std::size_t i = 0; i < len; ++i) x[i] = sub.pred[i][seq[i]];
    const ConjGrads cg = conj_backward(sub.conj, x, upstream * c);
    g.conj_beta += cg.beta;
    for (std::size_t i = 0; i < len; ++i) {
      g.conj_w[i] += cg.weights[i];
      g.pred[i][seq[i]] += cg.inputs[i];
    }
  }
}

// ---- interner-keyed scoring (hot paths) -------------------------------------

// Memoized model value per interned relation path. Used by the fused
// destination scorer and by training over cached tables; agrees with
// mp_score / cm_score by construction (tested).
class MpPathValue {
 public:
  MpPathValue(const MpModel& m, const PathInterner& interner)
      : model_(&m), interner_(&interner) {}

  double operator()(PathId p) {
    const auto id = static_cast<std::size_t>(p);
    if (id >= memo_.size()) memo_.resize(interner_->size(), kUnset);
    double& v = memo_[id];
    if (std::isnan(v)) {
      interner_->sequence(p, scratch_);
      const auto hit = model_->vocab.find(scratch_);
      v = hit ? model_->weights[*hit] : 0.0;
    }
    return v;
  }

 private:
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
  const MpModel* model_;
  const PathInterner* interner_;
  std::vector<double> memo_;
  std::vector<RelId> scratch_;
};

class CmPathValue {
 public:
  CmPathValue(const CmModel& m, const PathInterner& interner)
      : model_(&m), interner_(&interner) {}

  double operator()(PathId p) {
    const auto id = static_cast<std::size_t>(p);
    if (id >= memo_.size()) memo_.resize(interner_->size(), kUnset);
    double& v = memo_[id];
    if (std::isnan(v)) {
      if (interner_->depth(p) > model_->max_length) {
        v = 0.0;
      } else {
        interner_->sequence(p, scratch_);
        v = cm_path_value(*model_, scratch_, x_);
      }
    }
    return v;
  }

 private:
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
  const CmModel* model_;
  const PathInterner* interner_;
  std::vector<double> memo_;
  std::vector<RelId> scratch_;
  std::vector<double> x_;
};

// Converts a traversal table into vocabulary-keyed counts; paths outside the
// vocabulary are dropped and counted.
inline VocabCounts to_vocab_counts(const PathCounts& table, const PathInterner& interner,
                                   const PathVocabulary& vocab, bool weighted,
                                   std::size_t* unknown_paths = nullptr) {
  VocabCounts out;
  out.reserve(table.entries.size());
  std::vector<RelId> scratch;
  for (const PathEntry& e : table.entries) {
    interner.sequence(e.path, scratch);
    const auto hit = vocab.find(scratch);
    if (!hit) {
      if (unknown_paths) ++*unknown_paths;
      continue;
    }
    out.emplace_back(*hit, weighted ? e.weighted : e.count);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- rule extraction ---------------------------------------------------------

struct Rule {
  RelId head = 0;
  RelationPath body;
  double weight = 0.0;
  bool recursive = false;
};

// Top-k paths by weight descending, ties broken by ascending vocabulary id.
// A rule is flagged recursive when its body mentions the head's base relation
// (directly or through the inverse).
inline std::vector<Rule> extract_rules(const MpModel& m, int top_k,
                                       std::uint32_t base_relations) {
  if (top_k <= 0) throw std::invalid_argument("extract_rules: top_k must be positive");
  std::vector<std::uint32_t> order(m.weights.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (m.weights[a] != m.weights[b]) return m.weights[a] > m.weights[b];
    return a < b;
  });
  auto base_of = [&](RelId r) { return r < base_relations ? r : r - base_relations; };
  std::vector<Rule> rules;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(top_k), order.size());
  rules.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rule r;
    r.head = m.relation;
    r.body = m.vocab.sequence(order[i]);
    r.weight = m.weights[order[i]];
    for (RelId b : r.body)
      if (base_of(b) == base_of(m.relation)) r.recursive = true;
    rules.push_back(std::move(r));
  }
  return rules;
}

// "head(X0,Xm) <- r1(X0,X1) ^ r2(X1,X2) # weight=..."; inverse relations are
// rendered as the base relation with swapped arguments.
inline std::string render_rule(const Rule& rule, const Vocabulary& relations,
                               std::uint32_t base_relations) {
  auto var = [](std::size_t i) { return "X" + std::to_string(i); };
  auto atom = [&](RelId r, std::size_t from, std::size_t to) {
    if (r >= base_relations)
      return relations.name(r - base_relations) + "(" + var(to) + "," + var(from) + ")";
    return relations.name(r) + "(" + var(from) + "," + var(to) + ")";
  };
  std::string s = atom(rule.head, 0, rule.body.size());
  s += " <- ";
  for (std::size_t i = 0; i < rule.body.size(); ++i) {
    if (i) s += " ^ ";
    s += atom(rule.body[i], i, i + 1);
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, " # weight=%.6g", rule.weight);
  s += buf;
  if (rule.recursive) s += " (recursive)";
  return s;
}

// ---- checkpoints -------------------------------------------------------------

using ModelVariant = std::variant<MpModel, CmModel>;

inline nlohmann::json to_json(const MpModel& m, const Vocabulary& relations) {
  nlohmann::json j;
  j["kind"] = "mp";
  j["relation"] = m.relation;
  j["relation_name"] = relations.name(m.relation);
  j["max_length"] = m.max_length;
  j["kge_weighted"] = m.kge_weighted;
  auto paths = nlohmann::json::array();
  for (std::uint32_t i = 0; i < m.vocab.size(); ++i) paths.push_back(m.vocab.sequence(i));
  j["vocabulary"] = std::move(paths);
  j["weights"] = m.weights;
  auto names = nlohmann::json::array();
  for (std::uint32_t r = 0; r < relations.size(); ++r) names.push_back(relations.name(r));
  j["relation_names"] = std::move(names);
  return j;
}

inline nlohmann::json to_json(const CmModel& m, const Vocabulary& relations) {
  nlohmann::json j;
  j["kind"] = "cm";
  j["relation"] = m.relation;
  j["relation_name"] = relations.name(m.relation);
  j["max_length"] = m.max_length;
  j["alpha"] = m.alpha;
  j["relation_space"] = m.relation_space;
  auto subs = nlohmann::json::array();
  for (std::size_t i = 0; i < m.by_length.size(); ++i) {
    const CmSubModel& sub = m.by_length[i];
    nlohmann::json js;
    js["length"] = i + 1;
    js["preds"] = sub.pred;
    js["conj"] = {{"alpha", sub.conj.alpha}, {"beta", sub.conj.beta}, {"weights", sub.conj.weights}};
    subs.push_back(std::move(js));
  }
  j["sub_models"] = std::move(subs);
  auto names = nlohmann::json::array();
  for (std::uint32_t r = 0; r < relations.size(); ++r) names.push_back(relations.name(r));
  j["relation_names"] = std::move(names);
  return j;
}

inline ModelVariant model_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "mp") {
    MpModel m;
    m.relation = j.at("relation").get<RelId>();
    m.max_length = j.at("max_length").get<std::uint32_t>();
    m.kge_weighted = j.value("kge_weighted", false);
    std::vector<RelationPath> paths;
    for (const auto& p : j.at("vocabulary")) paths.push_back(p.get<RelationPath>());
    const std::size_t n = paths.size();
    m.vocab = PathVocabulary(std::move(paths));
    m.weights = j.at("weights").get<std::vector<double>>();
    if (m.weights.size() != m.vocab.size() || m.vocab.size() != n)
      throw std::runtime_error("mp checkpoint: weights/vocabulary mismatch");
    return m;
  }
  if (kind == "cm") {
    CmModel m;
    m.relation = j.at("relation").get<RelId>();
    m.max_length = j.at("max_length").get<std::uint32_t>();
    m.alpha = j.at("alpha").get<double>();
    m.relation_space = j.at("relation_space").get<std::uint32_t>();
    for (const auto& js : j.at("sub_models")) {
      CmSubModel sub;
      sub.pred = js.at("preds").get<std::vector<std::vector<double>>>();
      sub.conj.alpha = js.at("conj").at("alpha").get<double>();
      sub.conj.beta = js.at("conj").at("beta").get<double>();
      sub.conj.weights = js.at("conj").at("weights").get<std::vector<double>>();
      m.by_length.push_back(std::move(sub));
    }
    if (m.by_length.size() != m.max_length)
      throw std::runtime_error("cm checkpoint: sub_models/max_length mismatch");
    return m;
  }
  throw std::runtime_error("unknown model kind in checkpoint: " + kind);
}

}  // namespace kbc
