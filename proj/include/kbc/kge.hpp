#pragma once

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "kbc/kg.hpp"

namespace kbc {

enum class KgeFamily { similarity, distance };

inline std::string to_string(KgeFamily f) {
  return f == KgeFamily::similarity ? "similarity" : "distance";
}

// Pretrained embeddings. The similarity family keeps separate head-role and
// tail-role entity vectors (CP-style trilinear scoring); the distance family
// keeps one entity vector per id and a margin delta used to map distances
// into (-1, 1). Relation ids cover the augmented space, so inverse edges are
// scored with the inverse relation's own vector.
struct EmbeddingTable {
  KgeFamily family = KgeFamily::similarity;
  std::size_t entity_count = 0;
  std::size_t relation_count = 0;
  std::uint32_t dim = 0;
  double margin = 9.0;  // distance family only

  std::vector<double> ent_head, ent_tail;  // similarity family, [id * dim]
  std::vector<double> ent;                 // distance family
  std::vector<double> rel;

  std::span<const double> head_vec(VertexId v) const { return row(ent_head, v); }
  std::span<const double> tail_vec(VertexId v) const { return row(ent_tail, v); }
  std::span<const double> ent_vec(VertexId v) const { return row(ent, v); }
  std::span<const double> rel_vec(RelId r) const { return row(rel, r); }

  void check_ids(VertexId h, RelId r, VertexId t) const {
    if (h >= entity_count || t >= entity_count)
      throw std::runtime_error("missing embedding for entity id " +
                               std::to_string(h >= entity_count ? h : t));
    if (r >= relation_count)
      throw std::runtime_error("missing embedding for relation id " + std::to_string(r));
  }

 private:
  std::span<const double> row(const std::vector<double>& m, std::size_t id) const {
    return {m.data() + id * dim, dim};
  }
};

// Raw model score: trilinear product (similarity) or the L2 translation
// distance (distance family).
inline double kge_similarity(const EmbeddingTable& e, VertexId h, RelId r, VertexId t) {
  auto hv = e.head_vec(h), rv = e.rel_vec(r), tv = e.tail_vec(t);
  double acc = 0.0;
  for (std::uint32_t i = 0; i < e.dim; ++i) acc += hv[i] * rv[i] * tv[i];
  return acc;
}

inline double kge_distance(const EmbeddingTable& e, VertexId h, RelId r, VertexId t) {
  auto hv = e.ent_vec(h), rv = e.rel_vec(r), tv = e.ent_vec(t);
  double acc = 0.0;
  for (std::uint32_t i = 0; i < e.dim; ++i) {
    const double d = hv[i] + rv[i] - tv[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

// Per-edge score used inside path scores:
//   similarity: logistic(sim)            in (0, 1)
//   distance:   tanh(delta - d)          in (-1, 1)
inline double edge_score(const EmbeddingTable& e, VertexId h, RelId r, VertexId t) {
  e.check_ids(h, r, t);
  if (e.family == KgeFamily::similarity)
    return 1.0 / (1.0 + std::exp(-kge_similarity(e, h, r, t)));
  return std::tanh(e.margin - kge_distance(e, h, r, t));
}

inline double edge_score(const EmbeddingTable& e, const Triple& t) {
  return edge_score(e, t.head, t.rel, t.tail);
}

// sigma(p): per-edge scores summed along a chained path.
inline double path_score(const EmbeddingTable& e, std::span<const Triple> path) {
  if (path.empty()) throw std::invalid_argument("path_score: empty path");
  double acc = 0.0;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i > 0 && path[i - 1].tail != path[i].head)
      throw std::invalid_argument("path_score: edges are not chained");
    acc += edge_score(e, path[i]);
  }
  return acc;
}

// ---- file format ----------------------------------------------------------
//
//   KGE v1 {family} entities={n} relations={m} dim={d} margin={delta|none}
//   E_HEAD {id} v1 ... vd        (similarity)
//   E_TAIL {id} v1 ... vd        (similarity)
//   E {id} v1 ... vd             (distance)
//   R {id} v1 ... vd
//
// Values are written with max_digits10 precision so save/load round-trips
// bit-exactly.

inline void save_embeddings(const EmbeddingTable& e, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write embedding file: " + path);
  out.precision(17);
  out << "KGE v1 " << to_string(e.family) << " entities=" << e.entity_count
      << " relations=" << e.relation_count << " dim=" << e.dim << " margin=";
  if (e.family == KgeFamily::distance)
    out << e.margin;
  else
    out << "none";
  out << '\n';
  auto dump = [&](const char* tag, const std::vector<double>& m, std::size_t rows) {
    for (std::size_t id = 0; id < rows; ++id) {
      out << tag << ' ' << id;
      for (std::uint32_t i = 0; i < e.dim; ++i) out << ' ' << m[id * e.dim + i];
      out << '\n';
    }
  };
  if (e.family == KgeFamily::similarity) {
    dump("E_HEAD", e.ent_head, e.entity_count);
    dump("E_TAIL", e.ent_tail, e.entity_count);
  } else {
    dump("E", e.ent, e.entity_count);
  }
  dump("R", e.rel, e.relation_count);
}

namespace detail {

class TokenReader {
 public:
  explicit TokenReader(std::string text) : text_(std::move(text)) {}

  // Next whitespace-delimited token; empty when exhausted.
  std::string_view next() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return std::string_view(text_).substr(start, pos_ - start);
  }

  std::size_t offset() const { return pos_; }

 private:
  std::string text_;
  std::size_t pos_ = 0;
};

inline double parse_double(std::string_view tok, std::size_t offset) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw std::runtime_error("embedding file: bad number near byte offset " +
                             std::to_string(offset));
  if (!std::isfinite(v))
    throw std::runtime_error("embedding file: non-finite value near byte offset " +
                             std::to_string(offset));
  return v;
}

}  // namespace detail

inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embedding file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::TokenReader r(std::move(text));

  auto expect = [&](std::string_view want) {
    auto tok = r.next();
    if (tok != want)
      throw std::runtime_error("embedding file: expected '" + std::string(want) + "' got '" +
                               std::string(tok) + "' at byte offset " + std::to_string(r.offset()));
  };
  auto keyed = [&](std::string_view key) {
    auto tok = r.next();
    if (!tok.starts_with(key) || tok.size() <= key.size() || tok[key.size()] != '=')
      throw std::runtime_error("embedding file: expected " + std::string(key) +
                               "=... at byte offset " + std::to_string(r.offset()));
    return std::string(tok.substr(key.size() + 1));
  };

  expect("KGE");
  expect("v1");
  auto family_tok = r.next();
  EmbeddingTable e;
  if (family_tok == "similarity")
    e.family = KgeFamily::similarity;
  else if (family_tok == "distance")
    e.family = KgeFamily::distance;
  else
    throw std::runtime_error("embedding file: unknown family tag '" + std::string(family_tok) +
                             "'");
  e.entity_count = std::stoull(keyed("entities"));
  e.relation_count = std::stoull(keyed("relations"));
  e.dim = static_cast<std::uint32_t>(std::stoul(keyed("dim")));
  const std::string margin = keyed("margin");
  if (margin == "none") {
    if (e.family == KgeFamily::distance) e.margin = 9.0;  // legacy default, flagged by caller
  } else {
    e.margin = detail::parse_double(margin, r.offset());
    if (e.family == KgeFamily::distance && e.margin <= 0.0)
      throw std::runtime_error("embedding file: margin must be > 0 for the distance family");
  }

  const std::size_t cells = e.entity_count * e.dim;
  if (e.family == KgeFamily::similarity) {
    e.ent_head.assign(cells, 0.0);
    e.ent_tail.assign(cells, 0.0);
  } else {
    e.ent.assign(cells, 0.0);
  }
  e.rel.assign(e.relation_count * e.dim, 0.0);

  std::vector<char> seen_head(e.entity_count, 0), seen_tail(e.entity_count, 0),
      seen_rel(e.relation_count, 0);
  const std::size_t rows =
      (e.family == KgeFamily::similarity ? 2 * e.entity_count : e.entity_count) +
      e.relation_count;
  for (std::size_t row = 0; row < rows; ++row) {
    auto tag = r.next();
    if (tag.empty())
      throw std::runtime_error("embedding file: truncated at byte offset " +
                               std::to_string(r.offset()) + " (expected " + std::to_string(rows) +
                               " vector rows)");
    std::vector<double>* dst = nullptr;
    std::vector<char>* seen = nullptr;
    std::size_t limit = 0;
    if (tag == "E_HEAD" && e.family == KgeFamily::similarity) {
      dst = &e.ent_head; seen = &seen_head; limit = e.entity_count;
    } else if (tag == "E_TAIL" && e.family == KgeFamily::similarity) {
      dst = &e.ent_tail; seen = &seen_tail; limit = e.entity_count;
    } else if (tag == "E" && e.family == KgeFamily::distance) {
      dst = &e.ent; seen = &seen_head; limit = e.entity_count;
    } else if (tag == "R") {
      dst = &e.rel; seen = &seen_rel; limit = e.relation_count;
    } else {
      throw std::runtime_error("embedding file: unexpected row tag '" + std::string(tag) +
                               "' at byte offset " + std::to_string(r.offset()));
    }
    auto id_tok = r.next();
    const std::size_t id = static_cast<std::size_t>(detail::parse_double(id_tok, r.offset()));
    if (id >= limit)
      throw std::runtime_error("embedding file: row id " + std::to_string(id) +
                               " out of range at byte offset " + std::to_string(r.offset()));
    if ((*seen)[id]++)
      throw std::runtime_error("embedding file: duplicate row for id " + std::to_string(id));
    for (std::uint32_t i = 0; i < e.dim; ++i) {
      auto tok = r.next();
      if (tok.empty())
        throw std::runtime_error("embedding file: truncated vector at byte offset " +
                                 std::to_string(r.offset()));
      (*dst)[id * e.dim + i] = detail::parse_double(tok, r.offset());
    }
  }
  if (!r.next().empty())
    throw std::runtime_error("embedding file: trailing data at byte offset " +
                             std::to_string(r.offset()));
  return e;
}

// ---- desk-scale trainer ----------------------------------------------------

struct KgeTrainConfig {
  KgeFamily family = KgeFamily::similarity;
  std::uint32_t dim = 256;
  std::uint32_t epochs = 100;
  double lr = 0.1;
  std::uint32_t negatives = 50;
  double n3_weight = 1e-3;  // similarity family
  double margin = 9.0;      // distance family
  std::uint64_t seed = 7;
};

// Small self-contained trainer over the augmented train edges. Similarity
// family: sampled-softmax cross entropy on trilinear scores with an N3-style
// cube regularizer; distance family: margin ranking on L2 distances. Single
// threaded and deterministic given the seed. This is plumbing for desk-scale
// experiments, not a replacement for full-scale pretrained tables.
inline EmbeddingTable train_embeddings(const KnowledgeGraph& g, const KgeTrainConfig& cfg) {
  EmbeddingTable e;
  e.family = cfg.family;
  e.entity_count = g.vertex_count();
  e.relation_count = g.relation_count();
  e.dim = cfg.dim;
  e.margin = cfg.margin;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> init(0.0, 0.1);
  const std::size_t ecells = e.entity_count * e.dim;
  const std::size_t rcells = e.relation_count * e.dim;
  auto fill = [&](std::vector<double>& m, std::size_t n) {
    m.resize(n);
    for (double& v : m) v = init(rng);
  };
  if (cfg.family == KgeFamily::similarity) {
    fill(e.ent_head, ecells);
    fill(e.ent_tail, ecells);
  } else {
    fill(e.ent, ecells);
  }
  fill(e.rel, rcells);

  // Adagrad accumulators, one per embedding row block.
  std::vector<double> acc_head(e.family == KgeFamily::similarity ? ecells : 0, 0.0);
  std::vector<double> acc_tail(acc_head.size(), 0.0);
  std::vector<double> acc_ent(e.family == KgeFamily::distance ? ecells : 0, 0.0);
  std::vector<double> acc_rel(rcells, 0.0);
  constexpr double kEps = 1e-10;

  const std::size_t n_edges = g.edges.size();
  std::uniform_int_distribution<VertexId> rand_vertex(0,
                                                      static_cast<VertexId>(e.entity_count - 1));
  std::vector<std::size_t> order(n_edges);
  for (std::size_t i = 0; i < n_edges; ++i) order[i] = i;

  std::vector<VertexId> cands(cfg.negatives + 1);
  std::vector<double> logits(cfg.negatives + 1);
  std::vector<double> grad_h(e.dim), grad_r(e.dim);

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t oi : order) {
      const Triple& tr = g.edges[oi];
      if (cfg.family == KgeFamily::similarity) {
        cands[0] = tr.tail;
        for (std::uint32_t k = 1; k <= cfg.negatives; ++k) cands[k] = rand_vertex(rng);
        auto hv = e.ent_head.data() + tr.head * e.dim;
        auto rv = e.rel.data() + tr.rel * e.dim;
        double maxlog = -1e300;
        for (std::size_t k = 0; k < cands.size(); ++k) {
          auto tv = e.ent_tail.data() + cands[k] * e.dim;
          double s = 0.0;
          for (std::uint32_t i = 0; i < e.dim; ++i) s += hv[i] * rv[i] * tv[i];
          logits[k] = s;
          maxlog = std::max(maxlog, s);
        }
        double z = 0.0;
        for (double& l : logits) {
          l = std::exp(l - maxlog);
          z += l;
        }
        epoch_loss += -std::log(logits[0] / z);
        // d loss / d logit_k = softmax_k - [k == 0]
        std::fill(grad_h.begin(), grad_h.end(), 0.0);
        std::fill(grad_r.begin(), grad_r.end(), 0.0);
        for (std::size_t k = 0; k < cands.size(); ++k) {
          const double gk = logits[k] / z - (k == 0 ? 1.0 : 0.0);
          auto tv = e.ent_tail.data() + cands[k] * e.dim;
          auto at = acc_tail.data() + cands[k] * e.dim;
          for (std::uint32_t i = 0; i < e.dim; ++i) {
            const double hr = hv[i] * rv[i];
            grad_h[i] += gk * rv[i] * tv[i];
            grad_r[i] += gk * hv[i] * tv[i];
            const double gt = gk * hr + 3.0 * cfg.n3_weight * tv[i] * std::abs(tv[i]);
            at[i] += gt * gt;
            tv[i] -= cfg.lr * gt / std::sqrt(at[i] + kEps);
          }
        }
        auto ah = acc_head.data() + tr.head * e.dim;
        auto ar = acc_rel.data() + tr.rel * e.dim;
        auto hv_mut = e.ent_head.data() + tr.head * e.dim;
        auto rv_mut = e.rel.data() + tr.rel * e.dim;
        for (std::uint32_t i = 0; i < e.dim; ++i) {
          const double gh = grad_h[i] + 3.0 * cfg.n3_weight * hv[i] * std::abs(hv[i]);
          const double gr = grad_r[i] + 3.0 * cfg.n3_weight * rv[i] * std::abs(rv[i]);
          ah[i] += gh * gh;
          ar[i] += gr * gr;
          hv_mut[i] -= cfg.lr * gh / std::sqrt(ah[i] + kEps);
          rv_mut[i] -= cfg.lr * gr / std::sqrt(ar[i] + kEps);
        }
      } else {
        // Margin ranking on one corrupted tail, with the same delta that the
        // score transform uses.
        VertexId neg = rand_vertex(rng);
        const double dp = kge_distance(e, tr.head, tr.rel, tr.tail);
        const double dn = kge_distance(e, tr.head, tr.rel, neg);
        const double hinge = cfg.margin + dp - dn;
        if (hinge <= 0.0) continue;
        epoch_loss += hinge;
        auto hv = e.ent.data() + tr.head * e.dim;
        auto rv = e.rel.data() + tr.rel * e.dim;
        auto tv = e.ent.data() + tr.tail * e.dim;
        auto nv = e.ent.data() + neg * e.dim;
        auto ah = acc_ent.data() + tr.head * e.dim;
        auto ar = acc_rel.data() + tr.rel * e.dim;
        auto at = acc_ent.data() + tr.tail * e.dim;
        auto an = acc_ent.data() + neg * e.dim;
        for (std::uint32_t i = 0; i < e.dim; ++i) {
          const double dpos = hv[i] + rv[i] - tv[i];
          const double dneg = hv[i] + rv[i] - nv[i];
          const double gp = dp > 0 ? dpos / dp : 0.0;
          const double gn = dn > 0 ? dneg / dn : 0.0;
          const double gh = gp - gn, gr = gp - gn, gt = -gp, gneg = gn;
          ah[i] += gh * gh;
          hv[i] -= cfg.lr * gh / std::sqrt(ah[i] + kEps);
          ar[i] += gr * gr;
          rv[i] -= cfg.lr * gr / std::sqrt(ar[i] + kEps);
          at[i] += gt * gt;
          tv[i] -= cfg.lr * gt / std::sqrt(at[i] + kEps);
          an[i] += gneg * gneg;
          nv[i] -= cfg.lr * gneg / std::sqrt(an[i] + kEps);
        }
      }
    }
    if (!std::isfinite(epoch_loss))
      throw std::runtime_error("train_embeddings diverged: non-finite loss at epoch " +
                               std::to_string(epoch) + " (lower the step size)");
  }
  return e;
}

}  // namespace kbc
