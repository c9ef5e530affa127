#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

using namespace kbc;

namespace {

// Two relations p=0, q=1 over a 4-id space (as if augmented).
MpModel small_mp(std::vector<std::vector<RelId>> paths, std::vector<double> weights) {
  MpModel m;
  m.relation = 0;
  m.max_length = 3;
  m.vocab = PathVocabulary(std::move(paths));
  m.weights = std::move(weights);
  return m;
}

}  // namespace

TEST_CASE("cm_score on a single conjunctive path") {
  CmModel m = make_cm_model(0, 2, 4, 0.7);
  // hop mixtures select p at hop 1 and q at hop 2 with full weight
  m.by_length[1].pred[0] = {1.0, 0.0, 0.0, 0.0};
  m.by_length[1].pred[1] = {0.0, 1.0, 0.0, 0.0};
  m.by_length[1].conj = {3.1, {4.0, 4.0}, 0.7};
  SeqCounts counts{{{0, 1}, 1.0}};
  CHECK(cm_score(m, counts) == 1.0);  // 1 * clamp(3.1, 0, 1)
}

TEST_CASE("cm_score of an empty table is zero") {
  CmModel m = make_cm_model(0, 2, 4, 0.7);
  CHECK(cm_score(m, {}) == 0.0);
}

TEST_CASE("cm_score accumulates count-weighted conjunction values") {
  CmModel m = make_cm_model(0, 1, 3, 0.7);
  // 1-ary Lukasiewicz conjunction is the identity on [0,1], so the
  // conjunction values equal the hop weights 0.5 and 0.2.
  m.by_length[0].pred[0] = {0.5, 0.2, 0.3};
  m.by_length[0].conj = {1.0, {1.0}, 0.7};
  SeqCounts counts{{{0}, 2.0}, {{1}, 3.0}};
  CHECK_THAT(cm_score(m, counts), Catch::Matchers::WithinAbs(1.6, 1e-12));
}

TEST_CASE("cm_score validates relation ids and lengths") {
  CmModel m = make_cm_model(0, 2, 4, 0.7);
  REQUIRE_THROWS_AS(cm_score(m, SeqCounts{{{7}, 1.0}}), std::invalid_argument);
  REQUIRE_THROWS_AS(cm_score(m, SeqCounts{{{0, 1, 0}, 1.0}}), std::invalid_argument);
}

TEST_CASE("mp_score fixtures") {
  CHECK(mp_score(small_mp({{0}}, {1.0}), {{0, 2.0}}) == 2.0);
  CHECK(mp_score(small_mp({{0}}, {1.0}), {}) == 0.0);
  CHECK_THAT(mp_score(small_mp({{0}, {1}}, {0.25, 0.75}), {{0, 1.0}, {1, 4.0}}),
             Catch::Matchers::WithinAbs(3.25, 1e-12));
  REQUIRE_THROWS_AS(mp_score(small_mp({{0}}, {1.0}), {{3, 1.0}}), std::invalid_argument);
}

TEST_CASE("mp_score_weighted shares the contract with weighted mass") {
  CHECK(mp_score_weighted(small_mp({{0}}, {1.0}), {{0, 1.0}}) == 1.0);
  // constant edge score 0.5 on a single length-2 path: sigma = 1.0
  CHECK(mp_score_weighted(small_mp({{0, 1}}, {1.0}), {{0, 1.0}}) == 1.0);
  CHECK_THAT(mp_score_weighted(small_mp({{0}, {1}}, {0.9, 0.1}), {{0, 7.2}, {1, 0.3}}),
             Catch::Matchers::WithinAbs(6.51, 1e-12));
}

TEST_CASE("mp_score is homogeneous in the counts") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  auto m = small_mp({{0}, {1}, {0, 1}}, {0.2, 0.5, 0.3});
  for (int round = 0; round < 50; ++round) {
    VocabCounts counts{{0, u(rng)}, {2, u(rng)}};
    const double c = u(rng) + 0.1;
    VocabCounts scaled = counts;
    for (auto& [id, v] : scaled) v *= c;
    CHECK_THAT(mp_score(m, scaled), Catch::Matchers::WithinAbs(c * mp_score(m, counts), 1e-9));
  }
}

TEST_CASE("an mp vertex model scores exactly the selected path count") {
  auto m = small_mp({{0}, {1}, {0, 1}}, {0.0, 1.0, 0.0});
  VocabCounts counts{{0, 3.0}, {1, 7.0}, {2, 11.0}};
  CHECK(mp_score(m, counts) == 7.0);
}

TEST_CASE("mp gradients are the counts scaled by upstream") {
  auto m = small_mp({{0}, {1}}, {0.5, 0.5});
  MpGradients g(m);
  mp_accumulate_gradients(m, {{0, 2.0}}, 1.0, g);
  CHECK(g.weights == std::vector<double>{2.0, 0.0});
  g.reset();
  mp_accumulate_gradients(m, {}, 1.0, g);
  CHECK(g.weights == std::vector<double>{0.0, 0.0});
}

TEST_CASE("cm gradients chain through the conjunction") {
  CmModel m = make_cm_model(0, 2, 4, 0.7);
  m.by_length[1].pred[0] = {0.8, 0.2, 0.0, 0.0};
  m.by_length[1].pred[1] = {0.1, 0.9, 0.0, 0.0};
  m.by_length[1].conj = {1.7, {4.0, 4.0}, 0.7};  // z = 1.7 - 4*0.2 - 4*0.1 = 0.5
  SeqCounts counts{{{0, 1}, 1.0}};
  CmGradients g(m);
  cm_accumulate_gradients(m, counts, 1.0, g);
  CHECK_THAT(g.by_length[1].pred[0][0], Catch::Matchers::WithinAbs(4.0, 1e-12));
  CHECK_THAT(g.by_length[1].pred[1][1], Catch::Matchers::WithinAbs(4.0, 1e-12));
  CHECK(g.by_length[1].pred[0][1] == 0.0);
  CHECK_THAT(g.by_length[1].conj_beta, Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK_THAT(g.by_length[1].conj_w[0], Catch::Matchers::WithinAbs(-0.2, 1e-12));
}

TEST_CASE("cm gradients match finite differences at interior points") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  while (checked < 50) {
    CmModel m = make_cm_model(0, 2, 3, 0.7);
    for (auto& sub : m.by_length)
      for (auto& row : sub.pred) {
        for (double& w : row) w = u(rng);
        project_simplex(row);
      }
    SeqCounts counts{{{0}, 1.0 + u(rng)}, {{1, 2}, 1.0 + u(rng)}, {{2, 2}, u(rng)}};
    // stay away from clip corners
    bool interior = true;
    std::vector<double> x;
    for (const auto& [seq, c] : counts) {
      const auto& sub = m.by_length[seq.size() - 1];
      x.resize(seq.size());
      for (std::size_t i = 0; i < seq.size(); ++i) x[i] = sub.pred[i][seq[i]];
      const double z = conj_preclip(sub.conj, x);
      if (std::abs(z) < 1e-3 || std::abs(z - 1.0) < 1e-3) interior = false;
    }
    if (!interior) continue;
    ++checked;
    CmGradients g(m);
    cm_accumulate_gradients(m, counts, 1.0, g);
    // check a few pred coordinates by finite differences
    for (std::size_t len = 0; len < 2; ++len)
      for (std::size_t hop = 0; hop <= len; ++hop)
        for (std::size_t ri = 0; ri < 3; ++ri) {
          const double fd = oracles::central_difference(
              [&](const std::vector<double>& v) {
                CmModel probe = m;
                probe.by_length[len].pred[hop] = v;
                return cm_score(probe, counts);
              },
              m.by_length[len].pred[hop], ri);
          CHECK_THAT(g.by_length[len].pred[hop][ri], Catch::Matchers::WithinAbs(fd, 1e-5));
        }
  }
}

TEST_CASE("the simplified chain score equals the per-walk double sum") {
  // Eq-style cross-check: summing the conjunction value per individual walk
  // equals count * value per relation path.
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int round = 0; round < 10; ++round) {
    auto g = oracles::random_raw_graph(rng, {8, 3, 0.15});
    CmModel m = make_cm_model(0, 3, static_cast<std::uint32_t>(g.relation_count()), 0.7);
    for (auto& sub : m.by_length)
      for (auto& row : sub.pred) {
        for (double& w : row) w = u(rng);
        project_simplex(row);
      }
    for (VertexId uu = 0; uu < g.vertex_count(); ++uu) {
      auto walks = oracles::oracle_walks(g, uu, 3, EdgeMask::none());
      PathInterner interner;
      for (VertexId vv = 0; vv < g.vertex_count(); ++vv) {
        auto table = count_paths(g, uu, vv, 3, EdgeMask::none(), interner);
        SeqCounts sc;
        std::vector<RelId> seq;
        for (const PathEntry& e : table.entries) {
          interner.sequence(e.path, seq);
          sc.emplace_back(seq, e.count);
        }
        double per_walk = 0.0;
        std::vector<double> x;
        if (auto it = walks.find(vv); it != walks.end())
          for (const auto& [s, cs] : it->second)
            per_walk += cs.first * cm_path_value(m, s, x);
        CHECK_THAT(cm_score(m, sc), Catch::Matchers::WithinAbs(per_walk, 1e-12));
      }
    }
  }
}

TEST_CASE("fused destination scoring equals explicit table scoring") {
  std::mt19937_64 rng(321);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int round = 0; round < 10; ++round) {
    auto g = oracles::random_raw_graph(rng, {9, 3, 0.15});
    const auto R = static_cast<std::uint32_t>(g.relation_count());

    // an MP model over the paths observed from vertex 0
    PathInterner vocab_interner;
    std::vector<MaskedPair> pairs;
    for (VertexId v = 0; v < g.vertex_count(); ++v) pairs.push_back({0, v, EdgeMask::none()});
    auto vocab = build_path_vocabulary(g, pairs, 3, vocab_interner);
    if (vocab.size() == 0) continue;
    MpModel mp = make_mp_model(0, 3, std::move(vocab), false);
    for (double& w : mp.weights) w = u(rng);
    project_simplex(mp.weights);

    CmModel cm = make_cm_model(0, 3, R, 0.7);
    for (auto& sub : cm.by_length)
      for (auto& row : sub.pred) {
        for (double& w : row) w = u(rng);
        project_simplex(row);
      }

    for (VertexId source = 0; source < g.vertex_count(); ++source) {
      PathInterner interner;
      std::vector<double> mp_fused(g.vertex_count(), 0.0), cm_fused(g.vertex_count(), 0.0);
      MpPathValue mp_value(mp, interner);
      score_destinations(g, source, 3, EdgeMask::none(), nullptr, interner, mp_value, mp_fused);
      CmPathValue cm_value(cm, interner);
      score_destinations(g, source, 3, EdgeMask::none(), nullptr, interner, cm_value, cm_fused);

      auto tables = count_paths_all_destinations(g, source, 3, EdgeMask::none(), interner);
      std::vector<double> mp_explicit(g.vertex_count(), 0.0), cm_explicit(g.vertex_count(), 0.0);
      std::vector<RelId> seq;
      for (const auto& [v, table] : tables) {
        mp_explicit[v] = mp_score(mp, to_vocab_counts(table, interner, mp.vocab, false));
        SeqCounts sc;
        for (const PathEntry& e : table.entries) {
          interner.sequence(e.path, seq);
          sc.emplace_back(seq, e.count);
        }
        cm_explicit[v] = cm_score(cm, sc);
      }
      for (VertexId v = 0; v < g.vertex_count(); ++v) {
        CHECK_THAT(mp_fused[v], Catch::Matchers::WithinAbs(mp_explicit[v], 1e-9));
        CHECK_THAT(cm_fused[v], Catch::Matchers::WithinAbs(cm_explicit[v], 1e-9));
      }
    }
  }
}

TEST_CASE("unknown paths are dropped with a counter") {
  auto g = [] {
    Vocabulary ents, rels;
    const VertexId a = ents.add_or_get("a"), b = ents.add_or_get("b"), c = ents.add_or_get("c");
    const RelId p = rels.add_or_get("p"), q = rels.add_or_get("q");
    std::vector<Triple> t{{a, p, b}, {b, q, c}, {a, p, c}};
    return KnowledgeGraph::without_inverses(t, ents, rels);
  }();
  PathInterner interner;
  auto table = count_paths(g, 0, 2, 2, EdgeMask::none(), interner);
  PathVocabulary vocab(std::vector<std::vector<RelId>>{{0}});  // only (p)
  std::size_t unknown = 0;
  auto counts = to_vocab_counts(table, interner, vocab, false, &unknown);
  CHECK(counts.size() == 1);
  CHECK(unknown == 1);  // (p, q) not in the vocabulary
}

TEST_CASE("extract_rules orders by weight with id tie-breaks") {
  // vocabulary sorts lexicographically: {0} -> id 0, {0,1} -> id 1, {1} -> id 2
  auto m = small_mp({{0}, {1}, {0, 1}}, {0.3, 0.6, 0.1});
  auto rules = extract_rules(m, 2, 2);
  REQUIRE(rules.size() == 2);
  CHECK(rules[0].body == std::vector<RelId>{0, 1});
  CHECK(rules[0].weight == 0.6);
  CHECK(rules[1].body == std::vector<RelId>{0});

  SECTION("ties break toward the smaller vocabulary id") {
    auto tied = small_mp({{0}, {1}}, {0.5, 0.5});
    auto r = extract_rules(tied, 2, 2);
    CHECK(r[0].body == std::vector<RelId>{0});
    CHECK(r[1].body == std::vector<RelId>{1});
  }
  SECTION("top_k must be positive") {
    REQUIRE_THROWS_AS(extract_rules(m, 0, 2), std::invalid_argument);
  }
}

TEST_CASE("recursive rules are flagged") {
  // head relation 0; bodies with 0 or its inverse (0 + base) are recursive.
  // sorted vocabulary: {1} -> id 0, {1,0} -> id 1, {2,1} -> id 2
  auto m = small_mp({{1, 0}, {1}, {2, 1}}, {0.3, 0.5, 0.2});
  auto rules = extract_rules(m, 3, 2);
  REQUIRE(rules.size() == 3);
  CHECK(rules[0].body == std::vector<RelId>{1, 0});
  CHECK(rules[0].recursive);         // body contains relation 0
  CHECK_FALSE(rules[1].recursive);   // body = (1)
  CHECK(rules[2].recursive);         // body contains 2 = inverse of 0 (base=2)
}

TEST_CASE("rule rendering swaps arguments for inverse relations") {
  Vocabulary rels;
  rels.add_or_get("parent");
  rels.add_or_get("sibling");
  rels.add_or_get("parent^-1");
  rels.add_or_get("sibling^-1");
  Rule rule;
  rule.head = 0;
  rule.body = {1, 2};  // sibling, parent^-1
  rule.weight = 0.25;
  const std::string text = render_rule(rule, rels, 2);
  CHECK(text == "parent(X0,X2) <- sibling(X0,X1) ^ parent(X2,X1) # weight=0.25");

  Rule inv_head;
  inv_head.head = 2;  // parent^-1
  inv_head.body = {1};
  inv_head.weight = 0.5;
  inv_head.recursive = true;
  CHECK(render_rule(inv_head, rels, 2) ==
        "parent(X1,X0) <- sibling(X0,X1) # weight=0.5 (recursive)");
}

TEST_CASE("checkpoints round-trip through json") {
  Vocabulary rels;
  rels.add_or_get("p");
  rels.add_or_get("q");
  rels.add_or_get("p^-1");
  rels.add_or_get("q^-1");

  auto mp = small_mp({{0}, {0, 1}}, {0.7, 0.3});
  mp.kge_weighted = true;
  auto j = to_json(mp, rels);
  auto back = model_from_json(j);
  REQUIRE(std::holds_alternative<MpModel>(back));
  const MpModel& mp2 = std::get<MpModel>(back);
  CHECK(mp2.weights == mp.weights);
  CHECK(mp2.kge_weighted);
  CHECK(mp2.vocab.sequence(1) == std::vector<RelId>{0, 1});

  CmModel cm = make_cm_model(1, 2, 4, 0.7);
  cm.by_length[0].pred[0] = {0.1, 0.2, 0.3, 0.4};
  auto jc = to_json(cm, rels);
  auto cback = model_from_json(jc);
  REQUIRE(std::holds_alternative<CmModel>(cback));
  const CmModel& cm2 = std::get<CmModel>(cback);
  CHECK(cm2.by_length[0].pred[0] == cm.by_length[0].pred[0]);
  CHECK(cm2.by_length[1].conj.beta == cm.by_length[1].conj.beta);
  CHECK(cm2.alpha == 0.7);

  SECTION("mismatched weights are rejected") {
    j["weights"] = std::vector<double>{1.0};
    REQUIRE_THROWS(model_from_json(j));
  }
}
