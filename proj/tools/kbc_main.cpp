// Command-line frontend: train models, evaluate rankings, export rules, and
// dump path statistics for a dataset directory of train/valid/test triples.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kbc/evaluation.hpp"
#include "kbc/kge.hpp"
#include "kbc/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "kbc 0.1.0";

struct DataOpts {
  std::string dir;
  std::string train_path, valid_path, test_path;
};

void add_data_options(CLI::App* cmd, DataOpts& d) {
  auto* dir = cmd->add_option("--data", d.dir, "Dataset directory (train.txt/valid.txt/test.txt)");
  cmd->add_option("--train-file", d.train_path, "Explicit train triples path")->excludes(dir);
  cmd->add_option("--valid-file", d.valid_path, "Explicit valid triples path");
  cmd->add_option("--test-file", d.test_path, "Explicit test triples path");
}

kbc::DatasetSplits load_data(const DataOpts& d) {
  if (!d.dir.empty()) return kbc::load_dataset_dir(d.dir);
  if (d.train_path.empty() || d.valid_path.empty() || d.test_path.empty())
    throw CLI::ValidationError("--data or all of --train-file/--valid-file/--test-file required");
  return kbc::load_dataset(d.train_path, d.valid_path, d.test_path);
}

std::string rel_tag(kbc::RelId r) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "rel_%05u", r);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json config_echo(const CLI::App& cmd) {
  json j;
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_lnames().empty() ? std::string() : opt->get_lnames().front();
    if (name.empty() || name == "help" || name == "print-config" || name == "config") continue;
    if (opt->count() || opt->get_required() || !opt->get_default_str().empty()) {
      if (opt->count())
        j[name] = opt->results().size() == 1 ? json(opt->results().front()) : json(opt->results());
      else
        j[name] = opt->get_default_str();
    }
  }
  return j;
}

void maybe_print_config(const CLI::App& cmd, bool flag) {
  if (!flag) return;
  for (const CLI::Option* opt : cmd.get_options()) {
    const std::string name = opt->get_lnames().empty() ? std::string() : opt->get_lnames().front();
    if (name.empty() || name == "help" || name == "print-config" || name == "config") continue;
    std::string value;
    if (opt->count())
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
    else
      value = opt->get_default_str();
    std::cout << name << "=" << value << "\n";
  }
  std::exit(0);
}

kbc::ModelKind parse_kind(const std::string& s) {
  if (s == "cm") return kbc::ModelKind::cm;
  if (s == "mp") return kbc::ModelKind::mp;
  if (s == "mp-kge") return kbc::ModelKind::mp_kge;
  throw CLI::ValidationError("--model must be one of cm, mp, mp-kge");
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_train_log(const fs::path& path, const std::vector<kbc::TrainLogRow>& rows) {
  std::ostringstream out;
  out << "iteration,loss,val_mrr,wall_seconds\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.loss << ',';
    if (r.val_mrr >= 0.0) out << r.val_mrr;
    out << ',' << r.wall_seconds << '\n';
  }
  write_text(path, out.str());
}

void write_per_relation_csv(const fs::path& path, const std::vector<kbc::RelationBreakdownRow>& rows,
                            const kbc::Vocabulary& relations) {
  std::ostringstream out;
  out << "relation,relation_name,n_queries,mrr,hits1,hits3,hits10\n";
  out.precision(10);
  for (const auto& r : rows)
    out << r.relation << ',' << csv_escape(relations.name(r.relation)) << ',' << r.n_queries << ','
        << r.mrr << ',' << r.hits1 << ',' << r.hits3 << ',' << r.hits10 << '\n';
  write_text(path, out.str());
}

kbc::ModelSet load_checkpoints(const std::string& dir, bool* any_kge = nullptr) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json" && entry.path().filename() != "manifest.json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no checkpoint .json files under " + dir);
  kbc::ModelSet models;
  for (const fs::path& f : files) {
    std::ifstream in(f);
    json j = json::parse(in);
    kbc::ModelVariant m = kbc::model_from_json(j);
    if (any_kge && std::holds_alternative<kbc::MpModel>(m) &&
        std::get<kbc::MpModel>(m).kge_weighted)
      *any_kge = true;
    models.add(std::move(m));
  }
  return models;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  DataOpts data;
  std::string model = "mp";
  std::string out_dir;
  std::string embeddings;
  std::vector<kbc::RelId> relations;
  unsigned threads = 0;
  bool print_config = false;
  kbc::TrainConfig cfg;
};

int run_train(const CLI::App& cmd, TrainArgs& a) {
  maybe_print_config(cmd, a.print_config);
  const kbc::ModelKind kind = parse_kind(a.model);
  if (kind == kbc::ModelKind::mp_kge && a.embeddings.empty())
    throw CLI::ValidationError("--model mp-kge requires --embeddings");

  const kbc::DatasetSplits splits = load_data(a.data);
  const kbc::KnowledgeGraph graph = splits.train_graph();
  const kbc::FilterIndex filter(splits, graph.base_relations);

  std::optional<kbc::EmbeddingTable> table;
  std::optional<kbc::EdgeScoreCache> kge;
  if (kind == kbc::ModelKind::mp_kge) {
    table = kbc::load_embeddings(a.embeddings);
    if (table->entity_count < graph.vertex_count() ||
        table->relation_count < graph.relation_count())
      throw std::runtime_error("embedding table too small for this graph (needs " +
                               std::to_string(graph.vertex_count()) + " entities, " +
                               std::to_string(graph.relation_count()) + " relations)");
    kge.emplace(graph, [&](kbc::VertexId h, kbc::RelId r, kbc::VertexId t) {
      return kbc::edge_score(*table, h, r, t);
    });
  }

  std::vector<kbc::RelId> rels = a.relations;
  if (rels.empty())
    for (kbc::RelId r = 0; r < graph.relation_count(); ++r) rels.push_back(r);
  for (kbc::RelId r : rels)
    if (r >= graph.relation_count())
      throw CLI::ValidationError("--relations: id " + std::to_string(r) + " out of range");

  fs::create_directories(fs::path(a.out_dir) / "checkpoints");
  fs::create_directories(fs::path(a.out_dir) / "logs");

  std::vector<std::optional<kbc::TrainedRelation>> results(rels.size());
  kbc::parallel_for(rels.size(), a.threads, [&](std::size_t i) {
    results[i] = kbc::train_relation(graph, splits, filter, rels[i], kind, a.cfg,
                                     kge ? &*kge : nullptr);
  });

  std::size_t trained = 0, skipped = 0;
  json skipped_list = json::array();
  for (std::size_t i = 0; i < rels.size(); ++i) {
    if (!results[i]) {
      ++skipped;
      skipped_list.push_back(rels[i]);
      std::cerr << "note: relation " << rels[i] << " (" << graph.relations.name(rels[i])
                << ") has no training triples; skipped\n";
      continue;
    }
    ++trained;
    const auto tag = rel_tag(rels[i]);
    const json cp = std::visit([&](const auto& m) { return kbc::to_json(m, graph.relations); },
                               results[i]->model);
    write_json(fs::path(a.out_dir) / "checkpoints" / (tag + ".json"), cp);
    write_train_log(fs::path(a.out_dir) / "logs" / (tag + ".csv"), results[i]->log);
  }

  json manifest;
  manifest["command"] = "train";
  manifest["version"] = kVersion;
  manifest["config"] = config_echo(cmd);
  manifest["seed"] = a.cfg.seed;
  manifest["model"] = a.model;
  manifest["relations_trained"] = trained;
  manifest["relations_skipped"] = skipped_list;
  manifest["base_relations"] = graph.base_relations;
  write_json(fs::path(a.out_dir) / "manifest.json", manifest);

  std::cout << "trained " << trained << " relation models (" << skipped << " skipped) -> "
            << a.out_dir << "\n";
  return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  DataOpts data;
  std::string checkpoints;
  std::string out_dir;
  std::string embeddings;
  std::string split = "test";
  bool direct_only = false;
  unsigned threads = 0;
  bool print_config = false;
};

int run_eval(const CLI::App& cmd, EvalArgs& a) {
  maybe_print_config(cmd, a.print_config);
  const kbc::DatasetSplits splits = load_data(a.data);
  const kbc::KnowledgeGraph graph = splits.train_graph();
  const kbc::FilterIndex filter(splits, graph.base_relations);

  bool any_kge = false;
  const kbc::ModelSet models = load_checkpoints(a.checkpoints, &any_kge);

  std::optional<kbc::EmbeddingTable> table;
  std::optional<kbc::EdgeScoreCache> kge;
  if (any_kge) {
    if (a.embeddings.empty())
      throw CLI::ValidationError("checkpoints are KGE-weighted; --embeddings required");
    table = kbc::load_embeddings(a.embeddings);
    kge.emplace(graph, [&](kbc::VertexId h, kbc::RelId r, kbc::VertexId t) {
      return kbc::edge_score(*table, h, r, t);
    });
  }

  std::span<const kbc::Triple> eval_split;
  if (a.split == "test") eval_split = splits.test;
  else if (a.split == "valid") eval_split = splits.valid;
  else if (a.split == "train") eval_split = splits.train;
  else throw CLI::ValidationError("--split must be test, valid, or train");

  kbc::EvalOptions opt;
  opt.with_inverses = !a.direct_only;
  opt.threads = a.threads;
  opt.mask_query_edges = a.split == "train";

  const kbc::EvalResult res = kbc::evaluate(
      graph, eval_split, filter,
      [&] {
        return std::make_unique<kbc::PathModelScorer>(graph, models, kge ? &*kge : nullptr);
      },
      opt);

  if (res.missing_model_queries)
    std::cerr << "warning: " << res.missing_model_queries
              << " queries had no model for their relation (scored all-zero)\n";

  std::cout << std::fixed << std::setprecision(4) << "split=" << a.split
            << " mode=" << (opt.with_inverses ? "with-inverses" : "direct-only")
            << " n=" << res.report.n_queries << " MRR=" << res.report.mrr
            << " Hits@1=" << res.report.hits1 << " Hits@3=" << res.report.hits3
            << " Hits@10=" << res.report.hits10 << "\n";

  if (!a.out_dir.empty()) {
    fs::create_directories(a.out_dir);
    write_json(fs::path(a.out_dir) / "report.json", kbc::to_json(res.report));
    write_per_relation_csv(fs::path(a.out_dir) / "per_relation.csv", res.by_relation,
                           graph.relations);
  }
  return 0;
}

// ---- rules ------------------------------------------------------------------

struct RulesArgs {
  std::string checkpoints;
  std::string out_dir;
  int top_k = 10;
  bool print_config = false;
};

int run_rules(const CLI::App& cmd, RulesArgs& a) {
  maybe_print_config(cmd, a.print_config);
  const kbc::ModelSet models = load_checkpoints(a.checkpoints);
  fs::create_directories(fs::path(a.out_dir) / "rules");
  std::size_t written = 0, skipped = 0;
  models.for_each([&](kbc::RelId r, const kbc::ModelVariant& mv) {
    const kbc::MpModel* mp = std::get_if<kbc::MpModel>(&mv);
    if (!mp) {
      ++skipped;
      return;
    }
    // Relation names ride along in the checkpoint; rebuild a vocabulary.
    std::ifstream in(fs::path(a.checkpoints) / (rel_tag(r) + ".json"));
    json j = json::parse(in);
    kbc::Vocabulary relations;
    for (const auto& name : j.at("relation_names")) relations.add_or_get(name.get<std::string>());
    const auto base = static_cast<std::uint32_t>(relations.size() / 2);

    const auto rules = kbc::extract_rules(*mp, a.top_k, base);
    std::ostringstream text;
    json jr = json::array();
    for (const kbc::Rule& rule : rules) {
      text << kbc::render_rule(rule, relations, base) << "\n";
      jr.push_back({{"head", rule.head},
                    {"body", rule.body},
                    {"weight", rule.weight},
                    {"recursive", rule.recursive}});
    }
    write_text(fs::path(a.out_dir) / "rules" / (rel_tag(r) + ".txt"), text.str());
    write_json(fs::path(a.out_dir) / "rules" / (rel_tag(r) + ".json"), jr);
    ++written;
  });
  if (skipped)
    std::cerr << "note: " << skipped << " CM checkpoints skipped (rule listings are an MP view)\n";
  std::cout << "wrote rule lists for " << written << " relations -> " << a.out_dir << "\n";
  return 0;
}

// ---- path-stats ---------------------------------------------------------------

struct PathStatsArgs {
  DataOpts data;
  std::string out_dir;
  std::string embeddings;
  std::uint32_t length = 2;
  bool augmented = false;
  std::string reach_split = "valid";
  std::uint32_t reach_depth = 5;
  std::size_t cell_cap = 10'000'000;
  bool print_config = false;
};

int run_path_stats(const CLI::App& cmd, PathStatsArgs& a) {
  maybe_print_config(cmd, a.print_config);
  const kbc::DatasetSplits splits = load_data(a.data);
  const kbc::KnowledgeGraph graph =
      a.augmented ? splits.train_graph()
                  : kbc::KnowledgeGraph::without_inverses(splits.train, splits.entities,
                                                          splits.relations);
  fs::create_directories(a.out_dir);

  const kbc::PathCountMatrix counts = kbc::path_count_matrix(graph, a.length, a.cell_cap);
  {
    std::ofstream out(fs::path(a.out_dir) / ("path_counts_len" + std::to_string(a.length) + ".csv"));
    kbc::write_matrix_csv(counts, graph.relations, out);
  }

  if (!a.embeddings.empty()) {
    const kbc::EmbeddingTable table = kbc::load_embeddings(a.embeddings);
    kbc::EdgeScoreCache cache(graph, [&](kbc::VertexId h, kbc::RelId r, kbc::VertexId t) {
      return kbc::edge_score(table, h, r, t);
    });
    const kbc::PathCountMatrix scores = kbc::path_count_matrix(graph, a.length, a.cell_cap, &cache);
    std::ofstream out(fs::path(a.out_dir) / ("path_scores_len" + std::to_string(a.length) + ".csv"));
    kbc::write_matrix_csv(scores, graph.relations, out);
  }

  // Reachability runs over the augmented train graph (head queries traverse
  // inverse edges), regardless of the matrix flag.
  const kbc::KnowledgeGraph reach_graph = a.augmented ? graph : splits.train_graph();
  std::span<const kbc::Triple> qsplit =
      a.reach_split == "test" ? std::span<const kbc::Triple>(splits.test)
                              : std::span<const kbc::Triple>(splits.valid);
  const std::vector<double> frac = kbc::reachability_fraction(reach_graph, qsplit, a.reach_depth);
  {
    std::ostringstream out;
    out << "depth,fraction_reachable\n";
    out.precision(10);
    for (std::size_t d = 0; d < frac.size(); ++d) out << (d + 1) << ',' << frac[d] << '\n';
    write_text(fs::path(a.out_dir) / "reachability.csv", out.str());
  }
  std::cout << "path statistics -> " << a.out_dir << "\n";
  return 0;
}

// ---- train-embeddings ----------------------------------------------------------

struct TrainEmbArgs {
  DataOpts data;
  std::string out_file;
  std::string family = "similarity";
  kbc::KgeTrainConfig cfg;
  bool eval_after = false;
  unsigned threads = 0;
  bool print_config = false;
};

int run_train_embeddings(const CLI::App& cmd, TrainEmbArgs& a) {
  maybe_print_config(cmd, a.print_config);
  if (a.family == "similarity") a.cfg.family = kbc::KgeFamily::similarity;
  else if (a.family == "distance") a.cfg.family = kbc::KgeFamily::distance;
  else throw CLI::ValidationError("--family must be similarity or distance");

  const kbc::DatasetSplits splits = load_data(a.data);
  const kbc::KnowledgeGraph graph = splits.train_graph();
  const kbc::EmbeddingTable table = kbc::train_embeddings(graph, a.cfg);
  kbc::save_embeddings(table, a.out_file);
  std::cout << "embeddings (" << a.family << ", dim=" << a.cfg.dim << ") -> " << a.out_file
            << "\n";

  if (a.eval_after) {
    const kbc::FilterIndex filter(splits, graph.base_relations);
    kbc::EvalOptions opt;
    opt.threads = a.threads;
    const kbc::EvalResult res = kbc::evaluate(
        graph, splits.valid, filter, [&] { return std::make_unique<kbc::KgeOnlyScorer>(table); },
        opt);
    std::cout << std::fixed << std::setprecision(4)
              << "embedding-only valid MRR=" << res.report.mrr
              << " Hits@10=" << res.report.hits10 << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interpretable chain-rule learning for knowledge base completion"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train per-relation models");
  train->set_config("--config", "", "Flat key=value config file (CLI flags take precedence)");
  add_data_options(train, ta.data);
  train->add_option("--model", ta.model, "Model kind: cm | mp | mp-kge")->default_str("mp");
  train->add_option("--out", ta.out_dir, "Output directory")->required();
  train->add_option("--embeddings", ta.embeddings, "Embedding file (required for mp-kge)");
  train->add_option("--relations", ta.relations, "Train only these augmented relation ids")
      ->delimiter(',');
  train->add_option("--max-len", ta.cfg.rule_length, "Rule length m")->default_str("3");
  train->add_option("--gamma", ta.cfg.margin, "Margin")->default_str("1.0");
  train->add_option("--lr", ta.cfg.lr, "Adagrad step size")->default_str("1.0");
  train->add_option("--batch", ta.cfg.batch, "Batch size |B+| = |B-|")->default_str("8");
  train->add_option("--iters", ta.cfg.max_iters, "Max iterations per relation")->default_str("1000");
  train->add_option("--eval-every", ta.cfg.eval_every, "Validation cadence (iterations)")
      ->default_str("50");
  train->add_option("--patience", ta.cfg.patience, "Early-stop patience (evaluations)")
      ->default_str("10");
  train->add_option("--alpha", ta.cfg.alpha, "Conjunction alpha")->default_str("0.7");
  train->add_option("--seed", ta.cfg.seed, "Global seed")->default_str("7");
  train->add_option("--threads", ta.threads, "Worker threads (0 = all cores)")->default_str("0");
  train->add_flag("--print-config", ta.print_config, "Print effective options and exit");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Filtered tie-aware ranking over a split");
  eval->set_config("--config", "", "Flat key=value config file");
  add_data_options(eval, ea.data);
  eval->add_option("--checkpoints", ea.checkpoints, "Checkpoint directory")->required();
  eval->add_option("--out", ea.out_dir, "Report output directory");
  eval->add_option("--embeddings", ea.embeddings, "Embedding file (for KGE-weighted checkpoints)");
  eval->add_option("--split", ea.split, "test | valid | train")->default_str("test");
  eval->add_flag("--direct-only", ea.direct_only, "Exclude inverse queries");
  eval->add_option("--threads", ea.threads, "Worker threads (0 = all cores)")->default_str("0");
  eval->add_flag("--print-config", ea.print_config, "Print effective options and exit");

  RulesArgs ra;
  auto* rules = app.add_subcommand("rules", "Export top-k rules per relation");
  rules->add_option("--checkpoints", ra.checkpoints, "Checkpoint directory")->required();
  rules->add_option("--out", ra.out_dir, "Output directory")->required();
  rules->add_option("--top-k", ra.top_k, "Rules per relation")->default_str("10");
  rules->add_flag("--print-config", ra.print_config, "Print effective options and exit");

  PathStatsArgs pa;
  auto* pstats = app.add_subcommand("path-stats", "Path count/score matrices and reachability");
  pstats->set_config("--config", "", "Flat key=value config file");
  add_data_options(pstats, pa.data);
  pstats->add_option("--out", pa.out_dir, "Output directory")->required();
  pstats->add_option("--length", pa.length, "Relation-path length for the matrices")
      ->default_str("2");
  pstats->add_flag("--augmented", pa.augmented, "Include inverse relations in the matrices");
  pstats->add_option("--embeddings", pa.embeddings, "Also write the KGE-weighted score matrix");
  pstats->add_option("--reach-split", pa.reach_split, "valid | test")->default_str("valid");
  pstats->add_option("--reach-depth", pa.reach_depth, "Max reachability depth")->default_str("5");
  pstats->add_option("--cell-cap", pa.cell_cap, "Dense matrix cell cap")->default_str("10000000");
  pstats->add_flag("--print-config", pa.print_config, "Print effective options and exit");

  TrainEmbArgs ka;
  auto* temb = app.add_subcommand("train-embeddings", "Desk-scale embedding trainer");
  temb->set_config("--config", "", "Flat key=value config file");
  add_data_options(temb, ka.data);
  temb->add_option("--out", ka.out_file, "Output embedding file")->required();
  temb->add_option("--family", ka.family, "similarity | distance")->default_str("similarity");
  temb->add_option("--dim", ka.cfg.dim, "Embedding dimension")->default_str("256");
  temb->add_option("--epochs", ka.cfg.epochs, "Training epochs")->default_str("100");
  temb->add_option("--lr", ka.cfg.lr, "Adagrad step size")->default_str("0.1");
  temb->add_option("--negatives", ka.cfg.negatives, "Negatives per positive")->default_str("50");
  temb->add_option("--n3", ka.cfg.n3_weight, "N3 regularization weight")->default_str("0.001");
  temb->add_option("--margin", ka.cfg.margin, "Margin delta (distance family)")->default_str("9.0");
  temb->add_option("--seed", ka.cfg.seed, "Seed")->default_str("7");
  temb->add_flag("--eval", ka.eval_after, "Report embedding-only validation MRR after training");
  temb->add_option("--threads", ka.threads, "Worker threads for --eval")->default_str("0");
  temb->add_flag("--print-config", ka.print_config, "Print effective options and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return run_train(*train, ta);
    if (*eval) return run_eval(*eval, ea);
    if (*rules) return run_rules(*rules, ra);
    if (*pstats) return run_path_stats(*pstats, pa);
    if (*temb) return run_train_embeddings(*temb, ka);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
