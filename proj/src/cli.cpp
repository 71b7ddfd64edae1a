// SPDX-License-Identifier: Apache-2.0
#include "temf/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "temf/corpus.hpp"
#include "temf/errors.hpp"
#include "temf/evaluation.hpp"
#include "temf/generator.hpp"
#include "temf/gradcheck_suite.hpp"
#include "temf/metrics.hpp"
#include "temf/model.hpp"

namespace temf {

namespace {

namespace fs = std::filesystem;

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 0;

  // paths
  std::string corpus, validation_corpus, out, checkpoint, results, embeddings_a, embeddings_b;

  ModelConfig model;
  std::optional<std::size_t> max_tokens;
  bool freeze_embeddings = false;
  bool no_diff = false;
  std::string ablation = "full";

  GeneratorConfig generator;
  std::string language_mode = "en";
  std::optional<double> token_signal, temporal_signal, emotion_signal;
  std::vector<std::string> emotions;

  std::size_t cv = 10;
  std::size_t runs = 5;
  bool ablation_compare = false;
  std::vector<std::size_t> sweep;

  double gc_eps = 1e-4;
  std::string stencil = "ridders";

  std::string kappa_path;
};

void add_options(CLI::App& app, RunConfig& rc) {
  app.add_option("--seed", rc.seed, "Seed for every random stream of the command")->capture_default_str();
  app.add_option("--jobs", rc.jobs, "Worker threads (0: all cores)")->capture_default_str();

  auto* paths = app.add_option_group("Paths");
  paths->add_option("--corpus", rc.corpus, "Input corpus (JSON lines)");
  paths->add_option("--validation-corpus", rc.validation_corpus, "Held-out corpus for best-epoch selection (train)");
  paths->add_option("--out", rc.out, "Output corpus (gen-corpus)");
  paths->add_option("--checkpoint", rc.checkpoint, "Checkpoint written by train, read by eval");
  paths->add_option("--results", rc.results, "Results table written by eval");
  paths->add_option("--embeddings-a", rc.embeddings_a, "Word vectors, `token v1 ... vD` per line");
  paths->add_option("--embeddings-b", rc.embeddings_b, "Second word-vector table (enables dual embeddings)");
  paths->add_option("--rho-file", rc.model.rho_file, "Precomputed document vectors, `note_id v1 ... vD` per line");

  ModelConfig& m = rc.model;
  auto* model = app.add_option_group("Model");
  model->add_option("--max-sentences", m.max_sentences, "Context length n")->capture_default_str();
  model->add_option("--max-tokens", rc.max_tokens, "Tokens per sentence c (default 15, 17 for code-mixed corpora)");
  model->add_option("--dim", m.dim)->capture_default_str();
  model->add_option("--ffn-dim", m.ffn_dim)->capture_default_str();
  model->add_option("--heads", m.heads)->capture_default_str();
  model->add_option("--sentence-layers", m.sentence_layers)->capture_default_str();
  model->add_option("--abstract-layers", m.abstract_layers)->capture_default_str();
  model->add_option("--doc-layers", m.doc_encoder_layers)->capture_default_str();
  model->add_option("--head-hidden", m.head_hidden)->capture_default_str();
  model->add_option("--attention-dim", m.attention_dim)->capture_default_str();
  model->add_option("--alpha", m.alpha, "PB loss weight")->capture_default_str();
  model->add_option("--beta", m.beta, "TB loss weight")->capture_default_str();
  model->add_flag("--no-diff", rc.no_diff, "Drop the differential loss term");
  model->add_flag("--diff-normalize", m.diff_loss_normalize, "Mean instead of summed differential loss");
  model->add_option("--ablation", rc.ablation)
      ->check(CLI::IsMember({"full", "no_temporal", "no_emotion"}))
      ->capture_default_str();
  model->add_option("--dropout", m.dropout)->capture_default_str();
  model->add_option("--lr", m.learning_rate)->capture_default_str();
  model->add_option("--batch-size", m.batch_size)->capture_default_str();
  model->add_option("--epochs", m.epochs)->capture_default_str();
  model->add_flag("--dual-embeddings", m.dual_embeddings, "Average two embedding tables per token");
  model->add_flag("--freeze-embeddings", rc.freeze_embeddings);

  GeneratorConfig& g = rc.generator;
  auto* gen = app.add_option_group("Generator");
  gen->add_option("--notes", g.note_count)->capture_default_str();
  gen->add_option("--signal", g.signal, "Planted-signal strength s in [0, 1]")->capture_default_str();
  gen->add_option("--token-signal", rc.token_signal);
  gen->add_option("--temporal-signal", rc.temporal_signal);
  gen->add_option("--emotion-signal", rc.emotion_signal);
  gen->add_option("--language-mode", rc.language_mode)->check(CLI::IsMember({"en", "code_mixed"}))->capture_default_str();
  gen->add_option("--pb-rate", g.pb_rate)->capture_default_str();
  gen->add_option("--tb-rate", g.tb_rate)->capture_default_str();
  gen->add_option("--joint-rate", g.joint_rate)->capture_default_str();
  gen->add_option("--mean-note-length", g.mean_note_length)->capture_default_str();
  gen->add_option("--lexicon-size", g.lexicon_size)->capture_default_str();
  gen->add_option("--emotions", rc.emotions, "Emotion vocabulary (default emo_01..emo_15)")->delimiter(',');

  auto* cv = app.add_option_group("Evaluation");
  cv->add_option("--cv", rc.cv, "Folds")->capture_default_str();
  cv->add_option("--runs", rc.runs, "Repeated cross-validation runs")->capture_default_str();
  auto* compare = cv->add_flag("--ablation-compare", rc.ablation_compare, "Cross-validate full, no_temporal, no_emotion");
  cv->add_option("--sweep", rc.sweep, "Context lengths, e.g. 5,10,13,15,20")->delimiter(',')->excludes(compare);

  auto* gc = app.add_option_group("Gradient check");
  gc->add_option("--eps", rc.gc_eps, "Initial finite-difference step")->capture_default_str();
  gc->add_option("--stencil", rc.stencil)->check(CLI::IsMember({"central", "ridders"}))->capture_default_str();
}

void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw ConfigError(std::string(flag) + " is required");
  if (!fs::is_regular_file(path)) throw ConfigError(std::string(flag) + ": no such file: " + path);
}

void require_writable(const std::string& path, const char* flag) {
  if (path.empty()) throw ConfigError(std::string(flag) + " is required");
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) throw ConfigError(std::string(flag) + ": no such directory: " + parent.string());
}

void optional_file(const std::string& path, const char* flag) {
  if (!path.empty()) require_file(path, flag);
}

GeneratorConfig generator_config(const RunConfig& rc) {
  GeneratorConfig g = rc.generator;
  g.seed = rc.seed;
  g.language_mode = parse_language_mode(rc.language_mode);
  g.token_signal = rc.token_signal;
  g.temporal_signal = rc.temporal_signal;
  g.emotion_signal = rc.emotion_signal;
  if (!rc.emotions.empty()) g.emotion_labels = rc.emotions;
  try {
    g.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return g;
}

ModelConfig model_config(const RunConfig& rc, const Corpus& corpus) {
  ModelConfig m = rc.model;
  m.seed = rc.seed;
  m.ablation = parse_ablation(rc.ablation);
  m.diff_loss_enabled = !rc.no_diff;
  m.train_embeddings = !rc.freeze_embeddings;
  m.emotion_labels = corpus.emotion_labels;
  if (!rc.embeddings_b.empty()) m.dual_embeddings = true;
  const bool mixed = std::any_of(corpus.notes.begin(), corpus.notes.end(),
                                 [](const Note& n) { return n.language_mode == LanguageMode::code_mixed; });
  m.max_tokens = rc.max_tokens.value_or(default_max_tokens(mixed ? LanguageMode::code_mixed : LanguageMode::en));
  try {
    m.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return m;
}

struct Tables {
  std::optional<EmbeddingTable> a, b;
};

Tables load_tables(const RunConfig& rc, const ModelConfig& m, const std::vector<const Corpus*>& corpora) {
  Tables t;
  if (rc.embeddings_a.empty()) return t;
  std::unordered_set<std::string> vocab;
  for (const Corpus* c : corpora)
    for (const auto& tok : c->vocabulary()) vocab.insert(tok);
  t.a = EmbeddingTable::load_text(rc.embeddings_a, &vocab, m.train_embeddings);
  if (!rc.embeddings_b.empty()) t.b = EmbeddingTable::load_text(rc.embeddings_b, &vocab, m.train_embeddings);
  return t;
}

std::string f4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------- commands

int cmd_gen_corpus(const RunConfig& rc, std::ostream& out) {
  require_writable(rc.out, "--out");
  const GeneratorConfig g = generator_config(rc);
  const Corpus corpus = generate_corpus(g);
  save_corpus(corpus, rc.out);
  out << "wrote " << corpus.size() << " notes to " << rc.out << '\n';
  out << format_stats(corpus_stats(corpus));
  return kExitOk;
}

int cmd_train(const RunConfig& rc, std::ostream& out) {
  require_file(rc.corpus, "--corpus");
  optional_file(rc.validation_corpus, "--validation-corpus");
  optional_file(rc.embeddings_a, "--embeddings-a");
  optional_file(rc.embeddings_b, "--embeddings-b");
  optional_file(rc.model.rho_file, "--rho-file");
  if (!rc.embeddings_b.empty() && rc.embeddings_a.empty()) throw ConfigError("--embeddings-b needs --embeddings-a");
  require_writable(rc.checkpoint, "--checkpoint");

  const Corpus corpus = load_corpus(rc.corpus);
  std::optional<Corpus> validation;
  if (!rc.validation_corpus.empty()) validation = load_corpus(rc.validation_corpus);
  const ModelConfig m = model_config(rc, corpus);
  const Corpus* val = validation ? &*validation : nullptr;

  std::vector<const Corpus*> all{&corpus};
  if (val) all.push_back(val);
  Tables tables = load_tables(rc, m, all);
  TrainResult result = tables.a ? train(corpus, m, std::move(*tables.a), std::move(tables.b), val) : train(corpus, m, val);

  out << "config: " << m.to_json() << '\n';
  out << "epoch  L_pb      L_tb      L_diff    total     val_f1\n";
  for (std::size_t e = 0; e < result.history.size(); ++e) {
    const EpochLog& h = result.history[e];
    char line[128];
    std::snprintf(line, sizeof line, "%5zu  %.6f  %.6f  %.6f  %.6f  %s\n", e + 1, h.pb, h.tb, h.diff, h.total,
                  h.validation_f1 ? f4(*h.validation_f1).c_str() : "-");
    out << line;
  }
  const Evaluation ev = evaluate(result.model, corpus);
  out << "kept epoch " << result.best_epoch + 1 << "; training macro-F1 pb " << f4(ev.f1_pb) << " tb " << f4(ev.f1_tb)
      << '\n';

  nlohmann::ordered_json meta;
  meta["command"] = "train";
  meta["ablation"] = rc.ablation;
  meta["corpus"] = rc.corpus;
  meta["best_epoch"] = result.best_epoch;
  save_checkpoint(result.model, rc.checkpoint, meta.dump());
  out << "wrote checkpoint " << rc.checkpoint << '\n';
  return kExitOk;
}

void print_summary(std::ostream& out, const std::vector<LabeledResult>& results, const std::string& label_column) {
  char line[160];
  std::snprintf(line, sizeof line, "%-12s task  mean    stddev  baseline  scores\n",
                label_column.empty() ? "" : label_column.c_str());
  out << line;
  for (const auto& r : results) {
    const auto row = [&](const char* task, const Summary& s, const Summary& b) {
      std::snprintf(line, sizeof line, "%-12s %-4s  %.4f  %.4f  %.4f    %zu\n", r.label.c_str(), task, s.mean, s.stddev,
                    b.mean, s.count);
      out << line;
    };
    row("pb", r.result.pb, r.result.baseline_pb);
    row("tb", r.result.tb, r.result.baseline_tb);
  }
}

int cmd_eval(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  require_file(rc.corpus, "--corpus");
  optional_file(rc.embeddings_a, "--embeddings-a");
  optional_file(rc.embeddings_b, "--embeddings-b");
  optional_file(rc.model.rho_file, "--rho-file");
  if (!rc.results.empty()) require_writable(rc.results, "--results");
  for (std::size_t n : rc.sweep)
    if (n == 0) throw ConfigError("--sweep lengths must be positive");

  std::vector<std::string> config_lines;
  std::vector<LabeledResult> results;
  std::string label_column;

  if (!rc.checkpoint.empty() && rc.sweep.empty() && !rc.ablation_compare) {
    require_file(rc.checkpoint, "--checkpoint");
    const Corpus corpus = load_corpus(rc.corpus);
    const TemfModel model = load_checkpoint(rc.checkpoint);
    const Evaluation ev = evaluate(model, corpus);
    std::vector<int> y_pb, y_tb;
    for (const auto& n : corpus.notes) {
      y_pb.push_back(n.pb);
      y_tb.push_back(n.tb);
    }
    CvResult r;
    r.k = 1;
    r.runs = 1;
    r.scores.push_back({0, 0, ev.f1_pb, ev.f1_tb, majority_baseline_f1(y_pb), majority_baseline_f1(y_tb), 0});
    r.pb = {ev.f1_pb, 0.0, 1};
    r.tb = {ev.f1_tb, 0.0, 1};
    r.baseline_pb = {r.scores[0].baseline_pb, 0.0, 1};
    r.baseline_tb = {r.scores[0].baseline_tb, 0.0, 1};
    results.push_back({"checkpoint", std::move(r)});
    config_lines.push_back(model.config().to_json());
    nlohmann::ordered_json src;
    src["checkpoint"] = rc.checkpoint;
    src["corpus"] = rc.corpus;
    config_lines.push_back(src.dump());
    out << "macro-F1 pb " << f4(ev.f1_pb) << " tb " << f4(ev.f1_tb) << " on " << corpus.size() << " notes\n";
  } else {
    if (rc.cv < 2) throw ConfigError("--cv must be at least 2");
    if (rc.runs == 0) throw ConfigError("--runs must be positive");
    const Corpus corpus = load_corpus(rc.corpus);
    const ModelConfig m = model_config(rc, corpus);
    Tables tables = load_tables(rc, m, {&corpus});

    CvOptions opt;
    opt.k = rc.cv;
    opt.runs = rc.runs;
    opt.seed = rc.seed;
    opt.jobs = rc.jobs;
    opt.table_a = std::move(tables.a);
    opt.table_b = std::move(tables.b);
    opt.warn = [&err](const std::string& w) { err << "warning: " << w << '\n'; };

    config_lines.push_back(m.to_json());
    nlohmann::ordered_json proto;
    proto["corpus"] = rc.corpus;
    proto["corpus_provenance"] = corpus.provenance.empty() ? nlohmann::ordered_json(nullptr)
                                                           : nlohmann::ordered_json::parse(corpus.provenance, nullptr, false);
    proto["k"] = rc.cv;
    proto["runs"] = rc.runs;
    proto["seed"] = rc.seed;
    if (rc.ablation_compare) {
      proto["mode"] = "ablation_compare";
      label_column = "mode";
      results = ablation_compare(corpus, m, opt);
    } else if (!rc.sweep.empty()) {
      proto["mode"] = "context_sweep";
      proto["lengths"] = rc.sweep;
      label_column = "length";
      results = context_sweep(corpus, m, rc.sweep, opt);
    } else {
      proto["mode"] = "cv";
      results.push_back({"cv", run_cv(corpus, m, opt)});
    }
    config_lines.push_back(proto.dump());
    print_summary(out, results, label_column);
  }

  if (!rc.results.empty()) {
    std::ofstream file(rc.results);
    if (!file) throw Error("cannot write results file " + rc.results);
    write_results(file, results, label_column, config_lines);
    if (!file) throw Error("failed writing results file " + rc.results);
    out << "wrote results " << rc.results << '\n';
  }
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& rc, std::ostream& out) {
  if (rc.gc_eps < 1e-8 || rc.gc_eps > 1e-4) throw ConfigError("--eps must lie in [1e-8, 1e-4]");
  GradCheckSettings st;
  st.eps = rc.gc_eps;
  st.stencil = rc.stencil == "central" ? Stencil::central : Stencil::ridders;
  const GradCheckReport report = run_gradcheck_suite(default_gradcheck_cases(st));
  out << format_report(report);
  return report.passed() ? kExitOk : kExitRuntime;
}

int cmd_kappa(const RunConfig& rc, std::ostream& out) {
  require_file(rc.kappa_path, "matrix");
  const AgreementMatrix m = AgreementMatrix::load(rc.kappa_path);
  const auto kappa = fleiss_kappa(m);
  out << (kappa ? f4(*kappa) : std::string("undefined (Pe=1)")) << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  CLI::App app("Temporal- and emotion-assisted multitask classifier for PB/TB detection", "temf");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "TOML run configuration; flags override its values");
  app.require_subcommand(1);
  add_options(app, rc);

  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus and print its statistics");
  auto* trn = app.add_subcommand("train", "Train on a corpus and write a checkpoint");
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint, or cross-validate (ablation, sweep)");
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  auto* kap = app.add_subcommand("kappa", "Fleiss kappa of an agreement-matrix file");
  kap->add_option("matrix", rc.kappa_path, "File with an `r=<int>` header and one row of counts per item")->required();
  for (auto* sub : {gen, trn, evl, gc, kap}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (rc.jobs > 0) omp_set_num_threads(static_cast<int>(rc.jobs));
    if (*gen) return cmd_gen_corpus(rc, out);
    if (*trn) return cmd_train(rc, out);
    if (*evl) return cmd_eval(rc, out, err);
    if (*gc) return cmd_gradcheck(rc, out);
    return cmd_kappa(rc, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace temf
