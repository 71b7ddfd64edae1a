// SPDX-License-Identifier: Apache-2.0
// Acceptance checks, one verdict line per criterion. Pass criterion numbers
// as arguments to run a subset. Exit status is 1 when any selected check fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "temf/cli.hpp"
#include "temf/evaluation.hpp"
#include "temf/generator.hpp"
#include "temf/gradcheck_suite.hpp"
#include "temf/metrics.hpp"
#include "temf/model.hpp"

using namespace temf;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Small configuration shared with the gradient-check suite.
ModelConfig small_model() {
  ModelConfig c;
  c.dim = 8;
  c.heads = 2;
  c.ffn_dim = 16;
  c.head_hidden = 8;
  c.attention_dim = 8;
  c.max_tokens = 4;
  c.max_sentences = 3;
  c.sentence_layers = 1;
  c.doc_encoder_layers = 1;
  c.dropout = 0.0;
  return c;
}

// Desk configuration for the cross-validation criteria. Width and depth are
// reduced from the full-size defaults so 10-fold CV fits a single core; the
// learning rate is raised to converge within the epoch budget.
ModelConfig cv_model() {
  ModelConfig c;
  c.dim = 32;
  c.heads = 4;
  c.ffn_dim = 64;
  c.head_hidden = 32;
  c.attention_dim = 32;
  c.sentence_layers = 1;
  c.doc_encoder_layers = 1;
  c.learning_rate = 3e-3;
  c.epochs = 8;
  c.dropout = 0.1;
  return c;
}

double task_mean(const CvResult& r) { return (r.pb.mean + r.tb.mean) / 2; }

// ---------------------------------------------------------------- criteria

Verdict c1_statement() {
  return {true,
          "headline scores on the annotated corpora are not reproducible (the corpora are not distributed); "
          "acceptance rests on criteria 2-10"};
}

Verdict c2_gradcheck() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport report = run_gradcheck_suite(default_gradcheck_cases());
  const double secs = seconds_since(t0);
  double layer = 0, model = 0, op = 0;
  std::string failed;
  for (const auto& o : report.outcomes) {
    double& slot = o.kind == "model" ? model : o.kind == "layer" ? layer : op;
    slot = std::max(slot, o.max_relative_error);
    if (!o.passed) failed += (failed.empty() ? "" : ",") + o.name + fmt("(%.2e)", o.max_relative_error);
  }
  const bool pass = report.passed() && secs < 60.0;
  return {pass, fmt("ops max %.2e, layers max %.2e (< 1e-6), model max %.2e (< 1e-4), %.1f s (< 60)", op, layer, model,
                    secs) +
                    (failed.empty() ? "" : "; failing: " + failed)};
}

Verdict c3_loss_decomposition() {
  GeneratorConfig g;
  g.note_count = 25;
  g.seed = 3;
  g.mean_note_length = 3;
  g.mean_sentence_length_en = 4;
  g.lexicon_size = 20;
  const Corpus corpus = generate_corpus(g);
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> weight(0.0, 2.0);
  std::size_t passes = 0, exact = 0;
  double worst = 0;
  for (std::uint64_t trial = 0; trial < 4; ++trial) {
    ModelConfig c = small_model();
    c.seed = trial;
    c.alpha = weight(rng);
    c.beta = weight(rng);
    c.emotion_labels = corpus.emotion_labels;
    auto [a, b] = synthetic_embeddings(corpus, c);
    const TemfModel m(c, std::move(a), std::move(b));
    for (const Note& note : corpus.notes) {
      Tape tape;
      const LossTerms l = m.loss(tape, m.forward(tape, m.encode(note)), note.pb, note.tb);
      const double expect = c.alpha * l.pb + c.beta * l.tb + l.diff;
      worst = std::max(worst, std::abs(l.total.item() - expect));
      exact += l.total.item() == expect;
      ++passes;
    }
  }
  return {exact == passes && passes == 100,
          fmt("%zu/%zu passes bit-exact, max |difference| %.3g", exact, passes, worst)};
}

Verdict c4_overfit() {
  GeneratorConfig g;
  g.note_count = 8;
  g.seed = 1;
  g.signal = 1.0;
  g.pb_rate = 0.5;
  g.tb_rate = 0.5;
  g.joint_rate = 0.25;
  const Corpus corpus = generate_corpus(g);
  ModelConfig c;
  c.dim = 64;
  c.heads = 4;
  c.ffn_dim = 128;
  c.head_hidden = 64;
  c.attention_dim = 64;
  c.sentence_layers = 1;
  c.doc_encoder_layers = 1;
  c.batch_size = 1;
  c.dropout = 0.0;
  c.learning_rate = 1e-3;
  c.epochs = 50;
  c.emotion_labels = corpus.emotion_labels;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(corpus, c);
  const double secs = seconds_since(t0);
  double loss = 0;
  std::size_t pb_ok = 0, tb_ok = 0;
  for (const Note& note : corpus.notes) {
    Tape tape = Tape::inference();
    const EncodedNote e = r.model.encode(note);
    loss += r.model.loss(tape, r.model.forward(tape, e), note.pb, note.tb).total.item() / corpus.size();
    const Prediction p = r.model.predict(e);
    pb_ok += p.pb == note.pb;
    tb_ok += p.tb == note.tb;
  }
  const bool pass = loss < 0.1 && pb_ok == corpus.size() && tb_ok == corpus.size() && secs < 120;
  return {pass, fmt("final loss %.4f (< 0.1), accuracy pb %zu/8 tb %zu/8, %.1f s (< 120)", loss, pb_ok, tb_ok, secs)};
}

Verdict c5_planted_signal() {
  const auto t0 = std::chrono::steady_clock::now();
  CvOptions o;
  o.k = 10;
  o.runs = 1;
  o.seed = 0;
  GeneratorConfig g;
  g.seed = 11;
  g.signal = 1.0;
  const Corpus strong = generate_corpus(g);
  ModelConfig c = cv_model();
  c.emotion_labels = strong.emotion_labels;
  const CvResult s1 = run_cv(strong, c, o);
  g.seed = 12;
  g.signal = 0.0;
  const Corpus none = generate_corpus(g);
  const CvResult s0 = run_cv(none, c, o);
  const double secs = seconds_since(t0);

  const double d_pb = s0.pb.mean - s0.baseline_pb.mean;
  const double d_tb = s0.tb.mean - s0.baseline_tb.mean;
  const bool pass = s1.pb.mean >= 0.90 && s1.tb.mean >= 0.90 && std::abs(d_pb) <= 0.08 && std::abs(d_tb) <= 0.08 &&
                    secs < 1800;
  return {pass, fmt("s=1 pb %.4f tb %.4f (>= 0.90); s=0 pb %.4f vs baseline %.4f, tb %.4f vs %.4f (within 0.08); "
                    "%.0f s (< 1800)",
                    s1.pb.mean, s1.tb.mean, s0.pb.mean, s0.baseline_pb.mean, s0.tb.mean, s0.baseline_tb.mean, secs)};
}

Verdict c6_ablation_direction() {
  CvOptions o;
  o.k = 5;
  o.runs = 1;
  o.seed = 0;
  std::string detail;
  bool pass = true;
  for (const bool temporal_corpus : {true, false}) {
    GeneratorConfig g;
    g.seed = temporal_corpus ? 21 : 22;
    g.token_signal = 0.0;
    g.temporal_signal = temporal_corpus ? 1.0 : 0.0;
    g.emotion_signal = temporal_corpus ? 0.0 : 1.0;
    const Corpus corpus = generate_corpus(g);
    ModelConfig c = cv_model();
    c.emotion_labels = corpus.emotion_labels;
    const auto results = ablation_compare(corpus, c, o);
    const double full = task_mean(results[0].result);
    const double no_t = task_mean(results[1].result);
    const double no_e = task_mean(results[2].result);
    // the ablation that removes the planted channel must hurt; the other must not
    const double hit = full - (temporal_corpus ? no_t : no_e);
    const double spare = full - (temporal_corpus ? no_e : no_t);
    pass = pass && hit >= 0.15 && spare <= 0.05;
    detail += fmt("%s%s-only: full %.4f no_temporal %.4f no_emotion %.4f (drop %.4f >= 0.15, other %.4f <= 0.05)",
                  detail.empty() ? "" : "; ", temporal_corpus ? "temporal" : "emotion", full, no_t, no_e, hit, spare);
  }
  return {pass, detail};
}

Verdict c7_generator() {
  GeneratorConfig g;
  g.note_count = 10000;
  g.seed = 7;
  const CorpusStats s = corpus_stats(generate_corpus(g));
  double worst_mix = 0;
  for (std::size_t t = 0; t < 3; ++t) worst_mix = std::max(worst_mix, std::abs(s.temporal_fractions[t] - g.temporal_mix[t]));
  const double d_pb = std::abs(s.pb_rate - 0.1511), d_tb = std::abs(s.tb_rate - 0.1648);
  const double d_sent = std::abs(s.mean_sentence_length - 14.96), d_note = std::abs(s.mean_note_length - 13.0);
  const bool pass = worst_mix <= 0.02 && d_pb <= 0.02 && d_tb <= 0.02 && d_sent <= 0.5 && d_note <= 0.5;
  return {pass, fmt("temporal mix %.4f/%.4f/%.4f, pb %.4f, tb %.4f, sentence length %.2f, note length %.2f",
                    s.temporal_fractions[0], s.temporal_fractions[1], s.temporal_fractions[2], s.pb_rate, s.tb_rate,
                    s.mean_sentence_length, s.mean_note_length)};
}

Verdict c8_metrics() {
  struct Check {
    const char* name;
    double got, expect;
  };
  std::vector<int> seventy(10, 0);
  std::fill(seventy.begin() + 7, seventy.end(), 1);
  const double f0 = 2 * 0.7 / 1.7;  // precision 0.7, recall 1
  const std::vector<Check> checks{
      {"macro_f1 [0,0,1,1] vs [0,1,0,1]",
       macro_f1(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}), 0.5},
      {"majority 70/30", majority_baseline_f1(seventy), f0 / 2},
      {"majority 70/30 explicit", macro_f1(seventy, std::vector<int>(10, 0)), f0 / 2},
      {"kappa [[2,1],[1,2]]", fleiss_kappa({{{2, 1}, {1, 2}}, 3}).value_or(NAN), -1.0 / 3},
      {"kappa unanimous", fleiss_kappa({{{3, 0}, {0, 3}, {3, 0}}, 3}).value_or(NAN), 1.0},
      {"kappa unanimous 3 categories", fleiss_kappa({{{0, 4, 0}, {4, 0, 0}, {0, 0, 4}}, 4}).value_or(NAN), 1.0},
  };
  bool pass = true;
  std::string worst;
  double worst_err = 0;
  for (const auto& c : checks) {
    const double err = std::abs(c.got - c.expect);
    if (!(err <= 1e-9)) pass = false;
    if (!(err <= worst_err)) worst_err = err, worst = c.name;
  }
  const bool undefined = !fleiss_kappa({{{3, 0}, {3, 0}}, 3}).has_value();
  return {pass && undefined, fmt("%zu hand examples, max error %.2e%s; single-category kappa %s", checks.size(),
                                 worst_err, worst.empty() ? "" : (" (" + worst + ")").c_str(),
                                 undefined ? "undefined" : "DEFINED")};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "temf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

Verdict c9_protocol() {
  std::size_t violations = 0, degraded = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    GeneratorConfig g;
    g.seed = 1000 + seed;
    const Corpus c = generate_corpus(g);
    const FoldAssignment fa = stratified_kfold(c, 10, seed);
    degraded += fa.degraded;
    std::vector<int> seen(c.size(), 0);
    std::size_t lo = c.size(), hi = 0;
    std::array<std::size_t, 4> s_lo{}, s_hi{};
    s_lo.fill(c.size());
    for (const auto& fold : fa.folds) {
      std::array<std::size_t, 4> count{};
      for (auto i : fold) ++seen[i], ++count[2 * c.notes[i].pb + c.notes[i].tb];
      lo = std::min(lo, fold.size());
      hi = std::max(hi, fold.size());
      for (int s = 0; s < 4; ++s) s_lo[s] = std::min(s_lo[s], count[s]), s_hi[s] = std::max(s_hi[s], count[s]);
    }
    violations += fa.folds.size() != 10;
    violations += std::any_of(seen.begin(), seen.end(), [](int v) { return v != 1; });
    violations += hi - lo > 1;
    if (!fa.degraded)
      for (int s = 0; s < 4; ++s) violations += s_hi[s] - s_lo[s] > 1;
  }

  const fs::path dir = fs::temp_directory_path() / "temf_acceptance_c9";
  fs::create_directories(dir);
  const std::string corpus = (dir / "c.jsonl").string();
  cli({"gen-corpus", "--notes", "40", "--mean-note-length", "2", "--seed", "5", "--out", corpus});
  const std::vector<std::string> tiny{"--dim", "4", "--heads", "1", "--ffn-dim", "4", "--head-hidden", "3",
                                      "--attention-dim", "3", "--sentence-layers", "1", "--doc-layers", "1",
                                      "--max-sentences", "3", "--epochs", "1", "--lr", "1e-3", "--seed", "9"};
  std::vector<std::string> args{"eval", "--corpus", corpus, "--cv", "10", "--runs", "5"};
  args.insert(args.end(), tiny.begin(), tiny.end());
  auto a = args, b = args;
  a.insert(a.end(), {"--results", (dir / "a.csv").string()});
  b.insert(b.end(), {"--results", (dir / "b.csv").string()});
  const int code_a = cli(a), code_b = cli(b);
  const std::string text = slurp(dir / "a.csv");
  std::size_t pb = 0, tb = 0;
  std::string summary;
  {
    std::istringstream in(text);
    bool in_summary = false;
    for (std::string line; std::getline(in, line);) {
      if (line == "# summary") in_summary = true;
      if (in_summary) {
        summary += line + "\n";
        continue;
      }
      pb += line.find(",pb,") != std::string::npos;
      tb += line.find(",tb,") != std::string::npos;
    }
  }
  const bool identical = code_a == 0 && code_b == 0 && slurp(dir / "b.csv") == text;
  fs::remove_all(dir);
  // 10 folds x 5 runs gives one score per (run, fold) and task: 50 per task,
  // 100 score rows in all.
  const bool pass = violations == 0 && pb == 50 && tb == 50 && identical;
  return {pass, fmt("100 corpora x 10 folds: %zu violations (%zu pb-only fallbacks); --cv 10 --runs 5: %zu pb + %zu tb "
                    "scores, repeat run %s",
                    violations, degraded, pb, tb, identical ? "byte-identical" : "DIFFERS")};
}

Verdict c10_invariance() {
  GeneratorConfig g;
  g.note_count = 50;
  g.seed = 31;
  g.mean_note_length = 3;
  g.mean_sentence_length_en = 4;
  g.lexicon_size = 20;
  const Corpus corpus = generate_corpus(g);
  ModelConfig base = small_model();
  base.emotion_labels = corpus.emotion_labels;
  base.dual_embeddings = true;
  auto [ta, tb] = synthetic_embeddings(corpus, base);

  // padding: wider n and c share every parameter and must not move the output
  ModelConfig wide = base;
  wide.max_sentences = 7;
  wide.max_tokens = 9;
  const TemfModel narrow_m(base, ta.clone(), tb->clone());
  const TemfModel wide_m(wide, ta.clone(), tb->clone());
  double pad_err = 0;
  for (Note note : corpus.notes) {
    note.sentences.resize(std::min<std::size_t>(note.sentences.size(), base.max_sentences));
    for (auto& s : note.sentences) s.tokens.resize(std::min<std::size_t>(s.tokens.size(), base.max_tokens));
    const Prediction a = narrow_m.predict(note), b = wide_m.predict(note);
    pad_err = std::max({pad_err, std::abs(a.pb_prob - b.pb_prob), std::abs(a.tb_prob - b.tb_prob)});
    EncodedNote e = narrow_m.encode(note);
    Tape tape = Tape::inference();
    const Tensor rho = narrow_m.encode_document(tape, e, {});
    e.doc_padding = 5;
    const Tensor padded = narrow_m.encode_document(tape, e, {});
    for (std::size_t i = 0; i < rho.size(); ++i) pad_err = std::max(pad_err, std::abs(rho[i] - padded[i]));
  }

  // checkpoint round trip
  ModelConfig tc = base;
  tc.epochs = 1;
  tc.learning_rate = 1e-3;
  const TrainResult trained = train(corpus, tc, ta.clone(), tb->clone());
  const fs::path path = fs::temp_directory_path() / "temf_acceptance_c10.ckpt";
  save_checkpoint(trained.model, path);
  const TemfModel loaded = load_checkpoint(path);
  fs::remove(path);
  std::size_t identical = 0;
  for (const Note& note : corpus.notes) {
    const Prediction a = trained.model.predict(note), b = loaded.predict(note);
    identical += a.pb_prob == b.pb_prob && a.tb_prob == b.tb_prob;
  }

  // attention normalization, every mode
  double norm_err = 0;
  for (Ablation mode : {Ablation::full, Ablation::no_temporal, Ablation::no_emotion}) {
    ModelConfig c = base;
    c.ablation = mode;
    const TemfModel m(c, ta.clone(), tb->clone());
    for (const Note& note : corpus.notes) {
      Tape tape = Tape::inference();
      const ForwardTrace tr = m.forward(tape, m.encode(note));
      for (const auto* ws : {&tr.context_weights, &tr.temporal_weights, &tr.emotion_weights})
        for (const Tensor& w : *ws) {
          double sum = 0;
          for (std::size_t i = 0; i < w.size(); ++i) sum += w[i];
          norm_err = std::max(norm_err, std::abs(sum - 1.0));
        }
    }
  }

  // label permutation under each ablation
  std::mt19937_64 rng(5);
  std::size_t invariant = 0, checks = 0;
  for (Ablation mode : {Ablation::no_temporal, Ablation::no_emotion}) {
    ModelConfig c = base;
    c.ablation = mode;
    const TemfModel m(c, ta.clone(), tb->clone());
    for (const Note& note : corpus.notes) {
      Note permuted = note;
      for (auto& s : permuted.sentences) {
        if (mode == Ablation::no_temporal) {
          s.temporal = static_cast<Temporal>(rng() % 3);
        } else {
          s.emotion = corpus.emotion_labels[rng() % corpus.emotion_labels.size()];
        }
      }
      const Prediction a = m.predict(note), b = m.predict(permuted);
      invariant += a.pb_prob == b.pb_prob && a.tb_prob == b.tb_prob;
      ++checks;
    }
  }
  const bool pass = pad_err <= 1e-12 && identical == corpus.size() && norm_err <= 1e-12 && invariant == checks;
  return {pass, fmt("padding max diff %.2e, checkpoint %zu/%zu bit-identical, attention sum error %.2e, "
                    "ablated-label relabelling %zu/%zu invariant",
                    pad_err, identical, corpus.size(), norm_err, invariant, checks)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"non-reproducibility statement", c1_statement},
      {"gradient fidelity", c2_gradcheck},
      {"loss decomposition", c3_loss_decomposition},
      {"overfit oracle", c4_overfit},
      {"planted-signal recovery", c5_planted_signal},
      {"ablation direction", c6_ablation_direction},
      {"generator statistics", c7_generator},
      {"metric oracles", c8_metrics},
      {"protocol integrity", c9_protocol},
      {"invariance suite", c10_invariance},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << i + 1 << ". " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
