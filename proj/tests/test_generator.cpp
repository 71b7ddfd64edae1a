// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "temf/errors.hpp"
#include "temf/generator.hpp"
#include "temf/metrics.hpp"

using namespace temf;

namespace {

// Bag-of-words logistic regression, trained by full-batch gradient descent.
// Independent of the model code; used to check that the planted signal is
// learnable at all.
struct BowOracle {
  std::map<std::string, std::size_t> index;
  std::vector<double> w;
  double b = 0;

  std::vector<double> features(const Note& n) const {
    std::vector<double> x(index.size(), 0.0);
    double total = 0;
    for (const auto& s : n.sentences)
      for (const auto& t : s.tokens) {
        if (auto it = index.find(t); it != index.end()) x[it->second] += 1;
        total += 1;
      }
    for (double& v : x) v /= total;
    return x;
  }

  void fit(const std::vector<Note>& notes, int Note::*label) {
    for (const Note& n : notes)
      for (const auto& s : n.sentences)
        for (const auto& t : s.tokens) index.emplace(t, index.size());
    w.assign(index.size(), 0.0);
    std::vector<std::vector<double>> xs;
    for (const Note& n : notes) xs.push_back(features(n));
    const double pos = std::count_if(notes.begin(), notes.end(), [&](const Note& n) { return n.*label == 1; });
    const double wpos = notes.size() / (2 * std::max(pos, 1.0));
    const double wneg = notes.size() / (2 * std::max(notes.size() - pos, 1.0));
    for (int it = 0; it < 400; ++it) {
      std::vector<double> g(w.size(), 0.0);
      double gb = 0;
      for (std::size_t i = 0; i < notes.size(); ++i) {
        const double z = std::inner_product(w.begin(), w.end(), xs[i].begin(), b);
        const int y = notes[i].*label;
        const double r = (1 / (1 + std::exp(-z)) - y) * (y ? wpos : wneg);
        for (std::size_t j = 0; j < w.size(); ++j) g[j] += r * xs[i][j];
        gb += r;
      }
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= 20.0 * g[j] / notes.size();
      b -= 20.0 * gb / notes.size();
    }
  }

  int predict(const Note& n) const {
    const auto x = features(n);
    return std::inner_product(w.begin(), w.end(), x.begin(), b) > 0 ? 1 : 0;
  }
};

double oracle_f1(const Corpus& c, int Note::*label) {
  const std::size_t split = c.size() * 3 / 4;
  std::vector<Note> train(c.notes.begin(), c.notes.begin() + split);
  BowOracle o;
  o.fit(train, label);
  std::vector<int> truth, pred;
  for (std::size_t i = split; i < c.size(); ++i) {
    truth.push_back(c.notes[i].*label);
    pred.push_back(o.predict(c.notes[i]));
  }
  return macro_f1(truth, pred);
}

double baseline_f1(const Corpus& c, int Note::*label) {
  std::vector<int> truth;
  for (std::size_t i = c.size() * 3 / 4; i < c.size(); ++i) truth.push_back(c.notes[i].*label);
  return majority_baseline_f1(truth);
}

// E[min(X, m)] for X geometric on {1, 2, ...}.
double clipped_mean(double p, std::size_t m) {
  double e = 0;
  for (std::size_t x = 1; x < m; ++x) e += x * p * std::pow(1 - p, x - 1.0);
  return e + m * std::pow(1 - p, m - 1.0);
}

}  // namespace

TEST_CASE("default generator reproduces the corpus label counts") {
  const Corpus c = generate_corpus({});
  const CorpusStats s = corpus_stats(c);
  CHECK(s.note_count == 364);
  CHECK(s.pb_count == 55);
  CHECK(s.tb_count == 60);
  CHECK(s.joint_count == 17);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("large-sample statistics match the configured targets") {
  for (LanguageMode mode : {LanguageMode::en, LanguageMode::code_mixed}) {
    GeneratorConfig g;
    g.note_count = 10000;
    g.language_mode = mode;
    g.seed = 1;
    const CorpusStats s = corpus_stats(generate_corpus(g));
    CHECK(std::abs(s.pb_rate - g.pb_rate) <= 0.02);
    CHECK(std::abs(s.tb_rate - g.tb_rate) <= 0.02);
    CHECK(std::abs(s.joint_rate - g.joint_rate) <= 0.02);
    for (std::size_t t = 0; t < 3; ++t) CHECK(std::abs(s.temporal_fractions[t] - g.temporal_mix[t]) <= 0.02);
    CHECK(std::abs(s.mean_sentence_length - g.mean_sentence_length()) <= 0.5);
    CHECK(std::abs(s.mean_note_length - g.mean_note_length) <= 0.5);
    CHECK(s.code_mixed_notes == (mode == LanguageMode::code_mixed ? 10000u : 0u));
  }
}

TEST_CASE("generation is a pure function of the config") {
  GeneratorConfig g;
  g.note_count = 50;
  g.seed = 4;
  CHECK(generate_corpus(g) == generate_corpus(g));
  GeneratorConfig h = g;
  h.seed = 5;
  CHECK_FALSE(generate_corpus(g) == generate_corpus(h));
  CHECK(generate_corpus(g).provenance == generate_corpus(g).provenance);
  g.note_count = 0;
  CHECK_THROWS_AS(generate_corpus(g), ContractError);
}

TEST_CASE("infeasible generator settings are rejected") {
  GeneratorConfig g;
  g.joint_rate = 0.5;
  CHECK_THROWS_AS(g.validate(), ContractError);
  g = {};
  g.signal = 1.5;
  CHECK_THROWS_AS(g.validate(), ContractError);
  g = {};
  g.pb_rate = 0.7;
  g.tb_rate = 0.7;
  g.joint_rate = 0.2;
  CHECK_THROWS_AS(g.validate(), ContractError);
}

TEST_CASE("clipped geometric calibration hits the requested mean") {
  for (double mean : {1.5, 4.0, 13.0, 14.96, 16.73}) {
    const auto cap = static_cast<std::size_t>(std::floor(2 * mean));
    const double p = clipped_geometric_p(mean, cap);
    CHECK(p > 0);
    CHECK(p <= 1);
    CHECK(clipped_mean(p, cap) == doctest::Approx(mean).epsilon(1e-6));
  }
}

TEST_CASE("planted token signal is learnable by a bag-of-words oracle") {
  GeneratorConfig g;
  g.note_count = 400;
  g.seed = 21;
  g.pb_rate = 0.3;
  g.tb_rate = 0.3;
  g.joint_rate = 0.1;
  g.signal = 1.0;
  const Corpus strong = generate_corpus(g);
  CHECK(oracle_f1(strong, &Note::pb) > 0.95);
  CHECK(oracle_f1(strong, &Note::tb) > 0.95);

  g.signal = 0.75;
  const Corpus mid = generate_corpus(g);
  CHECK(oracle_f1(mid, &Note::pb) >= baseline_f1(mid, &Note::pb) + 0.3);
  CHECK(oracle_f1(mid, &Note::tb) >= baseline_f1(mid, &Note::tb) + 0.3);
}

TEST_CASE("temporal labels lean by stratum at full signal") {
  GeneratorConfig g;
  g.note_count = 2000;
  g.seed = 2;
  g.signal = 1.0;
  std::array<std::array<double, 3>, 2> pb_mix{};
  for (const Note& n : generate_corpus(g).notes)
    if (n.pb != n.tb)
      for (const auto& s : n.sentences) pb_mix[n.pb][static_cast<int>(s.temporal)] += 1;
  // PB-only notes lean to the future, TB-only notes to the past
  CHECK(pb_mix[1][2] > pb_mix[1][0]);
  CHECK(pb_mix[0][0] > pb_mix[0][2]);
}
