// SPDX-License-Identifier: Apache-2.0
#include "temf/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "temf/errors.hpp"
#include "temf/rng.hpp"

namespace temf {

namespace {

enum Stratum : std::size_t { kPbOnly = 0, kTbOnly = 1, kBoth = 2, kNeither = 3 };
constexpr std::size_t kStrata = 4;

using Dist = std::array<double, kTemporalCount>;

// Temporal leaning of each positive stratum at full strength (past, present, future).
constexpr std::array<Dist, 3> kTemporalExtremes{{
    {0.0, 0.1, 0.9},
    {0.9, 0.1, 0.0},
    {0.45, 0.1, 0.45},
}};

std::string pool_token(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
  return buf;
}

std::vector<std::string> make_pool(const char* prefix, std::size_t n) {
  std::vector<std::string> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.push_back(pool_token(prefix, i));
  return pool;
}

double clipped_mean(double p, std::size_t max_value) {
  const double q = 1.0 - p;
  return (1.0 - std::pow(q, static_cast<double>(max_value))) / p;
}

// Per-stratum temporal distributions whose weighted mix equals `target`.
std::array<Dist, kStrata> temporal_tables(const Dist& target, const std::array<double, kStrata>& weights) {
  // Largest lambda in [0,1] keeping the neither-stratum distribution valid.
  double lambda = 1.0;
  const double w_neither = weights[kNeither];
  for (std::size_t t = 0; t < kTemporalCount; ++t) {
    double shift = 0.0;  // d(neither_t)/d(lambda) * w_neither
    for (std::size_t s = 0; s < 3; ++s) shift += weights[s] * (target[t] - kTemporalExtremes[s][t]);
    if (w_neither <= 0.0) {
      if (shift != 0.0) lambda = 0.0;
      continue;
    }
    if (shift < 0.0) lambda = std::min(lambda, target[t] * w_neither / -shift);
  }
  std::array<Dist, kStrata> tables{};
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t t = 0; t < kTemporalCount; ++t)
      tables[s][t] = (1.0 - lambda) * target[t] + lambda * kTemporalExtremes[s][t];
  for (std::size_t t = 0; t < kTemporalCount; ++t) {
    if (w_neither <= 0.0) {
      tables[kNeither][t] = target[t];
      continue;
    }
    double rest = target[t];
    for (std::size_t s = 0; s < 3; ++s) rest -= weights[s] * tables[s][t];
    tables[kNeither][t] = std::max(0.0, rest / w_neither);
  }
  return tables;
}

}  // namespace

double clipped_geometric_p(double mean, std::size_t max_value) {
  if (mean < 1.0 || static_cast<double>(max_value) < mean) {
    throw ContractError("clipped geometric: mean " + std::to_string(mean) + " unreachable with cap " +
                        std::to_string(max_value));
  }
  if (mean == 1.0) return 1.0;
  // clipped_mean is decreasing in p.
  double lo = 1e-9, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (clipped_mean(mid, max_value) > mean) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

void GeneratorConfig::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (note_count == 0) throw ContractError("generator: note_count must be positive");
  if (!in_unit(pb_rate) || !in_unit(tb_rate) || !in_unit(joint_rate)) {
    throw ContractError("generator: label rates must lie in [0, 1]");
  }
  if (joint_rate > std::min(pb_rate, tb_rate)) {
    throw ContractError("generator: joint_rate exceeds min(pb_rate, tb_rate)");
  }
  if (pb_rate + tb_rate - joint_rate > 1.0 + 1e-12) {
    throw ContractError("generator: pb_rate + tb_rate - joint_rate exceeds 1");
  }
  const double mix = std::accumulate(temporal_mix.begin(), temporal_mix.end(), 0.0);
  if (std::abs(mix - 1.0) > 1e-6 || std::any_of(temporal_mix.begin(), temporal_mix.end(), [](double v) { return v < 0; })) {
    throw ContractError("generator: temporal mix must be a probability vector");
  }
  for (double s : {signal, token_signal.value_or(signal), temporal_signal.value_or(signal), emotion_signal.value_or(signal)}) {
    if (!in_unit(s)) throw ContractError("generator: signal strengths must lie in [0, 1]");
  }
  if (mean_sentence_length() < 1.0 || mean_note_length < 1.0) {
    throw ContractError("generator: mean lengths must be at least 1");
  }
  if (lexicon_size == 0) throw ContractError("generator: lexicon_size must be positive");
  if (emotion_labels.size() < 3) throw ContractError("generator: need at least 3 emotion labels");
}

std::string GeneratorConfig::to_json() const {
  nlohmann::json j;
  j["note_count"] = note_count;
  j["pb_rate"] = pb_rate;
  j["tb_rate"] = tb_rate;
  j["joint_rate"] = joint_rate;
  j["temporal_mix"] = temporal_mix;
  j["language_mode"] = std::string(to_string(language_mode));
  j["mean_sentence_length"] = mean_sentence_length();
  j["mean_note_length"] = mean_note_length;
  j["signal"] = signal;
  j["token_signal"] = token_signal.value_or(signal);
  j["temporal_signal"] = temporal_signal.value_or(signal);
  j["emotion_signal"] = emotion_signal.value_or(signal);
  j["lexicon_size"] = lexicon_size;
  j["seed"] = seed;
  return j.dump();
}

Corpus generate_corpus(const GeneratorConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t n = config.note_count;
  const double s_token = config.token_signal.value_or(config.signal);
  const double s_temporal = config.temporal_signal.value_or(config.signal);
  const double s_emotion = config.emotion_signal.value_or(config.signal);

  // Exact stratum counts, then a seeded shuffle of the assignment.
  const auto round_count = [n](double rate) { return static_cast<std::size_t>(std::llround(rate * static_cast<double>(n))); };
  const std::size_t n_both = round_count(config.joint_rate);
  const std::size_t n_pb = std::max(round_count(config.pb_rate), n_both);
  const std::size_t n_tb = std::max(round_count(config.tb_rate), n_both);
  if (n_pb + n_tb - n_both > n) throw ContractError("generator: label counts exceed note_count");
  std::vector<Stratum> strata;
  strata.reserve(n);
  strata.insert(strata.end(), n_pb - n_both, kPbOnly);
  strata.insert(strata.end(), n_tb - n_both, kTbOnly);
  strata.insert(strata.end(), n_both, kBoth);
  strata.insert(strata.end(), n - strata.size(), kNeither);
  std::shuffle(strata.begin(), strata.end(), rng);

  std::array<double, kStrata> weights{};
  for (auto s : strata) weights[s] += 1.0 / static_cast<double>(n);
  const auto temporal = temporal_tables(config.temporal_mix, weights);

  const std::size_t lex = config.lexicon_size;
  const auto pb_lexicon = make_pool("lexp", lex);
  const auto tb_lexicon = make_pool("lext", lex);
  const auto neutral_lexicon = make_pool("lexn", lex);
  const auto filler = make_pool("fill", lex);
  const auto filler_cm = make_pool("cmix", lex);

  const auto& emotions = config.emotion_labels;
  const std::size_t group = std::max<std::size_t>(1, emotions.size() / 5);
  // Label index ranges per stratum: PB group, TB group, both groups, the rest.
  const std::array<std::pair<std::size_t, std::size_t>, kStrata> emotion_ranges{{
      {0, group}, {group, 2 * group}, {0, 2 * group}, {2 * group, emotions.size()}}};

  const std::size_t sent_cap = static_cast<std::size_t>(std::floor(2.0 * config.mean_sentence_length()));
  const std::size_t note_cap = static_cast<std::size_t>(std::floor(2.0 * config.mean_note_length));
  std::geometric_distribution<std::size_t> sent_len(clipped_geometric_p(config.mean_sentence_length(), sent_cap));
  std::geometric_distribution<std::size_t> note_len(clipped_geometric_p(config.mean_note_length, note_cap));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_lex(0, lex - 1);
  std::uniform_int_distribution<std::size_t> pick_emotion(0, emotions.size() - 1);

  Corpus corpus;
  corpus.emotion_labels = emotions;
  corpus.provenance = config.to_json();
  corpus.notes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Stratum stratum = strata[i];
    Note note;
    char id[32];
    std::snprintf(id, sizeof id, "note_%05zu", i + 1);
    note.id = id;
    note.pb = (stratum == kPbOnly || stratum == kBoth) ? 1 : 0;
    note.tb = (stratum == kTbOnly || stratum == kBoth) ? 1 : 0;
    note.language_mode = config.language_mode;

    const std::size_t sentences = std::min(note_len(rng) + 1, note_cap);
    for (std::size_t si = 0; si < sentences; ++si) {
      Sentence sent;
      const std::size_t length = std::min(sent_len(rng) + 1, sent_cap);
      for (std::size_t ti = 0; ti < length; ++ti) {
        const std::vector<std::string>* pool = nullptr;
        if (unit(rng) < s_token) {
          switch (stratum) {
            case kPbOnly:
              pool = &pb_lexicon;
              break;
            case kTbOnly:
              pool = &tb_lexicon;
              break;
            case kBoth:
              pool = unit(rng) < 0.5 ? &pb_lexicon : &tb_lexicon;
              break;
            case kNeither:
              pool = &neutral_lexicon;
              break;
          }
        } else if (config.language_mode == LanguageMode::code_mixed && unit(rng) < 0.5) {
          pool = &filler_cm;
        } else {
          pool = &filler;
        }
        sent.tokens.push_back((*pool)[pick_lex(rng)]);
      }

      const Dist& dist = unit(rng) < s_temporal ? temporal[stratum] : config.temporal_mix;
      const double u = unit(rng);
      sent.temporal = u < dist[0] ? Temporal::past : (u < dist[0] + dist[1] ? Temporal::present : Temporal::future);

      if (unit(rng) < s_emotion) {
        const auto [lo, hi] = emotion_ranges[stratum];
        std::uniform_int_distribution<std::size_t> in_group(lo, hi - 1);
        sent.emotion = emotions[in_group(rng)];
      } else {
        sent.emotion = emotions[pick_emotion(rng)];
      }
      note.sentences.push_back(std::move(sent));
    }
    corpus.notes.push_back(std::move(note));
  }
  corpus.validate();
  return corpus;
}

}  // namespace temf
