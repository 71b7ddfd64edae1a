// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "temf/corpus.hpp"

namespace temf {

/// Synthetic corpus parameters. Defaults reproduce the aggregate statistics
/// of the annotated suicide-note corpus (364 notes, 55 PB, 60 TB, 17 both,
/// temporal mix 30.87/41.66/27.47 %, sentence length 14.96 / 16.73).
struct GeneratorConfig {
  std::size_t note_count = 364;
  double pb_rate = 0.1511;
  double tb_rate = 0.1648;
  double joint_rate = 0.0467;
  std::array<double, kTemporalCount> temporal_mix{0.3087, 0.4166, 0.2747};
  LanguageMode language_mode = LanguageMode::en;
  double mean_sentence_length_en = 14.96;
  double mean_sentence_length_code_mixed = 16.73;
  double mean_note_length = 13.0;
  /// Overall planted-signal strength s in [0, 1].
  double signal = 0.5;
  /// Per-channel overrides of `signal`.
  std::optional<double> token_signal;
  std::optional<double> temporal_signal;
  std::optional<double> emotion_signal;
  std::size_t lexicon_size = 200;
  std::vector<std::string> emotion_labels = default_emotion_labels();
  std::uint64_t seed = 0;

  double mean_sentence_length() const {
    return language_mode == LanguageMode::en ? mean_sentence_length_en : mean_sentence_length_code_mixed;
  }
  /// Throws ContractError for infeasible settings.
  void validate() const;
  std::string to_json() const;
};

/// Pure function of the config (including its seed).
///
/// Label strata (PB only, TB only, both, neither) get exact counts
/// round(rate * N). Each token comes from the stratum's lexicon with
/// probability s_token, otherwise from the filler pool. Temporal labels are
/// drawn from a stratum-specific mixture whose corpus-wide marginal equals
/// `temporal_mix`: PB leans to future, TB to past, both to past and future.
/// Emotion labels come from a stratum-specific label group with probability
/// s_emotion, otherwise uniformly. Sentence and note lengths follow
/// geometric laws clipped to [1, 2 * mean] and calibrated to the mean.
Corpus generate_corpus(const GeneratorConfig& config);

/// Success probability p of a geometric law on {1, 2, ...} whose values,
/// clamped at `max_value`, have expectation `mean`.
double clipped_geometric_p(double mean, std::size_t max_value);

}  // namespace temf
