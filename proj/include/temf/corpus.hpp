// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace temf {

enum class Temporal { past = 0, present = 1, future = 2 };
inline constexpr std::size_t kTemporalCount = 3;

enum class LanguageMode { en, code_mixed };

std::string_view to_string(Temporal t);
std::string_view to_string(LanguageMode m);
/// Throws VocabularyError listing the valid names.
Temporal parse_temporal(std::string_view name);
LanguageMode parse_language_mode(std::string_view name);

/// emo_01 .. emo_15.
std::vector<std::string> default_emotion_labels();

struct Sentence {
  std::vector<std::string> tokens;
  std::string emotion;
  Temporal temporal = Temporal::present;

  bool operator==(const Sentence&) const = default;
};

struct Note {
  std::string id;
  std::vector<Sentence> sentences;
  int pb = 0;
  int tb = 0;
  LanguageMode language_mode = LanguageMode::en;

  bool operator==(const Note&) const = default;
};

struct Corpus {
  std::vector<std::string> emotion_labels = default_emotion_labels();
  std::vector<Note> notes;
  /// Serialized JSON object echoing how the corpus was produced; may be empty.
  std::string provenance;

  bool operator==(const Corpus&) const = default;

  std::size_t size() const { return notes.size(); }
  bool empty() const { return notes.empty(); }
  /// Index of `label` in emotion_labels; throws VocabularyError otherwise.
  std::size_t emotion_index(const std::string& label) const;
  /// Checks note/sentence invariants, label vocabularies and id uniqueness.
  void validate() const;
  /// Sorted distinct tokens.
  std::vector<std::string> vocabulary() const;
  /// Copy whose notes keep only their first `max_sentences` sentences.
  Corpus truncated(std::size_t max_sentences) const;
  Corpus subset(const std::vector<std::size_t>& indices) const;
};

/// One JSON record per line. An optional first record
/// {"corpus_header": {"emotion_labels": [...], "provenance": {...}}}
/// declares the emotion vocabulary; without it the default is used.
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus parse_corpus(std::string_view text);
std::string serialize_corpus(const Corpus& corpus);

struct CorpusStats {
  std::size_t note_count = 0;
  std::size_t sentence_count = 0;
  std::size_t token_count = 0;
  std::size_t pb_count = 0;
  std::size_t tb_count = 0;
  std::size_t joint_count = 0;
  double pb_rate = 0.0;
  double tb_rate = 0.0;
  double joint_rate = 0.0;
  std::array<std::size_t, kTemporalCount> temporal_counts{};
  std::array<double, kTemporalCount> temporal_fractions{};
  std::map<std::string, std::size_t> emotion_counts;
  double mean_sentence_length = 0.0;
  double mean_note_length = 0.0;
  std::size_t code_mixed_notes = 0;
};

/// Throws ContractError on an empty corpus.
CorpusStats corpus_stats(const Corpus& corpus);
std::string format_stats(const CorpusStats& stats);

}  // namespace temf
