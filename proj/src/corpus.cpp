// SPDX-License-Identifier: Apache-2.0
#include "temf/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "temf/errors.hpp"

namespace temf {

using nlohmann::json;

std::string_view to_string(Temporal t) {
  switch (t) {
    case Temporal::past:
      return "past";
    case Temporal::present:
      return "present";
    case Temporal::future:
      return "future";
  }
  return "present";
}

std::string_view to_string(LanguageMode m) { return m == LanguageMode::en ? "en" : "code_mixed"; }

Temporal parse_temporal(std::string_view name) {
  if (name == "past") return Temporal::past;
  if (name == "present") return Temporal::present;
  if (name == "future") return Temporal::future;
  throw VocabularyError("unknown temporal label '" + std::string(name) + "' (valid: past, present, future)");
}

LanguageMode parse_language_mode(std::string_view name) {
  if (name == "en") return LanguageMode::en;
  if (name == "code_mixed") return LanguageMode::code_mixed;
  throw VocabularyError("unknown language mode '" + std::string(name) + "' (valid: en, code_mixed)");
}

std::vector<std::string> default_emotion_labels() {
  std::vector<std::string> labels;
  for (int i = 1; i <= 15; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "emo_%02d", i);
    labels.emplace_back(buf);
  }
  return labels;
}

std::size_t Corpus::emotion_index(const std::string& label) const {
  auto it = std::find(emotion_labels.begin(), emotion_labels.end(), label);
  if (it == emotion_labels.end()) {
    std::string valid;
    for (const auto& l : emotion_labels) valid += (valid.empty() ? "" : ", ") + l;
    throw VocabularyError("unknown emotion label '" + label + "' (valid: " + valid + ")");
  }
  return static_cast<std::size_t>(it - emotion_labels.begin());
}

void Corpus::validate() const {
  std::unordered_set<std::string> ids;
  for (const auto& note : notes) {
    if (!ids.insert(note.id).second) throw ContractError("duplicate note id '" + note.id + "'");
    if (note.sentences.empty()) throw ContractError("note '" + note.id + "' has no sentences");
    if ((note.pb != 0 && note.pb != 1) || (note.tb != 0 && note.tb != 1)) {
      throw ContractError("note '" + note.id + "' has labels outside {0,1}");
    }
    for (std::size_t i = 0; i < note.sentences.size(); ++i) {
      if (note.sentences[i].tokens.empty()) {
        throw ContractError("note '" + note.id + "' sentence " + std::to_string(i) + " has no tokens");
      }
      emotion_index(note.sentences[i].emotion);
    }
  }
}

std::vector<std::string> Corpus::vocabulary() const {
  std::set<std::string> vocab;
  for (const auto& note : notes)
    for (const auto& s : note.sentences) vocab.insert(s.tokens.begin(), s.tokens.end());
  return {vocab.begin(), vocab.end()};
}

Corpus Corpus::truncated(std::size_t max_sentences) const {
  Corpus out = *this;
  for (auto& note : out.notes) {
    if (note.sentences.size() > max_sentences) note.sentences.resize(max_sentences);
  }
  return out;
}

Corpus Corpus::subset(const std::vector<std::size_t>& indices) const {
  Corpus out;
  out.emotion_labels = emotion_labels;
  out.provenance = provenance;
  out.notes.reserve(indices.size());
  for (auto i : indices) out.notes.push_back(notes.at(i));
  return out;
}

// ---------------------------------------------------------------- serialization

namespace {

const json& require_field(const json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) throw ParseError(std::string("missing field '") + field + "'", line);
  return *it;
}

int parse_binary(const json& v, const char* field, std::size_t line) {
  if (!v.is_number_integer() || (v.get<long>() != 0 && v.get<long>() != 1)) {
    throw ParseError(std::string("field '") + field + "' must be 0 or 1", line);
  }
  return v.get<int>();
}

Note parse_note(const json& rec, const Corpus& corpus, std::size_t line) {
  if (!rec.is_object()) throw ParseError("record is not an object", line);
  Note note;
  const auto& id = require_field(rec, "id", line);
  if (!id.is_string()) throw ParseError("field 'id' must be a string", line);
  note.id = id.get<std::string>();
  const auto& mode = require_field(rec, "language_mode", line);
  if (!mode.is_string()) throw ParseError("field 'language_mode' must be a string", line);
  try {
    note.language_mode = parse_language_mode(mode.get<std::string>());
  } catch (const VocabularyError& e) {
    throw VocabularyError("line " + std::to_string(line) + ": " + e.what());
  }
  note.pb = parse_binary(require_field(rec, "pb", line), "pb", line);
  note.tb = parse_binary(require_field(rec, "tb", line), "tb", line);
  const auto& sentences = require_field(rec, "sentences", line);
  if (!sentences.is_array() || sentences.empty()) throw ParseError("field 'sentences' must be a non-empty list", line);
  for (const auto& s : sentences) {
    if (!s.is_object()) throw ParseError("sentence is not an object", line);
    Sentence sent;
    const auto& tokens = require_field(s, "tokens", line);
    if (!tokens.is_array() || tokens.empty()) throw ParseError("field 'tokens' must be a non-empty list", line);
    for (const auto& t : tokens) {
      if (!t.is_string()) throw ParseError("tokens must be strings", line);
      sent.tokens.push_back(t.get<std::string>());
    }
    const auto& emotion = require_field(s, "emotion", line);
    const auto& temporal = require_field(s, "temporal", line);
    if (!emotion.is_string()) throw ParseError("field 'emotion' must be a string", line);
    if (!temporal.is_string()) throw ParseError("field 'temporal' must be a string", line);
    sent.emotion = emotion.get<std::string>();
    try {
      corpus.emotion_index(sent.emotion);
      sent.temporal = parse_temporal(temporal.get<std::string>());
    } catch (const VocabularyError& e) {
      throw VocabularyError("line " + std::to_string(line) + ": " + e.what());
    }
    note.sentences.push_back(std::move(sent));
  }
  return note;
}

}  // namespace

Corpus parse_corpus(std::string_view text) {
  Corpus corpus;
  std::unordered_set<std::string> ids;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool seen_record = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), line_no);
    }
    if (rec.is_object() && rec.contains("corpus_header")) {
      if (seen_record) throw ParseError("corpus header must be the first record", line_no);
      const auto& header = rec["corpus_header"];
      if (header.contains("emotion_labels")) {
        corpus.emotion_labels.clear();
        for (const auto& l : header["emotion_labels"]) {
          if (!l.is_string()) throw ParseError("emotion labels must be strings", line_no);
          corpus.emotion_labels.push_back(l.get<std::string>());
        }
        if (corpus.emotion_labels.empty()) throw ParseError("empty emotion vocabulary", line_no);
      }
      if (header.contains("provenance")) corpus.provenance = header["provenance"].dump();
      seen_record = true;
      continue;
    }
    seen_record = true;
    Note note = parse_note(rec, corpus, line_no);
    if (!ids.insert(note.id).second) throw ParseError("duplicate note id '" + note.id + "'", line_no);
    corpus.notes.push_back(std::move(note));
  }
  return corpus;
}

std::string serialize_corpus(const Corpus& corpus) {
  std::ostringstream out;
  json header;
  header["corpus_header"]["emotion_labels"] = corpus.emotion_labels;
  if (!corpus.provenance.empty()) header["corpus_header"]["provenance"] = json::parse(corpus.provenance);
  out << header.dump() << '\n';
  for (const auto& note : corpus.notes) {
    json rec;
    rec["id"] = note.id;
    rec["language_mode"] = std::string(to_string(note.language_mode));
    rec["pb"] = note.pb;
    rec["tb"] = note.tb;
    json sentences = json::array();
    for (const auto& s : note.sentences) {
      sentences.push_back({{"tokens", s.tokens}, {"emotion", s.emotion}, {"temporal", std::string(to_string(s.temporal))}});
    }
    rec["sentences"] = std::move(sentences);
    out << rec.dump() << '\n';
  }
  return out.str();
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str());
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write corpus file " + path.string());
  out << serialize_corpus(corpus);
  if (!out) throw ConfigError("failed writing corpus file " + path.string());
}

// ---------------------------------------------------------------- statistics

CorpusStats corpus_stats(const Corpus& corpus) {
  if (corpus.empty()) throw ContractError("corpus_stats: empty corpus");
  CorpusStats s;
  s.note_count = corpus.size();
  for (const auto& label : corpus.emotion_labels) s.emotion_counts[label] = 0;
  for (const auto& note : corpus.notes) {
    s.pb_count += static_cast<std::size_t>(note.pb);
    s.tb_count += static_cast<std::size_t>(note.tb);
    s.joint_count += static_cast<std::size_t>(note.pb && note.tb);
    if (note.language_mode == LanguageMode::code_mixed) ++s.code_mixed_notes;
    s.sentence_count += note.sentences.size();
    for (const auto& sent : note.sentences) {
      s.token_count += sent.tokens.size();
      ++s.temporal_counts[static_cast<std::size_t>(sent.temporal)];
      ++s.emotion_counts[sent.emotion];
    }
  }
  const double n = static_cast<double>(s.note_count);
  s.pb_rate = static_cast<double>(s.pb_count) / n;
  s.tb_rate = static_cast<double>(s.tb_count) / n;
  s.joint_rate = static_cast<double>(s.joint_count) / n;
  for (std::size_t t = 0; t < kTemporalCount; ++t) {
    s.temporal_fractions[t] = static_cast<double>(s.temporal_counts[t]) / static_cast<double>(s.sentence_count);
  }
  s.mean_sentence_length = static_cast<double>(s.token_count) / static_cast<double>(s.sentence_count);
  s.mean_note_length = static_cast<double>(s.sentence_count) / n;
  return s;
}

std::string format_stats(const CorpusStats& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "notes               " << s.note_count << '\n';
  os << "sentences           " << s.sentence_count << '\n';
  os << "pb                  " << s.pb_count << " (" << s.pb_rate << ")\n";
  os << "tb                  " << s.tb_count << " (" << s.tb_rate << ")\n";
  os << "pb+tb               " << s.joint_count << " (" << s.joint_rate << ")\n";
  for (std::size_t t = 0; t < kTemporalCount; ++t) {
    os << "temporal " << std::left << std::setw(11) << to_string(static_cast<Temporal>(t)) << s.temporal_counts[t]
       << " (" << s.temporal_fractions[t] << ")\n";
  }
  os << "mean sentence len   " << s.mean_sentence_length << '\n';
  os << "mean note len       " << s.mean_note_length << '\n';
  os << "code-mixed notes    " << s.code_mixed_notes << '\n';
  return os.str();
}

}  // namespace temf
