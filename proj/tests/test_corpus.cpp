// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "temf/corpus.hpp"
#include "temf/errors.hpp"
#include "temf/generator.hpp"

using namespace temf;

namespace {

Corpus hand_corpus() {
  Corpus c;
  c.emotion_labels = {"anger", "hope"};
  c.notes.push_back({"a", {{{"x", "y"}, "hope", Temporal::past}, {{"z"}, "anger", Temporal::future}}, 1, 0});
  c.notes.push_back({"b", {{{"x", "x", "x"}, "anger", Temporal::present}}, 1, 1});
  c.notes.push_back({"c", {{{"y"}, "hope", Temporal::past}, {{"y", "z"}, "hope", Temporal::past},
                           {{"w", "v", "u", "t"}, "anger", Temporal::present}}, 0, 0});
  return c;
}

std::string record(const std::string& body) { return "{" + body + "}\n"; }

const std::string kGood =
    R"("id":"n","language_mode":"en","pb":0,"tb":1,"sentences":[{"tokens":["a"],"emotion":"emo_01","temporal":"past"}])";

}  // namespace

TEST_CASE("corpus serialization round trips") {
  const Corpus c = hand_corpus();
  CHECK(parse_corpus(serialize_corpus(c)) == c);

  GeneratorConfig g;
  g.note_count = 40;
  g.seed = 9;
  g.language_mode = LanguageMode::code_mixed;
  const Corpus gen = generate_corpus(g);
  const auto path = std::filesystem::temp_directory_path() / "temf_corpus_rt.jsonl";
  save_corpus(gen, path);
  CHECK(load_corpus(path) == gen);
  std::filesystem::remove(path);
}

TEST_CASE("records without a header use the default emotion labels") {
  const Corpus c = parse_corpus(record(kGood));
  CHECK(c.emotion_labels == default_emotion_labels());
  REQUIRE(c.size() == 1);
  CHECK(c.notes[0].tb == 1);
  CHECK(c.notes[0].sentences[0].temporal == Temporal::past);
}

TEST_CASE("an empty file is an empty corpus") {
  CHECK(parse_corpus("").empty());
  CHECK(parse_corpus("\n\n").empty());
  const auto path = std::filesystem::temp_directory_path() / "temf_empty.jsonl";
  std::ofstream(path).close();
  CHECK(load_corpus(path).empty());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(corpus_stats(Corpus{}), ContractError);
}

TEST_CASE("parse errors name the field and line") {
  for (const std::string field : {"pb", "tb", "id", "sentences"}) {
    CAPTURE(field);
    std::string broken = kGood;
    const auto at = broken.find("\"" + field + "\"");
    REQUIRE(at != std::string::npos);
    broken.replace(at, field.size() + 2, "\"renamed\"");
    try {
      parse_corpus(record(kGood) + record(broken));
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("'" + field + "'") != std::string::npos);
    }
  }
  CHECK_THROWS_AS(parse_corpus("{not json\n"), ParseError);
  CHECK_THROWS_AS(parse_corpus(record(kGood) + record(kGood)), ParseError);  // duplicate id
  const std::string header = R"({"corpus_header":{"emotion_labels":["a"]}})";
  CHECK_THROWS_AS(parse_corpus(record(kGood) + header + "\n"), ParseError);
}

TEST_CASE("unknown labels are vocabulary errors") {
  std::string bad = kGood;
  bad.replace(bad.find("past"), 4, "later");
  CHECK_THROWS_WITH_AS(parse_corpus(record(bad)), doctest::Contains("past, present, future"), VocabularyError);
  bad = kGood;
  bad.replace(bad.find("emo_01"), 6, "glee");
  CHECK_THROWS_AS(parse_corpus(record(bad)), VocabularyError);
}

TEST_CASE("corpus statistics on a hand corpus") {
  const CorpusStats s = corpus_stats(hand_corpus());
  CHECK(s.note_count == 3);
  CHECK(s.sentence_count == 6);
  CHECK(s.token_count == 13);
  CHECK(s.pb_count == 2);
  CHECK(s.tb_count == 1);
  CHECK(s.joint_count == 1);
  CHECK(s.pb_rate == doctest::Approx(2.0 / 3));
  CHECK(s.temporal_counts == std::array<std::size_t, 3>{3, 2, 1});
  CHECK(s.temporal_fractions[0] == doctest::Approx(0.5));
  CHECK(s.emotion_counts.at("anger") == 3);
  CHECK(s.emotion_counts.at("hope") == 3);
  CHECK(s.mean_sentence_length == doctest::Approx(13.0 / 6));
  CHECK(s.mean_note_length == doctest::Approx(2.0));
  CHECK_FALSE(format_stats(s).empty());
}

TEST_CASE("truncation, subsets and vocabulary") {
  const Corpus c = hand_corpus();
  const Corpus t = c.truncated(1);
  for (const Note& n : t.notes) CHECK(n.sentences.size() == 1);
  CHECK(t.notes[2].sentences[0] == c.notes[2].sentences[0]);
  const Corpus sub = c.subset({2, 0});
  REQUIRE(sub.size() == 2);
  CHECK(sub.notes[0].id == "c");
  CHECK(c.vocabulary() == std::vector<std::string>{"t", "u", "v", "w", "x", "y", "z"});
  CHECK(c.emotion_index("hope") == 1);
  CHECK_THROWS_AS(c.emotion_index("fear"), VocabularyError);
  Corpus dup = c;
  dup.notes[1].id = "a";
  CHECK_THROWS_AS(dup.validate(), ContractError);
}
