#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "planwrite/compute/rng.hpp"
#include "planwrite/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unistd.h>

using namespace planwrite;
using namespace planwrite::corpus;

namespace {

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& content) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("planwrite_corpus_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++) + ".jsonl");
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST_CASE("load_corpus parses a well-formed line into a record with two items") {
  TempFile f(R"({"pairs":[["color","red"],["collar","round"]],"text":"a red dress with a round collar."})"
             "\n");
  LoadResult result = load_corpus(f.path.string());
  REQUIRE(result.records.size() == 1);
  CHECK(result.rejections.empty());
  const Record& r = result.records[0];
  REQUIRE(r.items.size() == 2);
  CHECK(r.items[0].attribute == "color");
  CHECK(r.items[0].value == "red");
  CHECK(r.items[1].attribute == "collar");
  REQUIRE(r.sentence_tokens.size() == 1);
  CHECK(r.sentence_tokens[0].back() == ".");
}

TEST_CASE("load_corpus reports a line missing the text key") {
  TempFile f(R"({"pairs":[["color","red"]]})"
             "\n");
  LoadResult result = load_corpus(f.path.string());
  CHECK(result.records.empty());
  REQUIRE(result.rejections.size() == 1);
  CHECK(result.rejections[0].line == 1);
  CHECK(result.rejections[0].message.find("text") != std::string::npos);
}

TEST_CASE("load_corpus keeps good lines and counts rejections") {
  TempFile f(R"({"pairs":[["a","x"]],"text":"x here."})"
             "\n"
             "this is not json\n"
             R"({"pairs":[["b","y"]],"text":"y here."})"
             "\n");
  LoadResult result = load_corpus(f.path.string());
  CHECK(result.records.size() == 2);
  REQUIRE(result.rejections.size() == 1);
  CHECK(result.rejections[0].line == 2);
}

TEST_CASE("load_corpus rejects an empty item list") {
  TempFile f(R"({"pairs":[],"text":"something."})"
             "\n");
  LoadResult result = load_corpus(f.path.string());
  CHECK(result.records.empty());
  REQUIRE(result.rejections.size() == 1);
  CHECK(result.rejections[0].message.find("empty item list") != std::string::npos);
}

TEST_CASE("load_corpus throws for a missing file") {
  CHECK_THROWS_AS(load_corpus("/nonexistent/path/corpus.jsonl"), std::runtime_error);
}

TEST_CASE("segment_sentences splits on terminator tokens") {
  auto segs = segment_sentences("A red dress. Soft fabric!");
  REQUIRE(segs.size() == 2);
  CHECK(segs[0] == std::vector<std::string>{"a", "red", "dress", "."});
  CHECK(segs[1] == std::vector<std::string>{"soft", "fabric", "!"});
}

TEST_CASE("segment_sentences yields one segment without punctuation") {
  auto segs = segment_sentences("no punctuation here");
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].size() == 3);
}

TEST_CASE("segment_sentences splits x. y. z. into three segments") {
  auto segs = segment_sentences("x. y. z.");
  CHECK(segs.size() == 3);
}

TEST_CASE("segment_sentences concatenation reproduces the token stream") {
  compute::Rng rng(5);
  std::vector<std::string> words = {"alpha", "beta.", "g!",    "d",
                                    "e;",    "f",     "word?", "x。y"};
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    int n = 1 + static_cast<int>(rng.below(12));
    for (int i = 0; i < n; ++i) {
      if (i) text.push_back(' ');
      text += words[rng.below(words.size())];
    }
    auto tokens = tokenize(text);
    auto segs = segment_sentences(text);
    std::vector<std::string> rejoined;
    for (const auto& s : segs) {
      CHECK(!s.empty());
      rejoined.insert(rejoined.end(), s.begin(), s.end());
    }
    CHECK(rejoined == tokens);
  }
}

TEST_CASE("canonical_order sorts by descending attribute frequency") {
  AttributeStats stats{{"type", 40000}, {"color", 30000}};
  std::vector<InputItem> items;
  items.push_back({"color", "red", {}});
  items.push_back({"type", "dress", {}});
  auto ordered = canonical_order(items, stats);
  CHECK(ordered[0].attribute == "type");
  CHECK(ordered[1].attribute == "color");
}

TEST_CASE("canonical_order breaks same-attribute ties alphabetically by value") {
  AttributeStats stats{{"color", 10}};
  std::vector<InputItem> items;
  items.push_back({"color", "red", {}});
  items.push_back({"color", "blue", {}});
  auto ordered = canonical_order(items, stats);
  CHECK(ordered[0].value == "blue");
  CHECK(ordered[1].value == "red");
}

TEST_CASE("canonical_order leaves a single item unchanged and handles unseen attrs") {
  AttributeStats stats;
  std::vector<InputItem> items;
  items.push_back({"whatever", "thing", {}});
  auto ordered = canonical_order(items, stats);
  REQUIRE(ordered.size() == 1);
  CHECK(ordered[0].value == "thing");
}

TEST_CASE("canonical_order is a permutation of its input") {
  compute::Rng rng(17);
  std::vector<std::string> attrs = {"a", "b", "c", "d"};
  for (int trial = 0; trial < 50; ++trial) {
    AttributeStats stats;
    for (const auto& a : attrs) stats[a] = static_cast<long>(rng.below(5));
    std::vector<InputItem> items;
    int n = 1 + static_cast<int>(rng.below(8));
    for (int i = 0; i < n; ++i) {
      items.push_back({attrs[rng.below(attrs.size())],
                       "v" + std::to_string(rng.below(6)), {}});
    }
    auto ordered = canonical_order(items, stats);
    REQUIRE(ordered.size() == items.size());
    auto key = [](const InputItem& it) { return it.attribute + "\x1f" + it.value; };
    std::multiset<std::string> before, after;
    for (const auto& it : items) before.insert(key(it));
    for (const auto& it : ordered) after.insert(key(it));
    CHECK(before == after);
    // verify the ordering rule pairwise
    for (std::size_t i = 0; i + 1 < ordered.size(); ++i) {
      long fa = stats[ordered[i].attribute];
      long fb = stats[ordered[i + 1].attribute];
      CHECK(fa >= fb);
    }
  }
}

TEST_CASE("extract_reference_plan assigns items to their sentences") {
  Record r;
  r.items.push_back({"color", "red", {}});
  r.items.push_back({"collar", "round", {}});
  r.sentence_tokens = {{"this", "red", "dress", "shines", "."},
                       {"the", "round", "collar", "fits", "."}};
  ReferencePlan plan = extract_reference_plan(r);
  REQUIRE(plan.groups.size() == 2);
  CHECK(plan.groups[0] == std::vector<int>{0});
  CHECK(plan.groups[1] == std::vector<int>{1});
}

TEST_CASE("extract_reference_plan tags item-free sentences with NONE") {
  Record r;
  r.items.push_back({"color", "red", {}});
  r.sentence_tokens = {{"wear", "it", "anywhere", "."}};
  ReferencePlan plan = extract_reference_plan(r);
  REQUIRE(plan.groups.size() == 1);
  CHECK(plan.groups[0] == std::vector<int>{r.none_index()});
}

TEST_CASE("extract_reference_plan puts co-mentioned items into one group") {
  Record r;
  r.items.push_back({"color", "red", {}});
  r.items.push_back({"collar", "round", {}});
  r.sentence_tokens = {{"red", "and", "round", "."}};
  ReferencePlan plan = extract_reference_plan(r);
  REQUIRE(plan.groups.size() == 1);
  CHECK(plan.groups[0] == std::vector<int>{0, 1});
}

TEST_CASE("extract_reference_plan honors synonyms") {
  Record r;
  r.items.push_back({"color", "crimson", {}});
  r.sentence_tokens = {{"a", "deep", "red", "tone", "."}};
  SynonymMap synonyms{{"crimson", {"red"}}};
  ReferencePlan plan = extract_reference_plan(r, synonyms);
  CHECK(plan.groups[0] == std::vector<int>{0});
}

TEST_CASE("extract_reference_plan matches a naive quadratic scan on random corpora") {
  compute::Rng rng(23);
  std::vector<std::string> values = {"red",  "blue",  "round", "slim",
                                     "soft", "linen", "long",  "warm"};
  for (int trial = 0; trial < 100; ++trial) {
    Record r;
    int n_items = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n_items; ++i) {
      r.items.push_back({"attr" + std::to_string(i), values[rng.below(values.size())], {}});
    }
    int n_sents = 1 + static_cast<int>(rng.below(4));
    for (int s = 0; s < n_sents; ++s) {
      std::vector<std::string> sent = {"it", "is"};
      int extra = static_cast<int>(rng.below(3));
      for (int k = 0; k < extra; ++k) sent.push_back(values[rng.below(values.size())]);
      sent.push_back(".");
      r.sentence_tokens.push_back(sent);
    }
    ReferencePlan plan = extract_reference_plan(r);

    // quadratic oracle over (sentence, item) pairs
    REQUIRE(plan.groups.size() == r.sentence_tokens.size());
    for (std::size_t s = 0; s < r.sentence_tokens.size(); ++s) {
      std::vector<int> expected;
      std::string detok = normalize_for_match(detokenize(r.sentence_tokens[s]));
      for (int i = 0; i < n_items; ++i) {
        std::string needle = normalize_for_match(r.items[i].value);
        if (detok.find(needle) != std::string::npos) expected.push_back(i);
      }
      if (expected.empty()) expected.push_back(r.none_index());
      CHECK(plan.groups[s] == expected);
      CHECK(!plan.groups[s].empty());
    }
  }
}

TEST_CASE("build_vocab applies the min-count threshold") {
  std::vector<Record> records(1);
  Record& r = records[0];
  r.items.push_back({"a", "x", {}});
  r.sentence_tokens = {{"the", "the", "rare", "."}};
  Vocabulary vocab = build_vocab(records, 2);
  CHECK(vocab.text.id_of("the") != Vocabulary::kUnk);
  CHECK(vocab.text.id_of("rare") == Vocabulary::kUnk);
}

TEST_CASE("build_vocab always includes the reserved entries") {
  std::vector<Record> records(1);
  records[0].items.push_back({"a", "x", {}});
  records[0].sentence_tokens = {{"word", "."}};
  Vocabulary vocab = build_vocab(records, 1);
  for (const Vocabulary::Table* t : {&vocab.text, &vocab.attr, &vocab.value}) {
    CHECK(t->token_of(Vocabulary::kPad) == "<pad>");
    CHECK(t->token_of(Vocabulary::kBos) == "<bos>");
    CHECK(t->token_of(Vocabulary::kEos) == "<eos>");
    CHECK(t->token_of(Vocabulary::kUnk) == "<unk>");
    CHECK(t->token_of(Vocabulary::kNone) == "<none>");
  }
}

TEST_CASE("build_vocab rejects an empty corpus and bad min_count") {
  std::vector<Record> empty;
  CHECK_THROWS_AS(build_vocab(empty, 1), std::invalid_argument);
  std::vector<Record> records(1);
  records[0].items.push_back({"a", "x", {}});
  records[0].sentence_tokens = {{"word", "."}};
  CHECK_THROWS_AS(build_vocab(records, 0), std::invalid_argument);
}

TEST_CASE("encode/decode round trip holds for in-vocabulary sequences") {
  std::vector<Record> records(1);
  Record& r = records[0];
  r.items.push_back({"color", "red", {}});
  r.sentence_tokens = {{"a", "red", "dress", "."}, {"soft", "and", "warm", "."}};
  Vocabulary vocab = build_vocab(records, 1);

  compute::Rng rng(29);
  std::vector<std::string> pool;
  for (int i = 0; i < vocab.text.size(); ++i) pool.push_back(vocab.text.token_of(i));
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> seq;
    int n = 1 + static_cast<int>(rng.below(10));
    for (int i = 0; i < n; ++i) seq.push_back(pool[rng.below(pool.size())]);
    auto ids = vocab.encode_text(seq);
    auto back = vocab.decode_text(ids);
    CHECK(back == seq);
    CHECK(vocab.encode_text(back) == ids);
  }
}

TEST_CASE("vocabulary save/load round trip preserves ids and counts") {
  std::vector<Record> records(1);
  Record& r = records[0];
  r.items.push_back({"color", "red", {}});
  r.items.push_back({"size", "big", {}});
  r.sentence_tokens = {{"a", "red", "dress", "."}};
  Vocabulary vocab = build_vocab(records, 1);

  TempFile f("");
  vocab.save(f.path.string());
  Vocabulary loaded = Vocabulary::load(f.path.string());
  CHECK(loaded.text.size() == vocab.text.size());
  CHECK(loaded.attr.size() == vocab.attr.size());
  CHECK(loaded.value.size() == vocab.value.size());
  for (int i = 0; i < vocab.text.size(); ++i) {
    CHECK(loaded.text.token_of(i) == vocab.text.token_of(i));
  }
  CHECK(loaded.value.id_of("red") == vocab.value.id_of("red"));
}

TEST_CASE("encoded corpus round trips through save and load") {
  TempFile source(R"({"pairs":[["color","red"],["size","big"]],"text":"a red dress. big fit."})"
                  "\n");
  LoadResult loaded = load_corpus(source.path.string());
  REQUIRE(loaded.records.size() == 1);
  Vocabulary vocab = build_vocab(loaded.records, 1);
  encode_records(loaded.records, vocab);

  TempFile enc("");
  save_encoded(loaded.records, enc.path.string());
  auto back = load_encoded(enc.path.string());
  REQUIRE(back.size() == 1);
  CHECK(back[0].items.size() == 2);
  CHECK(back[0].items[0].attr_id == loaded.records[0].items[0].attr_id);
  CHECK(back[0].sentences == loaded.records[0].sentences);
  CHECK(back[0].reference_plan.groups == loaded.records[0].reference_plan.groups);
}

TEST_CASE("plan extraction is total across loaded corpora") {
  TempFile f(R"({"pairs":[["a","zzz"]],"text":"nothing matches here. truly nothing."})"
             "\n"
             R"({"pairs":[["b","red"]],"text":"a red thing."})"
             "\n");
  LoadResult result = load_corpus(f.path.string());
  for (const auto& r : result.records) {
    CHECK(r.reference_plan.groups.size() == r.sentence_tokens.size());
    for (const auto& g : r.reference_plan.groups) CHECK(!g.empty());
  }
}
