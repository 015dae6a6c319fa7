#pragma once

// Corpus ingestion: tokenization, sentence segmentation, canonical item
// ordering, reference-plan extraction by string matching, and vocabularies.
//
// Corpus files are UTF-8, one JSON object per line:
//   {"pairs": [["attr","value"], ...], "text": "...",
//    "title": "..." (optional), "sentences": ["...", ...] (optional)}
// A "sentences" list overrides automatic segmentation.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace planwrite::corpus {

struct TokenizerConfig {
  // Tokens that end a sentence. Multi-byte UTF-8 entries are fine.
  std::vector<std::string> terminators = {".", "!", "?", ";",
                                          "。", "！", "？", "；"};
};

// Lowercases ASCII, splits on whitespace, and splits terminator characters
// into standalone tokens.
std::vector<std::string> tokenize(const std::string& text, const TokenizerConfig& cfg = {});

// Tokenizes and splits into sentences after each terminator token. The
// concatenation of the segments is exactly the token stream of `text`;
// text with no terminator yields a single segment.
std::vector<std::vector<std::string>> segment_sentences(const std::string& text,
                                                        const TokenizerConfig& cfg = {});

// Tokens joined with single spaces.
std::string detokenize(const std::vector<std::string>& tokens);

// Lowercased, whitespace-collapsed form used for all string matching.
std::string normalize_for_match(const std::string& s);

struct InputItem {
  std::string attribute;
  std::string value;
  std::vector<int> value_tokens;  // text-vocab ids, filled by encode_records
  int attr_id = 3;                // attr-vocab id (UNK until encoded)
  int value_id = 3;               // value-vocab id (UNK until encoded)
};

struct ReferencePlan {
  // One group per sentence; entries index Record::items, and the value
  // items.size() is the reserved NONE tag for item-free sentences.
  std::vector<std::vector<int>> groups;
};

struct Record {
  std::vector<InputItem> items;
  std::optional<std::vector<std::string>> title_tokens;
  std::string text;
  std::vector<std::vector<std::string>> sentence_tokens;
  std::vector<std::vector<int>> sentences;  // ids, filled by encode_records
  std::vector<int> title_ids;
  ReferencePlan reference_plan;

  int none_index() const { return static_cast<int>(items.size()); }
};

struct Rejection {
  long line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<Record> records;
  std::vector<Rejection> rejections;
};

// Parses a corpus file; malformed lines are reported, valid lines become
// Records in input order with sentences segmented and reference plans
// extracted against the as-given item order. When `require_text` is false
// (generation inputs), records may omit "text".
LoadResult load_corpus(const std::string& path, const TokenizerConfig& cfg = {},
                       bool require_text = true);

using AttributeStats = std::unordered_map<std::string, long>;

AttributeStats compute_attribute_stats(const std::vector<Record>& records);

// Stable sort by descending corpus frequency of the attribute, ties broken
// alphabetically by attribute then value. Unseen attributes count as 0.
std::vector<InputItem> canonical_order(std::vector<InputItem> items,
                                       const AttributeStats& stats);

// value -> aliases, all normalized. File lines: value<TAB>alias1<TAB>alias2...
using SynonymMap = std::unordered_map<std::string, std::vector<std::string>>;

SynonymMap load_synonyms(const std::string& path);

// True when the item's value or any alias occurs as a substring of
// `normalized_text` (which must already be normalize_for_match'ed).
bool item_mentioned(const InputItem& item, const std::string& normalized_text,
                    const SynonymMap& synonyms);

// Group t holds the indices of items mentioned in sentence t; a sentence
// mentioning no item gets the singleton NONE tag. Total: never fails.
ReferencePlan extract_reference_plan(const Record& record, const SynonymMap& synonyms = {});

class Vocabulary {
 public:
  // Reserved ids, identical across the three tables.
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNone = 4;
  static constexpr int kReservedCount = 5;

  struct Table {
    std::vector<std::string> tokens;
    std::vector<long> counts;
    std::unordered_map<std::string, int> ids;

    int id_of(const std::string& token) const {
      auto it = ids.find(token);
      return it == ids.end() ? kUnk : it->second;
    }
    const std::string& token_of(int id) const { return tokens.at(id); }
    int size() const { return static_cast<int>(tokens.size()); }
  };

  Table text;
  Table attr;
  Table value;

  std::vector<int> encode_text(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode_text(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
};

// Builds the three vocabularies over the corpus. Tokens with frequency
// below min_count map to UNK; reserved entries are always present. Order:
// reserved ids first, then by descending count, ties lexicographic.
Vocabulary build_vocab(const std::vector<Record>& records, long min_count);

// Fills Record::sentences, title_ids, and InputItem::value_tokens.
void encode_records(std::vector<Record>& records, const Vocabulary& vocab,
                    const TokenizerConfig& cfg = {});

// Encoded-corpus round trip (JSON lines mirroring the Record fields).
void save_encoded(const std::vector<Record>& records, const std::string& path);
std::vector<Record> load_encoded(const std::string& path);

// Per-record plan-extraction coverage plus corpus totals.
void write_extraction_report(const std::vector<Record>& records, std::ostream& os);

}  // namespace planwrite::corpus
