#include "planwrite/corpus.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace planwrite::corpus {

using nlohmann::json;

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

char lower_ascii(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

// Length of the terminator starting at `pos`, or 0 if none matches.
std::size_t terminator_at(const std::string& s, std::size_t pos,
                          const std::vector<std::string>& terminators) {
  for (const auto& t : terminators) {
    if (!t.empty() && s.compare(pos, t.size(), t) == 0) return t.size();
  }
  return 0;
}

const std::string kReservedTokens[Vocabulary::kReservedCount] = {
    "<pad>", "<bos>", "<eos>", "<unk>", "<none>"};

}  // namespace

std::vector<std::string> tokenize(const std::string& text, const TokenizerConfig& cfg) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&]() {
    if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
  };
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (is_space(c)) {
      flush();
      ++i;
      continue;
    }
    std::size_t tlen = terminator_at(text, i, cfg.terminators);
    if (tlen > 0) {
      flush();
      tokens.push_back(text.substr(i, tlen));
      i += tlen;
      continue;
    }
    current.push_back(lower_ascii(c));
    ++i;
  }
  flush();
  return tokens;
}

std::vector<std::vector<std::string>> segment_sentences(const std::string& text,
                                                        const TokenizerConfig& cfg) {
  if (text.empty()) throw std::invalid_argument("segment_sentences: empty text");
  std::vector<std::string> tokens = tokenize(text, cfg);
  std::vector<std::vector<std::string>> sentences;
  std::vector<std::string> current;
  for (auto& tok : tokens) {
    bool ends = terminator_at(tok, 0, cfg.terminators) == tok.size() && !tok.empty();
    current.push_back(std::move(tok));
    if (ends) {
      sentences.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) sentences.push_back(std::move(current));
  return sentences;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::string normalize_for_match(const std::string& s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(lower_ascii(c));
  }
  return out;
}

namespace {

Record parse_record(const json& j, long line_no, const TokenizerConfig& cfg,
                    bool require_text) {
  if (!j.is_object()) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": not a JSON object");
  }
  if (!j.contains("pairs") || !j["pairs"].is_array()) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": missing 'pairs' list");
  }
  Record rec;
  for (const auto& p : j["pairs"]) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string()) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": 'pairs' entries must be [attribute, value] strings");
    }
    InputItem item;
    item.attribute = p[0].get<std::string>();
    item.value = p[1].get<std::string>();
    if (item.attribute.empty() || item.value.empty()) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": empty attribute or value");
    }
    rec.items.push_back(std::move(item));
  }
  if (rec.items.empty()) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": empty item list");
  }
  if (j.contains("text")) {
    if (!j["text"].is_string()) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": 'text' must be a string");
    }
    rec.text = j["text"].get<std::string>();
  } else if (require_text) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": missing 'text' key");
  }
  if (j.contains("title")) {
    if (!j["title"].is_string()) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": 'title' must be a string");
    }
    rec.title_tokens = tokenize(j["title"].get<std::string>(), cfg);
  }
  if (j.contains("sentences")) {
    if (!j["sentences"].is_array()) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": 'sentences' must be a list of strings");
    }
    for (const auto& s : j["sentences"]) {
      if (!s.is_string()) {
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": 'sentences' must be a list of strings");
      }
      auto toks = tokenize(s.get<std::string>(), cfg);
      if (!toks.empty()) rec.sentence_tokens.push_back(std::move(toks));
    }
    if (rec.sentence_tokens.empty()) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": no usable sentences");
    }
    if (rec.text.empty()) {
      std::string joined;
      for (const auto& s : j["sentences"]) {
        if (!joined.empty()) joined.push_back(' ');
        joined += s.get<std::string>();
      }
      rec.text = joined;
    }
  } else if (!rec.text.empty()) {
    rec.sentence_tokens = segment_sentences(rec.text, cfg);
    if (rec.sentence_tokens.empty()) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": text has no tokens");
    }
  } else if (require_text) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": empty 'text'");
  }
  return rec;
}

}  // namespace

LoadResult load_corpus(const std::string& path, const TokenizerConfig& cfg,
                       bool require_text) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  LoadResult result;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      Record rec = parse_record(j, line_no, cfg, require_text);
      rec.reference_plan = extract_reference_plan(rec);
      result.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      std::string msg = e.what();
      if (msg.find("line ") != 0) msg = "line " + std::to_string(line_no) + ": " + msg;
      result.rejections.push_back({line_no, msg});
    }
  }
  return result;
}

AttributeStats compute_attribute_stats(const std::vector<Record>& records) {
  AttributeStats stats;
  for (const auto& r : records) {
    for (const auto& item : r.items) stats[item.attribute] += 1;
  }
  return stats;
}

std::vector<InputItem> canonical_order(std::vector<InputItem> items,
                                       const AttributeStats& stats) {
  auto freq = [&stats](const InputItem& item) -> long {
    auto it = stats.find(item.attribute);
    return it == stats.end() ? 0 : it->second;
  };
  std::stable_sort(items.begin(), items.end(),
                   [&](const InputItem& a, const InputItem& b) {
                     long fa = freq(a), fb = freq(b);
                     if (fa != fb) return fa > fb;
                     if (a.attribute != b.attribute) return a.attribute < b.attribute;
                     return a.value < b.value;
                   });
  return items;
}

SynonymMap load_synonyms(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open synonym file: " + path);
  SynonymMap map;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 2) continue;
    std::string key = normalize_for_match(fields[0]);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      std::string alias = normalize_for_match(fields[i]);
      if (!alias.empty()) map[key].push_back(alias);
    }
  }
  return map;
}

bool item_mentioned(const InputItem& item, const std::string& normalized_text,
                    const SynonymMap& synonyms) {
  std::string value = normalize_for_match(item.value);
  if (!value.empty() && normalized_text.find(value) != std::string::npos) return true;
  auto it = synonyms.find(value);
  if (it != synonyms.end()) {
    for (const auto& alias : it->second) {
      if (normalized_text.find(alias) != std::string::npos) return true;
    }
  }
  return false;
}

ReferencePlan extract_reference_plan(const Record& record, const SynonymMap& synonyms) {
  ReferencePlan plan;
  plan.groups.reserve(record.sentence_tokens.size());
  for (const auto& sentence : record.sentence_tokens) {
    std::string detok = normalize_for_match(detokenize(sentence));
    std::vector<int> group;
    for (std::size_t i = 0; i < record.items.size(); ++i) {
      if (item_mentioned(record.items[i], detok, synonyms)) {
        group.push_back(static_cast<int>(i));
      }
    }
    if (group.empty()) group.push_back(record.none_index());
    plan.groups.push_back(std::move(group));
  }
  return plan;
}

namespace {

void finish_table(Vocabulary::Table& table,
                  const std::map<std::string, long>& counts, long min_count) {
  for (int i = 0; i < Vocabulary::kReservedCount; ++i) {
    table.tokens.push_back(kReservedTokens[i]);
    table.counts.push_back(0);
    table.ids[kReservedTokens[i]] = i;
  }
  std::vector<std::pair<std::string, long>> entries(counts.begin(), counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (auto& [token, count] : entries) {
    if (count < min_count) continue;
    if (table.ids.count(token)) continue;  // reserved literals stay reserved
    table.ids[token] = static_cast<int>(table.tokens.size());
    table.tokens.push_back(token);
    table.counts.push_back(count);
  }
}

}  // namespace

std::vector<int> Vocabulary::encode_text(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(text.id_of(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode_text(const std::vector<int>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) tokens.push_back(text.token_of(id));
  return tokens;
}

Vocabulary build_vocab(const std::vector<Record>& records, long min_count) {
  if (min_count < 1) throw std::invalid_argument("build_vocab: min_count must be >= 1");
  if (records.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, long> text_counts, attr_counts, value_counts;
  for (const auto& r : records) {
    for (const auto& s : r.sentence_tokens) {
      for (const auto& t : s) text_counts[t] += 1;
    }
    if (r.title_tokens) {
      for (const auto& t : *r.title_tokens) text_counts[t] += 1;
    }
    for (const auto& item : r.items) {
      attr_counts[item.attribute] += 1;
      value_counts[item.value] += 1;
    }
  }
  Vocabulary vocab;
  finish_table(vocab.text, text_counts, min_count);
  finish_table(vocab.attr, attr_counts, min_count);
  finish_table(vocab.value, value_counts, min_count);
  return vocab;
}

void encode_records(std::vector<Record>& records, const Vocabulary& vocab,
                    const TokenizerConfig& cfg) {
  for (auto& r : records) {
    r.sentences.clear();
    for (const auto& s : r.sentence_tokens) r.sentences.push_back(vocab.encode_text(s));
    r.title_ids.clear();
    if (r.title_tokens) r.title_ids = vocab.encode_text(*r.title_tokens);
    for (auto& item : r.items) {
      item.value_tokens = vocab.encode_text(tokenize(item.value, cfg));
      if (item.value_tokens.empty()) {
        item.value_tokens.push_back(Vocabulary::kUnk);
      }
      item.attr_id = vocab.attr.id_of(item.attribute);
      item.value_id = vocab.value.id_of(item.value);
    }
  }
}

namespace {

void save_table(std::ostream& os, const std::string& section,
                const Vocabulary::Table& table) {
  for (int i = 0; i < table.size(); ++i) {
    os << section << '\t' << i << '\t' << table.tokens[i] << '\t' << table.counts[i]
       << '\n';
  }
}

void load_table(Vocabulary::Table& table, int id, const std::string& token, long count) {
  if (id != table.size()) {
    throw std::runtime_error("vocabulary file: non-contiguous ids");
  }
  table.tokens.push_back(token);
  table.counts.push_back(count);
  table.ids[token] = id;
}

}  // namespace

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  save_table(out, "text", text);
  save_table(out, "attr", attr);
  save_table(out, "value", value);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  Vocabulary vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string section, token;
    int id;
    long count;
    if (!std::getline(ss, section, '\t')) continue;
    std::string field;
    if (!std::getline(ss, field, '\t')) throw std::runtime_error("bad vocab line: " + line);
    id = std::stoi(field);
    if (!std::getline(ss, token, '\t')) throw std::runtime_error("bad vocab line: " + line);
    if (!std::getline(ss, field)) throw std::runtime_error("bad vocab line: " + line);
    count = std::stol(field);
    if (section == "text") {
      load_table(vocab.text, id, token, count);
    } else if (section == "attr") {
      load_table(vocab.attr, id, token, count);
    } else if (section == "value") {
      load_table(vocab.value, id, token, count);
    } else {
      throw std::runtime_error("vocabulary file: unknown section " + section);
    }
  }
  if (vocab.text.size() < Vocabulary::kReservedCount) {
    throw std::runtime_error("vocabulary file: missing reserved entries");
  }
  return vocab;
}

void save_encoded(const std::vector<Record>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write encoded corpus: " + path);
  for (const auto& r : records) {
    json j;
    json pairs = json::array();
    json value_tokens = json::array();
    json item_ids = json::array();
    for (const auto& item : r.items) {
      pairs.push_back({item.attribute, item.value});
      value_tokens.push_back(item.value_tokens);
      item_ids.push_back({item.attr_id, item.value_id});
    }
    j["pairs"] = pairs;
    j["value_tokens"] = value_tokens;
    j["item_ids"] = item_ids;
    j["text"] = r.text;
    json sent_tokens = json::array();
    for (const auto& s : r.sentence_tokens) sent_tokens.push_back(s);
    j["sentence_tokens"] = sent_tokens;
    j["sentences"] = r.sentences;
    if (r.title_tokens) {
      j["title_tokens"] = *r.title_tokens;
      j["title_ids"] = r.title_ids;
    }
    j["plan"] = r.reference_plan.groups;
    out << j.dump() << '\n';
  }
}

std::vector<Record> load_encoded(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open encoded corpus: " + path);
  std::vector<Record> records;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("encoded corpus line " + std::to_string(line_no) + ": " +
                               e.what());
    }
    Record r;
    const auto& pairs = j.at("pairs");
    const auto& value_tokens = j.at("value_tokens");
    const auto& item_ids = j.at("item_ids");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      InputItem item;
      item.attribute = pairs[i][0].get<std::string>();
      item.value = pairs[i][1].get<std::string>();
      item.value_tokens = value_tokens[i].get<std::vector<int>>();
      item.attr_id = item_ids[i][0].get<int>();
      item.value_id = item_ids[i][1].get<int>();
      r.items.push_back(std::move(item));
    }
    r.text = j.at("text").get<std::string>();
    for (const auto& s : j.at("sentence_tokens")) {
      r.sentence_tokens.push_back(s.get<std::vector<std::string>>());
    }
    r.sentences = j.at("sentences").get<std::vector<std::vector<int>>>();
    if (j.contains("title_tokens")) {
      r.title_tokens = j["title_tokens"].get<std::vector<std::string>>();
      r.title_ids = j.value("title_ids", std::vector<int>{});
    }
    r.reference_plan.groups = j.at("plan").get<std::vector<std::vector<int>>>();
    records.push_back(std::move(r));
  }
  return records;
}

void write_extraction_report(const std::vector<Record>& records, std::ostream& os) {
  long total_sentences = 0;
  long none_sentences = 0;
  double covered_sum = 0;
  os << "record\tsentences\titems\titems_in_plan\tnone_groups\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Record& r = records[i];
    std::vector<bool> used(r.items.size(), false);
    long none_count = 0;
    for (const auto& g : r.reference_plan.groups) {
      for (int idx : g) {
        if (idx == r.none_index()) {
          ++none_count;
        } else {
          used[idx] = true;
        }
      }
    }
    long used_count = std::count(used.begin(), used.end(), true);
    total_sentences += static_cast<long>(r.reference_plan.groups.size());
    none_sentences += none_count;
    double cov = r.items.empty() ? 0.0
                                 : static_cast<double>(used_count) /
                                       static_cast<double>(r.items.size());
    covered_sum += cov;
    os << i << '\t' << r.reference_plan.groups.size() << '\t' << r.items.size() << '\t'
       << used_count << '\t' << none_count << '\n';
  }
  os << "# records=" << records.size() << " sentences=" << total_sentences
     << " none_groups=" << none_sentences << " mean_item_coverage="
     << (records.empty() ? 0.0 : covered_sum / static_cast<double>(records.size()))
     << '\n';
}

}  // namespace planwrite::corpus
