#include "planwrite/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace planwrite::metrics {

namespace {

// n-grams of a token sequence keyed by a joined string ('\x1f' separator).
std::unordered_map<std::string, long> ngram_counts(const Tokens& tokens, int n) {
  std::unordered_map<std::string, long> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (int k = 0; k < n; ++k) {
      if (k > 0) key.push_back('\x1f');
      key += tokens[i + k];
    }
    counts[key] += 1;
  }
  return counts;
}

}  // namespace

double corpus_bleu4(const std::vector<Tokens>& hypotheses,
                    const std::vector<std::vector<Tokens>>& references) {
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu4: no hypotheses");
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu4: hypothesis/reference count mismatch");
  }
  constexpr int kMaxN = 4;
  long matched[kMaxN + 1] = {0};
  long total[kMaxN + 1] = {0};
  long hyp_len = 0;
  long ref_len = 0;

  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const Tokens& hyp = hypotheses[i];
    const auto& refs = references[i];
    if (refs.empty()) throw std::invalid_argument("corpus_bleu4: empty reference set");
    hyp_len += static_cast<long>(hyp.size());

    // closest reference length; ties resolve to the shorter
    long best_ref = static_cast<long>(refs[0].size());
    for (const auto& r : refs) {
      long len = static_cast<long>(r.size());
      long cur = std::labs(len - static_cast<long>(hyp.size()));
      long best = std::labs(best_ref - static_cast<long>(hyp.size()));
      if (cur < best || (cur == best && len < best_ref)) best_ref = len;
    }
    ref_len += best_ref;

    for (int n = 1; n <= kMaxN; ++n) {
      auto hyp_counts = ngram_counts(hyp, n);
      std::unordered_map<std::string, long> clip;
      for (const auto& r : refs) {
        for (const auto& [gram, count] : ngram_counts(r, n)) {
          auto it = clip.find(gram);
          if (it == clip.end() || it->second < count) clip[gram] = count;
        }
      }
      for (const auto& [gram, count] : hyp_counts) {
        total[n] += count;
        auto it = clip.find(gram);
        if (it != clip.end()) matched[n] += std::min(count, it->second);
      }
    }
  }

  if (total[1] == 0) return 0.0;
  double log_precision = 0;
  for (int n = 1; n <= kMaxN; ++n) {
    double p;
    if (matched[n] > 0) {
      p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    } else if (n >= 2) {
      p = 1.0 / static_cast<double>(total[n] + 1);
    } else {
      return 0.0;
    }
    log_precision += std::log(p);
  }
  double geo_mean = std::exp(log_precision / kMaxN);
  double bp = hyp_len >= ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) /
                                       static_cast<double>(std::max<long>(hyp_len, 1)));
  return bp * geo_mean;
}

double corpus_bleu4_single(const std::vector<Tokens>& hypotheses,
                           const std::vector<Tokens>& references) {
  std::vector<std::vector<Tokens>> wrapped;
  wrapped.reserve(references.size());
  for (const auto& r : references) wrapped.push_back({r});
  return corpus_bleu4(hypotheses, wrapped);
}

double record_coverage(const std::vector<corpus::InputItem>& items,
                       const std::string& text, const corpus::SynonymMap& synonyms) {
  if (items.empty()) throw std::invalid_argument("record_coverage: no items");
  std::string normalized = corpus::normalize_for_match(text);
  long mentioned = 0;
  for (const auto& item : items) {
    if (corpus::item_mentioned(item, normalized, synonyms)) ++mentioned;
  }
  return static_cast<double>(mentioned) / static_cast<double>(items.size());
}

double corpus_coverage(const std::vector<std::vector<corpus::InputItem>>& items,
                       const std::vector<std::string>& texts,
                       const corpus::SynonymMap& synonyms) {
  if (items.size() != texts.size() || items.empty()) {
    throw std::invalid_argument("corpus_coverage: misaligned inputs");
  }
  double sum = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    sum += record_coverage(items[i], texts[i], synonyms);
  }
  return sum / static_cast<double>(items.size());
}

double distinct_n(const std::vector<Tokens>& texts, int n) {
  long total = 0;
  std::set<std::string> distinct;
  for (const auto& t : texts) {
    for (const auto& [gram, count] : ngram_counts(t, n)) {
      total += count;
      distinct.insert(gram);
    }
  }
  if (total == 0) {
    throw std::invalid_argument("distinct_n: no text long enough for an n-gram");
  }
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

double repetition_n(const std::vector<Tokens>& texts, int n) {
  if (texts.empty()) throw std::invalid_argument("repetition_n: no texts");
  long repeating = 0;
  for (const auto& t : texts) {
    for (const auto& [gram, count] : ngram_counts(t, n)) {
      if (count >= 2) {
        ++repeating;
        break;
      }
    }
  }
  return static_cast<double>(repeating) / static_cast<double>(texts.size());
}

double self_bleu(const std::vector<Tokens>& texts) {
  if (texts.size() < 2) throw std::invalid_argument("self_bleu: needs >= 2 texts");
  double sum = 0;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    std::vector<Tokens> rest;
    rest.reserve(texts.size() - 1);
    for (std::size_t j = 0; j < texts.size(); ++j) {
      if (j != i) rest.push_back(texts[j]);
    }
    sum += corpus_bleu4({texts[i]}, {rest});
  }
  return sum / static_cast<double>(texts.size());
}

int distinct_plans(const std::vector<PlanKey>& plans) {
  if (plans.empty()) throw std::invalid_argument("distinct_plans: no plans");
  std::set<PlanKey> seen(plans.begin(), plans.end());
  return static_cast<int>(seen.size());
}

std::string MetricReport::to_tsv() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "bleu4\tcoverage\tavg_length\tdistinct4\trepetition4";
  if (self_bleu_text) os << "\tself_bleu_text";
  if (self_bleu_plan) os << "\tself_bleu_plan";
  if (mean_distinct_plans) os << "\tmean_distinct_plans";
  os << '\n';
  os << bleu4 << '\t' << coverage << '\t' << avg_length << '\t' << distinct4 << '\t'
     << repetition4;
  if (self_bleu_text) os << '\t' << *self_bleu_text;
  if (self_bleu_plan) os << '\t' << *self_bleu_plan;
  if (mean_distinct_plans) os << '\t' << *mean_distinct_plans;
  os << '\n';
  return os.str();
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "BLEU (%)        " << 100.0 * bleu4 << '\n';
  os << "Coverage (%)    " << 100.0 * coverage << '\n';
  os << "Length          " << avg_length << '\n';
  os << "Distinct-4 (%)  " << 100.0 * distinct4 << '\n';
  os << "Repetition-4 (%)" << ' ' << 100.0 * repetition4 << '\n';
  if (self_bleu_text) os << "Self-BLEU text (%) " << 100.0 * *self_bleu_text << '\n';
  if (self_bleu_plan) os << "Self-BLEU plan (%) " << 100.0 * *self_bleu_plan << '\n';
  if (mean_distinct_plans) os << "Distinct plans (avg) " << *mean_distinct_plans << '\n';
  if (!distinct_plan_histogram.empty()) {
    os << "Distinct-plan histogram (count: inputs)";
    for (const auto& [count, inputs] : distinct_plan_histogram) {
      os << ' ' << count << ':' << inputs;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace planwrite::metrics
