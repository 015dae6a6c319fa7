#pragma once

// Automatic evaluation metrics: corpus BLEU-4, coverage, length, distinct-4,
// repetition-4, self-BLEU, and distinct-plan counting.
//
// BLEU smoothing, stated explicitly since it affects comparability: when the
// modified precision for some n >= 2 has zero matches, it is replaced by
// 1 / (candidate n-gram count + 1). A zero unigram precision yields 0. The
// brevity penalty uses the closest reference length (ties to the shorter).

#include "planwrite/corpus.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace planwrite::metrics {

using Tokens = std::vector<std::string>;

// Multi-reference corpus BLEU-4. `references[i]` lists the reference texts
// for hypothesis i and must be non-empty.
double corpus_bleu4(const std::vector<Tokens>& hypotheses,
                    const std::vector<std::vector<Tokens>>& references);

// Single-reference convenience wrapper.
double corpus_bleu4_single(const std::vector<Tokens>& hypotheses,
                           const std::vector<Tokens>& references);

// Fraction of items whose value (or a synonym) occurs as a substring of the
// normalized text.
double record_coverage(const std::vector<corpus::InputItem>& items,
                       const std::string& text, const corpus::SynonymMap& synonyms = {});

// Mean of record_coverage over aligned (items, text) pairs.
double corpus_coverage(const std::vector<std::vector<corpus::InputItem>>& items,
                       const std::vector<std::string>& texts,
                       const corpus::SynonymMap& synonyms = {});

// Distinct n-grams across all texts divided by total n-gram tokens.
// Throws if no text contributes an n-gram.
double distinct_n(const std::vector<Tokens>& texts, int n = 4);

// Fraction of texts that contain some n-gram at least twice.
double repetition_n(const std::vector<Tokens>& texts, int n = 4);

// Mean over texts of BLEU-4 against the remaining texts as references.
// Requires at least two texts.
double self_bleu(const std::vector<Tokens>& texts);

// A plan rendered for comparison: per sentence the sorted member indices.
using PlanKey = std::vector<std::vector<int>>;

// Number of distinct plans under exact group-sequence equality.
int distinct_plans(const std::vector<PlanKey>& plans);

struct MetricReport {
  double bleu4 = 0;
  double coverage = 0;
  double avg_length = 0;
  double distinct4 = 0;
  double repetition4 = 0;
  std::optional<double> self_bleu_text;
  std::optional<double> self_bleu_plan;
  std::optional<double> mean_distinct_plans;
  std::map<int, long> distinct_plan_histogram;  // distinct count -> #inputs

  // Tab-separated single-row table in the standard column order:
  // BLEU, Coverage, Length, Distinct-4, Repetition-4 (+ optional extras).
  std::string to_tsv() const;
  std::string to_table() const;
};

}  // namespace planwrite::metrics
