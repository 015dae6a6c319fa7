#pragma once

// Text serialization of generation results.
//
// One block per sample:
//   === sample <input_index>:<sample_index>
//   input: attr:val,attr:val
//   plan: attr:val,attr:val ; attr:val ; ∅
//   text:
//   <one line per sentence, tokens space-joined>
//   seed: <per-sample rng seed>

#include "planwrite/corpus.hpp"
#include "planwrite/planner.hpp"
#include "planwrite/realizer.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace planwrite::generation_io {

inline constexpr const char* kNoneSymbol = "∅";  // ∅

std::string input_echo(const std::vector<corpus::InputItem>& items);

// Semicolon-separated groups; items as attribute:value, NONE as ∅.
std::string plan_to_string(const planner::Plan& plan,
                           const std::vector<corpus::InputItem>& items);

struct SampleBlock {
  int input_index = 0;
  int sample_index = 0;
  std::uint64_t seed = 0;
  std::string input;
  std::string plan;
  std::vector<std::string> sentences;
};

void write_block(std::ostream& os, const SampleBlock& block);

// Writes only the plan line (the --plan-only form).
void write_plan_line(std::ostream& os, const SampleBlock& block);

// Parses a file of blocks; also accepts plain text (one hypothesis per
// line), which yields one block per line with empty plan and input.
std::vector<SampleBlock> read_blocks(std::istream& is);

// Canonical form for distinct-plan counting: groups with sorted members,
// joined deterministically.
std::string canonical_plan(const std::string& plan_line);

// Plan rendered as a token sequence for self-BLEU: per group the sorted
// member tokens, with ";" separator tokens between groups.
std::vector<std::string> plan_tokens(const std::string& plan_line);

SampleBlock make_block(int input_index, int sample_index, std::uint64_t seed,
                       const std::vector<corpus::InputItem>& items,
                       const realizer::GenerationOutput& output,
                       const corpus::Vocabulary& vocab);

}  // namespace planwrite::generation_io
