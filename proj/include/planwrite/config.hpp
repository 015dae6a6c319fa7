#pragma once

// Run configuration: flat `key = value` lines with # comments. Unknown keys
// are rejected; every field is validated on load. The PLANWRITE_SEED
// environment variable overrides the seed.

#include "planwrite/corpus.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace planwrite::config {

struct RunConfig {
  // embeddings
  int word_emb_dim = 300;
  int attr_emb_dim = 30;
  int value_emb_dim = 100;

  // latent variables
  int latent_dim = 200;

  // plan-side recurrences (input encoder, plan decoder, plan encoder)
  int encoder_hidden = 100;
  int plan_hidden = 100;
  int plan_encoder_hidden = 100;

  // realization-side recurrences and heads
  int sentence_hidden = 300;
  int word_hidden = 300;
  int target_encoder_hidden = 300;
  int mlp_hidden = 300;
  int attn_hidden = 100;

  bool use_title = false;

  // decoding caps
  int max_plan_steps = 12;
  int max_sentence_len = 50;

  // training
  int batch_size = 32;
  double learning_rate = 0.001;
  double clip_norm = 5.0;
  long anneal_steps = 0;  // 0 = one epoch's step count
  int epochs = 10;
  std::uint64_t seed = 1;
  long min_count = 1;
  std::string precision = "f64";  // f64 | f32

  // ablations
  bool ablate_global = false;  // drop the global planning latent
  bool ablate_local = false;   // drop the per-sentence latents

  // paths (used by the train subcommand)
  std::string data_dir;
  std::string valid_data_dir;
  std::string out_dir;

  std::vector<std::string> sentence_terminators = {
      ".", "!", "?", ";", "。", "！", "？", "；"};

  corpus::TokenizerConfig tokenizer() const {
    corpus::TokenizerConfig t;
    t.terminators = sentence_terminators;
    return t;
  }
};

// Parses and validates; throws std::runtime_error naming the offending key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Applies the PLANWRITE_SEED override if the variable is set.
void apply_env_overrides(RunConfig& cfg);

// Round-trippable `key = value` form (used as the checkpoint config echo).
std::string serialize_config(const RunConfig& cfg);

void validate(const RunConfig& cfg);

}  // namespace planwrite::config
