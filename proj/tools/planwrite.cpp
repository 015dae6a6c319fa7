// planwrite: plan-then-realize text generation over attribute-value inputs.
//
// Subcommands: prepare, train, generate, plan, eval, inspect.
// Exit codes: 0 success, 2 usage or input error, 3 numeric failure.

#include "CLI11.hpp"

#include "planwrite/checkpoint.hpp"
#include "planwrite/config.hpp"
#include "planwrite/corpus.hpp"
#include "planwrite/generation_io.hpp"
#include "planwrite/metrics.hpp"
#include "planwrite/objective.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace planwrite;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct PreparedData {
  corpus::Vocabulary vocab;
  std::vector<corpus::Record> records;
  std::vector<corpus::Record> valid;  // empty when no validation split was prepared
};

PreparedData load_prepared(const std::string& dir) {
  PreparedData d;
  d.vocab = corpus::Vocabulary::load((fs::path(dir) / "vocab.tsv").string());
  d.records = corpus::load_encoded((fs::path(dir) / "encoded.jsonl").string());
  fs::path valid_path = fs::path(dir) / "encoded_valid.jsonl";
  if (fs::exists(valid_path)) d.valid = corpus::load_encoded(valid_path.string());
  return d;
}

corpus::AttributeStats stats_from_vocab(const corpus::Vocabulary& vocab) {
  corpus::AttributeStats stats;
  for (int i = corpus::Vocabulary::kReservedCount; i < vocab.attr.size(); ++i) {
    stats[vocab.attr.token_of(i)] = vocab.attr.counts[i];
  }
  return stats;
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  std::string corpus_path;
  std::string valid_path;
  std::string out_dir;
  std::string config_path;
  std::string synonyms_path;
};

int cmd_prepare(const PrepareArgs& args) {
  config::RunConfig cfg;
  if (!args.config_path.empty()) cfg = config::load_config(args.config_path);
  corpus::TokenizerConfig tok = cfg.tokenizer();
  corpus::SynonymMap synonyms;
  if (!args.synonyms_path.empty()) synonyms = corpus::load_synonyms(args.synonyms_path);

  corpus::LoadResult loaded = corpus::load_corpus(args.corpus_path, tok);
  for (const auto& rej : loaded.rejections) {
    std::cerr << "rejected: " << rej.message << "\n";
  }
  if (loaded.records.empty()) {
    std::cerr << "error: no usable records in " << args.corpus_path << "\n";
    return kExitUsage;
  }

  corpus::AttributeStats stats = corpus::compute_attribute_stats(loaded.records);
  for (auto& rec : loaded.records) {
    rec.items = corpus::canonical_order(rec.items, stats);
    rec.reference_plan = corpus::extract_reference_plan(rec, synonyms);
  }
  corpus::Vocabulary vocab = corpus::build_vocab(loaded.records, cfg.min_count);
  corpus::encode_records(loaded.records, vocab, tok);

  fs::create_directories(args.out_dir);
  vocab.save((fs::path(args.out_dir) / "vocab.tsv").string());
  corpus::save_encoded(loaded.records, (fs::path(args.out_dir) / "encoded.jsonl").string());
  {
    std::ofstream report((fs::path(args.out_dir) / "extract_report.txt").string());
    if (!report) throw std::runtime_error("cannot write extraction report");
    corpus::write_extraction_report(loaded.records, report);
  }

  if (!args.valid_path.empty()) {
    corpus::LoadResult vloaded = corpus::load_corpus(args.valid_path, tok);
    for (const auto& rej : vloaded.rejections) {
      std::cerr << "rejected (valid): " << rej.message << "\n";
    }
    // validation uses training-split statistics and vocabulary
    for (auto& rec : vloaded.records) {
      rec.items = corpus::canonical_order(rec.items, stats);
      rec.reference_plan = corpus::extract_reference_plan(rec, synonyms);
    }
    corpus::encode_records(vloaded.records, vocab, tok);
    corpus::save_encoded(vloaded.records,
                         (fs::path(args.out_dir) / "encoded_valid.jsonl").string());
  }

  std::cout << "prepared " << loaded.records.size() << " records ("
            << loaded.rejections.size() << " rejected), text vocab "
            << vocab.text.size() << ", attr vocab " << vocab.attr.size()
            << ", value vocab " << vocab.value.size() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;
  std::string ablate;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
};

model::Ablation ablation_from(const config::RunConfig& cfg, const std::string& flag) {
  model::Ablation abl;
  abl.global_z = cfg.ablate_global;
  abl.local_z = cfg.ablate_local;
  if (flag == "no-global") abl.global_z = true;
  else if (flag == "no-local") abl.local_z = true;
  else if (!flag.empty()) throw std::runtime_error("unknown ablation: " + flag);
  return abl;
}

template <typename Scalar>
int run_train(const config::RunConfig& cfg, const model::Ablation& abl,
              const std::string& data_dir, const std::string& out_dir) {
  PreparedData data = load_prepared(data_dir);
  const std::vector<corpus::Record>& valid =
      data.valid.empty() ? data.records : data.valid;
  if (data.valid.empty()) {
    std::cerr << "note: no validation split prepared; validating on the training set\n";
  }
  for (const auto& rec : data.records) {
    if (static_cast<int>(rec.reference_plan.groups.size()) > cfg.max_plan_steps) {
      throw std::runtime_error(
          "record has more sentences than max_plan_steps; raise max_plan_steps");
    }
  }

  model::ModelDims dims = model::dims_from_config(cfg, data.vocab);
  model::Phvm<Scalar> phvm(dims, abl, cfg.seed);

  objective::TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.learning_rate = cfg.learning_rate;
  tc.clip_norm = cfg.clip_norm;
  tc.anneal_steps = cfg.anneal_steps;
  tc.epochs = cfg.epochs;
  tc.seed = cfg.seed;

  auto result = objective::train<Scalar>(
      phvm, data.records, valid, tc, [](int epoch, double val) {
        std::cout << "epoch " << epoch << " validation L1+L2 " << val << "\n";
      });

  fs::create_directories(out_dir);
  {
    std::ofstream log((fs::path(out_dir) / "train.log").string());
    if (!log) throw std::runtime_error("cannot write training log");
    for (const auto& row : result.log_rows) log << row << "\n";
  }
  phvm.store().restore_values(result.best_values);
  checkpoint::Metadata meta;
  meta.config_echo = config::serialize_config(cfg);
  meta.text_vocab = data.vocab.text.size();
  meta.attr_vocab = data.vocab.attr.size();
  meta.value_vocab = data.vocab.value.size();
  checkpoint::save(phvm.store(), meta, (fs::path(out_dir) / "checkpoint.bin").string());

  std::cout << "best epoch " << result.best_epoch << "\n";
  std::cout << "final validation L1+L2 " << result.best_validation << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& args) {
  config::RunConfig cfg = config::load_config(args.config_path);
  config::apply_env_overrides(cfg);
  if (args.seed) cfg.seed = *args.seed;
  if (args.epochs) cfg.epochs = *args.epochs;
  std::string data_dir = !args.data_dir.empty() ? args.data_dir : cfg.data_dir;
  std::string out_dir = !args.out_dir.empty() ? args.out_dir : cfg.out_dir;
  if (data_dir.empty() || out_dir.empty()) {
    std::cerr << "error: data_dir and out_dir must be given (config or flags)\n";
    return kExitUsage;
  }
  model::Ablation abl = ablation_from(cfg, args.ablate);
  // keep the checkpoint's config echo consistent with the effective ablation
  config::RunConfig effective = cfg;
  effective.ablate_global = abl.global_z;
  effective.ablate_local = abl.local_z;
  if (cfg.precision == "f32") return run_train<float>(effective, abl, data_dir, out_dir);
  return run_train<double>(effective, abl, data_dir, out_dir);
}

// ---------------------------------------------------------------------------
// generate / plan

struct GenerateArgs {
  std::string checkpoint_path;
  std::string vocab_path;
  std::string input_path;
  std::string out_path;
  int samples = 1;
  std::uint64_t seed = 1;
  std::string mode = "greedy";
  bool plan_only = false;
};

template <typename Scalar>
int run_generate(const GenerateArgs& args, const config::RunConfig& cfg,
                 const checkpoint::Contents& ckpt) {
  corpus::Vocabulary vocab = corpus::Vocabulary::load(args.vocab_path);
  if (static_cast<std::uint64_t>(vocab.text.size()) != ckpt.meta.text_vocab ||
      static_cast<std::uint64_t>(vocab.attr.size()) != ckpt.meta.attr_vocab ||
      static_cast<std::uint64_t>(vocab.value.size()) != ckpt.meta.value_vocab) {
    std::cerr << "error: vocabulary does not match the checkpoint\n";
    return kExitUsage;
  }
  model::Ablation abl;
  abl.global_z = cfg.ablate_global;
  abl.local_z = cfg.ablate_local;
  model::ModelDims dims = model::dims_from_config(cfg, vocab);
  model::Phvm<Scalar> phvm(dims, abl, cfg.seed);
  checkpoint::restore(phvm.store(), ckpt);

  corpus::TokenizerConfig tok = cfg.tokenizer();
  corpus::LoadResult loaded = corpus::load_corpus(args.input_path, tok,
                                                  /*require_text=*/false);
  for (const auto& rej : loaded.rejections) {
    std::cerr << "rejected: " << rej.message << "\n";
  }
  if (loaded.records.empty()) {
    std::cerr << "error: no usable input records\n";
    return kExitUsage;
  }
  corpus::AttributeStats stats = stats_from_vocab(vocab);
  std::vector<corpus::Record> records = std::move(loaded.records);
  for (auto& rec : records) rec.items = corpus::canonical_order(rec.items, stats);
  corpus::encode_records(records, vocab, tok);

  realizer::DecodeMode mode = args.mode == "sample" ? realizer::DecodeMode::sample
                                                    : realizer::DecodeMode::greedy;
  std::ofstream file_out;
  std::ostream* os = &std::cout;
  if (!args.out_path.empty()) {
    file_out.open(args.out_path);
    if (!file_out) throw std::runtime_error("cannot write " + args.out_path);
    os = &file_out;
  }

  for (std::size_t i = 0; i < records.size(); ++i) {
    for (int k = 0; k < args.samples; ++k) {
      std::uint64_t sample_seed = compute::derive_seed(args.seed, i, k);
      compute::Rng rng(sample_seed);
      realizer::GenerationOutput out = realizer::generate(phvm, records[i], rng, mode);
      auto block = generation_io::make_block(static_cast<int>(i), k, sample_seed,
                                             records[i].items, out, vocab);
      if (args.plan_only) {
        generation_io::write_plan_line(*os, block);
      } else {
        generation_io::write_block(*os, block);
      }
    }
  }
  return kExitOk;
}

int cmd_generate(const GenerateArgs& args) {
  checkpoint::Contents ckpt = checkpoint::load(args.checkpoint_path);
  config::RunConfig cfg = config::parse_config(ckpt.meta.config_echo);
  if (cfg.precision == "f32") return run_generate<float>(args, cfg, ckpt);
  return run_generate<double>(args, cfg, ckpt);
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string outputs_path;
  std::string references_path;
  std::string items_path;
  std::string synonyms_path;
  int per_input_samples = 1;
};

std::vector<metrics::Tokens> load_reference_texts(const std::string& path,
                                                  const corpus::TokenizerConfig& tok) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open references: " + path);
  std::vector<metrics::Tokens> refs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    refs.push_back(corpus::tokenize(line, tok));
  }
  return refs;
}

int cmd_eval(const EvalArgs& args) {
  corpus::TokenizerConfig tok;
  std::ifstream outputs_in(args.outputs_path);
  if (!outputs_in) {
    std::cerr << "error: cannot open outputs: " << args.outputs_path << "\n";
    return kExitUsage;
  }
  auto blocks = generation_io::read_blocks(outputs_in);
  if (blocks.empty()) {
    std::cerr << "error: no output samples found\n";
    return kExitUsage;
  }
  auto refs = load_reference_texts(args.references_path, tok);

  const int k = std::max(1, args.per_input_samples);
  // group samples by input index
  std::map<int, std::vector<const generation_io::SampleBlock*>> by_input;
  for (const auto& b : blocks) by_input[b.input_index].push_back(&b);
  if (by_input.size() != refs.size()) {
    std::cerr << "error: " << by_input.size() << " evaluated inputs but "
              << refs.size() << " references\n";
    return kExitUsage;
  }
  for (const auto& [idx, group] : by_input) {
    if (static_cast<int>(group.size()) != k) {
      std::cerr << "error: input " << idx << " has " << group.size()
                << " samples, expected " << k << "\n";
      return kExitUsage;
    }
  }

  corpus::SynonymMap synonyms;
  if (!args.synonyms_path.empty()) synonyms = corpus::load_synonyms(args.synonyms_path);

  std::vector<std::vector<corpus::InputItem>> items;
  if (!args.items_path.empty()) {
    corpus::LoadResult loaded =
        corpus::load_corpus(args.items_path, tok, /*require_text=*/false);
    for (const auto& rec : loaded.records) items.push_back(rec.items);
    if (items.size() != refs.size()) {
      std::cerr << "error: " << items.size() << " item rows but " << refs.size()
                << " references\n";
      return kExitUsage;
    }
  }

  // first sample per input drives the corpus-level metrics
  std::vector<metrics::Tokens> hyp_tokens;
  std::vector<std::string> hyp_texts;
  for (const auto& [idx, group] : by_input) {
    std::string joined;
    for (const auto& s : group[0]->sentences) {
      if (!joined.empty()) joined.push_back(' ');
      joined += s;
    }
    hyp_texts.push_back(joined);
    hyp_tokens.push_back(corpus::tokenize(joined, tok));
  }

  metrics::MetricReport report;
  report.bleu4 = metrics::corpus_bleu4_single(hyp_tokens, refs);
  double len_sum = 0;
  for (const auto& h : hyp_tokens) len_sum += static_cast<double>(h.size());
  report.avg_length = len_sum / static_cast<double>(hyp_tokens.size());
  report.distinct4 = metrics::distinct_n(hyp_tokens, 4);
  report.repetition4 = metrics::repetition_n(hyp_tokens, 4);
  if (!items.empty()) {
    report.coverage = metrics::corpus_coverage(items, hyp_texts, synonyms);
  }

  if (k > 1) {
    double sb_text = 0, sb_plan = 0, distinct_sum = 0;
    bool any_plan = false;
    for (const auto& [idx, group] : by_input) {
      std::vector<metrics::Tokens> sample_tokens;
      std::vector<metrics::Tokens> plan_tok;
      std::set<std::string> plan_set;
      for (const auto* b : group) {
        std::string joined;
        for (const auto& s : b->sentences) {
          if (!joined.empty()) joined.push_back(' ');
          joined += s;
        }
        sample_tokens.push_back(corpus::tokenize(joined, tok));
        if (!b->plan.empty()) {
          plan_tok.push_back(generation_io::plan_tokens(b->plan));
          plan_set.insert(generation_io::canonical_plan(b->plan));
        }
      }
      sb_text += metrics::self_bleu(sample_tokens);
      if (plan_tok.size() == static_cast<std::size_t>(k)) {
        any_plan = true;
        sb_plan += metrics::self_bleu(plan_tok);
        int d = static_cast<int>(plan_set.size());
        distinct_sum += d;
        report.distinct_plan_histogram[d] += 1;
      }
    }
    report.self_bleu_text = sb_text / static_cast<double>(by_input.size());
    if (any_plan) {
      report.self_bleu_plan = sb_plan / static_cast<double>(by_input.size());
      report.mean_distinct_plans = distinct_sum / static_cast<double>(by_input.size());
    }
  }

  std::cout << report.to_table();
  std::cout << report.to_tsv();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// inspect

int cmd_inspect(const std::string& checkpoint_path) {
  checkpoint::Contents ckpt = checkpoint::load(checkpoint_path);
  std::cout << "format version " << checkpoint::kVersion << "\n";
  std::cout << "vocab sizes: text " << ckpt.meta.text_vocab << ", attr "
            << ckpt.meta.attr_vocab << ", value " << ckpt.meta.value_vocab << "\n";
  std::cout << "--- config echo ---\n" << ckpt.meta.config_echo << "--- parameters ---\n";
  long total = 0;
  for (const auto& t : ckpt.tensors) {
    total += t.values.size();
    std::cout << t.name << "\t" << t.values.rows() << "x" << t.values.cols() << "\tl2="
              << t.values.norm() << "\n";
  }
  std::cout << "total parameters: " << total << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"planwrite: plan-then-realize text generation from attribute-value data"};
  app.require_subcommand(1);

  PrepareArgs prepare_args;
  CLI::App* prepare = app.add_subcommand("prepare", "build vocabulary and encoded corpus");
  prepare->add_option("--corpus", prepare_args.corpus_path, "corpus jsonl")->required();
  prepare->add_option("--valid", prepare_args.valid_path, "validation corpus jsonl");
  prepare->add_option("--out", prepare_args.out_dir, "output directory")->required();
  prepare->add_option("--config", prepare_args.config_path, "config file");
  prepare->add_option("--synonyms", prepare_args.synonyms_path, "synonym file");

  TrainArgs train_args;
  std::uint64_t train_seed = 0;
  int train_epochs = 0;
  CLI::App* train = app.add_subcommand("train", "train a model on a prepared corpus");
  train->add_option("--config", train_args.config_path, "config file")->required();
  train->add_option("--data", train_args.data_dir, "prepared data directory");
  train->add_option("--out", train_args.out_dir, "output directory");
  train->add_option("--ablate", train_args.ablate, "no-global | no-local");
  CLI::Option* seed_opt = train->add_option("--seed", train_seed, "seed override");
  CLI::Option* epochs_opt = train->add_option("--epochs", train_epochs, "epoch override");

  GenerateArgs gen_args;
  CLI::App* generate = app.add_subcommand("generate", "generate texts from a checkpoint");
  generate->add_option("--checkpoint", gen_args.checkpoint_path, "checkpoint")->required();
  generate->add_option("--vocab", gen_args.vocab_path, "vocab.tsv")->required();
  generate->add_option("--input", gen_args.input_path, "input jsonl")->required();
  generate->add_option("--out", gen_args.out_path, "output file (stdout if omitted)");
  generate->add_option("--samples", gen_args.samples, "samples per input");
  generate->add_option("--seed", gen_args.seed, "base seed");
  generate->add_option("--mode", gen_args.mode, "greedy | sample")
      ->check(CLI::IsMember({"greedy", "sample"}));
  generate->add_flag("--plan-only", gen_args.plan_only, "emit only plan lines");

  GenerateArgs plan_args;
  plan_args.plan_only = true;
  CLI::App* plan = app.add_subcommand("plan", "generate plans only");
  plan->add_option("--checkpoint", plan_args.checkpoint_path, "checkpoint")->required();
  plan->add_option("--vocab", plan_args.vocab_path, "vocab.tsv")->required();
  plan->add_option("--input", plan_args.input_path, "input jsonl")->required();
  plan->add_option("--out", plan_args.out_path, "output file (stdout if omitted)");
  plan->add_option("--samples", plan_args.samples, "samples per input");
  plan->add_option("--seed", plan_args.seed, "base seed");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "score generated outputs");
  eval->add_option("--outputs", eval_args.outputs_path, "generation output file")->required();
  eval->add_option("--references", eval_args.references_path, "reference texts, one per line")
      ->required();
  eval->add_option("--items", eval_args.items_path, "input items jsonl (for coverage)");
  eval->add_option("--synonyms", eval_args.synonyms_path, "synonym file");
  eval->add_option("--per-input-samples", eval_args.per_input_samples,
                   "samples per input in the outputs file");

  std::string inspect_path;
  CLI::App* inspect = app.add_subcommand("inspect", "describe a checkpoint");
  inspect->add_option("--checkpoint", inspect_path, "checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*prepare) return cmd_prepare(prepare_args);
    if (*train) {
      if (seed_opt->count() > 0) train_args.seed = train_seed;
      if (epochs_opt->count() > 0) train_args.epochs = train_epochs;
      return cmd_train(train_args);
    }
    if (*generate) {
      if (const char* env = std::getenv("PLANWRITE_SEED")) {
        if (generate->get_option("--seed")->count() == 0) {
          gen_args.seed = std::stoull(env);
        }
      }
      return cmd_generate(gen_args);
    }
    if (*plan) {
      if (const char* env = std::getenv("PLANWRITE_SEED")) {
        if (plan->get_option("--seed")->count() == 0) {
          plan_args.seed = std::stoull(env);
        }
      }
      return cmd_generate(plan_args);
    }
    if (*eval) return cmd_eval(eval_args);
    if (*inspect) return cmd_inspect(inspect_path);
  } catch (const objective::TrainingError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    std::cerr << "  step " << e.step << " reconstruction " << e.breakdown.reconstruction_nll
              << " plan " << e.breakdown.plan_membership_nll << " kl_global "
              << e.breakdown.kl_global << " kl_local " << e.breakdown.kl_local_sum
              << " stop " << e.breakdown.stop_nll << " bow " << e.breakdown.bow_nll << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
