#include "planwrite/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace planwrite::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::runtime_error("config: bad boolean for " + key + ": " + v);
}

long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad integer for " + key + ": " + v);
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad number for " + key + ": " + v);
  }
}

std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream ss(v);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "word_emb_dim") cfg.word_emb_dim = static_cast<int>(parse_long(key, value));
    else if (key == "attr_emb_dim") cfg.attr_emb_dim = static_cast<int>(parse_long(key, value));
    else if (key == "value_emb_dim") cfg.value_emb_dim = static_cast<int>(parse_long(key, value));
    else if (key == "latent_dim") cfg.latent_dim = static_cast<int>(parse_long(key, value));
    else if (key == "encoder_hidden") cfg.encoder_hidden = static_cast<int>(parse_long(key, value));
    else if (key == "plan_hidden") cfg.plan_hidden = static_cast<int>(parse_long(key, value));
    else if (key == "plan_encoder_hidden") cfg.plan_encoder_hidden = static_cast<int>(parse_long(key, value));
    else if (key == "sentence_hidden") cfg.sentence_hidden = static_cast<int>(parse_long(key, value));
    else if (key == "word_hidden") cfg.word_hidden = static_cast<int>(parse_long(key, value));
    else if (key == "target_encoder_hidden") cfg.target_encoder_hidden = static_cast<int>(parse_long(key, value));
    else if (key == "mlp_hidden") cfg.mlp_hidden = static_cast<int>(parse_long(key, value));
    else if (key == "attn_hidden") cfg.attn_hidden = static_cast<int>(parse_long(key, value));
    else if (key == "use_title") cfg.use_title = parse_bool(key, value);
    else if (key == "max_plan_steps") cfg.max_plan_steps = static_cast<int>(parse_long(key, value));
    else if (key == "max_sentence_len") cfg.max_sentence_len = static_cast<int>(parse_long(key, value));
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_long(key, value));
    else if (key == "learning_rate") cfg.learning_rate = parse_double(key, value);
    else if (key == "clip_norm") cfg.clip_norm = parse_double(key, value);
    else if (key == "anneal_steps") cfg.anneal_steps = parse_long(key, value);
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_long(key, value));
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_long(key, value));
    else if (key == "min_count") cfg.min_count = parse_long(key, value);
    else if (key == "precision") cfg.precision = value;
    else if (key == "ablate_global") cfg.ablate_global = parse_bool(key, value);
    else if (key == "ablate_local") cfg.ablate_local = parse_bool(key, value);
    else if (key == "data_dir") cfg.data_dir = value;
    else if (key == "valid_data_dir") cfg.valid_data_dir = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "sentence_terminators") cfg.sentence_terminators = parse_list(value);
    else throw std::runtime_error("config line " + std::to_string(line_no) +
                                  ": unknown key '" + key + "'");
  }
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_env_overrides(RunConfig& cfg) {
  if (const char* env = std::getenv("PLANWRITE_SEED")) {
    cfg.seed = static_cast<std::uint64_t>(parse_long("PLANWRITE_SEED", env));
  }
}

void validate(const RunConfig& cfg) {
  auto positive = [](const char* name, long v) {
    if (v <= 0) {
      throw std::runtime_error(std::string("config: ") + name + " must be positive");
    }
  };
  positive("word_emb_dim", cfg.word_emb_dim);
  positive("attr_emb_dim", cfg.attr_emb_dim);
  positive("value_emb_dim", cfg.value_emb_dim);
  positive("latent_dim", cfg.latent_dim);
  positive("encoder_hidden", cfg.encoder_hidden);
  positive("plan_hidden", cfg.plan_hidden);
  positive("plan_encoder_hidden", cfg.plan_encoder_hidden);
  positive("sentence_hidden", cfg.sentence_hidden);
  positive("word_hidden", cfg.word_hidden);
  positive("target_encoder_hidden", cfg.target_encoder_hidden);
  positive("mlp_hidden", cfg.mlp_hidden);
  positive("attn_hidden", cfg.attn_hidden);
  positive("max_plan_steps", cfg.max_plan_steps);
  positive("max_sentence_len", cfg.max_sentence_len);
  positive("batch_size", cfg.batch_size);
  positive("epochs", cfg.epochs);
  positive("min_count", cfg.min_count);
  if (cfg.learning_rate <= 0) throw std::runtime_error("config: learning_rate must be positive");
  if (cfg.clip_norm <= 0) throw std::runtime_error("config: clip_norm must be positive");
  if (cfg.anneal_steps < 0) throw std::runtime_error("config: anneal_steps must be >= 0");
  if (cfg.precision != "f64" && cfg.precision != "f32") {
    throw std::runtime_error("config: precision must be f64 or f32");
  }
  if (cfg.sentence_terminators.empty()) {
    throw std::runtime_error("config: sentence_terminators must not be empty");
  }
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "word_emb_dim = " << cfg.word_emb_dim << '\n';
  os << "attr_emb_dim = " << cfg.attr_emb_dim << '\n';
  os << "value_emb_dim = " << cfg.value_emb_dim << '\n';
  os << "latent_dim = " << cfg.latent_dim << '\n';
  os << "encoder_hidden = " << cfg.encoder_hidden << '\n';
  os << "plan_hidden = " << cfg.plan_hidden << '\n';
  os << "plan_encoder_hidden = " << cfg.plan_encoder_hidden << '\n';
  os << "sentence_hidden = " << cfg.sentence_hidden << '\n';
  os << "word_hidden = " << cfg.word_hidden << '\n';
  os << "target_encoder_hidden = " << cfg.target_encoder_hidden << '\n';
  os << "mlp_hidden = " << cfg.mlp_hidden << '\n';
  os << "attn_hidden = " << cfg.attn_hidden << '\n';
  os << "use_title = " << (cfg.use_title ? 1 : 0) << '\n';
  os << "max_plan_steps = " << cfg.max_plan_steps << '\n';
  os << "max_sentence_len = " << cfg.max_sentence_len << '\n';
  os << "batch_size = " << cfg.batch_size << '\n';
  os << "learning_rate = " << cfg.learning_rate << '\n';
  os << "clip_norm = " << cfg.clip_norm << '\n';
  os << "anneal_steps = " << cfg.anneal_steps << '\n';
  os << "epochs = " << cfg.epochs << '\n';
  os << "seed = " << cfg.seed << '\n';
  os << "min_count = " << cfg.min_count << '\n';
  os << "precision = " << cfg.precision << '\n';
  os << "ablate_global = " << (cfg.ablate_global ? 1 : 0) << '\n';
  os << "ablate_local = " << (cfg.ablate_local ? 1 : 0) << '\n';
  if (!cfg.data_dir.empty()) os << "data_dir = " << cfg.data_dir << '\n';
  if (!cfg.valid_data_dir.empty()) os << "valid_data_dir = " << cfg.valid_data_dir << '\n';
  if (!cfg.out_dir.empty()) os << "out_dir = " << cfg.out_dir << '\n';
  os << "sentence_terminators =";
  for (const auto& t : cfg.sentence_terminators) os << ' ' << t;
  os << '\n';
  return os.str();
}

}  // namespace planwrite::config
