#include "planwrite/generation_io.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace planwrite::generation_io {

std::string input_echo(const std::vector<corpus::InputItem>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out.push_back(',');
    out += items[i].attribute + ":" + items[i].value;
  }
  return out;
}

std::string plan_to_string(const planner::Plan& plan,
                           const std::vector<corpus::InputItem>& items) {
  const int none_index = static_cast<int>(items.size());
  std::string out;
  for (std::size_t t = 0; t < plan.groups.size(); ++t) {
    if (t > 0) out += " ; ";
    const auto& group = plan.groups[t].item_indices;
    for (std::size_t k = 0; k < group.size(); ++k) {
      if (k > 0) out.push_back(',');
      if (group[k] == none_index) {
        out += kNoneSymbol;
      } else {
        out += items[group[k]].attribute + ":" + items[group[k]].value;
      }
    }
  }
  return out;
}

void write_block(std::ostream& os, const SampleBlock& block) {
  os << "=== sample " << block.input_index << ':' << block.sample_index << '\n';
  os << "input: " << block.input << '\n';
  os << "plan: " << block.plan << '\n';
  os << "text:\n";
  for (const auto& s : block.sentences) os << s << '\n';
  os << "seed: " << block.seed << '\n';
}

void write_plan_line(std::ostream& os, const SampleBlock& block) {
  os << block.plan << '\n';
}

std::vector<SampleBlock> read_blocks(std::istream& is) {
  std::vector<SampleBlock> blocks;
  std::string line;
  bool structured = false;
  bool first_content_line = true;
  SampleBlock current;
  bool in_text = false;
  bool have_block = false;

  auto flush = [&]() {
    if (have_block) blocks.push_back(current);
    current = SampleBlock{};
    have_block = false;
    in_text = false;
  };

  while (std::getline(is, line)) {
    if (first_content_line && !line.empty()) {
      structured = line.rfind("=== sample ", 0) == 0;
      first_content_line = false;
    }
    if (!structured) {
      if (!line.empty()) {
        SampleBlock b;
        b.input_index = static_cast<int>(blocks.size());
        b.sentences.push_back(line);
        blocks.push_back(std::move(b));
      }
      continue;
    }
    if (line.rfind("=== sample ", 0) == 0) {
      flush();
      std::string head = line.substr(11);
      std::size_t colon = head.find(':');
      if (colon == std::string::npos) {
        throw std::runtime_error("generation output: bad block header: " + line);
      }
      current.input_index = std::stoi(head.substr(0, colon));
      current.sample_index = std::stoi(head.substr(colon + 1));
      have_block = true;
    } else if (line.rfind("input: ", 0) == 0) {
      current.input = line.substr(7);
      in_text = false;
    } else if (line.rfind("plan: ", 0) == 0) {
      current.plan = line.substr(6);
      in_text = false;
    } else if (line == "text:") {
      in_text = true;
    } else if (line.rfind("seed: ", 0) == 0) {
      current.seed = std::stoull(line.substr(6));
      in_text = false;
    } else if (in_text) {
      current.sentences.push_back(line);
    }
  }
  flush();
  return blocks;
}

namespace {

std::vector<std::vector<std::string>> split_plan(const std::string& plan_line) {
  std::vector<std::vector<std::string>> groups;
  std::string rest = plan_line;
  std::size_t pos = 0;
  while (true) {
    std::size_t sep = rest.find(" ; ", pos);
    std::string group_str =
        sep == std::string::npos ? rest.substr(pos) : rest.substr(pos, sep - pos);
    std::vector<std::string> members;
    std::size_t start = 0;
    while (start <= group_str.size() && !group_str.empty()) {
      std::size_t comma = group_str.find(',', start);
      std::string member = comma == std::string::npos
                               ? group_str.substr(start)
                               : group_str.substr(start, comma - start);
      if (!member.empty()) members.push_back(member);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    std::sort(members.begin(), members.end());
    groups.push_back(std::move(members));
    if (sep == std::string::npos) break;
    pos = sep + 3;
  }
  return groups;
}

}  // namespace

std::string canonical_plan(const std::string& plan_line) {
  std::string out;
  for (const auto& group : split_plan(plan_line)) {
    if (!out.empty()) out += " ; ";
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (i > 0) out.push_back(',');
      out += group[i];
    }
  }
  return out;
}

std::vector<std::string> plan_tokens(const std::string& plan_line) {
  std::vector<std::string> tokens;
  auto groups = split_plan(plan_line);
  for (std::size_t t = 0; t < groups.size(); ++t) {
    if (t > 0) tokens.push_back(";");
    for (const auto& m : groups[t]) tokens.push_back(m);
  }
  return tokens;
}

SampleBlock make_block(int input_index, int sample_index, std::uint64_t seed,
                       const std::vector<corpus::InputItem>& items,
                       const realizer::GenerationOutput& output,
                       const corpus::Vocabulary& vocab) {
  SampleBlock block;
  block.input_index = input_index;
  block.sample_index = sample_index;
  block.seed = seed;
  block.input = input_echo(items);
  block.plan = plan_to_string(output.plan, items);
  for (const auto& sentence : output.sentences) {
    block.sentences.push_back(corpus::detokenize(vocab.decode_text(sentence)));
  }
  return block;
}

}  // namespace planwrite::generation_io
