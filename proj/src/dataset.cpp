#include "crispr/dataset.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "crispr/checkpoint.hpp"
#include "crispr/errors.hpp"

namespace crispr {

namespace {

constexpr std::string_view kPlaceholders[] = {"{context}", "{question}", "{choices}"};

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size()))
    ++n;
  return n;
}

}  // namespace

std::string_view to_string(ContextType c) { return c == ContextType::ambig ? "ambig" : "disambig"; }

ContextType parse_context_type(std::string_view s) {
  if (s == "ambig") return ContextType::ambig;
  if (s == "disambig") return ContextType::disambig;
  throw SchemaError("unknown context_type '" + std::string(s) + "'");
}

void Instance::validate() const {
  if (id.empty()) throw SchemaError("instance id is empty");
  if (choices.size() < 2) throw SchemaError("instance " + id + " has fewer than two choices");
  if (gold_index < 0 || gold_index >= static_cast<int>(choices.size()))
    throw SchemaError("instance " + id + " has gold_index out of range");
  std::set<std::string> seen(choices.begin(), choices.end());
  if (seen.size() != choices.size())
    throw SchemaError("instance " + id + " has duplicate choices");
}

nlohmann::json Instance::to_json() const {
  return {{"id", id},
          {"context", context},
          {"question", question},
          {"choices", choices},
          {"gold_index", gold_index},
          {"context_type", std::string(to_string(context_type))}};
}

Instance Instance::from_json(const nlohmann::json& j) {
  Instance in;
  try {
    in.id = j.at("id").get<std::string>();
    in.context = j.at("context").get<std::string>();
    in.question = j.at("question").get<std::string>();
    in.choices = j.at("choices").get<std::vector<std::string>>();
    in.gold_index = j.at("gold_index").get<int>();
    in.context_type = parse_context_type(j.at("context_type").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed instance: ") + e.what());
  }
  in.validate();
  return in;
}

void Dataset::validate() const {
  if (instances.empty()) throw SchemaError("dataset '" + name + "' is empty");
  std::set<std::string> ids;
  for (const auto& in : instances) {
    in.validate();
    if (!ids.insert(in.id).second) throw SchemaError("duplicate instance id '" + in.id + "'");
  }
}

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  out.reserve(instances.size());
  for (const auto& in : instances) out.push_back(in.id);
  return out;
}

Dataset parse_dataset(std::string_view jsonl, std::string name) {
  Dataset ds;
  ds.name = std::move(name);
  std::istringstream lines{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
    ds.instances.push_back(Instance::from_json(j));
  }
  ds.validate();
  return ds;
}

std::string dump_dataset(const Dataset& dataset) {
  std::string out;
  for (const auto& in : dataset.instances) {
    out += in.to_json().dump();
    out += '\n';
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_file(path), path.stem().string());
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_file(path, dump_dataset(dataset));
}

void InstructionSet::validate() const {
  if (templates.empty()) throw SchemaError("instruction set is empty");
  for (std::size_t i = 0; i < templates.size(); ++i)
    for (auto ph : kPlaceholders)
      if (count_occurrences(templates[i], ph) != 1)
        throw SchemaError("instruction " + std::to_string(i) + " must contain " +
                          std::string(ph) + " exactly once");
}

InstructionSet load_instructions(const std::filesystem::path& path) {
  InstructionSet set;
  try {
    set.templates = nlohmann::json::parse(read_file(path)).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("instruction file " + path.string() + ": " + e.what());
  }
  set.validate();
  return set;
}

void save_instructions(const InstructionSet& set, const std::filesystem::path& path) {
  write_file(path, nlohmann::json(set.templates).dump(2) + "\n");
}

const InstructionSet& default_instructions() {
  // Lowercase only: the planted-bias fixture reserves uppercase bytes as cues.
  static const InstructionSet set{{
      "context: {context} question: {question} options: {choices} answer:",
      "read the passage and pick the best option. {context} {question} {choices}",
      "{context} based on this, {question} choose from {choices}",
      "given the context below, answer the question. context: {context} question: {question} "
      "choices: {choices}",
      "passage: {context} q: {question} possible answers: {choices} the answer is",
      "answer using only the information given. {context} {question} candidates: {choices}",
      "here is a short story. {context} now, {question} select one of {choices}",
      "choose the correct answer. story: {context} query: {question} options are {choices}",
      "{context} with respect to the text, {question} the options: {choices}",
      "consider the following situation. {context} {question} pick one: {choices}",
  }};
  return set;
}

std::string render_choices(const std::vector<std::string>& choices) {
  std::string out;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i) out += ' ';
    out += '(';
    out += static_cast<char>('a' + static_cast<int>(i % 26));
    out += ") ";
    out += choices[i];
  }
  return out;
}

std::string render_prompt(std::string_view instruction, std::string_view context,
                          std::string_view question, const std::vector<std::string>& choices) {
  std::string out(instruction);
  // Substituted back to front by position, so values are never re-scanned.
  const std::string rendered_choices = render_choices(choices);
  const auto c = out.find("{context}");
  const auto q = out.find("{question}");
  const auto k = out.find("{choices}");
  if (c == std::string::npos || q == std::string::npos || k == std::string::npos)
    throw SchemaError("instruction lacks a placeholder");
  struct Slot {
    std::size_t pos;
    std::string_view needle;
    std::string_view value;
  };
  Slot slots[] = {{c, "{context}", context}, {q, "{question}", question},
                  {k, "{choices}", rendered_choices}};
  std::sort(std::begin(slots), std::end(slots),
            [](const Slot& a, const Slot& b) { return a.pos > b.pos; });
  for (const Slot& s : slots) out.replace(s.pos, s.needle.size(), s.value);
  return out;
}

std::string render_prompt(std::string_view instruction, const Instance& instance) {
  return render_prompt(instruction, instance.context, instance.question, instance.choices);
}

}  // namespace crispr
