#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace crispr {

enum class ContextType { ambig, disambig };

std::string_view to_string(ContextType c);
ContextType parse_context_type(std::string_view s);

// One multiple-choice example. Choices are the instance's own label texts;
// there is no global label set.
struct Instance {
  std::string id;
  std::string context;
  std::string question;
  std::vector<std::string> choices;
  int gold_index = 0;
  ContextType context_type = ContextType::ambig;

  void validate() const;
  nlohmann::json to_json() const;
  static Instance from_json(const nlohmann::json& j);
  friend bool operator==(const Instance&, const Instance&) = default;
};

struct Dataset {
  std::string name;
  std::vector<Instance> instances;

  void validate() const;
  std::size_t size() const { return instances.size(); }
  std::vector<std::string> ids() const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// JSON lines, one Instance per line. The dataset name defaults to the file stem.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset parse_dataset(std::string_view jsonl, std::string name);
std::string dump_dataset(const Dataset& dataset);

// Prompt templates with {context}, {question} and {choices} placeholders.
struct InstructionSet {
  std::vector<std::string> templates;

  void validate() const;
  std::size_t size() const { return templates.size(); }
};

InstructionSet load_instructions(const std::filesystem::path& path);
void save_instructions(const InstructionSet& set, const std::filesystem::path& path);

// The ten built-in instruction paraphrases.
const InstructionSet& default_instructions();

std::string render_choices(const std::vector<std::string>& choices);
std::string render_prompt(std::string_view instruction, std::string_view context,
                          std::string_view question, const std::vector<std::string>& choices);
std::string render_prompt(std::string_view instruction, const Instance& instance);

}  // namespace crispr
