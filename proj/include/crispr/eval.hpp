#pragma once

// Evaluation harness: accuracy and gold-score reports for the original model,
// the two calibration baselines and the pruned model, plus the end-to-end
// detect -> prune -> evaluate pipeline.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "crispr/baselines.hpp"
#include "crispr/bias_detector.hpp"
#include "crispr/dataset.hpp"
#include "crispr/model.hpp"
#include "crispr/pruner.hpp"

namespace crispr {

enum class Method { original, cc, dc, crispr };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);
// Row label used in rendered tables: Original, CC, DC, CRISPR.
std::string_view display_name(Method m);

inline constexpr int kDefaultSampleSize = 10;
inline constexpr int kDefaultTrials = 3;

struct EvalReport {
  Method method = Method::original;
  std::string dataset;
  std::vector<double> per_instruction_accuracy;  // percent
  double mean_accuracy = 0.0;                    // percent
  // Mean softmax probability of the gold choice x 100, by context type.
  double ambig_gold_score = 0.0;
  double disambig_gold_score = 0.0;
  // Accuracy restricted to one context type, pooled over instructions.
  double ambig_accuracy = 0.0;
  double disambig_accuracy = 0.0;
  std::size_t n_ambig = 0;
  std::size_t n_disambig = 0;
  nlohmann::json config = nlohmann::json::object();

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

struct EvalOptions {
  Execution exec = Execution::parallel;
  // dc only: bag sampler seed, bag count and token source (defaults to the
  // evaluated dataset).
  std::uint64_t seed = 0;
  int bags = kDomainBags;
  const Dataset* corpus = nullptr;
};

// Per-instance outcome under one instruction.
struct InstanceOutcome {
  int predicted = 0;
  double gold_probability = 0.0;
};

// Probabilities over the instance's own choices under the method's scoring rule.
std::vector<double> choice_probabilities(const Model& model, const Instance& instance,
                                         std::string_view instruction, Method method,
                                         const CalibrationVector* cal);

// method = crispr simply evaluates the (already masked) model like original.
EvalReport evaluate(const Model& model, const Dataset& dataset, const InstructionSet& instructions,
                    Method method, const EvalOptions& options = {});

// Mean of reports element by element; used for trial means.
EvalReport average_reports(const std::vector<EvalReport>& reports);

// Uniform sample of k instances without replacement, deterministic given seed.
Dataset sample_detection_set(const Dataset& dataset, int k, std::uint64_t seed);

// Subset of instances with the given context type.
Dataset filter_context(const Dataset& dataset, ContextType type);

struct PipelineConfig {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> instructions;  // built-in set when absent
  std::optional<std::filesystem::path> retention_dataset;
  std::filesystem::path out_dir = "out";
  int n = kDefaultPruneCount;  // 0 means an explicitly empty mask
  int k = kDefaultSampleSize;
  int trials = kDefaultTrials;
  std::uint64_t seed = 0;
  std::vector<Method> methods = {Method::original, Method::cc, Method::dc, Method::crispr};
  Execution exec = Execution::parallel;

  void validate() const;
  nlohmann::json to_json() const;
  // Relative paths resolve against base_dir.
  static PipelineConfig from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {});
  static PipelineConfig load(const std::filesystem::path& path);
};

struct PipelineResult {
  std::vector<PruneMask> masks;              // one per trial
  std::vector<EvalReport> reports;           // one per configured method
  std::vector<EvalReport> crispr_trials;     // per-trial crispr reports
  std::vector<EvalReport> retention;         // original vs crispr on the retention set
};

// In-memory pipeline: no files are read or written.
PipelineResult run_pipeline(const Model& model, const Dataset& dataset,
                            const InstructionSet& instructions, const PipelineConfig& config,
                            const Dataset* retention = nullptr);

// Loads inputs from config paths, runs, and writes every artifact to out_dir.
// Stage failures are rethrown as StageError.
PipelineResult run_pipeline(const PipelineConfig& config);

// Aligned text tables: mean accuracy per method, and gold score split by
// context type. Published reference values sit in extra columns.
std::string render_accuracy_table(const std::vector<EvalReport>& reports);
std::string render_gold_score_table(const std::vector<EvalReport>& reports);

void save_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

}  // namespace crispr
