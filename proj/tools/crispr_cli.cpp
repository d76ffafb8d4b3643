// Command-line front end: detect, prune, eval, calibrate, pipeline,
// oracle-check and fixture.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "crispr/baselines.hpp"
#include "crispr/bias_detector.hpp"
#include "crispr/checkpoint.hpp"
#include "crispr/dataset.hpp"
#include "crispr/errors.hpp"
#include "crispr/eval.hpp"
#include "crispr/oracles.hpp"
#include "crispr/pruner.hpp"

namespace fs = std::filesystem;
using namespace crispr;

namespace {

InstructionSet instructions_from(const std::string& path) {
  return path.empty() ? default_instructions() : load_instructions(path);
}

fs::path trial_path(const fs::path& out, int trial, int trials) {
  if (trials == 1) return out;
  fs::path p = out;
  p.replace_filename(out.stem().string() + "_trial" + std::to_string(trial) + out.extension().string());
  return p;
}

Execution execution(bool serial) { return serial ? Execution::serial : Execution::parallel; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias neuron detection and pruning for encoder-decoder transformers"};
  app.require_subcommand(1);

  std::string model_path, dataset_path, instructions_path, out_path, mask_path, report_path,
      table_path, scores_path, config_path, method_name = "original", mode_name = "cc";
  int k = kDefaultSampleSize, trials = kDefaultTrials, n = kDefaultPruneCount;
  std::uint64_t seed = 0;
  bool serial = false, do_compact = false;

  auto* detect_cmd = app.add_subcommand("detect", "Rank bias neurons and write top-n prune masks");
  detect_cmd->add_option("--model", model_path, "Checkpoint (.crsp)")->required();
  detect_cmd->add_option("--dataset", dataset_path, "Dataset (.jsonl)")->required();
  detect_cmd->add_option("--instructions", instructions_path, "Instruction templates (.json)");
  detect_cmd->add_option("--k", k, "Instances sampled per trial")->capture_default_str();
  detect_cmd->add_option("--trials", trials, "Detection trials")->capture_default_str();
  detect_cmd->add_option("--seed", seed, "Seed of trial 0; trial t uses seed + t")->capture_default_str();
  detect_cmd->add_option("--n", n, "Neurons per mask")->capture_default_str();
  detect_cmd->add_option("--out", out_path, "Mask file; _trialT is appended when trials > 1")->required();
  detect_cmd->add_option("--scores", scores_path, "Also dump the dataset-level score map");
  detect_cmd->add_flag("--serial", serial, "Disable instance parallelism");

  auto* prune_cmd = app.add_subcommand("prune", "Apply a prune mask to a checkpoint");
  prune_cmd->add_option("--model", model_path)->required();
  prune_cmd->add_option("--mask", mask_path)->required();
  prune_cmd->add_option("--out", out_path)->required();
  prune_cmd->add_flag("--compact", do_compact, "Physically remove masked ffn.in channels");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--dataset", dataset_path)->required();
  eval_cmd->add_option("--instructions", instructions_path);
  eval_cmd->add_option("--method", method_name)
      ->check(CLI::IsMember({"original", "cc", "dc", "crispr"}))
      ->capture_default_str();
  eval_cmd->add_option("--mask", mask_path, "Mask applied before evaluation (crispr)");
  eval_cmd->add_option("--seed", seed, "dc bag sampler seed")->capture_default_str();
  eval_cmd->add_option("--report", report_path)->required();
  eval_cmd->add_option("--table", table_path, "Aligned text tables");
  eval_cmd->add_flag("--serial", serial);

  auto* cal_cmd = app.add_subcommand("calibrate", "Dump content-free calibration vectors");
  cal_cmd->add_option("--model", model_path)->required();
  cal_cmd->add_option("--dataset", dataset_path)->required();
  cal_cmd->add_option("--instructions", instructions_path);
  cal_cmd->add_option("--mode", mode_name)->check(CLI::IsMember({"cc", "dc"}))->capture_default_str();
  cal_cmd->add_option("--seed", seed)->capture_default_str();
  cal_cmd->add_option("--out", out_path)->required();

  auto* pipeline_cmd = app.add_subcommand("pipeline", "Detect, prune and evaluate from a config file");
  pipeline_cmd->add_option("--config", config_path)->required()->check(CLI::ExistingFile);

  auto* oracle_cmd = app.add_subcommand("oracle-check", "Run the oracle suite");
  oracle_cmd->add_option("--seed", seed)->capture_default_str();
  oracle_cmd->add_option("--out", out_path, "Summary JSON (stdout when absent)");
  oracle_cmd->add_flag("--serial", serial);

  auto* fixture_cmd = app.add_subcommand("fixture", "Write the planted-bias fixture files");
  fixture_cmd->add_option("--out-dir", out_path)->required();
  fixture_cmd->add_option("--seed", seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*detect_cmd) {
      const Model model = load_checkpoint(model_path);
      const Dataset dataset = load_dataset(dataset_path);
      const InstructionSet instructions = instructions_from(instructions_path);
      if (trials < 1) throw ConfigError("trials must be >= 1");
      for (int t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed = seed + static_cast<std::uint64_t>(t);
        const Dataset sample = sample_detection_set(dataset, k, trial_seed);
        BiasScoreMap map = detect(model, sample, instructions, execution(serial));
        map.provenance.seed = trial_seed;
        map.provenance.trials = trials;
        if (!scores_path.empty())
          write_file(trial_path(scores_path, t, trials), map.to_json().dump(2) + "\n");
        const PruneMask mask = select_top_n(rank_neurons(map), n, model.lineage(), map.provenance);
        const fs::path out = trial_path(out_path, t, trials);
        save_mask(mask, out);
        std::cout << "trial " << t << ": top neuron " << mask.neurons.front().id.to_string()
                  << " (" << mask.neurons.front().score << "), mask -> " << out.string() << "\n";
      }
    } else if (*prune_cmd) {
      const Model model = load_checkpoint(model_path);
      const PruneMask mask = load_mask(mask_path);
      const Model out = do_compact ? compact(model, mask) : apply_mask(model, mask);
      save_checkpoint(out, out_path);
      std::cout << "pruned " << mask.n() << " neurons -> " << out_path << "\n";
    } else if (*eval_cmd) {
      Model model = load_checkpoint(model_path);
      const Dataset dataset = load_dataset(dataset_path);
      const InstructionSet instructions = instructions_from(instructions_path);
      const Method method = parse_method(method_name);
      if (!mask_path.empty()) model = apply_mask(model, load_mask(mask_path));
      else if (method == Method::crispr) throw ConfigError("--method crispr needs --mask");
      EvalReport report = evaluate(model, dataset, instructions, method, {execution(serial), seed});
      save_report(report, report_path);
      const std::string tables =
          render_accuracy_table({report}) + "\n" + render_gold_score_table({report});
      if (!table_path.empty()) write_file(table_path, tables);
      std::cout << tables;
    } else if (*cal_cmd) {
      const Model model = load_checkpoint(model_path);
      const Dataset dataset = load_dataset(dataset_path);
      const InstructionSet instructions = instructions_from(instructions_path);
      const CalibrationMode mode = mode_name == "dc" ? CalibrationMode::dc : CalibrationMode::cc;
      const DomainCorpus corpus = DomainCorpus::from_dataset(dataset);
      nlohmann::json out = nlohmann::json::array();
      for (std::size_t t = 0; t < instructions.size(); ++t)
        for (const auto& in : dataset.instances) {
          const CalibrationVector cal = content_free_distribution(
              model, instructions.templates[t], in.question, in.choices, mode, &corpus, seed);
          nlohmann::json j = cal.to_json();
          j["instance_id"] = in.id;
          j["instruction_id"] = t;
          out.push_back(std::move(j));
        }
      write_file(out_path, out.dump(2) + "\n");
    } else if (*pipeline_cmd) {
      const PipelineConfig config = PipelineConfig::load(config_path);
      const PipelineResult result = run_pipeline(config);
      std::cout << render_accuracy_table(result.reports) << "\n"
                << render_gold_score_table(result.reports) << "artifacts -> "
                << config.out_dir.string() << "\n";
    } else if (*oracle_cmd) {
      const nlohmann::json summary = oracle_check(seed, execution(serial));
      if (out_path.empty()) std::cout << summary.dump(2) << "\n";
      else write_file(out_path, summary.dump(2) + "\n");
      return summary["passed"].get<bool>() ? 0 : 1;
    } else if (*fixture_cmd) {
      const PlantedFixture fx = build_planted_fixture(seed);
      const fs::path dir = out_path;
      save_checkpoint(fx.model, dir / "planted.crsp");
      save_dataset(fx.dataset, dir / "planted.jsonl");
      save_instructions(default_instructions(), dir / "instructions.json");
      PipelineConfig config;
      config.checkpoint = "planted.crsp";
      config.dataset = "planted.jsonl";
      config.instructions = "instructions.json";
      config.out_dir = "out";
      config.seed = seed;
      write_file(dir / "pipeline.json", config.to_json().dump(2) + "\n");
      write_file(dir / "fixture.json", nlohmann::json{{"seed", seed},
                                                      {"planted", to_json(fx.planted)},
                                                      {"decoy", to_json(fx.decoy)},
                                                      {"notes", fx.notes}}
                                               .dump(2) + "\n");
      std::cout << "planted neuron " << fx.planted.to_string() << ", fixture -> " << dir.string()
                << "\n";
    }
  } catch (const StageError& e) {
    std::cerr << "error in stage " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
