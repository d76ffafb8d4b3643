#include "crispr/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include "crispr/checkpoint.hpp"
#include "crispr/errors.hpp"
#include "crispr/runtime.hpp"

namespace crispr {

namespace {

struct Reference {
  const char* method;
  double accuracy[3];
  double gold[6];
};

// Reference numbers for a Flan-T5-base model on BBQ-SES, BBQ-Age and BBQ-Disability.
constexpr const char* kReferenceColumns[3] = {"BBQ-SES", "BBQ-Age", "BBQ-Disability"};
constexpr Reference kReferences[] = {
    {"original", {65.78, 43.81, 44.02}, {44.36, 71.77, 24.19, 57.47, 21.32, 59.41}},
    {"cc", {45.87, 40.80, 44.38}, {}},
    {"dc", {49.12, 40.71, 44.15}, {}},
    {"crispr", {72.25, 58.49, 57.94}, {63.14, 67.01, 58.57, 43.37, 44.93, 55.30}},
};

const Reference* reference_for(Method m) {
  for (const auto& r : kReferences)
    if (to_string(m) == r.method) return &r;
  return nullptr;
}

std::string format_cell(double v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%*.2f", width, v);
  return buf;
}

std::string pad(std::string_view s, std::size_t width) {
  std::string out(s);
  if (out.size() < width) out.append(width - out.size(), ' ');
  return out;
}

std::string rpad(std::string_view s, std::size_t width) {
  std::string out;
  if (s.size() < width) out.assign(width - s.size(), ' ');
  out += s;
  return out;
}

template <class F>
void for_each_index(std::size_t n, Execution exec, F&& f) {
  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    try {
      f(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <class F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

using CalibrationKey = std::tuple<std::size_t, std::string, std::vector<std::string>>;

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::original: return "original";
    case Method::cc: return "cc";
    case Method::dc: return "dc";
    case Method::crispr: return "crispr";
  }
  return "original";
}

Method parse_method(std::string_view s) {
  for (Method m : {Method::original, Method::cc, Method::dc, Method::crispr})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + std::string(s) + "'");
}

std::string_view display_name(Method m) {
  switch (m) {
    case Method::original: return "Original";
    case Method::cc: return "CC";
    case Method::dc: return "DC";
    case Method::crispr: return "CRISPR";
  }
  return "Original";
}

nlohmann::json EvalReport::to_json() const {
  return {{"method", std::string(to_string(method))},
          {"dataset", dataset},
          {"per_instruction_accuracy", per_instruction_accuracy},
          {"mean_accuracy", mean_accuracy},
          {"gold_score", {{"ambig", ambig_gold_score}, {"disambig", disambig_gold_score}}},
          {"context_accuracy", {{"ambig", ambig_accuracy}, {"disambig", disambig_accuracy}}},
          {"counts", {{"ambig", n_ambig}, {"disambig", n_disambig}}},
          {"config", config}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.method = parse_method(j.at("method").get<std::string>());
    r.dataset = j.at("dataset").get<std::string>();
    r.per_instruction_accuracy = j.at("per_instruction_accuracy").get<std::vector<double>>();
    r.mean_accuracy = j.at("mean_accuracy").get<double>();
    r.ambig_gold_score = j.at("gold_score").at("ambig").get<double>();
    r.disambig_gold_score = j.at("gold_score").at("disambig").get<double>();
    r.ambig_accuracy = j.at("context_accuracy").at("ambig").get<double>();
    r.disambig_accuracy = j.at("context_accuracy").at("disambig").get<double>();
    r.n_ambig = j.at("counts").at("ambig").get<std::size_t>();
    r.n_disambig = j.at("counts").at("disambig").get<std::size_t>();
    r.config = j.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::vector<double> choice_probabilities(const Model& model, const Instance& instance,
                                         std::string_view instruction, Method method,
                                         const CalibrationVector* cal) {
  const auto scores = score_labels(model, render_prompt(instruction, instance), instance.choices);
  if (method == Method::cc || method == Method::dc) {
    if (cal == nullptr) throw MisuseError("calibrated methods need a calibration vector");
    return calibrate(scores, *cal);
  }
  return softmax(scores);
}

EvalReport evaluate(const Model& model, const Dataset& dataset, const InstructionSet& instructions,
                    Method method, const EvalOptions& options) {
  dataset.validate();
  instructions.validate();
  const std::size_t n_inst = instructions.size();
  const std::size_t n = dataset.size();
  const bool calibrated = method == Method::cc || method == Method::dc;

  std::map<CalibrationKey, std::size_t> key_index;
  std::vector<CalibrationKey> keys;
  std::vector<std::size_t> pair_key(n_inst * n, 0);
  if (calibrated) {
    for (std::size_t t = 0; t < n_inst; ++t)
      for (std::size_t i = 0; i < n; ++i) {
        const Instance& in = dataset.instances[i];
        CalibrationKey key{t, in.question, in.choices};
        auto [it, inserted] = key_index.emplace(key, keys.size());
        if (inserted) keys.push_back(std::move(key));
        pair_key[t * n + i] = it->second;
      }
  }
  std::optional<DomainCorpus> corpus;
  if (method == Method::dc)
    corpus = DomainCorpus::from_dataset(options.corpus ? *options.corpus : dataset);
  std::vector<CalibrationVector> cals(keys.size());
  for_each_index(keys.size(), options.exec, [&](std::size_t k) {
    const auto& [t, question, choices] = keys[k];
    cals[k] = content_free_distribution(
        model, instructions.templates[t], question, choices,
        method == Method::dc ? CalibrationMode::dc : CalibrationMode::cc,
        corpus ? &*corpus : nullptr, options.seed, options.bags);
  });

  std::vector<InstanceOutcome> outcomes(n_inst * n);
  for_each_index(n_inst * n, options.exec, [&](std::size_t p) {
    const std::size_t t = p / n;
    const Instance& in = dataset.instances[p % n];
    try {
      const auto probs = choice_probabilities(model, in, instructions.templates[t], method,
                                              calibrated ? &cals[pair_key[p]] : nullptr);
      const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
      outcomes[p] = {static_cast<int>(best), probs[static_cast<std::size_t>(in.gold_index)]};
    } catch (const Error& e) {
      throw StageError("evaluate", "instance " + in.id + ": " + e.what());
    }
  });

  EvalReport r;
  r.method = method;
  r.dataset = dataset.name;
  double gold_sum[2] = {0.0, 0.0};
  std::size_t correct_by_type[2] = {0, 0};
  std::size_t count_by_type[2] = {0, 0};
  for (const auto& in : dataset.instances) ++count_by_type[static_cast<int>(in.context_type)];
  r.n_ambig = count_by_type[0];
  r.n_disambig = count_by_type[1];
  for (std::size_t t = 0; t < n_inst; ++t) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Instance& in = dataset.instances[i];
      const InstanceOutcome& o = outcomes[t * n + i];
      const int type = static_cast<int>(in.context_type);
      const bool hit = o.predicted == in.gold_index;
      correct += hit;
      correct_by_type[type] += hit;
      gold_sum[type] += o.gold_probability;
    }
    r.per_instruction_accuracy.push_back(100.0 * static_cast<double>(correct) /
                                         static_cast<double>(n));
  }
  r.mean_accuracy = std::accumulate(r.per_instruction_accuracy.begin(),
                                    r.per_instruction_accuracy.end(), 0.0) /
                    static_cast<double>(n_inst);
  auto mean_over = [&](int type, double total) {
    const double pairs = static_cast<double>(count_by_type[type] * n_inst);
    return count_by_type[type] ? total / pairs : 0.0;
  };
  r.ambig_gold_score = 100.0 * mean_over(0, gold_sum[0]);
  r.disambig_gold_score = 100.0 * mean_over(1, gold_sum[1]);
  r.ambig_accuracy = 100.0 * mean_over(0, static_cast<double>(correct_by_type[0]));
  r.disambig_accuracy = 100.0 * mean_over(1, static_cast<double>(correct_by_type[1]));
  r.config = {{"dataset", dataset.name},
              {"instances", n},
              {"instructions", n_inst},
              {"method", std::string(to_string(method))}};
  if (method == Method::dc) {
    r.config["seed"] = options.seed;
    r.config["bags"] = options.bags;
  }
  return r;
}

EvalReport average_reports(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw EmptyInputError("no reports to average");
  EvalReport r = reports.front();
  const double k = static_cast<double>(reports.size());
  auto mean = [&](auto field) {
    double s = 0.0;
    for (const auto& x : reports) s += x.*field;
    return s / k;
  };
  for (std::size_t i = 0; i < r.per_instruction_accuracy.size(); ++i) {
    double s = 0.0;
    for (const auto& x : reports) {
      if (x.per_instruction_accuracy.size() != r.per_instruction_accuracy.size())
        throw CongruenceError("reports cover different instruction sets");
      s += x.per_instruction_accuracy[i];
    }
    r.per_instruction_accuracy[i] = s / k;
  }
  r.mean_accuracy = std::accumulate(r.per_instruction_accuracy.begin(),
                                    r.per_instruction_accuracy.end(), 0.0) /
                    static_cast<double>(r.per_instruction_accuracy.size());
  r.ambig_gold_score = mean(&EvalReport::ambig_gold_score);
  r.disambig_gold_score = mean(&EvalReport::disambig_gold_score);
  r.ambig_accuracy = mean(&EvalReport::ambig_accuracy);
  r.disambig_accuracy = mean(&EvalReport::disambig_accuracy);
  return r;
}

Dataset sample_detection_set(const Dataset& dataset, int k, std::uint64_t seed) {
  if (k < 1 || static_cast<std::size_t>(k) > dataset.size())
    throw BoundsError("k must be in [1, " + std::to_string(dataset.size()) + "], got " +
                      std::to_string(k));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Dataset out;
  out.name = dataset.name;
  for (int i = 0; i < k; ++i) out.instances.push_back(dataset.instances[order[static_cast<std::size_t>(i)]]);
  return out;
}

Dataset filter_context(const Dataset& dataset, ContextType type) {
  Dataset out;
  out.name = dataset.name;
  for (const auto& in : dataset.instances)
    if (in.context_type == type) out.instances.push_back(in);
  return out;
}

void PipelineConfig::validate() const {
  if (n < 0) throw ConfigError("n must be >= 0");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (methods.empty()) throw ConfigError("no methods configured");
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json methods_json = nlohmann::json::array();
  for (Method m : methods) methods_json.push_back(std::string(to_string(m)));
  nlohmann::json j = {{"checkpoint", checkpoint.generic_string()},
                      {"dataset", dataset.generic_string()},
                      {"out_dir", out_dir.generic_string()},
                      {"n", n},
                      {"k", k},
                      {"trials", trials},
                      {"seed", seed},
                      {"methods", methods_json},
                      {"execution", exec == Execution::serial ? "serial" : "parallel"}};
  if (instructions) j["instructions"] = instructions->generic_string();
  if (retention_dataset) j["retention_dataset"] = retention_dataset->generic_string();
  return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  PipelineConfig c;
  try {
    c.checkpoint = resolve(j.at("checkpoint").get<std::string>());
    c.dataset = resolve(j.at("dataset").get<std::string>());
    if (j.contains("instructions")) c.instructions = resolve(j["instructions"].get<std::string>());
    if (j.contains("retention_dataset"))
      c.retention_dataset = resolve(j["retention_dataset"].get<std::string>());
    if (j.contains("out_dir")) c.out_dir = resolve(j["out_dir"].get<std::string>());
    c.n = j.value("n", c.n);
    c.k = j.value("k", c.k);
    c.trials = j.value("trials", c.trials);
    c.seed = j.value("seed", c.seed);
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(parse_method(m.get<std::string>()));
    }
    const std::string exec = j.value("execution", std::string("parallel"));
    if (exec != "serial" && exec != "parallel") throw ConfigError("unknown execution '" + exec + "'");
    c.exec = exec == "serial" ? Execution::serial : Execution::parallel;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

PipelineResult run_pipeline(const Model& model, const Dataset& dataset,
                            const InstructionSet& instructions, const PipelineConfig& config,
                            const Dataset* retention) {
  config.validate();
  PipelineResult result;
  const std::string lineage = model.lineage();
  nlohmann::json trial_echo = nlohmann::json::array();

  for (int t = 0; t < config.trials; ++t) {
    const std::string tag = "trial " + std::to_string(t);
    const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(t);
    const Dataset sample = in_stage("sample (" + tag + ")", [&] {
      return sample_detection_set(dataset, config.k, seed);
    });
    Provenance prov;
    prov.dataset = dataset.name;
    prov.sample_ids = sample.ids();
    prov.instruction_ids.resize(instructions.size());
    std::iota(prov.instruction_ids.begin(), prov.instruction_ids.end(), 0);
    prov.seed = seed;
    prov.trials = config.trials;
    PruneMask mask;
    if (config.n == 0) {
      mask = PruneMask::empty(lineage);
      mask.provenance = prov;
    } else {
      const BiasScoreMap map = in_stage("detect (" + tag + ")", [&] {
        return detect(model, sample, instructions, config.exec);
      });
      const auto ranking = in_stage("rank (" + tag + ")", [&] { return rank_neurons(map); });
      mask = in_stage("select (" + tag + ")", [&] {
        return select_top_n(ranking, config.n, lineage, prov);
      });
    }
    trial_echo.push_back({{"seed", seed}, {"sample_ids", prov.sample_ids}});
    result.masks.push_back(std::move(mask));
  }

  nlohmann::json echo = {{"n", config.n},
                         {"k", config.k},
                         {"trials", config.trials},
                         {"seed", config.seed},
                         {"instructions", instructions.size()},
                         {"trial_samples", trial_echo}};

  auto evaluate_crispr = [&](const Dataset& data, std::vector<EvalReport>* per_trial) {
    std::vector<EvalReport> reports;
    for (std::size_t t = 0; t < result.masks.size(); ++t) {
      const std::string tag = "trial " + std::to_string(t);
      const Model pruned = in_stage("prune (" + tag + ")", [&] {
        return apply_mask(model, result.masks[t]);
      });
      EvalReport r = in_stage("evaluate crispr (" + tag + ")", [&] {
        return evaluate(pruned, data, instructions, Method::crispr, {config.exec});
      });
      r.config.update(echo);
      r.config["trial"] = t;
      reports.push_back(std::move(r));
    }
    if (per_trial) *per_trial = reports;
    EvalReport mean = average_reports(reports);
    mean.config = reports.front().config;
    mean.config.erase("trial");
    mean.config["aggregate"] = "trial_mean";
    return mean;
  };

  for (Method m : config.methods) {
    if (m == Method::crispr) {
      result.reports.push_back(evaluate_crispr(dataset, &result.crispr_trials));
      continue;
    }
    EvalOptions opts{config.exec, config.seed};
    EvalReport r = in_stage("evaluate " + std::string(to_string(m)), [&] {
      return evaluate(model, dataset, instructions, m, opts);
    });
    r.config.update(echo);
    result.reports.push_back(std::move(r));
  }

  if (retention) {
    EvalReport base = in_stage("retention original", [&] {
      return evaluate(model, *retention, instructions, Method::original, {config.exec});
    });
    base.config.update(echo);
    result.retention.push_back(std::move(base));
    result.retention.push_back(evaluate_crispr(*retention, nullptr));
  }
  return result;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  config.validate();
  const Model model = in_stage("load checkpoint", [&] { return load_checkpoint(config.checkpoint); });
  const Dataset dataset = in_stage("load dataset", [&] { return load_dataset(config.dataset); });
  const InstructionSet instructions = in_stage("load instructions", [&] {
    return config.instructions ? load_instructions(*config.instructions) : default_instructions();
  });
  std::optional<Dataset> retention;
  if (config.retention_dataset)
    retention = in_stage("load retention dataset", [&] { return load_dataset(*config.retention_dataset); });

  PipelineResult result =
      run_pipeline(model, dataset, instructions, config, retention ? &*retention : nullptr);

  in_stage("write artifacts", [&] {
    const auto& dir = config.out_dir;
    for (std::size_t t = 0; t < result.masks.size(); ++t)
      save_mask(result.masks[t], dir / ("mask_trial" + std::to_string(t) + ".json"));
    for (const auto& r : result.reports)
      save_report(r, dir / ("report_" + std::string(to_string(r.method)) + ".json"));
    for (std::size_t t = 0; t < result.crispr_trials.size(); ++t)
      save_report(result.crispr_trials[t],
                  dir / ("report_crispr_trial" + std::to_string(t) + ".json"));
    if (!result.retention.empty()) {
      save_report(result.retention[0], dir / "retention_original.json");
      save_report(result.retention[1], dir / "retention_crispr.json");
    }
    write_file(dir / "tables.txt", render_accuracy_table(result.reports) + "\n" +
                                       render_gold_score_table(result.reports));
    return 0;
  });
  return result;
}

std::string render_accuracy_table(const std::vector<EvalReport>& reports) {
  const std::string dataset = reports.empty() ? "dataset" : reports.front().dataset;
  const std::size_t w0 = 10, w = std::max<std::size_t>(dataset.size(), 10) + 2, wr = 20;
  std::ostringstream os;
  os << "Mean accuracy (%)\n";
  os << pad("Method", w0) << rpad(dataset, w);
  for (const char* c : kReferenceColumns) os << rpad(std::string("ref ") + c, wr);
  os << "\n" << std::string(w0 + w + 3 * wr, '-') << "\n";
  for (const auto& r : reports) {
    os << pad(display_name(r.method), w0) << format_cell(r.mean_accuracy, static_cast<int>(w));
    const Reference* ref = reference_for(r.method);
    for (int c = 0; c < 3; ++c) os << format_cell(ref->accuracy[c], static_cast<int>(wr));
    os << "\n";
  }
  return os.str();
}

std::string render_gold_score_table(const std::vector<EvalReport>& reports) {
  const std::string dataset = reports.empty() ? "dataset" : reports.front().dataset;
  const std::size_t w0 = 10, w = 10, wr = 10;
  std::ostringstream os;
  os << "Mean gold score (x100) by context type\n";
  os << pad("", w0) << rpad(dataset, 2 * w);
  for (const char* c : kReferenceColumns) os << rpad(std::string("ref ") + c, 2 * wr);
  os << "\n" << pad("Method", w0) << rpad("ambig", w) << rpad("disambig", w);
  for (int c = 0; c < 3; ++c) os << rpad("ambig", wr) << rpad("disambig", wr);
  os << "\n" << std::string(w0 + 2 * w + 6 * wr, '-') << "\n";
  for (const auto& r : reports) {
    if (r.method != Method::original && r.method != Method::crispr) continue;
    os << pad(display_name(r.method), w0) << format_cell(r.ambig_gold_score, static_cast<int>(w))
       << format_cell(r.disambig_gold_score, static_cast<int>(w));
    const Reference* ref = reference_for(r.method);
    for (int c = 0; c < 6; ++c) os << format_cell(ref->gold[c], static_cast<int>(wr));
    os << "\n";
  }
  return os.str();
}

void save_report(const EvalReport& report, const std::filesystem::path& path) {
  write_file(path, report.to_json().dump(2) + "\n");
}

EvalReport load_report(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("report " + path.string() + ": " + e.what());
  }
  return EvalReport::from_json(j);
}

}  // namespace crispr
