#pragma once

// Experiment orchestration: parse a flat key=value run config, pre-generate
// plain rationales for the training split, run the continual loop once per
// seed with a fresh backbone, and write deterministic result tables. A
// manifest records completed phases so an interrupted experiment resumes
// instead of redoing finished work.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "crex/continual.hpp"
#include "crex/version.hpp"

namespace crex {

inline std::vector<double> grid_points(const GridRange& g) {
  if (g.step <= 0.0) throw ValidationError("grid step must be > 0");
  if (g.hi < g.lo) throw ValidationError("grid upper bound below lower bound");
  std::vector<double> points;
  for (int i = 0;; ++i) {
    const double v = g.lo + i * g.step;
    if (v > g.hi + 1e-9) break;
    points.push_back(std::min(v, g.hi));
  }
  return points;
}

// Everything a full run needs beyond the hyperparameters.
struct RunSpec {
  ExperimentConfig cfg;
  std::filesystem::path data_dir;        // ingest output: train/val/test.jsonl + labels.json
  std::filesystem::path out_dir = "out";
  std::filesystem::path rationale_cache; // defaults to <out_dir>/rationale_cache.jsonl
  std::string backbone = "tiny";         // "tiny" or "worker"
  std::string worker_command;            // launch command when backbone == "worker"
  int tiny_embed_dim = 16;
  int tiny_hidden_dim = 32;
  int tiny_max_input = 256;
  int tiny_max_output = 192;
  std::string provider = "oracle";       // "oracle" or "http"
  bool stage2_enabled = true;
  int max_in_flight = 4;
  double requests_per_sec = 0.0;
};

// ---------------------------------------------------------------------------
// Config file parsing: one `key = value` per line, '#' starts a comment.
// ---------------------------------------------------------------------------

namespace detail {

inline double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + ": not a number: " + value);
  }
  if (used != value.size())
    throw ValidationError("config key " + key + ": not a number: " + value);
  return v;
}

inline int parse_int(const std::string& key, const std::string& value) {
  const double v = parse_double(key, value);
  if (v != std::floor(v)) throw ValidationError("config key " + key + ": not an integer");
  return static_cast<int>(v);
}

inline std::vector<std::string> parse_list(const std::string& value) {
  std::vector<std::string> items;
  for (const auto& piece : split(value, ','))
    if (!trim(piece).empty()) items.push_back(trim(piece));
  return items;
}

inline GridRange parse_grid(const std::string& key, const std::string& value) {
  const auto parts = parse_list(value);
  if (parts.size() != 3)
    throw ValidationError("config key " + key + ": expected lo,hi,step");
  return {parse_double(key, parts[0]), parse_double(key, parts[1]),
          parse_double(key, parts[2])};
}

}  // namespace detail

inline RunSpec parse_run_spec(const std::string& text) {
  RunSpec spec;
  int line_no = 0;
  for (const auto& raw_line : split(text, '\n')) {
    ++line_no;
    std::string line = raw_line;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(line_no) +
                            ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "alpha") spec.cfg.alpha = detail::parse_double(key, value);
    else if (key == "beta") spec.cfg.beta = detail::parse_double(key, value);
    else if (key == "tau") spec.cfg.tau = detail::parse_double(key, value);
    else if (key == "memory_size") spec.cfg.memory_size = detail::parse_int(key, value);
    else if (key == "n_tasks") spec.cfg.n_tasks = detail::parse_int(key, value);
    else if (key == "epochs_stage1") spec.cfg.epochs_stage1 = detail::parse_int(key, value);
    else if (key == "epochs_stage2") spec.cfg.epochs_stage2 = detail::parse_int(key, value);
    else if (key == "learning_rate") spec.cfg.learning_rate = detail::parse_double(key, value);
    else if (key == "batch_size") spec.cfg.batch_size = detail::parse_int(key, value);
    else if (key == "seeds") {
      spec.cfg.seeds.clear();
      for (const auto& s : detail::parse_list(value))
        spec.cfg.seeds.push_back(
            static_cast<std::uint64_t>(detail::parse_int("seeds", s)));
    } else if (key == "ablation") {
      spec.cfg.ablation.clear();
      for (const auto& s : detail::parse_list(value))
        spec.cfg.ablation.insert(ablation_from_string(s));
    } else if (key == "alpha_grid") spec.cfg.alpha_grid = detail::parse_grid(key, value);
    else if (key == "beta_grid") spec.cfg.beta_grid = detail::parse_grid(key, value);
    else if (key == "tau_grid") spec.cfg.tau_grid = detail::parse_grid(key, value);
    else if (key == "data_dir") spec.data_dir = value;
    else if (key == "out_dir") spec.out_dir = value;
    else if (key == "rationale_cache") spec.rationale_cache = value;
    else if (key == "backbone") spec.backbone = value;
    else if (key == "worker_command") spec.worker_command = value;
    else if (key == "tiny_embed_dim") spec.tiny_embed_dim = detail::parse_int(key, value);
    else if (key == "tiny_hidden_dim") spec.tiny_hidden_dim = detail::parse_int(key, value);
    else if (key == "tiny_max_input") spec.tiny_max_input = detail::parse_int(key, value);
    else if (key == "tiny_max_output") spec.tiny_max_output = detail::parse_int(key, value);
    else if (key == "provider") spec.provider = value;
    else if (key == "stage2_enabled") {
      if (value == "true") spec.stage2_enabled = true;
      else if (value == "false") spec.stage2_enabled = false;
      else throw ValidationError("config key stage2_enabled: expected true or false");
    } else if (key == "max_in_flight") spec.max_in_flight = detail::parse_int(key, value);
    else if (key == "requests_per_sec")
      spec.requests_per_sec = detail::parse_double(key, value);
    else throw ValidationError("unknown config key: " + key);
  }
  validate_config(spec.cfg);
  if (spec.backbone != "tiny" && spec.backbone != "worker")
    throw ValidationError("backbone must be tiny or worker");
  if (spec.backbone == "worker" && trim(spec.worker_command).empty())
    throw ValidationError("backbone = worker requires worker_command");
  if (spec.rationale_cache.empty())
    spec.rationale_cache = spec.out_dir / "rationale_cache.jsonl";
  return spec;
}

inline RunSpec load_run_spec(const std::filesystem::path& path) {
  return parse_run_spec(read_file(path));
}

// ---------------------------------------------------------------------------
// Data loading (output of the ingest step)
// ---------------------------------------------------------------------------

struct ExperimentData {
  std::vector<RelationInstance> train, val, test;
  LabelSpace space;
};

inline ExperimentData load_experiment_data(const std::filesystem::path& data_dir) {
  ExperimentData data;
  data.train = read_instances_jsonl(data_dir / "train.jsonl");
  data.val = read_instances_jsonl(data_dir / "val.jsonl");
  data.test = read_instances_jsonl(data_dir / "test.jsonl");
  data.space = read_label_space(data_dir / "labels.json");
  for (const auto* part : {&data.train, &data.val, &data.test})
    for (const auto& inst : *part) validate_instance(inst, data.space);
  if (data.train.empty()) throw Error("empty training split in " + data_dir.string());
  return data;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

using BackboneFactory = std::function<std::unique_ptr<Backbone>(std::uint64_t seed)>;

// "%.6f" rendering used for every accuracy in the result tables.
inline std::string fixed6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

namespace detail {

inline nlohmann::json load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception&) {
    return nlohmann::json::object();  // a corrupt manifest just forfeits resume
  }
}

inline void store_manifest(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file(path, j.dump(2) + "\n");
}

inline nlohmann::json trace_to_json(const RunTrace& trace) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : trace.tasks) {
    nlohmann::json analogous = nlohmann::json::object();
    for (const auto& [relation, list] : t.analogous) analogous[relation] = list;
    tasks.push_back({{"task_index", t.task_index},
                     {"new_relations", t.new_relations},
                     {"seen_labels", t.seen_labels},
                     {"accuracy", t.eval.accuracy},
                     {"correct", t.eval.correct},
                     {"total", t.eval.total},
                     {"no_match", t.eval.no_match},
                     {"analogous", analogous},
                     {"contrastive_rationales", t.contrastive_rationales}});
  }
  return {{"seed", trace.seed}, {"final_accuracy", trace.final_accuracy},
          {"tasks", tasks}};
}

inline RunTrace load_trace(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("cannot parse trace " + path.string() + ": " + e.what());
  }
  RunTrace trace;
  trace.seed = j.at("seed").get<std::uint64_t>();
  trace.final_accuracy = j.at("final_accuracy").get<double>();
  for (const auto& t : j.at("tasks")) {
    TaskOutcome outcome;
    outcome.task_index = t.at("task_index").get<int>();
    outcome.new_relations = t.at("new_relations").get<std::vector<std::string>>();
    outcome.seen_labels = t.at("seen_labels").get<int>();
    outcome.eval.accuracy = t.at("accuracy").get<double>();
    outcome.eval.correct = t.at("correct").get<int>();
    outcome.eval.total = t.at("total").get<int>();
    outcome.eval.no_match = t.at("no_match").get<int>();
    outcome.contrastive_rationales = t.at("contrastive_rationales").get<int>();
    trace.tasks.push_back(std::move(outcome));
  }
  return trace;
}

}  // namespace detail

struct ExperimentResult {
  std::vector<RunTrace> traces;               // one per seed, config order
  double mean_final_accuracy = 0.0;
  std::vector<double> mean_accuracy_by_task;  // across seeds, per task index
};

// Fills the aggregate fields of `result` and writes results.csv,
// accuracy_vs_task.csv and summary.json. Fixed number formatting keeps
// identical runs byte-identical.
inline void write_result_tables(const std::filesystem::path& out_dir,
                                ExperimentResult& result) {
  if (result.traces.empty()) throw Error("no traces to report");
  const std::size_t n_tasks = result.traces.front().tasks.size();
  for (const auto& trace : result.traces)
    if (trace.tasks.size() != n_tasks) throw Error("trace length mismatch across seeds");

  std::string results_csv = "seed,task_index,seen_labels,accuracy,correct,total,no_match\n";
  for (const auto& trace : result.traces)
    for (const auto& t : trace.tasks)
      results_csv += std::to_string(trace.seed) + "," + std::to_string(t.task_index) +
                     "," + std::to_string(t.seen_labels) + "," +
                     fixed6(t.eval.accuracy) + "," +
                     std::to_string(t.eval.correct) + "," + std::to_string(t.eval.total) +
                     "," + std::to_string(t.eval.no_match) + "\n";
  write_file(out_dir / "results.csv", results_csv);

  std::string by_task_csv = "task_index,mean_accuracy,min_accuracy,max_accuracy\n";
  result.mean_accuracy_by_task.assign(n_tasks, 0.0);
  for (std::size_t k = 0; k < n_tasks; ++k) {
    double sum = 0.0, lo = 1.0, hi = 0.0;
    for (const auto& trace : result.traces) {
      const double a = trace.tasks[k].eval.accuracy;
      sum += a;
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
    const double mean = sum / result.traces.size();
    result.mean_accuracy_by_task[k] = mean;
    by_task_csv += std::to_string(k) + "," + fixed6(mean) + "," +
                   fixed6(lo) + "," + fixed6(hi) + "\n";
  }
  write_file(out_dir / "accuracy_vs_task.csv", by_task_csv);

  double final_sum = 0.0;
  nlohmann::json per_seed = nlohmann::json::object();
  std::vector<std::uint64_t> seeds;
  for (const auto& trace : result.traces) {
    final_sum += trace.final_accuracy;
    per_seed[std::to_string(trace.seed)] = trace.final_accuracy;
    seeds.push_back(trace.seed);
  }
  result.mean_final_accuracy = final_sum / result.traces.size();
  nlohmann::json summary{{"mean_final_accuracy", result.mean_final_accuracy},
                         {"per_seed_final_accuracy", per_seed},
                         {"seeds", seeds},
                         {"n_tasks", n_tasks}};
  write_file(out_dir / "summary.json", summary.dump(2) + "\n");
}

// Pre-generates plain rationales for every training instance (cache-first);
// any per-instance failure aborts the experiment, because training cannot
// proceed with holes in the rationale set.
inline std::map<std::string, std::string> ensure_plain_rationales(
    const std::vector<RelationInstance>& train, const LabelSpace& space,
    Provider& provider, RationaleCache& cache, int max_in_flight,
    double requests_per_sec) {
  BulkOptions bulk;
  bulk.max_in_flight = max_in_flight;
  bulk.requests_per_sec = requests_per_sec;
  const BulkReport report = generate_all_plain(train, space, provider, &cache, bulk);
  if (!report.errors.empty())
    throw Error("rationale generation failed for " +
                std::to_string(report.errors.size()) +
                " instance(s); first: " + report.errors.front());
  std::map<std::string, std::string> rationales;
  GenerateOptions opts;
  for (const auto& inst : train) {
    const GenerateResult r = generate_rationale(inst, space, provider, &cache, opts);
    rationales[inst.id] = r.record.rationale_text;
  }
  return rationales;
}

// Runs the full multi-seed experiment and writes, under spec.out_dir:
//   manifest.json          phase markers + config echo (resume support)
//   seed_<s>/trace.json    per-task outcomes for that seed
//   seed_<s>/task_<k>/     backbone + memory + eval checkpoints
//   results.csv            one row per (seed, task)
//   accuracy_vs_task.csv   across-seed mean/min/max per task index
//   summary.json           final accuracies
inline ExperimentResult run_experiment(const RunSpec& spec, const BackboneFactory& factory,
                                       Provider& provider) {
  validate_config(spec.cfg);
  std::filesystem::create_directories(spec.out_dir);
  const std::filesystem::path manifest_path = spec.out_dir / "manifest.json";
  nlohmann::json manifest = detail::load_manifest(manifest_path);

  // A manifest from a different config must not let stale phases be skipped.
  nlohmann::json config_echo{{"alpha", spec.cfg.alpha},
                             {"beta", spec.cfg.beta},
                             {"tau", spec.cfg.tau},
                             {"memory_size", spec.cfg.memory_size},
                             {"n_tasks", spec.cfg.n_tasks},
                             {"epochs_stage1", spec.cfg.epochs_stage1},
                             {"epochs_stage2", spec.cfg.epochs_stage2},
                             {"learning_rate", spec.cfg.learning_rate},
                             {"batch_size", spec.cfg.batch_size},
                             {"seeds", spec.cfg.seeds},
                             {"stage2_enabled", spec.stage2_enabled},
                             {"backbone", spec.backbone},
                             {"data_dir", spec.data_dir.string()}};
  {
    nlohmann::json ablations = nlohmann::json::array();
    for (const auto a : spec.cfg.ablation) ablations.push_back(to_string(a));
    config_echo["ablation"] = std::move(ablations);
  }
  if (!manifest.contains("config") || manifest["config"] != config_echo)
    manifest = nlohmann::json{{"version", kVersion},
                              {"config", config_echo},
                              {"provider", provider.name()},
                              {"phases", nlohmann::json::object()}};

  const ExperimentData data = load_experiment_data(spec.data_dir);
  const std::filesystem::path cache_path = spec.rationale_cache.empty()
                                               ? spec.out_dir / "rationale_cache.jsonl"
                                               : spec.rationale_cache;
  RationaleCache cache(cache_path);
  const std::map<std::string, std::string> rationales = ensure_plain_rationales(
      data.train, data.space, provider, cache, spec.max_in_flight, spec.requests_per_sec);
  manifest["phases"]["rationales"] = true;
  detail::store_manifest(manifest_path, manifest);

  ExperimentResult result;
  for (const std::uint64_t seed : spec.cfg.seeds) {
    const std::filesystem::path seed_dir =
        spec.out_dir / ("seed_" + std::to_string(seed));
    const std::filesystem::path trace_path = seed_dir / "trace.json";
    const std::string phase_key = "seed_" + std::to_string(seed);

    if (manifest["phases"].value(phase_key, false) &&
        std::filesystem::exists(trace_path)) {
      // Completed in an earlier invocation; reload instead of recomputing.
      result.traces.push_back(detail::load_trace(trace_path));
      continue;
    }

    std::filesystem::create_directories(seed_dir);
    const TaskSequence sequence =
        make_task_sequence(data.space, spec.cfg.n_tasks, seed);
    std::unique_ptr<Backbone> backbone = factory(seed);

    ContinualOptions copt;
    copt.cfg = spec.cfg;
    copt.seed = seed;
    copt.stage2_enabled = spec.stage2_enabled;
    copt.out_dir = seed_dir;
    LossLogger logger(seed_dir / "loss_log.jsonl");

    RunTrace trace = run_continual(*backbone, data.train, data.test, sequence,
                                   data.space, rationales, provider, cache, copt,
                                   &logger);
    write_file(trace_path, detail::trace_to_json(trace).dump(2) + "\n");
    manifest["phases"][phase_key] = true;
    detail::store_manifest(manifest_path, manifest);
    result.traces.push_back(std::move(trace));
  }

  write_result_tables(spec.out_dir, result);
  manifest["phases"]["report"] = true;
  detail::store_manifest(manifest_path, manifest);
  return result;
}

// Rebuilds the result tables from the per-seed trace files of a finished (or
// partially finished) experiment directory.
inline ExperimentResult rebuild_report(const std::filesystem::path& out_dir) {
  std::vector<std::filesystem::path> trace_paths;
  const nlohmann::json manifest = detail::load_manifest(out_dir / "manifest.json");
  if (manifest.contains("config") && manifest["config"].contains("seeds")) {
    for (const auto seed : manifest["config"]["seeds"].get<std::vector<std::uint64_t>>()) {
      const auto p = out_dir / ("seed_" + std::to_string(seed)) / "trace.json";
      if (std::filesystem::exists(p)) trace_paths.push_back(p);
    }
  } else if (std::filesystem::exists(out_dir)) {
    for (const auto& entry : std::filesystem::directory_iterator(out_dir)) {
      if (entry.is_directory() && entry.path().filename().string().rfind("seed_", 0) == 0) {
        const auto p = entry.path() / "trace.json";
        if (std::filesystem::exists(p)) trace_paths.push_back(p);
      }
    }
    std::sort(trace_paths.begin(), trace_paths.end());
  }
  if (trace_paths.empty()) throw Error("no trace files under " + out_dir.string());

  ExperimentResult result;
  for (const auto& p : trace_paths) result.traces.push_back(detail::load_trace(p));
  write_result_tables(out_dir, result);
  return result;
}

// ---------------------------------------------------------------------------
// Zero-shot baseline
// ---------------------------------------------------------------------------

struct ZeroShotReport {
  int total = 0;
  int correct = 0;
  double accuracy = 0.0;
  int total_attempts = 0;
};

// Classifies every instance with the provider alone (no trained model) by
// asking until the reply lands in the label menu; the menu lists every
// verbalization in the label space.
inline ZeroShotReport run_zero_shot_baseline(const std::vector<RelationInstance>& instances,
                                             const LabelSpace& space, Provider& provider,
                                             const GenerateOptions& opts = {}) {
  if (instances.empty()) throw Error("zero-shot baseline: empty instance list");
  const std::vector<std::string> menu = space.verbalizations();
  ZeroShotReport report;
  report.total = static_cast<int>(instances.size());
  for (const auto& inst : instances) {
    const ZeroShotResult r = zero_shot_classify(inst, menu, provider, opts);
    report.total_attempts += r.attempts;
    const auto label = space.label_of_answer(normalize_answer(r.label));
    if (label && *label == inst.relation) ++report.correct;
  }
  report.accuracy = static_cast<double>(report.correct) / report.total;
  return report;
}

}  // namespace crex
