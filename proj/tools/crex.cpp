// Command-line front end. Subcommands mirror the pipeline phases:
//
//   ingest               raw dataset release -> normalized splits + label space
//   generate-rationales  fill the rationale cache for the training split
//   train                full multi-seed continual experiment
//   evaluate             score one saved checkpoint on a split
//   ablate               one experiment per ablation flag
//   llm-baseline         zero-shot classification through the provider alone
//   report               rebuild result tables from saved traces
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid arguments or config.

#include <algorithm>
#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"

#include "crex/crex.hpp"
#include "crex/http_provider.hpp"
#include "crex/subprocess_backbone.hpp"

namespace {

std::unique_ptr<crex::Provider> make_provider(const std::string& kind) {
  if (kind == "oracle") return std::make_unique<crex::OracleProvider>();
  if (kind == "http")
    return std::make_unique<crex::HttpProvider>(crex::http_options_from_env());
  throw crex::ValidationError("unknown provider: " + kind + " (expected oracle or http)");
}

crex::BackboneFactory make_backbone_factory(const crex::RunSpec& spec) {
  if (spec.backbone == "tiny") {
    return [spec](std::uint64_t seed) -> std::unique_ptr<crex::Backbone> {
      crex::TinyBackboneConfig cfg;
      cfg.embed_dim = spec.tiny_embed_dim;
      cfg.hidden_dim = spec.tiny_hidden_dim;
      cfg.max_input_length = spec.tiny_max_input;
      cfg.max_output_length = spec.tiny_max_output;
      cfg.seed = crex::mix_seed(seed, "backbone-init");
      return std::make_unique<crex::TinyBackbone>(cfg);
    };
  }
  return [spec](std::uint64_t seed) -> std::unique_ptr<crex::Backbone> {
    return std::make_unique<crex::SubprocessBackbone>(spec.worker_command + " --seed " +
                                                      std::to_string(seed));
  };
}

// Reconstructs a backbone from a checkpoint directory written by save().
// Accepts either the save() directory itself or a task checkpoint directory,
// which keeps the model one level down (task_k/model + memory.json + ...).
std::unique_ptr<crex::Backbone> load_checkpoint(std::filesystem::path dir,
                                                const std::string& worker_command) {
  if (!std::filesystem::exists(dir / "manifest.json") &&
      std::filesystem::exists(dir / "model" / "manifest.json"))
    dir /= "model";
  const nlohmann::json manifest = crex::read_backbone_manifest(dir);
  const std::string family = manifest.at("family").get<std::string>();
  if (family == "tiny") {
    crex::TinyBackboneConfig cfg;
    cfg.hidden_dim = manifest.at("feature_dim").get<int>();
    cfg.max_input_length = manifest.at("max_input_length").get<int>();
    cfg.max_output_length = manifest.at("max_output_length").get<int>();
    // The embedding width only appears in the model id ("tiny-seq2seq-eE-hH").
    const std::string id = manifest.at("model_id").get<std::string>();
    const auto e = id.find("-e"), h = id.find("-h");
    if (e == std::string::npos || h == std::string::npos || h <= e)
      throw crex::Error("unrecognized tiny model id: " + id);
    cfg.embed_dim = std::stoi(id.substr(e + 2, h - e - 2));
    auto backbone = std::make_unique<crex::TinyBackbone>(cfg);
    backbone->load(dir);
    return backbone;
  }
  if (family == "worker") {
    if (worker_command.empty())
      throw crex::ValidationError("checkpoint needs --worker-command to restart its worker");
    auto backbone = std::make_unique<crex::SubprocessBackbone>(worker_command);
    backbone->load(dir);
    return backbone;
  }
  throw crex::Error("unknown backbone family in manifest: " + family);
}

std::vector<crex::RelationInstance> load_split(const std::filesystem::path& data_dir,
                                               const std::string& split) {
  if (split != "train" && split != "val" && split != "test")
    throw crex::ValidationError("split must be train, val or test");
  return crex::read_instances_jsonl(data_dir / (split + ".jsonl"));
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string input, format, name = "dataset", out = "data";
  std::uint64_t seed = 42;
  int relation_count = 0, train_cap = -1, test_cap = -1;
  std::vector<std::string> exclude;
};

int run_ingest(const IngestArgs& args) {
  crex::DatasetSpec spec;
  if (args.format == "fewrel") spec = crex::fewrel_spec();
  else if (args.format == "tacred") spec = crex::tacred_spec();
  else throw crex::ValidationError("format must be fewrel or tacred");
  spec.name = args.name;
  if (args.relation_count > 0) spec.relation_count = args.relation_count;
  if (args.train_cap >= 0 || args.test_cap >= 0) {
    crex::PerRelationCaps caps = spec.per_relation_caps.value_or(crex::PerRelationCaps{});
    if (args.train_cap >= 0) caps.train = args.train_cap;
    if (args.test_cap >= 0) caps.test = args.test_cap;
    spec.per_relation_caps = caps;
  }
  for (const auto& label : args.exclude) spec.excluded_labels.insert(label);

  const crex::Corpus corpus = crex::load_corpus(args.input, spec);
  if (corpus.instances.empty()) throw crex::Error("no instances ingested from " + args.input);
  crex::SplitData splits = crex::split_train_val_test(corpus.instances, args.seed);
  splits = crex::apply_caps(splits, spec);

  const std::filesystem::path out(args.out);
  crex::write_instances_jsonl(out / "train.jsonl", splits.train);
  crex::write_instances_jsonl(out / "val.jsonl", splits.val);
  crex::write_instances_jsonl(out / "test.jsonl", splits.test);
  crex::write_label_space(out / "labels.json", corpus.labels);
  std::cout << "ingested " << corpus.instances.size() << " instances, "
            << corpus.labels.size() << " relations -> " << out.string() << " (train "
            << splits.train.size() << ", val " << splits.val.size() << ", test "
            << splits.test.size() << ")\n";
  return 0;
}

int run_generate_rationales(const std::string& data_dir, const std::string& cache_path,
                            const std::string& provider_kind, int max_in_flight,
                            double requests_per_sec) {
  const crex::ExperimentData data = crex::load_experiment_data(data_dir);
  auto provider = make_provider(provider_kind);
  crex::RationaleCache cache(cache_path);
  crex::BulkOptions opts;
  opts.max_in_flight = max_in_flight;
  opts.requests_per_sec = requests_per_sec;
  const crex::BulkReport report =
      crex::generate_all_plain(data.train, data.space, *provider, &cache, opts);
  std::cout << "rationales: " << report.generated << " generated, " << report.cache_hits
            << " cache hits, " << report.failures << " failures\n";
  for (const auto& err : report.errors) std::cerr << "  " << err << "\n";
  return report.failures == 0 ? 0 : 1;
}

int run_train(const crex::RunSpec& spec) {
  auto provider = make_provider(spec.provider);
  const crex::ExperimentResult result =
      crex::run_experiment(spec, make_backbone_factory(spec), *provider);
  std::cout << "tasks: " << result.mean_accuracy_by_task.size() << "\n";
  for (std::size_t k = 0; k < result.mean_accuracy_by_task.size(); ++k)
    std::cout << "  task " << k << ": mean accuracy "
              << crex::fixed6(result.mean_accuracy_by_task[k]) << "\n";
  std::cout << "mean final accuracy: " << crex::fixed6(result.mean_final_accuracy)
            << " over " << result.traces.size() << " seed(s)\n";
  return 0;
}

int run_evaluate(const std::string& model_dir, const std::string& data_dir,
                 const std::string& split, bool with_f1,
                 const std::string& worker_command) {
  auto backbone = load_checkpoint(model_dir, worker_command);
  const auto instances = load_split(data_dir, split);
  if (instances.empty()) throw crex::Error("empty split: " + split);
  const crex::LabelSpace space =
      crex::read_label_space(std::filesystem::path(data_dir) / "labels.json");
  const crex::EvalResult eval = crex::evaluate_accuracy(*backbone, instances, space);
  std::cout << "accuracy " << crex::fixed6(eval.accuracy) << " (" << eval.correct
            << "/" << eval.total << ", " << eval.no_match << " no-match)\n";
  if (with_f1) {
    std::vector<std::string> golds;
    golds.reserve(instances.size());
    for (const auto& inst : instances) golds.push_back(inst.relation);
    const auto preds = crex::classify(*backbone, instances, space);
    const crex::F1Report f1 = crex::f1_scores(golds, preds);
    for (const auto& [label, s] : f1.per_label)
      std::cout << "  " << label << ": P " << crex::fixed6(s.precision) << " R "
                << crex::fixed6(s.recall) << " F1 " << crex::fixed6(s.f1)
                << " (n=" << s.support << ")\n";
    std::cout << "macro F1 " << crex::fixed6(f1.macro_f1) << ", micro F1 "
              << crex::fixed6(f1.micro_f1) << "\n";
  }
  return 0;
}

int run_ablate(crex::RunSpec spec, const std::vector<std::string>& flags) {
  if (flags.empty()) throw crex::ValidationError("ablate needs at least one flag");
  auto provider = make_provider(spec.provider);
  const std::filesystem::path base_out = spec.out_dir;
  std::cout << "ablation sweep (" << flags.size() << " arm(s))\n";
  for (const auto& flag : flags) {
    crex::RunSpec arm = spec;
    arm.cfg.ablation.clear();
    if (flag != "none") arm.cfg.ablation.insert(crex::ablation_from_string(flag));
    arm.out_dir = base_out / flag;
    const crex::ExperimentResult result =
        crex::run_experiment(arm, make_backbone_factory(arm), *provider);
    std::cout << "  " << flag << ": mean final accuracy "
              << crex::fixed6(result.mean_final_accuracy) << "\n";
  }
  return 0;
}

int run_llm_baseline(const std::string& data_dir, const std::string& split, int limit,
                     const std::string& provider_kind, int max_attempts,
                     const std::string& out_path) {
  auto instances = load_split(data_dir, split);
  const crex::LabelSpace space =
      crex::read_label_space(std::filesystem::path(data_dir) / "labels.json");
  if (limit > 0 && static_cast<std::size_t>(limit) < instances.size())
    instances.resize(static_cast<std::size_t>(limit));
  if (instances.empty()) throw crex::Error("empty split: " + split);

  std::unique_ptr<crex::Provider> provider;
  if (provider_kind == "zero-shot-oracle")
    provider = std::make_unique<crex::ZeroShotOracleProvider>(instances, space);
  else
    provider = make_provider(provider_kind);

  crex::GenerateOptions opts;
  opts.max_attempts = max_attempts;
  const crex::ZeroShotReport report =
      crex::run_zero_shot_baseline(instances, space, *provider, opts);
  std::cout << "zero-shot accuracy " << crex::fixed6(report.accuracy) << " ("
            << report.correct << "/" << report.total << "), " << report.total_attempts
            << " provider attempts\n";
  if (!out_path.empty()) {
    nlohmann::json j{{"accuracy", report.accuracy},
                     {"correct", report.correct},
                     {"total", report.total},
                     {"total_attempts", report.total_attempts},
                     {"provider", provider->name()},
                     {"split", split}};
    crex::write_file(out_path, j.dump(2) + "\n");
  }
  return 0;
}

int run_report(const std::string& out_dir) {
  const crex::ExperimentResult result = crex::rebuild_report(out_dir);
  std::cout << "seeds: " << result.traces.size() << "\n";
  for (std::size_t k = 0; k < result.mean_accuracy_by_task.size(); ++k)
    std::cout << "  task " << k << ": mean accuracy "
              << crex::fixed6(result.mean_accuracy_by_task[k]) << "\n";
  std::cout << "mean final accuracy: " << crex::fixed6(result.mean_final_accuracy)
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual relation extraction with rationale-tuned seq2seq backbones"};
  app.require_subcommand(1);
  app.set_version_flag("--version", crex::kVersion);

  // ingest ------------------------------------------------------------------
  IngestArgs ingest;
  auto* cmd_ingest = app.add_subcommand("ingest", "Normalize a raw dataset release");
  cmd_ingest->add_option("--input", ingest.input, "Raw dataset file")->required();
  cmd_ingest->add_option("--format", ingest.format, "fewrel or tacred")->required();
  cmd_ingest->add_option("--name", ingest.name, "Dataset name used in instance ids");
  cmd_ingest->add_option("--out", ingest.out, "Output directory");
  cmd_ingest->add_option("--seed", ingest.seed, "Split seed");
  cmd_ingest->add_option("--relation-count", ingest.relation_count,
                         "Expected relation count (warning on mismatch)");
  cmd_ingest->add_option("--train-cap", ingest.train_cap, "Per-relation train cap");
  cmd_ingest->add_option("--test-cap", ingest.test_cap, "Per-relation test cap");
  cmd_ingest->add_option("--exclude", ingest.exclude, "Labels to drop entirely");

  // generate-rationales -----------------------------------------------------
  std::string gr_data, gr_cache = "rationale_cache.jsonl", gr_provider = "oracle";
  int gr_in_flight = 4;
  double gr_rps = 0.0;
  auto* cmd_gr =
      app.add_subcommand("generate-rationales", "Fill the rationale cache for a dataset");
  cmd_gr->add_option("--data", gr_data, "Ingested dataset directory")->required();
  cmd_gr->add_option("--cache", gr_cache, "Rationale cache file (JSONL, appended)");
  cmd_gr->add_option("--provider", gr_provider, "oracle or http");
  cmd_gr->add_option("--max-in-flight", gr_in_flight, "Concurrent provider requests");
  cmd_gr->add_option("--requests-per-sec", gr_rps, "Provider rate limit (0 = unlimited)");

  // shared train/ablate options --------------------------------------------
  auto add_run_options = [](CLI::App* cmd, std::optional<std::string>& config_path,
                            std::map<std::string, std::string>& overrides,
                            std::vector<std::string>& ablation_flags, bool& no_stage2) {
    cmd->add_option("--config", config_path, "Run config file (key = value lines)");
    static const std::vector<std::string> keys = {
        "data_dir",      "out_dir",       "alpha",          "beta",
        "tau",           "memory_size",   "n_tasks",        "epochs_stage1",
        "epochs_stage2", "learning_rate", "batch_size",     "seeds",
        "backbone",      "worker_command", "provider",      "rationale_cache",
        "max_in_flight", "requests_per_sec"};
    for (const auto& key : keys) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      cmd->add_option_function<std::string>(
          flag, [&overrides, key](const std::string& v) { overrides[key] = v; },
          "Override config key " + key);
    }
    cmd->add_option("--ablation", ablation_flags, "Ablation flag (repeatable)");
    cmd->add_flag("--no-stage2", no_stage2, "Disable the replay stage entirely");
  };

  auto build_spec = [](const std::optional<std::string>& config_path,
                       const std::map<std::string, std::string>& overrides,
                       const std::vector<std::string>& ablation_flags, bool no_stage2) {
    std::string text = config_path ? crex::read_file(*config_path) : std::string();
    for (const auto& [key, value] : overrides) text += "\n" + key + " = " + value;
    crex::RunSpec spec = crex::parse_run_spec(text);
    for (const auto& flag : ablation_flags)
      spec.cfg.ablation.insert(crex::ablation_from_string(flag));
    if (no_stage2) spec.stage2_enabled = false;
    if (spec.data_dir.empty())
      throw crex::ValidationError("data_dir is required (config key or --data-dir)");
    return spec;
  };

  std::optional<std::string> train_config;
  std::map<std::string, std::string> train_overrides;
  std::vector<std::string> train_ablation;
  bool train_no_stage2 = false;
  auto* cmd_train = app.add_subcommand("train", "Run the multi-seed continual experiment");
  add_run_options(cmd_train, train_config, train_overrides, train_ablation,
                  train_no_stage2);

  // evaluate ----------------------------------------------------------------
  std::string ev_model, ev_data, ev_split = "test", ev_worker;
  bool ev_f1 = false;
  auto* cmd_eval = app.add_subcommand("evaluate", "Score a saved checkpoint on a split");
  cmd_eval->add_option("--model", ev_model, "Checkpoint directory")->required();
  cmd_eval->add_option("--data", ev_data, "Ingested dataset directory")->required();
  cmd_eval->add_option("--split", ev_split, "train, val or test");
  cmd_eval->add_flag("--f1", ev_f1, "Also print per-label precision/recall/F1");
  cmd_eval->add_option("--worker-command", ev_worker,
                       "Worker launch command for worker-family checkpoints");

  // ablate ------------------------------------------------------------------
  std::optional<std::string> ab_config;
  std::map<std::string, std::string> ab_overrides;
  std::vector<std::string> ab_ablation;
  bool ab_no_stage2 = false;
  std::vector<std::string> ab_flags;
  auto* cmd_ablate = app.add_subcommand("ablate", "One experiment per ablation flag");
  add_run_options(cmd_ablate, ab_config, ab_overrides, ab_ablation, ab_no_stage2);
  cmd_ablate
      ->add_option("--flags", ab_flags,
                   "Arms to run: ablation names and/or 'none' (comma separated)")
      ->required()
      ->delimiter(',');

  // llm-baseline ------------------------------------------------------------
  std::string lb_data, lb_split = "test", lb_provider = "http", lb_out;
  int lb_limit = 0, lb_attempts = 5;
  auto* cmd_lb =
      app.add_subcommand("llm-baseline", "Zero-shot classification via the provider");
  cmd_lb->add_option("--data", lb_data, "Ingested dataset directory")->required();
  cmd_lb->add_option("--split", lb_split, "train, val or test");
  cmd_lb->add_option("--limit", lb_limit, "Evaluate only the first N instances");
  cmd_lb->add_option("--provider", lb_provider, "http, oracle or zero-shot-oracle");
  cmd_lb->add_option("--max-attempts", lb_attempts, "Regeneration cap per instance");
  cmd_lb->add_option("--out", lb_out, "Write a JSON report here");

  // report ------------------------------------------------------------------
  std::string rp_out;
  auto* cmd_report = app.add_subcommand("report", "Rebuild result tables from traces");
  cmd_report->add_option("--out", rp_out, "Experiment output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (cmd_ingest->parsed()) return run_ingest(ingest);
    if (cmd_gr->parsed())
      return run_generate_rationales(gr_data, gr_cache, gr_provider, gr_in_flight, gr_rps);
    if (cmd_train->parsed())
      return run_train(
          build_spec(train_config, train_overrides, train_ablation, train_no_stage2));
    if (cmd_eval->parsed())
      return run_evaluate(ev_model, ev_data, ev_split, ev_f1, ev_worker);
    if (cmd_ablate->parsed())
      return run_ablate(build_spec(ab_config, ab_overrides, ab_ablation, ab_no_stage2),
                        ab_flags);
    if (cmd_lb->parsed())
      return run_llm_baseline(lb_data, lb_split, lb_limit, lb_provider, lb_attempts, lb_out);
    if (cmd_report->parsed()) return run_report(rp_out);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const crex::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
