#pragma once

// The continual loop. For each task in the sequence: stage-1 multi-task
// training on the task's new relations, exemplar selection into episodic
// memory, analogous-relation detection over the memory, contrastive
// regeneration, stage-2 replay, then evaluation on the cumulative test set of
// every relation seen so far.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "crex/eval.hpp"
#include "crex/replay.hpp"

namespace crex {

struct ContinualOptions {
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  bool stage2_enabled = true;       // the no-replay arm of the replay experiment
  std::filesystem::path out_dir;    // empty disables per-task checkpoints
};

struct TaskOutcome {
  int task_index = 0;
  std::vector<std::string> new_relations;
  int seen_labels = 0;
  EvalResult eval;
  TrainStats stage1;
  TrainStats stage2;
  std::map<std::string, std::vector<std::string>> analogous;
  int contrastive_rationales = 0;
};

struct RunTrace {
  std::uint64_t seed = 0;
  std::vector<TaskOutcome> tasks;
  double final_accuracy = 0.0;
};

namespace detail {

inline void write_task_checkpoint(const std::filesystem::path& dir, const Backbone& backbone,
                                  const EpisodicMemory& memory, const TaskOutcome& outcome) {
  std::filesystem::create_directories(dir);
  backbone.save(dir / "model");
  memory.save(dir / "memory.json");
  nlohmann::json analogous = nlohmann::json::object();
  for (const auto& [relation, list] : outcome.analogous) analogous[relation] = list;
  write_file(dir / "analogous.json", analogous.dump(2) + "\n");
  nlohmann::json eval{{"task_index", outcome.task_index},
                      {"seen_labels", outcome.seen_labels},
                      {"accuracy", outcome.eval.accuracy},
                      {"correct", outcome.eval.correct},
                      {"total", outcome.eval.total},
                      {"no_match", outcome.eval.no_match},
                      {"new_relations", outcome.new_relations}};
  write_file(dir / "eval.json", eval.dump(2) + "\n");
}

}  // namespace detail

// `rationales` maps instance id -> plain rationale text and must cover every
// training instance of every relation in the sequence.
inline RunTrace run_continual(Backbone& backbone, const std::vector<RelationInstance>& train,
                              const std::vector<RelationInstance>& test,
                              const TaskSequence& sequence, const LabelSpace& full_space,
                              const std::map<std::string, std::string>& rationales,
                              Provider& provider, RationaleCache& cache,
                              const ContinualOptions& opt, LossLogger* logger = nullptr) {
  if (sequence.tasks.empty()) throw Error("empty task sequence");
  const auto train_by_relation = detail::group_by_relation(train);
  const auto test_by_relation = detail::group_by_relation(test);
  const ReplayPlan plan = make_replay_plan(opt.cfg);

  RunTrace trace;
  trace.seed = opt.seed;
  EpisodicMemory memory;
  std::set<std::string> seen;

  for (std::size_t k = 0; k < sequence.tasks.size(); ++k) {
    try {
      TaskOutcome outcome;
      outcome.task_index = static_cast<int>(k);
      outcome.new_relations = sequence.tasks[k];
      for (const auto& relation : sequence.tasks[k]) {
        if (!train_by_relation.count(relation))
          throw Error("no training instances for relation: " + relation);
        seen.insert(relation);
      }
      const LabelSpace space_seen = full_space.restrict(seen);
      outcome.seen_labels = static_cast<int>(seen.size());

      // Stage 1: multi-task training on this task's data.
      std::vector<RelationInstance> task_train;
      for (const auto& relation : sequence.tasks[k]) {
        const auto& group = train_by_relation.at(relation);
        task_train.insert(task_train.end(), group.begin(), group.end());
      }
      TrainOptions stage1;
      stage1.alpha = opt.cfg.alpha;
      stage1.beta = opt.cfg.beta;
      stage1.learning_rate = opt.cfg.learning_rate;
      stage1.epochs = opt.cfg.epochs_stage1;
      stage1.batch_size = opt.cfg.batch_size;
      stage1.seed = mix_seed(opt.seed, "stage1-task-" + std::to_string(k));
      stage1.deduction_enabled = plan.deduction_enabled;
      stage1.stage = 1;
      stage1.task_index = static_cast<int>(k);
      outcome.stage1 =
          train_on_instances(backbone, task_train, rationales, space_seen, stage1, logger);

      // Exemplar selection for the relations introduced by this task.
      for (const auto& relation : sequence.tasks[k])
        memory.add_relation(relation, train_by_relation.at(relation), rationales, backbone,
                            opt.cfg.memory_size, opt.seed);

      // Stage 2: contrastive regeneration (when any view wants it) + replay.
      if (opt.stage2_enabled) {
        if (plan.regenerate && memory.relations().size() >= 2) {
          const auto means = memory_mean_embeddings(memory, backbone);
          const SimilarityTable table = compute_similarity_table(means);
          outcome.analogous = analogous_relations(table, opt.cfg.tau);
          outcome.contrastive_rationales = regenerate_contrastive_rationales(
              memory, outcome.analogous, space_seen, provider, cache);
        }
        TrainOptions stage2 = stage1;
        stage2.epochs = opt.cfg.epochs_stage2;
        stage2.seed = mix_seed(opt.seed, "stage2-task-" + std::to_string(k));
        stage2.stage = 2;
        outcome.stage2 =
            train_replay_stage(backbone, memory, space_seen, plan, stage2, logger);
      }

      // Cumulative evaluation over everything seen so far.
      std::vector<RelationInstance> cumulative_test;
      for (const auto& relation : seen) {
        auto it = test_by_relation.find(relation);
        if (it == test_by_relation.end())
          throw Error("no test instances for relation: " + relation);
        cumulative_test.insert(cumulative_test.end(), it->second.begin(), it->second.end());
      }
      outcome.eval = evaluate_accuracy(backbone, cumulative_test, space_seen);

      if (!opt.out_dir.empty())
        detail::write_task_checkpoint(opt.out_dir / ("task_" + std::to_string(k)),
                                      backbone, memory, outcome);
      trace.tasks.push_back(std::move(outcome));
    } catch (const Error& e) {
      throw Error("task " + std::to_string(k) + ": " + e.what());
    }
  }
  trace.final_accuracy = trace.tasks.back().eval.accuracy;
  return trace;
}

}  // namespace crex
