#pragma once

// Stage-2 replay: find analogous relation pairs among the memory exemplars,
// regenerate contrastive rationales for relations that have analogues, and
// retrain on the memory with the same multi-task objective. Ablation flags
// steer which rationale (plain or contrastive) feeds which view.

#include <map>
#include <string>
#include <vector>

#include "crex/formatting.hpp"
#include "crex/memory.hpp"
#include "crex/rationale_service.hpp"
#include "crex/similarity.hpp"
#include "crex/trainer.hpp"

namespace crex {

struct ReplayPlan {
  bool contrastive_for_rationale_view = true;
  bool contrastive_for_deduction_view = true;
  bool deduction_enabled = true;
  bool regenerate = true;  // whether contrastive rationales are produced at all
};

// The flag algebra in one place so training and formatting cannot drift
// apart. When no view would consume a contrastive rationale, regeneration is
// skipped entirely — disabling both views is the same run as disabling
// contrastive replay.
inline ReplayPlan make_replay_plan(const ExperimentConfig& cfg) {
  ReplayPlan plan;
  plan.deduction_enabled = !cfg.has(Ablation::no_deduction_task);
  const bool replay_off = cfg.has(Ablation::no_contrastive_replay);
  plan.contrastive_for_rationale_view =
      !replay_off && !cfg.has(Ablation::no_contrastive_rationale_view);
  plan.contrastive_for_deduction_view =
      !replay_off && !cfg.has(Ablation::no_contrastive_deduction_view);
  if (!plan.deduction_enabled) plan.contrastive_for_deduction_view = false;
  plan.regenerate =
      plan.contrastive_for_rationale_view || plan.contrastive_for_deduction_view;
  return plan;
}

// Regenerates contrastive rationales for every memory entry whose relation
// has at least one analogue. Entries of relations without analogues keep only
// their plain rationale. Returns the number of contrastive rationales now
// present (cache hits included).
inline int regenerate_contrastive_rationales(
    EpisodicMemory& memory, const std::map<std::string, std::vector<std::string>>& analogous,
    const LabelSpace& space, Provider& provider, RationaleCache& cache,
    const GenerateOptions& opts = {}) {
  int produced = 0;
  for (const auto& relation : memory.relations()) {
    auto it = analogous.find(relation);
    if (it == analogous.end() || it->second.empty()) continue;
    std::vector<std::string> analogous_verbalizations;
    analogous_verbalizations.reserve(it->second.size());
    for (const auto& other : it->second)
      analogous_verbalizations.push_back(space.verbalization_of(other));
    for (auto& entry : memory.mutable_entries(relation)) {
      const GenerateResult result = generate_contrastive_rationale(
          entry.instance, space, analogous_verbalizations, provider, &cache, opts);
      entry.contrastive_rationale = result.record.rationale_text;
      ++produced;
    }
  }
  return produced;
}

// Formats the whole memory for stage-2 training. Each entry yields one
// multitask example; per-view rationale choice follows the plan, falling back
// to the plain rationale when no contrastive one exists (relations without
// analogues never get one).
inline std::vector<MultitaskExample> format_replay_examples(const EpisodicMemory& memory,
                                                            const LabelSpace& space,
                                                            const ReplayPlan& plan) {
  std::vector<MultitaskExample> examples;
  examples.reserve(memory.total_entries());
  for (const auto* entry : memory.all_entries()) {
    const bool has_cr = !entry->contrastive_rationale.empty();
    const std::string& for_rationale =
        (plan.contrastive_for_rationale_view && has_cr) ? entry->contrastive_rationale
                                                        : entry->rationale;
    const std::string& for_deduction =
        (plan.contrastive_for_deduction_view && has_cr) ? entry->contrastive_rationale
                                                        : entry->rationale;
    MultitaskExample ex;
    ex.answer = format_answer_example(entry->instance, space);
    ex.rationale = format_rationale_example(entry->instance, space, for_rationale);
    if (plan.deduction_enabled) {
      ex.deduction = format_deduction_example(entry->instance, space, for_deduction);
      ex.has_deduction = true;
    } else {
      ex.has_deduction = false;
    }
    examples.push_back(std::move(ex));
  }
  return examples;
}

inline TrainStats train_replay_stage(Backbone& backbone, const EpisodicMemory& memory,
                                     const LabelSpace& space, const ReplayPlan& plan,
                                     TrainOptions opt, LossLogger* logger = nullptr) {
  opt.stage = 2;
  opt.deduction_enabled = plan.deduction_enabled;
  return train_multitask(backbone, format_replay_examples(memory, space, plan), opt,
                         logger);
}

}  // namespace crex
