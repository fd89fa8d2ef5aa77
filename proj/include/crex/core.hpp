#pragma once

// Domain types shared across the library: labeled relation instances,
// rationale records, label spaces, task sequences and the experiment
// configuration. Values are immutable after construction/validation and
// safe to share across threads.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "crex/util.hpp"

namespace crex {

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Canonical phrase form: lowercase, '_' and ':' become spaces, whitespace
// runs collapse, ends trimmed. Relation labels are verbalized with this
// exact mapping (e.g. "org:founded_by" -> "org founded by").
inline std::string normalize_phrase(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char raw : s) {
    char c = raw;
    if (c == '_' || c == ':') c = ' ';
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

inline std::string verbalize_label(std::string_view label) { return normalize_phrase(label); }

// Normal form for generated answers: phrase normalization plus stripping of
// surrounding quotes and trailing sentence punctuation. Idempotent.
inline std::string normalize_answer(std::string_view s) {
  std::string out = normalize_phrase(s);
  while (!out.empty() && (out.back() == '.' || out.back() == '"' || is_space(out.back())))
    out.pop_back();
  while (!out.empty() && out.front() == '"') out.erase(out.begin());
  return out;
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

// Character span [begin, end) into the owning sentence.
struct Mention {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct RelationInstance {
  std::string id;        // unique within a dataset, stable across runs
  std::string text;      // the sentence
  Mention head;
  Mention tail;
  std::string relation;  // label, not verbalization
};

// Checks span bounds, span consistency and head/tail distinctness. Label
// membership is checked by the overload taking a LabelSpace.
inline void validate_instance(const RelationInstance& inst) {
  auto check_span = [&](const Mention& m, const char* which) {
    if (m.begin >= m.end || m.end > inst.text.size())
      throw ValidationError("instance " + inst.id + ": " + which + " span out of bounds");
    if (!m.text.empty() && inst.text.substr(m.begin, m.end - m.begin) != m.text)
      throw ValidationError("instance " + inst.id + ": " + which +
                            " surface does not match its span");
  };
  if (inst.id.empty()) throw ValidationError("instance with empty id");
  if (inst.text.empty()) throw ValidationError("instance " + inst.id + ": empty text");
  check_span(inst.head, "head");
  check_span(inst.tail, "tail");
  if (inst.head.begin == inst.tail.begin && inst.head.end == inst.tail.end)
    throw ValidationError("instance " + inst.id + ": head and tail spans identical");
}

// ---------------------------------------------------------------------------
// Label space
// ---------------------------------------------------------------------------

class LabelSpace {
 public:
  LabelSpace() = default;

  // Builds the verbalization map and rejects labels whose verbalizations
  // collide after normalization.
  static LabelSpace make(const std::set<std::string>& labels) {
    LabelSpace space;
    for (const auto& label : labels) {
      std::string verb = verbalize_label(label);
      if (verb.empty())
        throw ValidationError("label '" + label + "' verbalizes to the empty string");
      auto [it, fresh] = space.by_verbalization_.emplace(verb, label);
      if (!fresh)
        throw ValidationError("labels '" + it->second + "' and '" + label +
                              "' share verbalization '" + verb + "'");
      space.verbalizations_.emplace(label, verb);
    }
    return space;
  }

  bool contains(const std::string& label) const { return verbalizations_.count(label) > 0; }
  std::size_t size() const { return verbalizations_.size(); }
  bool empty() const { return verbalizations_.empty(); }

  const std::string& verbalization_of(const std::string& label) const {
    auto it = verbalizations_.find(label);
    if (it == verbalizations_.end()) throw Error("unknown label: " + label);
    return it->second;
  }

  // Reverse lookup from a normalized answer. Empty optional when the phrase
  // matches no label in this space.
  std::optional<std::string> label_of_answer(std::string_view answer) const {
    auto it = by_verbalization_.find(normalize_answer(answer));
    if (it == by_verbalization_.end()) return std::nullopt;
    return it->second;
  }

  // Sorted label list; iteration order is deterministic everywhere.
  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    out.reserve(verbalizations_.size());
    for (const auto& [label, verb] : verbalizations_) out.push_back(label);
    return out;
  }

  std::vector<std::string> verbalizations() const {
    std::vector<std::string> out;
    out.reserve(verbalizations_.size());
    for (const auto& [label, verb] : verbalizations_) out.push_back(verb);
    return out;
  }

  // Restriction to a label subset (used for the cumulative seen-label space).
  LabelSpace restrict(const std::set<std::string>& labels) const {
    std::set<std::string> present;
    for (const auto& label : labels) {
      if (!contains(label)) throw Error("restrict: unknown label " + label);
      present.insert(label);
    }
    return make(present);
  }

 private:
  std::map<std::string, std::string> verbalizations_;    // label -> phrase
  std::map<std::string, std::string> by_verbalization_;  // phrase -> label
};

inline void validate_instance(const RelationInstance& inst, const LabelSpace& space) {
  validate_instance(inst);
  if (!space.contains(inst.relation))
    throw ValidationError("instance " + inst.id + ": relation '" + inst.relation +
                          "' not in label space");
}

// ---------------------------------------------------------------------------
// Rationales
// ---------------------------------------------------------------------------

enum class RationaleKind { plain, contrastive };

inline const char* to_string(RationaleKind k) {
  return k == RationaleKind::plain ? "plain" : "contrastive";
}

inline RationaleKind rationale_kind_from_string(std::string_view s) {
  if (s == "plain") return RationaleKind::plain;
  if (s == "contrastive") return RationaleKind::contrastive;
  throw ValidationError("unknown rationale kind: " + std::string(s));
}

// One generated explanation, bound to the instance it explains and to the
// digest of the exact prompt that produced it. `rationale_text` is the
// explanation body; the closing "Therefore, the answer is: ..." sentence is
// reattached by the task formatter.
struct RationaleRecord {
  std::string instance_id;
  RationaleKind kind = RationaleKind::plain;
  std::string rationale_text;
  std::string answer_text;  // the verbalization the rationale concludes with
  std::string prompt_hash;
  std::string provider;
};

// Answer consistency: the concluding answer must name the instance's gold
// relation. Enforced at generation time and checkable anywhere.
inline void validate_rationale(const RationaleRecord& rec, const RelationInstance& inst,
                               const LabelSpace& space) {
  if (rec.instance_id != inst.id)
    throw ValidationError("rationale bound to " + rec.instance_id + ", expected " + inst.id);
  if (normalize_answer(rec.answer_text) != space.verbalization_of(inst.relation))
    throw ValidationError("rationale for " + inst.id + " concludes '" + rec.answer_text +
                          "' but gold relation is '" + inst.relation + "'");
}

// ---------------------------------------------------------------------------
// Task sequences
// ---------------------------------------------------------------------------

// A seeded partition of the label space into n ordered disjoint subsets.
struct TaskSequence {
  std::uint64_t seed = 0;
  std::vector<std::vector<std::string>> tasks;
};

inline void validate_task_sequence(const TaskSequence& seq, const LabelSpace& space) {
  std::set<std::string> seen;
  for (const auto& task : seq.tasks) {
    if (task.empty()) throw ValidationError("task sequence contains an empty task");
    for (const auto& label : task) {
      if (!space.contains(label))
        throw ValidationError("task sequence references unknown label " + label);
      if (!seen.insert(label).second)
        throw ValidationError("label " + label + " appears in two tasks");
    }
  }
  if (seen.size() != space.size())
    throw ValidationError("task sequence does not cover the label space");
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

// Ablation switches:
//   no_deduction_task           drop the question+rationale -> label view from
//                               the multi-task objective (its weight moves to
//                               the rationale view)
//   no_contrastive_replay       replay never regenerates rationales; both
//                               replay views use the stored plain rationale
//   no_contrastive_rationale_view   replay's rationale view uses the plain
//                               rationale while the deduction view keeps the
//                               contrastive one
//   no_contrastive_deduction_view   the mirror image of the above
enum class Ablation {
  no_deduction_task,
  no_contrastive_replay,
  no_contrastive_rationale_view,
  no_contrastive_deduction_view,
};

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::no_deduction_task: return "no_deduction_task";
    case Ablation::no_contrastive_replay: return "no_contrastive_replay";
    case Ablation::no_contrastive_rationale_view: return "no_contrastive_rationale_view";
    case Ablation::no_contrastive_deduction_view: return "no_contrastive_deduction_view";
  }
  return "?";
}

inline Ablation ablation_from_string(std::string_view s) {
  if (s == "no_deduction_task") return Ablation::no_deduction_task;
  if (s == "no_contrastive_replay") return Ablation::no_contrastive_replay;
  if (s == "no_contrastive_rationale_view") return Ablation::no_contrastive_rationale_view;
  if (s == "no_contrastive_deduction_view") return Ablation::no_contrastive_deduction_view;
  throw ValidationError("unknown ablation flag: " + std::string(s));
}

// Inclusive sweep range, step > 0. Kept in config so sweep tooling does not
// hardcode the search space.
struct GridRange {
  double lo = 0.0;
  double hi = 0.0;
  double step = 0.1;
};

struct ExperimentConfig {
  double alpha = 0.6;  // weight of the question->answer loss
  double beta = 0.5;   // split between rationale-answer and rationale-input losses
  double tau = 0.97;   // cosine similarity threshold for analogous relations
  int memory_size = 10;
  int n_tasks = 10;
  int epochs_stage1 = 10;
  int epochs_stage2 = 10;
  double learning_rate = 1e-4;
  int batch_size = 32;
  std::vector<std::uint64_t> seeds = {42, 43, 44, 45, 46};
  std::set<Ablation> ablation;

  GridRange alpha_grid{0.4, 0.9, 0.1};
  GridRange beta_grid{0.4, 0.6, 0.1};
  GridRange tau_grid{0.95, 0.99, 0.01};

  bool has(Ablation a) const { return ablation.count(a) > 0; }
};

// Returns the config unchanged when every field invariant holds; otherwise
// raises one ValidationError naming every violated bound.
inline ExperimentConfig validate_config(const ExperimentConfig& cfg) {
  std::vector<std::string> faults;
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(cfg.alpha)) faults.push_back("alpha out of [0,1]");
  if (!in_unit(cfg.beta)) faults.push_back("beta out of [0,1]");
  if (cfg.tau < -1.0 || cfg.tau > 1.0) faults.push_back("tau out of [-1,1]");
  if (cfg.memory_size < 1) faults.push_back("memory_size must be >= 1");
  if (cfg.n_tasks < 1) faults.push_back("n_tasks must be >= 1");
  if (cfg.epochs_stage1 < 1) faults.push_back("epochs_stage1 must be >= 1");
  if (cfg.epochs_stage2 < 1) faults.push_back("epochs_stage2 must be >= 1");
  if (!(cfg.learning_rate > 0.0)) faults.push_back("learning_rate must be > 0");
  if (cfg.batch_size < 1) faults.push_back("batch_size must be >= 1");
  if (cfg.seeds.empty()) faults.push_back("seeds must be nonempty");
  for (const auto* grid : {&cfg.alpha_grid, &cfg.beta_grid, &cfg.tau_grid}) {
    if (grid->lo > grid->hi || !(grid->step > 0.0)) {
      faults.push_back("grid range must satisfy lo <= hi and step > 0");
      break;
    }
  }
  if (!faults.empty()) throw ValidationError("invalid config: " + join(faults, "; "));
  return cfg;
}

}  // namespace crex
