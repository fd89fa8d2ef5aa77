#pragma once

// Turns relation instances (plus their rationales) into the three seq2seq
// training views:
//   answer view   : question                    -> verbalized label
//   rationale view: question                    -> rationale + closing answer sentence
//   deduction view: question + "\n" + rationale -> verbalized label
// The rationale view's target parses back through parse_completion, so the
// closing-sentence convention stays consistent in both directions.

#include <string>
#include <vector>

#include "crex/core.hpp"
#include "crex/prompts.hpp"

namespace crex {

struct TrainingExample {
  std::string input;
  std::string target;
};

// Target string for the rationale view; reattaches the closing sentence the
// parser strips off.
inline std::string rationale_target(const std::string& rationale_text,
                                    const std::string& verbalization) {
  if (trim(rationale_text).empty()) throw ValidationError("empty rationale");
  if (trim(verbalization).empty()) throw ValidationError("empty verbalization");
  return trim(rationale_text) + " " + std::string(kAnswerSentinel) + " " + verbalization + ".";
}

inline TrainingExample format_answer_example(const RelationInstance& inst,
                                             const LabelSpace& space) {
  return {render_question(inst), space.verbalization_of(inst.relation)};
}

inline TrainingExample format_rationale_example(const RelationInstance& inst,
                                                const LabelSpace& space,
                                                const std::string& rationale_text) {
  return {render_question(inst),
          rationale_target(rationale_text, space.verbalization_of(inst.relation))};
}

inline TrainingExample format_deduction_example(const RelationInstance& inst,
                                                const LabelSpace& space,
                                                const std::string& rationale_text) {
  if (trim(rationale_text).empty()) throw ValidationError("empty rationale");
  return {render_question(inst) + "\n" + trim(rationale_text),
          space.verbalization_of(inst.relation)};
}

// One instance expanded into its task views. `has_deduction` is false when
// the deduction task is ablated away.
struct MultitaskExample {
  TrainingExample answer;
  TrainingExample rationale;
  TrainingExample deduction;
  bool has_deduction = true;
};

inline MultitaskExample format_multitask_example(const RelationInstance& inst,
                                                 const LabelSpace& space,
                                                 const std::string& rationale_text,
                                                 bool include_deduction = true) {
  MultitaskExample ex;
  ex.answer = format_answer_example(inst, space);
  ex.rationale = format_rationale_example(inst, space, rationale_text);
  if (include_deduction) {
    ex.deduction = format_deduction_example(inst, space, rationale_text);
    ex.has_deduction = true;
  } else {
    ex.has_deduction = false;
  }
  return ex;
}

}  // namespace crex
