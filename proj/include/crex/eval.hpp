#pragma once

// Evaluation. Classification happens by generation: greedy-decode an answer
// for the question, normalize it, and exact-match against the verbalizations
// of the labels seen so far. Anything else maps to the reserved NO_MATCH
// label, which is never a gold label and therefore always scores as wrong.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "crex/backbone.hpp"
#include "crex/core.hpp"
#include "crex/prompts.hpp"

namespace crex {

inline const std::string kNoMatchLabel = "__no_match__";

// Greedy classification of a batch of instances against `space` (the labels
// seen so far). Returns one predicted label (or kNoMatchLabel) per instance.
inline std::vector<std::string> classify(Backbone& backbone,
                                         const std::vector<RelationInstance>& instances,
                                         const LabelSpace& space, int chunk_size = 64) {
  backbone.set_training(false);
  std::vector<std::string> predictions;
  predictions.reserve(instances.size());
  for (std::size_t start = 0; start < instances.size();
       start += static_cast<std::size_t>(chunk_size)) {
    const std::size_t stop =
        std::min(instances.size(), start + static_cast<std::size_t>(chunk_size));
    std::vector<std::string> questions;
    questions.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i)
      questions.push_back(render_question(instances[i]));
    for (const auto& output : backbone.generate(questions)) {
      const std::string answer = normalize_answer(output);
      predictions.push_back(space.label_of_answer(answer).value_or(kNoMatchLabel));
    }
  }
  return predictions;
}

struct EvalResult {
  int total = 0;
  int correct = 0;
  double accuracy = 0.0;
  int no_match = 0;  // predictions that matched no seen verbalization
};

inline EvalResult evaluate_accuracy(Backbone& backbone,
                                    const std::vector<RelationInstance>& instances,
                                    const LabelSpace& space) {
  if (instances.empty()) throw Error("evaluate_accuracy: empty evaluation set");
  const std::vector<std::string> predictions = classify(backbone, instances, space);
  EvalResult result;
  result.total = static_cast<int>(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (predictions[i] == instances[i].relation) ++result.correct;
    if (predictions[i] == kNoMatchLabel) ++result.no_match;
  }
  result.accuracy = static_cast<double>(result.correct) / result.total;
  return result;
}

struct LabelScore {
  int support = 0;  // gold occurrences
  int tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct F1Report {
  std::map<std::string, LabelScore> per_label;  // keyed by gold labels
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
};

// Per-label precision/recall/F1 over (gold, predicted) pairs. Labels are the
// gold ones; predictions outside that set (including NO_MATCH) only count as
// false negatives for the gold they displaced. An undefined ratio (0/0) is
// scored as 0.
inline F1Report f1_scores(const std::vector<std::string>& golds,
                          const std::vector<std::string>& predictions) {
  if (golds.size() != predictions.size()) throw Error("f1_scores: length mismatch");
  if (golds.empty()) throw Error("f1_scores: empty input");
  F1Report report;
  for (const auto& g : golds) ++report.per_label[g].support;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (predictions[i] == golds[i]) {
      ++report.per_label[golds[i]].tp;
    } else {
      ++report.per_label[golds[i]].fn;
      auto it = report.per_label.find(predictions[i]);
      if (it != report.per_label.end()) ++it->second.fp;
    }
  }
  int tp_total = 0, fp_total = 0, fn_total = 0;
  for (auto& [label, s] : report.per_label) {
    s.precision = (s.tp + s.fp) ? static_cast<double>(s.tp) / (s.tp + s.fp) : 0.0;
    s.recall = (s.tp + s.fn) ? static_cast<double>(s.tp) / (s.tp + s.fn) : 0.0;
    s.f1 = (s.precision + s.recall) > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    report.macro_f1 += s.f1;
    tp_total += s.tp;
    fp_total += s.fp;
    fn_total += s.fn;
  }
  report.macro_f1 /= static_cast<double>(report.per_label.size());
  const double micro_p =
      (tp_total + fp_total) ? static_cast<double>(tp_total) / (tp_total + fp_total) : 0.0;
  const double micro_r =
      (tp_total + fn_total) ? static_cast<double>(tp_total) / (tp_total + fn_total) : 0.0;
  report.micro_f1 =
      (micro_p + micro_r) > 0.0 ? 2.0 * micro_p * micro_r / (micro_p + micro_r) : 0.0;
  return report;
}

}  // namespace crex
