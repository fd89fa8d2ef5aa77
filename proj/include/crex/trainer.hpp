#pragma once

// Multi-task trainer. The combined objective is
//   L = alpha * L_answer + (1 - alpha) * (beta * L_rationale + (1 - beta) * L_deduction)
// and the backbone's training_step(batch, weight) contract makes that exact:
// each view's batch is pushed with its closed-form weight, then one optimizer
// step applies the combined gradient.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crex/backbone.hpp"
#include "crex/formatting.hpp"
#include "crex/util.hpp"

namespace crex {

// Scalar combination used for reporting; training applies the same weights at
// the gradient level.
inline double combine_losses(double answer_loss, double rationale_loss,
                             double deduction_loss, double alpha, double beta) {
  for (double l : {answer_loss, rationale_loss, deduction_loss})
    if (!(l >= 0.0) || !std::isfinite(l))
      throw ValidationError("loss must be finite and nonnegative");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha out of [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValidationError("beta out of [0, 1]");
  return alpha * answer_loss +
         (1.0 - alpha) * (beta * rationale_loss + (1.0 - beta) * deduction_loss);
}

// Appends one JSON line per logged record; safe to point several training
// phases at the same file.
class LossLogger {
 public:
  explicit LossLogger(const std::filesystem::path& path)
      : out_(path, std::ios::app) {
    if (!out_) throw Error("cannot open loss log: " + path.string());
  }

  void log(int stage, int task_index, int epoch, const std::string& view,
           double mean_loss) {
    nlohmann::json j{{"stage", stage},
                     {"task_index", task_index},
                     {"epoch", epoch},
                     {"view", view},
                     {"mean_loss", mean_loss}};
    out_ << j.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

struct TrainOptions {
  double alpha = 0.6;
  double beta = 0.5;
  double learning_rate = 1e-4;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;
  bool deduction_enabled = true;  // false redistributes beta's complement to the rationale view
  int stage = 1;                  // label for the loss log
  int task_index = 0;
};

struct TrainStats {
  int epochs = 0;
  int batches = 0;
  int examples = 0;
  double final_answer_loss = 0.0;
  double final_rationale_loss = 0.0;
  double final_deduction_loss = 0.0;
  double final_combined_loss = 0.0;
};

// Epoch-shuffled minibatch training over pre-formatted multitask examples.
inline TrainStats train_multitask(Backbone& backbone,
                                  const std::vector<MultitaskExample>& examples,
                                  const TrainOptions& opt, LossLogger* logger = nullptr) {
  if (examples.empty()) throw Error("empty training set");
  if (opt.epochs < 1) throw ValidationError("epochs must be >= 1");
  if (opt.batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (!(opt.alpha >= 0.0 && opt.alpha <= 1.0)) throw ValidationError("alpha out of [0, 1]");
  if (!(opt.beta >= 0.0 && opt.beta <= 1.0)) throw ValidationError("beta out of [0, 1]");

  const double beta_eff = opt.deduction_enabled ? opt.beta : 1.0;
  const double w_answer = opt.alpha;
  const double w_rationale = (1.0 - opt.alpha) * beta_eff;
  const double w_deduction = (1.0 - opt.alpha) * (1.0 - beta_eff);

  backbone.set_training(true);
  TrainStats stats;
  stats.examples = static_cast<int>(examples.size());

  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    seeded_shuffle(order, mix_seed(opt.seed, "epoch-" + std::to_string(epoch)));
    double sum_answer = 0.0, sum_rationale = 0.0, sum_deduction = 0.0;
    std::size_t n_answer = 0, n_rationale = 0, n_deduction = 0;

    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      SeqBatch answer, rationale, deduction;
      for (std::size_t i = start; i < stop; ++i) {
        const MultitaskExample& ex = examples[order[i]];
        answer.inputs.push_back(ex.answer.input);
        answer.targets.push_back(ex.answer.target);
        rationale.inputs.push_back(ex.rationale.input);
        rationale.targets.push_back(ex.rationale.target);
        if (opt.deduction_enabled && ex.has_deduction) {
          deduction.inputs.push_back(ex.deduction.input);
          deduction.targets.push_back(ex.deduction.target);
        }
      }

      // Zero-weight views contribute no gradient, so their passes are skipped
      // outright; the loss log then only shows views that shaped the update.
      auto run_view = [&](const SeqBatch& batch, double weight, double& sum,
                          std::size_t& n) {
        if (batch.inputs.empty() || weight <= 0.0) return;
        const auto losses = backbone.training_step(batch, weight);
        for (double l : losses) sum += l;
        n += losses.size();
      };
      run_view(answer, w_answer, sum_answer, n_answer);
      run_view(rationale, w_rationale, sum_rationale, n_rationale);
      run_view(deduction, w_deduction, sum_deduction, n_deduction);

      backbone.optimizer_step(opt.learning_rate);
      ++stats.batches;
    }

    stats.final_answer_loss = n_answer ? sum_answer / n_answer : 0.0;
    stats.final_rationale_loss = n_rationale ? sum_rationale / n_rationale : 0.0;
    stats.final_deduction_loss = n_deduction ? sum_deduction / n_deduction : 0.0;
    stats.final_combined_loss =
        combine_losses(stats.final_answer_loss, stats.final_rationale_loss,
                       stats.final_deduction_loss, opt.alpha, beta_eff);
    if (logger) {
      if (n_answer)
        logger->log(opt.stage, opt.task_index, epoch, "answer", stats.final_answer_loss);
      if (n_rationale)
        logger->log(opt.stage, opt.task_index, epoch, "rationale",
                    stats.final_rationale_loss);
      if (n_deduction)
        logger->log(opt.stage, opt.task_index, epoch, "deduction",
                    stats.final_deduction_loss);
      logger->log(opt.stage, opt.task_index, epoch, "combined", stats.final_combined_loss);
    }
  }
  stats.epochs = opt.epochs;
  return stats;
}

// Convenience: formats instances with their plain rationales and trains.
// `rationales` maps instance id -> rationale text; a missing id is an error
// because every training instance must carry a rationale.
inline TrainStats train_on_instances(Backbone& backbone,
                                     const std::vector<RelationInstance>& instances,
                                     const std::map<std::string, std::string>& rationales,
                                     const LabelSpace& space, const TrainOptions& opt,
                                     LossLogger* logger = nullptr) {
  std::vector<MultitaskExample> examples;
  examples.reserve(instances.size());
  for (const auto& inst : instances) {
    auto it = rationales.find(inst.id);
    if (it == rationales.end())
      throw Error("no rationale for training instance: " + inst.id);
    examples.push_back(
        format_multitask_example(inst, space, it->second, opt.deduction_enabled));
  }
  return train_multitask(backbone, examples, opt, logger);
}

}  // namespace crex
