#pragma once

// Pluggable sequence-to-sequence backbone. Two implementations live behind
// this interface: a tiny character-level model trained from scratch (tests,
// desk-scale runs) and a subprocess adapter driving a real pretrained
// encoder-decoder. Feature extraction is always deterministic; generation is
// greedy.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "crex/util.hpp"

namespace crex {

// Row i holds the mean-pooled final encoder state of input i.
using FeatureMatrix = Eigen::MatrixXd;

struct SeqBatch {
  std::vector<std::string> inputs;
  std::vector<std::string> targets;
};

inline void validate_batch(const SeqBatch& batch) {
  if (batch.inputs.empty()) throw Error("empty batch");
  if (batch.inputs.size() != batch.targets.size())
    throw Error("batch inputs/targets size mismatch");
  for (const auto& s : batch.inputs)
    if (s.empty()) throw Error("empty input sequence in batch");
  for (const auto& s : batch.targets)
    if (s.empty()) throw Error("empty target sequence in batch");
}

class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual std::string model_id() const = 0;
  virtual int feature_dim() const = 0;
  virtual int max_input_length() const = 0;
  virtual int max_output_length() const = 0;

  virtual void set_training(bool on) = 0;
  virtual bool training() const = 0;

  // [n x d] mean-pooled encoder features; padding never leaks into the mean.
  virtual FeatureMatrix encode_features(const std::vector<std::string>& texts) = 0;

  // Teacher-forced per-sequence cross-entropy. Accumulates
  // weight * d(mean batch loss)/d(params) into the gradient buffers; the
  // parameters move only when optimizer_step() is called.
  virtual std::vector<double> training_step(const SeqBatch& batch, double weight = 1.0) = 0;

  // Adam update from the accumulated gradients, which are then cleared.
  virtual void optimizer_step(double learning_rate) = 0;
  virtual void zero_grad() = 0;

  // Greedy decoding, deterministic, bounded by max_output_length.
  virtual std::vector<std::string> generate(const std::vector<std::string>& inputs) = 0;

  virtual void save(const std::filesystem::path& dir) const = 0;
  virtual void load(const std::filesystem::path& dir) = 0;
};

// Checkpoint manifest shared by all implementations.
inline void write_backbone_manifest(const std::filesystem::path& dir, const Backbone& b,
                                    const std::string& family) {
  nlohmann::json j{{"model_id", b.model_id()},
                   {"family", family},
                   {"feature_dim", b.feature_dim()},
                   {"max_input_length", b.max_input_length()},
                   {"max_output_length", b.max_output_length()}};
  write_file(dir / "manifest.json", j.dump(2) + "\n");
}

inline nlohmann::json read_backbone_manifest(const std::filesystem::path& dir) {
  return nlohmann::json::parse(read_file(dir / "manifest.json"));
}

}  // namespace crex
