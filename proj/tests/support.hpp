#pragma once

// Shared fixtures for the test suites: a self-cleaning temp directory, a
// scriptable in-memory backbone, and a synthetic keyword corpus small enough
// to train the tiny backbone to convergence in seconds.

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "crex/backbone.hpp"
#include "crex/core.hpp"
#include "crex/util.hpp"

namespace testsupport {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("crex-test-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

// A backbone double that never learns: features are a deterministic hash of
// the text, generation replays a canned map, and training calls are recorded
// so tests can assert on batch composition and view weights.
class FakeBackbone : public crex::Backbone {
 public:
  struct StepRecord {
    crex::SeqBatch batch;
    double weight = 0.0;
  };

  explicit FakeBackbone(int dim = 4) : dim_(dim) {}

  std::string model_id() const override { return "fake"; }
  int feature_dim() const override { return dim_; }
  int max_input_length() const override { return 1 << 20; }
  int max_output_length() const override { return 1 << 20; }
  void set_training(bool on) override { training_ = on; }
  bool training() const override { return training_; }

  crex::FeatureMatrix encode_features(const std::vector<std::string>& texts) override {
    crex::FeatureMatrix m(static_cast<int>(texts.size()), dim_);
    for (int i = 0; i < m.rows(); ++i) {
      const std::uint64_t h = crex::fnv1a64(texts[static_cast<std::size_t>(i)]);
      for (int j = 0; j < dim_; ++j)
        m(i, j) = static_cast<double>((h >> (8 * (j % 8))) & 0xff) / 255.0;
    }
    return m;
  }

  std::vector<double> training_step(const crex::SeqBatch& batch, double weight) override {
    crex::validate_batch(batch);
    if (!training_) throw crex::Error("FakeBackbone: training_step outside training mode");
    steps.push_back({batch, weight});
    return std::vector<double>(batch.inputs.size(), fixed_loss);
  }

  void optimizer_step(double learning_rate) override {
    ++optimizer_calls;
    last_learning_rate = learning_rate;
  }
  void zero_grad() override { ++zero_grad_calls; }

  std::vector<std::string> generate(const std::vector<std::string>& inputs) override {
    std::vector<std::string> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) {
      auto it = canned.find(in);
      out.push_back(it == canned.end() ? fallback : it->second);
    }
    return out;
  }

  void save(const std::filesystem::path& dir) const override {
    crex::write_backbone_manifest(dir, *this, "fake");
  }
  void load(const std::filesystem::path&) override {}

  std::map<std::string, std::string> canned;  // input -> generated output
  std::string fallback = "unrelated noise";
  double fixed_loss = 1.0;
  std::vector<StepRecord> steps;
  int optimizer_calls = 0;
  int zero_grad_calls = 0;
  double last_learning_rate = 0.0;

 private:
  int dim_;
  bool training_ = false;
};

// Keyword corpus: relation "<word>_link" is marked by <word> appearing in the
// sentence, so a character-level model can separate the labels. Twenty words
// with distinct first letters are available.
inline const std::vector<std::string>& keyword_pool() {
  static const std::vector<std::string> words = {
      "alpha",   "bravo",  "carbon", "delta",  "ember",  "falcon", "garnet",
      "harbor",  "indigo", "jumper", "koala",  "lumen",  "meadow", "nickel",
      "onyx",    "prairie", "quartz", "russet", "saffron", "timber"};
  return words;
}

inline std::string keyword_relation(int i) { return keyword_pool().at(i) + "_link"; }

inline crex::RelationInstance synthetic_instance(int relation_index, int k,
                                                 const std::string& prefix = "syn") {
  const std::string word = keyword_pool().at(relation_index);
  crex::RelationInstance inst;
  inst.relation = keyword_relation(relation_index);
  inst.id = prefix + "." + inst.relation + "." + std::to_string(k);
  // Entities correlate with the relation (as in real corpora) and the
  // keyword closes the sentence, where the recurrent encoder retains it
  // best; both give a small character model a learnable class signal.
  const std::string head = word + std::to_string(k);
  const std::string tail = "u" + std::to_string(k);
  inst.text = head + " and " + tail + " share " + word + ".";
  inst.head = {head, 0, head.size()};
  const std::size_t tail_begin = head.size() + 5;
  inst.tail = {tail, tail_begin, tail_begin + tail.size()};
  crex::validate_instance(inst);
  return inst;
}

inline std::vector<crex::RelationInstance> synthetic_instances(int n_relations,
                                                               int per_relation,
                                                               const std::string& prefix = "syn") {
  std::vector<crex::RelationInstance> out;
  out.reserve(static_cast<std::size_t>(n_relations) * per_relation);
  for (int r = 0; r < n_relations; ++r)
    for (int k = 0; k < per_relation; ++k) out.push_back(synthetic_instance(r, k, prefix));
  return out;
}

inline crex::LabelSpace synthetic_space(int n_relations) {
  std::set<std::string> labels;
  for (int r = 0; r < n_relations; ++r) labels.insert(keyword_relation(r));
  return crex::LabelSpace::make(labels);
}

}  // namespace testsupport
