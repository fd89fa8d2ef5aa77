#pragma once

// LLM provider abstraction and the mock providers that make the whole
// pipeline runnable and testable with zero network access. complete() must
// be safe to call from multiple threads.

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "crex/core.hpp"
#include "crex/prompts.hpp"

namespace crex {

class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string name() const = 0;
  // Returns the raw completion for a prompt; throws on transport failure.
  virtual std::string complete(const std::string& prompt) = 0;
};

// Base for mocks that counts completions, so tests can assert e.g. that a
// cache hit performs zero provider calls.
class CountingProvider : public Provider {
 public:
  int calls() const { return calls_.load(); }

 protected:
  void count_call() { ++calls_; }

 private:
  std::atomic<int> calls_{0};
};

namespace detail {
// Rationale prompts close by dictating the exact final sentence, so the
// gold verbalization can be read back out of the prompt itself.
inline std::string gold_from_prompt(const std::string& prompt) {
  std::size_t pos = prompt.rfind(kAnswerSentinel);
  if (pos == std::string::npos) throw Error("prompt carries no answer sentinel");
  std::string gold = trim(prompt.substr(pos + kAnswerSentinel.size()));
  while (!gold.empty() && (gold.back() == '"' || gold.back() == '.')) gold.pop_back();
  return trim(gold);
}

inline bool is_contrastive_prompt(const std::string& prompt) {
  return prompt.find("similar relation types") != std::string::npos;
}

// Zero-shot prompts carry no gold answer; the sentence is recovered from
// the fixed question rendering instead.
inline std::string sentence_from_prompt(const std::string& prompt) {
  const std::string marker = "in sentence: ";
  std::size_t pos = prompt.find(marker);
  if (pos == std::string::npos) throw Error("prompt carries no sentence");
  std::size_t end = prompt.find("?\n", pos);
  if (end == std::string::npos) end = prompt.rfind('?');
  if (end == std::string::npos || end < pos) throw Error("prompt carries no sentence");
  return prompt.substr(pos + marker.size(), end - pos - marker.size());
}
}  // namespace detail

// Emits a templated, faithful rationale concluding with the gold relation
// read from the prompt. Contrastive prompts get a distinct body so that
// replay tests can tell the two kinds apart.
class OracleProvider : public CountingProvider {
 public:
  std::string name() const override { return "oracle"; }

  std::string complete(const std::string& prompt) override {
    count_call();
    const std::string gold = detail::gold_from_prompt(prompt);
    if (detail::is_contrastive_prompt(prompt)) {
      return "Unlike the similar relation types, the sentence ties the subject entity to "
             "the object entity in exactly the way \"" + gold + "\" describes. " +
             std::string(kAnswerSentinel) + " " + gold + ".";
    }
    return "The sentence presents the subject entity and the object entity in a context "
           "that directly expresses \"" + gold + "\". " + std::string(kAnswerSentinel) +
           " " + gold + ".";
  }
};

// Replays a fixed response sequence; used to exercise retry loops. Throws
// when the script runs out unless `cycle` is set.
class ScriptedProvider : public CountingProvider {
 public:
  explicit ScriptedProvider(std::vector<std::string> responses, bool cycle = false)
      : responses_(std::move(responses)), cycle_(cycle) {}

  std::string name() const override { return "scripted"; }

  std::string complete(const std::string&) override {
    count_call();
    std::lock_guard<std::mutex> lock(mu_);
    if (next_ >= responses_.size()) {
      if (!cycle_ || responses_.empty()) throw Error("scripted provider exhausted");
      next_ = 0;
    }
    return responses_[next_++];
  }

 private:
  std::vector<std::string> responses_;
  bool cycle_;
  std::size_t next_ = 0;
  std::mutex mu_;
};

// Always concludes with a wrong label from the given space; drives the
// unfaithful-rationale error path.
class AdversarialProvider : public CountingProvider {
 public:
  explicit AdversarialProvider(const LabelSpace& space)
      : verbalizations_(space.verbalizations()) {}

  std::string name() const override { return "adversarial"; }

  std::string complete(const std::string& prompt) override {
    count_call();
    const std::string gold = detail::gold_from_prompt(prompt);
    std::string wrong;
    for (const auto& verb : verbalizations_) {
      if (normalize_answer(verb) != normalize_answer(gold)) {
        wrong = verb;
        break;
      }
    }
    if (wrong.empty()) wrong = "unrelated";
    return "The entities look connected, but not in the stated way. " +
           std::string(kAnswerSentinel) + " " + wrong + ".";
  }

 private:
  std::vector<std::string> verbalizations_;
};

// Always throws; models an unreachable endpoint.
class FailingProvider : public CountingProvider {
 public:
  std::string name() const override { return "failing"; }
  std::string complete(const std::string&) override {
    count_call();
    throw Error("provider unreachable");
  }
};

// Zero-shot oracle: looks the sentence up in the gold table and answers the
// instance's verbalization, ignoring the menu.
class ZeroShotOracleProvider : public CountingProvider {
 public:
  ZeroShotOracleProvider(const std::vector<RelationInstance>& instances,
                         const LabelSpace& space) {
    for (const auto& inst : instances)
      gold_by_sentence_[inst.text] = space.verbalization_of(inst.relation);
  }

  std::string name() const override { return "zero-shot-oracle"; }

  std::string complete(const std::string& prompt) override {
    count_call();
    auto it = gold_by_sentence_.find(detail::sentence_from_prompt(prompt));
    if (it == gold_by_sentence_.end()) throw Error("zero-shot oracle: unknown sentence");
    return it->second;
  }

 private:
  std::map<std::string, std::string> gold_by_sentence_;
};

inline std::unique_ptr<Provider> make_mock_provider(const std::string& kind,
                                                    const LabelSpace& space) {
  if (kind == "oracle") return std::make_unique<OracleProvider>();
  if (kind == "adversarial") return std::make_unique<AdversarialProvider>(space);
  if (kind == "failing") return std::make_unique<FailingProvider>();
  throw ValidationError("unknown mock provider: " + kind);
}

}  // namespace crex
