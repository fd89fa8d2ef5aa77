#pragma once

// Rationale generation and the zero-shot classification baseline. Every
// generated rationale must conclude with the instance's gold relation; a
// provider that keeps concluding anything else fails the call after a
// bounded number of retries. Results are cached by (instance, kind, prompt).

#include <atomic>
#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "crex/cache.hpp"
#include "crex/core.hpp"
#include "crex/prompts.hpp"
#include "crex/provider.hpp"

namespace crex {

struct GenerateOptions {
  int max_attempts = 5;  // shared cap for transport failures and unfaithful answers
  PromptTemplate plain_template = default_plain_template();
  PromptTemplate contrastive_template = default_contrastive_template();
  PromptTemplate zero_shot_template = default_zero_shot_template();
};

struct ProviderResponse {
  std::string raw_text;
  std::string parsed_rationale;
  std::string parsed_answer;
  int attempts = 0;
};

struct GenerateResult {
  RationaleRecord record;
  ProviderResponse response;  // last (successful) provider exchange
  int attempts = 0;           // provider calls made; 0 on a cache hit
  bool cache_hit = false;
};

namespace detail {

inline GenerateResult generate_with_prompt(const RelationInstance& inst, RationaleKind kind,
                                           const std::string& prompt,
                                           const std::string& gold_verbalization,
                                           Provider& provider, RationaleCache* cache,
                                           const GenerateOptions& opts) {
  const std::string digest = prompt_digest(prompt);
  if (cache) {
    if (auto hit = cache->lookup(inst.id, kind, digest)) {
      GenerateResult res;
      res.record = *hit;
      res.cache_hit = true;
      return res;
    }
  }

  std::string last_fault;
  int attempts = 0;
  while (attempts < opts.max_attempts) {
    ++attempts;
    std::string raw;
    try {
      raw = provider.complete(prompt);
    } catch (const std::exception& e) {
      last_fault = std::string("provider failure: ") + e.what();
      continue;
    }
    auto parsed = parse_completion(raw);
    if (!parsed) {
      last_fault = "no answer sentinel in completion";
      continue;
    }
    if (normalize_answer(parsed->answer) != normalize_answer(gold_verbalization)) {
      last_fault = "unfaithful rationale: concluded '" + parsed->answer + "', expected '" +
                   gold_verbalization + "'";
      continue;
    }
    GenerateResult res;
    res.record = RationaleRecord{inst.id,          kind, parsed->rationale,
                                 parsed->answer,   digest, provider.name()};
    res.response = ProviderResponse{raw, parsed->rationale, parsed->answer, attempts};
    res.attempts = attempts;
    if (cache) cache->insert(res.record);
    return res;
  }
  throw Error("rationale generation for " + inst.id + " failed after " +
              std::to_string(attempts) + " attempts: " + last_fault);
}

}  // namespace detail

// Plain rationale: why does the gold relation hold.
inline GenerateResult generate_rationale(const RelationInstance& inst, const LabelSpace& space,
                                         Provider& provider, RationaleCache* cache = nullptr,
                                         const GenerateOptions& opts = {}) {
  const std::string& verb = space.verbalization_of(inst.relation);
  const std::string prompt = build_plain_prompt(inst, verb, opts.plain_template);
  return detail::generate_with_prompt(inst, RationaleKind::plain, prompt, verb, provider,
                                      cache, opts);
}

// Contrastive rationale: why the gold relation rather than its analogous
// peers. `analogous_verbalizations` must be nonempty.
inline GenerateResult generate_contrastive_rationale(
    const RelationInstance& inst, const LabelSpace& space,
    const std::vector<std::string>& analogous_verbalizations, Provider& provider,
    RationaleCache* cache = nullptr, const GenerateOptions& opts = {}) {
  const std::string& verb = space.verbalization_of(inst.relation);
  const std::string prompt =
      build_contrastive_prompt(inst, verb, analogous_verbalizations, opts.contrastive_template);
  return detail::generate_with_prompt(inst, RationaleKind::contrastive, prompt, verb, provider,
                                      cache, opts);
}

// ---------------------------------------------------------------------------
// Zero-shot baseline
// ---------------------------------------------------------------------------

struct ZeroShotResult {
  std::string label;  // element of the menu
  int attempts = 0;
};

// Asks the provider to pick one menu entry; out-of-menu answers are
// discarded and the request is re-issued, up to the retry cap.
inline ZeroShotResult zero_shot_classify(const RelationInstance& inst,
                                         const std::vector<std::string>& label_menu,
                                         Provider& provider, const GenerateOptions& opts = {}) {
  if (label_menu.empty()) throw Error("zero-shot: empty label menu");
  const std::string prompt = build_zero_shot_prompt(inst, label_menu, opts.zero_shot_template);

  std::map<std::string, std::string> by_normal;
  for (const auto& entry : label_menu) by_normal.emplace(normalize_answer(entry), entry);

  std::string last_fault;
  int attempts = 0;
  while (attempts < opts.max_attempts) {
    ++attempts;
    std::string raw;
    try {
      raw = provider.complete(prompt);
    } catch (const std::exception& e) {
      last_fault = std::string("provider failure: ") + e.what();
      continue;
    }
    auto it = by_normal.find(normalize_answer(raw));
    if (it == by_normal.end()) {
      last_fault = "answer '" + trim(raw) + "' outside the menu";
      continue;
    }
    return ZeroShotResult{it->second, attempts};
  }
  throw Error("zero-shot classification for " + inst.id + " failed after " +
              std::to_string(attempts) + " attempts: " + last_fault);
}

// ---------------------------------------------------------------------------
// Bulk generation
// ---------------------------------------------------------------------------

// Steady-rate token bucket with one second of burst capacity. rate <= 0
// disables throttling.
class TokenBucket {
 public:
  explicit TokenBucket(double rate_per_sec)
      : rate_(rate_per_sec), tokens_(rate_per_sec), last_(clock::now()) {}

  void acquire() {
    if (rate_ <= 0) return;
    std::unique_lock<std::mutex> lock(mu_);
    for (;;) {
      refill();
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      const double deficit = 1.0 - tokens_;
      lock.unlock();
      std::this_thread::sleep_for(
          std::chrono::duration<double>(deficit / rate_));
      lock.lock();
    }
  }

 private:
  using clock = std::chrono::steady_clock;

  void refill() {
    const auto now = clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(rate_, tokens_ + elapsed * rate_);
  }

  double rate_;
  double tokens_;
  clock::time_point last_;
  std::mutex mu_;
};

struct BulkOptions {
  int max_in_flight = 4;
  double requests_per_sec = 0;  // 0 = unlimited
  GenerateOptions generate;
};

struct BulkReport {
  int generated = 0;
  int cache_hits = 0;
  int failures = 0;
  std::vector<std::string> errors;
};

// Generates plain rationales for a whole instance list through a worker
// pool. Per-instance failures are collected, not fatal, so a rerun can pick
// up where a partial pass stopped.
inline BulkReport generate_all_plain(const std::vector<RelationInstance>& instances,
                                     const LabelSpace& space, Provider& provider,
                                     RationaleCache* cache, const BulkOptions& opts = {}) {
  BulkReport report;
  if (instances.empty()) return report;

  TokenBucket bucket(opts.requests_per_sec);
  std::mutex report_mu;
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= instances.size()) return;
      try {
        bucket.acquire();
        auto res = generate_rationale(instances[i], space, provider, cache, opts.generate);
        std::lock_guard<std::mutex> lock(report_mu);
        if (res.cache_hit)
          ++report.cache_hits;
        else
          ++report.generated;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(report_mu);
        ++report.failures;
        report.errors.push_back(e.what());
      }
    }
  };

  const int n_workers =
      std::max(1, std::min<int>(opts.max_in_flight, static_cast<int>(instances.size())));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_workers));
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return report;
}

}  // namespace crex
