#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "crex/cache.hpp"
#include "crex/provider.hpp"
#include "crex/rationale_service.hpp"
#include "support.hpp"

using testsupport::TempDir;

namespace {
const std::string kGood =
    "The keyword is present. Therefore, the answer is: alpha link.";
const std::string kWrongLabel =
    "The keyword is present. Therefore, the answer is: bravo link.";
const std::string kNoSentinel = "I cannot decide on an answer here.";
}  // namespace

TEST_CASE("oracle provider yields faithful plain and contrastive rationales") {
  const auto inst = testsupport::synthetic_instance(0, 0);
  const auto space = testsupport::synthetic_space(3);
  crex::OracleProvider provider;

  const auto plain = crex::generate_rationale(inst, space, provider);
  CHECK(plain.attempts == 1);
  CHECK_FALSE(plain.cache_hit);
  CHECK(plain.record.instance_id == inst.id);
  CHECK(plain.record.kind == crex::RationaleKind::plain);
  CHECK(plain.record.answer_text == "alpha link");
  CHECK(plain.record.provider == "oracle");
  // Stored rationale is the body only; the closing sentence is reattached at
  // formatting time.
  CHECK(plain.record.rationale_text.find(crex::kAnswerSentinel) == std::string::npos);
  crex::validate_rationale(plain.record, inst, space);

  const auto contrastive = crex::generate_contrastive_rationale(
      inst, space, {"bravo link", "carbon link"}, provider);
  CHECK(contrastive.record.kind == crex::RationaleKind::contrastive);
  CHECK(contrastive.record.rationale_text != plain.record.rationale_text);
  CHECK(contrastive.record.prompt_hash != plain.record.prompt_hash);
  CHECK(provider.calls() == 2);
}

TEST_CASE("generation retries through bad completions and counts attempts") {
  const auto inst = testsupport::synthetic_instance(0, 0);
  const auto space = testsupport::synthetic_space(3);
  crex::ScriptedProvider provider({kNoSentinel, kWrongLabel, kGood});

  const auto res = crex::generate_rationale(inst, space, provider);
  CHECK(res.attempts == 3);
  CHECK(res.response.attempts == 3);
  CHECK(provider.calls() == 3);
  CHECK(res.record.answer_text == "alpha link");
}

TEST_CASE("generation fails after the retry cap with the last fault") {
  const auto inst = testsupport::synthetic_instance(0, 0);
  const auto space = testsupport::synthetic_space(3);

  crex::AdversarialProvider always_wrong(space);
  crex::GenerateOptions opts;
  opts.max_attempts = 4;
  CHECK_THROWS_WITH(crex::generate_rationale(inst, space, always_wrong, nullptr, opts),
                    Catch::Matchers::ContainsSubstring("after 4 attempts") &&
                        Catch::Matchers::ContainsSubstring("unfaithful"));
  CHECK(always_wrong.calls() == 4);

  crex::FailingProvider unreachable;
  CHECK_THROWS_WITH(crex::generate_rationale(inst, space, unreachable, nullptr, opts),
                    Catch::Matchers::ContainsSubstring("provider failure"));
  CHECK(unreachable.calls() == 4);
}

TEST_CASE("cache hits skip the provider entirely and survive reload") {
  TempDir dir;
  const auto inst = testsupport::synthetic_instance(1, 2);
  const auto space = testsupport::synthetic_space(3);
  const auto cache_file = dir / "cache.jsonl";

  {
    crex::RationaleCache cache(cache_file);
    crex::OracleProvider provider;
    const auto first = crex::generate_rationale(inst, space, provider, &cache);
    CHECK_FALSE(first.cache_hit);
    CHECK(provider.calls() == 1);

    const auto second = crex::generate_rationale(inst, space, provider, &cache);
    CHECK(second.cache_hit);
    CHECK(second.attempts == 0);
    CHECK(provider.calls() == 1);  // no further call
    CHECK(second.record.rationale_text == first.record.rationale_text);
  }

  // Fresh process: reload from disk, still no provider call needed.
  crex::RationaleCache reloaded(cache_file);
  CHECK(reloaded.size() == 1);
  crex::FailingProvider dead;
  const auto hit = crex::generate_rationale(inst, space, dead, &reloaded);
  CHECK(hit.cache_hit);
  CHECK(dead.calls() == 0);
}

TEST_CASE("later duplicate cache records win on reload") {
  TempDir dir;
  const auto cache_file = dir / "cache.jsonl";
  crex::RationaleRecord rec{"id1", crex::RationaleKind::plain, "first body", "alpha link",
                            "hash1", "test"};
  {
    crex::RationaleCache cache(cache_file);
    cache.insert(rec);
    rec.rationale_text = "second body";
    cache.insert(rec);
  }
  crex::RationaleCache reloaded(cache_file);
  CHECK(reloaded.size() == 1);
  auto found = reloaded.lookup("id1", crex::RationaleKind::plain, "hash1");
  REQUIRE(found.has_value());
  CHECK(found->rationale_text == "second body");
}

TEST_CASE("zero-shot classification re-asks until the answer is in the menu") {
  const auto inst = testsupport::synthetic_instance(0, 0);
  const std::vector<std::string> menu = {"alpha_link", "bravo_link"};

  crex::ScriptedProvider provider({"something else entirely", "Alpha Link."});
  const auto res = crex::zero_shot_classify(inst, menu, provider);
  CHECK(res.label == "alpha_link");  // the original menu entry, not the raw reply
  CHECK(res.attempts == 2);

  crex::ScriptedProvider hopeless({"nope"}, /*cycle=*/true);
  crex::GenerateOptions opts;
  opts.max_attempts = 3;
  CHECK_THROWS_WITH(crex::zero_shot_classify(inst, menu, hopeless, opts),
                    Catch::Matchers::ContainsSubstring("outside the menu"));
  CHECK(hopeless.calls() == 3);

  CHECK_THROWS_AS(crex::zero_shot_classify(inst, {}, provider), crex::Error);
}

TEST_CASE("zero-shot oracle provider answers every instance correctly") {
  const auto instances = testsupport::synthetic_instances(3, 2);
  const auto space = testsupport::synthetic_space(3);
  crex::ZeroShotOracleProvider provider(instances, space);
  const auto menu = space.verbalizations();
  for (const auto& inst : instances) {
    const auto res = crex::zero_shot_classify(inst, menu, provider);
    CHECK(res.label == space.verbalization_of(inst.relation));
    CHECK(res.attempts == 1);
  }
}

TEST_CASE("bulk generation fills the cache once and then only hits it") {
  TempDir dir;
  const auto instances = testsupport::synthetic_instances(3, 4);
  const auto space = testsupport::synthetic_space(3);
  crex::RationaleCache cache(dir / "cache.jsonl");
  crex::OracleProvider provider;
  crex::BulkOptions opts;
  opts.max_in_flight = 3;

  const auto first = crex::generate_all_plain(instances, space, provider, &cache, opts);
  CHECK(first.generated == 12);
  CHECK(first.cache_hits == 0);
  CHECK(first.failures == 0);
  CHECK(cache.size() == 12);
  const int calls_after_first = provider.calls();

  const auto second = crex::generate_all_plain(instances, space, provider, &cache, opts);
  CHECK(second.generated == 0);
  CHECK(second.cache_hits == 12);
  CHECK(provider.calls() == calls_after_first);
}

TEST_CASE("bulk generation collects failures instead of aborting") {
  const auto instances = testsupport::synthetic_instances(2, 3);
  const auto space = testsupport::synthetic_space(2);
  crex::FailingProvider provider;
  crex::BulkOptions opts;
  opts.max_in_flight = 2;
  opts.generate.max_attempts = 2;

  const auto report = crex::generate_all_plain(instances, space, provider, nullptr, opts);
  CHECK(report.generated == 0);
  CHECK(report.failures == 6);
  CHECK(report.errors.size() == 6);
}

TEST_CASE("wide worker pools stay consistent") {
  TempDir dir;
  const auto instances = testsupport::synthetic_instances(5, 10);
  const auto space = testsupport::synthetic_space(5);
  crex::RationaleCache cache(dir / "cache.jsonl");
  crex::OracleProvider provider;
  crex::BulkOptions opts;
  opts.max_in_flight = 8;

  const auto report = crex::generate_all_plain(instances, space, provider, &cache, opts);
  CHECK(report.generated == 50);
  CHECK(report.failures == 0);
  CHECK(cache.size() == 50);

  // Rate limiting is a smoke check only; a high rate must not stall.
  crex::TokenBucket bucket(1000.0);
  for (int i = 0; i < 5; ++i) bucket.acquire();
}
