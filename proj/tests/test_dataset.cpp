#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "crex/dataset.hpp"
#include "support.hpp"

using testsupport::TempDir;

namespace {

crex::DatasetSpec spec_named(const std::string& format) {
  crex::DatasetSpec spec;
  spec.name = "t";
  spec.format = format;
  return spec;
}

// Multiset of ids, for split-preservation checks.
std::multiset<std::string> ids_of(const std::vector<crex::RelationInstance>& v) {
  std::multiset<std::string> out;
  for (const auto& i : v) out.insert(i.id);
  return out;
}

}  // namespace

TEST_CASE("fewrel object form parses tokens and spans") {
  TempDir dir;
  const std::string json = R"({
    "birth_city": [
      {"tokens": ["Marie", "Curie", "was", "born", "in", "Warsaw", "."],
       "head": {"text": "Marie Curie", "span": [0, 2]},
       "tail": {"text": "Warsaw", "span": [5, 6]}}
    ]
  })";
  crex::write_file(dir / "c.json", json);
  const crex::Corpus corpus = crex::load_corpus(dir / "c.json", spec_named("fewrel"));
  REQUIRE(corpus.instances.size() == 1);
  const auto& inst = corpus.instances[0];
  CHECK(inst.id == "t.birth_city.0");
  CHECK(inst.text == "Marie Curie was born in Warsaw .");
  CHECK(inst.head.text == "Marie Curie");
  CHECK(inst.head.begin == 0);
  CHECK(inst.head.end == 11);
  CHECK(inst.tail.text == "Warsaw");
  CHECK(inst.text.substr(inst.tail.begin, inst.tail.end - inst.tail.begin) == "Warsaw");
  CHECK(corpus.labels.contains("birth_city"));
}

TEST_CASE("fewrel release form with token-index mention lists parses") {
  TempDir dir;
  const std::string json = R"({
    "P17": [
      {"tokens": ["The", "river", "flows", "through", "France", "today"],
       "h": ["river", "Q123", [[1]]],
       "t": ["france", "Q142", [[4]]]}
    ]
  })";
  crex::write_file(dir / "c.json", json);
  const crex::Corpus corpus = crex::load_corpus(dir / "c.json", spec_named("fewrel"));
  REQUIRE(corpus.instances.size() == 1);
  const auto& inst = corpus.instances[0];
  CHECK(inst.head.text == "river");
  CHECK(inst.tail.text == "France");  // span-derived surface, not the lowercased kb form
  CHECK(inst.text == "The river flows through France today");
}

TEST_CASE("fewrel multi-token release span covers the whole mention") {
  TempDir dir;
  const std::string json = R"({
    "P1": [
      {"tokens": ["New", "York", "City", "is", "big"],
       "h": ["new york city", "Q60", [[0, 1, 2]]],
       "t": ["big", "Q1", [[4]]]}
    ]
  })";
  crex::write_file(dir / "c.json", json);
  const crex::Corpus corpus = crex::load_corpus(dir / "c.json", spec_named("fewrel"));
  REQUIRE(corpus.instances.size() == 1);
  CHECK(corpus.instances[0].head.text == "New York City");
  CHECK(corpus.instances[0].tail.text == "big");  // final token: span end hits text end
}

TEST_CASE("tacred records parse with inclusive spans and excluded labels drop") {
  TempDir dir;
  const std::string json = R"([
    {"id": "abc1", "token": ["Ann", "works", "for", "Acme", "Corp"],
     "subj_start": 0, "subj_end": 0, "obj_start": 3, "obj_end": 4,
     "relation": "per:employee_of"},
    {"id": "abc2", "token": ["Sky", "is", "blue"],
     "subj_start": 0, "subj_end": 0, "obj_start": 2, "obj_end": 2,
     "relation": "no_relation"}
  ])";
  crex::write_file(dir / "c.json", json);
  crex::DatasetSpec spec = spec_named("tacred");
  spec.excluded_labels = {"no_relation"};
  const crex::Corpus corpus = crex::load_corpus(dir / "c.json", spec);
  REQUIRE(corpus.instances.size() == 1);
  CHECK(corpus.instances[0].id == "t.abc1");
  CHECK(corpus.instances[0].head.text == "Ann");
  CHECK(corpus.instances[0].tail.text == "Acme Corp");
  CHECK(corpus.labels.size() == 1);
  CHECK_FALSE(corpus.labels.contains("no_relation"));
}

TEST_CASE("corpus loading rejects malformed inputs with located errors") {
  TempDir dir;

  crex::write_file(dir / "bad.json", "{ not json");
  CHECK_THROWS_WITH(crex::load_corpus(dir / "bad.json", spec_named("fewrel")),
                    Catch::Matchers::ContainsSubstring("parse error at byte"));

  crex::write_file(dir / "span.json",
                   R"({"r": [{"tokens": ["a", "b"], "head": {"text": "a", "span": [0, 5]},
                              "tail": {"text": "b", "span": [1, 2]}}]})");
  CHECK_THROWS_WITH(crex::load_corpus(dir / "span.json", spec_named("fewrel")),
                    Catch::Matchers::ContainsSubstring("token span out of range"));

  crex::write_file(dir / "dup.json", R"([
    {"id": "x", "token": ["a", "b", "c"], "subj_start": 0, "subj_end": 0,
     "obj_start": 2, "obj_end": 2, "relation": "r"},
    {"id": "x", "token": ["d", "e", "f"], "subj_start": 0, "subj_end": 0,
     "obj_start": 2, "obj_end": 2, "relation": "r"}
  ])");
  CHECK_THROWS_WITH(crex::load_corpus(dir / "dup.json", spec_named("tacred")),
                    Catch::Matchers::ContainsSubstring("duplicate instance id"));

  crex::write_file(dir / "empty.json", "");
  CHECK(crex::load_corpus(dir / "empty.json", spec_named("fewrel")).instances.empty());
}

TEST_CASE("split is per-relation 3:1:1 with residue going to train") {
  // Exact sizes for a handful of group sizes, then the general property.
  std::mt19937_64 rng(7);
  for (int round = 0; round < 20; ++round) {
    const int n_relations = 1 + static_cast<int>(rng() % 4);
    std::vector<crex::RelationInstance> all;
    std::map<std::string, std::size_t> sizes;
    for (int r = 0; r < n_relations; ++r) {
      const int n = 5 + static_cast<int>(rng() % 20);
      sizes[testsupport::keyword_relation(r)] = static_cast<std::size_t>(n);
      for (int k = 0; k < n; ++k) all.push_back(testsupport::synthetic_instance(r, k));
    }
    const crex::SplitData splits = crex::split_train_val_test(all, 42 + round);

    std::map<std::string, std::size_t> train_n, val_n, test_n;
    for (const auto& i : splits.train) ++train_n[i.relation];
    for (const auto& i : splits.val) ++val_n[i.relation];
    for (const auto& i : splits.test) ++test_n[i.relation];
    for (const auto& [rel, n] : sizes) {
      const std::size_t fifth = n / 5;
      CHECK(val_n[rel] == fifth);
      CHECK(test_n[rel] == fifth);
      CHECK(train_n[rel] == n - 2 * fifth);
    }

    // Nothing lost, nothing duplicated.
    std::multiset<std::string> combined = ids_of(splits.train);
    for (const auto& i : splits.val) combined.insert(i.id);
    for (const auto& i : splits.test) combined.insert(i.id);
    CHECK(combined == ids_of(all));
  }
}

TEST_CASE("split is deterministic in the seed and rejects tiny relations") {
  const auto all = testsupport::synthetic_instances(3, 11);
  const crex::SplitData a = crex::split_train_val_test(all, 1234);
  const crex::SplitData b = crex::split_train_val_test(all, 1234);
  CHECK(ids_of(a.train) == ids_of(b.train));
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].id == b.train[i].id);

  const crex::SplitData c = crex::split_train_val_test(all, 99);
  bool any_difference = false;
  for (std::size_t i = 0; i < a.train.size(); ++i)
    if (a.train[i].id != c.train[i].id) any_difference = true;
  CHECK(any_difference);

  const auto few = testsupport::synthetic_instances(1, 4);
  CHECK_THROWS_WITH(crex::split_train_val_test(few, 1),
                    Catch::Matchers::ContainsSubstring("need >= 5"));
}

TEST_CASE("caps limit train and test but never validation") {
  const auto all = testsupport::synthetic_instances(2, 20);  // per relation: 12/4/4
  const crex::SplitData splits = crex::split_train_val_test(all, 5);

  crex::DatasetSpec spec = spec_named("fewrel");
  spec.per_relation_caps = crex::PerRelationCaps{10, 3};
  const crex::SplitData capped = crex::apply_caps(splits, spec);
  CHECK(capped.train.size() == 20);  // 10 per relation
  CHECK(capped.val.size() == splits.val.size());
  CHECK(capped.test.size() == 6);

  // Per-label override beats the default cap; zero means uncapped.
  spec.cap_overrides[testsupport::keyword_relation(0)] = crex::PerRelationCaps{2, 0};
  const crex::SplitData overridden = crex::apply_caps(splits, spec);
  std::map<std::string, int> train_n, test_n;
  for (const auto& i : overridden.train) ++train_n[i.relation];
  for (const auto& i : overridden.test) ++test_n[i.relation];
  CHECK(train_n[testsupport::keyword_relation(0)] == 2);
  CHECK(test_n[testsupport::keyword_relation(0)] == 4);
  CHECK(train_n[testsupport::keyword_relation(1)] == 10);
  CHECK(test_n[testsupport::keyword_relation(1)] == 3);

  spec.cap_overrides["not_a_label"] = crex::PerRelationCaps{1, 1};
  CHECK_THROWS_WITH(crex::apply_caps(splits, spec),
                    Catch::Matchers::ContainsSubstring("unknown label"));
}

TEST_CASE("task partition sizes differ by at most one and cover the space") {
  for (const int n_labels : {80, 41}) {
    std::set<std::string> labels;
    for (int i = 0; i < n_labels; ++i) labels.insert("rel_" + std::to_string(1000 + i));
    const crex::LabelSpace space = crex::LabelSpace::make(labels);
    for (std::uint64_t seed : {42u, 43u, 44u, 45u, 46u}) {
      const crex::TaskSequence seq = crex::make_task_sequence(space, 10, seed);
      REQUIRE(seq.tasks.size() == 10);
      std::size_t lo = labels.size(), hi = 0, total = 0;
      for (const auto& task : seq.tasks) {
        lo = std::min(lo, task.size());
        hi = std::max(hi, task.size());
        total += task.size();
      }
      CHECK(hi - lo <= 1);
      CHECK(total == labels.size());
      crex::validate_task_sequence(seq, space);  // disjoint + exhaustive

      const crex::TaskSequence again = crex::make_task_sequence(space, 10, seed);
      CHECK(seq.tasks == again.tasks);
    }
    // Different seeds must not all yield the same ordering.
    const auto a = crex::make_task_sequence(space, 10, 42);
    const auto b = crex::make_task_sequence(space, 10, 43);
    CHECK(a.tasks != b.tasks);
  }
  const crex::LabelSpace tiny = testsupport::synthetic_space(3);
  CHECK_THROWS_AS(crex::make_task_sequence(tiny, 4, 1), crex::ValidationError);
}

TEST_CASE("instance jsonl and label space files round-trip") {
  TempDir dir;
  const auto all = testsupport::synthetic_instances(2, 6);
  crex::write_instances_jsonl(dir / "x.jsonl", all);
  const auto back = crex::read_instances_jsonl(dir / "x.jsonl");
  REQUIRE(back.size() == all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(back[i].id == all[i].id);
    CHECK(back[i].text == all[i].text);
    CHECK(back[i].head.text == all[i].head.text);
    CHECK(back[i].head.begin == all[i].head.begin);
    CHECK(back[i].tail.end == all[i].tail.end);
    CHECK(back[i].relation == all[i].relation);
  }

  const crex::LabelSpace space = testsupport::synthetic_space(3);
  crex::write_label_space(dir / "labels.json", space);
  const crex::LabelSpace space2 = crex::read_label_space(dir / "labels.json");
  CHECK(space2.labels() == space.labels());

  const crex::TaskSequence seq = crex::make_task_sequence(space, 3, 7);
  crex::write_task_sequence(dir / "seq.json", seq);
  const crex::TaskSequence seq2 = crex::read_task_sequence(dir / "seq.json");
  CHECK(seq2.seed == seq.seed);
  CHECK(seq2.tasks == seq.tasks);

  CHECK_THROWS_AS(crex::read_instances_jsonl(dir / "missing.jsonl"), crex::Error);
  crex::write_file(dir / "broken.jsonl", "{\"id\": \"x\"\n");
  CHECK_THROWS_WITH(crex::read_instances_jsonl(dir / "broken.jsonl"),
                    Catch::Matchers::ContainsSubstring(":1:"));
}
