#pragma once

// Corpus loading and partitioning. Two input formats are supported:
//
//  FewRel-style: one JSON object mapping relation label -> list of instances.
//    Each instance is either
//      {"tokens": [...], "head": {"text": s, "span": [b, e)}, "tail": {...}}
//    with token-index spans, or the compact public-release form
//      {"tokens": [...], "h": [surface, kbid, [[token indices]]], "t": [...]}.
//
//  TACRED-style: one JSON array of records
//      {"id": s, "token": [...], "subj_start": i, "subj_end": j,
//       "obj_start": i, "obj_end": j, "relation": s}
//    with inclusive token indices, as in the public release.
//
// Sentences are reconstructed by joining tokens with single spaces; mention
// character spans are derived from the token spans. Instance ids are
// "<dataset>.<relation>.<index>" for FewRel-style files and "<dataset>.<id>"
// (falling back to the record index) for TACRED-style ones, so rationale
// cache keys stay stable across runs.

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crex/core.hpp"
#include "crex/util.hpp"

namespace crex {

struct PerRelationCaps {
  int train = 0;  // 0 means uncapped
  int test = 0;
};

struct DatasetSpec {
  std::string name;
  std::string format;  // "fewrel" or "tacred"
  int relation_count = 0;  // expected surviving relation count; 0 disables the check
  std::optional<PerRelationCaps> per_relation_caps;
  std::set<std::string> excluded_labels;
  // Optional per-label cap overrides; referencing a label absent from the
  // corpus is an error.
  std::map<std::string, PerRelationCaps> cap_overrides;
};

// The two reference benchmark configurations.
inline DatasetSpec fewrel_spec() {
  DatasetSpec spec;
  spec.name = "fewrel";
  spec.format = "fewrel";
  spec.relation_count = 80;
  return spec;
}

inline DatasetSpec tacred_spec() {
  DatasetSpec spec;
  spec.name = "tacred";
  spec.format = "tacred";
  spec.relation_count = 41;
  spec.per_relation_caps = PerRelationCaps{320, 40};
  spec.excluded_labels = {"no_relation"};
  return spec;
}

struct Corpus {
  std::vector<RelationInstance> instances;
  LabelSpace labels;
};

namespace detail {

// Joins tokens with single spaces and converts a token range [begin, end)
// into a character span.
inline void join_tokens(const std::vector<std::string>& tokens, std::string& text,
                        std::vector<std::size_t>& offsets) {
  text.clear();
  offsets.clear();
  offsets.reserve(tokens.size() + 1);
  for (const auto& tok : tokens) {
    if (!text.empty()) text.push_back(' ');
    offsets.push_back(text.size());
    text += tok;
  }
  offsets.push_back(text.empty() ? 0 : text.size() + 1);
}

inline Mention mention_from_token_span(const std::string& text,
                                       const std::vector<std::size_t>& offsets,
                                       std::size_t tok_begin, std::size_t tok_end,
                                       const std::string& locator) {
  if (tok_begin >= tok_end || tok_end >= offsets.size())
    throw ValidationError(locator + ": token span out of range");
  Mention m;
  m.begin = offsets[tok_begin];
  m.end = (tok_end == offsets.size() - 1) ? text.size() : offsets[tok_end] - 1;
  m.text = text.substr(m.begin, m.end - m.begin);
  return m;
}

inline std::vector<std::string> tokens_of(const nlohmann::json& j, const char* key,
                                          const std::string& locator) {
  if (!j.contains(key) || !j[key].is_array())
    throw ValidationError(locator + ": missing token list '" + key + "'");
  std::vector<std::string> toks;
  toks.reserve(j[key].size());
  for (const auto& t : j[key]) {
    if (!t.is_string()) throw ValidationError(locator + ": non-string token");
    toks.push_back(t.get<std::string>());
  }
  if (toks.empty()) throw ValidationError(locator + ": empty token list");
  return toks;
}

// Accepts both the object form {"text":..., "span":[b,e)} and the release
// form [surface, kbid, [[indices...]]].
inline std::pair<std::size_t, std::size_t> token_span_of(const nlohmann::json& j,
                                                         const std::string& locator) {
  if (j.is_object()) {
    if (!j.contains("span") || !j["span"].is_array() || j["span"].size() != 2)
      throw ValidationError(locator + ": mention needs a [begin, end) span");
    return {j["span"][0].get<std::size_t>(), j["span"][1].get<std::size_t>()};
  }
  if (j.is_array() && j.size() >= 3 && j[2].is_array() && !j[2].empty() &&
      j[2][0].is_array() && !j[2][0].empty()) {
    const auto& span = j[2][0];
    std::size_t lo = span.front().get<std::size_t>();
    std::size_t hi = lo;
    for (const auto& v : span) {
      std::size_t idx = v.get<std::size_t>();
      lo = std::min(lo, idx);
      hi = std::max(hi, idx);
    }
    return {lo, hi + 1};
  }
  throw ValidationError(locator + ": unrecognized mention form");
}

inline std::vector<RelationInstance> parse_fewrel(const nlohmann::json& root,
                                                  const std::string& dataset) {
  if (!root.is_object()) throw ValidationError(dataset + ": expected a relation->list object");
  std::vector<RelationInstance> out;
  for (auto it = root.begin(); it != root.end(); ++it) {
    const std::string& relation = it.key();
    if (!it.value().is_array())
      throw ValidationError(dataset + ": relation '" + relation + "' is not a list");
    std::size_t index = 0;
    for (const auto& rec : it.value()) {
      const std::string locator = dataset + ": relation '" + relation + "' instance #" +
                                  std::to_string(index);
      RelationInstance inst;
      inst.relation = relation;
      inst.id = dataset + "." + relation + "." + std::to_string(index);
      auto tokens = tokens_of(rec, "tokens", locator);
      std::vector<std::size_t> offsets;
      join_tokens(tokens, inst.text, offsets);
      const char* head_key = rec.contains("head") ? "head" : "h";
      const char* tail_key = rec.contains("tail") ? "tail" : "t";
      if (!rec.contains(head_key) || !rec.contains(tail_key))
        throw ValidationError(locator + ": missing head/tail mentions");
      auto [hb, he] = token_span_of(rec[head_key], locator);
      auto [tb, te] = token_span_of(rec[tail_key], locator);
      inst.head = mention_from_token_span(inst.text, offsets, hb, he, locator);
      inst.tail = mention_from_token_span(inst.text, offsets, tb, te, locator);
      validate_instance(inst);
      out.push_back(std::move(inst));
      ++index;
    }
  }
  return out;
}

inline std::vector<RelationInstance> parse_tacred(const nlohmann::json& root,
                                                  const std::string& dataset) {
  if (!root.is_array()) throw ValidationError(dataset + ": expected a record array");
  std::vector<RelationInstance> out;
  std::size_t index = 0;
  for (const auto& rec : root) {
    const std::string locator = dataset + ": record #" + std::to_string(index);
    RelationInstance inst;
    if (!rec.contains("relation") || !rec["relation"].is_string())
      throw ValidationError(locator + ": missing relation");
    inst.relation = rec["relation"].get<std::string>();
    inst.id = dataset + "." + (rec.contains("id") && rec["id"].is_string()
                                   ? rec["id"].get<std::string>()
                                   : std::to_string(index));
    auto tokens = tokens_of(rec, "token", locator);
    std::vector<std::size_t> offsets;
    join_tokens(tokens, inst.text, offsets);
    auto span_field = [&](const char* key) -> std::size_t {
      if (!rec.contains(key) || !rec[key].is_number_unsigned())
        throw ValidationError(locator + ": missing span field '" + key + "'");
      return rec[key].get<std::size_t>();
    };
    // TACRED span indices are inclusive.
    inst.head = mention_from_token_span(inst.text, offsets, span_field("subj_start"),
                                        span_field("subj_end") + 1, locator);
    inst.tail = mention_from_token_span(inst.text, offsets, span_field("obj_start"),
                                        span_field("obj_end") + 1, locator);
    validate_instance(inst);
    out.push_back(std::move(inst));
    ++index;
  }
  return out;
}

}  // namespace detail

// Loads a corpus file, drops excluded labels and builds the surviving label
// space. Caps are applied later, at split time, because they are defined per
// train/test split.
inline Corpus load_corpus(const std::filesystem::path& path, const DatasetSpec& spec) {
  const std::string content = read_file(path);
  Corpus corpus;
  if (trim(content).empty()) return corpus;

  nlohmann::json root;
  try {
    root = nlohmann::json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(spec.name + ": parse error at byte " + std::to_string(e.byte) +
                          ": " + e.what());
  }

  std::vector<RelationInstance> raw;
  if (spec.format == "fewrel") {
    raw = detail::parse_fewrel(root, spec.name);
  } else if (spec.format == "tacred") {
    raw = detail::parse_tacred(root, spec.name);
  } else {
    throw ValidationError("unknown dataset format: " + spec.format);
  }

  std::set<std::string> ids;
  std::set<std::string> surviving;
  for (auto& inst : raw) {
    if (spec.excluded_labels.count(inst.relation)) continue;
    if (!ids.insert(inst.id).second)
      throw ValidationError(spec.name + ": duplicate instance id " + inst.id);
    surviving.insert(inst.relation);
    corpus.instances.push_back(std::move(inst));
  }
  if (corpus.instances.empty()) return corpus;

  corpus.labels = LabelSpace::make(surviving);
  if (spec.relation_count > 0 &&
      static_cast<int>(corpus.labels.size()) != spec.relation_count) {
    std::cerr << "crex: warning: " << spec.name << " has " << corpus.labels.size()
              << " relations after filtering, expected " << spec.relation_count << "\n";
  }
  return corpus;
}

struct SplitData {
  std::vector<RelationInstance> train;
  std::vector<RelationInstance> val;
  std::vector<RelationInstance> test;
};

namespace detail {
inline std::map<std::string, std::vector<RelationInstance>> group_by_relation(
    const std::vector<RelationInstance>& instances) {
  std::map<std::string, std::vector<RelationInstance>> groups;
  for (const auto& inst : instances) groups[inst.relation].push_back(inst);
  return groups;
}
}  // namespace detail

// Per-relation 3:1:1 split. Each fifth (rounded down) goes to validation and
// test; the remainder, including all rounding residue, goes to train. The
// within-relation order is a seeded shuffle, so identical seeds reproduce
// identical splits.
inline SplitData split_train_val_test(const std::vector<RelationInstance>& instances,
                                      std::uint64_t seed) {
  SplitData out;
  for (auto& [relation, group] : detail::group_by_relation(instances)) {
    if (group.size() < 5)
      throw ValidationError("relation '" + relation + "' has only " +
                            std::to_string(group.size()) + " instances; need >= 5 to split");
    seeded_shuffle(group, mix_seed(seed, relation));
    const std::size_t fifth = group.size() / 5;
    const std::size_t n_train = group.size() - 2 * fifth;
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (i < n_train)
        out.train.push_back(group[i]);
      else if (i < n_train + fifth)
        out.val.push_back(group[i]);
      else
        out.test.push_back(group[i]);
    }
  }
  return out;
}

// Applies per-relation train/test caps (validation is uncapped). Instances
// beyond the cap are dropped in split order. Cap overrides must reference
// labels present in the corpus.
inline SplitData apply_caps(const SplitData& splits, const DatasetSpec& spec) {
  if (!spec.per_relation_caps && spec.cap_overrides.empty()) return splits;

  std::set<std::string> present;
  for (const auto* part : {&splits.train, &splits.val, &splits.test})
    for (const auto& inst : *part) present.insert(inst.relation);
  for (const auto& [label, caps] : spec.cap_overrides) {
    if (!present.count(label))
      throw ValidationError(spec.name + ": cap override for unknown label '" + label + "'");
  }

  auto cap_for = [&](const std::string& relation) -> PerRelationCaps {
    auto it = spec.cap_overrides.find(relation);
    if (it != spec.cap_overrides.end()) return it->second;
    return spec.per_relation_caps.value_or(PerRelationCaps{});
  };

  auto capped = [&](const std::vector<RelationInstance>& part, bool is_train) {
    std::map<std::string, int> kept;
    std::vector<RelationInstance> out;
    for (const auto& inst : part) {
      const PerRelationCaps caps = cap_for(inst.relation);
      const int cap = is_train ? caps.train : caps.test;
      if (cap > 0 && kept[inst.relation] >= cap) continue;
      ++kept[inst.relation];
      out.push_back(inst);
    }
    return out;
  };

  SplitData out;
  out.train = capped(splits.train, true);
  out.val = splits.val;
  out.test = capped(splits.test, false);
  return out;
}

// Seeded partition of the label space into n tasks with sizes differing by
// at most one. The shuffle alone decides both membership and which tasks
// receive an extra label.
inline TaskSequence make_task_sequence(const LabelSpace& space, int n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("task count must be >= 1");
  std::vector<std::string> labels = space.labels();
  if (static_cast<std::size_t>(n) > labels.size())
    throw ValidationError("cannot split " + std::to_string(labels.size()) +
                          " labels into " + std::to_string(n) + " tasks");
  seeded_shuffle(labels, mix_seed(seed, "task-sequence"));

  TaskSequence seq;
  seq.seed = seed;
  const std::size_t base = labels.size() / static_cast<std::size_t>(n);
  const std::size_t extra = labels.size() % static_cast<std::size_t>(n);
  std::size_t cursor = 0;
  for (std::size_t t = 0; t < static_cast<std::size_t>(n); ++t) {
    const std::size_t size = base + (t < extra ? 1 : 0);
    seq.tasks.emplace_back(labels.begin() + cursor, labels.begin() + cursor + size);
    cursor += size;
  }
  validate_task_sequence(seq, space);
  return seq;
}

// ---------------------------------------------------------------------------
// Canonical split files (JSONL, one instance per line)
// ---------------------------------------------------------------------------

inline nlohmann::json instance_to_json(const RelationInstance& inst) {
  return {{"id", inst.id},
          {"text", inst.text},
          {"head", {{"text", inst.head.text}, {"begin", inst.head.begin}, {"end", inst.head.end}}},
          {"tail", {{"text", inst.tail.text}, {"begin", inst.tail.begin}, {"end", inst.tail.end}}},
          {"relation", inst.relation}};
}

inline RelationInstance instance_from_json(const nlohmann::json& j) {
  RelationInstance inst;
  inst.id = j.at("id").get<std::string>();
  inst.text = j.at("text").get<std::string>();
  auto mention = [](const nlohmann::json& m) {
    return Mention{m.at("text").get<std::string>(), m.at("begin").get<std::size_t>(),
                   m.at("end").get<std::size_t>()};
  };
  inst.head = mention(j.at("head"));
  inst.tail = mention(j.at("tail"));
  inst.relation = j.at("relation").get<std::string>();
  return inst;
}

inline void write_instances_jsonl(const std::filesystem::path& path,
                                  const std::vector<RelationInstance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    out += instance_to_json(inst).dump();
    out += '\n';
  }
  write_file(path, out);
}

inline std::vector<RelationInstance> read_instances_jsonl(const std::filesystem::path& path) {
  std::vector<RelationInstance> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_task_sequence(const std::filesystem::path& path, const TaskSequence& seq) {
  nlohmann::json j{{"seed", seq.seed}, {"tasks", seq.tasks}};
  write_file(path, j.dump(2) + "\n");
}

inline TaskSequence read_task_sequence(const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(read_file(path));
  TaskSequence seq;
  seq.seed = j.at("seed").get<std::uint64_t>();
  seq.tasks = j.at("tasks").get<std::vector<std::vector<std::string>>>();
  return seq;
}

inline void write_label_space(const std::filesystem::path& path, const LabelSpace& space) {
  write_file(path, nlohmann::json{{"labels", space.labels()}}.dump(2) + "\n");
}

inline LabelSpace read_label_space(const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(read_file(path));
  std::set<std::string> labels;
  for (const auto& l : j.at("labels")) labels.insert(l.get<std::string>());
  return LabelSpace::make(labels);
}

}  // namespace crex
