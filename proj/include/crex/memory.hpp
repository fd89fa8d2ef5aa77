#pragma once

// Episodic memory: a fixed-size exemplar set per seen relation, chosen by
// K-means over backbone features of the relation's training instances. Each
// entry keeps the instance, its plain rationale, and (once replay has
// regenerated one) a contrastive rationale.

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crex/backbone.hpp"
#include "crex/dataset.hpp"
#include "crex/kmeans.hpp"
#include "crex/util.hpp"

namespace crex {

struct MemoryEntry {
  RelationInstance instance;
  std::string rationale;              // plain, always present
  std::string contrastive_rationale;  // empty until replay regenerates it
};

class EpisodicMemory {
 public:
  // Selects min(capacity, n) exemplars for `relation` from its training
  // instances and stores them with their plain rationales. Re-adding a
  // relation replaces its previous exemplars.
  void add_relation(const std::string& relation,
                    const std::vector<RelationInstance>& instances,
                    const std::map<std::string, std::string>& rationales,
                    Backbone& backbone, int capacity, std::uint64_t seed) {
    if (instances.empty()) throw Error("no instances for relation: " + relation);
    for (const auto& inst : instances)
      if (inst.relation != relation)
        throw Error("instance " + inst.id + " does not belong to relation " + relation);

    std::vector<std::string> texts;
    texts.reserve(instances.size());
    for (const auto& inst : instances) texts.push_back(inst.text);
    const FeatureMatrix features = backbone.encode_features(texts);
    const std::vector<int> picks =
        select_exemplars(features, capacity, mix_seed(seed, "memory-" + relation));

    std::vector<MemoryEntry> entries;
    entries.reserve(picks.size());
    for (int i : picks) {
      const RelationInstance& inst = instances[static_cast<std::size_t>(i)];
      auto it = rationales.find(inst.id);
      if (it == rationales.end()) throw Error("no rationale for exemplar: " + inst.id);
      entries.push_back({inst, it->second, ""});
    }
    store_[relation] = std::move(entries);
  }

  bool has_relation(const std::string& relation) const {
    return store_.count(relation) > 0;
  }

  const std::vector<MemoryEntry>& entries(const std::string& relation) const {
    auto it = store_.find(relation);
    if (it == store_.end()) throw Error("relation not in memory: " + relation);
    return it->second;
  }

  std::vector<MemoryEntry>& mutable_entries(const std::string& relation) {
    auto it = store_.find(relation);
    if (it == store_.end()) throw Error("relation not in memory: " + relation);
    return it->second;
  }

  std::vector<std::string> relations() const {
    std::vector<std::string> out;
    out.reserve(store_.size());
    for (const auto& [relation, entries] : store_) out.push_back(relation);
    return out;  // std::map keeps these sorted
  }

  // All entries in sorted-relation order; the flat list replay trains on.
  std::vector<const MemoryEntry*> all_entries() const {
    std::vector<const MemoryEntry*> out;
    for (const auto& [relation, entries] : store_)
      for (const auto& entry : entries) out.push_back(&entry);
    return out;
  }

  std::size_t total_entries() const {
    std::size_t n = 0;
    for (const auto& [relation, entries] : store_) n += entries.size();
    return n;
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [relation, entries] : store_) {
      nlohmann::json list = nlohmann::json::array();
      for (const auto& entry : entries) {
        list.push_back({{"instance", instance_to_json(entry.instance)},
                        {"rationale", entry.rationale},
                        {"contrastive_rationale", entry.contrastive_rationale}});
      }
      j[relation] = std::move(list);
    }
    write_file(path, j.dump(2) + "\n");
  }

  static EpisodicMemory load(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw Error("cannot parse memory file " + path.string() + ": " + e.what());
    }
    EpisodicMemory memory;
    for (const auto& [relation, list] : j.items()) {
      std::vector<MemoryEntry> entries;
      for (const auto& item : list) {
        MemoryEntry entry;
        entry.instance = instance_from_json(item.at("instance"));
        entry.rationale = item.at("rationale").get<std::string>();
        entry.contrastive_rationale = item.at("contrastive_rationale").get<std::string>();
        entries.push_back(std::move(entry));
      }
      memory.store_[relation] = std::move(entries);
    }
    return memory;
  }

 private:
  std::map<std::string, std::vector<MemoryEntry>> store_;
};

// Mean backbone feature of each relation's stored exemplars; the input to
// analogous-relation detection. Memory-vs-memory by design: both sides of
// every comparison come from the exemplar sets, so old relations need no
// access to their full training data.
inline std::map<std::string, Eigen::RowVectorXd> memory_mean_embeddings(
    const EpisodicMemory& memory, Backbone& backbone) {
  std::map<std::string, Eigen::RowVectorXd> means;
  for (const auto& relation : memory.relations()) {
    std::vector<std::string> texts;
    for (const auto& entry : memory.entries(relation)) texts.push_back(entry.instance.text);
    const FeatureMatrix features = backbone.encode_features(texts);
    means[relation] = features.colwise().mean();
  }
  return means;
}

}  // namespace crex
