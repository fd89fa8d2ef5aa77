#pragma once

// Append-only rationale cache: one JSON record per line, keyed by
// (instance_id, kind, prompt_hash). Generation at corpus scale is restartable
// because every successful record lands on disk before it is returned.
// Reads are concurrent-safe; writes are serialized through one mutex.

#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>

#include <json.hpp>

#include "crex/core.hpp"
#include "crex/util.hpp"

namespace crex {

class RationaleCache {
 public:
  // In-memory only; nothing is persisted.
  RationaleCache() = default;

  // Backed by `file`; existing records are loaded, later duplicates of a key
  // win (a rerun may legitimately re-append).
  explicit RationaleCache(const std::filesystem::path& file) : file_(file) {
    if (std::filesystem::exists(file)) {
      std::ifstream in(file);
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
          auto j = nlohmann::json::parse(line);
          RationaleRecord rec;
          rec.instance_id = j.at("instance_id").get<std::string>();
          rec.kind = rationale_kind_from_string(j.at("kind").get<std::string>());
          rec.prompt_hash = j.at("prompt_hash").get<std::string>();
          rec.rationale_text = j.at("rationale_text").get<std::string>();
          rec.answer_text = j.at("answer_text").get<std::string>();
          rec.provider = j.value("provider", "");
          records_[key_of(rec)] = rec;
        } catch (const std::exception& e) {
          throw ValidationError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
      }
    }
    if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
    out_.open(file_, std::ios::app);
    if (!out_) throw Error("cannot open cache for append: " + file_.string());
  }

  std::optional<RationaleRecord> lookup(const std::string& instance_id, RationaleKind kind,
                                        const std::string& prompt_hash) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = records_.find(std::make_tuple(instance_id, static_cast<int>(kind), prompt_hash));
    if (it == records_.end()) return std::nullopt;
    return it->second;
  }

  void insert(const RationaleRecord& rec) {
    std::lock_guard<std::mutex> lock(mu_);
    records_[key_of(rec)] = rec;
    if (out_.is_open()) {
      nlohmann::json j{{"instance_id", rec.instance_id},
                       {"kind", to_string(rec.kind)},
                       {"prompt_hash", rec.prompt_hash},
                       {"rationale_text", rec.rationale_text},
                       {"answer_text", rec.answer_text},
                       {"provider", rec.provider},
                       {"timestamp", static_cast<long long>(std::time(nullptr))}};
      out_ << j.dump() << '\n';
      out_.flush();
    }
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_.size();
  }

 private:
  using Key = std::tuple<std::string, int, std::string>;

  static Key key_of(const RationaleRecord& rec) {
    return std::make_tuple(rec.instance_id, static_cast<int>(rec.kind), rec.prompt_hash);
  }

  mutable std::mutex mu_;
  std::map<Key, RationaleRecord> records_;
  std::filesystem::path file_;
  std::ofstream out_;
};

}  // namespace crex
