#pragma once

// Detects confusable ("analogous") relation pairs: represent each relation by
// the mean feature vector of its stored instances, compare with cosine
// similarity, and call a pair analogous when similarity is strictly above the
// threshold tau. The relation itself is never its own analogue.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crex/util.hpp"

namespace crex {

inline Eigen::RowVectorXd mean_embedding(const Eigen::MatrixXd& features) {
  if (features.rows() < 1) throw Error("mean_embedding: no rows");
  return features.colwise().mean();
}

inline double cosine_similarity(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  if (a.size() != b.size()) throw Error("cosine_similarity: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw Error("cosine_similarity: zero vector");
  return a.dot(b) / (na * nb);
}

// Pairwise cosine similarities between relation means; rows/cols follow the
// sorted relation order of the input map.
struct SimilarityTable {
  std::vector<std::string> relations;
  Eigen::MatrixXd values;  // symmetric, unit diagonal

  double at(const std::string& a, const std::string& b) const {
    return values(index_of(a), index_of(b));
  }

  Eigen::Index index_of(const std::string& relation) const {
    for (std::size_t i = 0; i < relations.size(); ++i)
      if (relations[i] == relation) return static_cast<Eigen::Index>(i);
    throw Error("relation not in similarity table: " + relation);
  }
};

inline SimilarityTable compute_similarity_table(
    const std::map<std::string, Eigen::RowVectorXd>& means) {
  if (means.empty()) throw Error("compute_similarity_table: no relations");
  SimilarityTable table;
  std::vector<const Eigen::RowVectorXd*> rows;
  for (const auto& [relation, mean] : means) {
    table.relations.push_back(relation);
    rows.push_back(&mean);
  }
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  table.values.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    table.values(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double s = cosine_similarity(*rows[static_cast<std::size_t>(i)],
                                         *rows[static_cast<std::size_t>(j)]);
      table.values(i, j) = s;
      table.values(j, i) = s;
    }
  }
  return table;
}

// relation -> sorted list of relations with similarity strictly above tau.
// Symmetric by construction: b in result[a] iff a in result[b]. Every
// relation appears as a key, possibly with an empty list.
inline std::map<std::string, std::vector<std::string>> analogous_relations(
    const SimilarityTable& table, double tau) {
  if (!(tau >= -1.0 && tau <= 1.0)) throw ValidationError("tau out of [-1, 1]");
  std::map<std::string, std::vector<std::string>> result;
  const Eigen::Index n = static_cast<Eigen::Index>(table.relations.size());
  for (Eigen::Index i = 0; i < n; ++i)
    result[table.relations[static_cast<std::size_t>(i)]] = {};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (table.values(i, j) > tau) {
        result[table.relations[static_cast<std::size_t>(i)]].push_back(
            table.relations[static_cast<std::size_t>(j)]);
        result[table.relations[static_cast<std::size_t>(j)]].push_back(
            table.relations[static_cast<std::size_t>(i)]);
      }
    }
  }
  for (auto& [relation, list] : result) std::sort(list.begin(), list.end());
  return result;
}

}  // namespace crex
