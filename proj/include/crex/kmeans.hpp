#pragma once

// Lloyd's K-means with a kmeans++-style seeded initialization, multiple
// restarts, and fully deterministic tie-breaking. Random draws come straight
// from mt19937_64 outputs rather than std distributions, because distribution
// implementations differ between standard libraries and restart-for-restart
// reproducibility across toolchains is part of the contract here.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "crex/util.hpp"

namespace crex {

struct KMeansResult {
  std::vector<int> assignment;  // point index -> cluster index
  Eigen::MatrixXd centroids;    // k x d
  double inertia = 0.0;         // sum of squared distances to assigned centroids
};

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double sq_dist(const Eigen::MatrixXd& points, Eigen::Index i,
                      const Eigen::MatrixXd& centroids, Eigen::Index j) {
  return (points.row(i) - centroids.row(j)).squaredNorm();
}

inline KMeansResult kmeans_once(const Eigen::MatrixXd& points, int k,
                                std::uint64_t seed, int max_iters) {
  const Eigen::Index n = points.rows();
  std::mt19937_64 rng(seed);

  // kmeans++ seeding: first centroid uniform, the rest proportional to the
  // squared distance from the nearest centroid chosen so far.
  Eigen::MatrixXd centroids(k, points.cols());
  centroids.row(0) = points.row(static_cast<Eigen::Index>(rng() % n));
  Eigen::VectorXd nearest = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::max());
  for (int j = 1; j < k; ++j) {
    for (Eigen::Index i = 0; i < n; ++i)
      nearest(i) = std::min(nearest(i), sq_dist(points, i, centroids, j - 1));
    const double total = nearest.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= nearest(i);
        if (target <= 0.0) {
          pick = i;
          break;
        }
        if (i + 1 == n) pick = i;  // guard against rounding at the far end
      }
    } else {
      pick = static_cast<Eigen::Index>(rng() % n);  // all points coincide
    }
    centroids.row(j) = points.row(pick);
  }

  std::vector<int> assignment(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < max_iters; ++iter) {
    // Assignment step; ties go to the lowest cluster index.
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(points, i, centroids, 0);
      for (int j = 1; j < k; ++j) {
        const double d = sq_dist(points, i, centroids, j);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (assignment[static_cast<std::size_t>(i)] != best) {
        assignment[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    // Update step; a cluster left empty is reseeded at the point farthest
    // from its current centroid (lowest index on ties).
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int j = assignment[static_cast<std::size_t>(i)];
      sums.row(j) += points.row(i);
      ++counts[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) {
        centroids.row(j) = sums.row(j) / counts[static_cast<std::size_t>(j)];
      } else {
        Eigen::Index far = 0;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double d =
              sq_dist(points, i, centroids, assignment[static_cast<std::size_t>(i)]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids.row(j) = points.row(far);
      }
    }
  }

  // Hartigan-Wong style polish: Lloyd's fixed points are often improvable by
  // moving a single point, scored with the exact inertia delta (the n/(n±1)
  // weighting). Repeat until no single move helps; moves that would empty a
  // cluster are not considered.
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (int a : assignment) ++counts[static_cast<std::size_t>(a)];
  for (bool improved = true; improved;) {
    improved = false;
    for (int j = 0; j < k; ++j) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(points.cols());
      for (Eigen::Index i = 0; i < n; ++i)
        if (assignment[static_cast<std::size_t>(i)] == j) sum += points.row(i);
      if (counts[static_cast<std::size_t>(j)] > 0)
        centroids.row(j) = sum / counts[static_cast<std::size_t>(j)];
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const int from = assignment[static_cast<std::size_t>(i)];
      const int nf = counts[static_cast<std::size_t>(from)];
      if (nf <= 1) continue;
      const double removal_gain =
          (static_cast<double>(nf) / (nf - 1)) * sq_dist(points, i, centroids, from);
      int best_to = -1;
      double best_delta = -1e-12;
      for (int to = 0; to < k; ++to) {
        if (to == from) continue;
        const int nt = counts[static_cast<std::size_t>(to)];
        const double delta =
            (static_cast<double>(nt) / (nt + 1)) * sq_dist(points, i, centroids, to) -
            removal_gain;
        if (delta < best_delta) {
          best_delta = delta;
          best_to = to;
        }
      }
      if (best_to >= 0) {
        const int nt = counts[static_cast<std::size_t>(best_to)];
        centroids.row(from) =
            (centroids.row(from) * nf - points.row(i)) / (nf - 1);
        centroids.row(best_to) = (centroids.row(best_to) * nt + points.row(i)) / (nt + 1);
        --counts[static_cast<std::size_t>(from)];
        ++counts[static_cast<std::size_t>(best_to)];
        assignment[static_cast<std::size_t>(i)] = best_to;
        improved = true;
      }
    }
  }

  KMeansResult result;
  result.assignment = std::move(assignment);
  result.centroids = std::move(centroids);
  for (Eigen::Index i = 0; i < n; ++i)
    result.inertia +=
        sq_dist(points, i, result.centroids, result.assignment[static_cast<std::size_t>(i)]);
  return result;
}

}  // namespace detail

// Best-of-`restarts` K-means; a tie in inertia keeps the earlier restart.
inline KMeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                           int restarts = 16, int max_iters = 100) {
  if (points.rows() < 1) throw Error("kmeans: no points");
  if (k < 1) throw Error("kmeans: k must be >= 1");
  if (k > points.rows()) throw Error("kmeans: k exceeds number of points");
  if (restarts < 1) throw Error("kmeans: restarts must be >= 1");

  KMeansResult best;
  bool have = false;
  for (int r = 0; r < restarts; ++r) {
    KMeansResult candidate =
        detail::kmeans_once(points, k, mix_seed(seed, "restart-" + std::to_string(r)),
                            max_iters);
    if (!have || candidate.inertia < best.inertia) {
      best = std::move(candidate);
      have = true;
    }
  }
  return best;
}

// Picks min(m, n) representative row indices: K-means, then for each cluster
// the point nearest its centroid. Lowest index wins distance ties; a point
// already claimed by an earlier cluster falls through to the next-nearest
// unclaimed point. The result is sorted ascending.
inline std::vector<int> select_exemplars(const Eigen::MatrixXd& points, int m,
                                         std::uint64_t seed) {
  if (points.rows() < 1) throw Error("select_exemplars: no points");
  if (m < 1) throw Error("select_exemplars: m must be >= 1");
  const int k = std::min<int>(m, static_cast<int>(points.rows()));
  const KMeansResult km = kmeans(points, k, seed);

  std::vector<bool> taken(static_cast<std::size_t>(points.rows()), false);
  std::vector<int> selected;
  selected.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    int pick = -1;
    double pick_d = std::numeric_limits<double>::max();
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      if (taken[static_cast<std::size_t>(i)]) continue;
      const double d = detail::sq_dist(points, i, km.centroids, j);
      if (d < pick_d) {
        pick_d = d;
        pick = static_cast<int>(i);
      }
    }
    taken[static_cast<std::size_t>(pick)] = true;
    selected.push_back(pick);
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

}  // namespace crex
