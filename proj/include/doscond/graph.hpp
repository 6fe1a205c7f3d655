#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "doscond/common.hpp"

namespace doscond {

/// One labeled graph. Adjacency is dense, symmetric, zero-diagonal;
/// binary for real graphs, in (0,1) for relaxed synthetic ones.
struct Graph {
  int node_count = 0;
  Mat adjacency;  // node_count x node_count
  Mat features;   // node_count x feature_dim
  int label = 0;

  void validate() const {
    if (node_count <= 0) throw std::invalid_argument("Graph: node_count must be positive");
    if (adjacency.rows() != node_count || adjacency.cols() != node_count)
      throw std::invalid_argument("Graph: adjacency must be node_count x node_count");
    if (features.rows() != node_count)
      throw std::invalid_argument("Graph: features row count must equal node_count");
    for (int i = 0; i < node_count; ++i) {
      if (adjacency(i, i) != 0.0)
        throw std::invalid_argument("Graph: adjacency diagonal must be zero");
      for (int j = i + 1; j < node_count; ++j) {
        if (adjacency(i, j) != adjacency(j, i))
          throw std::invalid_argument("Graph: adjacency must be symmetric");
        if (adjacency(i, j) < 0.0)
          throw std::invalid_argument("Graph: adjacency must be non-negative");
      }
    }
  }
};

struct GraphDataset {
  std::vector<Graph> graphs;
  int num_classes = 0;
  int feature_dim = 0;
  std::vector<std::vector<int>> class_index;  // class -> graph indices
  std::vector<int> train_idx, val_idx, test_idx;

  int size() const { return static_cast<int>(graphs.size()); }

  void rebuild_class_index() {
    class_index.assign(static_cast<size_t>(num_classes), {});
    for (int i = 0; i < size(); ++i) {
      int c = graphs[static_cast<size_t>(i)].label;
      if (c < 0 || c >= num_classes)
        throw std::invalid_argument("GraphDataset: label out of range");
      class_index[static_cast<size_t>(c)].push_back(i);
    }
  }

  // class -> indices restricted to the training split
  std::vector<std::vector<int>> train_class_index() const {
    std::vector<std::vector<int>> out(static_cast<size_t>(num_classes));
    for (int i : train_idx)
      out[static_cast<size_t>(graphs[static_cast<size_t>(i)].label)].push_back(i);
    return out;
  }
};

/// Symmetric GCN normalization with self-loops:
///   A_hat = D~^{-1/2} (A + I) D~^{-1/2},  D~ = diag(rowsum(A + I)).
/// Works on weighted adjacency; row sums are >= 1 after adding self-loops.
inline Mat normalize_adjacency(const Mat& a) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("normalize_adjacency: matrix not square");
  Mat with_loops = a + Mat::Identity(n, n);
  Vec d_inv_sqrt = with_loops.rowwise().sum().array().rsqrt();
  return d_inv_sqrt.asDiagonal() * with_loops * d_inv_sqrt.asDiagonal();
}

/// Rounded (half-up) mean node count over the training split; the synthetic
/// graph size per the paper's convention.
inline int average_node_count(const GraphDataset& ds) {
  if (ds.train_idx.empty())
    throw std::invalid_argument("average_node_count: empty training split");
  double total = 0.0;
  for (int i : ds.train_idx) total += ds.graphs[static_cast<size_t>(i)].node_count;
  return static_cast<int>(std::floor(total / ds.train_idx.size() + 0.5));
}

/// Random train/val/test split under `seed`. Sizes are floor(r0*N), floor(r1*N)
/// and the remainder.
inline GraphDataset split_dataset(GraphDataset ds, std::array<double, 3> ratios,
                                  uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  for (double r : ratios)
    if (r <= 0.0 || r >= 1.0) throw std::invalid_argument("split ratio outside (0,1)");
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");
  if (ds.graphs.empty()) throw std::invalid_argument("split_dataset: empty dataset");

  std::vector<int> perm(static_cast<size_t>(ds.size()));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(splitmix64(seed));
  rng.shuffle(perm);

  int n = ds.size();
  int n_train = static_cast<int>(std::floor(ratios[0] * n));
  int n_val = static_cast<int>(std::floor(ratios[1] * n));
  ds.train_idx.assign(perm.begin(), perm.begin() + n_train);
  ds.val_idx.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  ds.test_idx.assign(perm.begin() + n_train + n_val, perm.end());
  return ds;
}

}  // namespace doscond
