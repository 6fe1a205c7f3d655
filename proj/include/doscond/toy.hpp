#pragma once

#include "doscond/graph.hpp"

namespace doscond {

namespace detail {

inline Graph ring_graph(int n, int label) {
  Graph g;
  g.node_count = n;
  g.adjacency = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    int j = (i + 1) % n;
    g.adjacency(i, j) = 1.0;
    g.adjacency(j, i) = 1.0;
  }
  g.label = label;
  return g;
}

inline Graph path_graph(int n, int label) {
  Graph g;
  g.node_count = n;
  g.adjacency = Mat::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) {
    g.adjacency(i, i + 1) = 1.0;
    g.adjacency(i + 1, i) = 1.0;
  }
  g.label = label;
  return g;
}

inline void set_toy_features(Graph& g) {
  g.features = Mat::Ones(g.node_count, 2);
  for (int i = 0; i < g.node_count; ++i)
    g.features(i, 1) = g.adjacency.row(i).sum() / 2.0;  // half-degree
}

}  // namespace detail

/// Built-in deterministic toy dataset: cycles (class 0) vs paths (class 1) on
/// 3..5 nodes, replicated, with a constant feature and a degree feature.
/// Ships with the binary so property tests run without any downloads.
inline GraphDataset toy_dataset(int copies_per_shape = 8, uint64_t split_seed = 7) {
  GraphDataset ds;
  ds.num_classes = 2;
  ds.feature_dim = 2;
  for (int n = 3; n <= 5; ++n) {
    for (int k = 0; k < copies_per_shape; ++k) {
      Graph ring = detail::ring_graph(n, 0);
      detail::set_toy_features(ring);
      ds.graphs.push_back(std::move(ring));
      Graph path = detail::path_graph(n, 1);
      detail::set_toy_features(path);
      ds.graphs.push_back(std::move(path));
    }
  }
  ds.rebuild_class_index();
  return split_dataset(std::move(ds), {0.8, 0.1, 0.1}, split_seed);
}

}  // namespace doscond
