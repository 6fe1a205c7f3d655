#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "doscond/common.hpp"
#include "doscond/tape.hpp"

namespace doscond {

enum class Arch { gcn, sgc };
enum class Pooling { mean, sum };

inline std::string to_string(Arch a) { return a == Arch::gcn ? "gcn" : "sgc"; }
inline std::string to_string(Pooling p) { return p == Pooling::mean ? "mean" : "sum"; }

struct ModelConfig {
  Arch arch = Arch::gcn;
  int depth = 3;  // propagation layers (GCN) or propagation steps (SGC)
  int hidden = 128;
  int num_classes = 2;
  Pooling pooling = Pooling::mean;
  int feature_dim = 1;

  void validate() const {
    if (depth < 1) throw std::invalid_argument("ModelConfig: depth must be >= 1");
    if (hidden < 1) throw std::invalid_argument("ModelConfig: hidden must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("ModelConfig: need >= 2 classes");
    if (feature_dim < 1) throw std::invalid_argument("ModelConfig: feature_dim >= 1");
  }
};

// GCN: W^0 (d x h), W^1..W^{K-1} (h x h), classifier (h x C).
// SGC: W1 (d x h), W2 (h x C). No biases anywhere.
inline std::vector<std::pair<int, int>> param_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<int, int>> shapes;
  if (cfg.arch == Arch::gcn) {
    shapes.emplace_back(cfg.feature_dim, cfg.hidden);
    for (int l = 1; l < cfg.depth; ++l) shapes.emplace_back(cfg.hidden, cfg.hidden);
    shapes.emplace_back(cfg.hidden, cfg.num_classes);
  } else {
    shapes.emplace_back(cfg.feature_dim, cfg.hidden);
    shapes.emplace_back(cfg.hidden, cfg.num_classes);
  }
  return shapes;
}

struct ModelParams {
  std::vector<Mat> weights;

  double norm() const {
    double s = 0.0;
    for (const Mat& w : weights) s += w.squaredNorm();
    return std::sqrt(s);
  }
};

struct InitDistribution {
  enum class Scheme { glorot_uniform } scheme = Scheme::glorot_uniform;
  double scale = 1.0;
};

/// Glorot-uniform initialization: Uniform(-b, b) with b = sqrt(6/(fan_in+fan_out)),
/// drawn row-major per layer, layers in order. Deterministic per seed.
inline ModelParams init_params(const ModelConfig& cfg, const InitDistribution& dist,
                               uint64_t seed) {
  if (dist.scale <= 0.0) throw std::invalid_argument("init scale must be > 0");
  Rng rng(splitmix64(seed));
  ModelParams params;
  for (auto [rows, cols] : param_shapes(cfg)) {
    double bound = dist.scale * std::sqrt(6.0 / (rows + cols));
    Mat w(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) w(i, j) = rng.uniform(-bound, bound);
    params.weights.push_back(std::move(w));
  }
  return params;
}

struct ModelVars {
  std::vector<Expr> weights;
};

inline ModelVars make_model_vars(Tape& tape, const ModelConfig& cfg) {
  ModelVars vars;
  for (auto [rows, cols] : param_shapes(cfg)) vars.weights.push_back(tape.variable(rows, cols));
  return vars;
}

inline void bind_params(Binding& binding, const ModelVars& vars, const ModelParams& params) {
  if (vars.weights.size() != params.weights.size())
    throw std::invalid_argument("bind_params: layer count mismatch");
  for (size_t i = 0; i < vars.weights.size(); ++i)
    binding.set(vars.weights[i], params.weights[i]);
}

inline Expr pool_rows(Expr h, Pooling pooling) {
  Expr s = col_sum(h);  // 1 x width
  return pooling == Pooling::sum ? s : scale(1.0 / h.rows(), s);
}

/// H^{l+1} = relu(A_hat H^l W^l) for l < K-1; the last propagation layer is
/// linear, then pooling, then the classifier weight. Returns 1 x C logits.
inline Expr gcn_forward(Expr a_hat, Expr x, const ModelVars& vars, const ModelConfig& cfg) {
  Expr h = x;
  for (int l = 0; l < cfg.depth; ++l) {
    h = matmul(matmul(a_hat, h), vars.weights[static_cast<size_t>(l)]);
    if (l < cfg.depth - 1) h = relu(h);
  }
  return matmul(pool_rows(h, cfg.pooling), vars.weights.back());
}

/// Pool(A_hat^K X W1) W2, fully linear.
inline Expr sgc_forward(Expr a_hat, Expr x, const ModelVars& vars, const ModelConfig& cfg) {
  Expr h = x;
  for (int k = 0; k < cfg.depth; ++k) h = matmul(a_hat, h);
  h = matmul(h, vars.weights[0]);
  return matmul(pool_rows(h, cfg.pooling), vars.weights[1]);
}

inline Expr gnn_logits(Expr a_hat, Expr x, const ModelVars& vars, const ModelConfig& cfg) {
  return cfg.arch == Arch::gcn ? gcn_forward(a_hat, x, vars, cfg)
                               : sgc_forward(a_hat, x, vars, cfg);
}

/// Pooled pre-classifier representation (1 x hidden); the embedding used by
/// the coreset baselines.
inline Expr gnn_embedding(Expr a_hat, Expr x, const ModelVars& vars, const ModelConfig& cfg) {
  Expr h = x;
  if (cfg.arch == Arch::gcn) {
    for (int l = 0; l < cfg.depth; ++l) {
      h = matmul(matmul(a_hat, h), vars.weights[static_cast<size_t>(l)]);
      if (l < cfg.depth - 1) h = relu(h);
    }
  } else {
    for (int k = 0; k < cfg.depth; ++k) h = matmul(a_hat, h);
    h = matmul(h, vars.weights[0]);
  }
  return pool_rows(h, cfg.pooling);
}

inline Mat one_hot_row(int label, int num_classes) {
  if (label < 0 || label >= num_classes)
    throw std::invalid_argument("label out of range [0, C)");
  Mat y = Mat::Zero(1, num_classes);
  y(0, label) = 1.0;
  return y;
}

struct BatchGraph {
  Expr a_hat;  // normalized adjacency (constant or expression)
  Expr x;      // node features
  int label = 0;
};

/// Mean softmax cross-entropy over per-graph logits. Each graph runs through
/// its own adjacency; no padding.
inline Expr batch_loss(Tape& tape, std::span<const BatchGraph> graphs,
                       const ModelVars& vars, const ModelConfig& cfg) {
  if (graphs.empty()) throw std::invalid_argument("batch_loss: empty batch");
  Expr total{};
  for (const BatchGraph& g : graphs) {
    Expr logits = gnn_logits(g.a_hat, g.x, vars, cfg);
    Expr y = tape.constant(one_hot_row(g.label, cfg.num_classes));
    Expr li = softmax_xent(logits, y);
    total = total.tape ? add(total, li) : li;
  }
  return scale(1.0 / static_cast<double>(graphs.size()), total);
}

}  // namespace doscond
