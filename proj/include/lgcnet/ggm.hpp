#pragma once

#include <string_view>
#include <vector>

#include "lgcnet/rng.hpp"
#include "lgcnet/tensor.hpp"

namespace lgc {

enum class GgmMode { kEdgeSimilarity, kOperationIdentity, kFc, kNone };

std::string_view ggm_mode_name(GgmMode mode);
/// Throws ConfigError on an unknown name.
GgmMode ggm_mode_from_name(std::string_view name);

struct GgmConfig {
  GgmMode mode = GgmMode::kEdgeSimilarity;
  double gamma = 0.5;
  int dim = 64;
  /// Feed the updated parameters of cell k-1 (instead of the raw ones) into cell k.
  bool cascade = false;
};

/// Trainable weights for one adjacent cell pair (k-1, k).
///
/// In edge-similarity and fc modes the graph nodes are the p edges and their
/// features are rows of q logits. In operation-identity mode every (edge, op)
/// entry is a node with a scalar feature, so the embeddings map 1 -> d -> 1.
struct GgmPairWeights {
  Tensor w1;      // (q, q) similarity transform of cell k
  Tensor w2;      // (q, q) similarity transform of cell k-1
  Tensor embed_w;  // (f, d)
  Tensor embed_b;  // (d)
  Tensor out_w;    // (d, f)
  Tensor out_b;    // (f)
  Tensor gcn;      // (d, d)

  std::vector<Tensor> parameters() const;
};

/// One weight set per pair (k-1, k) for k = 1 .. cells-1. The output map
/// starts at zero, so a fresh module leaves every cell unchanged.
struct GgmWeights {
  GgmConfig config;
  std::vector<GgmPairWeights> pairs;  // pairs[k - 1] serves cell k

  static GgmWeights make(const GgmConfig& config, int cells, int p, int q, Rng& rng);
  std::vector<Tensor> parameters() const;
};

/// Row-wise softmax of (a_k w1)(a_{k-1} w2)^T, a p x p row-stochastic matrix.
Tensor adjacency(const Tensor& current, const Tensor& previous, const Tensor& w1, const Tensor& w2);

/// A X W + X.
Tensor gcn_propagate(const Tensor& x, const Tensor& adj, const Tensor& weight);

/// Row-wise softmax of vec(a_k) vec(a_{k-1})^T, a (p q) x (p q) matrix.
Tensor operation_identity_adjacency(const Tensor& current, const Tensor& previous);

/// a'_k = a_k + γ · out(G(embed(a_{k-1}), A)) for the configured mode.
/// Mode kNone returns `current` unchanged.
Tensor ggm_update(const Tensor& current, const Tensor& previous, const GgmPairWeights& w, const GgmConfig& config);

/// Applies ggm_update along the chain. Cell 0 passes through unchanged.
std::vector<Tensor> ggm_chain(const std::vector<Tensor>& cells, const GgmWeights& weights);

}  // namespace lgc
