#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgmil/matrix.hpp"
#include "sgmil/types.hpp"
#include "sgmil/wsigraph.hpp"

namespace sgmil {

struct ModelShape {
  std::size_t input_dim = 0;
  std::size_t width = 512;
  std::size_t attn_dim = 256;
  std::size_t blocks = 2;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

inline constexpr double kLayerNormEps = 1e-5;

struct GcnBlockParams {
  Matrix norm_scale;   // 1 x W
  Matrix norm_shift;   // 1 x W
  Matrix conv_weight;  // W x W, applied as row * conv_weight
  Matrix conv_bias;    // 1 x W

  friend bool operator==(const GcnBlockParams&, const GcnBlockParams&) = default;
};

struct NamedTensor {
  std::string name;
  Matrix* tensor;
};
struct ConstNamedTensor {
  std::string name;
  const Matrix* tensor;
};

/// Trainable weights of one single-scale network. All matrices act on row
/// vectors (out = in * weight + bias).
struct ModelParams {
  ModelShape shape;
  Matrix proj_weight;  // D x W
  Matrix proj_bias;    // 1 x W
  std::vector<GcnBlockParams> blocks;
  Matrix attn_u;       // W x Ha, sigmoid gate
  Matrix attn_w;       // W x Ha, tanh branch
  Matrix attn_vec;     // 1 x Ha
  Matrix class_fc;     // 7 x W, row t is the embedding of cancer type t
  Matrix class_bias;   // 1 x W
  Matrix head_weight;  // 2W x 2, rows [0, W) see the pooled vector
  Matrix head_bias;    // 1 x 2

  /// All-zero parameters of the given shape.
  static ModelParams zeros(const ModelShape& shape);
  /// Glorot-uniform matrices, zero biases, unit norm scales.
  static ModelParams initialize(const ModelShape& shape, std::uint64_t seed);

  std::vector<NamedTensor> tensors();
  std::vector<ConstNamedTensor> tensors() const;
  std::size_t parameter_count() const;
  void set_zero();

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Copies a bag's 32-bit features into a 64-bit N x D matrix.
Matrix bag_matrix(const FeatureBag& bag);

/// Per node: (H_i + mean of neighbour rows) / 2, or H_i for isolated nodes.
Matrix aggregate_neighbors(const Matrix& h, const Neighborhood& nb);

/// out_i = ((H_i + mean_{j in Nb(i)} H_j) / 2) * weight + bias.
Matrix graph_conv(const Matrix& h, const Neighborhood& nb, const Matrix& weight, std::span<const double> bias);

/// Per-row layer normalisation with learned scale and shift.
Matrix layer_norm(const Matrix& h, std::span<const double> scale, std::span<const double> shift);

/// H + graph_conv(relu(layer_norm(H))).
Matrix deepgcn_block(const Matrix& h, const Neighborhood& nb, const GcnBlockParams& block);

struct AttentionResult {
  std::vector<double> pooled;  // W
  std::vector<double> alpha;   // N, softmax weights
  std::vector<double> scores;  // N, pre-softmax
};

/// Gated attention: a_i = w . (tanh(g_i W) * sigmoid(g_i U)), alpha = softmax(a),
/// pooled = sum alpha_i g_i.
AttentionResult attention_pool(const Matrix& g, const Matrix& attn_u, const Matrix& attn_w, const Matrix& attn_vec);

/// logits = [pooled, class_fc[type] + class_bias] * head_weight + head_bias.
std::array<double, 2> fuse_and_classify(std::span<const double> pooled, CancerType type, const ModelParams& params);

struct ScaleOutput {
  std::array<double, 2> logits{};
  double prob_high = 0.5;
  std::vector<double> attention;
  std::vector<double> pooled;
};

std::array<double, 2> softmax2(const std::array<double, 2>& logits);

/// Cross-entropy of the softmax of logits against the label.
double cross_entropy(const std::array<double, 2>& logits, TmbClass label);

ScaleOutput forward_single_scale(const SlideGraph& graph, const ModelParams& params);

struct BackwardResult {
  double loss = 0.0;  // weighted cross-entropy
  ScaleOutput output;
};

/// Adds weight * dCE/dtheta for every tensor into grads (same shape as
/// params) and returns the forward result.
BackwardResult accumulate_gradients(const SlideGraph& graph, const ModelParams& params, TmbClass label,
                                    double weight, ModelParams& grads);

/// Gradients of the unweighted cross-entropy with respect to every tensor.
ModelParams backward_single_scale(const SlideGraph& graph, const ModelParams& params, TmbClass label);

/// Per-tile TMB-high probability from the fused head applied to each tile's
/// graph representation in place of the pooled vector.
std::vector<double> tile_probabilities(const SlideGraph& graph, const ModelParams& params);

/// Probabilities keyed by scale index (x5, x10, x20); missing scales absent.
using ScaleProbabilities = std::array<std::optional<double>, 3>;

/// Convex combination of present scale probabilities; weights are
/// renormalised over present scales (uniform if they sum to zero there).
double multiscale_ensemble(const ScaleProbabilities& probs, const std::array<double, 3>& weights);

}  // namespace sgmil
