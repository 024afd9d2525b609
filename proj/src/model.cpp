#include "sgmil/model.hpp"

#include <algorithm>
#include <cmath>

#include "sgmil/error.hpp"
#include "sgmil/kernels.hpp"
#include "sgmil/rng.hpp"

namespace sgmil {

namespace {

Matrix row_vector(std::size_t n, double fill = 0.0) { return Matrix(1, n, fill); }

void glorot(Matrix& m, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (double& v : m.values()) v = rng.uniform(-a, a);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct BlockCache {
  Matrix xhat;
  std::vector<double> inv_std;
  Matrix z;  // layer norm output, before relu
  Matrix m;  // aggregated relu(z)
};

struct ForwardCache {
  Matrix x;
  std::vector<Matrix> h;  // h[0] projection, h[b + 1] output of block b
  std::vector<BlockCache> blocks;
  Matrix tanh_branch;
  Matrix gate;
  AttentionResult attention;
  std::vector<double> class_vec;
  std::array<double, 2> logits{};
};

void check_graph(const SlideGraph& graph, const ModelParams& params) {
  const auto& bag = graph.bag;
  if (bag.size() == 0) fail(ErrorKind::EmptyBag, "bag " + bag.slide_id + " is empty");
  if (bag.dim != params.shape.input_dim) {
    fail(ErrorKind::InvalidInput, "bag " + bag.slide_id + " has feature dimension " + std::to_string(bag.dim) +
                                      ", model expects " + std::to_string(params.shape.input_dim));
  }
  if (graph.neighborhood.nodes() != bag.size()) {
    fail(ErrorKind::InvalidInput, "graph neighbourhood does not cover bag " + bag.slide_id);
  }
}

void layer_norm_into(const Matrix& h, std::span<const double> scale, std::span<const double> shift, Matrix& xhat,
                     std::vector<double>& inv_std, Matrix& out) {
  const std::size_t n = h.rows(), w = h.cols();
  xhat.resize(n, w);
  out.resize(n, w);
  inv_std.assign(n, 0.0);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * w > 32768)
  for (long li = 0; li < rows; ++li) {
    const auto i = static_cast<std::size_t>(li);
    auto in = h.row(i);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(w);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[i] = inv;
    auto xh = xhat.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < w; ++j) {
      xh[j] = (in[j] - mean) * inv;
      o[j] = scale[j] * xh[j] + shift[j];
    }
  }
}

// Transpose of aggregate_neighbors for a symmetric neighbourhood:
// dR_j = c_self(j) dM_j + sum_{i in Nb(j)} dM_i / (2 |Nb(i)|).
Matrix aggregate_neighbors_backward(const Matrix& dm, const Neighborhood& nb) {
  const std::size_t n = dm.rows(), w = dm.cols();
  Matrix dr(n, w);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * w > 32768)
  for (long lj = 0; lj < rows; ++lj) {
    const auto j = static_cast<std::size_t>(lj);
    auto out = dr.row(j);
    const auto nbj = nb.of(j);
    const double self = nbj.empty() ? 1.0 : 0.5;
    auto own = dm.row(j);
    for (std::size_t c = 0; c < w; ++c) out[c] = self * own[c];
    for (std::uint32_t i : nbj) {
      const double coef = 0.5 / static_cast<double>(nb.of(i).size());
      auto src = dm.row(i);
      for (std::size_t c = 0; c < w; ++c) out[c] += coef * src[c];
    }
  }
  return dr;
}

std::array<double, 2> classify_vector(std::span<const double> pooled, std::span<const double> class_vec,
                                      const ModelParams& p) {
  const std::size_t w = p.shape.width;
  std::array<double, 2> logits = {p.head_bias(0, 0), p.head_bias(0, 1)};
  for (int k = 0; k < 2; ++k) {
    double acc = 0.0;
    for (std::size_t r = 0; r < w; ++r) acc += pooled[r] * p.head_weight(r, k);
    for (std::size_t r = 0; r < w; ++r) acc += class_vec[r] * p.head_weight(w + r, k);
    logits[k] += acc;
  }
  return logits;
}

std::vector<double> class_vector(CancerType type, const ModelParams& p) {
  const auto t = static_cast<std::size_t>(type);
  if (t >= kNumCancerTypes) fail(ErrorKind::InvalidInput, "unknown cancer type");
  std::vector<double> c(p.shape.width);
  for (std::size_t j = 0; j < c.size(); ++j) c[j] = p.class_fc(t, j) + p.class_bias(0, j);
  return c;
}

ScaleOutput forward_impl(const SlideGraph& graph, const ModelParams& params, ForwardCache& cache) {
  check_graph(graph, params);
  const auto& nb = graph.neighborhood;
  cache.x = bag_matrix(graph.bag);
  cache.h.assign(params.blocks.size() + 1, Matrix());
  kernels::matmul(cache.x, params.proj_weight, cache.h[0]);
  kernels::add_row_bias(cache.h[0], params.proj_bias.row(0));

  cache.blocks.assign(params.blocks.size(), BlockCache());
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const auto& blk = params.blocks[b];
    auto& bc = cache.blocks[b];
    layer_norm_into(cache.h[b], blk.norm_scale.row(0), blk.norm_shift.row(0), bc.xhat, bc.inv_std, bc.z);
    Matrix relu = bc.z;
    for (double& v : relu.values()) v = v > 0.0 ? v : 0.0;
    bc.m = aggregate_neighbors(relu, nb);
    Matrix conv;
    kernels::matmul(bc.m, blk.conv_weight, conv);
    kernels::add_row_bias(conv, blk.conv_bias.row(0));
    cache.h[b + 1] = cache.h[b];
    auto dst = cache.h[b + 1].values();
    auto src = conv.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  const Matrix& g = cache.h.back();
  kernels::matmul(g, params.attn_w, cache.tanh_branch);
  kernels::matmul(g, params.attn_u, cache.gate);
  for (double& v : cache.tanh_branch.values()) v = std::tanh(v);
  for (double& v : cache.gate.values()) v = sigmoid(v);

  const std::size_t n = g.rows(), w = g.cols(), ha = params.shape.attn_dim;
  auto& att = cache.attention;
  att.scores.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t h = 0; h < ha; ++h) s += params.attn_vec(0, h) * cache.tanh_branch(i, h) * cache.gate(i, h);
    att.scores[i] = s;
  }
  const double max_score = *std::max_element(att.scores.begin(), att.scores.end());
  att.alpha.assign(n, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    att.alpha[i] = std::exp(att.scores[i] - max_score);
    z += att.alpha[i];
  }
  for (double& a : att.alpha) a /= z;
  att.pooled.assign(w, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto gi = g.row(i);
    for (std::size_t j = 0; j < w; ++j) att.pooled[j] += att.alpha[i] * gi[j];
  }

  cache.class_vec = class_vector(graph.bag.cancer_type, params);
  cache.logits = classify_vector(att.pooled, cache.class_vec, params);

  ScaleOutput out;
  out.logits = cache.logits;
  out.prob_high = softmax2(cache.logits)[1];
  out.attention = att.alpha;
  out.pooled = att.pooled;
  return out;
}

}  // namespace

// ---------------------------------------------------------------- params

ModelParams ModelParams::zeros(const ModelShape& shape) {
  if (shape.input_dim == 0 || shape.width == 0 || shape.attn_dim == 0 || shape.blocks == 0) {
    fail(ErrorKind::InvalidInput, "model shape dimensions must be positive");
  }
  ModelParams p;
  p.shape = shape;
  const std::size_t w = shape.width;
  p.proj_weight = Matrix(shape.input_dim, w);
  p.proj_bias = row_vector(w);
  p.blocks.resize(shape.blocks);
  for (auto& b : p.blocks) {
    b.norm_scale = row_vector(w);
    b.norm_shift = row_vector(w);
    b.conv_weight = Matrix(w, w);
    b.conv_bias = row_vector(w);
  }
  p.attn_u = Matrix(w, shape.attn_dim);
  p.attn_w = Matrix(w, shape.attn_dim);
  p.attn_vec = row_vector(shape.attn_dim);
  p.class_fc = Matrix(kNumCancerTypes, w);
  p.class_bias = row_vector(w);
  p.head_weight = Matrix(2 * w, 2);
  p.head_bias = row_vector(2);
  return p;
}

ModelParams ModelParams::initialize(const ModelShape& shape, std::uint64_t seed) {
  ModelParams p = zeros(shape);
  Rng rng(seed);
  glorot(p.proj_weight, rng);
  for (auto& b : p.blocks) {
    std::fill(b.norm_scale.values().begin(), b.norm_scale.values().end(), 1.0);
    glorot(b.conv_weight, rng);
  }
  glorot(p.attn_u, rng);
  glorot(p.attn_w, rng);
  // attn_vec is a Ha x 1 map stored as a row.
  {
    const double a = std::sqrt(6.0 / static_cast<double>(shape.attn_dim + 1));
    for (double& v : p.attn_vec.values()) v = rng.uniform(-a, a);
  }
  glorot(p.class_fc, rng);
  glorot(p.head_weight, rng);
  return p;
}

std::vector<NamedTensor> ModelParams::tensors() {
  std::vector<NamedTensor> out = {{"proj.weight", &proj_weight}, {"proj.bias", &proj_bias}};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    out.push_back({prefix + "norm_scale", &blocks[b].norm_scale});
    out.push_back({prefix + "norm_shift", &blocks[b].norm_shift});
    out.push_back({prefix + "conv_weight", &blocks[b].conv_weight});
    out.push_back({prefix + "conv_bias", &blocks[b].conv_bias});
  }
  out.push_back({"attn.U", &attn_u});
  out.push_back({"attn.W", &attn_w});
  out.push_back({"attn.w", &attn_vec});
  out.push_back({"class_fc.weight", &class_fc});
  out.push_back({"class_fc.bias", &class_bias});
  out.push_back({"head.weight", &head_weight});
  out.push_back({"head.bias", &head_bias});
  return out;
}

std::vector<ConstNamedTensor> ModelParams::tensors() const {
  std::vector<ConstNamedTensor> out;
  for (auto& t : const_cast<ModelParams*>(this)->tensors()) out.push_back({t.name, t.tensor});
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.tensor->size();
  return n;
}

void ModelParams::set_zero() {
  for (auto& t : tensors()) t.tensor->set_zero();
}

// ---------------------------------------------------------------- layers

Matrix bag_matrix(const FeatureBag& bag) {
  Matrix x(bag.size(), bag.dim);
  for (std::size_t i = 0; i < bag.features.size(); ++i) x.data()[i] = static_cast<double>(bag.features[i]);
  return x;
}

Matrix aggregate_neighbors(const Matrix& h, const Neighborhood& nb) {
  if (nb.nodes() != h.rows()) fail(ErrorKind::InvalidInput, "neighbourhood size does not match node count");
  const std::size_t n = h.rows(), w = h.cols();
  Matrix m(n, w);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * w > 32768)
  for (long li = 0; li < rows; ++li) {
    const auto i = static_cast<std::size_t>(li);
    const auto nbi = nb.of(i);
    auto out = m.row(i);
    auto own = h.row(i);
    if (nbi.empty()) {
      std::copy(own.begin(), own.end(), out.begin());
      continue;
    }
    for (std::uint32_t j : nbi) {
      auto src = h.row(j);
      for (std::size_t c = 0; c < w; ++c) out[c] += src[c];
    }
    const double inv = 1.0 / static_cast<double>(nbi.size());
    for (std::size_t c = 0; c < w; ++c) out[c] = 0.5 * (own[c] + out[c] * inv);
  }
  return m;
}

Matrix graph_conv(const Matrix& h, const Neighborhood& nb, const Matrix& weight, std::span<const double> bias) {
  Matrix out;
  kernels::matmul(aggregate_neighbors(h, nb), weight, out);
  kernels::add_row_bias(out, bias);
  return out;
}

Matrix layer_norm(const Matrix& h, std::span<const double> scale, std::span<const double> shift) {
  Matrix xhat, out;
  std::vector<double> inv;
  layer_norm_into(h, scale, shift, xhat, inv, out);
  return out;
}

Matrix deepgcn_block(const Matrix& h, const Neighborhood& nb, const GcnBlockParams& block) {
  Matrix z = layer_norm(h, block.norm_scale.row(0), block.norm_shift.row(0));
  for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
  Matrix out = graph_conv(z, nb, block.conv_weight, block.conv_bias.row(0));
  auto dst = out.values();
  auto src = h.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] + dst[i];
  return out;
}

AttentionResult attention_pool(const Matrix& g, const Matrix& attn_u, const Matrix& attn_w, const Matrix& attn_vec) {
  if (g.rows() == 0) fail(ErrorKind::EmptyBag, "attention_pool: no instances");
  Matrix t, s;
  kernels::matmul(g, attn_w, t);
  kernels::matmul(g, attn_u, s);
  AttentionResult r;
  r.scores.assign(g.rows(), 0.0);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t h = 0; h < attn_vec.cols(); ++h) acc += attn_vec(0, h) * std::tanh(t(i, h)) * sigmoid(s(i, h));
    r.scores[i] = acc;
  }
  const double mx = *std::max_element(r.scores.begin(), r.scores.end());
  r.alpha.resize(g.rows());
  double z = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) z += (r.alpha[i] = std::exp(r.scores[i] - mx));
  for (double& a : r.alpha) a /= z;
  r.pooled.assign(g.cols(), 0.0);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t j = 0; j < g.cols(); ++j) r.pooled[j] += r.alpha[i] * g(i, j);
  }
  return r;
}

std::array<double, 2> fuse_and_classify(std::span<const double> pooled, CancerType type, const ModelParams& params) {
  if (pooled.size() != params.shape.width) fail(ErrorKind::InvalidInput, "pooled vector has wrong width");
  const auto c = class_vector(type, params);
  return classify_vector(pooled, c, params);
}

std::array<double, 2> softmax2(const std::array<double, 2>& logits) {
  const double m = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

double cross_entropy(const std::array<double, 2>& logits, TmbClass label) {
  const double m = std::max(logits[0], logits[1]);
  const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
  return lse - logits[label == TmbClass::High ? 1 : 0];
}

ScaleOutput forward_single_scale(const SlideGraph& graph, const ModelParams& params) {
  ForwardCache cache;
  return forward_impl(graph, params, cache);
}

BackwardResult accumulate_gradients(const SlideGraph& graph, const ModelParams& params, TmbClass label,
                                    double weight, ModelParams& grads) {
  if (!(grads.shape == params.shape)) fail(ErrorKind::InvalidInput, "gradient buffer shape mismatch");
  ForwardCache cache;
  BackwardResult result;
  result.output = forward_impl(graph, params, cache);
  result.loss = weight * cross_entropy(cache.logits, label);

  const std::size_t w = params.shape.width, ha = params.shape.attn_dim;
  const Matrix& g = cache.h.back();
  const std::size_t n = g.rows();
  const auto& att = cache.attention;

  // Head.
  const auto p = softmax2(cache.logits);
  const double y1 = label == TmbClass::High ? 1.0 : 0.0;
  const std::array<double, 2> dlogit = {weight * (p[0] - (1.0 - y1)), weight * (p[1] - y1)};
  for (int k = 0; k < 2; ++k) {
    grads.head_bias(0, k) += dlogit[k];
    for (std::size_t r = 0; r < w; ++r) {
      grads.head_weight(r, k) += att.pooled[r] * dlogit[k];
      grads.head_weight(w + r, k) += cache.class_vec[r] * dlogit[k];
    }
  }
  std::vector<double> d_pooled(w), d_class(w);
  for (std::size_t r = 0; r < w; ++r) {
    d_pooled[r] = params.head_weight(r, 0) * dlogit[0] + params.head_weight(r, 1) * dlogit[1];
    d_class[r] = params.head_weight(w + r, 0) * dlogit[0] + params.head_weight(w + r, 1) * dlogit[1];
  }

  // Class token: only the selected row of class_fc receives gradient.
  const auto t = static_cast<std::size_t>(graph.bag.cancer_type);
  for (std::size_t r = 0; r < w; ++r) {
    grads.class_fc(t, r) += d_class[r];
    grads.class_bias(0, r) += d_class[r];
  }

  // Attention pooling and softmax Jacobian.
  Matrix dg(n, w);
  std::vector<double> d_alpha(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto gi = g.row(i);
    auto dgi = dg.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      dgi[j] = att.alpha[i] * d_pooled[j];
      acc += gi[j] * d_pooled[j];
    }
    d_alpha[i] = acc;
  }
  double weighted = 0.0;
  for (std::size_t i = 0; i < n; ++i) weighted += att.alpha[i] * d_alpha[i];
  Matrix d_tanh_pre(n, ha), d_gate_pre(n, ha);
  for (std::size_t i = 0; i < n; ++i) {
    const double d_score = att.alpha[i] * (d_alpha[i] - weighted);
    for (std::size_t h = 0; h < ha; ++h) {
      const double th = cache.tanh_branch(i, h), sg = cache.gate(i, h);
      grads.attn_vec(0, h) += d_score * th * sg;
      const double dq = d_score * params.attn_vec(0, h);
      d_tanh_pre(i, h) = dq * sg * (1.0 - th * th);
      d_gate_pre(i, h) = dq * th * sg * (1.0 - sg);
    }
  }
  kernels::matmul_tn(g, d_tanh_pre, grads.attn_w, true);
  kernels::matmul_tn(g, d_gate_pre, grads.attn_u, true);
  kernels::matmul_nt(d_tanh_pre, params.attn_w, dg, true);
  kernels::matmul_nt(d_gate_pre, params.attn_u, dg, true);

  // Residual GCN blocks, last to first. dg holds dL/dH_{b+1}.
  for (std::size_t bi = params.blocks.size(); bi-- > 0;) {
    const auto& blk = params.blocks[bi];
    auto& gblk = grads.blocks[bi];
    const auto& bc = cache.blocks[bi];
    kernels::matmul_tn(bc.m, dg, gblk.conv_weight, true);
    kernels::accumulate_column_sums(dg, gblk.conv_bias.row(0));
    Matrix dm;
    kernels::matmul_nt(dg, blk.conv_weight, dm);
    Matrix dz = aggregate_neighbors_backward(dm, graph.neighborhood);
    auto dzv = dz.values();
    auto zv = bc.z.values();
    for (std::size_t i = 0; i < dzv.size(); ++i) {
      if (!(zv[i] > 0.0)) dzv[i] = 0.0;
    }
    auto d_scale = gblk.norm_scale.row(0);
    auto d_shift = gblk.norm_shift.row(0);
    for (std::size_t i = 0; i < n; ++i) {
      auto dzi = dz.row(i);
      auto xh = bc.xhat.row(i);
      for (std::size_t j = 0; j < w; ++j) {
        d_scale[j] += dzi[j] * xh[j];
        d_shift[j] += dzi[j];
      }
    }
    // Layer-norm input gradient, added to the residual path.
    std::vector<double> dxhat(w);
    for (std::size_t i = 0; i < n; ++i) {
      auto dzi = dz.row(i);
      auto xh = bc.xhat.row(i);
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t j = 0; j < w; ++j) {
        dxhat[j] = dzi[j] * blk.norm_scale(0, j);
        mean_d += dxhat[j];
        mean_dx += dxhat[j] * xh[j];
      }
      mean_d /= static_cast<double>(w);
      mean_dx /= static_cast<double>(w);
      auto dgi = dg.row(i);
      const double inv = bc.inv_std[i];
      for (std::size_t j = 0; j < w; ++j) dgi[j] += inv * (dxhat[j] - mean_d - xh[j] * mean_dx);
    }
  }

  kernels::matmul_tn(cache.x, dg, grads.proj_weight, true);
  kernels::accumulate_column_sums(dg, grads.proj_bias.row(0));
  return result;
}

ModelParams backward_single_scale(const SlideGraph& graph, const ModelParams& params, TmbClass label) {
  ModelParams grads = ModelParams::zeros(params.shape);
  accumulate_gradients(graph, params, label, 1.0, grads);
  return grads;
}

std::vector<double> tile_probabilities(const SlideGraph& graph, const ModelParams& params) {
  ForwardCache cache;
  forward_impl(graph, params, cache);
  const Matrix& g = cache.h.back();
  std::vector<double> probs(g.rows());
  for (std::size_t i = 0; i < g.rows(); ++i) {
    probs[i] = softmax2(classify_vector(g.row(i), cache.class_vec, params))[1];
  }
  return probs;
}

double multiscale_ensemble(const ScaleProbabilities& probs, const std::array<double, 3>& weights) {
  double wsum = 0.0;
  int present = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    if (!(weights[s] >= 0.0) || !std::isfinite(weights[s])) {
      fail(ErrorKind::InvalidInput, "ensemble weights must be finite and non-negative");
    }
    if (probs[s]) {
      wsum += weights[s];
      ++present;
    }
  }
  if (present == 0) fail(ErrorKind::InvalidInput, "multiscale_ensemble: no scale predictions");
  double out = 0.0, lo = 1.0, hi = 0.0;
  for (std::size_t s = 0; s < 3; ++s) {
    if (!probs[s]) continue;
    const double wt = wsum > 0.0 ? weights[s] / wsum : 1.0 / present;
    out += wt * *probs[s];
    lo = std::min(lo, *probs[s]);
    hi = std::max(hi, *probs[s]);
  }
  // rounding in the weighted sum must not leave the input range
  return std::clamp(out, lo, hi);
}

}  // namespace sgmil
