#pragma once

// Straight-line reference implementations used as test oracles. They share
// no code with the library beyond the plain data structs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "sgmil/model.hpp"
#include "sgmil/survival.hpp"
#include "sgmil/wsigraph.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const sgmil::Matrix& m) {
  Mat out(m.rows(), Vec(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

struct Forward {
  std::array<double, 2> logits{};
  Vec alpha;
};

// Node features, directed kNN edges and weights in; logits and attention out.
inline Forward forward(const sgmil::FeatureBag& bag, const std::vector<sgmil::Edge>& edges,
                       const sgmil::ModelParams& p) {
  const std::size_t n = bag.size(), d = bag.dim, w = p.shape.width, ha = p.shape.attn_dim;

  std::vector<std::set<std::size_t>> nb(n);
  for (const auto& e : edges) {
    nb[e.src].insert(e.dst);
    nb[e.dst].insert(e.src);
  }

  const Mat pw = to_mat(p.proj_weight);
  Mat h(n, Vec(w, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double s = p.proj_bias(0, j);
      for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(bag.features[i * d + k]) * pw[k][j];
      h[i][j] = s;
    }
  }

  for (const auto& blk : p.blocks) {
    Mat r(n, Vec(w));
    for (std::size_t i = 0; i < n; ++i) {
      double mean = 0.0;
      for (double v : h[i]) mean += v;
      mean /= static_cast<double>(w);
      double var = 0.0;
      for (double v : h[i]) var += (v - mean) * (v - mean);
      var /= static_cast<double>(w);
      for (std::size_t j = 0; j < w; ++j) {
        const double z = blk.norm_scale(0, j) * (h[i][j] - mean) / std::sqrt(var + sgmil::kLayerNormEps) +
                         blk.norm_shift(0, j);
        r[i][j] = std::max(z, 0.0);
      }
    }
    Mat next = h;
    for (std::size_t i = 0; i < n; ++i) {
      Vec m(w);
      for (std::size_t j = 0; j < w; ++j) {
        if (nb[i].empty()) {
          m[j] = r[i][j];
          continue;
        }
        double acc = 0.0;
        for (std::size_t q : nb[i]) acc += r[q][j];
        m[j] = 0.5 * (r[i][j] + acc / static_cast<double>(nb[i].size()));
      }
      for (std::size_t j = 0; j < w; ++j) {
        double s = blk.conv_bias(0, j);
        for (std::size_t k = 0; k < w; ++k) s += m[k] * blk.conv_weight(k, j);
        next[i][j] += s;
      }
    }
    h = next;
  }

  Vec score(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t a = 0; a < ha; ++a) {
      double tw = 0.0, tu = 0.0;
      for (std::size_t j = 0; j < w; ++j) {
        tw += h[i][j] * p.attn_w(j, a);
        tu += h[i][j] * p.attn_u(j, a);
      }
      s += p.attn_vec(0, a) * std::tanh(tw) / (1.0 + std::exp(-tu));
    }
    score[i] = s;
  }
  const double mx = *std::max_element(score.begin(), score.end());
  Forward out;
  out.alpha.resize(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += out.alpha[i] = std::exp(score[i] - mx);
  for (double& a : out.alpha) a /= z;

  Vec pooled(w, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) pooled[j] += out.alpha[i] * h[i][j];

  const auto t = static_cast<std::size_t>(bag.cancer_type);
  for (int c = 0; c < 2; ++c) {
    double s = p.head_bias(0, c);
    for (std::size_t j = 0; j < w; ++j) s += pooled[j] * p.head_weight(j, c);
    for (std::size_t j = 0; j < w; ++j) s += (p.class_fc(t, j) + p.class_bias(0, j)) * p.head_weight(w + j, c);
    out.logits[c] = s;
  }
  return out;
}

// All pairs sorted by (squared distance, index).
inline std::vector<sgmil::Edge> knn(const std::vector<sgmil::Point>& pts, int k) {
  std::vector<sgmil::Edge> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<std::pair<std::int64_t, std::size_t>> cand;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j == i) continue;
      const std::int64_t dx = pts[i][0] - pts[j][0], dy = pts[i][1] - pts[j][1];
      cand.push_back({dx * dx + dy * dy, j});
    }
    std::sort(cand.begin(), cand.end());
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
    for (std::size_t c = 0; c < take; ++c)
      out.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(cand[c].second)});
  }
  return out;
}

// Every split tried; between-class variance compared as exact fractions.
// Only valid for small histogram totals.
inline int otsu(const std::vector<std::uint64_t>& hist) {
  int occupied = 0, only = -1;
  for (int i = 0; i < 256; ++i)
    if (hist[i]) ++occupied, only = i;
  if (occupied == 1) return only;
  int best = -1;
  __int128 best_num = 0, best_den = 1;
  for (int t = 0; t < 255; ++t) {
    __int128 w0 = 0, w1 = 0, s0 = 0, s1 = 0;
    for (int i = 0; i <= t; ++i) w0 += hist[i], s0 += static_cast<__int128>(hist[i]) * i;
    for (int i = t + 1; i < 256; ++i) w1 += hist[i], s1 += static_cast<__int128>(hist[i]) * i;
    if (w0 == 0 || w1 == 0) continue;
    // w0 w1 (mu0 - mu1)^2 = (s0 w1 - s1 w0)^2 / (w0 w1)
    const __int128 diff = s0 * w1 - s1 * w0;
    const __int128 num = diff * diff, den = w0 * w1;
    if (best < 0 || num * best_den > best_num * den) {
      best = t;
      best_num = num;
      best_den = den;
    }
  }
  return best;
}

inline double auc(const std::vector<double>& s, const std::vector<int>& y) {
  long long twice = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
    }
  }
  return static_cast<double>(twice) / static_cast<double>(2 * pairs);
}

struct Operating {
  double threshold = 0.0;
  long long j_scaled = 0;  // (sens + spec - 1) * P * N
};

// Candidate thresholds are the distinct scores, ascending, lowest wins ties.
inline Operating operating_point(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> cand = s;
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  long long pos = 0, neg = 0;
  for (int v : y) (v == 1 ? pos : neg) += 1;
  Operating best{0.0, 0};
  bool first = true;
  for (double t : cand) {
    long long tp = 0, tn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (y[i] == 1 && s[i] >= t) ++tp;
      if (y[i] == 0 && s[i] < t) ++tn;
    }
    const long long j = tp * neg + tn * pos - pos * neg;
    if (first || j > best.j_scaled) {
      best = {t, j};
      first = false;
    }
  }
  return best;
}

// Two-sided exact p over every relabelling of the pooled sample.
inline double mann_whitney_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pool = a;
  pool.insert(pool.end(), b.begin(), b.end());
  const std::size_t n = pool.size(), na = a.size();
  auto u2_of = [&](std::uint32_t mask) {
    long long u2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(mask >> i & 1u)) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (mask >> j & 1u) continue;
        u2 += pool[i] > pool[j] ? 2 : pool[i] == pool[j] ? 1 : 0;
      }
    }
    return u2;
  };
  const long long centre2 = static_cast<long long>(na * b.size());
  const long long obs = std::llabs(u2_of((1u << na) - 1) - centre2);
  long long extreme = 0, total = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != na) continue;
    ++total;
    if (std::llabs(u2_of(mask) - centre2) >= obs) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

// Breslow partial log-likelihood with covariate 1 for TMB-H.
inline double cox_loglik(const std::vector<sgmil::SurvivalRecord>& recs, double beta) {
  std::set<double> times;
  for (const auto& r : recs)
    if (r.event) times.insert(r.time);
  double ll = 0.0;
  for (double t : times) {
    double risk = 0.0, d = 0.0, dx = 0.0;
    for (const auto& r : recs) {
      const double x = r.group == sgmil::TmbClass::High ? 1.0 : 0.0;
      if (r.time >= t) risk += std::exp(beta * x);
      if (r.event && r.time == t) d += 1.0, dx += x;
    }
    ll += beta * dx - d * std::log(risk);
  }
  return ll;
}

// Coarse grid then repeated local refinement down to a 1e-9 step.
inline double cox_grid_argmax(const std::vector<sgmil::SurvivalRecord>& recs, double lo = -6.0, double hi = 6.0) {
  double best = lo, step = 1e-2;
  double best_ll = cox_loglik(recs, lo);
  for (double b = lo; b <= hi; b += step) {
    const double ll = cox_loglik(recs, b);
    if (ll > best_ll) best_ll = ll, best = b;
  }
  while (step > 1e-9) {
    const double centre = best;
    const double next = step / 10.0;
    for (int i = -10; i <= 10; ++i) {
      const double b = centre + i * next;
      const double ll = cox_loglik(recs, b);
      if (ll > best_ll) best_ll = ll, best = b;
    }
    step = next;
  }
  return best;
}

}  // namespace oracle
