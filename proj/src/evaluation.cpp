#include "sgmil/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "sgmil/error.hpp"
#include "sgmil/rng.hpp"

namespace sgmil {

namespace {

struct ClassCounts {
  std::int64_t pos = 0;
  std::int64_t neg = 0;
};

ClassCounts check_binary(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size()) {
    fail(ErrorKind::InvalidInput, std::string(what) + ": scores and labels differ in length");
  }
  ClassCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) fail(ErrorKind::InvalidInput, std::string(what) + ": NaN score");
    if (labels[i] == 1) {
      ++c.pos;
    } else if (labels[i] == 0) {
      ++c.neg;
    } else {
      fail(ErrorKind::InvalidInput, std::string(what) + ": labels must be 0 or 1");
    }
  }
  if (c.pos == 0 || c.neg == 0) {
    fail(ErrorKind::UndefinedMetric, std::string(what) + ": both classes must be present");
  }
  return c;
}

// Twice the Mann-Whitney U of the positives, from doubled midranks.
std::int64_t doubled_u(std::span<const double> scores, std::span<const int> labels, std::int64_t n_pos) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::int64_t rank_sum2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1 .. j share the midrank (i + 1 + j) / 2
    const auto mid2 = static_cast<std::int64_t>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum2 += mid2;
    }
    i = j;
  }
  return rank_sum2 - n_pos * (n_pos + 1);
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  const auto c = check_binary(scores, labels, "roc_auc");
  const std::int64_t u2 = doubled_u(scores, labels, c.pos);
  return static_cast<double>(u2) / static_cast<double>(2 * c.pos * c.neg);
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) fail(ErrorKind::InvalidInput, "quantile of empty data");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

AucInterval bootstrap_ci(std::span<const double> scores, std::span<const int> labels, int n_boot, double level,
                         std::uint64_t seed) {
  check_binary(scores, labels, "bootstrap_ci");
  if (n_boot < 1) fail(ErrorKind::InvalidInput, "bootstrap_ci: n_boot must be >= 1");
  if (!(level > 0.0 && level < 1.0)) fail(ErrorKind::InvalidInput, "bootstrap_ci: level must lie in (0, 1)");
  const std::size_t n = scores.size();
  AucInterval out;
  out.auc = roc_auc(scores, labels);

  std::vector<double> aucs(static_cast<std::size_t>(n_boot));
  bool exhausted = false;
#pragma omp parallel
  {
    std::vector<double> s(n);
    std::vector<int> l(n);
#pragma omp for schedule(static)
    for (int b = 0; b < n_boot; ++b) {
      Rng rng(seed + static_cast<std::uint64_t>(b));
      bool ok = false;
      for (int attempt = 0; attempt < 10000 && !ok; ++attempt) {
        std::int64_t pos = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const auto k = static_cast<std::size_t>(rng.below(n));
          s[i] = scores[k];
          l[i] = labels[k];
          pos += l[i];
        }
        ok = pos > 0 && pos < static_cast<std::int64_t>(n);
      }
      if (!ok) {
#pragma omp atomic write
        exhausted = true;
        continue;
      }
      const std::int64_t pos = std::count(l.begin(), l.end(), 1);
      aucs[static_cast<std::size_t>(b)] =
          static_cast<double>(doubled_u(s, l, pos)) / static_cast<double>(2 * pos * (static_cast<std::int64_t>(n) - pos));
    }
  }
  if (exhausted) fail(ErrorKind::UndefinedMetric, "bootstrap_ci: could not draw resamples containing both classes");
  std::sort(aucs.begin(), aucs.end());
  const double tail = (1.0 - level) / 2.0;
  out.lo = std::min(quantile_sorted(aucs, tail), out.auc);
  out.hi = std::max(quantile_sorted(aucs, 1.0 - tail), out.auc);
  return out;
}

OperatingPoint operating_point(std::span<const double> scores, std::span<const int> labels) {
  const auto c = check_binary(scores, labels, "operating_point");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sweep thresholds upward: everything at index >= i is predicted positive.
  std::int64_t tp = c.pos, tn = 0;
  std::int64_t best_j = std::numeric_limits<std::int64_t>::min();
  OperatingPoint best;
  for (std::size_t i = 0; i < order.size();) {
    // J * P * N as an exact integer.
    const std::int64_t j_scaled = tp * c.neg + tn * c.pos - c.pos * c.neg;
    if (j_scaled > best_j) {
      best_j = j_scaled;
      best.threshold = scores[order[i]];
      best.sensitivity = static_cast<double>(tp) / static_cast<double>(c.pos);
      best.specificity = static_cast<double>(tn) / static_cast<double>(c.neg);
    }
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) {
        --tp;
      } else {
        ++tn;
      }
      ++j;
    }
    i = j;
  }
  best.youden = static_cast<double>(best_j) / static_cast<double>(c.pos * c.neg);
  best.degenerate = best_j <= 0;
  return best;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const auto c = check_binary(scores, labels, "roc_curve");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> pts = {{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) {
        ++tp;
      } else {
        ++fp;
      }
      ++j;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(c.neg),
                   static_cast<double>(tp) / static_cast<double>(c.pos), scores[order[i]]});
    i = j;
  }
  return pts;
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::InvalidInput, "pearson_r: length mismatch");
  if (x.size() < 2) fail(ErrorKind::InvalidInput, "pearson_r: need at least two pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorKind::UndefinedMetric, "pearson_r: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

long long derive_count_cutoff(std::span<const double> tmb, std::span<const long long> counts, double tmb_cutoff) {
  if (tmb.empty() || counts.empty()) fail(ErrorKind::InvalidInput, "derive_count_cutoff: empty input");
  if (tmb.size() != counts.size()) fail(ErrorKind::InvalidInput, "derive_count_cutoff: length mismatch");
  if (tmb.size() < 2) fail(ErrorKind::InvalidInput, "derive_count_cutoff: need at least two pairs");
  const auto target =
      static_cast<std::int64_t>(std::count_if(tmb.begin(), tmb.end(), [&](double v) { return v > tmb_cutoff; }));
  std::vector<long long> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<std::int64_t>(sorted.size());

  // Exceedance only changes at observed counts; the smallest c in each
  // constant run is the observed value itself (or min - 1 for "all exceed").
  long long best_c = sorted.front() - 1;
  std::int64_t best_gap = std::abs(n - target);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i > 0 && sorted[i] == sorted[i - 1]) continue;
    const auto above = static_cast<std::int64_t>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), sorted[i]));
    const std::int64_t gap = std::abs(above - target);
    if (gap < best_gap) {
      best_gap = gap;
      best_c = sorted[i];
    }
  }
  return best_c;
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) fail(ErrorKind::InvalidInput, "mann_whitney_u: both samples must be non-empty");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  for (double v : pooled) {
    if (std::isnan(v)) fail(ErrorKind::InvalidInput, "mann_whitney_u: NaN value");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return pooled[x] < pooled[y]; });
  std::vector<std::int64_t> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && pooled[order[j]] == pooled[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = static_cast<std::int64_t>(i + 1 + j);
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  std::int64_t r2a = 0;
  for (std::size_t i = 0; i < na; ++i) r2a += rank2[i];
  const auto ina = static_cast<std::int64_t>(na), inb = static_cast<std::int64_t>(nb);
  const std::int64_t u2 = r2a - ina * (ina + 1);
  MannWhitneyResult res;
  res.u = static_cast<double>(u2) / 2.0;
  const std::int64_t centre2 = ina * inb;  // 2 * mean of U
  const std::int64_t observed_dev = std::abs(u2 - centre2);

  if (na * nb <= 400) {
    // Permutation distribution of the doubled rank sum of the smaller group.
    const bool use_a = na <= nb;
    const std::size_t m = use_a ? na : nb;
    std::int64_t max_sum = 0;
    for (auto r : rank2) max_sum += r;
    std::vector<std::vector<double>> ways(m + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t item = 0; item < n; ++item) {
      const auto r = static_cast<std::size_t>(rank2[item]);
      for (std::size_t c = std::min(m, item + 1); c >= 1; --c) {
        auto& dst = ways[c];
        const auto& src = ways[c - 1];
        for (std::size_t s = dst.size(); s-- > r;) dst[s] += src[s - r];
      }
    }
    const auto im = static_cast<std::int64_t>(m);
    double extreme = 0.0, total = 0.0;
    for (std::size_t s = 0; s < ways[m].size(); ++s) {
      if (ways[m][s] == 0.0) continue;
      total += ways[m][s];
      const std::int64_t u2_m = static_cast<std::int64_t>(s) - im * (im + 1);
      if (std::abs(u2_m - centre2) >= observed_dev) extreme += ways[m][s];
    }
    res.p_value = std::min(1.0, extreme / total);
    res.exact = true;
    return res;
  }

  const double mean = static_cast<double>(na) * static_cast<double>(nb) / 2.0;
  const double nn = static_cast<double>(n);
  const double var = static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
                     ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (var <= 0.0) {
    res.p_value = 1.0;
    return res;
  }
  const double z = std::max(0.0, std::abs(res.u - mean) - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

std::vector<StratumReport> subgroup_eval(std::span<const PatientPrediction> records, const std::string& key,
                                         int n_boot, std::uint64_t seed) {
  auto value_of = [&](const PatientPrediction& r) -> std::string {
    if (key == "cancer_type") return to_string(r.cancer_type);
    auto it = r.metadata.find(key);
    if (it == r.metadata.end()) {
      fail(ErrorKind::InvalidInput, "subgroup_eval: patient " + r.patient_id + " has no metadata key '" + key + "'");
    }
    return it->second;
  };
  if (records.empty()) fail(ErrorKind::InvalidInput, "subgroup_eval: no records");
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i) strata[value_of(records[i])].push_back(i);

  std::vector<StratumReport> out;
  for (const auto& [value, members] : strata) {
    StratumReport rep;
    rep.value = value;
    rep.n = members.size();
    std::vector<double> s;
    std::vector<int> l;
    for (auto i : members) {
      s.push_back(records[i].prob);
      l.push_back(records[i].label);
      rep.n_positive += records[i].label == 1 ? 1 : 0;
    }
    if (rep.n_positive > 0 && rep.n_positive < rep.n) rep.auc = bootstrap_ci(s, l, n_boot, 0.95, seed);
    out.push_back(std::move(rep));
  }
  return out;
}

std::string format_p_value(double p) {
  if (p < 0.0001) return "<0.0001";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", p);
  return buf;
}

}  // namespace sgmil
