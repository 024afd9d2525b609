#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgmil/types.hpp"

namespace sgmil {

// Labels throughout are 0 (TMB-L / negative) or 1 (TMB-H / positive).

/// Mann-Whitney form of the ROC AUC: P(pos > neg) + P(tie) / 2, exact.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct AucInterval {
  double auc = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap over cases. Resample b uses the stream seeded with
/// seed + b; resamples missing a class are redrawn from the same stream.
/// The interval is widened if needed so that lo <= auc <= hi.
AucInterval bootstrap_ci(std::span<const double> scores, std::span<const int> labels, int n_boot = 2000,
                         double level = 0.95, std::uint64_t seed = 0);

/// Linear-interpolation quantile of sorted data (q in [0, 1]).
double quantile_sorted(std::span<const double> sorted, double q);

struct OperatingPoint {
  double threshold = 0.0;  // predict positive when score >= threshold
  double sensitivity = 0.0;
  double specificity = 0.0;
  double youden = 0.0;
  bool degenerate = false;  // best J is zero
};

/// Maximises Youden's J over the distinct scores; ties go to the lower threshold.
OperatingPoint operating_point(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = std::numeric_limits<double>::infinity();
};

/// ROC curve from (0, 0) at threshold +inf down through every distinct score.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

double pearson_r(std::span<const double> x, std::span<const double> y);

/// Quantile-matches a TMB cutoff onto mutation counts: the smallest count c
/// whose exceedance count #(count > c) is closest to #(tmb > tmb_cutoff).
long long derive_count_cutoff(std::span<const double> tmb, std::span<const long long> counts,
                              double tmb_cutoff = 10.0);

struct MannWhitneyResult {
  double u = 0.0;  // U statistic of sample a
  double p_value = 1.0;
  bool exact = false;
};

/// Two-sided test; exact permutation distribution when n_a * n_b <= 400,
/// otherwise the tie-corrected normal approximation with continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

struct PatientPrediction {
  std::string patient_id;
  CancerType cancer_type = CancerType::COAD;
  double prob = 0.0;
  int label = 0;
  std::map<std::string, std::string> metadata;
};

struct StratumReport {
  std::string value;
  std::size_t n = 0;
  std::size_t n_positive = 0;
  std::optional<AucInterval> auc;  // empty when the stratum has one class
};

/// Per value of a metadata key ("cancer_type" is always available): AUC and
/// bootstrap CI of the patients in that stratum, ordered by value.
std::vector<StratumReport> subgroup_eval(std::span<const PatientPrediction> records, const std::string& key,
                                         int n_boot = 2000, std::uint64_t seed = 0);

/// Four significant digits, or "<0.0001" below that resolution.
std::string format_p_value(double p);

}  // namespace sgmil
