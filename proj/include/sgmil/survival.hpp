#pragma once

#include <span>
#include <string>
#include <vector>

#include "sgmil/types.hpp"

namespace sgmil {

struct SurvivalRecord {
  std::string patient_id;
  double time = 0.0;   // months
  bool event = false;  // true = death observed, false = censored
  TmbClass group = TmbClass::Low;
};

struct KmStep {
  double time = 0.0;
  double survival = 1.0;
  std::size_t at_risk = 0;
  std::size_t events = 0;
  std::size_t censored = 0;
};

/// Product-limit estimate. The first step is at time 0 (survival 1.0 unless
/// events happen at time 0); one further step per distinct positive time. Subjects censored at an event time are still at
/// risk at that time.
std::vector<KmStep> kaplan_meier(std::span<const SurvivalRecord> records);

/// Survival probability of a KM curve at time t (right-continuous).
double survival_at(std::span<const KmStep> curve, double t);

struct LogRankResult {
  double chi_square = 0.0;
  double p_value = 1.0;
  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
};

LogRankResult log_rank(std::span<const SurvivalRecord> group_a, std::span<const SurvivalRecord> group_b);

struct CoxResult {
  double beta = 0.0;
  double hazard_ratio = 1.0;
  double ci_lo = 1.0;
  double ci_hi = 1.0;
  double se = 0.0;
  double p_value = 1.0;  // Wald
  double score = 0.0;    // partial-likelihood gradient at beta
  int iterations = 0;
};

/// Univariate Cox model with covariate 1 for TMB-H and 0 for TMB-L,
/// Breslow ties, Newton-Raphson from beta = 0.
CoxResult cox_hr(std::span<const SurvivalRecord> records);

/// Upper tail of the chi-square distribution with one degree of freedom.
double chi_square_sf_1df(double x);

}  // namespace sgmil
