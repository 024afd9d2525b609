#include "sgmil/survival.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "sgmil/error.hpp"

namespace sgmil {

namespace {

void check_records(std::span<const SurvivalRecord> records, const char* what) {
  for (const auto& r : records) {
    if (!std::isfinite(r.time) || r.time < 0.0) {
      fail(ErrorKind::InvalidInput, std::string(what) + ": survival time of " + r.patient_id +
                                        " must be finite and non-negative");
    }
  }
}

// Per distinct event time: events and at-risk counts in each group.
struct EventTime {
  double time = 0.0;
  std::int64_t events_low = 0, events_high = 0;
  std::int64_t at_risk_low = 0, at_risk_high = 0;
};

std::vector<EventTime> event_table(std::span<const SurvivalRecord> records) {
  std::map<double, EventTime> by_time;
  for (const auto& r : records) {
    if (!r.event) continue;
    auto& e = by_time[r.time];
    e.time = r.time;
    (r.group == TmbClass::High ? e.events_high : e.events_low) += 1;
  }
  std::vector<EventTime> out;
  for (auto& [t, e] : by_time) {
    for (const auto& r : records) {
      if (r.time >= t) (r.group == TmbClass::High ? e.at_risk_high : e.at_risk_low) += 1;
    }
    out.push_back(e);
  }
  return out;
}

struct CoxTerms {
  double loglik = 0.0, score = 0.0, info = 0.0;
};

CoxTerms cox_terms(const std::vector<EventTime>& table, double beta) {
  CoxTerms t;
  const double eb = std::exp(beta);
  for (const auto& e : table) {
    const double d = static_cast<double>(e.events_low + e.events_high);
    const double s0 = static_cast<double>(e.at_risk_low) + static_cast<double>(e.at_risk_high) * eb;
    const double p = static_cast<double>(e.at_risk_high) * eb / s0;
    t.loglik += beta * static_cast<double>(e.events_high) - d * std::log(s0);
    t.score += static_cast<double>(e.events_high) - d * p;
    t.info += d * p * (1.0 - p);
  }
  return t;
}

}  // namespace

std::vector<KmStep> kaplan_meier(std::span<const SurvivalRecord> records) {
  if (records.empty()) fail(ErrorKind::InvalidInput, "kaplan_meier: no records");
  check_records(records, "kaplan_meier");
  std::vector<SurvivalRecord> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.time < b.time; });
  std::vector<KmStep> curve = {{0.0, 1.0, sorted.size(), 0, 0}};
  double s = 1.0;
  std::size_t at_risk = sorted.size();
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i, events = 0;
    while (j < sorted.size() && sorted[j].time == sorted[i].time) {
      events += sorted[j].event ? 1 : 0;
      ++j;
    }
    if (events > 0) s *= 1.0 - static_cast<double>(events) / static_cast<double>(at_risk);
    KmStep step{sorted[i].time, s, at_risk, events, (j - i) - events};
    if (sorted[i].time == 0.0 && curve.size() == 1) {
      curve.front() = step;  // events at time zero
    } else {
      curve.push_back(step);
    }
    at_risk -= j - i;
    i = j;
  }
  return curve;
}

double survival_at(std::span<const KmStep> curve, double t) {
  double s = 1.0;
  for (const auto& step : curve) {
    if (step.time > t) break;
    s = step.survival;
  }
  return s;
}

double chi_square_sf_1df(double x) {
  if (x <= 0.0) return 1.0;
  return std::erfc(std::sqrt(x / 2.0));
}

LogRankResult log_rank(std::span<const SurvivalRecord> group_a, std::span<const SurvivalRecord> group_b) {
  if (group_a.empty() || group_b.empty()) fail(ErrorKind::InvalidInput, "log_rank: both groups must be non-empty");
  check_records(group_a, "log_rank");
  check_records(group_b, "log_rank");
  // Tag a as Low and b as High internally.
  std::vector<SurvivalRecord> all;
  for (auto r : group_a) {
    r.group = TmbClass::Low;
    all.push_back(r);
  }
  for (auto r : group_b) {
    r.group = TmbClass::High;
    all.push_back(r);
  }
  const auto table = event_table(all);
  if (table.empty()) fail(ErrorKind::UndefinedMetric, "log_rank: no events observed");

  LogRankResult res;
  double diff = 0.0;
  for (const auto& e : table) {
    const std::int64_t na = e.at_risk_low, nb = e.at_risk_high, n = na + nb;
    const std::int64_t da = e.events_low, db = e.events_high, d = da + db;
    // O_a - E_a written so that swapping the groups negates it exactly.
    diff += static_cast<double>(da * nb - db * na) / static_cast<double>(n);
    res.observed_a += static_cast<double>(da);
    res.expected_a += static_cast<double>(d * na) / static_cast<double>(n);
    if (n > 1) {
      res.variance += static_cast<double>(d * na * nb * (n - d)) / (static_cast<double>(n) * n * (n - 1));
    }
  }
  if (res.variance <= 0.0) {
    if (diff != 0.0) fail(ErrorKind::UndefinedMetric, "log_rank: zero variance");
    res.chi_square = 0.0;
    res.p_value = 1.0;
    return res;
  }
  res.chi_square = diff * diff / res.variance;
  res.p_value = chi_square_sf_1df(res.chi_square);
  return res;
}

CoxResult cox_hr(std::span<const SurvivalRecord> records) {
  check_records(records, "cox_hr");
  std::size_t n_high = 0, n_low = 0, ev_high = 0, ev_low = 0;
  for (const auto& r : records) {
    if (r.group == TmbClass::High) {
      ++n_high;
      ev_high += r.event ? 1 : 0;
    } else {
      ++n_low;
      ev_low += r.event ? 1 : 0;
    }
  }
  if (n_high == 0 || n_low == 0) fail(ErrorKind::InvalidInput, "cox_hr: both groups must be non-empty");
  if (ev_high == 0 || ev_low == 0) {
    fail(ErrorKind::Divergence, std::string("cox_hr: monotone likelihood, group ") +
                                    (ev_high == 0 ? "TMB_H" : "TMB_L") + " has no events");
  }
  const auto table = event_table(records);

  // The score decreases in beta; a finite maximum needs U(-inf) > 0 > U(+inf).
  double score_pos_inf = 0.0, score_neg_inf = 0.0;
  for (const auto& e : table) {
    const double d = static_cast<double>(e.events_low + e.events_high);
    score_pos_inf += static_cast<double>(e.events_high) - (e.at_risk_high > 0 ? d : 0.0);
    score_neg_inf += static_cast<double>(e.events_high) - (e.at_risk_low == 0 ? d : 0.0);
  }
  if (!(score_pos_inf < 0.0) || !(score_neg_inf > 0.0)) {
    fail(ErrorKind::Divergence, "cox_hr: monotone likelihood (score limits " + std::to_string(score_neg_inf) +
                                    " at -inf, " + std::to_string(score_pos_inf) +
                                    " at +inf); event times are completely separated by group");
  }

  CoxResult res;
  double beta = 0.0;
  CoxTerms cur = cox_terms(table, beta);
  bool converged = false;
  for (int it = 1; it <= 50; ++it) {
    res.iterations = it;
    if (!(cur.info > 0.0)) break;
    double step = std::clamp(cur.score / cur.info, -5.0, 5.0);
    CoxTerms next = cox_terms(table, beta + step);
    for (int halve = 0; halve < 30 && next.loglik < cur.loglik; ++halve) {
      step /= 2.0;
      next = cox_terms(table, beta + step);
    }
    beta += step;
    cur = next;
    if (std::abs(step) < 1e-10) {
      converged = true;
      break;
    }
  }
  if (!converged || !std::isfinite(beta)) {
    fail(ErrorKind::Divergence, "cox_hr: Newton iteration did not converge (beta=" + std::to_string(beta) + ")");
  }
  res.beta = beta;
  res.score = cur.score;
  res.se = 1.0 / std::sqrt(cur.info);
  res.hazard_ratio = std::exp(beta);
  res.ci_lo = std::exp(beta - 1.96 * res.se);
  res.ci_hi = std::exp(beta + 1.96 * res.se);
  res.p_value = std::erfc(std::abs(beta / res.se) / std::sqrt(2.0));
  return res;
}

}  // namespace sgmil
