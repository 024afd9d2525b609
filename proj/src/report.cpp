#include "sgmil/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "sgmil/csv.hpp"
#include "sgmil/error.hpp"
#include "sgmil/evaluation.hpp"
#include "sgmil/rng.hpp"
#include "sgmil/survival.hpp"

namespace sgmil {

namespace {

using Json = nlohmann::ordered_json;

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json interval_json(const AucInterval& a) { return Json::array({number(a.lo), number(a.hi)}); }

struct ScaleData {
  std::vector<const PredictionRecord*> records;
  std::vector<double> scores;
  std::vector<int> labels;
};

Json strata_json(const std::vector<StratumReport>& strata) {
  Json arr = Json::array();
  for (const auto& s : strata) {
    Json e;
    e["value"] = s.value;
    e["n"] = s.n;
    e["n_positive"] = s.n_positive;
    e["auc"] = s.auc ? number(s.auc->auc) : Json(nullptr);
    e["ci"] = s.auc ? interval_json(*s.auc) : Json(nullptr);
    arr.push_back(std::move(e));
  }
  return arr;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << text;
}

}  // namespace

EvaluationSummary write_evaluation(std::span<const PredictionRecord> records, const EvaluateConfig& config,
                                   std::uint64_t seed, const std::filesystem::path& out_dir) {
  if (records.empty()) fail(ErrorKind::InvalidInput, "evaluate: no predictions");
  std::map<std::string, ScaleData> by_scale;
  std::map<std::string, std::set<std::string>> seen;
  for (const auto& r : records) {
    if (!seen[r.row.scale].insert(r.row.patient_id).second) {
      fail(ErrorKind::InvalidInput, "evaluate: patient " + r.row.patient_id + " appears twice at scale " + r.row.scale);
    }
    auto& d = by_scale[r.row.scale];
    d.records.push_back(&r);
    d.scores.push_back(r.row.prob);
    d.labels.push_back(r.row.label == TmbClass::High ? 1 : 0);
  }
  const std::string primary = by_scale.count("ensemble") ? "ensemble" : by_scale.begin()->first;
  const auto& main = by_scale.at(primary);

  EvaluationSummary summary;
  summary.scale = primary;
  summary.n_patients = main.records.size();
  const auto ci = bootstrap_ci(main.scores, main.labels, config.n_boot, 0.95, derive_seed(seed, 0));
  summary.auc = ci.auc;
  summary.ci_lo = ci.lo;
  summary.ci_hi = ci.hi;
  const auto op = operating_point(main.scores, main.labels);

  Json report;
  report["scale"] = primary;
  report["n_patients"] = main.records.size();
  report["n_tmb_h"] = std::count(main.labels.begin(), main.labels.end(), 1);
  report["auc"] = number(ci.auc);
  report["ci"] = interval_json(ci);
  report["ci_method"] = "percentile bootstrap, " + std::to_string(config.n_boot) + " resamples, 95%";

  // Survival by predicted group.
  std::vector<SurvivalRecord> surv;
  for (std::size_t i = 0; i < main.records.size(); ++i) {
    const auto& r = *main.records[i];
    if (!r.survival) continue;
    SurvivalRecord s = *r.survival;
    s.group = main.scores[i] >= op.threshold ? TmbClass::High : TmbClass::Low;
    surv.push_back(s);
  }
  std::vector<SurvivalRecord> pred_high, pred_low;
  for (const auto& s : surv) (s.group == TmbClass::High ? pred_high : pred_low).push_back(s);

  Json hr = nullptr;
  Json survival;
  survival["n"] = surv.size();
  survival["grouping"] = "predicted class at the Youden threshold";
  if (!pred_high.empty() && !pred_low.empty()) {
    try {
      const auto cox = cox_hr(surv);
      hr = Json::object();
      hr["value"] = number(cox.hazard_ratio);
      hr["ci"] = Json::array({number(cox.ci_lo), number(cox.ci_hi)});
      hr["p_value"] = number(cox.p_value);
      hr["p"] = format_p_value(cox.p_value);
      summary.hazard_ratio = cox.hazard_ratio;
    } catch (const Error& e) {
      summary.hr_error = e.what();
      survival["hr_error"] = e.what();
    }
    try {
      const auto lr = log_rank(pred_low, pred_high);
      survival["log_rank"] = {{"chi_square", number(lr.chi_square)},
                              {"p_value", number(lr.p_value)},
                              {"p", format_p_value(lr.p_value)}};
    } catch (const Error& e) {
      survival["log_rank_error"] = e.what();
    }
  } else if (!surv.empty()) {
    summary.hr_error = "all patients fall into one predicted group";
    survival["hr_error"] = *summary.hr_error;
  } else {
    summary.hr_error = "no survival data";
    survival["hr_error"] = *summary.hr_error;
  }
  report["hr"] = hr;

  report["operating_point"] = {{"rule", "Youden J, ties to the lower threshold"},
                               {"threshold", number(op.threshold)},
                               {"sensitivity", number(op.sensitivity)},
                               {"specificity", number(op.specificity)},
                               {"youden", number(op.youden)},
                               {"degenerate", op.degenerate}};

  Json scales = Json::object();
  std::uint64_t stream = 1;
  for (const std::string name : {"5", "10", "20", "ensemble"}) {
    if (!by_scale.count(name)) continue;
    const auto& d = by_scale.at(name);
    Json s;
    s["n"] = d.records.size();
    const auto a = bootstrap_ci(d.scores, d.labels, config.n_boot, 0.95, derive_seed(seed, stream++));
    s["auc"] = number(a.auc);
    s["ci"] = interval_json(a);
    std::map<int, std::pair<std::vector<double>, std::vector<int>>> folds;
    for (std::size_t i = 0; i < d.records.size(); ++i) {
      const int f = d.records[i]->row.fold;
      if (f < 0) continue;
      folds[f].first.push_back(d.scores[i]);
      folds[f].second.push_back(d.labels[i]);
    }
    Json per_fold = Json::array();
    double sum = 0.0;
    int defined = 0;
    for (const auto& [f, fl] : folds) {
      const auto pos = std::count(fl.second.begin(), fl.second.end(), 1);
      if (pos == 0 || pos == static_cast<long>(fl.second.size())) {
        per_fold.push_back(nullptr);
        continue;
      }
      const double auc = roc_auc(fl.first, fl.second);
      per_fold.push_back(auc);
      sum += auc;
      ++defined;
    }
    s["fold_auc"] = per_fold;
    s["mean_fold_auc"] = defined > 0 ? number(sum / defined) : Json(nullptr);
    scales[name] = std::move(s);
  }
  report["scales"] = std::move(scales);

  std::vector<double> pos_scores, neg_scores;
  for (std::size_t i = 0; i < main.scores.size(); ++i) {
    (main.labels[i] == 1 ? pos_scores : neg_scores).push_back(main.scores[i]);
  }
  const auto mw = mann_whitney_u(pos_scores, neg_scores);
  report["mann_whitney"] = {{"comparison", "predicted probability, TMB_H vs TMB_L"},
                            {"u", number(mw.u)},
                            {"p_value", number(mw.p_value)},
                            {"p", format_p_value(mw.p_value)},
                            {"exact", mw.exact}};

  std::vector<PatientPrediction> pp;
  for (std::size_t i = 0; i < main.records.size(); ++i) {
    const auto& r = *main.records[i];
    pp.push_back({r.row.patient_id, r.row.cancer_type, r.row.prob, main.labels[i], r.metadata});
  }
  report["per_cancer_type"] = strata_json(subgroup_eval(pp, "cancer_type", config.n_boot, derive_seed(seed, 100)));
  Json subgroups = Json::object();
  std::uint64_t sg_stream = 101;
  for (const auto& key : config.subgroups) {
    subgroups[key] = strata_json(subgroup_eval(pp, key, config.n_boot, derive_seed(seed, sg_stream++)));
  }
  report["subgroups"] = std::move(subgroups);
  report["survival"] = std::move(survival);

  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "report.json", report.dump(2) + "\n");

  std::string roc = "fpr,tpr,threshold\n";
  for (const auto& p : roc_curve(main.scores, main.labels)) {
    roc += csv::format_double(p.fpr) + "," + csv::format_double(p.tpr) + "," + csv::format_double(p.threshold) + "\n";
  }
  write_text(out_dir / "roc.csv", roc);

  std::string km = "time,survival,group\n";
  for (const auto* group : {&pred_high, &pred_low}) {
    if (group->empty()) continue;
    const std::string name = group == &pred_high ? "TMB_H" : "TMB_L";
    for (const auto& step : kaplan_meier(*group)) {
      km += csv::format_double(step.time) + "," + csv::format_double(step.survival) + "," + name + "\n";
    }
  }
  write_text(out_dir / "km.csv", km);
  return summary;
}

}  // namespace sgmil
