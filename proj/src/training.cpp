#include "sgmil/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

#include "sgmil/csv.hpp"
#include "sgmil/error.hpp"
#include "sgmil/evaluation.hpp"
#include "sgmil/rng.hpp"

namespace sgmil {

TmbClass binarize_label(double tmb, double cutoff) {
  if (!(tmb >= 0.0)) fail(ErrorKind::InvalidInput, "binarize_label: TMB must be non-negative");
  return tmb > cutoff ? TmbClass::High : TmbClass::Low;
}

void validate(const TrainConfig& c) {
  auto bad = [](const std::string& what) { fail(ErrorKind::Config, "train config: " + what); };
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) bad("learning_rate must be >= 0");
  if (c.epochs < 0) bad("epochs must be >= 0");
  if (c.batch_size < 1) bad("batch_size must be >= 1");
  if (!(c.ema_momentum >= 0.0 && c.ema_momentum <= 1.0)) bad("ema_momentum must lie in [0, 1]");
  if (c.folds < 2) bad("folds must be >= 2");
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0)) bad("adam_beta1 must lie in [0, 1)");
  if (!(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0)) bad("adam_beta2 must lie in [0, 1)");
  if (!(c.adam_eps > 0.0)) bad("adam_eps must be > 0");
  if (c.shape.width == 0 || c.shape.attn_dim == 0 || c.shape.blocks == 0) bad("model dimensions must be positive");
  if (c.knn_k < 1) bad("knn_k must be >= 1");
}

// ---------------------------------------------------------------- folds

std::vector<std::size_t> FoldAssignment::members(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == fold) out.push_back(i);
  }
  return out;
}

FoldAssignment stratified_kfold(std::span<const PatientLabel> patients, int k, std::uint64_t seed) {
  if (k < 2) fail(ErrorKind::InvalidInput, "stratified_kfold: k must be >= 2");
  std::set<std::string> seen;
  for (const auto& p : patients) {
    if (!seen.insert(p.patient_id).second) {
      fail(ErrorKind::InvalidInput, "stratified_kfold: duplicate patient " + p.patient_id);
    }
  }
  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    strata[{static_cast<int>(patients[i].cancer_type), static_cast<int>(patients[i].label)}].push_back(i);
  }
  FoldAssignment fa;
  fa.k = k;
  fa.fold_of.assign(patients.size(), -1);
  Rng rng(seed);
  std::size_t offset = 0;
  for (auto& [key, members] : strata) {
    if (members.size() < static_cast<std::size_t>(k)) {
      fa.warnings.push_back("stratum " + to_string(static_cast<CancerType>(key.first)) + "/" +
                            to_string(static_cast<TmbClass>(key.second)) + " has " +
                            std::to_string(members.size()) + " patients, fewer than " + std::to_string(k) +
                            " folds; assigned round-robin");
    }
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t j = 0; j < members.size(); ++j) {
      fa.fold_of[members[j]] = static_cast<int>((offset + j) % static_cast<std::size_t>(k));
    }
    offset = (offset + members.size()) % static_cast<std::size_t>(k);
  }
  return fa;
}

// ---------------------------------------------------------------- EMA / Adam

void ema_update_in_place(const ModelParams& online, ModelParams& shadow, double m) {
  if (!(m >= 0.0 && m <= 1.0)) fail(ErrorKind::InvalidInput, "ema_update: momentum must lie in [0, 1]");
  if (!(online.shape == shadow.shape)) fail(ErrorKind::InvalidInput, "ema_update: shape mismatch");
  auto src = online.tensors();
  auto dst = shadow.tensors();
  for (std::size_t t = 0; t < src.size(); ++t) {
    if (!src[t].tensor->same_shape(*dst[t].tensor)) fail(ErrorKind::InvalidInput, "ema_update: shape mismatch");
    auto o = src[t].tensor->values();
    auto s = dst[t].tensor->values();
    if (m == 0.0) {
      std::copy(o.begin(), o.end(), s.begin());
    } else if (m < 1.0) {
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += (1.0 - m) * (o[i] - s[i]);
    }
  }
}

ModelParams ema_update(const ModelParams& online, const ModelParams& shadow, double m) {
  ModelParams out = shadow;
  ema_update_in_place(online, out, m);
  return out;
}

AdamOptimizer::AdamOptimizer(const ModelParams& like, double lr, double beta1, double beta2, double eps)
    : lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      m_(ModelParams::zeros(like.shape)),
      v_(ModelParams::zeros(like.shape)) {}

void AdamOptimizer::step(ModelParams& params, const ModelParams& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    auto pv = p[t].tensor->values();
    auto gv = g[t].tensor->values();
    auto mv = m[t].tensor->values();
    auto vv = v[t].tensor->values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = beta1_ * mv[i] + (1.0 - beta1_) * gv[i];
      vv[i] = beta2_ * vv[i] + (1.0 - beta2_) * gv[i] * gv[i];
      const double mhat = mv[i] / bc1;
      const double vhat = vv[i] / bc2;
      pv[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

// ---------------------------------------------------------------- training

namespace {

void check_examples(std::span<const TrainingExample> examples, std::size_t dim) {
  for (const auto& ex : examples) {
    if (ex.graph == nullptr) fail(ErrorKind::InvalidInput, "training example without a graph");
    const auto& bag = ex.graph->bag;
    if (bag.size() == 0) fail(ErrorKind::EmptyBag, "bag " + bag.slide_id + " is empty");
    if (bag.dim != dim) {
      fail(ErrorKind::InvalidInput, "bag " + bag.slide_id + " has dimension " + std::to_string(bag.dim) +
                                        ", expected " + std::to_string(dim));
    }
    if (ex.graph->neighborhood.nodes() != bag.size()) {
      fail(ErrorKind::InvalidInput, "graph of bag " + bag.slide_id + " does not match its size");
    }
  }
}

double auc_or_nan(std::span<const double> scores, std::span<const int> labels) {
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<long>(labels.size())) return std::numeric_limits<double>::quiet_NaN();
  return roc_auc(scores, labels);
}

std::vector<double> predict_probs(std::span<const TrainingExample> examples, const ModelParams& params) {
  std::vector<double> out(examples.size());
  const long n = static_cast<long>(examples.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = forward_single_scale(*examples[static_cast<std::size_t>(i)].graph, params).prob_high;
  }
  return out;
}

}  // namespace

TrainResult train_fold(std::span<const TrainingExample> train, std::span<const TrainingExample> val,
                       const TrainConfig& config, std::uint64_t seed) {
  validate(config);
  if (train.empty()) fail(ErrorKind::Untrainable, "train_fold: empty training set");
  std::size_t n_pos = 0;
  for (const auto& ex : train) n_pos += ex.label == TmbClass::High ? 1 : 0;
  if (n_pos == 0 || n_pos == train.size()) {
    fail(ErrorKind::Untrainable, "train_fold: training set contains a single class");
  }
  ModelShape shape = config.shape;
  shape.input_dim = train.front().graph ? train.front().graph->bag.dim : 0;
  check_examples(train, shape.input_dim);
  check_examples(val, shape.input_dim);

  TrainResult result;
  result.online = ModelParams::initialize(shape, derive_seed(seed, 1));
  result.ema = result.online;

  const double n = static_cast<double>(train.size());
  const double w_pos = config.class_weighting ? n / (2.0 * static_cast<double>(n_pos)) : 1.0;
  const double w_neg = config.class_weighting ? n / (2.0 * static_cast<double>(train.size() - n_pos)) : 1.0;

  AdamOptimizer adam(result.online, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps);
  Rng order_rng(derive_seed(seed, 2));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  const auto batch_cap = static_cast<std::size_t>(config.batch_size);
  std::vector<ModelParams> grads(std::min(batch_cap, train.size()), ModelParams::zeros(shape));
  std::vector<double> losses(grads.size());
  ModelParams total = ModelParams::zeros(shape);

  std::vector<int> val_labels;
  for (const auto& ex : val) val_labels.push_back(ex.label == TmbClass::High ? 1 : 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0, weight_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_cap) {
      const std::size_t b = std::min(batch_cap, order.size() - start);
      const long lb = static_cast<long>(b);
#pragma omp parallel for schedule(dynamic)
      for (long i = 0; i < lb; ++i) {
        const auto& ex = train[order[start + static_cast<std::size_t>(i)]];
        auto& g = grads[static_cast<std::size_t>(i)];
        g.set_zero();
        const double w = ex.label == TmbClass::High ? w_pos : w_neg;
        losses[static_cast<std::size_t>(i)] = accumulate_gradients(*ex.graph, result.online, ex.label, w, g).loss;
      }
      // Serial reduction in batch order keeps the sum independent of threads.
      total.set_zero();
      auto tot = total.tensors();
      for (std::size_t i = 0; i < b; ++i) {
        auto gi = grads[i].tensors();
        for (std::size_t t = 0; t < tot.size(); ++t) {
          auto dst = tot[t].tensor->values();
          auto src = gi[t].tensor->values();
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
        loss_sum += losses[i];
        weight_sum += train[order[start + i]].label == TmbClass::High ? w_pos : w_neg;
      }
      const double inv_b = 1.0 / static_cast<double>(b);
      for (auto& t : tot) {
        for (double& v : t.tensor->values()) v *= inv_b;
      }
      adam.step(result.online, total);
      ema_update_in_place(result.online, result.ema, config.ema_momentum);
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    result.log.push_back({epoch, "train", weight_sum > 0.0 ? loss_sum / weight_sum : nan, nan, nan});
    if (!val.empty()) {
      const auto p_online = predict_probs(val, result.online);
      const auto p_ema = predict_probs(val, result.ema);
      double val_loss = 0.0;
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double p = std::clamp(p_ema[i], 1e-300, 1.0 - 1e-16);
        val_loss -= val_labels[i] == 1 ? std::log(p) : std::log1p(-p);
      }
      val_loss /= static_cast<double>(val.size());
      result.log.push_back({epoch, "val", val_loss, auc_or_nan(p_online, val_labels), auc_or_nan(p_ema, val_labels)});
    }
  }
  return result;
}

void write_train_log_csv(std::span<const TrainLogRow> log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << "epoch,split,loss,auc_online,auc_ema\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << r.split << ',' << csv::format_double(r.loss) << ','
        << csv::format_double(r.auc_online) << ',' << csv::format_double(r.auc_ema) << '\n';
  }
}

// ---------------------------------------------------------------- ensemble

EnsembleFit fit_ensemble_weights(const std::array<std::optional<std::vector<double>>, 3>& val_probs,
                                 std::span<const int> labels) {
  std::vector<std::size_t> present;
  for (std::size_t s = 0; s < 3; ++s) {
    if (!val_probs[s]) continue;
    if (val_probs[s]->size() != labels.size()) {
      fail(ErrorKind::InvalidInput, "fit_ensemble_weights: prediction and label counts differ");
    }
    present.push_back(s);
  }
  if (present.empty()) fail(ErrorKind::InvalidInput, "fit_ensemble_weights: no scale predictions");

  EnsembleFit fit;
  fit.weights = {0.0, 0.0, 0.0};
  const double uniform = 1.0 / static_cast<double>(present.size());
  for (auto s : present) fit.weights[s] = uniform;

  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (labels.size() < 2 || pos == 0 || pos == static_cast<long>(labels.size())) {
    fit.auc = std::numeric_limits<double>::quiet_NaN();
    fit.warning = "validation labels are degenerate; using uniform ensemble weights";
    return fit;
  }

  std::vector<double> combined(labels.size());
  auto score = [&](const std::array<double, 3>& w) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      double acc = 0.0;
      for (auto s : present) acc += w[s] * (*val_probs[s])[i];
      combined[i] = acc;
    }
    return roc_auc(combined, labels);
  };
  auto distance_to_uniform = [&](const std::array<double, 3>& w) {
    double d = 0.0;
    for (auto s : present) d += (w[s] - uniform) * (w[s] - uniform);
    return d;
  };

  fit.auc = score(fit.weights);
  double best_dist = 0.0;
  constexpr int kSteps = 20;  // resolution 0.05
  auto consider = [&](const std::array<double, 3>& w) {
    const double auc = score(w);
    const double dist = distance_to_uniform(w);
    if (auc > fit.auc || (auc == fit.auc && dist < best_dist)) {
      fit.auc = auc;
      fit.weights = w;
      best_dist = dist;
    }
  };
  if (present.size() == 1) return fit;
  if (present.size() == 2) {
    for (int i = 0; i <= kSteps; ++i) {
      std::array<double, 3> w = {0.0, 0.0, 0.0};
      w[present[0]] = i / static_cast<double>(kSteps);
      w[present[1]] = (kSteps - i) / static_cast<double>(kSteps);
      consider(w);
    }
    return fit;
  }
  for (int i = 0; i <= kSteps; ++i) {
    for (int j = 0; i + j <= kSteps; ++j) {
      consider({i / static_cast<double>(kSteps), j / static_cast<double>(kSteps),
                (kSteps - i - j) / static_cast<double>(kSteps)});
    }
  }
  return fit;
}

// ---------------------------------------------------------------- CV

std::vector<PredictionRow> predict_patients(const Checkpoint& ckpt, const Cohort& cohort,
                                            std::span<const std::size_t> patient_indices, int fold) {
  std::unordered_map<std::string, std::size_t> slot;
  for (std::size_t j = 0; j < patient_indices.size(); ++j) {
    slot.emplace(cohort.patients.at(patient_indices[j]).patient_id, j);
  }
  // Mean slide probability per (patient, scale).
  std::array<std::vector<std::optional<double>>, 3> per_scale;
  for (const auto& sm : ckpt.scales) {
    const auto s = scale_index(sm.magnification);
    const auto& graphs = cohort.graphs[s];
    std::vector<std::size_t> chosen;
    for (std::size_t g = 0; g < graphs.size(); ++g) {
      if (slot.count(graphs[g].bag.patient_id)) chosen.push_back(g);
    }
    for (auto g : chosen) check_examples(std::vector<TrainingExample>{{&graphs[g], TmbClass::Low}}, sm.ema.shape.input_dim);
    std::vector<double> probs(chosen.size());
    const long n = static_cast<long>(chosen.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
      probs[static_cast<std::size_t>(i)] =
          forward_single_scale(graphs[chosen[static_cast<std::size_t>(i)]], sm.ema).prob_high;
    }
    std::vector<double> sum(patient_indices.size(), 0.0);
    std::vector<int> count(patient_indices.size(), 0);
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      const auto j = slot.at(graphs[chosen[i]].bag.patient_id);
      sum[j] += probs[i];
      ++count[j];
    }
    per_scale[s].assign(patient_indices.size(), std::nullopt);
    for (std::size_t j = 0; j < patient_indices.size(); ++j) {
      if (count[j] > 0) per_scale[s][j] = sum[j] / count[j];
    }
  }

  std::vector<PredictionRow> rows;
  for (std::size_t j = 0; j < patient_indices.size(); ++j) {
    const auto& p = cohort.patients[patient_indices[j]];
    ScaleProbabilities sp;
    for (std::size_t s = 0; s < 3; ++s) {
      if (per_scale[s].empty() || !per_scale[s][j]) continue;
      sp[s] = per_scale[s][j];
      rows.push_back({p.patient_id, p.cancer_type, to_string(kAllMagnifications[s]), *sp[s], p.label, fold});
    }
    if (sp[0] || sp[1] || sp[2]) {
      rows.push_back({p.patient_id, p.cancer_type, "ensemble", multiscale_ensemble(sp, ckpt.ensemble_weights),
                      p.label, fold});
    }
  }
  return rows;
}

CvResult cross_validate(const Cohort& cohort, const TrainConfig& config, std::array<bool, 3> scales,
                        const ProgressFn& progress) {
  validate(config);
  CvResult cv;
  cv.folds = stratified_kfold(cohort.patients, config.folds, config.seed);
  const int k = config.folds;
  std::unordered_map<std::string, int> fold_by_patient;
  for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
    fold_by_patient[cohort.patients[i].patient_id] = cv.folds.fold_of[i];
  }
  std::unordered_map<std::string, TmbClass> label_by_patient;
  for (const auto& p : cohort.patients) label_by_patient[p.patient_id] = p.label;

  for (int f = 0; f < k; ++f) {
    const int val_fold = (f + 1) % k;
    FoldOutcome outcome;
    outcome.fold = f;
    for (std::size_t s = 0; s < 3; ++s) {
      if (!scales[s] || cohort.graphs[s].empty()) continue;
      std::vector<TrainingExample> train, val;
      for (const auto& g : cohort.graphs[s]) {
        auto it = fold_by_patient.find(g.bag.patient_id);
        if (it == fold_by_patient.end()) continue;
        const TrainingExample ex{&g, label_by_patient.at(g.bag.patient_id)};
        if (it->second == val_fold) {
          val.push_back(ex);
        } else if (it->second != f) {
          train.push_back(ex);
        }
      }
      if (progress) {
        progress("fold " + std::to_string(f) + " x" + to_string(kAllMagnifications[s]) + ": training on " +
                 std::to_string(train.size()) + " slides");
      }
      auto res = train_fold(train, val, config, derive_seed(config.seed, 100 + static_cast<std::uint64_t>(f) * 3 + s));
      outcome.checkpoint.scales.push_back({kAllMagnifications[s], std::move(res.online), std::move(res.ema)});
      outcome.logs[s] = std::move(res.log);
    }
    if (outcome.checkpoint.scales.empty()) fail(ErrorKind::Untrainable, "no scale has training data");

    // Ensemble weights from validation patients that have every trained scale.
    std::array<double, 3> uniform = {0.0, 0.0, 0.0};
    for (const auto& sm : outcome.checkpoint.scales) {
      uniform[scale_index(sm.magnification)] = 1.0 / static_cast<double>(outcome.checkpoint.scales.size());
    }
    outcome.checkpoint.ensemble_weights = uniform;
    if (config.fit_ensemble_weights) {
      const auto val_idx = cv.folds.members(val_fold);
      const auto val_rows = predict_patients(outcome.checkpoint, cohort, val_idx, val_fold);
      std::map<std::string, std::array<std::optional<double>, 3>> by_patient;
      std::map<std::string, int> labels;
      for (const auto& r : val_rows) {
        if (r.scale == "ensemble") continue;
        by_patient[r.patient_id][scale_index(parse_magnification(r.scale))] = r.prob;
        labels[r.patient_id] = r.label == TmbClass::High ? 1 : 0;
      }
      std::array<std::optional<std::vector<double>>, 3> probs;
      for (const auto& sm : outcome.checkpoint.scales) probs[scale_index(sm.magnification)].emplace();
      std::vector<int> y;
      for (const auto& [pid, sp] : by_patient) {
        bool complete = true;
        for (std::size_t s = 0; s < 3; ++s) complete = complete && (!probs[s] || sp[s].has_value());
        if (!complete) continue;
        for (std::size_t s = 0; s < 3; ++s) {
          if (probs[s]) probs[s]->push_back(*sp[s]);
        }
        y.push_back(labels[pid]);
      }
      const auto fit = fit_ensemble_weights(probs, y);
      outcome.checkpoint.ensemble_weights = fit.weights;
      outcome.ensemble_warning = fit.warning;
    }

    const auto test_idx = cv.folds.members(f);
    auto rows = predict_patients(outcome.checkpoint, cohort, test_idx, f);
    cv.predictions.insert(cv.predictions.end(), rows.begin(), rows.end());
    cv.outcomes.push_back(std::move(outcome));
  }
  return cv;
}

std::vector<double> per_fold_auc(std::span<const PredictionRow> rows, const std::string& scale, int k) {
  std::vector<double> out;
  for (int f = 0; f < k; ++f) {
    std::vector<double> s;
    std::vector<int> l;
    for (const auto& r : rows) {
      if (r.fold == f && r.scale == scale) {
        s.push_back(r.prob);
        l.push_back(r.label == TmbClass::High ? 1 : 0);
      }
    }
    const auto pos = std::count(l.begin(), l.end(), 1);
    if (pos == 0 || pos == static_cast<long>(l.size())) continue;
    out.push_back(roc_auc(s, l));
  }
  return out;
}

}  // namespace sgmil
