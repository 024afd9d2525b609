#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgmil/checkpoint.hpp"
#include "sgmil/model.hpp"
#include "sgmil/survival.hpp"
#include "sgmil/wsigraph.hpp"

namespace sgmil {

/// Strict inequality: TMB-H iff tmb > cutoff.
TmbClass binarize_label(double tmb, double cutoff = 10.0);

struct PatientLabel {
  std::string patient_id;
  CancerType cancer_type = CancerType::COAD;
  std::optional<double> tmb;
  std::optional<long long> total_mutation_count;
  TmbClass label = TmbClass::Low;
  std::optional<SurvivalRecord> survival;
  std::map<std::string, std::string> metadata;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  int epochs = 30;
  int batch_size = 8;
  double ema_momentum = 0.99;
  std::uint64_t seed = 0;
  int folds = 5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool class_weighting = true;
  bool fit_ensemble_weights = true;
  ModelShape shape;  // input_dim is taken from the data
  int knn_k = 8;
};

/// Throws a config error for out-of-range values.
void validate(const TrainConfig& config);

struct FoldAssignment {
  int k = 0;
  std::vector<int> fold_of;  // per patient, in input order
  std::vector<std::string> warnings;

  std::vector<std::size_t> members(int fold) const;
};

/// Stratified by (cancer_type, label). Each stratum is shuffled with the
/// seed and dealt round-robin, continuing from where the previous stratum
/// stopped so total fold sizes stay balanced.
FoldAssignment stratified_kfold(std::span<const PatientLabel> patients, int k, std::uint64_t seed);

/// shadow' = m * shadow + (1 - m) * online, elementwise.
ModelParams ema_update(const ModelParams& online, const ModelParams& shadow, double m);
void ema_update_in_place(const ModelParams& online, ModelParams& shadow, double m);

class AdamOptimizer {
 public:
  AdamOptimizer(const ModelParams& like, double lr, double beta1, double beta2, double eps);
  void step(ModelParams& params, const ModelParams& grads);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  ModelParams m_, v_;
};

struct TrainingExample {
  const SlideGraph* graph = nullptr;
  TmbClass label = TmbClass::Low;
};

struct TrainLogRow {
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double auc_online = 0.0;  // NaN when undefined
  double auc_ema = 0.0;
};

struct TrainResult {
  ModelParams online;
  ModelParams ema;
  std::vector<TrainLogRow> log;
};

/// Minibatch Adam on (optionally class-weighted) cross-entropy with an EMA
/// update after every step. Deterministic for a given seed.
TrainResult train_fold(std::span<const TrainingExample> train, std::span<const TrainingExample> val,
                       const TrainConfig& config, std::uint64_t seed);

void write_train_log_csv(std::span<const TrainLogRow> log, const std::filesystem::path& path);

struct EnsembleFit {
  std::array<double, 3> weights = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  double auc = 0.0;  // NaN when labels are degenerate
  std::optional<std::string> warning;
};

/// Grid search over the simplex (step 0.05) of the present scales for the
/// highest validation AUC. The exact uniform weighting is tried first and
/// ties go to the candidate closest to uniform.
EnsembleFit fit_ensemble_weights(const std::array<std::optional<std::vector<double>>, 3>& val_probs,
                                 std::span<const int> labels);

// ---------------------------------------------------------------------------
// Cross-validation orchestration

struct Cohort {
  std::vector<PatientLabel> patients;
  /// Slide graphs per scale index (x5, x10, x20).
  std::array<std::vector<SlideGraph>, 3> graphs;
};

struct PredictionRow {
  std::string patient_id;
  CancerType cancer_type = CancerType::COAD;
  std::string scale;  // "5", "10", "20" or "ensemble"
  double prob = 0.0;
  TmbClass label = TmbClass::Low;
  int fold = -1;
};

/// Patient-level predictions (mean over a patient's slides) for every scale
/// the checkpoint covers plus the ensemble, using EMA parameters.
std::vector<PredictionRow> predict_patients(const Checkpoint& ckpt, const Cohort& cohort,
                                            std::span<const std::size_t> patient_indices, int fold = -1);

struct FoldOutcome {
  int fold = 0;
  Checkpoint checkpoint;
  std::array<std::vector<TrainLogRow>, 3> logs;
  std::optional<std::string> ensemble_warning;
};

struct CvResult {
  FoldAssignment folds;
  std::vector<FoldOutcome> outcomes;
  std::vector<PredictionRow> predictions;  // out-of-fold, test patients only
};

using ProgressFn = std::function<void(const std::string&)>;

/// k-fold CV. For fold f the test set is fold f, the validation set (EMA
/// monitoring and ensemble-weight fitting) is fold (f + 1) mod k and the
/// remaining folds train one model per enabled scale.
CvResult cross_validate(const Cohort& cohort, const TrainConfig& config, std::array<bool, 3> scales,
                        const ProgressFn& progress = {});

/// Mean of per-fold test AUCs for a scale ("5", "10", "20", "ensemble");
/// folds lacking a class are skipped.
std::vector<double> per_fold_auc(std::span<const PredictionRow> rows, const std::string& scale, int k);

}  // namespace sgmil
