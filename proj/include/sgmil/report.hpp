#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgmil/config.hpp"
#include "sgmil/dataset.hpp"

namespace sgmil {

struct EvaluationSummary {
  std::string scale;
  std::size_t n_patients = 0;
  double auc = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  std::optional<double> hazard_ratio;
  std::optional<std::string> hr_error;
};

/// Evaluates patient-level predictions of the ensemble (or the only scale
/// present) and writes report.json, roc.csv and km.csv into out_dir.
/// Survival groups are the predicted classes at the Youden threshold.
EvaluationSummary write_evaluation(std::span<const PredictionRecord> records, const EvaluateConfig& config,
                                   std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace sgmil
