#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgmil/embedding.hpp"
#include "sgmil/training.hpp"

namespace sgmil {

// labels.csv: patient_id, cancer_type and at least one of tmb / label.
// Optional columns: total_mutation_count, survival_months + event (both or
// neither). Every other column is kept as string metadata. When tmb and
// label are both given they must agree under the cutoff.
std::vector<PatientLabel> read_labels_csv(const std::filesystem::path& path, double tmb_cutoff = 10.0);
void write_labels_csv(std::span<const PatientLabel> patients, const std::filesystem::path& path);

struct ManifestEntry {
  std::string slide_id;
  std::string patient_id;
  std::filesystem::path path;  // resolved against the manifest directory
  Magnification magnification = Magnification::X20;
  CancerType cancer_type = CancerType::COAD;
  std::optional<double> tmb;
  std::optional<TmbClass> label;
};

/// JSON array of {slide_id, patient_id, path, magnification, cancer_type,
/// optional tmb, optional label}.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
/// Paths are written relative to the manifest's directory when possible.
void write_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& path);

/// Patient labels from manifest label fields, one per patient.
std::vector<PatientLabel> labels_from_manifest(std::span<const ManifestEntry> entries, double tmb_cutoff = 10.0);

// predictions.csv: patient_id, cancer_type, scale, prob, label, fold,
// survival_months, event, then metadata columns in key order. Survival
// cells are empty when unknown.
struct PredictionRecord {
  PredictionRow row;
  std::optional<SurvivalRecord> survival;
  std::map<std::string, std::string> metadata;
};

void write_predictions_csv(std::span<const PredictionRow> rows, std::span<const PatientLabel> patients,
                           const std::filesystem::path& path);
std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path);

/// Loads every *.sgmb file under dir, sorted by file name.
std::vector<std::filesystem::path> list_bag_files(const std::filesystem::path& dir);

/// Builds the training cohort from labels and bags. Bags of patients that
/// have no label are an error; patients without bags are allowed.
Cohort build_cohort(std::vector<PatientLabel> patients, std::vector<FeatureBag> bags, int knn_k,
                    std::array<bool, 3> scales = {true, true, true});

}  // namespace sgmil
