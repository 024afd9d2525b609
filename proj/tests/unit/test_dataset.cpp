#include <doctest/doctest.h>

#include <filesystem>
#include <fstream>

#include "sgmil/dataset.hpp"
#include "sgmil/error.hpp"
#include "sgmil/rng.hpp"
#include "sgmil/synth.hpp"
#include "support/fixtures.hpp"

using namespace sgmil;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::path(SGMIL_TEST_SCRATCH) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("labels csv round-trips") {
  SyntheticCohortSpec spec;
  spec.n_patients = 25;
  spec.seed = 3;
  const auto pats = generate_synthetic_cohort(spec).patients;
  const auto dir = scratch("labels");
  write_labels_csv(pats, dir / "labels.csv");
  const auto back = read_labels_csv(dir / "labels.csv");
  REQUIRE(back.size() == pats.size());
  for (std::size_t i = 0; i < pats.size(); ++i) {
    CHECK(back[i].patient_id == pats[i].patient_id);
    CHECK(back[i].cancer_type == pats[i].cancer_type);
    CHECK(back[i].tmb == pats[i].tmb);
    CHECK(back[i].total_mutation_count == pats[i].total_mutation_count);
    CHECK(back[i].label == pats[i].label);
    CHECK(back[i].survival->time == pats[i].survival->time);
    CHECK(back[i].survival->event == pats[i].survival->event);
    CHECK(back[i].metadata == pats[i].metadata);
  }
}

TEST_CASE("labels csv validation") {
  const auto dir = scratch("labels_bad");
  write_text(dir / "a.csv", "patient_id,cancer_type,tmb,label\nP1,COAD,12.0,TMB_L\n");
  CHECK_THROWS_AS(read_labels_csv(dir / "a.csv"), Error);
  write_text(dir / "b.csv", "patient_id,cancer_type,tmb\nP1,COAD,-2\n");
  CHECK_THROWS_AS(read_labels_csv(dir / "b.csv"), Error);
  write_text(dir / "c.csv", "patient_id,cancer_type,tmb,survival_months\nP1,COAD,2,10\n");
  CHECK_THROWS_AS(read_labels_csv(dir / "c.csv"), Error);
  write_text(dir / "d.csv", "patient_id,cancer_type,tmb\nP1,GBM,2\n");
  CHECK_THROWS_AS(read_labels_csv(dir / "d.csv"), Error);
  write_text(dir / "e.csv", "patient_id,cancer_type,tmb\nP1,LUAD,10.0\nP2,LUAD,10.5\n");
  const auto ok = read_labels_csv(dir / "e.csv");
  CHECK(ok[0].label == TmbClass::Low);
  CHECK(ok[1].label == TmbClass::High);
}

TEST_CASE("manifest round-trips with relative paths") {
  const auto dir = scratch("manifest");
  std::vector<ManifestEntry> entries = {
      {"S1", "P1", dir / "img" / "S1.png", Magnification::X20, CancerType::STAD, 14.5, TmbClass::High},
      {"S2", "P2", dir / "img" / "S2.png", Magnification::X5, CancerType::BLCA, std::nullopt, TmbClass::Low}};
  write_manifest(entries, dir / "manifest.json");
  std::ifstream in(dir / "manifest.json");
  const std::string text{std::istreambuf_iterator<char>(in), {}};
  CHECK(text.find("\"img/S1.png\"") != std::string::npos);
  const auto back = read_manifest(dir / "manifest.json");
  REQUIRE(back.size() == 2);
  CHECK(back[0].path == entries[0].path);
  CHECK(back[1].magnification == Magnification::X5);
  CHECK(back[0].tmb == 14.5);
  const auto labels = labels_from_manifest(back);
  CHECK(labels[0].label == TmbClass::High);
  CHECK(labels[1].label == TmbClass::Low);
}

TEST_CASE("predictions csv round-trips") {
  std::vector<PatientLabel> pats = {{"P1", CancerType::COAD, 12.0, 300, TmbClass::High, SurvivalRecord{"P1", 13.5, true}, {{"grade", "G2"}}},
                                    {"P2", CancerType::LUSC, 3.0, 80, TmbClass::Low, std::nullopt, {{"grade", "G1"}}}};
  std::vector<PredictionRow> rows = {{"P1", CancerType::COAD, "10", 0.8125, TmbClass::High, 2},
                                     {"P2", CancerType::LUSC, "ensemble", 0.1, TmbClass::Low, 0}};
  const auto dir = scratch("predictions");
  write_predictions_csv(rows, pats, dir / "p.csv");
  const auto back = read_predictions_csv(dir / "p.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].row.prob == 0.8125);
  CHECK(back[0].row.scale == "10");
  CHECK(back[0].row.fold == 2);
  CHECK(back[0].survival->time == 13.5);
  CHECK(back[0].metadata.at("grade") == "G2");
  CHECK_FALSE(back[1].survival.has_value());
}

TEST_CASE("cohort assembly") {
  Rng rng(81);
  std::vector<PatientLabel> pats = {{"P1", CancerType::COAD, 12.0, {}, TmbClass::High, {}, {}},
                                    {"P2", CancerType::COAD, 3.0, {}, TmbClass::Low, {}, {}}};
  auto bag = fixtures::random_bag(rng, 5, 4);
  bag.patient_id = "P1";
  bag.cancer_type = CancerType::COAD;
  bag.magnification = Magnification::X10;
  const auto cohort = build_cohort(pats, {bag}, 3);
  CHECK(cohort.graphs[1].size() == 1);
  CHECK(cohort.graphs[0].empty());

  auto stranger = bag;
  stranger.patient_id = "P9";
  CHECK_THROWS_AS(build_cohort(pats, {stranger}, 3), Error);
  auto wrong_type = bag;
  wrong_type.cancer_type = CancerType::UCEC;
  CHECK_THROWS_AS(build_cohort(pats, {wrong_type}, 3), Error);
}
