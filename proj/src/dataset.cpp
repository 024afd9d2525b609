#include "sgmil/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "sgmil/csv.hpp"
#include "sgmil/error.hpp"

namespace sgmil {

namespace {

const std::set<std::string> kLabelColumns = {"patient_id", "cancer_type",     "tmb",  "total_mutation_count",
                                             "label",      "survival_months", "event"};
const std::set<std::string> kPredictionColumns = {"patient_id", "cancer_type",     "scale", "prob",
                                                  "label",      "fold",            "event", "survival_months"};

bool parse_event(const std::string& text, const std::string& context) {
  if (text == "1" || text == "true") return true;
  if (text == "0" || text == "false") return false;
  fail(ErrorKind::Format, context + ": event must be 0/1, got '" + text + "'");
}

std::optional<SurvivalRecord> parse_survival(const csv::Table& t, const std::vector<std::string>& row,
                                             const std::string& patient, TmbClass group, const std::string& where) {
  const auto time_col = t.column("survival_months");
  const auto event_col = t.column("event");
  if (!time_col && !event_col) return std::nullopt;
  if (!time_col || !event_col) fail(ErrorKind::Format, t.source + ": survival_months and event must appear together");
  const auto& time = row[*time_col];
  const auto& event = row[*event_col];
  if (time.empty() && event.empty()) return std::nullopt;
  SurvivalRecord s;
  s.patient_id = patient;
  s.time = csv::parse_double(time, where + " survival_months");
  s.event = parse_event(event, where);
  s.group = group;
  if (!(s.time >= 0.0) || !std::isfinite(s.time)) {
    fail(ErrorKind::InvalidInput, where + ": survival time must be finite and non-negative");
  }
  return s;
}

}  // namespace

std::vector<PatientLabel> read_labels_csv(const std::filesystem::path& path, double tmb_cutoff) {
  const auto t = csv::read(path);
  const auto c_id = t.require_column("patient_id");
  const auto c_type = t.require_column("cancer_type");
  const auto c_tmb = t.column("tmb");
  const auto c_label = t.column("label");
  const auto c_count = t.column("total_mutation_count");
  if (!c_tmb && !c_label) fail(ErrorKind::Format, t.source + ": needs a tmb or label column");
  std::vector<PatientLabel> out;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = t.source + ":" + std::to_string(r + 2);
    PatientLabel p;
    p.patient_id = row[c_id];
    if (p.patient_id.empty()) fail(ErrorKind::Format, where + ": empty patient_id");
    if (!seen.insert(p.patient_id).second) fail(ErrorKind::InvalidInput, where + ": duplicate patient " + p.patient_id);
    p.cancer_type = parse_cancer_type(row[c_type]);
    if (c_tmb && !row[*c_tmb].empty()) p.tmb = csv::parse_double(row[*c_tmb], where + " tmb");
    if (c_count && !row[*c_count].empty()) {
      p.total_mutation_count = csv::parse_int(row[*c_count], where + " total_mutation_count");
    }
    std::optional<TmbClass> given;
    if (c_label && !row[*c_label].empty()) given = parse_tmb_class(row[*c_label]);
    if (p.tmb) {
      p.label = binarize_label(*p.tmb, tmb_cutoff);
      if (given && *given != p.label) {
        fail(ErrorKind::InvalidInput, where + ": label " + to_string(*given) + " contradicts tmb " +
                                          csv::format_double(*p.tmb));
      }
    } else if (given) {
      p.label = *given;
    } else {
      fail(ErrorKind::InvalidInput, where + ": patient " + p.patient_id + " has neither tmb nor label");
    }
    p.survival = parse_survival(t, row, p.patient_id, p.label, where);
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      if (!kLabelColumns.count(t.header[c])) p.metadata[t.header[c]] = row[c];
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_labels_csv(std::span<const PatientLabel> patients, const std::filesystem::path& path) {
  std::set<std::string> keys;
  for (const auto& p : patients) {
    for (const auto& [k, v] : p.metadata) keys.insert(k);
  }
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << "patient_id,cancer_type,tmb,total_mutation_count,label,survival_months,event";
  for (const auto& k : keys) out << ',' << csv::escape(k);
  out << '\n';
  for (const auto& p : patients) {
    out << csv::escape(p.patient_id) << ',' << to_string(p.cancer_type) << ','
        << (p.tmb ? csv::format_double(*p.tmb) : "") << ','
        << (p.total_mutation_count ? std::to_string(*p.total_mutation_count) : "") << ',' << to_string(p.label)
        << ',';
    if (p.survival) out << csv::format_double(p.survival->time) << ',' << (p.survival->event ? 1 : 0);
    else out << ',';
    for (const auto& k : keys) {
      auto it = p.metadata.find(k);
      out << ',' << (it == p.metadata.end() ? "" : csv::escape(it->second));
    }
    out << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::InvalidInput, "cannot open manifest " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, path.string() + ": " + e.what());
  }
  if (!doc.is_array()) fail(ErrorKind::Format, path.string() + ": manifest must be a JSON array");
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::set<std::pair<std::string, int>> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& e = doc[i];
    const std::string where = path.string() + " entry " + std::to_string(i);
    try {
      ManifestEntry m;
      m.slide_id = e.at("slide_id").get<std::string>();
      m.patient_id = e.at("patient_id").get<std::string>();
      m.path = base / e.at("path").get<std::string>();
      const auto& mag = e.at("magnification");
      m.magnification = mag.is_number_integer() ? magnification_from_int(mag.get<int>())
                                                : parse_magnification(mag.get<std::string>());
      m.cancer_type = parse_cancer_type(e.at("cancer_type").get<std::string>());
      if (e.contains("tmb")) m.tmb = e["tmb"].get<double>();
      if (e.contains("label")) m.label = parse_tmb_class(e["label"].get<std::string>());
      if (!seen.insert({m.slide_id, static_cast<int>(m.magnification)}).second) {
        fail(ErrorKind::InvalidInput, where + ": duplicate slide " + m.slide_id + " at x" + to_string(m.magnification));
      }
      out.push_back(std::move(m));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::Format, where + ": " + ex.what());
    } catch (const Error& ex) {
      fail(ex.kind(), where + ": " + ex.what());
    }
  }
  return out;
}

void write_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& path) {
  const auto base = path.parent_path();
  nlohmann::ordered_json doc = nlohmann::ordered_json::array();
  for (const auto& m : entries) {
    nlohmann::ordered_json e;
    e["slide_id"] = m.slide_id;
    e["patient_id"] = m.patient_id;
    e["path"] = m.path.lexically_relative(base.empty() ? "." : base).generic_string();
    e["magnification"] = static_cast<int>(m.magnification);
    e["cancer_type"] = to_string(m.cancer_type);
    if (m.tmb) e["tmb"] = *m.tmb;
    if (m.label) e["label"] = to_string(*m.label);
    doc.push_back(std::move(e));
  }
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::vector<PatientLabel> labels_from_manifest(std::span<const ManifestEntry> entries, double tmb_cutoff) {
  std::vector<PatientLabel> out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& m : entries) {
    PatientLabel p;
    p.patient_id = m.patient_id;
    p.cancer_type = m.cancer_type;
    p.tmb = m.tmb;
    if (m.tmb) {
      p.label = binarize_label(*m.tmb, tmb_cutoff);
    } else if (m.label) {
      p.label = *m.label;
    } else {
      fail(ErrorKind::InvalidInput, "manifest slide " + m.slide_id + " has no tmb or label");
    }
    auto [it, inserted] = index.emplace(p.patient_id, out.size());
    if (inserted) {
      out.push_back(std::move(p));
    } else if (out[it->second].label != p.label || out[it->second].cancer_type != p.cancer_type) {
      fail(ErrorKind::InvalidInput, "manifest gives conflicting labels for patient " + p.patient_id);
    }
  }
  return out;
}

void write_predictions_csv(std::span<const PredictionRow> rows, std::span<const PatientLabel> patients,
                           const std::filesystem::path& path) {
  std::unordered_map<std::string, const PatientLabel*> by_id;
  std::set<std::string> keys;
  for (const auto& p : patients) {
    by_id[p.patient_id] = &p;
    for (const auto& [k, v] : p.metadata) keys.insert(k);
  }
  std::ofstream out(path);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << "patient_id,cancer_type,scale,prob,label,fold,survival_months,event";
  for (const auto& k : keys) out << ',' << csv::escape(k);
  out << '\n';
  for (const auto& r : rows) {
    const auto it = by_id.find(r.patient_id);
    const PatientLabel* p = it == by_id.end() ? nullptr : it->second;
    out << csv::escape(r.patient_id) << ',' << to_string(r.cancer_type) << ',' << r.scale << ','
        << csv::format_double(r.prob) << ',' << to_string(r.label) << ',' << r.fold << ',';
    if (p && p->survival) out << csv::format_double(p->survival->time) << ',' << (p->survival->event ? 1 : 0);
    else out << ',';
    for (const auto& k : keys) {
      std::string v;
      if (p) {
        auto m = p->metadata.find(k);
        if (m != p->metadata.end()) v = m->second;
      }
      out << ',' << csv::escape(v);
    }
    out << '\n';
  }
}

std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto c_id = t.require_column("patient_id");
  const auto c_type = t.require_column("cancer_type");
  const auto c_scale = t.require_column("scale");
  const auto c_prob = t.require_column("prob");
  const auto c_label = t.require_column("label");
  const auto c_fold = t.column("fold");
  std::vector<PredictionRecord> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = t.source + ":" + std::to_string(r + 2);
    PredictionRecord rec;
    rec.row.patient_id = row[c_id];
    rec.row.cancer_type = parse_cancer_type(row[c_type]);
    rec.row.scale = row[c_scale];
    if (rec.row.scale != "ensemble") rec.row.scale = to_string(parse_magnification(rec.row.scale));
    rec.row.prob = csv::parse_double(row[c_prob], where + " prob");
    if (!(rec.row.prob >= 0.0 && rec.row.prob <= 1.0)) fail(ErrorKind::InvalidInput, where + ": prob outside [0, 1]");
    rec.row.label = parse_tmb_class(row[c_label]);
    if (c_fold && !row[*c_fold].empty()) rec.row.fold = static_cast<int>(csv::parse_int(row[*c_fold], where + " fold"));
    rec.survival = parse_survival(t, row, rec.row.patient_id, rec.row.label, where);
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      if (!kPredictionColumns.count(t.header[c])) rec.metadata[t.header[c]] = row[c];
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<std::filesystem::path> list_bag_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::InvalidInput, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".sgmb") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Cohort build_cohort(std::vector<PatientLabel> patients, std::vector<FeatureBag> bags, int knn_k,
                    std::array<bool, 3> scales) {
  std::unordered_map<std::string, const PatientLabel*> by_id;
  for (const auto& p : patients) by_id[p.patient_id] = &p;
  for (const auto& b : bags) {
    auto it = by_id.find(b.patient_id);
    if (it == by_id.end()) {
      fail(ErrorKind::InvalidInput, "bag " + b.slide_id + " belongs to unlabeled patient " + b.patient_id);
    }
    if (it->second->cancer_type != b.cancer_type) {
      fail(ErrorKind::InvalidInput, "bag " + b.slide_id + " cancer type disagrees with the labels of " + b.patient_id);
    }
  }
  Cohort cohort;
  for (auto& b : bags) {
    const auto s = scale_index(b.magnification);
    if (!scales[s]) continue;
    cohort.graphs[s].push_back(build_knn_graph(std::move(b), knn_k));
  }
  cohort.patients = std::move(patients);
  return cohort;
}

}  // namespace sgmil
