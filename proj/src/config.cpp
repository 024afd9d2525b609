#include "sgmil/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <tomlplusplus/toml.hpp>

#include "sgmil/error.hpp"

namespace sgmil {

namespace {

class Section {
 public:
  Section(const toml::table* table, std::string name, std::string source)
      : table_(table), name_(std::move(name)), source_(std::move(source)) {}

  [[noreturn]] void error(const std::string& key, const std::string& what) const {
    fail(ErrorKind::Config, source_ + ": " + (name_.empty() ? key : name_ + "." + key) + ": " + what);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (table_ == nullptr) return;
    const auto* node = table_->get(key);
    if (node == nullptr) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (!node->is_boolean()) error(key, "expected a boolean");
      out = node->as_boolean()->get();
    } else if constexpr (std::is_integral_v<T>) {
      if (!node->is_integer()) error(key, "expected an integer");
      const auto v = node->as_integer()->get();
      if constexpr (std::is_unsigned_v<T>) {
        if (v < 0) error(key, "must be non-negative");
      }
      out = static_cast<T>(v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (node->is_integer()) out = static_cast<T>(node->as_integer()->get());
      else if (node->is_floating_point()) out = static_cast<T>(node->as_floating_point()->get());
      else error(key, "expected a number");
    } else {
      if (!node->is_string()) error(key, "expected a string");
      out = node->as_string()->get();
    }
  }

  void mark(const std::string& key) { seen_.insert(key); }

  void read_strings(const std::string& key, std::vector<std::string>& out) {
    seen_.insert(key);
    if (table_ == nullptr) return;
    const auto* node = table_->get(key);
    if (node == nullptr) return;
    const auto* arr = node->as_array();
    if (arr == nullptr) error(key, "expected an array of strings");
    out.clear();
    for (const auto& v : *arr) {
      if (!v.is_string()) error(key, "expected an array of strings");
      out.push_back(v.as_string()->get());
    }
  }

  void reject_unknown() const {
    if (table_ == nullptr) return;
    for (const auto& [k, v] : *table_) {
      const std::string key(k.str());
      if (!seen_.count(key)) error(key, "unknown key");
    }
  }

 private:
  const toml::table* table_;
  std::string name_;
  std::string source_;
  std::set<std::string> seen_;
};

}  // namespace

std::array<bool, 3> parse_scale_selection(const std::string& text) {
  if (text == "all") return {true, true, true};
  std::array<bool, 3> out = {false, false, false};
  try {
    out[scale_index(parse_magnification(text))] = true;
  } catch (const Error&) {
    fail(ErrorKind::Config, "magnification must be 5, 10, 20 or all, got '" + text + "'");
  }
  return out;
}

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                            const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ": " << e.description();
    fail(ErrorKind::Config, msg.str());
  }
  PipelineConfig cfg;
  Section top(&root, "", source);
  if (!root.contains("seed")) fail(ErrorKind::Config, source + ": seed is mandatory");
  top.read("seed", cfg.seed);
  cfg.train.seed = cfg.seed;
  cfg.synth.seed = cfg.seed;
  std::string scales = "all";
  top.read("magnification", scales);
  cfg.scales = parse_scale_selection(scales);

  auto section = [&](const char* name) {
    const auto* node = root.get(name);
    if (node != nullptr && !node->is_table()) fail(ErrorKind::Config, source + ": " + name + " must be a table");
    return Section(node ? node->as_table() : nullptr, name, source);
  };
  for (const char* name : {"data", "ingest", "model", "train", "evaluate", "heatmap", "synth"}) top.mark(name);

  {
    auto s = section("data");
    std::string manifest, bags, labels;
    s.read("manifest", manifest);
    s.read("bags_dir", bags);
    s.read("labels", labels);
    s.reject_unknown();
    if (!manifest.empty()) cfg.manifest = base_dir / manifest;
    if (!bags.empty()) cfg.bags_dir = base_dir / bags;
    if (!labels.empty()) cfg.labels = base_dir / labels;
    if (cfg.manifest && cfg.bags_dir) fail(ErrorKind::Config, source + ": data.manifest and data.bags_dir are exclusive");
  }
  {
    auto s = section("ingest");
    s.read("downscale_factor", cfg.ingest.downscale_factor);
    s.read("min_foreground_fraction", cfg.ingest.min_foreground_fraction);
    s.read("min_luma_variance", cfg.ingest.min_luma_variance);
    s.reject_unknown();
    if (cfg.ingest.downscale_factor < 1) fail(ErrorKind::Config, source + ": ingest.downscale_factor must be >= 1");
    if (!(cfg.ingest.min_foreground_fraction >= 0.0 && cfg.ingest.min_foreground_fraction <= 1.0)) {
      fail(ErrorKind::Config, source + ": ingest.min_foreground_fraction must lie in [0, 1]");
    }
  }
  {
    auto s = section("model");
    s.read("width", cfg.train.shape.width);
    s.read("attn_dim", cfg.train.shape.attn_dim);
    s.read("blocks", cfg.train.shape.blocks);
    s.read("knn_k", cfg.train.knn_k);
    s.reject_unknown();
  }
  {
    auto s = section("train");
    s.read("learning_rate", cfg.train.learning_rate);
    s.read("epochs", cfg.train.epochs);
    s.read("batch_size", cfg.train.batch_size);
    s.read("ema_momentum", cfg.train.ema_momentum);
    s.read("folds", cfg.train.folds);
    s.read("adam_beta1", cfg.train.adam_beta1);
    s.read("adam_beta2", cfg.train.adam_beta2);
    s.read("adam_eps", cfg.train.adam_eps);
    s.read("class_weighting", cfg.train.class_weighting);
    s.read("fit_ensemble_weights", cfg.train.fit_ensemble_weights);
    s.reject_unknown();
    validate(cfg.train);
  }
  {
    auto s = section("evaluate");
    s.read("n_boot", cfg.evaluate.n_boot);
    s.read("tmb_cutoff", cfg.evaluate.tmb_cutoff);
    s.read_strings("subgroups", cfg.evaluate.subgroups);
    s.reject_unknown();
    if (cfg.evaluate.n_boot < 1) fail(ErrorKind::Config, source + ": evaluate.n_boot must be >= 1");
  }
  {
    auto s = section("heatmap");
    std::string norm = to_string(cfg.heatmap.normalization);
    s.read("normalization", norm);
    s.read("opacity", cfg.heatmap.opacity);
    s.read("downscale", cfg.heatmap.downscale);
    s.read("slides", cfg.heatmap.slides);
    s.read("tile_probs", cfg.heatmap.tile_probs);
    s.reject_unknown();
    cfg.heatmap.normalization = parse_normalization(norm);
    if (!(cfg.heatmap.opacity >= 0.0 && cfg.heatmap.opacity <= 1.0)) {
      fail(ErrorKind::Config, source + ": heatmap.opacity must lie in [0, 1]");
    }
    if (cfg.heatmap.downscale < 1 || cfg.heatmap.slides < 0) {
      fail(ErrorKind::Config, source + ": heatmap.downscale must be >= 1 and heatmap.slides >= 0");
    }
  }
  {
    auto s = section("synth");
    auto& y = cfg.synth;
    s.read("n_patients", y.n_patients);
    s.read("tmb_h_fraction", y.tmb_h_fraction);
    s.read("signal_fraction", y.signal_fraction);
    s.read("shift", y.shift);
    s.read("scale_expression", y.scale_expression);
    s.read("min_tiles", y.min_tiles);
    s.read("max_tiles", y.max_tiles);
    s.read("feature_dim", y.feature_dim);
    s.read("baseline_hazard", y.baseline_hazard);
    s.read("hazard_ratio", y.hazard_ratio);
    s.read("censor_max", y.censor_max);
    s.reject_unknown();
    validate(y);
  }
  top.reject_unknown();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path(), path.string());
}

}  // namespace sgmil
