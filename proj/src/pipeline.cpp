#include "sgmil/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>

#include "sgmil/checkpoint.hpp"
#include "sgmil/csv.hpp"
#include "sgmil/error.hpp"
#include "sgmil/heatmap.hpp"
#include "sgmil/report.hpp"
#include "sgmil/rng.hpp"
#include "sgmil/synth.hpp"

namespace fs = std::filesystem;

namespace sgmil {

namespace {

std::string item_name(const std::string& slide_id, Magnification m) {
  return slide_id + "_x" + to_string(m);
}

std::string item_name(const fs::path& bag_file) { return bag_file.stem().string(); }

void note(const RunContext& ctx, const std::string& msg) {
  if (ctx.log) ctx.log(msg);
}

Sha256& add_ingest(Sha256& h, const IngestOptions& o) {
  return h.add(static_cast<long long>(o.downscale_factor)).add(o.min_foreground_fraction).add(o.min_luma_variance);
}

void hash_train_config(Sha256& h, const PipelineConfig& cfg) {
  const auto& t = cfg.train;
  h.add("train/1").add(static_cast<long long>(cfg.seed)).add(t.learning_rate).add(static_cast<long long>(t.epochs));
  h.add(static_cast<long long>(t.batch_size)).add(t.ema_momentum).add(static_cast<long long>(t.folds));
  h.add(t.adam_beta1).add(t.adam_beta2).add(t.adam_eps);
  h.add(static_cast<long long>(t.class_weighting)).add(static_cast<long long>(t.fit_ensemble_weights));
  h.add(static_cast<long long>(t.shape.width)).add(static_cast<long long>(t.shape.attn_dim));
  h.add(static_cast<long long>(t.shape.blocks)).add(static_cast<long long>(t.knn_k));
  for (bool s : cfg.scales) h.add(static_cast<long long>(s));
}

void hash_patients(Sha256& h, const std::vector<PatientLabel>& patients) {
  for (const auto& p : patients) {
    h.add(p.patient_id).add(to_string(p.cancer_type)).add(to_string(p.label));
    h.add(p.tmb ? *p.tmb : -1.0).add(p.total_mutation_count ? *p.total_mutation_count : -1LL);
    if (p.survival) h.add(p.survival->time).add(static_cast<long long>(p.survival->event));
    else h.add("no-survival");
    for (const auto& [k, v] : p.metadata) h.add(k).add(v);
  }
}

std::vector<FeatureBag> load_bags(const std::vector<fs::path>& files) {
  std::vector<FeatureBag> bags;
  bags.reserve(files.size());
  for (const auto& f : files) bags.push_back(load_feature_bag(f));
  return bags;
}

std::string fold_checkpoint_name(int f) { return "fold" + std::to_string(f) + ".sgmck"; }

}  // namespace

std::string StageReport::describe() const {
  if (skipped) return stage + ": skipped";
  return stage + ": " + std::to_string(computed) + " computed, " + std::to_string(cached) + " cached";
}

std::vector<fs::path> select_bag_files(const fs::path& dir, std::array<bool, 3> scales) {
  std::vector<fs::path> out;
  for (const auto& f : list_bag_files(dir)) {
    const auto stem = f.stem().string();
    const auto pos = stem.rfind("_x");
    if (pos == std::string::npos) fail(ErrorKind::Format, f.string() + ": bag file name lacks _x<mag> suffix");
    if (scales[scale_index(parse_magnification(stem.substr(pos + 2)))]) out.push_back(f);
  }
  return out;
}

StageReport run_tile_stage(const RunContext& ctx, const std::vector<ManifestEntry>& entries, const StageCache* cache) {
  StageReport rep{"tile"};
  const auto dir = ctx.out_dir / "tiles";
  fs::create_directories(dir);
  for (const auto& e : entries) {
    if (!ctx.config.scales[scale_index(e.magnification)]) continue;
    const auto name = item_name(e.slide_id, e.magnification);
    const auto out = dir / (name + ".csv");
    Sha256 h;
    h.add("tile/1").add_file(e.path).add(e.slide_id).add(to_string(e.magnification));
    const auto key = add_ingest(h, ctx.config.ingest).hex();
    const std::vector<fs::path> outputs = {out};
    if (cache && cache->hit("tile", name, key, outputs)) {
      ++rep.cached;
      continue;
    }
    SlideImage img{e.slide_id, e.patient_id, e.magnification, read_image(e.path)};
    const auto mask = segment_foreground(img, ctx.config.ingest.downscale_factor, ctx.config.ingest.min_luma_variance);
    const auto tiles = tile_slide(img, mask, ctx.config.ingest.min_foreground_fraction);
    if (tiles.empty()) fail(ErrorKind::EmptyBag, "slide " + name + " has no foreground tiles");
    write_tiles_csv(tiles, out);
    note(ctx, "tiled " + name + ": " + std::to_string(tiles.size()) + " tiles");
    if (cache) cache->store("tile", name, key);
    ++rep.computed;
  }
  return rep;
}

StageReport run_embed_stage(const RunContext& ctx, const std::vector<ManifestEntry>& entries, const fs::path& tiles_dir,
                            const StageCache* cache) {
  StageReport rep{"embed"};
  const auto dir = ctx.out_dir / "bags";
  fs::create_directories(dir);
  for (const auto& e : entries) {
    if (!ctx.config.scales[scale_index(e.magnification)]) continue;
    const auto name = item_name(e.slide_id, e.magnification);
    const auto tiles_csv = tiles_dir / (name + ".csv");
    const auto out = dir / bag_file_name(e.slide_id, e.magnification);
    const auto key = Sha256()
                         .add("embed/1")
                         .add_file(e.path)
                         .add_file(tiles_csv)
                         .add(e.patient_id)
                         .add(to_string(e.cancer_type))
                         .hex();
    const std::vector<fs::path> outputs = {out};
    if (cache && cache->hit("embed", name, key, outputs)) {
      ++rep.cached;
      continue;
    }
    SlideImage img{e.slide_id, e.patient_id, e.magnification, read_image(e.path)};
    const auto records = read_tiles_csv(tiles_csv);
    const auto tiles = crop_tiles(img, records);
    const auto bag = embed_slide(tiles, SlideMeta{e.patient_id, e.cancer_type});
    save_feature_bag(bag, out);
    note(ctx, "embedded " + name + ": " + std::to_string(bag.size()) + " x " + std::to_string(bag.dim));
    if (cache) cache->store("embed", name, key);
    ++rep.computed;
  }
  return rep;
}

StageReport run_graph_stage(const RunContext& ctx, const std::vector<fs::path>& bag_files, const StageCache* cache) {
  StageReport rep{"graph"};
  const auto dir = ctx.out_dir / "graphs";
  fs::create_directories(dir);
  for (const auto& f : bag_files) {
    const auto name = item_name(f);
    const auto out = dir / (name + ".csv");
    const auto key =
        Sha256().add("graph/1").add_file(f).add(static_cast<long long>(ctx.config.train.knn_k)).hex();
    const std::vector<fs::path> outputs = {out};
    if (cache && cache->hit("graph", name, key, outputs)) {
      ++rep.cached;
      continue;
    }
    write_graph_csv(build_knn_graph(load_feature_bag(f), ctx.config.train.knn_k), out);
    if (cache) cache->store("graph", name, key);
    ++rep.computed;
  }
  return rep;
}

StageReport run_train_stage(const RunContext& ctx, const std::vector<PatientLabel>& patients,
                            const std::vector<fs::path>& bag_files, const StageCache* cache) {
  StageReport rep{"train"};
  const auto& cfg = ctx.config;
  const int k = cfg.train.folds;
  Sha256 h;
  hash_train_config(h, cfg);
  hash_patients(h, patients);
  for (const auto& f : bag_files) h.add(f.filename().string()).add_file(f);
  const auto key = h.hex();
  std::vector<fs::path> outputs = {ctx.out_dir / "predictions.csv", ctx.out_dir / "folds.csv"};
  for (int f = 0; f < k; ++f) outputs.push_back(ctx.out_dir / "checkpoints" / fold_checkpoint_name(f));
  if (cache && cache->hit("train", "cohort", key, outputs)) {
    rep.cached = 1;
    return rep;
  }

  auto cohort = build_cohort(patients, load_bags(bag_files), cfg.train.knn_k, cfg.scales);
  const auto cv = cross_validate(cohort, cfg.train, cfg.scales, [&](const std::string& m) { note(ctx, m); });
  for (const auto& w : cv.folds.warnings) note(ctx, "warning: " + w);

  fs::create_directories(ctx.out_dir / "checkpoints");
  fs::create_directories(ctx.out_dir / "logs");
  for (const auto& o : cv.outcomes) {
    save_checkpoint(o.checkpoint, ctx.out_dir / "checkpoints" / fold_checkpoint_name(o.fold));
    if (o.ensemble_warning) note(ctx, "fold " + std::to_string(o.fold) + ": " + *o.ensemble_warning);
    for (std::size_t s = 0; s < 3; ++s) {
      if (o.logs[s].empty()) continue;
      write_train_log_csv(o.logs[s], ctx.out_dir / "logs" /
                                         ("fold" + std::to_string(o.fold) + "_x" + to_string(kAllMagnifications[s]) +
                                          ".csv"));
    }
  }
  {
    std::ofstream out(ctx.out_dir / "folds.csv");
    out << "patient_id,fold\n";
    for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
      out << csv::escape(cohort.patients[i].patient_id) << ',' << cv.folds.fold_of[i] << '\n';
    }
  }
  write_predictions_csv(cv.predictions, cohort.patients, ctx.out_dir / "predictions.csv");
  if (cache) cache->store("train", "cohort", key);
  rep.computed = 1;
  return rep;
}

StageReport run_evaluate_stage(const RunContext& ctx, const fs::path& predictions, const StageCache* cache) {
  StageReport rep{"evaluate"};
  const auto& e = ctx.config.evaluate;
  Sha256 h;
  h.add("evaluate/1").add_file(predictions).add(static_cast<long long>(ctx.config.seed));
  h.add(static_cast<long long>(e.n_boot)).add(e.tmb_cutoff);
  for (const auto& s : e.subgroups) h.add(s);
  const auto key = h.hex();
  const std::vector<fs::path> outputs = {ctx.out_dir / "report.json", ctx.out_dir / "roc.csv",
                                         ctx.out_dir / "km.csv"};
  if (cache && cache->hit("evaluate", "report", key, outputs)) {
    rep.cached = 1;
    return rep;
  }
  const auto records = read_predictions_csv(predictions);
  const auto summary = write_evaluation(records, e, ctx.config.seed, ctx.out_dir);
  std::string msg = "AUC (" + summary.scale + ") " + csv::format_double(summary.auc) + " [" +
                    csv::format_double(summary.ci_lo) + ", " + csv::format_double(summary.ci_hi) + "]";
  if (summary.hazard_ratio) msg += ", HR " + csv::format_double(*summary.hazard_ratio);
  note(ctx, msg);
  if (cache) cache->store("evaluate", "report", key);
  rep.computed = 1;
  return rep;
}

void render_bag_heatmap(const HeatmapRequest& request, const HeatmapConfig& config, int knn_k) {
  const auto ckpt = load_checkpoint(request.checkpoint);
  auto bag = load_feature_bag(request.bag);
  const auto* model = ckpt.find(bag.magnification);
  if (model == nullptr) {
    fail(ErrorKind::InvalidInput, "checkpoint has no model for x" + to_string(bag.magnification));
  }
  if (model->ema.shape.input_dim != bag.dim) fail(ErrorKind::InvalidInput, "bag dimension does not match checkpoint");
  HeatmapSpec spec;
  spec.slide_id = bag.slide_id;
  spec.magnification = bag.magnification;
  spec.normalization = config.normalization;
  spec.opacity = config.opacity;
  const auto graph = build_knn_graph(std::move(bag), knn_k);
  const auto out = forward_single_scale(graph, model->ema);
  std::optional<std::vector<double>> tile_probs;
  if (config.tile_probs) tile_probs = tile_probabilities(graph, model->ema);
  spec.downscale = config.downscale;
  std::optional<RgbImage> base;
  if (request.image) base = downsample_image(read_image(*request.image), config.downscale);
  const auto hm = render_heatmap(graph.bag.coords, out.attention, base ? &*base : nullptr, spec);
  write_png(hm.raster, request.out_png);
  write_heatmap_csv(graph.bag.coords, out.attention, hm.normalized, tile_probs, request.out_csv);
}

StageReport run_heatmap_stage(const RunContext& ctx, const fs::path& predictions, const std::vector<fs::path>& bag_files,
                              const std::vector<ManifestEntry>& entries, const StageCache* cache) {
  StageReport rep{"heatmap"};
  const auto& hc = ctx.config.heatmap;
  if (hc.slides == 0) {
    rep.skipped = true;
    return rep;
  }
  const auto records = read_predictions_csv(predictions);
  std::set<std::string> scales;
  for (const auto& r : records) scales.insert(r.row.scale);
  const std::string primary = scales.count("ensemble") ? "ensemble" : *scales.begin();
  std::vector<const PredictionRecord*> candidates;
  for (const auto& r : records) {
    if (r.row.scale == primary && r.row.label == TmbClass::High && r.row.fold >= 0) candidates.push_back(&r);
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto* a, const auto* b) {
    if (a->row.prob != b->row.prob) return a->row.prob > b->row.prob;
    return a->row.patient_id < b->row.patient_id;
  });
  if (candidates.size() > static_cast<std::size_t>(hc.slides)) candidates.resize(static_cast<std::size_t>(hc.slides));

  std::map<std::pair<std::string, int>, fs::path> images;
  for (const auto& e : entries) images[{e.slide_id, static_cast<int>(e.magnification)}] = e.path;
  const auto dir = ctx.out_dir / "heatmaps";
  fs::create_directories(dir);
  for (const auto* c : candidates) {
    for (const auto& f : bag_files) {
      const auto bag = load_feature_bag(f);
      if (bag.patient_id != c->row.patient_id) continue;
      const auto name = item_name(f);
      HeatmapRequest req;
      req.checkpoint = ctx.out_dir / "checkpoints" / fold_checkpoint_name(c->row.fold);
      req.bag = f;
      auto it = images.find({bag.slide_id, static_cast<int>(bag.magnification)});
      if (it != images.end()) req.image = it->second;
      req.out_png = dir / (name + ".png");
      req.out_csv = dir / (name + ".csv");
      Sha256 h;
      h.add("heatmap/1").add_file(req.checkpoint).add_file(req.bag);
      if (req.image) h.add_file(*req.image);
      h.add(to_string(hc.normalization)).add(hc.opacity).add(static_cast<long long>(hc.downscale));
      h.add(static_cast<long long>(hc.tile_probs)).add(static_cast<long long>(ctx.config.train.knn_k));
      const auto key = h.hex();
      const std::vector<fs::path> outputs = {req.out_png, req.out_csv};
      if (cache && cache->hit("heatmap", name, key, outputs)) {
        ++rep.cached;
        continue;
      }
      render_bag_heatmap(req, hc, ctx.config.train.knn_k);
      if (cache) cache->store("heatmap", name, key);
      ++rep.computed;
    }
  }
  return rep;
}

std::vector<StageReport> run_pipeline(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  if (!cfg.manifest && !cfg.bags_dir) fail(ErrorKind::Config, "pipeline needs data.manifest or data.bags_dir");
  fs::create_directories(ctx.out_dir);
  const StageCache cache(ctx.out_dir / ".cache");
  std::vector<StageReport> reports;
  auto stage = [&](const std::string& name, auto&& fn) {
    try {
      reports.push_back(fn());
    } catch (const Error& e) {
      fail(e.kind(), "stage " + name + ": " + e.what());
    }
    note(ctx, reports.back().describe());
  };

  std::vector<ManifestEntry> entries;
  std::vector<PatientLabel> patients;
  try {
    if (cfg.manifest) entries = read_manifest(*cfg.manifest);
    if (cfg.labels) patients = read_labels_csv(*cfg.labels, cfg.evaluate.tmb_cutoff);
    else if (cfg.manifest) patients = labels_from_manifest(entries, cfg.evaluate.tmb_cutoff);
    else fail(ErrorKind::Config, "data.labels is required with data.bags_dir");
  } catch (const Error& e) {
    fail(e.kind(), "stage load: " + std::string(e.what()));
  }

  fs::path bags_dir;
  if (cfg.manifest) {
    stage("tile", [&] { return run_tile_stage(ctx, entries, &cache); });
    stage("embed", [&] { return run_embed_stage(ctx, entries, ctx.out_dir / "tiles", &cache); });
    bags_dir = ctx.out_dir / "bags";
  } else {
    reports.push_back({"tile", 0, 0, true});
    reports.push_back({"embed", 0, 0, true});
    bags_dir = *cfg.bags_dir;
  }
  std::vector<fs::path> bag_files;
  if (cfg.manifest) {
    for (const auto& e : entries) {
      if (cfg.scales[scale_index(e.magnification)]) bag_files.push_back(bags_dir / bag_file_name(e.slide_id, e.magnification));
    }
    std::sort(bag_files.begin(), bag_files.end());
  } else {
    bag_files = select_bag_files(bags_dir, cfg.scales);
  }
  if (bag_files.empty()) fail(ErrorKind::InvalidInput, "no feature bags for the selected magnifications");
  stage("graph", [&] { return run_graph_stage(ctx, bag_files, &cache); });
  stage("train", [&] { return run_train_stage(ctx, patients, bag_files, &cache); });
  stage("evaluate", [&] { return run_evaluate_stage(ctx, ctx.out_dir / "predictions.csv", &cache); });
  stage("heatmap", [&] { return run_heatmap_stage(ctx, ctx.out_dir / "predictions.csv", bag_files, entries, &cache); });
  return reports;
}

std::vector<PredictionRow> predict_with_checkpoint(const Checkpoint& ckpt, const std::vector<PatientLabel>& patients,
                                                   const std::vector<fs::path>& bag_files, int knn_k) {
  std::array<bool, 3> scales = {false, false, false};
  for (const auto& s : ckpt.scales) scales[scale_index(s.magnification)] = true;
  const auto cohort = build_cohort(patients, load_bags(bag_files), knn_k, scales);
  std::vector<std::size_t> all(cohort.patients.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return predict_patients(ckpt, cohort, all, -1);
}

void write_synthetic_cohort(const SyntheticCohortSpec& spec, const fs::path& out_dir, bool images, const Logger& log) {
  const auto cohort = generate_synthetic_cohort(spec);
  fs::create_directories(out_dir / "bags");
  write_labels_csv(cohort.patients, out_dir / "labels.csv");
  std::ofstream signal(out_dir / "signal.csv");
  if (!signal) fail(ErrorKind::InvalidInput, "cannot write " + (out_dir / "signal.csv").string());
  signal << "slide_id,magnification,x,y,signal\n";
  std::vector<ManifestEntry> manifest;
  if (images) fs::create_directories(out_dir / "images");
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < cohort.slides[s].size(); ++i) {
      const auto& slide = cohort.slides[s][i];
      const auto& bag = slide.bag;
      save_feature_bag(bag, out_dir / "bags" / bag_file_name(bag.slide_id, bag.magnification));
      for (std::size_t t = 0; t < bag.size(); ++t) {
        signal << bag.slide_id << ',' << to_string(bag.magnification) << ',' << bag.coords[t][0] << ','
               << bag.coords[t][1] << ',' << static_cast<int>(slide.signal[t]) << '\n';
      }
      if (images) {
        const auto name = item_name(bag.slide_id, bag.magnification);
        const auto path = out_dir / "images" / (name + ".png");
        write_png(render_synthetic_slide(slide, spec.shift / 3.0, derive_seed(spec.seed, 500000 + 3 * i + s)), path);
        ManifestEntry e;
        e.slide_id = bag.slide_id;
        e.patient_id = bag.patient_id;
        e.path = path;
        e.magnification = bag.magnification;
        e.cancer_type = bag.cancer_type;
        e.tmb = cohort.patients[i].tmb;
        manifest.push_back(std::move(e));
        if (log) log("rendered " + name);
      }
    }
  }
  if (images) write_manifest(manifest, out_dir / "manifest.json");
}

}  // namespace sgmil
