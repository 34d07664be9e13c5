// mmhar: staged command-line front end for the activity-recognition pipeline.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "mmhar/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mmhar;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string preset = "default";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
  bool force = false;
  bool quiet = false;
};

struct TrainOptions {
  std::optional<double> lr, momentum, l2;
  std::optional<std::size_t> batch, epochs;
};

struct Context {
  PipelineConfig cfg;
  std::uint64_t hash = 0;
  fs::path out;
  bool force = false;
  bool quiet = false;

  std::string hash_hex() const { return hex64(hash); }
  void log(const std::string& m) const {
    if (!quiet) std::cerr << m << '\n';
  }
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config file overlaid on the preset");
  cmd->add_option("--preset", o.preset, "Base preset: default or desk");
  cmd->add_option("--set", o.overrides, "Override section.key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "Global seed");
  cmd->add_option("--threads", o.threads, "Worker threads (results do not depend on it)");
  cmd->add_option("--out", o.out, "Work directory (defaults to paths.work)");
  cmd->add_flag("--force", o.force, "Proceed despite mixed config hashes");
  cmd->add_flag("-q,--quiet", o.quiet, "Suppress progress output");
}

void add_train_options(CLI::App* cmd, TrainOptions& t) {
  cmd->add_option("--lr", t.lr, "Learning rate");
  cmd->add_option("--momentum", t.momentum, "Momentum");
  cmd->add_option("--l2", t.l2, "L2 weight penalty");
  cmd->add_option("--batch", t.batch, "Minibatch size");
  cmd->add_option("--epochs", t.epochs, "Training epochs");
}

void apply_train_options(Json& doc, const TrainOptions& t, const std::vector<std::string>& models) {
  for (const auto& m : models) {
    const std::string p = "models." + m + ".train.";
    if (t.lr) apply_override(doc, p + "lr=" + format_double(*t.lr));
    if (t.momentum) apply_override(doc, p + "momentum=" + format_double(*t.momentum));
    if (t.l2) apply_override(doc, p + "l2=" + format_double(*t.l2));
    if (t.batch) apply_override(doc, p + "batch=" + std::to_string(*t.batch));
    if (t.epochs) apply_override(doc, p + "epochs=" + std::to_string(*t.epochs));
  }
}

Json load_json_file(const std::string& path) {
  Json j = Json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::Config, "cannot parse JSON in " + path);
  return j;
}

/// Preset, then config file, then --set, then dedicated flags.
Json config_document(const CommonOptions& o) {
  Json doc = config_to_json(preset_config(o.preset));
  if (!o.config_path.empty()) {
    doc = config_to_json(config_from_json(load_json_file(o.config_path), config_from_json(doc)));
  }
  for (const auto& s : o.overrides) apply_override(doc, s);
  if (o.seed) apply_override(doc, "seed=" + std::to_string(*o.seed));
  if (o.threads) apply_override(doc, "threads=" + std::to_string(*o.threads));
  return doc;
}

Context make_context(const Json& doc, const CommonOptions& o) {
  Context ctx;
  ctx.cfg = config_from_json(doc, default_config());
  ctx.hash = config_hash(ctx.cfg);
  ctx.out = o.out.empty() ? fs::path(ctx.cfg.work_dir) : fs::path(o.out);
  ctx.force = o.force;
  ctx.quiet = o.quiet;
  fs::create_directories(ctx.out);
  return ctx;
}

// ---------------------------------------------------------------------------
// Provenance: every artifact X has X.meta.json naming its stage, the config
// hash and seed that produced it, and its inputs.

fs::path meta_path(const fs::path& artifact) { return artifact.string() + ".meta.json"; }

std::string rel(const Context& ctx, const fs::path& p) {
  return fs::relative(p, ctx.out).generic_string();
}

void write_meta(const Context& ctx, const fs::path& artifact, const std::string& stage,
                const std::vector<fs::path>& inputs, Json extra = Json::object()) {
  Json m;
  m["stage"] = stage;
  m["config_hash"] = ctx.hash_hex();
  m["seed"] = ctx.cfg.seed;
  Json in = Json::array();
  for (const auto& p : inputs) in.push_back(rel(ctx, p));
  m["inputs"] = in;
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text_file(meta_path(artifact).string(), m.dump(2) + "\n");
}

/// Requires an artifact produced by an earlier stage. A config hash
/// mismatch only warns.
Json require_input(const Context& ctx, const fs::path& artifact, const std::string& producer) {
  if (!fs::exists(artifact) || !fs::exists(meta_path(artifact))) {
    fail(ErrorKind::Provenance, "missing " + rel(ctx, artifact) + "; run `mmhar " + producer +
                                    "` first");
  }
  Json m = load_json_file(meta_path(artifact).string());
  if (m.value("stage", "") != producer) {
    fail(ErrorKind::Provenance, rel(ctx, artifact) + " was not produced by `" + producer + "`");
  }
  if (m.value("config_hash", "") != ctx.hash_hex()) {
    std::cerr << "warning: " << rel(ctx, artifact) << " was produced with config "
              << m.value("config_hash", "?") << ", current config is " << ctx.hash_hex() << '\n';
  }
  return m;
}

fs::path raw_dir(const Context& ctx) { return ctx.out / "raw"; }
fs::path ingested_dir(const Context& ctx) { return ctx.out / "ingested"; }
fs::path dataset_path(const Context& ctx) { return ctx.out / "dataset.hard"; }
fs::path features_path(const Context& ctx, const std::string& m) {
  return ctx.out / "features" / (m + ".hari");
}
fs::path augmented_path(const Context& ctx, const std::string& m) {
  return ctx.out / "features" / (m + ".aug.hari");
}
fs::path model_path(const Context& ctx, const std::string& m) {
  return ctx.out / "models" / (m + ".harw");
}
fs::path prediction_path(const Context& ctx, const std::string& m) {
  return ctx.out / "predictions" / (m + ".prob");
}
fs::path reports_dir(const Context& ctx) { return ctx.out / "reports"; }

void check_modality(const std::string& m) {
  if (m != "freq" && m != "och") {
    fail(ErrorKind::Config, "unknown modality '" + m + "' (expected freq|och)");
  }
}

// ---------------------------------------------------------------------------
// Stages

int cmd_config(const Json& doc) {
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int cmd_synth(const Context& ctx) {
  SynthOutput out = generate(synth_config(ctx.cfg));
  const fs::path dir = raw_dir(ctx);
  write_synth(dir.string(), out);
  write_meta(ctx, dir / "manifest.json", "synth", {},
             {{"recordings", out.recordings.size()}});
  ctx.log("wrote " + std::to_string(out.recordings.size()) + " recordings to " + dir.string());
  return 0;
}

struct ManifestEntry {
  int subject = 0;
  fs::path recording;
  fs::path annotations;
};

std::pair<std::vector<std::string>, std::vector<ManifestEntry>> read_manifest(const fs::path& path) {
  Json m = load_json_file(path.string());
  std::vector<std::string> classes;
  std::vector<ManifestEntry> entries;
  try {
    classes = m.at("class_names").get<std::vector<std::string>>();
    for (const auto& r : m.at("recordings")) {
      entries.push_back({r.at("subject").get<int>(),
                         path.parent_path() / r.at("recording").get<std::string>(),
                         path.parent_path() / r.at("annotations").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, "malformed manifest " + path.string() + ": " + e.what());
  }
  return {classes, entries};
}

int cmd_ingest(const Context& ctx, std::string manifest) {
  fs::path src = manifest.empty() ? raw_dir(ctx) / "manifest.json" : fs::path(manifest);
  if (manifest.empty()) require_input(ctx, src, "synth");
  if (!fs::exists(src)) fail(ErrorKind::Provenance, "manifest " + src.string() + " not found");
  auto [classes, entries] = read_manifest(src);
  const ColumnMap map = ColumnMap::preset(ctx.cfg.column_map);

  const fs::path dir = ingested_dir(ctx);
  fs::create_directories(dir);
  Json out_manifest;
  out_manifest["class_names"] = classes;
  out_manifest["recordings"] = Json::array();
  std::size_t dropped = 0, records = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    IngestResult ir = ingest_recording(e.recording.string(), map, e.subject, ctx.cfg.rate_hz);
    if (ir.rate_mismatch) {
      std::cerr << "warning: " << e.recording.string() << " median interval "
                << format_double(ir.median_interval_ms) << " ms does not match "
                << format_double(ctx.cfg.rate_hz) << " Hz\n";
    }
    dropped += ir.dropped_rows;
    records += ir.recording.records.size();
    auto anns = read_annotations(e.annotations.string(), classes);
    std::ostringstream rec, ann;
    write_recording_csv(rec, ir.recording);
    write_annotations_csv(ann, anns, classes);
    const std::string stem = "r" + std::to_string(i);
    write_text_file((dir / (stem + ".csv")).string(), rec.str());
    write_text_file((dir / (stem + ".ann.csv")).string(), ann.str());
    out_manifest["recordings"].push_back(
        {{"subject", e.subject}, {"recording", stem + ".csv"}, {"annotations", stem + ".ann.csv"}});
  }
  const fs::path mpath = dir / "manifest.json";
  write_text_file(mpath.string(), out_manifest.dump(2) + "\n");
  write_meta(ctx, mpath, "ingest", {src}, {{"records", records}, {"dropped_rows", dropped}});
  ctx.log("ingested " + std::to_string(entries.size()) + " recordings, " +
          std::to_string(records) + " records, " + std::to_string(dropped) + " rows dropped");
  return 0;
}

int cmd_sample(const Context& ctx) {
  const fs::path mpath = ingested_dir(ctx) / "manifest.json";
  require_input(ctx, mpath, "ingest");
  auto [classes, entries] = read_manifest(mpath);
  std::vector<LabeledRecording> recs;
  const ColumnMap map = ColumnMap::standard();
  for (const auto& e : entries) {
    LabeledRecording lr;
    lr.recording = ingest_recording(e.recording.string(), map, e.subject, ctx.cfg.rate_hz).recording;
    lr.annotations = read_annotations(e.annotations.string(), classes);
    auto seg = segment(lr.recording, lr.annotations, ctx.cfg.window);
    for (std::size_t s : seg.short_segments) {
      std::cerr << "warning: annotation " << seg.segments[s].annotation_index << " of "
                << e.recording.filename().string() << " is shorter than one window\n";
    }
    recs.push_back(std::move(lr));
  }
  Dataset ds = build_dataset(recs, classes, ctx.cfg.window, ctx.cfg.overlap);
  save_dataset(dataset_path(ctx).string(), ds);
  write_meta(ctx, dataset_path(ctx), "sample", {mpath}, {{"windows", ds.windows.size()}});
  std::cout << dataset_summary(ds).render();
  return 0;
}

Dataset load_checked_dataset(const Context& ctx) {
  require_input(ctx, dataset_path(ctx), "sample");
  return load_dataset(dataset_path(ctx).string());
}

int cmd_transform(const Context& ctx, const std::string& mode, std::size_t previews) {
  check_modality(mode);
  Dataset ds = load_checked_dataset(ctx);
  auto images = transform_dataset(ds, feature_kind_from_string(mode), transform_config(ctx.cfg),
                                  ctx.cfg.threads);
  const fs::path p = features_path(ctx, mode);
  fs::create_directories(p.parent_path());
  save_feature_set(p.string(), images);
  Json dims = Json::array();
  if (!images.empty()) dims = {images[0].height, images[0].width, images[0].depth};
  write_meta(ctx, p, "transform", {dataset_path(ctx)},
             {{"modality", mode}, {"images", images.size()}, {"dims", dims}});
  for (std::size_t i = 0; i < std::min(previews, images.size()); ++i) {
    const fs::path dir = ctx.out / "previews";
    fs::create_directories(dir);
    write_preview((dir / (mode + "_" + images[i].window_id +
                          (images[i].depth == 1 ? ".pgm" : ".ppm")))
                      .string(),
                  images[i]);
  }
  if (!images.empty()) {
    ctx.log("wrote " + std::to_string(images.size()) + " " + mode + " images of " +
            std::to_string(images[0].height) + "x" + std::to_string(images[0].width) + "x" +
            std::to_string(images[0].depth));
  }
  return 0;
}

std::vector<FeatureImage> load_checked_features(const Context& ctx, const std::string& m) {
  require_input(ctx, features_path(ctx, m), "transform");
  return load_feature_set(features_path(ctx, m).string());
}

int cmd_augment(const Context& ctx, const std::string& m) {
  check_modality(m);
  Dataset ds = load_checked_dataset(ctx);
  auto originals = load_checked_features(ctx, m);
  if (originals.size() != ds.windows.size()) {
    fail(ErrorKind::Provenance, "feature set " + m + " does not match the dataset");
  }
  std::vector<std::size_t> all(ds.windows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  TrainingPool pool = build_training_pool(ds, originals, all, feature_kind_from_string(m), ctx.cfg);
  std::vector<FeatureImage> images;
  images.reserve(pool.images.size());
  for (const FeatureImage* img : pool.images) images.push_back(*img);
  const fs::path p = augmented_path(ctx, m);
  save_feature_set(p.string(), images);
  write_meta(ctx, p, "augment", {dataset_path(ctx), features_path(ctx, m)},
             {{"modality", m},
              {"mode", std::string(to_string(ctx.cfg.augment))},
              {"images", images.size()},
              {"multiplier", augment_multiplier(ctx.cfg.augment, ctx.cfg.ka, ctx.cfg.ja)}});
  ctx.log("augmented " + std::to_string(originals.size()) + " originals to " +
          std::to_string(images.size()) + " images (" + std::string(to_string(ctx.cfg.augment)) +
          ")");
  return 0;
}

Split hh_split(const Context& ctx, const Dataset& ds) {
  return split_half_half(ds, stage_seed(ctx.cfg, "split"), ctx.cfg.stratified);
}

int cmd_train(const Context& ctx, const std::string& m) {
  check_modality(m);
  Dataset ds = load_checked_dataset(ctx);
  const Split split = hh_split(ctx, ds);
  const auto train = fold_training_indices(split, ctx.cfg, 0);
  std::set<std::string> keep;
  for (std::size_t i : train) keep.insert(ds.windows[i].id);

  std::vector<FeatureImage> images;
  fs::path source;
  if (ctx.cfg.augment == AugmentMode::None) {
    source = features_path(ctx, m);
    images = load_checked_features(ctx, m);
  } else {
    source = augmented_path(ctx, m);
    Json meta = require_input(ctx, source, "augment");
    if (meta.value("mode", "") != to_string(ctx.cfg.augment)) {
      fail(ErrorKind::Provenance, "augmented set was built with mode " + meta.value("mode", "?") +
                                      "; rerun `mmhar augment`");
    }
    images = load_feature_set(source.string());
  }
  std::vector<const FeatureImage*> pool;
  for (const auto& img : images)
    if (keep.contains(img.window_id)) pool.push_back(&img);

  ctx.log("training " + m + " on " + std::to_string(pool.size()) + " images");
  TrainedModel tm = train_model(pool, ds.num_classes(), ctx.cfg.model(m),
                                derive_seed(stage_seed(ctx.cfg, "train/" + m), 0), ctx.cfg.threads,
                                [&](const nn::EpochStats& st) {
                                  ctx.log("  epoch " + std::to_string(st.epoch + 1) + " loss " +
                                          format_double(st.mean_loss) + " acc " +
                                          format_double(st.accuracy));
                                });
  const fs::path p = model_path(ctx, m);
  fs::create_directories(p.parent_path());
  Json sidecar = Json::parse(nn::specs_to_json(tm.net.input_dims(), tm.net.specs()));
  sidecar["modality"] = m;
  sidecar["class_names"] = ds.class_names;
  sidecar["config_hash"] = ctx.hash_hex();
  save_model(p.string(), tm.net, sidecar.dump(2) + "\n");
  Json history = Json::array();
  for (const auto& st : tm.history) {
    history.push_back({{"epoch", st.epoch}, {"loss", st.mean_loss}, {"accuracy", st.accuracy}});
  }
  write_meta(ctx, p, "train", {dataset_path(ctx), source},
             {{"modality", m}, {"images", pool.size()}, {"history", history}});
  return 0;
}

int cmd_predict(const Context& ctx, const std::string& m) {
  check_modality(m);
  Dataset ds = load_checked_dataset(ctx);
  auto images = load_checked_features(ctx, m);
  require_input(ctx, model_path(ctx, m), "train");
  nn::Network net =
      nn::network_from_json(read_text_file(model_path(ctx, m).string() + ".json"));
  nn::load_model(model_path(ctx, m).string(), net);

  const Split split = hh_split(ctx, ds);
  std::vector<const FeatureImage*> test;
  for (std::size_t i : split.test) test.push_back(&images[i]);
  ProbFile pf;
  pf.tags["config_hash"] = ctx.hash_hex();
  pf.tags["modality"] = m;
  pf.tags["split"] = "hh-test";
  for (std::size_t k = 0; k < test.size(); ++k) pf.ids.push_back(test[k]->window_id);
  pf.probs = predict_images(net, test, ctx.cfg.threads);
  const fs::path p = prediction_path(ctx, m);
  fs::create_directories(p.parent_path());
  save_prob_file(p.string(), pf);
  write_meta(ctx, p, "predict", {model_path(ctx, m), features_path(ctx, m)},
             {{"modality", m}, {"samples", pf.ids.size()}});
  ctx.log("wrote " + std::to_string(pf.ids.size()) + " predictions to " + p.string());
  return 0;
}

int cmd_fuse(const Context& ctx, std::vector<std::string> inputs) {
  if (inputs.empty()) {
    for (const char* m : {"freq", "och"}) {
      if (fs::exists(prediction_path(ctx, m))) {
        require_input(ctx, prediction_path(ctx, m), "predict");
        inputs.push_back(prediction_path(ctx, m).string());
      }
    }
    for (const auto& e : ctx.cfg.external) inputs.push_back(e.path);
  }
  if (inputs.empty()) fail(ErrorKind::Provenance, "no prediction files; run `mmhar predict` first");

  std::vector<ProbFile> files;
  for (const auto& in : inputs) files.push_back(load_prob_file(in));
  const ProbFile& first = files.front();
  std::vector<std::map<std::string, std::size_t>> index(files.size());
  for (std::size_t f = 0; f < files.size(); ++f) {
    for (std::size_t i = 0; i < files[f].ids.size(); ++i) index[f][files[f].ids[i]] = i;
    auto h = files[f].tags.find("config_hash");
    if (h != files[f].tags.end() && h->second != ctx.hash_hex()) {
      std::cerr << "warning: " << inputs[f] << " carries config hash " << h->second << '\n';
    }
  }

  std::ostringstream os;
  os << "# config_hash=" << ctx.hash_hex() << '\n';
  os << "# method=" << to_string(ctx.cfg.fusion) << '\n';
  os << "# k=" << ctx.cfg.fusion_k << '\n';
  std::size_t ties = 0;
  for (std::size_t i = 0; i < first.ids.size(); ++i) {
    FusionInput fi;
    for (std::size_t f = 0; f < files.size(); ++f) {
      auto it = index[f].find(first.ids[i]);
      if (it == index[f].end()) {
        fail(ErrorKind::Data, inputs[f] + " has no prediction for " + first.ids[i]);
      }
      fi.dists.push_back(files[f].probs[it->second]);
    }
    auto scores = fuse(fi, ctx.cfg.fusion, ctx.cfg.fusion_k);
    Decision d = decide(scores);
    ties += d.tie ? 1 : 0;
    os << first.ids[i] << '\t' << d.label << '\t' << (d.tie ? 1 : 0);
    for (double s : scores) os << '\t' << format_double(s);
    os << '\n';
  }
  const fs::path p = ctx.out / "predictions" / "fused.tsv";
  fs::create_directories(p.parent_path());
  write_text_file(p.string(), os.str());
  write_meta(ctx, p, "fuse", {}, {{"method", std::string(to_string(ctx.cfg.fusion))},
                                  {"inputs", inputs.size()},
                                  {"samples", first.ids.size()},
                                  {"ties", ties}});
  ctx.log("fused " + std::to_string(inputs.size()) + " modalities over " +
          std::to_string(first.ids.size()) + " samples (" + std::to_string(ties) + " ties)");
  return 0;
}

int cmd_eval(Context ctx, bool grid) {
  Dataset ds = load_checked_dataset(ctx);
  FeatureSets features;
  std::vector<std::string> available;
  std::vector<fs::path> inputs{dataset_path(ctx)};
  for (const auto& m : ctx.cfg.modalities) {
    if (!fs::exists(features_path(ctx, m))) {
      std::cerr << "note: no " << m << " features; run `mmhar transform --mode " << m
                << "` to include it\n";
      continue;
    }
    features[m] = load_checked_features(ctx, m);
    available.push_back(m);
    inputs.push_back(features_path(ctx, m));
  }
  if (available.empty() && ctx.cfg.external.empty()) {
    fail(ErrorKind::Provenance, "no feature sets found; run `mmhar transform` first");
  }
  ctx.cfg.modalities = available;
  const Protocol protocol = ctx.cfg.protocol;
  ProtocolResult pr = run_protocol(ds, ctx.cfg, protocol, grid,
                                   [&](const std::string& m) { ctx.log(m); }, &features);

  const fs::path dir = reports_dir(ctx);
  fs::create_directories(dir);
  const std::string stem = "eval_" + std::string(to_string(protocol));
  Json j = protocol_to_json(pr);
  j["config_hash"] = ctx.hash_hex();
  j["seed"] = ctx.cfg.seed;
  j["grid"] = grid;
  write_text_file((dir / (stem + ".json")).string(), j.dump(2) + "\n");
  std::vector<ProtocolResult> one{pr};
  const std::string table = render_grid(one);
  write_text_file((dir / (stem + ".txt")).string(),
                  "# config_hash=" + ctx.hash_hex() + "\n" + table);
  for (const auto& [m, pf] : pr.predictions) {
    save_prob_file((dir / (stem + "_" + m + ".prob")).string(), pf);
  }
  write_meta(ctx, dir / (stem + ".json"), "eval", inputs,
             {{"protocol", std::string(to_string(protocol))}, {"grid", grid}});
  std::cout << table;
  return 0;
}

int cmd_report(const Context& ctx, std::size_t previews) {
  const fs::path dir = reports_dir(ctx);
  std::vector<fs::path> files;
  if (fs::exists(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (name.starts_with("eval_") && e.path().extension() == ".json" &&
          name.find(".meta.") == std::string::npos) {
        files.push_back(e.path());
      }
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorKind::Provenance, "no evaluation reports; run `mmhar eval` first");

  std::set<std::string> hashes;
  Json combined;
  combined["reports"] = Json::array();
  std::vector<ProtocolResult> results;
  for (const auto& f : files) {
    Json j = load_json_file(f.string());
    hashes.insert(j.value("config_hash", "?"));
    ProtocolResult pr;
    pr.protocol = protocol_from_string(j.at("protocol").get<std::string>());
    pr.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& r : j.at("rows")) {
      SubsetResult row;
      row.modalities = r.at("modalities").get<std::vector<std::string>>();
      const auto& mj = r.at("metrics");
      row.report.accuracy = mj.at("accuracy").get<double>();
      row.report.macro_precision = mj.at("macro_precision").get<double>();
      row.report.macro_recall = mj.at("macro_recall").get<double>();
      row.report.macro_f1 = mj.at("macro_f1").get<double>();
      pr.rows.push_back(std::move(row));
    }
    results.push_back(std::move(pr));
    combined["reports"].push_back(j);
  }
  if (hashes.size() > 1 && !ctx.force) {
    std::string list;
    for (const auto& h : hashes) list += " " + h;
    fail(ErrorKind::Provenance, "reports come from different configs:" + list +
                                    " (use --force to combine them anyway)");
  }
  combined["config_hashes"] = std::vector<std::string>(hashes.begin(), hashes.end());
  const std::string table = render_grid(results);
  std::string header;
  for (const auto& h : hashes) header += "# config_hash=" + h + "\n";
  write_text_file((dir / "report.txt").string(), header + table);
  write_text_file((dir / "report.json").string(), combined.dump(2) + "\n");
  write_meta(ctx, dir / "report.json", "report", files);

  for (const char* m : {"freq", "och"}) {
    const fs::path fp = features_path(ctx, m);
    if (!fs::exists(fp) || previews == 0) continue;
    auto images = load_feature_set(fp.string());
    const fs::path pdir = ctx.out / "previews";
    fs::create_directories(pdir);
    std::set<int> seen;
    for (const auto& img : images) {
      if (seen.size() >= previews) break;
      if (!seen.insert(img.label).second) continue;
      write_preview((pdir / (std::string(m) + "_class" + std::to_string(img.label) +
                             (img.depth == 1 ? ".pgm" : ".ppm")))
                        .string(),
                    img);
    }
  }
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal activity recognition pipeline"};
  app.require_subcommand(1);
  CommonOptions common;
  TrainOptions train_opts;

  auto* c_config = app.add_subcommand("config", "Print the effective configuration");
  auto* c_synth = app.add_subcommand("synth", "Generate synthetic recordings");
  auto* c_ingest = app.add_subcommand("ingest", "Parse raw recordings into canonical CSV");
  auto* c_sample = app.add_subcommand("sample", "Segment and window recordings");
  auto* c_transform = app.add_subcommand("transform", "Compute feature images");
  auto* c_augment = app.add_subcommand("augment", "Build the augmented image pool");
  auto* c_train = app.add_subcommand("train", "Train one modality on the half-half split");
  auto* c_predict = app.add_subcommand("predict", "Predict the half-half test split");
  auto* c_fuse = app.add_subcommand("fuse", "Fuse modality predictions");
  auto* c_eval = app.add_subcommand("eval", "Run an evaluation protocol");
  auto* c_report = app.add_subcommand("report", "Render reports and previews");
  for (auto* c : {c_config, c_synth, c_ingest, c_sample, c_transform, c_augment, c_train,
                  c_predict, c_fuse, c_eval, c_report}) {
    add_common(c, common);
  }

  std::string manifest;
  c_ingest->add_option("--manifest", manifest, "Manifest of recordings and annotation files");

  std::string mode = "freq";
  std::size_t transform_previews = 0;
  c_transform->add_option("--mode", mode, "freq or och")->check(CLI::IsMember({"freq", "och"}));
  c_transform->add_option("--previews", transform_previews, "Preview images to write");

  std::string modality = "freq";
  for (auto* c : {c_augment, c_train, c_predict}) {
    c->add_option("--modality", modality, "freq or och")->check(CLI::IsMember({"freq", "och"}));
  }
  add_train_options(c_train, train_opts);
  add_train_options(c_eval, train_opts);

  std::optional<std::string> method;
  std::optional<std::size_t> k;
  std::vector<std::string> fuse_inputs;
  for (auto* c : {c_fuse, c_eval}) {
    c->add_option("--method", method, "max, avg, wmax or wavg")
        ->check(CLI::IsMember({"max", "avg", "wmax", "wavg"}));
    c->add_option("--k", k, "Top-K classes for informativity (0 = all)");
  }
  c_fuse->add_option("--inputs", fuse_inputs, "Probability files (default: predictions/*)");

  std::optional<std::string> protocol;
  bool grid = false;
  c_eval->add_option("--protocol", protocol, "hh or loo")->check(CLI::IsMember({"hh", "loo"}));
  c_eval->add_flag("--grid", grid, "Evaluate every modality subset");

  std::size_t report_previews = 6;
  c_report->add_option("--previews", report_previews, "Preview images per modality");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code_for(ErrorKind::Config);
  }

  try {
    Json doc = config_document(common);
    if (method) apply_override(doc, "fusion.method=" + *method);
    if (k) apply_override(doc, "fusion.k=" + std::to_string(*k));
    if (protocol) apply_override(doc, "evaluation.protocol=" + *protocol);
    if (c_train->parsed()) apply_train_options(doc, train_opts, {modality});
    if (c_eval->parsed()) apply_train_options(doc, train_opts, {"freq", "och"});
    if (c_config->parsed()) {
      config_from_json(doc);
      return cmd_config(doc);
    }
    Context ctx = make_context(doc, common);
    if (c_synth->parsed()) return cmd_synth(ctx);
    if (c_ingest->parsed()) return cmd_ingest(ctx, manifest);
    if (c_sample->parsed()) return cmd_sample(ctx);
    if (c_transform->parsed()) return cmd_transform(ctx, mode, transform_previews);
    if (c_augment->parsed()) return cmd_augment(ctx, modality);
    if (c_train->parsed()) return cmd_train(ctx, modality);
    if (c_predict->parsed()) return cmd_predict(ctx, modality);
    if (c_fuse->parsed()) return cmd_fuse(ctx, fuse_inputs);
    if (c_eval->parsed()) return cmd_eval(ctx, grid);
    if (c_report->parsed()) return cmd_report(ctx, report_previews);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(ErrorKind::Config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
