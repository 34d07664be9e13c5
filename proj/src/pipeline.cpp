#include "mmhar/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mmhar/common.hpp"
#include "mmhar/parallel.hpp"

namespace mmhar {

Protocol protocol_from_string(std::string_view s) {
  if (s == "hh") return Protocol::HalfHalf;
  if (s == "loo") return Protocol::LeaveOneOut;
  fail(ErrorKind::Config, "unknown protocol '" + std::string(s) + "' (expected hh|loo)");
}

std::string_view to_string(Protocol p) { return p == Protocol::HalfHalf ? "hh" : "loo"; }

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
  synth.validate();
  ColumnMap::preset(column_map);
  if (!(rate_hz > 0.0)) fail(ErrorKind::Config, "ingestion.rate_hz must be positive");
  if (window < 4) fail(ErrorKind::Config, "sampling.window must be at least 4");
  window_stride(window, overlap);
  if (plan != "euler" && plan != "reference42") {
    fail(ErrorKind::Config, "expansion.plan must be euler or reference42");
  }
  if (och_size < 4) fail(ErrorKind::Config, "transforms.och_size must be at least 4");
  if (ka.noise_frac < 0.0) fail(ErrorKind::Config, "augmentation.ka.noise must be non-negative");
  if (!(ja.scale_range[0] > 0.0) || ja.scale_range[0] > ja.scale_range[1] ||
      ja.rotate_deg_range[0] > ja.rotate_deg_range[1] || ja.translate_frac < 0.0) {
    fail(ErrorKind::Config, "augmentation.ja ranges are invalid");
  }
  for (const auto& [name, mc] : models) {
    mc.train.validate();
    if (mc.arch.conv1_filters == 0 || mc.arch.conv2_filters == 0 || mc.arch.dense_units == 0 ||
        mc.arch.kernel == 0) {
      fail(ErrorKind::Config, "models." + name + " architecture sizes must be positive");
    }
  }
  if (fusion_k == 1) fail(ErrorKind::Config, "fusion.k must be 0 (all classes) or at least 2");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    fail(ErrorKind::Config, "evaluation.train_fraction must be in (0, 1]");
  }
  if (modalities.empty() && external.empty()) {
    fail(ErrorKind::Config, "evaluation.modalities is empty and no external modality is given");
  }
  for (const auto& m : modalities) {
    if (m != "freq" && m != "och") {
      fail(ErrorKind::Config, "unknown modality '" + m + "' (expected freq|och)");
    }
  }
  for (const auto& e : external) {
    if (e.name.empty() || e.name == "freq" || e.name == "och") {
      fail(ErrorKind::Config, "external modality names must be non-empty and distinct from "
                              "freq/och");
    }
    if (e.path.empty()) fail(ErrorKind::Config, "external modality '" + e.name + "' has no path");
  }
}

const ModelConfig& PipelineConfig::model(std::string_view modality) const {
  auto it = models.find(std::string(modality));
  if (it == models.end()) {
    fail(ErrorKind::Config, "no model section for modality '" + std::string(modality) + "'");
  }
  return it->second;
}

PipelineConfig default_config() { return PipelineConfig{}; }

PipelineConfig desk_config() {
  PipelineConfig cfg;
  cfg.och_size = 32;
  for (auto& [name, mc] : cfg.models) {
    mc.arch.conv1_filters = 8;
    mc.arch.conv2_filters = 16;
    mc.arch.dense_units = 64;
    mc.train.epochs = 4;
    mc.train.batch_size = 32;
    mc.train.lr = 0.0005;
  }
  return cfg;
}

PipelineConfig preset_config(std::string_view name) {
  if (name == "default") return default_config();
  if (name == "desk") return desk_config();
  fail(ErrorKind::Config, "unknown preset '" + std::string(name) + "' (expected default|desk)");
}

namespace {

Json vec_json(Vec3 v) { return Json::array({v.x, v.y, v.z}); }

Vec3 json_vec(const Json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) fail(ErrorKind::Config, key + " must be a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Json model_json(const ModelConfig& mc) {
  Json j;
  j["train"] = {{"lr", mc.train.lr},
                {"momentum", mc.train.momentum},
                {"l2", mc.train.l2_lambda},
                {"batch", mc.train.batch_size},
                {"epochs", mc.train.epochs}};
  j["arch"] = {{"conv1", mc.arch.conv1_filters},
               {"conv2", mc.arch.conv2_filters},
               {"kernel", mc.arch.kernel},
               {"dense", mc.arch.dense_units},
               {"dropout", mc.arch.dropout_rate}};
  return j;
}

ModelConfig json_model(const Json& j) {
  ModelConfig mc;
  const auto& t = j.at("train");
  mc.train.lr = t.at("lr").get<double>();
  mc.train.momentum = t.at("momentum").get<double>();
  mc.train.l2_lambda = t.at("l2").get<double>();
  mc.train.batch_size = t.at("batch").get<std::size_t>();
  mc.train.epochs = t.at("epochs").get<std::size_t>();
  const auto& a = j.at("arch");
  mc.arch.conv1_filters = a.at("conv1").get<std::size_t>();
  mc.arch.conv2_filters = a.at("conv2").get<std::size_t>();
  mc.arch.kernel = a.at("kernel").get<std::size_t>();
  mc.arch.dense_units = a.at("dense").get<std::size_t>();
  mc.arch.dropout_rate = a.at("dropout").get<double>();
  mc.train.dropout_rate = mc.arch.dropout_rate;
  return mc;
}

bool compatible(const Json& base, const Json& patch) {
  if (base.is_number_float()) return patch.is_number();
  if (base.is_number_unsigned() || base.is_number_integer()) {
    if (patch.is_number_unsigned()) return true;
    if (patch.is_number_integer()) return base.is_number_integer() || patch.get<long long>() >= 0;
    return false;
  }
  return base.type() == patch.type();
}

void merge_strict(Json& base, const Json& patch, const std::string& path) {
  if (!patch.is_object()) fail(ErrorKind::Config, "config section '" + path + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) fail(ErrorKind::Config, "unknown config key '" + full + "'");
    Json& slot = base[key];
    if (slot.is_object()) {
      merge_strict(slot, value, full);
    } else if (slot.is_array() || compatible(slot, value)) {
      if (slot.is_array() && !value.is_array()) {
        fail(ErrorKind::Config, "config key '" + full + "' must be an array");
      }
      slot = value;
    } else {
      fail(ErrorKind::Config, "config key '" + full + "' has the wrong type");
    }
  }
}

PipelineConfig parse_config(const Json& j) {
  PipelineConfig cfg;
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.threads = j.at("threads").get<std::size_t>();

  const auto& s = j.at("synth");
  cfg.synth.subjects = s.at("subjects").get<std::size_t>();
  cfg.synth.windows_per_class = s.at("windows_per_class").get<std::size_t>();
  cfg.synth.noise = s.at("noise").get<double>();
  cfg.synth.yaw_offset = s.at("yaw_offset").get<double>();
  cfg.synth.tilt_offset = s.at("tilt_offset").get<double>();
  cfg.synth.subject_jitter = s.at("subject_jitter").get<double>();

  cfg.column_map = j.at("ingestion").at("column_map").get<std::string>();
  cfg.rate_hz = j.at("ingestion").at("rate_hz").get<double>();
  cfg.window = j.at("sampling").at("window").get<std::size_t>();
  cfg.overlap = j.at("sampling").at("overlap").get<double>();
  cfg.plan = j.at("expansion").at("plan").get<std::string>();
  cfg.och_size = j.at("transforms").at("och_size").get<std::size_t>();

  const auto& au = j.at("augmentation");
  cfg.augment = augment_mode_from_string(au.at("mode").get<std::string>());
  const auto& ka = au.at("ka");
  cfg.ka.rotation_angles = ka.at("angles").get<std::vector<double>>();
  cfg.ka.rotation_axis = json_vec(ka.at("axis"), "augmentation.ka.axis");
  cfg.ka.mirror_planes.clear();
  for (const auto& p : ka.at("planes")) {
    cfg.ka.mirror_planes.push_back(json_vec(p, "augmentation.ka.planes"));
  }
  cfg.ka.noise_frac = ka.at("noise").get<double>();
  const auto& ja = au.at("ja");
  cfg.ja.translate_frac = ja.at("translate").get<double>();
  auto sr = ja.at("scale").get<std::vector<double>>();
  auto rr = ja.at("rotate_deg").get<std::vector<double>>();
  if (sr.size() != 2 || rr.size() != 2) {
    fail(ErrorKind::Config, "augmentation.ja scale and rotate_deg must be [lo, hi]");
  }
  cfg.ja.scale_range = {sr[0], sr[1]};
  cfg.ja.rotate_deg_range = {rr[0], rr[1]};
  cfg.ja.per_original = ja.at("per_original").get<std::size_t>();

  cfg.models.clear();
  for (const auto& [name, mj] : j.at("models").items()) cfg.models[name] = json_model(mj);

  const auto& f = j.at("fusion");
  cfg.fusion = fusion_method_from_string(f.at("method").get<std::string>());
  cfg.fusion_k = f.at("k").get<std::size_t>();
  for (const auto& e : f.at("external")) {
    if (!e.is_object() || !e.contains("name") || !e.contains("path")) {
      fail(ErrorKind::Config, "fusion.external entries need name and path");
    }
    cfg.external.push_back({e.at("name").get<std::string>(), e.at("path").get<std::string>()});
  }

  const auto& ev = j.at("evaluation");
  cfg.protocol = protocol_from_string(ev.at("protocol").get<std::string>());
  cfg.stratified = ev.at("stratified").get<bool>();
  cfg.train_fraction = ev.at("train_fraction").get<double>();
  cfg.modalities = ev.at("modalities").get<std::vector<std::string>>();

  cfg.work_dir = j.at("paths").at("work").get<std::string>();
  return cfg;
}

}  // namespace

Json config_to_json(const PipelineConfig& cfg) {
  Json j;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["synth"] = {{"subjects", cfg.synth.subjects},
                {"windows_per_class", cfg.synth.windows_per_class},
                {"noise", cfg.synth.noise},
                {"yaw_offset", cfg.synth.yaw_offset},
                {"tilt_offset", cfg.synth.tilt_offset},
                {"subject_jitter", cfg.synth.subject_jitter}};
  j["ingestion"] = {{"column_map", cfg.column_map}, {"rate_hz", cfg.rate_hz}};
  j["sampling"] = {{"window", cfg.window}, {"overlap", cfg.overlap}};
  j["expansion"] = {{"plan", cfg.plan}};
  j["transforms"] = {{"och_size", cfg.och_size}};
  Json planes = Json::array();
  for (const auto& p : cfg.ka.mirror_planes) planes.push_back(vec_json(p));
  j["augmentation"] = {
      {"mode", std::string(to_string(cfg.augment))},
      {"ka",
       {{"angles", cfg.ka.rotation_angles},
        {"axis", vec_json(cfg.ka.rotation_axis)},
        {"planes", planes},
        {"noise", cfg.ka.noise_frac}}},
      {"ja",
       {{"translate", cfg.ja.translate_frac},
        {"scale", {cfg.ja.scale_range[0], cfg.ja.scale_range[1]}},
        {"rotate_deg", {cfg.ja.rotate_deg_range[0], cfg.ja.rotate_deg_range[1]}},
        {"per_original", cfg.ja.per_original}}}};
  j["models"] = Json::object();
  for (const auto& [name, mc] : cfg.models) j["models"][name] = model_json(mc);
  Json ext = Json::array();
  for (const auto& e : cfg.external) ext.push_back({{"name", e.name}, {"path", e.path}});
  j["fusion"] = {{"method", std::string(to_string(cfg.fusion))}, {"k", cfg.fusion_k},
                 {"external", ext}};
  j["evaluation"] = {{"protocol", std::string(to_string(cfg.protocol))},
                     {"stratified", cfg.stratified},
                     {"train_fraction", cfg.train_fraction},
                     {"modalities", cfg.modalities}};
  j["paths"] = {{"work", cfg.work_dir}};
  return j;
}

PipelineConfig config_from_json(const Json& patch, const PipelineConfig& base) {
  Json doc = config_to_json(base);
  merge_strict(doc, patch, "");
  PipelineConfig cfg;
  try {
    cfg = parse_config(doc);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("invalid config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void apply_override(Json& doc, std::string_view assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    fail(ErrorKind::Config, "override '" + std::string(assignment) + "' is not key=value");
  }
  std::string key(assignment.substr(0, eq));
  std::string text(assignment.substr(eq + 1));
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json patch = value;
  std::vector<std::string> parts;
  std::stringstream ks(key);
  for (std::string part; std::getline(ks, part, '.');) parts.push_back(part);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    Json wrapped;
    wrapped[*it] = std::move(patch);
    patch = std::move(wrapped);
  }
  merge_strict(doc, patch, "");
}

std::uint64_t config_hash(const PipelineConfig& cfg) {
  Json j = config_to_json(cfg);
  j.erase("threads");
  j.erase("paths");
  return fnv1a(j.dump());
}

std::uint64_t stage_seed(const PipelineConfig& cfg, std::string_view stage) {
  return derive_seed(cfg.seed, stage);
}

// ---------------------------------------------------------------------------
// Stages

Dataset build_dataset(std::span<const LabeledRecording> recs,
                      std::vector<std::string> class_names, std::size_t window, double overlap) {
  Dataset ds;
  ds.class_names = std::move(class_names);
  for (const auto& lr : recs) {
    auto seg = segment(lr.recording, lr.annotations, window);
    for (const auto& s : seg.segments) {
      auto ws = sliding_windows(s.records, window, overlap, lr.recording.subject, s.label);
      for (auto& w : ws) {
        char id[16];
        std::snprintf(id, sizeof id, "w%06zu", ds.windows.size());
        w.id = id;
        ds.windows.push_back(std::move(w));
      }
    }
    if (std::find(ds.subjects.begin(), ds.subjects.end(), lr.recording.subject) ==
        ds.subjects.end()) {
      ds.subjects.push_back(lr.recording.subject);
    }
  }
  std::sort(ds.subjects.begin(), ds.subjects.end());
  ds.validate();
  return ds;
}

Dataset dataset_from_synth(const SynthOutput& synth, const PipelineConfig& cfg) {
  std::vector<LabeledRecording> recs;
  recs.reserve(synth.recordings.size());
  for (const auto& sr : synth.recordings) recs.push_back({sr.recording, sr.annotations});
  return build_dataset(recs, synth.class_names, cfg.window, cfg.overlap);
}

SynthConfig synth_config(const PipelineConfig& cfg) {
  SynthConfig sc = cfg.synth;
  sc.window = cfg.window;
  sc.overlap = cfg.overlap;
  sc.rate_hz = cfg.rate_hz;
  sc.seed = stage_seed(cfg, "synth");
  return sc;
}

TransformConfig transform_config(const PipelineConfig& cfg) {
  TransformConfig tc;
  tc.plan = cfg.plan == "reference42" ? reference_plan_42() : build_expansion_plan(kNumChannels);
  tc.och_size = cfg.och_size;
  return tc;
}

std::vector<FeatureImage> transform_dataset(const Dataset& ds, FeatureKind kind,
                                            const TransformConfig& tc, std::size_t threads) {
  std::vector<FeatureImage> out(ds.windows.size());
  parallel_for(ds.windows.size(), threads, [&](std::size_t i, std::size_t) {
    out[i] = transform_window(ds.windows[i], kind, tc);
  });
  return out;
}

TrainingPool build_training_pool(const Dataset& ds, std::span<const FeatureImage> originals,
                                 std::span<const std::size_t> indices, FeatureKind kind,
                                 const PipelineConfig& cfg) {
  const bool use_ka = cfg.augment == AugmentMode::KA || cfg.augment == AugmentMode::JAKA;
  const bool use_ja = cfg.augment == AugmentMode::JA || cfg.augment == AugmentMode::JAKA;
  const TransformConfig tc = transform_config(cfg);
  KaConfig ka = cfg.ka;
  ka.seed = stage_seed(cfg, "augment/ka");
  JaConfig ja = cfg.ja;
  ja.seed = stage_seed(cfg, "augment/ja");
  WindowTransform transform = [&](const ImuWindow& w) { return transform_window(w, kind, tc); };

  std::vector<std::vector<FeatureImage>> ka_out(use_ka ? indices.size() : 0);
  std::vector<std::vector<FeatureImage>> ja_out(use_ja ? indices.size() : 0);
  parallel_for(indices.size(), cfg.threads, [&](std::size_t i, std::size_t) {
    if (use_ka) ka_out[i] = ka_images(ds.windows[indices[i]], ka, transform);
    if (use_ja) ja_out[i] = ja_images(originals[indices[i]], ja);
  });

  TrainingPool pool;
  for (auto& v : ka_out)
    for (auto& img : v) pool.extras.push_back(std::move(img));
  for (auto& v : ja_out)
    for (auto& img : v) pool.extras.push_back(std::move(img));
  pool.images.reserve(indices.size() + pool.extras.size());
  for (std::size_t i : indices) pool.images.push_back(&originals[i]);
  for (const auto& img : pool.extras) pool.images.push_back(&img);
  return pool;
}

nn::Network build_network(const FeatureImage& like, std::size_t classes, const ModelConfig& mc) {
  return nn::Network({like.height, like.width, like.depth},
                     nn::build_m1_architecture(like.height, like.width, like.depth, classes,
                                               mc.arch));
}

TrainedModel train_model(std::span<const FeatureImage* const> pool, std::size_t classes,
                         const ModelConfig& mc, std::uint64_t seed, std::size_t threads,
                         const std::function<void(const nn::EpochStats&)>& on_epoch) {
  if (pool.empty()) fail(ErrorKind::Data, "cannot train on an empty image pool");
  TrainedModel tm{build_network(*pool.front(), classes, mc), {}};
  tm.net.init_params(derive_seed(seed, "init"));
  nn::TrainConfig tc = mc.train;
  tc.seed = derive_seed(seed, "sgd");
  tc.threads = threads;
  std::vector<nn::Sample> samples;
  samples.reserve(pool.size());
  for (const FeatureImage* img : pool) {
    if (img->height != pool.front()->height || img->width != pool.front()->width ||
        img->depth != pool.front()->depth) {
      fail(ErrorKind::Data, "image " + img->provenance + " differs in shape from the pool");
    }
    samples.push_back({img->pixels, img->label});
  }
  nn::Trainer trainer(tm.net, tc);
  tm.history = trainer.fit(samples, on_epoch);
  return tm;
}

std::vector<std::vector<double>> predict_images(const nn::Network& net,
                                                std::span<const FeatureImage* const> images,
                                                std::size_t threads) {
  std::vector<std::span<const float>> inputs;
  inputs.reserve(images.size());
  for (const FeatureImage* img : images) inputs.emplace_back(img->pixels);
  return nn::predict_batch(net, inputs, threads);
}

std::vector<std::size_t> subsample(std::span<const std::size_t> indices, double fraction,
                                   std::uint64_t seed) {
  if (fraction >= 1.0) return {indices.begin(), indices.end()};
  std::size_t keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(indices.size())));
  keep = std::clamp<std::size_t>(keep, 1, indices.size());
  std::vector<std::size_t> pos(indices.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(pos);
  pos.resize(keep);
  std::sort(pos.begin(), pos.end());
  std::vector<std::size_t> out;
  out.reserve(keep);
  for (std::size_t p : pos) out.push_back(indices[p]);
  return out;
}

// ---------------------------------------------------------------------------
// Protocols

std::string subset_name(const std::vector<std::string>& modalities) {
  std::string s;
  for (const auto& m : modalities) s += (s.empty() ? "" : "+") + m;
  return s;
}

namespace {

std::vector<std::vector<std::size_t>> subsets_by_size(std::size_t n) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t k = 1; k <= n; ++k) {
    std::vector<std::size_t> comb(k);
    std::iota(comb.begin(), comb.end(), std::size_t{0});
    while (true) {
      out.push_back(comb);
      std::size_t i = k;
      while (i > 0 && comb[i - 1] == n - k + i - 1) --i;
      if (i == 0) break;
      ++comb[i - 1];
      for (std::size_t j = i; j < k; ++j) comb[j] = comb[j - 1] + 1;
    }
  }
  return out;
}

}  // namespace

std::vector<std::size_t> fold_training_indices(const Split& split, const PipelineConfig& cfg,
                                               std::size_t fold) {
  auto train =
      subsample(split.train, cfg.train_fraction, derive_seed(stage_seed(cfg, "subsample"), fold));
  std::sort(train.begin(), train.end());
  return train;
}

ProtocolResult run_protocol(const Dataset& ds, const PipelineConfig& cfg, Protocol protocol,
                            bool grid, const LogFn& log, const FeatureSets* features) {
  cfg.validate();
  ds.validate();
  const std::size_t C = ds.num_classes();
  if (cfg.fusion_k > C) fail(ErrorKind::Config, "fusion.k exceeds the number of classes");
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };

  ProtocolResult pr;
  pr.protocol = protocol;
  pr.class_names = ds.class_names;
  pr.modalities = cfg.modalities;
  for (const auto& e : cfg.external) pr.modalities.push_back(e.name);

  std::vector<Split> splits;
  if (protocol == Protocol::HalfHalf) {
    splits.push_back(split_half_half(ds, stage_seed(cfg, "split"), cfg.stratified));
  } else {
    splits = split_leave_one_out(ds);
  }
  for (const auto& s : splits) {
    if (s.test.empty()) fail(ErrorKind::Data, "fold '" + s.name + "' has no test windows");
    pr.fold_names.push_back(s.name);
  }

  const TransformConfig tc = transform_config(cfg);
  FeatureSets computed;
  std::map<std::string, const std::vector<FeatureImage>*> originals;
  for (const auto& m : cfg.modalities) {
    if (features && features->contains(m)) {
      originals[m] = &features->at(m);
      if (originals[m]->size() != ds.windows.size()) {
        fail(ErrorKind::Provenance, "feature set '" + m + "' does not match the dataset");
      }
      continue;
    }
    say("transforming " + std::to_string(ds.windows.size()) + " windows for " + m);
    computed[m] = transform_dataset(ds, feature_kind_from_string(m), tc, cfg.threads);
    originals[m] = &computed[m];
  }
  std::map<std::string, std::map<std::string, std::vector<double>>> external;
  for (const auto& e : cfg.external) {
    ProbFile pf = load_prob_file(e.path);
    auto& table = external[e.name];
    for (std::size_t i = 0; i < pf.ids.size(); ++i) {
      if (pf.probs[i].size() != C) {
        fail(ErrorKind::Data, "external modality '" + e.name + "' has the wrong class count");
      }
      table[pf.ids[i]] = pf.probs[i];
    }
  }

  // probs[modality][test position], test positions concatenated over folds.
  std::map<std::string, std::vector<std::vector<double>>> probs;
  std::vector<std::size_t> fold_of;
  std::vector<std::size_t> test_windows;

  for (std::size_t f = 0; f < splits.size(); ++f) {
    const Split& sp = splits[f];
    const auto train = fold_training_indices(sp, cfg, f);
    for (std::size_t i : sp.test) {
      fold_of.push_back(f);
      test_windows.push_back(i);
    }
    for (const auto& m : cfg.modalities) {
      const auto& imgs = *originals.at(m);
      TrainingPool pool = build_training_pool(ds, imgs, train, feature_kind_from_string(m), cfg);
      say("fold " + sp.name + " " + m + ": training on " + std::to_string(pool.images.size()) +
          " images");
      TrainedModel tm = train_model(pool.images, C, cfg.model(m),
                                    derive_seed(stage_seed(cfg, "train/" + m), f), cfg.threads,
                                    [&](const nn::EpochStats& st) {
                                      say("  epoch " + std::to_string(st.epoch + 1) + " loss " +
                                          format_double(st.mean_loss) + " acc " +
                                          format_double(st.accuracy));
                                    });
      std::vector<const FeatureImage*> test;
      for (std::size_t i : sp.test) test.push_back(&imgs[i]);
      for (auto& p : predict_images(tm.net, test, cfg.threads)) probs[m].push_back(std::move(p));
    }
    for (const auto& e : cfg.external) {
      const auto& table = external.at(e.name);
      for (std::size_t i : sp.test) {
        auto it = table.find(ds.windows[i].id);
        if (it == table.end()) {
          fail(ErrorKind::Data, "external modality '" + e.name + "' lacks window " +
                                    ds.windows[i].id);
        }
        probs[e.name].push_back(it->second);
      }
    }
  }

  for (std::size_t i : test_windows) pr.truths.push_back(ds.windows[i].label);
  for (const auto& m : pr.modalities) {
    ProbFile pf;
    pf.tags["modality"] = m;
    pf.tags["protocol"] = std::string(to_string(protocol));
    pf.tags["config_hash"] = hex64(config_hash(cfg));
    for (std::size_t t = 0; t < test_windows.size(); ++t) {
      pf.ids.push_back(ds.windows[test_windows[t]].id);
      pf.probs.push_back(probs.at(m)[t]);
    }
    pr.predictions[m] = std::move(pf);
  }

  std::vector<std::vector<std::size_t>> combos;
  if (grid) {
    combos = subsets_by_size(pr.modalities.size());
  } else {
    combos.emplace_back(pr.modalities.size());
    std::iota(combos.back().begin(), combos.back().end(), std::size_t{0});
  }
  for (const auto& combo : combos) {
    SubsetResult row;
    for (std::size_t c : combo) row.modalities.push_back(pr.modalities[c]);
    std::vector<int> preds(test_windows.size());
    for (std::size_t t = 0; t < test_windows.size(); ++t) {
      FusionInput fi;
      for (const auto& m : row.modalities) {
        fi.dists.push_back(probs.at(m)[t]);
        fi.modalities.push_back(m);
      }
      Decision d = decide(fuse(fi, cfg.fusion, cfg.fusion_k));
      preds[t] = static_cast<int>(d.label);
      if (d.tie) ++row.ties;
    }
    std::vector<MetricReport> folds;
    for (std::size_t f = 0; f < splits.size(); ++f) {
      std::vector<int> fp, ft;
      for (std::size_t t = 0; t < test_windows.size(); ++t) {
        if (fold_of[t] != f) continue;
        fp.push_back(preds[t]);
        ft.push_back(pr.truths[t]);
      }
      folds.push_back(metrics(confusion(fp, ft, C)));
    }
    row.report = protocol == Protocol::HalfHalf ? folds.front()
                                                : mean_over_folds(std::move(folds), pr.fold_names);
    pr.decisions[subset_name(row.modalities)] = std::move(preds);
    say(std::string(to_string(protocol)) + " " + subset_name(row.modalities) + ": accuracy " +
        format_double(row.report.accuracy));
    pr.rows.push_back(std::move(row));
  }
  return pr;
}

// ---------------------------------------------------------------------------
// Reports

Json report_to_json(const MetricReport& r, const std::vector<std::string>& class_names) {
  Json j;
  j["samples"] = r.samples;
  j["accuracy"] = r.accuracy;
  j["macro_precision"] = r.macro_precision;
  j["macro_recall"] = r.macro_recall;
  j["macro_f1"] = r.macro_f1;
  Json pc = Json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    Json e;
    e["class"] = c < class_names.size() ? class_names[c] : std::to_string(c);
    e["precision"] = m.precision;
    e["recall"] = m.recall;
    e["f1"] = m.f1;
    if (m.precision_undefined) e["precision_undefined"] = true;
    if (m.recall_undefined) e["recall_undefined"] = true;
    pc.push_back(e);
  }
  j["per_class"] = pc;
  if (!r.folds.empty()) {
    Json folds = Json::array();
    for (std::size_t f = 0; f < r.folds.size(); ++f) {
      Json fj = report_to_json(r.folds[f], class_names);
      fj["fold"] = f < r.fold_names.size() ? r.fold_names[f] : std::to_string(f);
      folds.push_back(fj);
    }
    j["folds"] = folds;
  }
  return j;
}

Json protocol_to_json(const ProtocolResult& pr) {
  Json j;
  j["protocol"] = std::string(to_string(pr.protocol));
  j["class_names"] = pr.class_names;
  j["modalities"] = pr.modalities;
  Json rows = Json::array();
  for (const auto& row : pr.rows) {
    Json r;
    r["modalities"] = row.modalities;
    r["ties"] = row.ties;
    r["metrics"] = report_to_json(row.report, pr.class_names);
    rows.push_back(r);
  }
  j["rows"] = rows;
  return j;
}

std::string render_grid(std::span<const ProtocolResult> results) {
  std::vector<std::string> names;
  for (const auto& pr : results)
    for (const auto& row : pr.rows) {
      std::string n = subset_name(row.modalities);
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
    }
  std::size_t name_w = 10;
  for (const auto& n : names) name_w = std::max(name_w, n.size());

  auto pct = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * v;
    return os.str();
  };
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "modalities";
  for (const auto& pr : results) {
    std::string p(to_string(pr.protocol));
    for (const char* col : {"acc", "P", "R", "F1"}) {
      os << "  " << std::right << std::setw(8) << (p + " " + col);
    }
  }
  os << '\n';
  for (const auto& n : names) {
    os << std::left << std::setw(static_cast<int>(name_w)) << n;
    for (const auto& pr : results) {
      const SubsetResult* hit = nullptr;
      for (const auto& row : pr.rows)
        if (subset_name(row.modalities) == n) hit = &row;
      for (int c = 0; c < 4; ++c) {
        std::string cell = "-";
        if (hit) {
          const auto& r = hit->report;
          double v = c == 0 ? r.accuracy : c == 1 ? r.macro_precision
                                       : c == 2 ? r.macro_recall
                                                : r.macro_f1;
          cell = pct(v);
        }
        os << "  " << std::right << std::setw(8) << cell;
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace mmhar
