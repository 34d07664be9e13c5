#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mmhar/augment.hpp"
#include "mmhar/evaluation.hpp"
#include "mmhar/features.hpp"
#include "mmhar/fusion.hpp"
#include "mmhar/imu.hpp"
#include "mmhar/nn.hpp"
#include "mmhar/synth.hpp"

namespace mmhar {

using Json = nlohmann::ordered_json;

struct ModelConfig {
  nn::TrainConfig train;
  nn::M1Options arch;
};

/// A modality produced outside this pipeline, supplied as a probability file.
struct ExternalModality {
  std::string name;
  std::string path;
};

enum class Protocol { HalfHalf, LeaveOneOut };

Protocol protocol_from_string(std::string_view s);
std::string_view to_string(Protocol p);

struct PipelineConfig {
  std::uint64_t seed = 42;
  /// Internal parallelism; never changes results.
  std::size_t threads = 1;

  SynthConfig synth;
  std::string column_map = "standard";
  double rate_hz = kDefaultRateHz;

  std::size_t window = kDefaultWindow;
  double overlap = kDefaultOverlap;
  /// "euler" (every channel pair adjacent) or "reference42".
  std::string plan = "euler";
  std::size_t och_size = 64;

  AugmentMode augment = AugmentMode::None;
  KaConfig ka;
  JaConfig ja;

  std::map<std::string, ModelConfig> models = {{"freq", {}}, {"och", {}}};

  FusionMethod fusion = FusionMethod::Avg;
  std::size_t fusion_k = 0;
  std::vector<ExternalModality> external;

  Protocol protocol = Protocol::HalfHalf;
  bool stratified = false;
  /// Fraction of each fold's training windows kept (seeded subsample).
  double train_fraction = 1.0;
  std::vector<std::string> modalities = {"freq", "och"};

  std::string work_dir = "work";

  void validate() const;
  const ModelConfig& model(std::string_view modality) const;
};

PipelineConfig default_config();
/// Reduced networks and image sizes for single-machine benchmarking.
PipelineConfig desk_config();
PipelineConfig preset_config(std::string_view name);

Json config_to_json(const PipelineConfig& cfg);
/// Overlays patch on base; unknown keys and type mismatches are config errors.
PipelineConfig config_from_json(const Json& patch, const PipelineConfig& base = default_config());
/// Applies "section.key=value" to a config document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
void apply_override(Json& doc, std::string_view assignment);

/// Hash of everything that influences results (threads and paths excluded).
std::uint64_t config_hash(const PipelineConfig& cfg);
std::uint64_t stage_seed(const PipelineConfig& cfg, std::string_view stage);

// ---------------------------------------------------------------------------
// Stages

struct LabeledRecording {
  Recording recording;
  std::vector<Annotation> annotations;
};

/// Segments and windows every recording; ids are "w000000", "w000001", ...
/// in recording then annotation order.
Dataset build_dataset(std::span<const LabeledRecording> recs,
                      std::vector<std::string> class_names, std::size_t window, double overlap);
Dataset dataset_from_synth(const SynthOutput& synth, const PipelineConfig& cfg);
/// The synth section with sampling parameters and the stage seed filled in.
SynthConfig synth_config(const PipelineConfig& cfg);

TransformConfig transform_config(const PipelineConfig& cfg);
std::vector<FeatureImage> transform_dataset(const Dataset& ds, FeatureKind kind,
                                            const TransformConfig& tc, std::size_t threads);

/// Training images for a set of originals: the originals, then their KA
/// images, then their JA images, as configured. Pointers in images refer to
/// originals or to extras.
struct TrainingPool {
  std::vector<FeatureImage> extras;
  std::vector<const FeatureImage*> images;
};

TrainingPool build_training_pool(const Dataset& ds, std::span<const FeatureImage> originals,
                                 std::span<const std::size_t> indices, FeatureKind kind,
                                 const PipelineConfig& cfg);

nn::Network build_network(const FeatureImage& like, std::size_t classes, const ModelConfig& mc);

struct TrainedModel {
  nn::Network net;
  std::vector<nn::EpochStats> history;
};

TrainedModel train_model(std::span<const FeatureImage* const> pool, std::size_t classes,
                         const ModelConfig& mc, std::uint64_t seed, std::size_t threads,
                         const std::function<void(const nn::EpochStats&)>& on_epoch = {});

std::vector<std::vector<double>> predict_images(const nn::Network& net,
                                                std::span<const FeatureImage* const> images,
                                                std::size_t threads);

/// Seeded subsample keeping round(fraction * n) (at least one) indices in
/// their original order.
std::vector<std::size_t> subsample(std::span<const std::size_t> indices, double fraction,
                                   std::uint64_t seed);

// ---------------------------------------------------------------------------
// Protocols

struct SubsetResult {
  std::vector<std::string> modalities;
  MetricReport report;
  std::size_t ties = 0;
};

struct ProtocolResult {
  Protocol protocol = Protocol::HalfHalf;
  std::vector<std::string> class_names;
  std::vector<std::string> modalities;
  std::vector<SubsetResult> rows;
  /// Test-set class distributions per modality across all folds.
  std::map<std::string, ProbFile> predictions;
  /// Fused decisions per row, keyed by subset_name.
  std::map<std::string, std::vector<int>> decisions;
  std::vector<int> truths;
  std::vector<std::string> fold_names;
};

using LogFn = std::function<void(const std::string&)>;

/// Trains every internal modality per fold, reads external modalities from
/// their probability files, then fuses. With grid set there is one row per
/// non-empty modality subset (size first); otherwise a single row for all
/// configured modalities. Transformed originals are taken from features
/// when given and computed otherwise.
using FeatureSets = std::map<std::string, std::vector<FeatureImage>>;
ProtocolResult run_protocol(const Dataset& ds, const PipelineConfig& cfg, Protocol protocol,
                            bool grid, const LogFn& log = {},
                            const FeatureSets* features = nullptr);

/// Training windows of a split after subsampling, in dataset order.
std::vector<std::size_t> fold_training_indices(const Split& split, const PipelineConfig& cfg,
                                               std::size_t fold);

std::string subset_name(const std::vector<std::string>& modalities);

Json report_to_json(const MetricReport& r, const std::vector<std::string>& class_names);
Json protocol_to_json(const ProtocolResult& pr);
/// Rows are modality subsets; columns are accuracy and macro P/R/F1 per protocol.
std::string render_grid(std::span<const ProtocolResult> results);

}  // namespace mmhar
