#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmhar/common.hpp"

namespace mmhar::nn {

struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> d, double fill = 0.0);
  static std::size_t volume(std::span<const std::size_t> d);
  std::size_t size() const { return data.size(); }
};

enum class LayerKind { Conv2D, Conv3D, MaxPool2D, Flatten, Dense, Dropout, Softmax };
enum class Activation { Linear, Relu };
enum class Padding { Valid, Same };

std::string_view to_string(LayerKind k);
std::string_view to_string(Activation a);
std::string_view to_string(Padding p);

/// Hyperparameters of one layer. Conv2D kernels are P×Q (height × width);
/// Conv3D adds R along the leading (temporal) axis. Feature maps are
/// channel-last: H×W×K for 2D and L×H×W×K for 3D.
struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t filters = 0;
  std::size_t kernel_h = 1, kernel_w = 1, kernel_t = 1;
  Padding padding = Padding::Same;
  std::size_t pool = 2;
  std::size_t units = 0;
  double dropout_rate = 0.0;
  Activation activation = Activation::Linear;

  static LayerSpec conv2d(std::size_t filters, std::size_t kh, std::size_t kw, Padding pad,
                          Activation act);
  static LayerSpec conv3d(std::size_t filters, std::size_t kt, std::size_t kh, std::size_t kw,
                          Padding pad, Activation act);
  static LayerSpec maxpool2d(std::size_t pool = 2);
  static LayerSpec flatten();
  static LayerSpec dense(std::size_t units, Activation act);
  static LayerSpec dropout(double rate);
  static LayerSpec softmax();

  bool has_params() const {
    return kind == LayerKind::Conv2D || kind == LayerKind::Conv3D || kind == LayerKind::Dense;
  }
};

struct M1Options {
  std::size_t conv1_filters = 32;
  std::size_t conv2_filters = 64;
  std::size_t kernel = 5;
  std::size_t dense_units = 128;
  double dropout_rate = 0.5;
};

/// conv 5×5 (same, relu) → pool 2×2 → conv 5×5 (same, relu) → pool 2×2 →
/// flatten → dense (relu) → dropout → dense C → softmax.
std::vector<LayerSpec> build_m1_architecture(std::size_t height, std::size_t width,
                                             std::size_t depth, std::size_t classes,
                                             const M1Options& opt = {});

/// Weights and biases of every layer (empty tensors for parameterless layers).
struct Params {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

/// Per-sample activations and caches reused across forward/backward calls.
struct Workspace {
  std::vector<Tensor> acts;                        // acts[i] is the input of layer i
  std::vector<std::vector<std::uint32_t>> argmax;  // max-pool winners
  std::vector<std::vector<double>> masks;          // dropout scale per element
  std::vector<Tensor> grads;                       // scratch for backprop
};

class Network {
 public:
  Network() = default;
  Network(std::vector<std::size_t> input_dims, std::vector<LayerSpec> specs);

  const std::vector<std::size_t>& input_dims() const { return input_dims_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  /// shapes()[i] is the input shape of layer i; shapes().back() the output.
  const std::vector<std::vector<std::size_t>>& shapes() const { return shapes_; }
  std::size_t num_outputs() const { return Tensor::volume(shapes_.back()); }

  Params& params() { return params_; }
  const Params& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  /// Fan-in scaled uniform weights, zero biases.
  void init_params(std::uint64_t seed);
  Params zero_like() const;
  std::size_t parameter_count() const;

  std::uint64_t architecture_hash() const;
  std::string architecture_string() const;

  /// dropout_rng is only consulted when training is true.
  std::span<const double> forward(std::span<const double> input, Workspace& ws, bool training,
                                  Rng* dropout_rng) const;

  /// Accumulates parameter gradients into grads given dL/d(output of layer
  /// last_layer). With last_layer == specs().size() - 1 this is the full
  /// network; pass size() - 2 to skip a trailing softmax whose gradient was
  /// folded into the loss. Returns dL/d(input).
  const Tensor& backward(Workspace& ws, std::span<const double> grad_out, Params& grads,
                         std::size_t last_layer) const;

  std::vector<double> predict(std::span<const double> input) const;

 private:
  std::vector<std::size_t> input_dims_;
  std::vector<LayerSpec> specs_;
  std::vector<std::vector<std::size_t>> shapes_;
  Params params_;
  std::uint64_t seed_ = 0;
};

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> scores);

inline constexpr double kProbFloor = 1e-12;

double cross_entropy(std::span<const double> probs, int label);
double l2_penalty(const Params& params, double lambda);

/// Σ_n -log P(y_n | x_n) + λ Σ w² over weights (biases excluded).
double loss(std::span<const std::vector<double>> probs, std::span<const int> labels,
            const Params& params, double lambda);

struct TrainConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double l2_lambda = 1e-5;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;
  /// Worker threads for within-batch gradient computation. Results are
  /// identical for every thread count.
  std::size_t threads = 1;

  void validate() const;
};

struct Sample {
  std::span<const float> input;
  int label = 0;
};

/// Gradient accumulator for one fixed-size slice of a minibatch.
struct TrainerChunk {
  Params grads;
  Workspace ws;
  std::vector<double> input;
  double loss = 0.0;
  std::size_t correct = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;  // data term per sample plus the last batch's penalty
  double accuracy = 0.0;   // training-mode accuracy over the epoch
};

/// SGD with classical momentum over a single network.
class Trainer {
 public:
  Trainer(Network& net, TrainConfig cfg);

  /// One minibatch: reverse-mode gradients of the summed batch loss, then
  /// v ← μv − lr·g, w ← w + v. Returns the batch loss. Throws a numeric
  /// error on a non-finite loss.
  double step(std::span<const Sample> batch);

  std::vector<EpochStats> fit(std::span<const Sample> samples,
                              const std::function<void(const EpochStats&)>& on_epoch = {});

  const TrainConfig& config() const { return cfg_; }
  std::size_t steps_taken() const { return steps_; }

 private:
  Network& net_;
  TrainConfig cfg_;
  Params velocity_;
  std::vector<TrainerChunk> chunks_;
  std::size_t last_correct_ = 0;
  std::size_t steps_ = 0;
  std::size_t epoch_ = 0;
};

/// Inference over many inputs; rows of the result are class distributions.
std::vector<std::vector<double>> predict_batch(const Network& net,
                                               std::span<const std::span<const float>> inputs,
                                               std::size_t threads = 1);

// ---------------------------------------------------------------------------
// Model files: "HARW" header, architecture hash, seed, then tensors of f64.

void write_model(std::ostream& out, const Network& net);
/// Reads parameters into a network built from the expected architecture;
/// throws on hash mismatch or truncation.
void read_model(std::istream& in, Network& net);

void save_model(const std::string& path, const Network& net, const std::string& sidecar_json);
void load_model(const std::string& path, Network& net);

std::string specs_to_json(const std::vector<std::size_t>& input_dims,
                          const std::vector<LayerSpec>& specs);
/// Parses the "input_dims"/"layers" fields written by specs_to_json.
Network network_from_json(const std::string& json_text);

}  // namespace mmhar::nn
