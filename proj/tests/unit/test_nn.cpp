#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "mmhar/nn.hpp"
#include "oracles.hpp"

using namespace mmhar;
using namespace mmhar::nn;

namespace {

constexpr double kGradTol = 1e-4;

std::vector<double> run(const Network& net, const std::vector<double>& x) {
  Workspace ws;
  auto out = net.forward(x, ws, false, nullptr);
  return {out.begin(), out.end()};
}

std::size_t pick(std::mt19937_64& g, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(g);
}

void randomize(Network& net, std::uint64_t seed) {
  net.init_params(seed);
  std::mt19937_64 g(seed ^ 0x5bd1e995);
  std::uniform_real_distribution<double> U(-0.5, 0.5);
  for (auto& b : net.params().biases)
    for (auto& v : b.data) v = U(g);
}

/// Toy two-class problem separable by the sign of x0 + x1.
std::vector<std::vector<float>> toy_inputs(std::size_t n, std::vector<int>& labels) {
  std::mt19937_64 g(42);
  std::uniform_real_distribution<double> U(-1, 1);
  std::vector<std::vector<float>> xs;
  labels.clear();
  while (xs.size() < n) {
    double a = U(g), b = U(g);
    if (std::abs(a + b) < 0.2) continue;
    xs.push_back({static_cast<float>(a), static_cast<float>(b)});
    labels.push_back(a + b > 0 ? 1 : 0);
  }
  return xs;
}

std::vector<Sample> as_samples(const std::vector<std::vector<float>>& xs,
                               const std::vector<int>& labels) {
  std::vector<Sample> s;
  for (std::size_t i = 0; i < xs.size(); ++i) s.push_back({xs[i], labels[i]});
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward examples

TEST(Conv2d, AllOnesKernelSumsPatches) {
  Network net({3, 3, 1}, {LayerSpec::conv2d(1, 2, 2, Padding::Valid, Activation::Linear)});
  net.init_params(1);
  std::fill(net.params().weights[0].data.begin(), net.params().weights[0].data.end(), 1.0);
  auto out = run(net, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_EQ(out, (std::vector<double>{12, 16, 24, 28}));
}

TEST(Conv2d, IdentityKernelPassesThrough) {
  Network net({4, 5, 2}, {LayerSpec::conv2d(2, 1, 1, Padding::Same, Activation::Linear)});
  net.init_params(1);
  auto& w = net.params().weights[0];  // [1][1][K][F]
  std::fill(w.data.begin(), w.data.end(), 0.0);
  w.data[0 * 2 + 0] = 1.0;
  w.data[1 * 2 + 1] = 1.0;
  auto x = oracle::random_input(40, 3);
  EXPECT_EQ(run(net, x), x);
}

TEST(Conv2d, ReluClampsNegativeMap) {
  Network net({3, 3, 1}, {LayerSpec::conv2d(2, 3, 3, Padding::Same, Activation::Relu)});
  net.init_params(1);
  for (auto& v : net.params().weights[0].data) v = 0.0;
  for (auto& v : net.params().biases[0].data) v = -1.0;
  for (double v : run(net, oracle::random_input(9, 4))) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, SamePaddingKeepsExtent) {
  Network net({7, 6, 3}, {LayerSpec::conv2d(4, 5, 5, Padding::Same, Activation::Relu)});
  EXPECT_EQ(net.shapes().back(), (std::vector<std::size_t>{7, 6, 4}));
}

TEST(Conv3d, IdentityKernelPassesThrough) {
  Network net({2, 3, 3, 1}, {LayerSpec::conv3d(1, 1, 1, 1, Padding::Valid, Activation::Linear)});
  net.init_params(1);
  net.params().weights[0].data = {1.0};
  auto x = oracle::random_input(18, 5);
  EXPECT_EQ(run(net, x), x);
}

TEST(Conv3d, AllOnesCubeSumsToEight) {
  Network net({2, 2, 2, 1}, {LayerSpec::conv3d(1, 2, 2, 2, Padding::Valid, Activation::Linear)});
  net.init_params(1);
  std::fill(net.params().weights[0].data.begin(), net.params().weights[0].data.end(), 1.0);
  EXPECT_EQ(run(net, std::vector<double>(8, 1.0)), std::vector<double>{8.0});
}

TEST(MaxPool, PicksMaximum) {
  Network net({2, 2, 1}, {LayerSpec::maxpool2d(2)});
  EXPECT_EQ(run(net, {1, 2, 3, 4}), std::vector<double>{4});
}

TEST(MaxPool, FloorsOddExtents) {
  Network net({21, 16, 3}, {LayerSpec::maxpool2d(2)});
  EXPECT_EQ(net.shapes().back(), (std::vector<std::size_t>{10, 8, 3}));
}

TEST(MaxPool, ConstantMapStaysConstant) {
  Network net({6, 4, 2}, {LayerSpec::maxpool2d(2)});
  for (double v : run(net, std::vector<double>(48, 0.7))) EXPECT_EQ(v, 0.7);
}

TEST(Dense, IdentityWeightsPassThrough) {
  Network net({3}, {LayerSpec::dense(3, Activation::Linear)});
  net.init_params(1);
  net.params().weights[0].data = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  EXPECT_EQ(run(net, {1.5, -2, 3}), (std::vector<double>{1.5, -2, 3}));
}

TEST(Dense, HandComputedExample) {
  Network net({2}, {LayerSpec::dense(2, Activation::Linear)});
  net.init_params(1);
  net.params().weights[0].data = {1, 1, 1, -1};
  net.params().biases[0].data = {0, 1};
  EXPECT_EQ(run(net, {2, 3}), (std::vector<double>{5, 0}));
}

TEST(Dense, ZeroWeightsGiveBias) {
  Network net({4}, {LayerSpec::dense(2, Activation::Linear)});
  net.init_params(1);
  std::fill(net.params().weights[0].data.begin(), net.params().weights[0].data.end(), 0.0);
  net.params().biases[0].data = {0.25, -3};
  EXPECT_EQ(run(net, {1, 2, 3, 4}), (std::vector<double>{0.25, -3}));
}

TEST(Dropout, InactiveAtInferenceAndInvertedWhenTraining) {
  Network net({1000}, {LayerSpec::dropout(0.5)});
  std::vector<double> x(1000, 1.0);
  EXPECT_EQ(run(net, x), x);
  Workspace ws;
  Rng rng(3);
  auto out = net.forward(x, ws, true, &rng);
  std::size_t kept = 0;
  for (double v : out) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    kept += v > 0 ? 1 : 0;
  }
  EXPECT_GT(kept, 400u);
  EXPECT_LT(kept, 600u);
}

TEST(Softmax, UniformForZeroScores) {
  for (double p : softmax(std::vector<double>(6, 0.0))) EXPECT_DOUBLE_EQ(p, 1.0 / 6);
}

TEST(Softmax, StableForLargeScores) {
  auto p = softmax(std::vector<double>{1000, 0});
  EXPECT_NEAR(p[0], 1.0, 1e-12);
  EXPECT_NEAR(p[1], 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(p[1]));
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  std::mt19937_64 g(8);
  std::uniform_real_distribution<double> U(-20, 20);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(2 + t % 9), s2;
    for (auto& v : s) v = U(g);
    double c = U(g) * 10;
    for (double v : s) s2.push_back(v + c);
    auto a = softmax(s), b = softmax(s2);
    double sum = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-12);
      EXPECT_GE(a[i], 0.0);
      sum += a[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Loss, PerfectPredictionIsZero) {
  std::vector<std::vector<double>> probs{{0, 1, 0}, {1, 0, 0}};
  std::vector<int> labels{1, 0};
  EXPECT_EQ(loss(probs, labels, Params{}, 0.0), 0.0);
}

TEST(Loss, UniformSixClassIsLogSix) {
  std::vector<std::vector<double>> probs{std::vector<double>(6, 1.0 / 6)};
  std::vector<int> labels{3};
  EXPECT_NEAR(loss(probs, labels, Params{}, 0.0), std::log(6.0), 1e-12);
}

TEST(Loss, ZeroWeightsAddNoPenaltyAndBiasesAreExcluded) {
  Network net({3}, {LayerSpec::dense(2, Activation::Linear), LayerSpec::softmax()});
  net.init_params(2);
  std::vector<std::vector<double>> probs{{0.25, 0.75}};
  std::vector<int> labels{0};
  const double data = -std::log(0.25);
  Params p = net.zero_like();
  p.biases[0].data = {5, 7};
  EXPECT_EQ(loss(probs, labels, p, 0.1), data);

  double sq = 0;
  for (double w : net.params().weights[0].data) sq += w * w;
  EXPECT_EQ(l2_penalty(net.params(), 0.1), 0.1 * sq);
}

TEST(Loss, ClampsZeroProbability) {
  EXPECT_NEAR(cross_entropy(std::vector<double>{1.0, 0.0}, 1), -std::log(kProbFloor), 1e-9);
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks

class GradCheck : public ::testing::Test {
 protected:
  static void expect_ok(const oracle::GradCheckResult& r, const std::string& what) {
    EXPECT_GT(r.checked, 0u) << what;
    EXPECT_LT(r.max_rel_error, kGradTol) << what;
  }
};

TEST_F(GradCheck, Conv2dOnRandomInstances) {
  std::mt19937_64 g(100);
  for (int inst = 0; inst < 20; ++inst) {
    std::size_t H = pick(g, 3, 6), W = pick(g, 3, 6), K = pick(g, 1, 3), F = pick(g, 1, 3);
    std::size_t kh = pick(g, 1, 3), kw = pick(g, 1, 3);
    Padding pad = inst % 2 ? Padding::Same : Padding::Valid;
    Activation act = inst % 3 ? Activation::Linear : Activation::Relu;
    Network net({H, W, K}, {LayerSpec::conv2d(F, kh, kw, pad, act)});
    randomize(net, 1000 + inst);
    expect_ok(oracle::check_network(net, oracle::random_input(H * W * K, inst), inst),
              "conv2d instance " + std::to_string(inst));
  }
}

TEST_F(GradCheck, Conv3dOnRandomInstances) {
  std::mt19937_64 g(200);
  for (int inst = 0; inst < 20; ++inst) {
    std::size_t L = pick(g, 2, 4), H = pick(g, 2, 4), W = pick(g, 2, 4), K = pick(g, 1, 2),
                F = pick(g, 1, 3);
    std::size_t kt = pick(g, 1, 2), kh = pick(g, 1, 2), kw = pick(g, 1, 2);
    Padding pad = inst % 2 ? Padding::Same : Padding::Valid;
    Activation act = inst % 3 ? Activation::Linear : Activation::Relu;
    Network net({L, H, W, K}, {LayerSpec::conv3d(F, kt, kh, kw, pad, act)});
    randomize(net, 2000 + inst);
    expect_ok(oracle::check_network(net, oracle::random_input(L * H * W * K, inst), inst),
              "conv3d instance " + std::to_string(inst));
  }
}

TEST_F(GradCheck, MaxPoolOnRandomInstances) {
  std::mt19937_64 g(300);
  for (int inst = 0; inst < 20; ++inst) {
    std::size_t H = pick(g, 2, 7), W = pick(g, 2, 7), K = pick(g, 1, 3);
    Network net({H, W, K}, {LayerSpec::maxpool2d(2)});
    expect_ok(oracle::check_network(net, oracle::separated_input(H * W * K, inst), inst),
              "maxpool instance " + std::to_string(inst));
  }
}

TEST_F(GradCheck, DenseOnRandomInstances) {
  std::mt19937_64 g(400);
  for (int inst = 0; inst < 20; ++inst) {
    std::size_t N = pick(g, 1, 8), U = pick(g, 1, 6);
    Activation act = inst % 3 ? Activation::Linear : Activation::Relu;
    Network net({N}, {LayerSpec::dense(U, act)});
    randomize(net, 4000 + inst);
    expect_ok(oracle::check_network(net, oracle::random_input(N, inst), inst),
              "dense instance " + std::to_string(inst));
  }
}

TEST_F(GradCheck, SoftmaxOnRandomInstances) {
  std::mt19937_64 g(500);
  for (int inst = 0; inst < 20; ++inst) {
    std::size_t C = pick(g, 2, 7);
    Network net({C}, {LayerSpec::softmax()});
    expect_ok(oracle::check_network(net, oracle::random_input(C, inst), inst),
              "softmax instance " + std::to_string(inst));
  }
}

TEST_F(GradCheck, SoftmaxCrossEntropyOnRandomInstances) {
  std::mt19937_64 g(600);
  for (int inst = 0; inst < 20; ++inst) {
    std::size_t N = pick(g, 2, 6), C = pick(g, 2, 6);
    int label = static_cast<int>(pick(g, 0, C - 1));
    Network net({N}, {LayerSpec::dense(C, Activation::Linear), LayerSpec::softmax()});
    randomize(net, 6000 + inst);
    expect_ok(oracle::check_network(net, oracle::random_input(N, inst), inst, true, label),
              "softmax+CE instance " + std::to_string(inst));
  }
}

TEST_F(GradCheck, SmallM1StackEndToEnd) {
  for (int inst = 0; inst < 3; ++inst) {
    M1Options opt;
    opt.conv1_filters = 2;
    opt.conv2_filters = 3;
    opt.kernel = 3;
    opt.dense_units = 5;
    auto specs = build_m1_architecture(8, 8, 1, 3, opt);
    Network net({8, 8, 1}, specs);
    randomize(net, 7000 + inst);
    expect_ok(oracle::check_network(net, oracle::separated_input(64, inst), inst, true, inst % 3),
              "m1 instance " + std::to_string(inst));
  }
}

// ---------------------------------------------------------------------------
// Architecture

TEST(M1Architecture, ReferenceShapeChain) {
  auto specs = build_m1_architecture(42, 32, 1, 6);
  Network net({42, 32, 1}, specs);
  const auto& sh = net.shapes();
  using V = std::vector<std::size_t>;
  std::vector<V> seen;
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (specs[i].kind == LayerKind::Flatten) {
      EXPECT_EQ(sh[i], (V{10, 8, 64}));
      EXPECT_EQ(sh[i + 1], (V{5120}));
    }
  EXPECT_EQ(sh.front(), (V{42, 32, 1}));
  EXPECT_EQ(sh.back(), (V{6}));
  bool saw128 = false;
  for (const auto& s : sh) saw128 = saw128 || s == V{128};
  EXPECT_TRUE(saw128);
  EXPECT_EQ(specs.back().kind, LayerKind::Softmax);
}

TEST(M1Architecture, DefaultPlanFlattensTo6144) {
  auto specs = build_m1_architecture(50, 32, 1, 6);
  Network net({50, 32, 1}, specs);
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (specs[i].kind == LayerKind::Flatten) EXPECT_EQ(net.shapes()[i + 1][0], 6144u);
}

TEST(M1Architecture, OutputWidthIsClassCount) {
  for (std::size_t C : {2u, 3u, 6u, 11u}) {
    Network net({16, 16, 3}, build_m1_architecture(16, 16, 3, C));
    EXPECT_EQ(net.num_outputs(), C);
  }
}

TEST(M1Architecture, RejectsTinyInputs) {
  EXPECT_THROW(build_m1_architecture(4, 32, 1, 6), Error);
}

// ---------------------------------------------------------------------------
// Training

TEST(Trainer, FirstStepMovesByLearningRateTimesGradient) {
  Network net({1}, {LayerSpec::dense(2, Activation::Linear), LayerSpec::softmax()});
  net.init_params(3);
  Params before = net.params();
  std::vector<float> x{0.7f};
  Workspace ws;
  auto p = net.forward(std::vector<double>{0.7f}, ws, false, nullptr);
  std::vector<double> g{p[0], p[1] - 1.0};
  Params grads = net.zero_like();
  net.backward(ws, g, grads, 0);

  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.momentum = 0.0;
  cfg.l2_lambda = 0.0;
  Trainer tr(net, cfg);
  std::vector<Sample> batch{{x, 1}};
  tr.step(batch);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_DOUBLE_EQ(net.params().weights[0].data[k],
                     before.weights[0].data[k] - 0.1 * grads.weights[0].data[k]);
    EXPECT_DOUBLE_EQ(net.params().biases[0].data[k],
                     before.biases[0].data[k] - 0.1 * grads.biases[0].data[k]);
  }
}

TEST(Trainer, ToyLossDecreasesMonotonically) {
  std::vector<int> labels;
  auto xs = toy_inputs(50, labels);
  auto samples = as_samples(xs, labels);
  Network net({2}, {LayerSpec::dense(2, Activation::Linear), LayerSpec::softmax()});
  net.init_params(5);
  TrainConfig cfg;
  cfg.epochs = 20;
  Trainer tr(net, cfg);
  auto hist = tr.fit(samples);
  ASSERT_EQ(hist.size(), 20u);
  for (std::size_t e = 1; e < hist.size(); ++e)
    EXPECT_LT(hist[e].mean_loss, hist[e - 1].mean_loss) << "epoch " << e;
}

TEST(Trainer, LearnsSeparableToySet) {
  std::vector<int> labels;
  auto xs = toy_inputs(200, labels);
  auto samples = as_samples(xs, labels);
  Network net({2}, {LayerSpec::dense(8, Activation::Relu), LayerSpec::dense(2, Activation::Linear),
                    LayerSpec::softmax()});
  net.init_params(6);
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.batch_size = 16;
  cfg.epochs = 40;
  Trainer tr(net, cfg);
  auto hist = tr.fit(samples);
  EXPECT_GT(hist.back().accuracy, 0.95);
}

TEST(Trainer, SeededRunsAreBitIdenticalAcrossThreadCounts) {
  std::vector<int> labels;
  auto xs = toy_inputs(100, labels);
  auto samples = as_samples(xs, labels);
  auto train = [&](std::size_t threads) {
    Network net({2}, {LayerSpec::dense(6, Activation::Relu), LayerSpec::dropout(0.3),
                      LayerSpec::dense(2, Activation::Linear), LayerSpec::softmax()});
    net.init_params(7);
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.batch_size = 10;
    cfg.epochs = 1;
    cfg.seed = 11;
    cfg.threads = threads;
    Trainer tr(net, cfg);
    auto h = tr.fit(samples);
    EXPECT_EQ(tr.steps_taken(), 10u);
    return std::make_pair(net.params(), h.back().mean_loss);
  };
  auto [p1, l1] = train(1);
  auto [p2, l2] = train(1);
  auto [p4, l4] = train(4);
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(l1, l4);
  for (std::size_t i = 0; i < p1.weights.size(); ++i) {
    EXPECT_EQ(p1.weights[i].data, p2.weights[i].data);
    EXPECT_EQ(p1.weights[i].data, p4.weights[i].data);
    EXPECT_EQ(p1.biases[i].data, p4.biases[i].data);
  }
}

TEST(Trainer, NonFiniteLossIsNumericError) {
  Network net({1}, {LayerSpec::dense(2, Activation::Linear), LayerSpec::softmax()});
  net.init_params(1);
  std::vector<float> x{std::numeric_limits<float>::infinity()};
  std::vector<Sample> batch{{x, 0}};
  TrainConfig cfg;
  Trainer tr(net, cfg);
  try {
    tr.step(batch);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
  }
}

TEST(Trainer, ValidatesConfig) {
  TrainConfig cfg;
  cfg.lr = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(PredictBatch, MatchesForwardForAnyThreadCount) {
  Network net({6, 6, 1}, {LayerSpec::conv2d(2, 3, 3, Padding::Same, Activation::Relu),
                          LayerSpec::flatten(), LayerSpec::dense(3, Activation::Linear),
                          LayerSpec::softmax()});
  net.init_params(9);
  std::vector<std::vector<float>> xs;
  for (int i = 0; i < 13; ++i) {
    auto v = oracle::random_input(36, i);
    xs.emplace_back(v.begin(), v.end());
  }
  std::vector<std::span<const float>> spans(xs.begin(), xs.end());
  auto a = predict_batch(net, spans, 1), b = predict_batch(net, spans, 3);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<double> x(xs[i].begin(), xs[i].end());
    EXPECT_EQ(a[i], net.predict(x));
  }
}

// ---------------------------------------------------------------------------
// Model files

TEST(ModelFile, SaveLoadSaveIsByteIdentical) {
  auto specs = build_m1_architecture(8, 8, 1, 3, {2, 3, 3, 4, 0.5});
  Network net({8, 8, 1}, specs);
  randomize(net, 12);
  std::stringstream a;
  write_model(a, net);
  Network other({8, 8, 1}, specs);
  read_model(a, other);
  std::stringstream b;
  write_model(b, other);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(a.str().substr(0, 4), "HARW");
  auto x = oracle::random_input(64, 1);
  EXPECT_EQ(net.predict(x), other.predict(x));
}

TEST(ModelFile, WrongArchitectureIsRejected) {
  Network net({8, 8, 1}, build_m1_architecture(8, 8, 1, 3, {2, 3, 3, 4, 0.5}));
  net.init_params(1);
  std::stringstream s;
  write_model(s, net);
  Network other({8, 8, 1}, build_m1_architecture(8, 8, 1, 4, {2, 3, 3, 4, 0.5}));
  EXPECT_THROW(read_model(s, other), Error);
}

TEST(ModelFile, TruncatedFileIsRejected) {
  Network net({4}, {LayerSpec::dense(3, Activation::Linear), LayerSpec::softmax()});
  net.init_params(1);
  std::stringstream s;
  write_model(s, net);
  std::string bytes = s.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  Network other({4}, {LayerSpec::dense(3, Activation::Linear), LayerSpec::softmax()});
  EXPECT_THROW(read_model(cut, other), Error);
}

TEST(ModelFile, SpecsJsonRoundTrip) {
  auto specs = build_m1_architecture(10, 12, 3, 5, {2, 3, 3, 4, 0.25});
  Network net({10, 12, 3}, specs);
  Network back = network_from_json(specs_to_json(net.input_dims(), specs));
  EXPECT_EQ(back.architecture_hash(), net.architecture_hash());
  EXPECT_EQ(back.architecture_string(), net.architecture_string());
}
