#pragma once

// Reference implementations used only by tests. They share no code with the
// library routines they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "mmhar/nn.hpp"

namespace oracle {

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Rotation matrix of a unit quaternion (x, y, z, w).
inline Mat3 quat_matrix(double x, double y, double z, double w) {
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
           {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
           {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

/// Rodrigues rotation matrix about a unit axis.
inline Mat3 axis_angle_matrix(std::array<double, 3> a, double theta) {
  const double c = std::cos(theta), s = std::sin(theta), t = 1 - c;
  const double x = a[0], y = a[1], z = a[2];
  return {{{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
           {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
           {t * x * z - s * y, t * y * z + s * x, t * z * z + c}}};
}

inline std::array<double, 3> apply(const Mat3& m, std::array<double, 3> v) {
  std::array<double, 3> r{};
  for (int i = 0; i < 3; ++i) r[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
  return r;
}

/// Direct O(R²T²) 2D DFT, F(u,v) = Σ x(r,t) e^{-2πi(ur/R + vt/T)}.
inline std::vector<std::complex<double>> dft2(const std::vector<double>& x, std::size_t R,
                                              std::size_t T) {
  std::vector<std::complex<double>> F(R * T);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t u = 0; u < R; ++u)
    for (std::size_t v = 0; v < T; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t t = 0; t < T; ++t) {
          double ang = -two_pi * (static_cast<double>(u * r) / static_cast<double>(R) +
                                  static_cast<double>(v * t) / static_cast<double>(T));
          acc += x[r * T + t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      F[u * T + v] = acc;
    }
  return F;
}

/// Shannon-entropy confidence computed with log2 on the renormalized top-K.
inline double informativity(std::vector<double> p, std::size_t K) {
  std::sort(p.begin(), p.end(), [](double a, double b) { return a > b; });
  p.resize(K);
  double s = 0;
  for (double v : p) s += v;
  double h = 0;
  for (double v : p) {
    double q = v / s;
    if (q > 0) h -= q * std::log2(q);
  }
  return 1.0 - h / std::log2(static_cast<double>(K));
}

/// Per-class precision/recall/F1 counted directly from (pred, truth) pairs.
struct BruteMetrics {
  double accuracy = 0;
  std::vector<double> precision, recall, f1;
  double macro_p = 0, macro_r = 0, macro_f1 = 0;
};

inline BruteMetrics brute_metrics(const std::vector<int>& preds, const std::vector<int>& truths,
                                  int C) {
  BruteMetrics m;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == truths[i] ? 1 : 0;
  m.accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
  for (int c = 0; c < C; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == c && truths[i] == c) ++tp;
      if (preds[i] == c && truths[i] != c) ++fp;
      if (preds[i] != c && truths[i] == c) ++fn;
    }
    double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    double f = p + r == 0 ? 0.0 : 2 * p * r / (p + r);
    m.precision.push_back(p);
    m.recall.push_back(r);
    m.f1.push_back(f);
    m.macro_p += p;
    m.macro_r += r;
    m.macro_f1 += f;
  }
  m.macro_p /= C;
  m.macro_r /= C;
  m.macro_f1 /= C;
  return m;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Relative error with a floor on the denominator so that gradients that are
/// zero analytically and numerically compare as exact.
inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3});
}

/// Compares backward() against central differences of the scalar
/// L = Σ r_i · out_i (r random), for every parameter and input element.
/// With fused_ce set, L is cross entropy against label and backward starts
/// below the trailing softmax with grad p - onehot.
inline GradCheckResult check_network(mmhar::nn::Network& net, std::vector<double> input,
                                     std::uint64_t seed, bool fused_ce = false, int label = 0,
                                     double eps = 1e-6) {
  using namespace mmhar::nn;
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const std::size_t n_out = net.num_outputs();
  std::vector<double> r(n_out);
  for (auto& v : r) v = U(gen);

  auto scalar = [&](const std::vector<double>& x) {
    Workspace ws;
    auto out = net.forward(x, ws, false, nullptr);
    if (fused_ce) return -std::log(out[static_cast<std::size_t>(label)]);
    double s = 0;
    for (std::size_t i = 0; i < n_out; ++i) s += r[i] * out[i];
    return s;
  };

  Workspace ws;
  auto out = net.forward(input, ws, false, nullptr);
  std::vector<double> g(n_out);
  std::size_t last = net.specs().size() - 1;
  if (fused_ce) {
    for (std::size_t i = 0; i < n_out; ++i) g[i] = out[i] - (static_cast<int>(i) == label ? 1 : 0);
    last -= 1;
  } else {
    g = r;
  }
  Params grads = net.zero_like();
  const Tensor& gin = net.backward(ws, g, grads, last);
  std::vector<double> gin_copy = gin.data;

  GradCheckResult res;
  auto check = [&](double& slot, double analytic, const std::vector<double>& x) {
    const double saved = slot;
    slot = saved + eps;
    double lp = scalar(x);
    slot = saved - eps;
    double lm = scalar(x);
    slot = saved;
    double numeric = (lp - lm) / (2 * eps);
    res.max_rel_error = std::max(res.max_rel_error, rel_error(analytic, numeric));
    ++res.checked;
  };
  auto& P = net.params();
  for (std::size_t l = 0; l < P.weights.size(); ++l) {
    for (std::size_t i = 0; i < P.weights[l].data.size(); ++i)
      check(P.weights[l].data[i], grads.weights[l].data[i], input);
    for (std::size_t i = 0; i < P.biases[l].data.size(); ++i)
      check(P.biases[l].data[i], grads.biases[l].data[i], input);
  }
  for (std::size_t i = 0; i < input.size(); ++i) {
    std::vector<double> x = input;
    const double saved = x[i];
    x[i] = saved + eps;
    double lp = scalar(x);
    x[i] = saved - eps;
    double lm = scalar(x);
    double numeric = (lp - lm) / (2 * eps);
    res.max_rel_error = std::max(res.max_rel_error, rel_error(gin_copy[i], numeric));
    ++res.checked;
  }
  return res;
}

/// Random input whose entries are pairwise separated by at least 1e-3, so
/// max-pool winners do not change under a finite-difference step.
inline std::vector<double> separated_input(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n);
  std::shuffle(v.begin(), v.end(), gen);
  return v;
}

inline std::vector<double> random_input(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = U(gen);
  return v;
}

}  // namespace oracle
