#include "mmhar/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmhar/parallel.hpp"

namespace mmhar::nn {

Tensor::Tensor(std::vector<std::size_t> d, double fill)
    : dims(std::move(d)), data(volume(dims), fill) {}

std::size_t Tensor::volume(std::span<const std::size_t> d) {
  return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
}

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::Conv3D: return "conv3d";
    case LayerKind::MaxPool2D: return "maxpool2d";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

std::string_view to_string(Activation a) { return a == Activation::Relu ? "relu" : "linear"; }
std::string_view to_string(Padding p) { return p == Padding::Same ? "same" : "valid"; }

namespace {

LayerKind kind_from_string(std::string_view s) {
  for (auto k : {LayerKind::Conv2D, LayerKind::Conv3D, LayerKind::MaxPool2D, LayerKind::Flatten,
                 LayerKind::Dense, LayerKind::Dropout, LayerKind::Softmax}) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorKind::Config, "unknown layer kind '" + std::string(s) + "'");
}

}  // namespace

LayerSpec LayerSpec::conv2d(std::size_t filters, std::size_t kh, std::size_t kw, Padding pad,
                            Activation act) {
  LayerSpec s;
  s.kind = LayerKind::Conv2D;
  s.filters = filters;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.padding = pad;
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::conv3d(std::size_t filters, std::size_t kt, std::size_t kh, std::size_t kw,
                            Padding pad, Activation act) {
  LayerSpec s = conv2d(filters, kh, kw, pad, act);
  s.kind = LayerKind::Conv3D;
  s.kernel_t = kt;
  return s;
}

LayerSpec LayerSpec::maxpool2d(std::size_t pool) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool2D;
  s.pool = pool;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t units, Activation act) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.units = units;
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec s;
  s.kind = LayerKind::Dropout;
  s.dropout_rate = rate;
  return s;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec s;
  s.kind = LayerKind::Softmax;
  return s;
}

std::vector<LayerSpec> build_m1_architecture(std::size_t height, std::size_t width,
                                             std::size_t depth, std::size_t classes,
                                             const M1Options& opt) {
  if (height < 8 || width < 8) fail(ErrorKind::Config, "M1 architecture needs inputs >= 8×8");
  if (classes < 2) fail(ErrorKind::Config, "M1 architecture needs at least two classes");
  if (depth == 0) fail(ErrorKind::Config, "input depth must be positive");
  return {
      LayerSpec::conv2d(opt.conv1_filters, opt.kernel, opt.kernel, Padding::Same, Activation::Relu),
      LayerSpec::maxpool2d(2),
      LayerSpec::conv2d(opt.conv2_filters, opt.kernel, opt.kernel, Padding::Same, Activation::Relu),
      LayerSpec::maxpool2d(2),
      LayerSpec::flatten(),
      LayerSpec::dense(opt.dense_units, Activation::Relu),
      LayerSpec::dropout(opt.dropout_rate),
      LayerSpec::dense(classes, Activation::Linear),
      LayerSpec::softmax(),
  };
}

// ---------------------------------------------------------------------------
// Convolution kernels. 2D convolution runs as 3D with a unit leading axis.

namespace {

struct ConvGeom {
  std::size_t L, H, W, K;     // input
  std::size_t R, P, Q, F;     // kernel extents and filters
  std::size_t pt, ph, pw;     // leading pads
  std::size_t L2, H2, W2;     // output
};

std::size_t pad_before(std::size_t k, Padding p) { return p == Padding::Same ? (k - 1) / 2 : 0; }

ConvGeom conv_geom(const std::vector<std::size_t>& in, const LayerSpec& s) {
  ConvGeom g{};
  if (s.kind == LayerKind::Conv2D) {
    g.L = 1, g.H = in[0], g.W = in[1], g.K = in[2];
    g.R = 1;
  } else {
    g.L = in[0], g.H = in[1], g.W = in[2], g.K = in[3];
    g.R = s.kernel_t;
  }
  g.P = s.kernel_h, g.Q = s.kernel_w, g.F = s.filters;
  g.pt = pad_before(g.R, s.padding);
  g.ph = pad_before(g.P, s.padding);
  g.pw = pad_before(g.Q, s.padding);
  if (s.padding == Padding::Same) {
    g.L2 = g.L, g.H2 = g.H, g.W2 = g.W;
  } else {
    g.L2 = g.L + 1 - g.R, g.H2 = g.H + 1 - g.P, g.W2 = g.W + 1 - g.Q;
  }
  return g;
}

// Offset of input coordinate o + k - pad, or -1 when it falls in the padding.
inline long tap(std::size_t o, std::size_t k, std::size_t pad, std::size_t extent) {
  long i = static_cast<long>(o + k) - static_cast<long>(pad);
  return (i < 0 || i >= static_cast<long>(extent)) ? -1 : i;
}

void conv_forward(const ConvGeom& g, const double* in, const double* w, const double* b,
                  Activation act, double* out) {
  const std::size_t F = g.F, K = g.K;
  for (std::size_t z = 0; z < g.L2; ++z) {
    for (std::size_t y = 0; y < g.H2; ++y) {
      for (std::size_t x = 0; x < g.W2; ++x) {
        double* o = out + ((z * g.H2 + y) * g.W2 + x) * F;
        std::copy(b, b + F, o);
        for (std::size_t r = 0; r < g.R; ++r) {
          long iz = tap(z, r, g.pt, g.L);
          if (iz < 0) continue;
          for (std::size_t p = 0; p < g.P; ++p) {
            long iy = tap(y, p, g.ph, g.H);
            if (iy < 0) continue;
            for (std::size_t q = 0; q < g.Q; ++q) {
              long ix = tap(x, q, g.pw, g.W);
              if (ix < 0) continue;
              const double* ip =
                  in + ((static_cast<std::size_t>(iz) * g.H + static_cast<std::size_t>(iy)) * g.W +
                        static_cast<std::size_t>(ix)) * K;
              const double* wp = w + (((r * g.P + p) * g.Q + q) * K) * F;
              for (std::size_t k = 0; k < K; ++k) {
                const double a = ip[k];
                const double* wk = wp + k * F;
                for (std::size_t f = 0; f < F; ++f) o[f] += a * wk[f];
              }
            }
          }
        }
        if (act == Activation::Relu) {
          for (std::size_t f = 0; f < F; ++f) o[f] = o[f] > 0.0 ? o[f] : 0.0;
        }
      }
    }
  }
}

void conv_backward(const ConvGeom& g, const double* in, const double* w, const double* out,
                   const double* gout, Activation act, double* gin, double* gw, double* gb) {
  const std::size_t F = g.F, K = g.K;
  std::vector<double> gv(F);
  std::fill(gin, gin + g.L * g.H * g.W * K, 0.0);
  for (std::size_t z = 0; z < g.L2; ++z) {
    for (std::size_t y = 0; y < g.H2; ++y) {
      for (std::size_t x = 0; x < g.W2; ++x) {
        std::size_t oi = ((z * g.H2 + y) * g.W2 + x) * F;
        bool any = false;
        for (std::size_t f = 0; f < F; ++f) {
          double v = gout[oi + f];
          if (act == Activation::Relu && !(out[oi + f] > 0.0)) v = 0.0;
          gv[f] = v;
          gb[f] += v;
          any = any || v != 0.0;
        }
        if (!any) continue;
        for (std::size_t r = 0; r < g.R; ++r) {
          long iz = tap(z, r, g.pt, g.L);
          if (iz < 0) continue;
          for (std::size_t p = 0; p < g.P; ++p) {
            long iy = tap(y, p, g.ph, g.H);
            if (iy < 0) continue;
            for (std::size_t q = 0; q < g.Q; ++q) {
              long ix = tap(x, q, g.pw, g.W);
              if (ix < 0) continue;
              std::size_t ii =
                  ((static_cast<std::size_t>(iz) * g.H + static_cast<std::size_t>(iy)) * g.W +
                   static_cast<std::size_t>(ix)) * K;
              std::size_t wi = (((r * g.P + p) * g.Q + q) * K) * F;
              for (std::size_t k = 0; k < K; ++k) {
                const double a = in[ii + k];
                const double* wk = w + wi + k * F;
                double* gwk = gw + wi + k * F;
                double s = 0.0;
                for (std::size_t f = 0; f < F; ++f) {
                  s += wk[f] * gv[f];
                  gwk[f] += a * gv[f];
                }
                gin[ii + k] += s;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Network

Network::Network(std::vector<std::size_t> input_dims, std::vector<LayerSpec> specs)
    : input_dims_(std::move(input_dims)), specs_(std::move(specs)) {
  if (input_dims_.empty() || Tensor::volume(input_dims_) == 0) {
    fail(ErrorKind::Config, "network input shape must be non-empty");
  }
  shapes_.push_back(input_dims_);
  params_.weights.resize(specs_.size());
  params_.biases.resize(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    const auto& in = shapes_.back();
    auto where = "layer " + std::to_string(i) + " (" + std::string(to_string(s.kind)) + "): ";
    std::vector<std::size_t> out;
    switch (s.kind) {
      case LayerKind::Conv2D:
      case LayerKind::Conv3D: {
        std::size_t rank = s.kind == LayerKind::Conv2D ? 3 : 4;
        if (in.size() != rank) {
          fail(ErrorKind::Config, where + "expects a rank-" + std::to_string(rank) + " input");
        }
        if (s.filters == 0 || s.kernel_h == 0 || s.kernel_w == 0 || s.kernel_t == 0) {
          fail(ErrorKind::Config, where + "kernel extents and filters must be positive");
        }
        ConvGeom g = conv_geom(in, s);
        if (s.padding == Padding::Valid && (g.L < g.R || g.H < g.P || g.W < g.Q)) {
          fail(ErrorKind::Config, where + "kernel larger than input with valid padding");
        }
        out = rank == 3 ? std::vector<std::size_t>{g.H2, g.W2, g.F}
                        : std::vector<std::size_t>{g.L2, g.H2, g.W2, g.F};
        params_.weights[i] =
            rank == 3 ? Tensor({g.P, g.Q, g.K, g.F}) : Tensor({g.R, g.P, g.Q, g.K, g.F});
        params_.biases[i] = Tensor({g.F});
        break;
      }
      case LayerKind::MaxPool2D:
        if (in.size() != 3) fail(ErrorKind::Config, where + "expects an H×W×K input");
        if (s.pool == 0 || in[0] < s.pool || in[1] < s.pool) {
          fail(ErrorKind::Config, where + "pool larger than input");
        }
        out = {in[0] / s.pool, in[1] / s.pool, in[2]};
        break;
      case LayerKind::Flatten:
        out = {Tensor::volume(in)};
        break;
      case LayerKind::Dense:
        if (in.size() != 1) fail(ErrorKind::Config, where + "expects a flat input");
        if (s.units == 0) fail(ErrorKind::Config, where + "units must be positive");
        out = {s.units};
        params_.weights[i] = Tensor({s.units, in[0]});
        params_.biases[i] = Tensor({s.units});
        break;
      case LayerKind::Dropout:
        if (!(s.dropout_rate >= 0.0 && s.dropout_rate < 1.0)) {
          fail(ErrorKind::Config, where + "dropout rate must lie in [0, 1)");
        }
        out = in;
        break;
      case LayerKind::Softmax:
        if (in.size() != 1) fail(ErrorKind::Config, where + "expects a flat input");
        out = in;
        break;
    }
    shapes_.push_back(std::move(out));
  }
}

void Network::init_params(std::uint64_t seed) {
  seed_ = seed;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (!specs_[i].has_params()) continue;
    auto& w = params_.weights[i];
    std::size_t fan_in = specs_[i].kind == LayerKind::Dense ? w.dims[1] : w.size() / w.dims.back();
    double gain = specs_[i].activation == Activation::Relu ? 6.0 : 3.0;
    double limit = std::sqrt(gain / static_cast<double>(fan_in));
    Rng rng(derive_seed(seed, i));
    for (auto& v : w.data) v = rng.uniform(-limit, limit);
    std::fill(params_.biases[i].data.begin(), params_.biases[i].data.end(), 0.0);
  }
}

Params Network::zero_like() const {
  Params z = params_;
  for (auto& t : z.weights) std::fill(t.data.begin(), t.data.end(), 0.0);
  for (auto& t : z.biases) std::fill(t.data.begin(), t.data.end(), 0.0);
  return z;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < specs_.size(); ++i) n += params_.weights[i].size() + params_.biases[i].size();
  return n;
}

std::string Network::architecture_string() const {
  std::ostringstream os;
  os << "in";
  for (auto d : input_dims_) os << ':' << d;
  for (const auto& s : specs_) {
    os << '|' << to_string(s.kind);
    switch (s.kind) {
      case LayerKind::Conv2D:
      case LayerKind::Conv3D:
        os << " f=" << s.filters << " k=" << s.kernel_t << 'x' << s.kernel_h << 'x' << s.kernel_w
           << " pad=" << to_string(s.padding) << " act=" << to_string(s.activation);
        break;
      case LayerKind::MaxPool2D:
        os << " pool=" << s.pool;
        break;
      case LayerKind::Dense:
        os << " units=" << s.units << " act=" << to_string(s.activation);
        break;
      case LayerKind::Dropout:
        os << " rate=" << format_double(s.dropout_rate);
        break;
      default:
        break;
    }
  }
  return os.str();
}

std::uint64_t Network::architecture_hash() const { return fnv1a(architecture_string()); }

std::span<const double> Network::forward(std::span<const double> input, Workspace& ws,
                                         bool training, Rng* dropout_rng) const {
  const std::size_t n = specs_.size();
  if (input.size() != Tensor::volume(input_dims_)) {
    fail(ErrorKind::Data, "network input has " + std::to_string(input.size()) +
                              " values, expected " + std::to_string(Tensor::volume(input_dims_)));
  }
  bool fresh = ws.acts.size() != n + 1;
  for (std::size_t i = 0; !fresh && i <= n; ++i) fresh = ws.acts[i].dims != shapes_[i];
  if (fresh) {
    ws.acts.clear();
    for (const auto& s : shapes_) ws.acts.emplace_back(s);
    ws.argmax.assign(n, {});
    ws.masks.assign(n, {});
    ws.grads.clear();
    for (const auto& s : shapes_) ws.grads.emplace_back(s);
  }
  std::copy(input.begin(), input.end(), ws.acts[0].data.begin());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = specs_[i];
    const auto& in = ws.acts[i].data;
    auto& out = ws.acts[i + 1].data;
    switch (s.kind) {
      case LayerKind::Conv2D:
      case LayerKind::Conv3D:
        conv_forward(conv_geom(shapes_[i], s), in.data(), params_.weights[i].data.data(),
                     params_.biases[i].data.data(), s.activation, out.data());
        break;
      case LayerKind::MaxPool2D: {
        const auto& d = shapes_[i];
        const std::size_t W = d[1], K = d[2];
        const std::size_t H2 = shapes_[i + 1][0], W2 = shapes_[i + 1][1];
        auto& am = ws.argmax[i];
        am.resize(out.size());
        for (std::size_t y = 0; y < H2; ++y) {
          for (std::size_t x = 0; x < W2; ++x) {
            for (std::size_t k = 0; k < K; ++k) {
              std::size_t best = ((y * s.pool) * W + x * s.pool) * K + k;
              for (std::size_t py = 0; py < s.pool; ++py) {
                for (std::size_t px = 0; px < s.pool; ++px) {
                  std::size_t idx = ((y * s.pool + py) * W + x * s.pool + px) * K + k;
                  if (in[idx] > in[best]) best = idx;
                }
              }
              std::size_t o = (y * W2 + x) * K + k;
              out[o] = in[best];
              am[o] = static_cast<std::uint32_t>(best);
            }
          }
        }
        break;
      }
      case LayerKind::Flatten:
        std::copy(in.begin(), in.end(), out.begin());
        break;
      case LayerKind::Dense: {
        const std::size_t N = shapes_[i][0], U = s.units;
        const double* w = params_.weights[i].data.data();
        const double* b = params_.biases[i].data.data();
        for (std::size_t j = 0; j < U; ++j) {
          const double* wj = w + j * N;
          double acc = 0.0;
          for (std::size_t k = 0; k < N; ++k) acc += wj[k] * in[k];
          acc += b[j];
          out[j] = s.activation == Activation::Relu && acc < 0.0 ? 0.0 : acc;
        }
        break;
      }
      case LayerKind::Dropout: {
        auto& m = ws.masks[i];
        if (training && s.dropout_rate > 0.0) {
          if (dropout_rng == nullptr) fail(ErrorKind::Config, "training dropout needs an RNG");
          m.resize(in.size());
          const double keep = 1.0 / (1.0 - s.dropout_rate);
          for (std::size_t k = 0; k < in.size(); ++k) {
            m[k] = dropout_rng->uniform() >= s.dropout_rate ? keep : 0.0;
            out[k] = in[k] * m[k];
          }
        } else {
          m.assign(in.size(), 1.0);
          std::copy(in.begin(), in.end(), out.begin());
        }
        break;
      }
      case LayerKind::Softmax: {
        auto p = softmax(in);
        std::copy(p.begin(), p.end(), out.begin());
        break;
      }
    }
  }
  return ws.acts[n].data;
}

const Tensor& Network::backward(Workspace& ws, std::span<const double> grad_out, Params& grads,
                                std::size_t last_layer) const {
  if (last_layer >= specs_.size() || ws.acts.size() != specs_.size() + 1) {
    fail(ErrorKind::Config, "backward called without a matching forward pass");
  }
  auto& top = ws.grads[last_layer + 1].data;
  if (grad_out.size() != top.size()) fail(ErrorKind::Data, "gradient shape mismatch");
  std::copy(grad_out.begin(), grad_out.end(), top.begin());
  for (std::size_t li = last_layer + 1; li-- > 0;) {
    const auto& s = specs_[li];
    const auto& in = ws.acts[li].data;
    const auto& out = ws.acts[li + 1].data;
    const auto& gout = ws.grads[li + 1].data;
    auto& gin = ws.grads[li].data;
    switch (s.kind) {
      case LayerKind::Conv2D:
      case LayerKind::Conv3D:
        conv_backward(conv_geom(shapes_[li], s), in.data(), params_.weights[li].data.data(),
                      out.data(), gout.data(), s.activation, gin.data(),
                      grads.weights[li].data.data(), grads.biases[li].data.data());
        break;
      case LayerKind::MaxPool2D: {
        std::fill(gin.begin(), gin.end(), 0.0);
        const auto& am = ws.argmax[li];
        for (std::size_t o = 0; o < gout.size(); ++o) gin[am[o]] += gout[o];
        break;
      }
      case LayerKind::Flatten:
        std::copy(gout.begin(), gout.end(), gin.begin());
        break;
      case LayerKind::Dense: {
        const std::size_t N = shapes_[li][0], U = s.units;
        const double* w = params_.weights[li].data.data();
        double* gw = grads.weights[li].data.data();
        double* gb = grads.biases[li].data.data();
        std::fill(gin.begin(), gin.end(), 0.0);
        for (std::size_t j = 0; j < U; ++j) {
          double g = gout[j];
          if (s.activation == Activation::Relu && !(out[j] > 0.0)) g = 0.0;
          if (g == 0.0) continue;
          gb[j] += g;
          const double* wj = w + j * N;
          double* gwj = gw + j * N;
          for (std::size_t k = 0; k < N; ++k) {
            gwj[k] += g * in[k];
            gin[k] += g * wj[k];
          }
        }
        break;
      }
      case LayerKind::Dropout: {
        const auto& m = ws.masks[li];
        for (std::size_t k = 0; k < gin.size(); ++k) gin[k] = gout[k] * m[k];
        break;
      }
      case LayerKind::Softmax: {
        double dotp = 0.0;
        for (std::size_t k = 0; k < out.size(); ++k) dotp += gout[k] * out[k];
        for (std::size_t k = 0; k < out.size(); ++k) gin[k] = out[k] * (gout[k] - dotp);
        break;
      }
    }
  }
  return ws.grads[0];
}

std::vector<double> Network::predict(std::span<const double> input) const {
  Workspace ws;
  auto out = forward(input, ws, false, nullptr);
  return {out.begin(), out.end()};
}

// ---------------------------------------------------------------------------
// Loss

std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> p(scores.size());
  if (scores.empty()) return p;
  double m = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

double cross_entropy(std::span<const double> probs, int label) {
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], kProbFloor));
}

double l2_penalty(const Params& params, double lambda) {
  double s = 0.0;
  for (const auto& w : params.weights)
    for (double v : w.data) s += v * v;
  return lambda * s;
}

double loss(std::span<const std::vector<double>> probs, std::span<const int> labels,
            const Params& params, double lambda) {
  if (probs.size() != labels.size()) fail(ErrorKind::Data, "loss: batch size mismatch");
  double data = 0.0;
  for (std::size_t n = 0; n < probs.size(); ++n) data += cross_entropy(probs[n], labels[n]);
  return data + l2_penalty(params, lambda);
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(lr > 0.0)) fail(ErrorKind::Config, "lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::Config, "momentum must lie in [0, 1)");
  if (!(l2_lambda >= 0.0)) fail(ErrorKind::Config, "l2 must be non-negative");
  if (batch_size == 0) fail(ErrorKind::Config, "batch size must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    fail(ErrorKind::Config, "dropout rate must lie in [0, 1)");
  }
  if (threads == 0) fail(ErrorKind::Config, "threads must be positive");
}

namespace {

// Gradient reduction unit. Fixed size so the summation order never depends on
// the worker count.
constexpr std::size_t kChunk = 8;

void add_into(Params& dst, const Params& src) {
  for (std::size_t i = 0; i < dst.weights.size(); ++i) {
    auto& dw = dst.weights[i].data;
    const auto& sw = src.weights[i].data;
    for (std::size_t k = 0; k < dw.size(); ++k) dw[k] += sw[k];
    auto& db = dst.biases[i].data;
    const auto& sb = src.biases[i].data;
    for (std::size_t k = 0; k < db.size(); ++k) db[k] += sb[k];
  }
}

void zero(Params& p) {
  for (auto& t : p.weights) std::fill(t.data.begin(), t.data.end(), 0.0);
  for (auto& t : p.biases) std::fill(t.data.begin(), t.data.end(), 0.0);
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

Trainer::Trainer(Network& net, TrainConfig cfg) : net_(net), cfg_(cfg) {
  cfg_.validate();
  if (net_.specs().empty() || net_.specs().back().kind != LayerKind::Softmax) {
    fail(ErrorKind::Config, "training needs a network ending in softmax");
  }
  velocity_ = net_.zero_like();
}

double Trainer::step(std::span<const Sample> batch) {
  const std::size_t B = batch.size();
  if (B == 0) return 0.0;
  const std::size_t chunks = (B + kChunk - 1) / kChunk;
  const std::size_t n_layers = net_.specs().size();
  const std::size_t classes = net_.num_outputs();

  auto& states = chunks_;
  if (states.size() < chunks) states.resize(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    auto& st = states[c];
    if (st.grads.weights.size() != n_layers) {
      st.grads = net_.zero_like();
      st.ws = Workspace{};
    } else {
      zero(st.grads);
    }
    st.loss = 0.0;
    st.correct = 0;
  }
  const std::uint64_t step_seed = derive_seed(derive_seed(cfg_.seed, "dropout"), steps_);

  parallel_for(chunks, cfg_.threads, [&](std::size_t c, std::size_t) {
    auto& st = states[c];
    std::vector<double> grad(classes);
    for (std::size_t i = c * kChunk; i < std::min(B, (c + 1) * kChunk); ++i) {
      const auto& s = batch[i];
      st.input.assign(s.input.begin(), s.input.end());
      Rng rng(derive_seed(step_seed, i));
      auto probs = net_.forward(st.input, st.ws, true, &rng);
      st.loss += cross_entropy(probs, s.label);
      st.correct += argmax(probs) == static_cast<std::size_t>(s.label) ? 1 : 0;
      for (std::size_t k = 0; k < classes; ++k) {
        grad[k] = probs[k] - (k == static_cast<std::size_t>(s.label) ? 1.0 : 0.0);
      }
      net_.backward(st.ws, grad, st.grads, n_layers - 2);
    }
  });

  Params& total = states[0].grads;
  double batch_loss = states[0].loss;
  for (std::size_t c = 1; c < chunks; ++c) {
    add_into(total, states[c].grads);
    batch_loss += states[c].loss;
  }
  batch_loss += l2_penalty(net_.params(), cfg_.l2_lambda);
  if (!std::isfinite(batch_loss)) {
    fail(ErrorKind::Numeric, "non-finite loss at epoch " + std::to_string(epoch_) + ", step " +
                                 std::to_string(steps_) + " (batch of " + std::to_string(B) +
                                 ", lr " + format_double(cfg_.lr) + ")");
  }
  auto& params = net_.params();
  for (std::size_t li = 0; li < n_layers; ++li) {
    auto& w = params.weights[li].data;
    auto& gw = total.weights[li].data;
    auto& vw = velocity_.weights[li].data;
    for (std::size_t k = 0; k < w.size(); ++k) {
      double g = gw[k] + 2.0 * cfg_.l2_lambda * w[k];
      vw[k] = cfg_.momentum * vw[k] - cfg_.lr * g;
      w[k] += vw[k];
    }
    auto& b = params.biases[li].data;
    auto& gb = total.biases[li].data;
    auto& vb = velocity_.biases[li].data;
    for (std::size_t k = 0; k < b.size(); ++k) {
      vb[k] = cfg_.momentum * vb[k] - cfg_.lr * gb[k];
      b[k] += vb[k];
    }
  }
  std::size_t correct = 0;
  for (std::size_t c = 0; c < chunks; ++c) correct += states[c].correct;
  last_correct_ = correct;
  ++steps_;
  return batch_loss;
}

std::vector<EpochStats> Trainer::fit(std::span<const Sample> samples,
                                     const std::function<void(const EpochStats&)>& on_epoch) {
  std::vector<EpochStats> history;
  if (samples.empty()) return history;
  std::vector<std::size_t> order(samples.size());
  std::vector<Sample> batch;
  for (std::size_t e = 0; e < cfg_.epochs; ++e, ++epoch_) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(derive_seed(cfg_.seed, "shuffle"), epoch_));
    rng.shuffle(order);
    double data_loss = 0.0, penalty = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg_.batch_size); ++i) {
        batch.push_back(samples[order[i]]);
      }
      penalty = l2_penalty(net_.params(), cfg_.l2_lambda);
      data_loss += step(batch) - penalty;
      correct += last_correct_;
    }
    EpochStats st;
    st.epoch = epoch_;
    st.mean_loss = data_loss / static_cast<double>(samples.size()) + penalty;
    st.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return history;
}

std::vector<std::vector<double>> predict_batch(const Network& net,
                                               std::span<const std::span<const float>> inputs,
                                               std::size_t threads) {
  std::vector<std::vector<double>> out(inputs.size());
  std::size_t workers = std::max<std::size_t>(1, threads);
  std::vector<Workspace> ws(workers);
  std::vector<std::vector<double>> buf(workers);
  parallel_for(inputs.size(), workers, [&](std::size_t i, std::size_t w) {
    buf[w].assign(inputs[i].begin(), inputs[i].end());
    auto p = net.forward(buf[w], ws[w], false, nullptr);
    out[i].assign(p.begin(), p.end());
  });
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr char kModelMagic[4] = {'H', 'A', 'R', 'W'};
constexpr std::uint16_t kModelVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}
}  // namespace

void write_model(std::ostream& out, const Network& net) {
  out.write(kModelMagic, 4);
  write_le<std::uint16_t>(out, kModelVersion);
  write_le<std::uint64_t>(out, net.architecture_hash());
  write_le<std::uint64_t>(out, net.seed());
  std::uint32_t count = 0;
  for (const auto& s : net.specs()) count += s.has_params() ? 2 : 0;
  write_le<std::uint32_t>(out, count);
  for (std::size_t i = 0; i < net.specs().size(); ++i) {
    if (!net.specs()[i].has_params()) continue;
    write_tensor(out, net.params().weights[i]);
    write_tensor(out, net.params().biases[i]);
  }
}

void read_model(std::istream& in, Network& net) {
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kModelMagic, 4)) {
    fail(ErrorKind::Data, "not a model file (bad magic)");
  }
  if (read_le<std::uint16_t>(in, "model version") != kModelVersion) {
    fail(ErrorKind::Data, "unsupported model file version");
  }
  auto hash = read_le<std::uint64_t>(in, "architecture hash");
  if (hash != net.architecture_hash()) {
    fail(ErrorKind::Provenance, "architecture hash mismatch: file has " + hex64(hash) +
                                    ", configuration gives " + hex64(net.architecture_hash()));
  }
  auto seed = read_le<std::uint64_t>(in, "seed");
  auto count = read_le<std::uint32_t>(in, "tensor count");
  Params p = net.zero_like();
  std::uint32_t seen = 0;
  for (std::size_t i = 0; i < net.specs().size(); ++i) {
    if (!net.specs()[i].has_params()) continue;
    for (Tensor* t : {&p.weights[i], &p.biases[i]}) {
      if (seen++ >= count) fail(ErrorKind::Data, "model file has too few tensors");
      auto nd = read_le<std::uint32_t>(in, "tensor rank");
      if (nd != t->dims.size()) fail(ErrorKind::Data, "model tensor rank mismatch");
      for (auto d : t->dims) {
        if (read_le<std::uint32_t>(in, "tensor dim") != d) {
          fail(ErrorKind::Data, "model tensor shape mismatch");
        }
      }
      if (!in.read(reinterpret_cast<char*>(t->data.data()),
                   static_cast<std::streamsize>(t->data.size() * sizeof(double)))) {
        fail(ErrorKind::Data, "truncated model file");
      }
    }
  }
  if (seen != count) fail(ErrorKind::Data, "model file has extra tensors");
  net.params() = std::move(p);
  net.set_seed(seed);
}

void save_model(const std::string& path, const Network& net, const std::string& sidecar_json) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    write_model(out, net);
  }
  if (!sidecar_json.empty()) write_text_file(path + ".json", sidecar_json);
}

void load_model(const std::string& path, Network& net) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  read_model(in, net);
}

std::string specs_to_json(const std::vector<std::size_t>& input_dims,
                          const std::vector<LayerSpec>& specs) {
  nlohmann::ordered_json j;
  j["input_dims"] = input_dims;
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& s : specs) {
    nlohmann::ordered_json l;
    l["kind"] = to_string(s.kind);
    switch (s.kind) {
      case LayerKind::Conv2D:
      case LayerKind::Conv3D:
        l["filters"] = s.filters;
        l["kernel"] = {s.kernel_t, s.kernel_h, s.kernel_w};
        l["padding"] = to_string(s.padding);
        l["activation"] = to_string(s.activation);
        break;
      case LayerKind::MaxPool2D:
        l["pool"] = s.pool;
        break;
      case LayerKind::Dense:
        l["units"] = s.units;
        l["activation"] = to_string(s.activation);
        break;
      case LayerKind::Dropout:
        l["rate"] = s.dropout_rate;
        break;
      default:
        break;
    }
    layers.push_back(l);
  }
  return j.dump(2);
}

Network network_from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  auto dims = j.at("input_dims").get<std::vector<std::size_t>>();
  std::vector<LayerSpec> specs;
  for (const auto& l : j.at("layers")) {
    LayerSpec s;
    s.kind = kind_from_string(l.at("kind").get<std::string>());
    if (l.contains("filters")) s.filters = l["filters"].get<std::size_t>();
    if (l.contains("kernel")) {
      auto k = l["kernel"].get<std::vector<std::size_t>>();
      s.kernel_t = k.at(0), s.kernel_h = k.at(1), s.kernel_w = k.at(2);
    }
    if (l.contains("padding")) s.padding = l["padding"] == "same" ? Padding::Same : Padding::Valid;
    if (l.contains("activation")) {
      s.activation = l["activation"] == "relu" ? Activation::Relu : Activation::Linear;
    }
    if (l.contains("pool")) s.pool = l["pool"].get<std::size_t>();
    if (l.contains("units")) s.units = l["units"].get<std::size_t>();
    if (l.contains("rate")) s.dropout_rate = l["rate"].get<double>();
    specs.push_back(s);
  }
  return Network(std::move(dims), std::move(specs));
}

}  // namespace mmhar::nn
