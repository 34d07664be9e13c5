#include "mmhar/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mmhar/common.hpp"

namespace mmhar {
namespace {

constexpr Vec3 kReference{0.0, 0.0, 1.0};

void add_noise(ImuWindow& w, double frac, Rng& rng) {
  // Channels 0..5 are accel and gyro.
  for (std::size_t i = 0; i < 6 * w.length; ++i) {
    double x = w.data[i];
    w.data[i] = x + rng.uniform(-1.0, 1.0) * frac * std::abs(x);
  }
}

}  // namespace

std::vector<ImuWindow> ka_augment(const ImuWindow& w, const KaConfig& cfg) {
  if (!(cfg.noise_frac >= 0.0)) fail(ErrorKind::Config, "KA noise_frac must be >= 0");
  for (double a : cfg.rotation_angles) {
    if (!std::isfinite(a)) fail(ErrorKind::Config, "KA rotation angles must be finite");
  }
  std::vector<Quaternion> base(w.length);
  for (std::size_t t = 0; t < w.length; ++t) {
    Quaternion q = w.orientation(t);
    double n = norm(q);
    if (!std::isfinite(n) || n == 0.0) {
      fail(ErrorKind::Data, "degenerate orientation at sample " + std::to_string(t) +
                                " of window " + w.id);
    }
    base[t] = normalized(q);
  }

  Rng rng(cfg.seed);
  std::vector<ImuWindow> out;
  out.reserve(cfg.outputs_per_window());
  for (std::size_t k = 0; k < cfg.rotation_angles.size(); ++k) {
    Quaternion r = axis_angle_quat(cfg.rotation_axis, cfg.rotation_angles[k]);
    ImuWindow aug = w;
    aug.id = w.id + "/ka:rot" + std::to_string(k);
    for (std::size_t t = 0; t < w.length; ++t) aug.set_orientation(t, qmul(r, base[t]));
    add_noise(aug, cfg.noise_frac, rng);
    out.push_back(std::move(aug));
  }
  for (std::size_t k = 0; k < cfg.mirror_planes.size(); ++k) {
    Vec3 n = normalized(cfg.mirror_planes[k]);
    ImuWindow aug = w;
    aug.id = w.id + "/ka:mir" + std::to_string(k);
    for (std::size_t t = 0; t < w.length; ++t) {
      Vec3 v = rotate_vec(base[t], kReference);
      Vec3 m = normalized(mirror_vec(v, n));
      aug.set_orientation(t, transition_quat(kReference, m));
    }
    add_noise(aug, cfg.noise_frac, rng);
    out.push_back(std::move(aug));
  }
  return out;
}

FeatureImage affine_warp(const FeatureImage& img, const AffineParams& p) {
  FeatureImage out = img;
  const double cx = (static_cast<double>(img.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(img.height) - 1.0) / 2.0;
  const double c = std::cos(p.rotate_rad), s = std::sin(p.rotate_rad);
  const auto W = static_cast<long>(img.width), H = static_cast<long>(img.height);
  auto sample = [&](long y, long x, std::size_t ch) -> double {
    if (x < 0 || y < 0 || x >= W || y >= H) return 0.0;
    return img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), ch);
  };
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      double dx = static_cast<double>(x) - cx - p.tx;
      double dy = static_cast<double>(y) - cy - p.ty;
      // Inverse rotation then inverse scale.
      double sx = (c * dx + s * dy) / p.scale + cx;
      double sy = (-s * dx + c * dy) / p.scale + cy;
      double fx0 = std::floor(sx), fy0 = std::floor(sy);
      double fx = sx - fx0, fy = sy - fy0;
      auto x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
      for (std::size_t ch = 0; ch < img.depth; ++ch) {
        double v = (1 - fy) * ((1 - fx) * sample(y0, x0, ch) + fx * sample(y0, x0 + 1, ch)) +
                   fy * ((1 - fx) * sample(y0 + 1, x0, ch) + fx * sample(y0 + 1, x0 + 1, ch));
        out.at(y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

std::vector<FeatureImage> ja_augment(const FeatureImage& img, const JaConfig& cfg) {
  if (!(cfg.scale_range[0] > 0.0) || cfg.scale_range[0] > cfg.scale_range[1]) {
    fail(ErrorKind::Config, "JA scale_range must be positive and ordered");
  }
  if (cfg.rotate_deg_range[0] > cfg.rotate_deg_range[1]) {
    fail(ErrorKind::Config, "JA rotate_deg_range must be ordered");
  }
  Rng rng(cfg.seed);
  std::vector<FeatureImage> out;
  out.reserve(cfg.per_original);
  for (std::size_t k = 0; k < cfg.per_original; ++k) {
    AffineParams p;
    p.tx = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * static_cast<double>(img.width);
    p.ty = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * static_cast<double>(img.height);
    p.scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1]);
    p.rotate_rad = rng.uniform(cfg.rotate_deg_range[0], cfg.rotate_deg_range[1]) *
                   std::numbers::pi / 180.0;
    FeatureImage warped = affine_warp(img, p);
    warped.provenance = img.provenance + "/ja:" + std::to_string(k);
    out.push_back(std::move(warped));
  }
  return out;
}

AugmentMode augment_mode_from_string(std::string_view s) {
  if (s == "none") return AugmentMode::None;
  if (s == "JA" || s == "ja") return AugmentMode::JA;
  if (s == "KA" || s == "ka") return AugmentMode::KA;
  if (s == "JA+KA" || s == "ja+ka" || s == "KA+JA") return AugmentMode::JAKA;
  fail(ErrorKind::Config, "unknown augmentation mode '" + std::string(s) +
                              "' (expected none|JA|KA|JA+KA)");
}

std::string_view to_string(AugmentMode m) {
  switch (m) {
    case AugmentMode::None:
      return "none";
    case AugmentMode::JA:
      return "JA";
    case AugmentMode::KA:
      return "KA";
    case AugmentMode::JAKA:
      return "JA+KA";
  }
  return "none";
}

std::size_t augment_multiplier(AugmentMode mode, const KaConfig& ka, const JaConfig& ja) {
  std::size_t m = 1;
  if (mode == AugmentMode::KA || mode == AugmentMode::JAKA) m += ka.outputs_per_window();
  if (mode == AugmentMode::JA || mode == AugmentMode::JAKA) m += ja.per_original;
  return m;
}

std::vector<FeatureImage> ka_images(const ImuWindow& w, const KaConfig& ka,
                                    const WindowTransform& transform) {
  KaConfig local = ka;
  local.seed = derive_seed(ka.seed, fnv1a(w.id));
  std::vector<FeatureImage> out;
  for (const auto& aw : ka_augment(w, local)) {
    FeatureImage img = transform(aw);
    img.window_id = w.id;
    img.provenance = aw.id;
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<FeatureImage> ja_images(const FeatureImage& base, const JaConfig& ja) {
  JaConfig local = ja;
  local.seed = derive_seed(ja.seed, fnv1a(base.window_id));
  return ja_augment(base, local);
}

std::vector<FeatureImage> augment_dataset(std::span<const ImuWindow> originals, AugmentMode mode,
                                          const KaConfig& ka, const JaConfig& ja,
                                          const WindowTransform& transform) {
  std::vector<FeatureImage> base;
  base.reserve(originals.size() * augment_multiplier(mode, ka, ja));
  for (const auto& w : originals) base.push_back(transform(w));
  std::vector<FeatureImage> out = base;
  if (mode == AugmentMode::KA || mode == AugmentMode::JAKA) {
    for (const auto& w : originals) {
      for (auto& img : ka_images(w, ka, transform)) out.push_back(std::move(img));
    }
  }
  if (mode == AugmentMode::JA || mode == AugmentMode::JAKA) {
    for (const auto& img : base) {
      for (auto& j : ja_images(img, ja)) out.push_back(std::move(j));
    }
  }
  return out;
}

}  // namespace mmhar
