#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "mmhar/features.hpp"
#include "mmhar/imu.hpp"
#include "mmhar/quat.hpp"

namespace mmhar {

/// Kinematics augmentation: world-frame rotations and plane mirroring of the
/// orientation channels, multiplicative uniform noise on accel/gyro.
struct KaConfig {
  std::vector<double> rotation_angles = {std::numbers::pi / 8, -std::numbers::pi / 8,
                                         std::numbers::pi / 4, -std::numbers::pi / 4};
  Vec3 rotation_axis{0.0, 0.0, 1.0};
  /// Plane normals: x̂ mirrors across the yz-plane, ŷ across the xz-plane.
  std::vector<Vec3> mirror_planes = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}};
  double noise_frac = 0.05;
  std::uint64_t seed = 0;

  std::size_t outputs_per_window() const { return rotation_angles.size() + mirror_planes.size(); }
};

/// Jittering augmentation: random affine warps of feature images.
struct JaConfig {
  double translate_frac = 0.10;
  std::array<double, 2> scale_range = {0.9, 1.1};
  std::array<double, 2> rotate_deg_range = {-5.0, 5.0};
  std::size_t per_original = 6;
  std::uint64_t seed = 0;
};

/// One window per rotation angle, then one per mirror plane. Ids get a
/// "/ka:rotN" or "/ka:mirN" suffix.
std::vector<ImuWindow> ka_augment(const ImuWindow& w, const KaConfig& cfg);

struct AffineParams {
  double tx = 0.0, ty = 0.0;  // pixels
  double scale = 1.0;
  double rotate_rad = 0.0;
};

/// Warps about the image centre with bilinear sampling, zero fill, values
/// clamped to [0,1].
FeatureImage affine_warp(const FeatureImage& img, const AffineParams& p);

std::vector<FeatureImage> ja_augment(const FeatureImage& img, const JaConfig& cfg);

enum class AugmentMode { None, JA, KA, JAKA };

AugmentMode augment_mode_from_string(std::string_view s);
std::string_view to_string(AugmentMode m);

/// Multiplier applied to the original count, e.g. 7 for KA with defaults.
std::size_t augment_multiplier(AugmentMode mode, const KaConfig& ka, const JaConfig& ja);

using WindowTransform = std::function<FeatureImage(const ImuWindow&)>;

/// Transformed KA variants of one original, seeded from (ka.seed, window id).
std::vector<FeatureImage> ka_images(const ImuWindow& w, const KaConfig& ka,
                                    const WindowTransform& transform);
/// JA warps of one transformed original, seeded from (ja.seed, window id).
std::vector<FeatureImage> ja_images(const FeatureImage& base, const JaConfig& ja);

/// Builds the training image pool: originals first, then KA images (windows
/// augmented before the transform), then JA images (transformed originals
/// warped afterwards).
std::vector<FeatureImage> augment_dataset(std::span<const ImuWindow> originals, AugmentMode mode,
                                          const KaConfig& ka, const JaConfig& ja,
                                          const WindowTransform& transform);

}  // namespace mmhar
