#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmhar/imu.hpp"

namespace mmhar {

/// Dense row-major real matrix used for intermediate signal images.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

enum class FeatureKind : std::uint8_t { Freq = 1, Och = 2 };

std::string_view to_string(FeatureKind k);
FeatureKind feature_kind_from_string(std::string_view s);

/// H×W×D image, channel-last. Pixels are 32-bit to match the on-disk format.
struct FeatureImage {
  std::size_t height = 0, width = 0, depth = 1;
  FeatureKind kind = FeatureKind::Freq;
  std::vector<float> pixels;

  std::string window_id;
  int label = 0;
  int subject = 0;
  /// Origin window plus any augmentation applied, e.g. "w000012/ka:rot1".
  std::string provenance;

  float at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * depth + c];
  }
  float& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * depth + c];
  }
};

/// Row order used to expand the 10-row stacked image so that channel pairs
/// become vertical neighbours.
struct RowExpansionPlan {
  std::vector<std::size_t> sequence;
  bool circular = true;
};

Matrix stack_channels(const ImuWindow& w);

/// Eulerian circuit over the complete graph on n_channels vertices. For even
/// n a perfect matching (0-1, 2-3, ...) is duplicated so every degree is even;
/// Hierholzer's walk always takes the smallest-index neighbour first. A
/// non-zero seed relabels vertices with a seeded permutation.
RowExpansionPlan build_expansion_plan(std::size_t n_channels, std::uint64_t seed = 0);

/// Unordered channel pairs never adjacent in the plan.
std::vector<std::pair<std::size_t, std::size_t>> uncovered_pairs(const RowExpansionPlan& plan,
                                                                 std::size_t n_channels);
bool covers_all_pairs(const RowExpansionPlan& plan, std::size_t n_channels);

/// A fixed 42-row layout (the leading 42 rows of the default 10-channel
/// plan, non-circular). It reproduces the 42×64 expanded size; it does not
/// cover every channel pair.
RowExpansionPlan reference_plan_42();

Matrix expand_rows(const Matrix& stacked, const RowExpansionPlan& plan);

/// Full 2D DFT, row-major R×T, F(u,v) = Σ x(r,t) exp(-2πi(ur/R + vt/T)).
std::vector<std::complex<double>> dft2d(const Matrix& image);

/// log(1 + |F|) of the centred spectrum, keeping the non-negative width
/// frequencies (columns T/2..T-1 after centring). Output R × T/2, not
/// normalized.
Matrix freq_log_magnitude(const Matrix& expanded);

/// Same crop as freq_log_magnitude but the raw |F|.
Matrix freq_magnitude(const Matrix& expanded);

/// Per-image min-max into [0,1]; constant images become zeros.
void minmax_normalize(std::span<float> pixels);

FeatureImage freq_transform(const Matrix& expanded);

inline constexpr std::size_t kDefaultOchSize = 64;

/// Orientation-history image: the trajectory of q_t * [0,0,1] projected on
/// the xy, yz and xz planes (channels 0, 1, 2) and drawn as polylines.
FeatureImage och_transform(const ImuWindow& w, std::size_t size = kDefaultOchSize);

/// Pixel coordinates (column, row) of a point in [-1,1]² on a size×size grid.
std::pair<int, int> och_pixel(double u, double v, std::size_t size);

struct TransformConfig {
  RowExpansionPlan plan = build_expansion_plan(kNumChannels);
  std::size_t och_size = kDefaultOchSize;
};

/// Applies the configured transform and stamps window metadata.
FeatureImage transform_window(const ImuWindow& w, FeatureKind kind, const TransformConfig& cfg);

// ---------------------------------------------------------------------------
// "HARI" image files: 16-byte header then H·W·D little-endian f32.

void write_feature_image(std::ostream& out, const FeatureImage& img);
FeatureImage read_feature_image(std::istream& in);

/// A feature set is consecutive HARI records in one file plus a TSV sidecar
/// (index, window id, label, subject, provenance).
void save_feature_set(const std::string& path, std::span<const FeatureImage> images);
std::vector<FeatureImage> load_feature_set(const std::string& path);
std::string feature_sidecar_path(const std::string& path);

/// Binary PGM (depth 1) or PPM (depth 3) preview, pixels scaled from [0,1].
void write_preview(const std::string& path, const FeatureImage& img);

}  // namespace mmhar
