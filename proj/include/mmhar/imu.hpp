#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmhar/quat.hpp"

namespace mmhar {

inline constexpr std::size_t kNumChannels = 10;
inline constexpr std::size_t kDefaultWindow = 64;
inline constexpr double kDefaultOverlap = 0.75;
inline constexpr double kDefaultRateHz = 50.0;

/// Channel order inside every window: accel, gyro, orientation (x, y, z, w).
inline constexpr std::array<std::string_view, kNumChannels> kChannelNames = {
    "ax", "ay", "az", "gx", "gy", "gz", "qx", "qy", "qz", "qw"};

struct ImuRecord {
  std::int64_t t_ms = 0;
  Vec3 accel;
  Vec3 gyro;
  Quaternion orientation;

  std::array<double, kNumChannels> channels() const {
    const auto& q = orientation;
    return {accel.x, accel.y, accel.z, gyro.x, gyro.y, gyro.z, q.x, q.y, q.z, q.w};
  }
};

struct Recording {
  int subject = 0;
  std::vector<ImuRecord> records;
  double rate_hz = kDefaultRateHz;
};

struct Annotation {
  int subject = 0;
  int label = 0;
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
};

/// One sample: 10 channel rows by T timestamps, row-major.
struct ImuWindow {
  std::string id;
  int subject = 0;
  int label = 0;
  std::int64_t t0 = 0;
  std::size_t length = 0;
  std::vector<double> data;

  std::span<double> channel(std::size_t c) {
    return {data.data() + c * length, length};
  }
  std::span<const double> channel(std::size_t c) const {
    return {data.data() + c * length, length};
  }
  Quaternion orientation(std::size_t t) const {
    return {data[6 * length + t], data[7 * length + t], data[8 * length + t],
            data[9 * length + t]};
  }
  void set_orientation(std::size_t t, const Quaternion& q) {
    data[6 * length + t] = q.x;
    data[7 * length + t] = q.y;
    data[8 * length + t] = q.z;
    data[9 * length + t] = q.w;
  }
};

struct Dataset {
  std::vector<ImuWindow> windows;
  std::vector<std::string> class_names;
  std::vector<int> subjects;

  std::size_t num_classes() const { return class_names.size(); }
  /// Throws if a window's label/subject is missing from the catalogs,
  /// shapes disagree, or fewer than two classes exist.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Ingestion

enum class Delimiter { Comma, Tab, Whitespace };

/// Binds source columns to the canonical fields t, ax..qw. A source is a
/// header name, or "#N" for the zero-based column index.
struct ColumnMap {
  static constexpr std::array<std::string_view, 11> kFields = {
      "t", "ax", "ay", "az", "gx", "gy", "gz", "qx", "qy", "qz", "qw"};

  std::array<std::string, 11> sources;
  Delimiter delimiter = Delimiter::Comma;
  bool header = true;
  /// Multiplier from source time units to milliseconds.
  double time_scale = 1.0;

  /// Header names equal the canonical field names; comma separated.
  static ColumnMap standard();
  /// Space-delimited PAMAP2 protocol dumps, hand IMU (±16g accel, gyro,
  /// orientation w-first), timestamps in seconds.
  static ColumnMap pamap2_hand();
  static ColumnMap preset(std::string_view name);
};

struct IngestResult {
  Recording recording;
  std::size_t dropped_rows = 0;
  /// Median sample interval deviates from the nominal rate by more than 10%.
  bool rate_mismatch = false;
  double median_interval_ms = 0.0;
};

IngestResult ingest_recording(const std::string& path, const ColumnMap& map,
                              int subject, double rate_hz = kDefaultRateHz);
IngestResult ingest_recording(std::istream& in, const ColumnMap& map,
                              int subject, double rate_hz = kDefaultRateHz);

/// Labels may be class names or integer indices.
std::vector<Annotation> read_annotations(const std::string& path,
                                         std::span<const std::string> class_names);
std::vector<Annotation> read_annotations(std::istream& in,
                                         std::span<const std::string> class_names);

void write_recording_csv(std::ostream& out, const Recording& rec);
void write_annotations_csv(std::ostream& out, std::span<const Annotation> anns,
                           std::span<const std::string> class_names);

// ---------------------------------------------------------------------------
// Segmentation and sampling

struct Segment {
  int label = 0;
  std::size_t annotation_index = 0;
  std::size_t first_record = 0;
  std::span<const ImuRecord> records;
};

struct SegmentationResult {
  std::vector<Segment> segments;
  /// Indices into segments holding fewer than min_length records.
  std::vector<std::size_t> short_segments;
};

/// One slice per annotation with start_ms <= t < end_ms, in annotation order.
SegmentationResult segment(const Recording& rec, std::span<const Annotation> anns,
                           std::size_t min_length = kDefaultWindow);

/// round(T * (1 - overlap)); throws a config error unless it is >= 1.
std::size_t window_stride(std::size_t length, double overlap);

/// floor((L - T) / stride) + 1 windows for L >= T, otherwise none.
std::vector<ImuWindow> sliding_windows(std::span<const ImuRecord> slice,
                                       std::size_t length, double overlap,
                                       int subject = 0, int label = 0);

struct SummaryTable {
  std::vector<int> subjects;
  std::vector<std::string> classes;
  std::vector<std::vector<std::size_t>> counts;  // [subject][class]

  std::size_t total() const;
  std::string render() const;
};

SummaryTable dataset_summary(const Dataset& ds);

// ---------------------------------------------------------------------------
// Window dataset persistence ("HARD" binary)

void write_dataset(std::ostream& out, const Dataset& ds);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace mmhar
