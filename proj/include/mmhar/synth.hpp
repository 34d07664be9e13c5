#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmhar/imu.hpp"

namespace mmhar {

enum class TrajectoryFamily { Static, Twist, Arc };

/// Generative parameters of one activity class.
struct ClassProfile {
  std::string name;
  double accel_freq_hz = 1.0;
  double accel_amp = 0.0;  // in g
  /// 0 gives a sinusoid, 1 a sharp pulse train.
  double impulsiveness = 0.0;
  Vec3 accel_dir{1, 0, 0};
  TrajectoryFamily family = TrajectoryFamily::Static;
  Vec3 axis{0, 0, 1};
  double traj_freq_hz = 1.0;
  double traj_amp = 0.0;  // radians
  /// Constant tilt applied before the trajectory.
  Quaternion base{0, 0, 0, 1};
  /// Small high-frequency orientation tremor (radians) at accel_freq_hz.
  double tremor = 0.0;
};

/// The six default profiles: GT, HN, UP, RA, TS, UW.
std::vector<ClassProfile> default_class_profiles();

struct SynthConfig {
  std::size_t subjects = 8;
  std::size_t windows_per_class = 100;
  std::vector<ClassProfile> classes = default_class_profiles();
  /// Additive Gaussian noise on accel/gyro relative to each signal's scale.
  double noise = 0.05;
  /// Per-subject heading offset drawn from [-yaw, yaw] about the vertical.
  double yaw_offset = 1.0;
  /// Per-subject tilt offset drawn from [-tilt, tilt] about a horizontal axis.
  double tilt_offset = 0.1;
  /// Per-subject multiplicative jitter on amplitudes and frequencies.
  double subject_jitter = 0.15;
  std::size_t window = kDefaultWindow;
  double overlap = kDefaultOverlap;
  double rate_hz = kDefaultRateHz;
  std::uint64_t seed = 0;

  void validate() const;
  /// Samples per recording: T + stride * (windows_per_class - 1).
  std::size_t recording_length() const;
};

struct SynthRecording {
  Recording recording;
  std::vector<Annotation> annotations;
  std::string name;  // "s<subject>_<class>"
};

struct SynthOutput {
  std::vector<std::string> class_names;
  std::vector<SynthRecording> recordings;
  /// One heading offset per subject (radians), for diagnostics.
  std::vector<Quaternion> subject_offsets;
};

SynthOutput generate(const SynthConfig& cfg);

/// Writes <name>.csv and <name>.ann.csv per recording plus manifest.json
/// listing subject, recording and annotation files.
void write_synth(const std::string& dir, const SynthOutput& out);

}  // namespace mmhar
