#include "mmhar/synth.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "mmhar/common.hpp"

namespace mmhar {

namespace {

constexpr double kPi = std::numbers::pi;

Quaternion rot(Vec3 axis, double theta) { return axis_angle_quat(axis, theta); }

double pulse(double phase, double impulsiveness) {
  double s = std::sin(phase);
  double p = 1.0 + 7.0 * impulsiveness;
  return std::copysign(std::pow(std::abs(s), p), s);
}

double triangle(double phase) {
  double f = phase / (2.0 * kPi);
  f -= std::floor(f);
  return 4.0 * std::abs(f - 0.5) - 1.0;
}

struct SubjectTraits {
  Quaternion offset;
  double amp_scale = 1.0;
  double freq_scale = 1.0;
};

}  // namespace

std::vector<ClassProfile> default_class_profiles() {
  const Vec3 x{1, 0, 0}, y{0, 1, 0}, z{0, 0, 1};
  std::vector<ClassProfile> p(6);

  p[0].name = "GT";
  p[0].family = TrajectoryFamily::Arc;
  p[0].axis = y;
  p[0].traj_freq_hz = 0.6;
  p[0].traj_amp = 0.7;
  p[0].accel_freq_hz = 0.6;
  p[0].accel_amp = 0.3;
  p[0].accel_dir = x;

  p[1].name = "HN";
  p[1].family = TrajectoryFamily::Twist;
  p[1].axis = y;
  p[1].traj_freq_hz = 2.5;
  p[1].traj_amp = 0.35;
  p[1].base = rot(x, 0.3);
  p[1].accel_freq_hz = 2.5;
  p[1].accel_amp = 1.5;
  p[1].impulsiveness = 1.0;
  p[1].accel_dir = z;

  p[2].name = "UP";
  p[2].family = TrajectoryFamily::Static;
  p[2].base = rot(x, 0.5);
  p[2].accel_freq_hz = 8.0;
  p[2].accel_amp = 0.8;
  p[2].accel_dir = x;
  p[2].tremor = 0.02;

  p[3].name = "RA";
  p[3].family = TrajectoryFamily::Static;
  p[3].base = rot(y, -0.5);
  p[3].accel_freq_hz = 0.3;
  p[3].accel_amp = 0.02;
  p[3].accel_dir = x;

  p[4].name = "TS";
  p[4].family = TrajectoryFamily::Twist;
  p[4].axis = x;
  p[4].traj_freq_hz = 1.5;
  p[4].traj_amp = 0.6;
  p[4].accel_freq_hz = 1.5;
  p[4].accel_amp = 0.2;
  p[4].accel_dir = y;

  p[5].name = "UW";
  p[5].family = TrajectoryFamily::Arc;
  p[5].axis = normalized(Vec3{1, 1, 0});
  p[5].traj_freq_hz = 0.8;
  p[5].traj_amp = 0.6;
  p[5].base = rot(x, -0.3);
  p[5].accel_freq_hz = 0.8;
  p[5].accel_amp = 0.4;
  p[5].accel_dir = y;
  return p;
}

void SynthConfig::validate() const {
  if (subjects == 0) fail(ErrorKind::Config, "synth.subjects must be positive");
  if (windows_per_class == 0) fail(ErrorKind::Config, "synth.windows_per_class must be positive");
  if (classes.size() < 2) fail(ErrorKind::Config, "synth needs at least two class profiles");
  if (noise < 0.0 || yaw_offset < 0.0 || tilt_offset < 0.0 || subject_jitter < 0.0 ||
      subject_jitter >= 1.0) {
    fail(ErrorKind::Config, "synth noise/offset/jitter parameters out of range");
  }
  if (rate_hz <= 0.0) fail(ErrorKind::Config, "synth.rate_hz must be positive");
  window_stride(window, overlap);
}

std::size_t SynthConfig::recording_length() const {
  return window + window_stride(window, overlap) * (windows_per_class - 1);
}

SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthOutput out;
  for (const auto& c : cfg.classes) out.class_names.push_back(c.name);

  const std::size_t L = cfg.recording_length();
  const double dt = 1.0 / cfg.rate_hz;
  const auto dt_ms = static_cast<std::int64_t>(std::llround(1000.0 * dt));
  const Vec3 gravity{0, 0, 1};

  std::vector<SubjectTraits> traits(cfg.subjects);
  for (std::size_t s = 0; s < cfg.subjects; ++s) {
    Rng rng(derive_seed(derive_seed(cfg.seed, "subject"), s));
    double yaw = rng.uniform(-cfg.yaw_offset, cfg.yaw_offset);
    double tilt_dir = rng.uniform(0.0, 2.0 * kPi);
    double tilt = rng.uniform(-cfg.tilt_offset, cfg.tilt_offset);
    Vec3 tilt_axis{std::cos(tilt_dir), std::sin(tilt_dir), 0.0};
    traits[s].offset = qmul(rot({0, 0, 1}, yaw), rot(tilt_axis, tilt));
    traits[s].amp_scale = 1.0 + rng.uniform(-cfg.subject_jitter, cfg.subject_jitter);
    traits[s].freq_scale = 1.0 + rng.uniform(-cfg.subject_jitter, cfg.subject_jitter) * 0.5;
    out.subject_offsets.push_back(traits[s].offset);
  }

  for (std::size_t s = 0; s < cfg.subjects; ++s) {
    for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
      const ClassProfile& p = cfg.classes[c];
      const SubjectTraits& tr = traits[s];
      Rng rng(derive_seed(derive_seed(cfg.seed, "recording"), s * 1000 + c));
      const double phase_t = rng.uniform(0.0, 2.0 * kPi);
      const double phase_a = rng.uniform(0.0, 2.0 * kPi);
      const double ft = p.traj_freq_hz * tr.freq_scale;
      const double fa = p.accel_freq_hz * tr.freq_scale;
      const double amp_t = p.traj_amp * tr.amp_scale;
      const double amp_a = p.accel_amp * tr.amp_scale;
      const Vec3 tremor_axis = normalized(Vec3{rng.uniform(-1, 1), rng.uniform(-1, 1), 1.0});

      auto orientation = [&](double t) {
        double theta = 0.0;
        switch (p.family) {
          case TrajectoryFamily::Static: break;
          case TrajectoryFamily::Twist: theta = amp_t * std::sin(2 * kPi * ft * t + phase_t); break;
          case TrajectoryFamily::Arc: theta = amp_t * triangle(2 * kPi * ft * t + phase_t); break;
        }
        Quaternion q = qmul(p.base, rot(p.axis, theta));
        if (p.tremor > 0.0) {
          q = qmul(q, rot(tremor_axis, p.tremor * std::sin(2 * kPi * fa * t + phase_a)));
        }
        return normalized(qmul(tr.offset, q));
      };

      SynthRecording sr;
      sr.name = "s" + std::to_string(s) + "_" + p.name;
      sr.recording.subject = static_cast<int>(s);
      sr.recording.rate_hz = cfg.rate_hz;
      sr.recording.records.resize(L);
      const std::int64_t t0 = static_cast<std::int64_t>(c) * 1'000'000;

      const double gyro_scale = std::max(1e-3, 2.0 * kPi * ft * amp_t);
      const double accel_scale = std::max(1.0, amp_a);
      for (std::size_t i = 0; i < L; ++i) {
        const double t = static_cast<double>(i) * dt;
        Quaternion q = orientation(t);
        Quaternion qn = orientation(t + dt);
        Quaternion dq = qmul(qconj(q), qn);
        if (dq.w < 0) dq = {-dq.x, -dq.y, -dq.z, -dq.w};
        Vec3 omega{2.0 * dq.x / dt, 2.0 * dq.y / dt, 2.0 * dq.z / dt};

        Vec3 a = rotate_vec(qconj(q), gravity);
        a = a + pulse(2 * kPi * fa * t + phase_a, p.impulsiveness) * amp_a * p.accel_dir;

        ImuRecord& r = sr.recording.records[i];
        r.t_ms = t0 + static_cast<std::int64_t>(i) * dt_ms;
        r.accel = a + (cfg.noise * accel_scale) * Vec3{rng.normal(), rng.normal(), rng.normal()};
        r.gyro = omega + (cfg.noise * gyro_scale) * Vec3{rng.normal(), rng.normal(), rng.normal()};
        r.orientation = q;
      }
      Annotation ann;
      ann.subject = static_cast<int>(s);
      ann.label = static_cast<int>(c);
      ann.start_ms = t0;
      ann.end_ms = t0 + static_cast<std::int64_t>(L) * dt_ms;
      sr.annotations.push_back(ann);
      out.recordings.push_back(std::move(sr));
    }
  }
  return out;
}

void write_synth(const std::string& dir, const SynthOutput& out) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["class_names"] = out.class_names;
  manifest["recordings"] = nlohmann::ordered_json::array();
  for (const auto& sr : out.recordings) {
    std::ostringstream rec, ann;
    write_recording_csv(rec, sr.recording);
    write_annotations_csv(ann, sr.annotations, out.class_names);
    const std::string rec_name = sr.name + ".csv";
    const std::string ann_name = sr.name + ".ann.csv";
    write_text_file((std::filesystem::path(dir) / rec_name).string(), rec.str());
    write_text_file((std::filesystem::path(dir) / ann_name).string(), ann.str());
    manifest["recordings"].push_back(
        {{"subject", sr.recording.subject}, {"recording", rec_name}, {"annotations", ann_name}});
  }
  write_text_file((std::filesystem::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

}  // namespace mmhar
