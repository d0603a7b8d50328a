#pragma once

#include "simcor/core.hpp"

#include <algorithm>

namespace simcor {

// Time-stamped probe-center positions. Ingested at the capture rate (1 kHz in
// the source setup), subsampled to the camera frame rate, and linearly
// interpolated for simulation substeps.

struct KinematicsTrajectory {
  struct Sample {
    double t = 0.0;  // seconds
    Vec3 p = Vec3::Zero();
  };
  std::vector<Sample> samples;

  void validate() const {
    if (samples.size() < 2)
      throw ArgumentError("trajectory needs at least 2 samples");
    for (std::size_t i = 1; i < samples.size(); ++i)
      if (!(samples[i].t > samples[i - 1].t))
        throw ArgumentError("trajectory timestamps must be strictly increasing");
  }

  double start_time() const { return samples.front().t; }
  double end_time() const { return samples.back().t; }
  double span() const { return end_time() - start_time(); }
};

struct FrameSchedule {
  std::vector<double> frame_times;  // seconds, strictly increasing
  double frame_rate = 30.0;         // Hz
};

// Linear interpolation with endpoint clamping outside the span.
inline Vec3 interpolate(const KinematicsTrajectory& traj, double t) {
  const auto& s = traj.samples;
  if (s.empty()) throw ArgumentError("cannot interpolate an empty trajectory");
  if (t <= s.front().t) return s.front().p;
  if (t >= s.back().t) return s.back().p;
  auto it = std::upper_bound(
      s.begin(), s.end(), t,
      [](double value, const KinematicsTrajectory::Sample& smp) {
        return value < smp.t;
      });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  double u = (t - lo.t) / (hi.t - lo.t);
  return (1.0 - u) * lo.p + u * hi.p;
}

// Nearest-sample subsampling to the frame rate. Output timestamps are the
// frame times t0 + k/rate; positions are copied from the nearest captured
// sample (ties go to the earlier sample). Length = floor(span*rate) + 1.
inline KinematicsTrajectory subsample_to_frames(
    const KinematicsTrajectory& traj, double rate) {
  if (traj.samples.empty())
    throw ArgumentError("cannot subsample an empty trajectory");
  if (!(rate > 0.0)) throw ArgumentError("frame rate must be positive");

  const auto& s = traj.samples;
  KinematicsTrajectory out;
  long n_frames = static_cast<long>(std::floor(traj.span() * rate)) + 1;
  out.samples.reserve(n_frames);
  for (long k = 0; k < n_frames; ++k) {
    double t = traj.start_time() + static_cast<double>(k) / rate;
    auto it = std::lower_bound(
        s.begin(), s.end(), t,
        [](const KinematicsTrajectory::Sample& smp, double value) {
          return smp.t < value;
        });
    std::size_t idx;
    if (it == s.begin()) {
      idx = 0;
    } else if (it == s.end()) {
      idx = s.size() - 1;
    } else {
      std::size_t hi = static_cast<std::size_t>(it - s.begin());
      std::size_t lo = hi - 1;
      // strictly closer wins; equality keeps the earlier sample
      idx = (t - s[lo].t <= s[hi].t - t) ? lo : hi;
    }
    out.samples.push_back({t, s[idx].p});
  }
  return out;
}

inline FrameSchedule make_frame_schedule(const KinematicsTrajectory& traj,
                                         double rate) {
  FrameSchedule sched;
  sched.frame_rate = rate;
  long n = static_cast<long>(std::floor(traj.span() * rate)) + 1;
  sched.frame_times.reserve(n);
  for (long k = 0; k < n; ++k)
    sched.frame_times.push_back(traj.start_time() +
                                static_cast<double>(k) / rate);
  return sched;
}

// ---------------------------------------------------------------------------
// Persistence: CSV with header `t,x,y,z`, seconds and mm.

inline void save_trajectory(const KinematicsTrajectory& traj,
                            const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "t,x,y,z\n";
  for (const auto& s : traj.samples)
    out << format_double(s.t) << ',' << format_double(s.p.x()) << ','
        << format_double(s.p.y()) << ',' << format_double(s.p.z()) << '\n';
}

inline KinematicsTrajectory load_trajectory(
    const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "t,x,y,z")
    throw IoError("trajectory file missing 't,x,y,z' header: " +
                  path.string());
  KinematicsTrajectory traj;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    auto cols = split(line, ',');
    if (cols.size() != 4)
      throw IoError("trajectory row needs 4 columns: " + line);
    KinematicsTrajectory::Sample s;
    s.t = parse_double(cols[0]);
    s.p = Vec3(parse_double(cols[1]), parse_double(cols[2]),
               parse_double(cols[3]));
    traj.samples.push_back(s);
  }
  traj.validate();
  return traj;
}

}  // namespace simcor
