#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace simcor {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error { using Error::Error; };         // bad spec / config values
struct ArgumentError : Error { using Error::Error; };       // bad call arguments
struct GeometryError : Error { using Error::Error; };       // degenerate geometry
struct SolverError : Error { using Error::Error; };         // linear solver failure
struct ShapeError : Error { using Error::Error; };          // tensor shape mismatch
struct NumericsError : Error { using Error::Error; };       // non-finite values
struct RegistrationError : Error { using Error::Error; };   // ICP / fit failures
struct TrainingError : Error { using Error::Error; };       // divergent training
struct ScriptError : Error { using Error::Error; };         // bad probe script
struct DatasetError : Error { using Error::Error; };        // dataset generation failure
struct SearchError : Error { using Error::Error; };         // parameter search failure
struct IoError : Error { using Error::Error; };             // file format / filesystem

// ---------------------------------------------------------------------------
// Deterministic random stream.
//
// std::mt19937_64 is standard-defined but the <random> distributions are not;
// the uniform/normal transforms below keep outputs bit-identical across
// compilers and platforms.

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::uint64_t uniform_index(std::uint64_t n) {
    // modulo bias is irrelevant at the sizes used here
    return engine_() % n;
  }

  // Box-Muller; one value per call, the pair partner is cached
  double normal(double mean = 0.0, double sigma = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + sigma * spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return mean + sigma * r * std::cos(a);
  }

  Vec3 normal_vec3(double sigma) {
    return Vec3(normal(0.0, sigma), normal(0.0, sigma), normal(0.0, sigma));
  }

  // Independent child stream; splitmix64 over (seed, index)
  static std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Content hashing (FNV-1a) for caches and determinism checks

class ContentHash {
 public:
  void add_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001B3ull;
    }
  }
  void add(double v) { add_bytes(&v, sizeof(v)); }
  void add(std::int64_t v) { add_bytes(&v, sizeof(v)); }
  void add(const std::string& s) { add_bytes(s.data(), s.size()); }
  void add(const Vec3& v) { add(v.x()); add(v.y()); add(v.z()); }

  std::uint64_t value() const { return h_; }

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 0xCBF29CE484222325ull;
};

// ---------------------------------------------------------------------------
// Small text helpers

inline std::string format_double(double v, int significant = 17) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", significant, v);
  return buf;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw IoError("trailing characters in number: " + s);
    return v;
  } catch (const std::invalid_argument&) {
    throw IoError("not a number: '" + s + "'");
  } catch (const std::out_of_range&) {
    throw IoError("number out of range: '" + s + "'");
  }
}

// ---------------------------------------------------------------------------
// frames.csv manifest shared by simulation-frame and cloud-frame sequences

struct FrameManifest {
  struct Entry {
    long frame_id = 0;
    double time = 0.0;
  };
  std::vector<Entry> entries;
};

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return in;
}

inline void save_frame_manifest(const FrameManifest& manifest,
                                const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "frame_id,time\n";
  for (const auto& e : manifest.entries)
    out << e.frame_id << ',' << format_double(e.time) << '\n';
}

inline FrameManifest load_frame_manifest(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "frame_id,time")
    throw IoError("frames manifest missing 'frame_id,time' header: " +
                  path.string());
  FrameManifest manifest;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    auto cols = split(line, ',');
    if (cols.size() != 2)
      throw IoError("frames manifest row needs 2 columns: " + line);
    manifest.entries.push_back(
        {std::stol(cols[0]), parse_double(cols[1])});
  }
  return manifest;
}

}  // namespace simcor
