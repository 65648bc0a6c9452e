#pragma once

// Shared helpers for the test suites: scratch directories, small text files
// and a seeded generator for property tests.

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "vfmap/field.hpp"

namespace vfmap::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
public:
  explicit ScratchDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("vfmap_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Deterministic generator for property tests; the seed is fixed per test so
/// failures reproduce.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  std::mt19937_64& engine() { return gen_; }

private:
  std::mt19937_64 gen_;
};

/// Strain history on a full grid with the given per-step fill.
template <class Fill>
StrainHistory make_history(const FieldGrid& g, std::size_t steps, Fill fill) {
  StrainHistory h;
  h.grid = g;
  for (std::size_t t = 0; t < steps; ++t) {
    TensorField f(g.size());
    for (std::size_t p = 0; p < g.size(); ++p) fill(t, p, f.xx[p], f.yy[p], f.xy[p]);
    h.steps.push_back(std::move(f));
    h.forces.push_back(100.0 * static_cast<double>(t + 1));
  }
  return h;
}

} // namespace vfmap::testing
