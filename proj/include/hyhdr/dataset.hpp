// On-disk dataset layout:
//   DIR/sample_k/frame_{1,2,3}.ppm   8-bit LDR frames, ascending EV
//   DIR/sample_k/exposures.txt       one EV per line, frame order
//   DIR/sample_k/gt.pfm              ground-truth radiance (optional for infer)
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hyhdr/datagen.hpp"
#include "hyhdr/errors.hpp"
#include "hyhdr/hdr.hpp"
#include "hyhdr/image_io.hpp"

namespace hyhdr {

namespace fs = std::filesystem;

inline std::string frame_file(int f) { return "frame_" + std::to_string(f) + ".ppm"; }

inline void write_stack(const fs::path& dir, const ExposureStack& stack) {
  fs::create_directories(dir);
  for (int f = 1; f <= 3; ++f) write_ppm((dir / frame_file(f)).string(), stack.frames[static_cast<std::size_t>(f - 1)].pixels);
  const fs::path ev_path = dir / "exposures.txt";
  std::ofstream ev(ev_path);
  if (!ev) throw IoError("cannot write " + ev_path.string());
  ev.precision(17);
  for (const LdrFrame& fr : stack.frames) ev << fr.ev << '\n';
}

inline void write_sample(const fs::path& dir, const Sample& s) {
  write_stack(dir, s.stack);
  write_pfm((dir / "gt.pfm").string(), s.gt.radiance);
}

inline ExposureStack read_stack(const fs::path& dir) {
  const fs::path ev_path = dir / "exposures.txt";
  std::ifstream ev(ev_path);
  if (!ev) throw IoError("missing exposures file " + ev_path.string());
  std::vector<double> evs;
  double v = 0;
  while (ev >> v) evs.push_back(v);
  if (!ev.eof() || evs.size() != 3) throw FormatError(ev_path.string() + ": expected 3 EV values");
  ExposureStack stack;
  for (int f = 1; f <= 3; ++f) {
    const fs::path p = dir / frame_file(f);
    if (!fs::exists(p)) throw IoError("missing frame " + p.string());
    stack.frames[static_cast<std::size_t>(f - 1)] = LdrFrame::from_ev(read_ppm(p.string()), evs[static_cast<std::size_t>(f - 1)]);
  }
  stack.validate();
  return stack;
}

inline Sample read_sample(const fs::path& dir) {
  Sample s;
  s.stack = read_stack(dir);
  const fs::path gt = dir / "gt.pfm";
  if (!fs::exists(gt)) throw IoError("missing ground truth " + gt.string());
  s.gt = HdrImage{read_pfm(gt.string())};
  if (s.gt.radiance.dims() != s.stack.frames[0].pixels.dims()) {
    throw ShapeError(gt.string() + ": size differs from the frames");
  }
  return s;
}

/// sample_* subdirectories ordered by their numeric suffix.
inline std::vector<fs::path> list_samples(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root.string());
  std::vector<std::pair<long, fs::path>> found;
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string name = e.path().filename().string();
    if (!e.is_directory() || name.rfind("sample_", 0) != 0) continue;
    const std::string num = name.substr(7);
    if (num.empty() || !std::all_of(num.begin(), num.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
    found.emplace_back(std::stol(num), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [k, p] : found) out.push_back(p);
  return out;
}

inline std::vector<Sample> read_dataset(const fs::path& root) {
  std::vector<Sample> out;
  for (const fs::path& p : list_samples(root)) out.push_back(read_sample(p));
  return out;
}

/// `count` random scenes of the given size, sample_k seeded by mix(seed, k).
inline std::vector<Sample> synth_dataset(int count, int height, int width, std::uint64_t seed) {
  std::vector<Sample> out;
  for (int k = 0; k < count; ++k) {
    const std::uint64_t s = SplitMix64::mix(seed, static_cast<std::uint64_t>(k));
    out.push_back(synth_scene(random_scene(height, width, s), s));
  }
  return out;
}

}  // namespace hyhdr
