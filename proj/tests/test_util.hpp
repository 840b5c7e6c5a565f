#pragma once

#include "aenc/common.hpp"
#include "aenc/dataset.hpp"
#include "aenc/encoder.hpp"
#include "aenc/synth.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace aenc::testutil {

// unique scratch directory, removed on destruction
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("aenc_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Mat random_mat(Index rows, Index cols, std::uint64_t seed,
                      double scale = 1.0) {
  Rng rng(seed);
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

inline bool mats_equal(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline bool params_equal(EncoderParams& a, EncoderParams& b,
                         std::span<const BackboneInfo> backbones) {
  auto ba = collect_blocks<double>(a, backbones);
  auto bb = collect_blocks<double>(b, backbones);
  if (ba.size() != bb.size()) return false;
  for (size_t i = 0; i < ba.size(); ++i)
    if (ba[i].name != bb[i].name || !mats_equal(*ba[i].value, *bb[i].value))
      return false;
  return true;
}

// quick synthetic spec with sensible defaults for unit tests
inline SynthSpec small_synth_spec() {
  SynthSpec spec;
  spec.subjects = 2;
  spec.parcels = 8;
  spec.backbones = {{"feat0", 6}, {"feat1", 5}};
  spec.episodes = {{"trainA-01", "trainA", 300},
                   {"trainA-02", "trainA", 280},
                   {"valB-01", "valB", 260},
                   {"testC-01", "testC", 260}};
  spec.embed_dim = 5;
  spec.kernel_width = 7;
  spec.kernel_shape = "hrf";
  spec.noise_std = 0.0;
  spec.seed = 17;
  return spec;
}

inline SplitSpec small_split() {
  return {{"trainA"}, {"valB"}, {"testC"}};
}

}  // namespace aenc::testutil
