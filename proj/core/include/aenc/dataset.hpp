#pragma once

#include "aenc/common.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace aenc {

struct EpisodeId {
  std::string name;   // unique within a manifest, e.g. "friends-s01e01a"
  std::string movie;  // group label, e.g. "friends-s1"

  friend bool operator==(const EpisodeId&, const EpisodeId&) = default;
};

// One backbone's feature time-series for one episode, one row per TR.
struct FeatureSeries {
  EpisodeId episode;
  std::string backbone;
  Mat data;  // [T x D]
};

// One subject's parcellated fMRI for one episode.
struct BoldSeries {
  EpisodeId episode;
  int subject = 0;
  Mat data;  // [T x P]
};

struct Episode {
  EpisodeId id;
  std::vector<Mat> features;                   // parallel to Dataset::backbones
  std::vector<std::optional<Mat>> bold;        // per subject; absent = missing
  std::vector<std::optional<Mat>> bold_repeat; // second presentation, when recorded
  Index trs() const { return features.empty() ? 0 : features.front().rows(); }
};

struct LoadReport {
  std::vector<std::string> warnings;
};

struct Dataset {
  int subjects = 0;
  std::vector<BackboneInfo> backbones;
  std::vector<Episode> episodes;  // sorted by episode name
  double tr_seconds = 1.49;

  Index parcels() const;
  const Episode& episode(const std::string& name) const;
  std::set<std::string> movies() const;
  std::vector<int> episode_indices(const std::set<std::string>& movies) const;
  Index backbone_index(const std::string& label) const;
  void validate() const;
};

struct SplitSpec {
  std::set<std::string> train;
  std::set<std::string> validation;
  std::set<std::string> test;

  void validate() const;  // pairwise disjoint, train non-empty
};

struct Window {
  int episode = 0;  // index into Dataset::episodes
  Index start = 0;
  Index length = 0;
  bool truncated = false;  // episode shorter than the requested length

  friend bool operator==(const Window&, const Window&) = default;
};

// Per-channel / per-parcel z-scoring statistics fitted on the train split.
// Feature entries are parallel to an associated backbone list; bold entries
// are per subject.
struct NormStats {
  std::vector<RowVec> feat_mean, feat_std;
  std::vector<RowVec> bold_mean, bold_std;
  std::vector<std::vector<Index>> feat_floored;  // channels with floored std
  std::vector<std::vector<Index>> bold_floored;
  bool identity = false;

  static NormStats identity_for(const Dataset& ds);
  // stats restricted to a backbone subset, in subset order
  NormStats subset(const Dataset& ds, std::span<const BackboneInfo> backbones) const;
};

inline constexpr double kStdFloor = 1e-6;

// Loads and fully validates a manifest (JSON) plus every referenced tensor.
// Throws ValidationError on missing files, shape mismatches, non-finite
// values, or duplicate episode names.
Dataset load_manifest(const std::filesystem::path& manifest_path,
                      LoadReport* report = nullptr);

// Writes manifest.json plus one tensor file per series under `dir`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

// Truncates every series of one episode to the shortest T and returns the
// assembled episode. All series must belong to the same episode name. A
// warning is recorded when any series loses more than 5 TRs; T* == 0 throws.
Episode align_lengths(const std::vector<FeatureSeries>& features,
                      const std::vector<BoldSeries>& bold,
                      std::span<const BackboneInfo> backbones, int subjects,
                      LoadReport* report = nullptr);

NormStats zscore_fit(const Dataset& ds, const SplitSpec& split);

// Tiling rule for one episode: [0, length) plus length-strided windows from
// `offset` plus [trs - length, trs), duplicates dropped. Offset 0 therefore
// tiles the episode exactly; any offset covers every TR.
std::vector<std::pair<Index, Index>> tile_episode(Index trs, Index length,
                                                  Index offset);

// One epoch of training windows: each train episode is tiled at a random
// offset, with first/last windows pinned so every TR is covered. Episodes
// shorter than `length` yield a single truncated window. Deterministic for a
// fixed seed.
std::vector<Window> make_windows(const Dataset& ds, const SplitSpec& split,
                                 Index length, std::uint64_t seed);

// Features of one episode for the given backbones (matched by label),
// z-scored when stats are provided (stats parallel to `backbones`).
std::vector<Mat> gather_features(const Dataset& ds, const Episode& ep,
                                 std::span<const BackboneInfo> backbones,
                                 const NormStats* stats = nullptr);

}  // namespace aenc
