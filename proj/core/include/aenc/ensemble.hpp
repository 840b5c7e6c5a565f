#pragma once

#include "aenc/common.hpp"
#include "aenc/dataset.hpp"
#include "aenc/encoder.hpp"
#include "aenc/metrics.hpp"
#include "aenc/trainer.hpp"

#include <json.hpp>

#include <compare>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace aenc {

// Finite candidate lists, one per swept axis. Empty feature subsets / train
// mixtures stand for "all backbones" / "the split's train movies".
struct SweepSpace {
  std::vector<double> lr = {3e-4};
  std::vector<double> weight_decay = {1e-2};
  std::vector<Index> kernel_width = {45};
  std::vector<std::string> kernel_type = {"default"};
  std::vector<int> batch_size = {16};
  std::vector<Index> embed_dim = {192};
  std::vector<std::vector<std::string>> feature_subsets = {{}};
  std::vector<std::vector<std::string>> train_movies = {{}};
  int samples = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

SweepSpace sweep_space_from_json(const nlohmann::json& j);
nlohmann::json sweep_space_to_json(const SweepSpace& space);

struct SweepDraw {
  int index = 0;
  std::string model_id;
  double lr = 3e-4;
  double weight_decay = 1e-2;
  Index kernel_width = 45;
  KernelType kernel_type = KernelType::kDefault;
  int batch_size = 16;
  Index embed_dim = 192;
  std::vector<std::string> feature_subset;
  std::vector<std::string> train_movies;
  std::uint64_t train_seed = 0;
};

nlohmann::json sweep_draw_to_json(const SweepDraw& draw);
SweepDraw sweep_draw_from_json(const nlohmann::json& j);

// N i.i.d. uniform draws per axis, deterministic per seed; duplicates
// allowed. Each draw gets a per-model training seed derived from the space
// seed and the draw index, so sweep results do not depend on scheduling.
std::vector<SweepDraw> sample_configs(const SweepSpace& space);

struct ModelRecord {
  std::string model_id;
  SweepDraw draw;
  std::string checkpoint_file;  // relative to the store directory
  std::set<std::string> validation_movies;
  std::map<std::string, Mat> val_r;  // movie -> [S x P], NaN = undefined
  bool failed = false;
  std::string error;
};

nlohmann::json model_record_to_json(const ModelRecord& record);
ModelRecord model_record_from_json(const nlohmann::json& j);

// Trains every draw (base configs + the draw's overrides), scores it on the
// split's validation movies, and persists one record JSON plus one
// checkpoint per model under store_dir. Individual failures are recorded,
// not fatal. The result is identical for any worker count.
std::vector<ModelRecord> run_sweep(const Dataset& ds, const SplitSpec& split,
                                   const EncoderConfig& base_encoder,
                                   const TrainConfig& base_train,
                                   std::span<const SweepDraw> draws,
                                   const std::filesystem::path& store_dir,
                                   int workers);

std::vector<ModelRecord> load_records(const std::filesystem::path& store_dir);

struct EnsembleSelection {
  int k = 1;
  int subjects = 0;
  Index parcels = 0;
  // ids[subject][parcel]: up to k model ids, best first
  std::vector<std::vector<std::vector<std::string>>> ids;
};

nlohmann::json selection_to_json(const EnsembleSelection& sel);

// Per (subject, parcel): rank models by mean validation r across the given
// movies (undefined correlations count as 0), ties broken by model id, and
// keep the best min(k, #models). Failed records are skipped.
EnsembleSelection select_topk(std::span<const ModelRecord> records, int k,
                              const std::set<std::string>& validation_movies);

struct SubjectMovie {
  int subject = 0;
  std::string movie;

  auto operator<=>(const SubjectMovie&) const = default;
};

// Unweighted per-parcel mean of the selected models' raw-space predictions,
// concatenated over each movie's episodes.
std::map<SubjectMovie, Mat> predict_ensemble(
    const EnsembleSelection& selection, std::span<const ModelRecord> records,
    const std::filesystem::path& store_dir, const Dataset& ds,
    const std::set<std::string>& movies);

// A scored prediction set, e.g. one leaderboard submission.
struct Submission {
  std::string id;
  std::map<SubjectMovie, double> scores;
  std::map<SubjectMovie, Mat> predictions;  // optional content
};

struct CombinedSubmission {
  std::map<SubjectMovie, std::string> source;  // winning submission per cell
  std::map<SubjectMovie, double> scores;
  std::map<SubjectMovie, Mat> predictions;
  double aggregate = 0;
};

// mean over movies of mean over subjects
double submission_aggregate(const std::map<SubjectMovie, double>& scores);

// Picks the best-scoring submission per (subject, movie). All submissions
// must cover the same grid. The combined aggregate dominates every input's
// aggregate exactly.
CombinedSubmission per_movie_best(std::span<const Submission> submissions);

}  // namespace aenc
