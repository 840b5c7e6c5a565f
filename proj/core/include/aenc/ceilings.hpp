#pragma once

#include "aenc/common.hpp"
#include "aenc/dataset.hpp"
#include "aenc/encoder.hpp"
#include "aenc/metrics.hpp"
#include "aenc/trainer.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace aenc {

// Two presentations of the same episode to the same subject.
struct RepeatPair {
  EpisodeId episode;
  int subject = 0;
  Mat first, second;  // equal shapes [T x P]
};

std::vector<RepeatPair> collect_repeats(const Dataset& ds);

// Per (subject, movie): per-parcel Pearson between the two presentations'
// concatenated time-series. Symmetric in the presentation order.
std::vector<ParcelScores> split_half_ceiling(std::span<const RepeatPair> pairs);

// Cross-subject encoder: per-subject input projections (shared group +
// subject residual), subject-specific depthwise temporal convs, then
// leave-one-subject-out average pooling feeding the same group +
// subject-residual prediction head structure as the feature encoder.
struct CrossConfig {
  Index embed_dim = 192;
  Index kernel_width = 9;  // "small" temporal kernel; must be odd, or 0
  KernelType kernel_type = KernelType::kDefault;
  HeadMode head_mode = HeadMode::kGroupPlusSubject;  // output heads
  int subjects = 0;
  Index parcels = 0;

  bool has_group_head() const { return head_mode != HeadMode::kSubjectOnly; }
  bool has_subject_heads() const { return head_mode != HeadMode::kGroupOnly; }
  void validate() const;
};

struct CrossParams {
  Mat in_group_w;               // [P x d]
  Mat in_group_b;               // [1 x d]
  std::vector<Mat> in_subj_w;   // per subject, [P x d]
  std::vector<Mat> in_subj_b;   // per subject, [1 x d]
  std::vector<Mat> conv_k;      // per subject, [d x K] ([1 x K] when tied)
  Mat head_group_w;             // [d x P]
  Mat head_group_b;             // [1 x P]
  std::vector<Mat> head_subj_w; // per subject, [d x P]
  std::vector<Mat> head_subj_b; // per subject, [1 x P]
};

std::vector<BlockRef> collect_cross_blocks(CrossParams& p);
CrossParams cross_zero_params(const CrossConfig& config);
CrossParams cross_init_params(const CrossConfig& config, std::uint64_t seed);
std::int64_t cross_param_count(const CrossConfig& config);

// Prediction for `target` from the other subjects' activity only: embed each
// subject j != target, average the embeddings in ascending-j order, apply
// target's prediction head. Never reads bold[target], so the output is
// exactly invariant to it.
Mat cross_forward(const CrossParams& params, const CrossConfig& config,
                  std::span<const Mat> bold, int target);

struct CrossBatchItem {
  std::vector<Mat> bold;     // per subject, [L x P], all present
  std::vector<Mat> targets;  // per subject, [L x P]
};
using CrossBatch = std::vector<CrossBatchItem>;

double cross_loss(const CrossParams& params, const CrossConfig& config,
                  const CrossBatch& batch);
double cross_loss_and_grad(const CrossParams& params, const CrossConfig& config,
                           const CrossBatch& batch, CrossParams& grads);

struct CrossCheckpoint {
  CrossParams params;
  CrossConfig config;
  TrainConfig train;
  NormStats norm;  // bold side only
  double best_score = std::numeric_limits<double>::quiet_NaN();
  long best_step = -1;
};

void save_cross_checkpoint(const std::filesystem::path& path,
                           const CrossCheckpoint& ckpt);
CrossCheckpoint load_cross_checkpoint(const std::filesystem::path& path);

struct CrossTrainResult {
  CrossCheckpoint checkpoint;
  std::vector<EvalPoint> evals;
  std::vector<std::pair<long, double>> losses;
};

// Same MSE/AdamW/early-stopping recipe as the feature-encoder trainer, with
// the loss summed over all target subjects per window. Episodes missing any
// subject are excluded. Always trains in f64.
CrossTrainResult cross_train(const Dataset& ds, const SplitSpec& split,
                             CrossConfig config, TrainConfig train_config);

std::vector<ParcelScores> cross_score(const CrossCheckpoint& ckpt,
                                      const Dataset& ds,
                                      const std::set<std::string>& movies);

GradCheckReport cross_grad_check(const CrossConfig& config, double tolerance,
                                 std::uint64_t seed = 0);

// gap = ceiling r - feature r, per parcel, over exactly matching
// (subject, movie) grids; undefined correlations enter as 0.
std::vector<ParcelScores> ceiling_gap(const std::vector<ParcelScores>& feature_scores,
                                      const std::vector<ParcelScores>& ceiling_scores);

}  // namespace aenc
