#pragma once

#include "aenc/common.hpp"
#include "aenc/dataset.hpp"
#include "aenc/encoder.hpp"

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace aenc {

enum class Precision { kF64, kF32 };

std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

struct SubjectsMode {
  bool multi = true;
  int subject = 0;  // used when !multi

  static SubjectsMode Multi() { return {true, 0}; }
  static SubjectsMode Single(int s) { return {false, s}; }
  std::string str() const;
  static SubjectsMode parse(const std::string& s);

  friend bool operator==(const SubjectsMode&, const SubjectsMode&) = default;
};

struct TrainConfig {
  int max_steps = 1200;
  int batch_size = 16;
  Index window_length = 64;
  double lr = 3e-4;
  double weight_decay = 1e-2;
  int eval_every = 50;
  std::uint64_t seed = 0;
  SubjectsMode subjects_mode = SubjectsMode::Multi();
  bool normalize = true;
  Precision precision = Precision::kF64;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct TrainBatchItem {
  std::vector<Mat> features;                // per config backbone, [L x D_m]
  std::vector<std::optional<Mat>> targets;  // per subject, [L x P]; absent = masked
};
using TrainBatch = std::vector<TrainBatchItem>;

// Mean squared error over every (item, present subject, TR, parcel) tuple.
double loss(const EncoderParams& params, const EncoderConfig& config,
            const TrainBatch& batch);

// Exact analytic gradient of `loss`; `grads` is overwritten.
double loss_and_grad(const EncoderParams& params, const EncoderConfig& config,
                     const TrainBatch& batch, EncoderParams& grads);

struct OptimizerState {
  std::vector<Mat> moment1, moment2;  // parallel to the block list
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// Decoupled weight decay (applied to the pre-step parameters, never to the
// moments), bias-corrected moments. Throws on non-finite gradients, naming
// the offending block.
void adamw_step(EncoderParams& params, const EncoderParams& grads,
                const EncoderConfig& config, OptimizerState& state, double lr,
                double weight_decay);

struct Checkpoint {
  EncoderParams params;
  EncoderConfig encoder;
  TrainConfig train;
  NormStats norm;
  double best_score = std::numeric_limits<double>::quiet_NaN();
  long best_step = -1;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct EvalPoint {
  long step = 0;
  double loss = 0;
  double val_score = 0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EvalPoint> evals;
  std::vector<std::pair<long, double>> losses;  // per-step loss curve
};

// AdamW training with early stopping on the validation movies: every
// eval_every steps (and at the final step) the mean validation Pearson is
// computed and the best-scoring parameter snapshot is kept. Deterministic
// for fixed seeds. subjects_mode single:s restricts the loss to subject s
// and disables the group head (the head mode becomes subject_only).
TrainResult train(const Dataset& ds, const SplitSpec& split,
                  EncoderConfig enc_config, TrainConfig train_config);

struct GradCheckEntry {
  std::string block;
  double max_rel_err = 0;
  bool pass = false;
};

struct GradCheckReport {
  double tolerance = 0;
  std::vector<GradCheckEntry> entries;
  bool all_pass = false;
};

// Central finite differences (h = 1e-5, 64-bit) against the analytic
// gradient on a small random batch, per parameter block. Failures are
// report entries, never exceptions.
GradCheckReport grad_check(const EncoderConfig& config, double tolerance,
                           std::uint64_t seed = 0);

}  // namespace aenc
