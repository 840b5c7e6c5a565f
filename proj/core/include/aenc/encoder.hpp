#pragma once

#include "aenc/common.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace aenc {

enum class KernelType { kDefault, kCausal, kPositive, kTied };
enum class HeadMode { kGroupOnly, kSubjectOnly, kGroupPlusSubject };

std::string to_string(KernelType type);
KernelType kernel_type_from_string(const std::string& s);
std::string to_string(HeadMode mode);
HeadMode head_mode_from_string(const std::string& s);

struct EncoderConfig {
  std::vector<BackboneInfo> backbones;
  Index embed_dim = 192;
  Index kernel_width = 45;  // TRs; must be odd; 0 disables the temporal conv
  KernelType kernel_type = KernelType::kDefault;
  HeadMode head_mode = HeadMode::kGroupPlusSubject;
  int subjects = 1;
  Index parcels = 1000;

  bool has_group_head() const { return head_mode != HeadMode::kSubjectOnly; }
  bool has_subject_heads() const { return head_mode != HeadMode::kGroupOnly; }
  void validate() const;
};

// All trainable weights. Blocks that the config excludes (kernel_width == 0,
// or a head mode without that head) are empty matrices.
template <class Scalar>
struct EncoderParamsT {
  using M = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  std::vector<M> proj_w;  // per backbone, [D_m x d]
  std::vector<M> proj_b;  // per backbone, [1 x d]
  std::vector<M> conv_k;  // per backbone, [d x K] ([1 x K] when tied)
  M group_w;              // [d x P]
  M group_b;              // [1 x P]
  std::vector<M> subj_w;  // per subject, [d x P]
  std::vector<M> subj_b;  // per subject, [1 x P]

  template <class Other>
  EncoderParamsT<Other> cast() const;
};

using EncoderParams = EncoderParamsT<double>;

// Named references to every parameter block, in a stable order shared by the
// optimizer, serializer, and gradient checker.
template <class Scalar>
struct BlockRefT {
  std::string name;
  typename EncoderParamsT<Scalar>::M* value;
};
using BlockRef = BlockRefT<double>;

template <class Scalar>
std::vector<BlockRefT<Scalar>> collect_blocks(EncoderParamsT<Scalar>& p,
                                              std::span<const BackboneInfo> backbones);

// Projections and heads are fan-in-scaled uniform draws; conv kernels start
// as a centered delta so the step-0 model matches the no-conv model; biases
// are zero. Deterministic per seed.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);
EncoderParams zero_params(const EncoderConfig& config);

// Per backbone: project frame-by-frame, depthwise temporal conv, then sum
// the per-backbone embeddings. `features` parallels config.backbones.
Mat embed(const EncoderParams& params, const EncoderConfig& config,
          std::span<const Mat> features);

// Group and/or subject-residual linear head applied frame-by-frame.
Mat predict(const EncoderParams& params, const EncoderConfig& config,
            const Mat& embedding, int subject);

Mat forward(const EncoderParams& params, const EncoderConfig& config,
            std::span<const Mat> features, int subject);

std::int64_t param_count(const EncoderConfig& config);

// Depthwise temporal convolution (cross-correlation convention): out[t, c] =
// sum_j k_eff[c, j] * z[t + j - (K-1)/2, c], zero-padded. The effective
// kernel is |k| for kPositive, row 0 broadcast to all channels for kTied,
// and has its future-reading taps (j > (K-1)/2) masked for kCausal.
Mat depthwise_conv(const Mat& z, const Mat& kernel, KernelType type);

// Accumulates into grad_z / grad_kernel when non-null (caller zeroes them).
// The kPositive chain rule multiplies by sign(k); taps at exactly zero get
// zero gradient, matching the central finite difference of |.| at 0.
void depthwise_conv_backward(const Mat& z, const Mat& kernel, KernelType type,
                             const Mat& grad_out, Mat* grad_z, Mat* grad_kernel);

}  // namespace aenc
