#pragma once

// Scalar-templated encoder math shared by the public double API and the
// trainer's optional f32 fast path.

#include "aenc/encoder.hpp"

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

namespace aenc::detail {

template <class S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
MatT<S> effective_kernel(const MatT<S>& kernel, KernelType type, Index channels) {
  MatT<S> k = (type == KernelType::kTied) ? MatT<S>(kernel.row(0).replicate(channels, 1))
                                          : kernel;
  if (type == KernelType::kPositive) k = k.cwiseAbs();
  return k;
}

// Largest tap index that does not read future TRs.
inline Index last_active_tap(Index width, KernelType type) {
  return type == KernelType::kCausal ? (width - 1) / 2 : width - 1;
}

template <class S>
MatT<S> depthwise_conv_t(const MatT<S>& z, const MatT<S>& kernel, KernelType type) {
  const Index trs = z.rows();
  const Index width = kernel.cols();
  const Index center = (width - 1) / 2;
  const MatT<S> keff = effective_kernel<S>(kernel, type, z.cols());
  MatT<S> out = MatT<S>::Zero(trs, z.cols());
  for (Index j = 0; j <= last_active_tap(width, type); ++j) {
    const Index shift = j - center;
    const Index t0 = std::max<Index>(0, -shift);
    const Index t1 = std::min<Index>(trs, trs - shift);
    if (t1 <= t0) continue;
    const Index len = t1 - t0;
    out.middleRows(t0, len).array() +=
        z.middleRows(t0 + shift, len).array().rowwise() *
        keff.col(j).transpose().array();
  }
  return out;
}

template <class S>
void depthwise_conv_backward_t(const MatT<S>& z, const MatT<S>& kernel,
                               KernelType type, const MatT<S>& grad_out,
                               MatT<S>* grad_z, MatT<S>* grad_kernel) {
  const Index trs = z.rows();
  const Index width = kernel.cols();
  const Index center = (width - 1) / 2;
  const MatT<S> keff = effective_kernel<S>(kernel, type, z.cols());
  MatT<S> grad_keff;
  if (grad_kernel) grad_keff = MatT<S>::Zero(z.cols(), width);
  for (Index j = 0; j <= last_active_tap(width, type); ++j) {
    const Index shift = j - center;
    const Index t0 = std::max<Index>(0, -shift);
    const Index t1 = std::min<Index>(trs, trs - shift);
    if (t1 <= t0) continue;
    const Index len = t1 - t0;
    if (grad_z)
      grad_z->middleRows(t0 + shift, len).array() +=
          grad_out.middleRows(t0, len).array().rowwise() *
          keff.col(j).transpose().array();
    if (grad_kernel)
      grad_keff.col(j) = (grad_out.middleRows(t0, len).array() *
                          z.middleRows(t0 + shift, len).array())
                             .colwise()
                             .sum()
                             .transpose();
  }
  if (!grad_kernel) return;
  if (type == KernelType::kPositive)
    grad_keff.array() *= kernel.array().sign();
  if (type == KernelType::kTied)
    grad_kernel->row(0) += grad_keff.colwise().sum();
  else
    *grad_kernel += grad_keff;
}

template <class S>
EncoderParamsT<S> zero_params_t(const EncoderConfig& config) {
  EncoderParamsT<S> p;
  const Index d = config.embed_dim;
  for (const auto& bb : config.backbones) {
    p.proj_w.push_back(MatT<S>::Zero(bb.dim, d));
    p.proj_b.push_back(MatT<S>::Zero(1, d));
    if (config.kernel_width > 0)
      p.conv_k.push_back(MatT<S>::Zero(
          config.kernel_type == KernelType::kTied ? 1 : d, config.kernel_width));
  }
  if (config.has_group_head()) {
    p.group_w = MatT<S>::Zero(d, config.parcels);
    p.group_b = MatT<S>::Zero(1, config.parcels);
  }
  if (config.has_subject_heads()) {
    for (int s = 0; s < config.subjects; ++s) {
      p.subj_w.push_back(MatT<S>::Zero(d, config.parcels));
      p.subj_b.push_back(MatT<S>::Zero(1, config.parcels));
    }
  }
  return p;
}

// Post-projection (pre-conv) and post-conv activations kept for backward.
template <class S>
struct EmbedTrace {
  std::vector<MatT<S>> projected;
  MatT<S> embedding;
};

template <class S>
EmbedTrace<S> embed_traced(const EncoderParamsT<S>& p, const EncoderConfig& cfg,
                           std::span<const MatT<S>> features) {
  if (features.size() != cfg.backbones.size())
    throw ValidationError("embed: feature list does not match config backbones");
  EmbedTrace<S> trace;
  for (size_t m = 0; m < cfg.backbones.size(); ++m) {
    if (features[m].cols() != cfg.backbones[m].dim)
      throw ValidationError("embed: feature dim mismatch for " + cfg.backbones[m].label);
    MatT<S> z = features[m] * p.proj_w[m];
    z.rowwise() += p.proj_b[m].row(0);
    MatT<S> u = cfg.kernel_width > 0
                    ? depthwise_conv_t<S>(z, p.conv_k[m], cfg.kernel_type)
                    : z;
    trace.projected.push_back(std::move(z));
    if (m == 0)
      trace.embedding = std::move(u);
    else
      trace.embedding += u;
  }
  return trace;
}

template <class S>
MatT<S> predict_t(const EncoderParamsT<S>& p, const EncoderConfig& cfg,
                  const MatT<S>& embedding, int subject) {
  if (subject < 0 || subject >= cfg.subjects)
    throw ValidationError("predict: subject index out of range");
  MatT<S> out;
  if (cfg.has_group_head()) {
    out = embedding * p.group_w;
    out.rowwise() += p.group_b.row(0);
  }
  if (cfg.has_subject_heads()) {
    const auto s = static_cast<size_t>(subject);
    if (out.size() == 0)
      out = embedding * p.subj_w[s];
    else
      out += embedding * p.subj_w[s];
    out.rowwise() += p.subj_b[s].row(0);
  }
  return out;
}

template <class S>
struct BatchItemT {
  std::vector<MatT<S>> features;                // per config backbone, [L x D_m]
  std::vector<std::optional<MatT<S>>> targets;  // per subject, [L x P]
};

// Mean squared error over every (item, present subject, TR, parcel) tuple.
// When `grads` is non-null it must be zero-shaped like `p`; analytic
// gradients are accumulated into it.
template <class S>
double loss_and_grad_t(const EncoderParamsT<S>& p, const EncoderConfig& cfg,
                       std::span<const BatchItemT<S>> batch,
                       EncoderParamsT<S>* grads) {
  if (batch.empty()) throw ValidationError("loss: empty batch");
  double denom = 0;
  for (const auto& item : batch)
    for (const auto& t : item.targets)
      if (t) denom += static_cast<double>(t->size());
  if (denom == 0) throw ValidationError("loss: every subject is masked");

  double sq_sum = 0;
  const S scale = static_cast<S>(2.0 / denom);
  for (const auto& item : batch) {
    EmbedTrace<S> trace = embed_traced<S>(p, cfg, item.features);
    const MatT<S>& e = trace.embedding;
    MatT<S> grad_e;
    if (grads) grad_e = MatT<S>::Zero(e.rows(), e.cols());
    MatT<S> group_pred;
    if (cfg.has_group_head()) {
      group_pred = e * p.group_w;
      group_pred.rowwise() += p.group_b.row(0);
    }
    for (int s = 0; s < cfg.subjects; ++s) {
      const auto& target = item.targets[static_cast<size_t>(s)];
      if (!target) continue;
      MatT<S> pred;
      if (cfg.has_group_head()) pred = group_pred;
      if (cfg.has_subject_heads()) {
        const auto su = static_cast<size_t>(s);
        if (pred.size() == 0)
          pred = e * p.subj_w[su];
        else
          pred += e * p.subj_w[su];
        pred.rowwise() += p.subj_b[su].row(0);
      }
      MatT<S> resid = pred - *target;
      sq_sum += static_cast<double>(resid.squaredNorm());
      if (!grads) continue;
      resid *= scale;
      if (cfg.has_group_head()) {
        grads->group_w.noalias() += e.transpose() * resid;
        grads->group_b += resid.colwise().sum();
        grad_e.noalias() += resid * p.group_w.transpose();
      }
      if (cfg.has_subject_heads()) {
        const auto su = static_cast<size_t>(s);
        grads->subj_w[su].noalias() += e.transpose() * resid;
        grads->subj_b[su] += resid.colwise().sum();
        grad_e.noalias() += resid * p.subj_w[su].transpose();
      }
    }
    if (!grads) continue;
    for (size_t m = 0; m < cfg.backbones.size(); ++m) {
      MatT<S> grad_z;
      if (cfg.kernel_width > 0) {
        grad_z = MatT<S>::Zero(e.rows(), e.cols());
        depthwise_conv_backward_t<S>(trace.projected[m], p.conv_k[m],
                                     cfg.kernel_type, grad_e, &grad_z,
                                     &grads->conv_k[m]);
      } else {
        grad_z = grad_e;
      }
      grads->proj_w[m].noalias() += item.features[m].transpose() * grad_z;
      grads->proj_b[m] += grad_z.colwise().sum();
    }
  }
  return sq_sum / denom;
}

}  // namespace aenc::detail
