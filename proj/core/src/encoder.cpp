#include "aenc/encoder.hpp"

#include "model_math.hpp"

namespace aenc {

std::string to_string(KernelType type) {
  switch (type) {
    case KernelType::kDefault: return "default";
    case KernelType::kCausal: return "causal";
    case KernelType::kPositive: return "positive";
    case KernelType::kTied: return "tied";
  }
  return "default";
}

KernelType kernel_type_from_string(const std::string& s) {
  if (s == "default") return KernelType::kDefault;
  if (s == "causal") return KernelType::kCausal;
  if (s == "positive") return KernelType::kPositive;
  if (s == "tied") return KernelType::kTied;
  throw ValidationError("unknown kernel type: " + s);
}

std::string to_string(HeadMode mode) {
  switch (mode) {
    case HeadMode::kGroupOnly: return "group_only";
    case HeadMode::kSubjectOnly: return "subject_only";
    case HeadMode::kGroupPlusSubject: return "group_plus_subject";
  }
  return "group_plus_subject";
}

HeadMode head_mode_from_string(const std::string& s) {
  if (s == "group_only") return HeadMode::kGroupOnly;
  if (s == "subject_only") return HeadMode::kSubjectOnly;
  if (s == "group_plus_subject") return HeadMode::kGroupPlusSubject;
  throw ValidationError("unknown head mode: " + s);
}

void EncoderConfig::validate() const {
  if (backbones.empty()) throw ValidationError("encoder config: no backbones");
  for (const auto& bb : backbones)
    if (bb.label.empty() || bb.dim < 1)
      throw ValidationError("encoder config: backbone needs a label and dim >= 1");
  if (embed_dim < 1) throw ValidationError("encoder config: embed_dim must be >= 1");
  if (kernel_width < 0 || (kernel_width > 0 && kernel_width % 2 == 0))
    throw ValidationError("encoder config: kernel_width must be 0 or odd");
  if (subjects < 1) throw ValidationError("encoder config: subjects must be >= 1");
  if (parcels < 1) throw ValidationError("encoder config: parcels must be >= 1");
}

template <class Scalar>
template <class Other>
EncoderParamsT<Other> EncoderParamsT<Scalar>::cast() const {
  EncoderParamsT<Other> out;
  auto conv = [](const M& m) {
    return m.template cast<Other>().eval();
  };
  for (const auto& m : proj_w) out.proj_w.push_back(conv(m));
  for (const auto& m : proj_b) out.proj_b.push_back(conv(m));
  for (const auto& m : conv_k) out.conv_k.push_back(conv(m));
  out.group_w = conv(group_w);
  out.group_b = conv(group_b);
  for (const auto& m : subj_w) out.subj_w.push_back(conv(m));
  for (const auto& m : subj_b) out.subj_b.push_back(conv(m));
  return out;
}

template EncoderParamsT<float> EncoderParamsT<double>::cast<float>() const;
template EncoderParamsT<double> EncoderParamsT<float>::cast<double>() const;
template EncoderParamsT<double> EncoderParamsT<double>::cast<double>() const;

template <class Scalar>
std::vector<BlockRefT<Scalar>> collect_blocks(EncoderParamsT<Scalar>& p,
                                              std::span<const BackboneInfo> backbones) {
  std::vector<BlockRefT<Scalar>> out;
  for (size_t m = 0; m < backbones.size(); ++m) {
    out.push_back({"proj." + backbones[m].label + ".w", &p.proj_w[m]});
    out.push_back({"proj." + backbones[m].label + ".b", &p.proj_b[m]});
    if (m < p.conv_k.size())
      out.push_back({"conv." + backbones[m].label + ".k", &p.conv_k[m]});
  }
  if (p.group_w.size() > 0) {
    out.push_back({"head.group.w", &p.group_w});
    out.push_back({"head.group.b", &p.group_b});
  }
  for (size_t s = 0; s < p.subj_w.size(); ++s) {
    out.push_back({"head.sub" + std::to_string(s) + ".w", &p.subj_w[s]});
    out.push_back({"head.sub" + std::to_string(s) + ".b", &p.subj_b[s]});
  }
  return out;
}

template std::vector<BlockRefT<double>> collect_blocks(
    EncoderParamsT<double>&, std::span<const BackboneInfo>);
template std::vector<BlockRefT<float>> collect_blocks(
    EncoderParamsT<float>&, std::span<const BackboneInfo>);

EncoderParams zero_params(const EncoderConfig& config) {
  config.validate();
  return detail::zero_params_t<double>(config);
}

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams p = detail::zero_params_t<double>(config);
  Rng rng(seed);
  auto fill_uniform = [&](Mat& m, double bound) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
  };
  for (size_t m = 0; m < config.backbones.size(); ++m) {
    const double bound = std::sqrt(3.0 / static_cast<double>(config.backbones[m].dim));
    fill_uniform(p.proj_w[m], bound);
  }
  if (config.kernel_width > 0) {
    const Index center = (config.kernel_width - 1) / 2;
    for (auto& k : p.conv_k) k.col(center).setOnes();
  }
  const double head_bound = std::sqrt(3.0 / static_cast<double>(config.embed_dim));
  if (config.has_group_head()) fill_uniform(p.group_w, head_bound);
  if (config.has_subject_heads())
    for (auto& h : p.subj_w) fill_uniform(h, head_bound);
  return p;
}

Mat embed(const EncoderParams& params, const EncoderConfig& config,
          std::span<const Mat> features) {
  return detail::embed_traced<double>(params, config, features).embedding;
}

Mat predict(const EncoderParams& params, const EncoderConfig& config,
            const Mat& embedding, int subject) {
  return detail::predict_t<double>(params, config, embedding, subject);
}

Mat forward(const EncoderParams& params, const EncoderConfig& config,
            std::span<const Mat> features, int subject) {
  return predict(params, config, embed(params, config, features), subject);
}

std::int64_t param_count(const EncoderConfig& config) {
  config.validate();
  const auto d = static_cast<std::int64_t>(config.embed_dim);
  const auto k = static_cast<std::int64_t>(config.kernel_width);
  const auto parcels = static_cast<std::int64_t>(config.parcels);
  std::int64_t total = 0;
  for (const auto& bb : config.backbones) {
    total += static_cast<std::int64_t>(bb.dim) * d + d;
    if (k > 0) total += (config.kernel_type == KernelType::kTied) ? k : d * k;
  }
  const std::int64_t head = d * parcels + parcels;
  if (config.has_group_head()) total += head;
  if (config.has_subject_heads()) total += config.subjects * head;
  return total;
}

Mat depthwise_conv(const Mat& z, const Mat& kernel, KernelType type) {
  return detail::depthwise_conv_t<double>(z, kernel, type);
}

void depthwise_conv_backward(const Mat& z, const Mat& kernel, KernelType type,
                             const Mat& grad_out, Mat* grad_z, Mat* grad_kernel) {
  detail::depthwise_conv_backward_t<double>(z, kernel, type, grad_out, grad_z,
                                            grad_kernel);
}

}  // namespace aenc
