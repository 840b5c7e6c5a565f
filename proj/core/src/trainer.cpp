#include "aenc/trainer.hpp"

#include "aenc/metrics.hpp"
#include "aenc/serde.hpp"
#include "aenc/tensor_file.hpp"
#include "model_math.hpp"
#include "train_loop.hpp"

#include <algorithm>
#include <cmath>

namespace aenc {

using detail::BatchItemT;
using detail::MatT;

std::string to_string(Precision p) {
  return p == Precision::kF32 ? "f32" : "f64";
}

Precision precision_from_string(const std::string& s) {
  if (s == "f64") return Precision::kF64;
  if (s == "f32") return Precision::kF32;
  throw ValidationError("unknown precision: " + s);
}

std::string SubjectsMode::str() const {
  return multi ? "multi" : "single:" + std::to_string(subject);
}

SubjectsMode SubjectsMode::parse(const std::string& s) {
  if (s == "multi") return Multi();
  if (s.rfind("single:", 0) == 0) return Single(std::stoi(s.substr(7)));
  throw ValidationError("unknown subjects_mode: " + s);
}

void TrainConfig::validate() const {
  if (max_steps < 0) throw ValidationError("train config: max_steps must be >= 0");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (window_length < 1) throw ValidationError("train config: window_length must be >= 1");
  if (lr <= 0) throw ValidationError("train config: lr must be positive");
  if (weight_decay < 0) throw ValidationError("train config: weight_decay must be >= 0");
  if (eval_every < 1) throw ValidationError("train config: eval_every must be >= 1");
}

double loss(const EncoderParams& params, const EncoderConfig& config,
            const TrainBatch& batch) {
  std::vector<BatchItemT<double>> items;
  items.reserve(batch.size());
  for (const auto& item : batch) items.push_back({item.features, item.targets});
  return detail::loss_and_grad_t<double>(params, config, items, nullptr);
}

double loss_and_grad(const EncoderParams& params, const EncoderConfig& config,
                     const TrainBatch& batch, EncoderParams& grads) {
  grads = detail::zero_params_t<double>(config);
  std::vector<BatchItemT<double>> items;
  items.reserve(batch.size());
  for (const auto& item : batch) items.push_back({item.features, item.targets});
  return detail::loss_and_grad_t<double>(params, config, items, &grads);
}

void adamw_step(EncoderParams& params, const EncoderParams& grads,
                const EncoderConfig& config, OptimizerState& state, double lr,
                double weight_decay) {
  auto param_blocks = collect_blocks<double>(params, config.backbones);
  auto grad_blocks = collect_blocks<double>(const_cast<EncoderParams&>(grads),
                                            config.backbones);
  detail::OptStateT<double> opt{std::move(state.moment1), std::move(state.moment2),
                                state.step};
  detail::adamw_step_t<double>(param_blocks, grad_blocks, opt, lr, weight_decay,
                               state.beta1, state.beta2, state.eps);
  state.moment1 = std::move(opt.moment1);
  state.moment2 = std::move(opt.moment2);
  state.step = opt.step;
}

namespace {

// Episode data materialized for training: features in config-backbone order,
// everything z-scored when stats are non-identity.
template <class S>
struct EpisodeView {
  std::vector<MatT<S>> features;
  std::vector<std::optional<MatT<S>>> targets;
};

template <class S>
std::vector<EpisodeView<S>> build_views(const Dataset& ds,
                                        const EncoderConfig& enc,
                                        const NormStats& norm,
                                        const std::vector<int>& subjects) {
  std::vector<EpisodeView<S>> views(ds.episodes.size());
  std::vector<bool> wanted(static_cast<size_t>(ds.subjects), false);
  for (int s : subjects) wanted[static_cast<size_t>(s)] = true;
  for (size_t e = 0; e < ds.episodes.size(); ++e) {
    const Episode& ep = ds.episodes[e];
    auto feats = gather_features(ds, ep, enc.backbones, &norm);
    for (auto& f : feats) views[e].features.push_back(f.cast<S>().eval());
    views[e].targets.resize(static_cast<size_t>(ds.subjects));
    for (int s = 0; s < ds.subjects; ++s) {
      if (!wanted[static_cast<size_t>(s)]) continue;
      const auto& bold = ep.bold[static_cast<size_t>(s)];
      if (!bold) continue;
      Mat b = *bold;
      b.rowwise() -= norm.bold_mean[static_cast<size_t>(s)];
      b.array().rowwise() /= norm.bold_std[static_cast<size_t>(s)].array();
      views[e].targets[static_cast<size_t>(s)] = b.cast<S>().eval();
    }
  }
  return views;
}

// Deterministic shuffled window stream; refills one epoch at a time with
// fresh random offsets.
class WindowStream {
 public:
  WindowStream(const Dataset& ds, const SplitSpec& split, Index length,
               std::uint64_t seed)
      : ds_(ds), split_(split), length_(length), seed_(seed) {}

  Window next() {
    if (cursor_ >= pool_.size()) refill();
    return pool_[cursor_++];
  }

 private:
  void refill() {
    pool_ = make_windows(ds_, split_, length_, mix_seed(seed_, 1000 + epoch_));
    if (pool_.empty()) throw ValidationError("train: no training windows");
    Rng rng(mix_seed(seed_, 2000 + epoch_));
    for (size_t i = pool_.size(); i > 1; --i)
      std::swap(pool_[i - 1], pool_[rng.bounded(i)]);
    cursor_ = 0;
    ++epoch_;
  }

  const Dataset& ds_;
  const SplitSpec& split_;
  Index length_;
  std::uint64_t seed_;
  std::vector<Window> pool_;
  size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
};

template <class S>
TrainResult train_impl(const Dataset& ds, const SplitSpec& split,
                       const EncoderConfig& enc, const TrainConfig& cfg,
                       const NormStats& norm, const std::vector<int>& subjects) {
  const auto views = build_views<S>(ds, enc, norm, subjects);
  WindowStream stream(ds, split, cfg.window_length, cfg.seed);

  auto next_batch = [&](long) {
    std::vector<BatchItemT<S>> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Window w = stream.next();
      const auto& view = views[static_cast<size_t>(w.episode)];
      BatchItemT<S> item;
      for (const auto& f : view.features)
        item.features.push_back(f.middleRows(w.start, w.length).eval());
      item.targets.resize(static_cast<size_t>(enc.subjects));
      for (int s : subjects) {
        const auto& t = view.targets[static_cast<size_t>(s)];
        if (t)
          item.targets[static_cast<size_t>(s)] =
              t->middleRows(w.start, w.length).eval();
      }
      batch.push_back(std::move(item));
    }
    return batch;
  };
  auto make_zeros = [&] { return detail::zero_params_t<S>(enc); };
  auto collect = [&](EncoderParamsT<S>& p) {
    return collect_blocks<S>(p, enc.backbones);
  };
  auto loss_grad = [&](const EncoderParamsT<S>& p,
                       const std::vector<BatchItemT<S>>& batch,
                       EncoderParamsT<S>& grads) {
    return detail::loss_and_grad_t<S>(p, enc, batch, &grads);
  };
  auto evaluate = [&](const EncoderParamsT<S>& p) {
    // always scored in f64 on whole episodes
    EncoderParams p64 = p.template cast<double>();
    return mean_score(p64, enc, norm, ds, split.validation, &subjects);
  };

  EncoderParamsT<S> init =
      init_params(enc, cfg.seed).template cast<S>();
  auto loop = detail::run_steps<S>(std::move(init), cfg, make_zeros, collect,
                                   next_batch, loss_grad, evaluate);

  TrainResult result;
  result.checkpoint.params = loop.best.template cast<double>();
  result.checkpoint.encoder = enc;
  result.checkpoint.train = cfg;
  result.checkpoint.norm = norm;
  result.checkpoint.best_score = loop.best_score;
  result.checkpoint.best_step = loop.best_step;
  result.evals = std::move(loop.evals);
  result.losses = std::move(loop.losses);
  return result;
}

}  // namespace

TrainResult train(const Dataset& ds, const SplitSpec& split,
                  EncoderConfig enc_config, TrainConfig train_config) {
  split.validate();
  train_config.validate();
  if (ds.episode_indices(split.train).empty())
    throw ValidationError("train: train split matches no episodes");
  if (train_config.max_steps > 0 &&
      ds.episode_indices(split.validation).empty())
    throw ValidationError("train: early stopping needs a non-empty validation split");
  if (enc_config.kernel_width > train_config.window_length)
    throw ValidationError("train: window_length must be >= kernel_width");

  std::vector<int> subjects;
  if (train_config.subjects_mode.multi) {
    for (int s = 0; s < enc_config.subjects; ++s) subjects.push_back(s);
  } else {
    const int s = train_config.subjects_mode.subject;
    if (s < 0 || s >= enc_config.subjects)
      throw ValidationError("train: single-subject index out of range");
    if (enc_config.head_mode == HeadMode::kGroupOnly)
      throw ValidationError(
          "train: single-subject mode disables the group head; head_mode "
          "group_only is contradictory");
    // single-subject runs train that subject's head path only
    enc_config.head_mode = HeadMode::kSubjectOnly;
    subjects.push_back(s);
  }
  enc_config.validate();

  const NormStats full_norm = train_config.normalize
                                  ? zscore_fit(ds, split)
                                  : NormStats::identity_for(ds);
  const NormStats norm = full_norm.subset(ds, enc_config.backbones);

  if (train_config.precision == Precision::kF32)
    return train_impl<float>(ds, split, enc_config, train_config, norm, subjects);
  return train_impl<double>(ds, split, enc_config, train_config, norm, subjects);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  TensorBundle bundle;
  bundle.header["kind"] = "encoder_checkpoint";
  bundle.header["encoder"] = encoder_config_to_json(ckpt.encoder);
  bundle.header["train"] = train_config_to_json(ckpt.train);
  if (std::isnan(ckpt.best_score))
    bundle.header["best_score"] = nullptr;
  else
    bundle.header["best_score"] = ckpt.best_score;
  bundle.header["best_step"] = ckpt.best_step;
  bundle.header["norm"] = norm_stats_meta_to_json(ckpt.norm);

  auto& params = const_cast<Checkpoint&>(ckpt).params;
  for (const auto& block : collect_blocks<double>(params, ckpt.encoder.backbones))
    bundle.add(block.name, *block.value);
  for (size_t m = 0; m < ckpt.encoder.backbones.size(); ++m) {
    const auto& label = ckpt.encoder.backbones[m].label;
    bundle.add("norm.feat." + label + ".mean", ckpt.norm.feat_mean[m]);
    bundle.add("norm.feat." + label + ".std", ckpt.norm.feat_std[m]);
  }
  for (size_t s = 0; s < ckpt.norm.bold_mean.size(); ++s) {
    bundle.add("norm.bold.sub" + std::to_string(s) + ".mean", ckpt.norm.bold_mean[s]);
    bundle.add("norm.bold.sub" + std::to_string(s) + ".std", ckpt.norm.bold_std[s]);
  }
  write_bundle(path, bundle);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const TensorBundle bundle = read_bundle(path);
  if (bundle.header.value("kind", "") != "encoder_checkpoint")
    throw ValidationError(path.string() + ": not an encoder checkpoint");
  Checkpoint ckpt;
  ckpt.encoder = encoder_config_from_json(bundle.header.at("encoder"));
  ckpt.train = train_config_from_json(bundle.header.at("train"));
  ckpt.best_score = bundle.header.at("best_score").is_null()
                        ? std::numeric_limits<double>::quiet_NaN()
                        : bundle.header.at("best_score").get<double>();
  ckpt.best_step = bundle.header.value("best_step", -1);
  ckpt.params = zero_params(ckpt.encoder);
  for (const auto& block : collect_blocks<double>(ckpt.params, ckpt.encoder.backbones)) {
    const Mat& stored = bundle.at(block.name);
    if (stored.rows() != block.value->rows() || stored.cols() != block.value->cols())
      throw ValidationError(path.string() + ": shape mismatch for block " + block.name);
    *block.value = stored;
  }
  const auto& jnorm = bundle.header.at("norm");
  ckpt.norm.identity = jnorm.value("identity", false);
  ckpt.norm.feat_floored =
      jnorm.value("feat_floored", std::vector<std::vector<Index>>{});
  ckpt.norm.bold_floored =
      jnorm.value("bold_floored", std::vector<std::vector<Index>>{});
  for (const auto& bb : ckpt.encoder.backbones) {
    ckpt.norm.feat_mean.push_back(bundle.at("norm.feat." + bb.label + ".mean").row(0));
    ckpt.norm.feat_std.push_back(bundle.at("norm.feat." + bb.label + ".std").row(0));
  }
  for (size_t s = 0;; ++s) {
    const std::string base = "norm.bold.sub" + std::to_string(s);
    if (!bundle.has(base + ".mean")) break;
    ckpt.norm.bold_mean.push_back(bundle.at(base + ".mean").row(0));
    ckpt.norm.bold_std.push_back(bundle.at(base + ".std").row(0));
  }
  return ckpt;
}

GradCheckReport grad_check(const EncoderConfig& config, double tolerance,
                           std::uint64_t seed) {
  config.validate();
  GradCheckReport report;
  report.tolerance = tolerance;

  // Randomized small problem. Kernels and biases get noise on top of the
  // init so no block sits at a stationary point (delta kernels leave the
  // off-center taps of a positive kernel exactly at zero, where the |.|
  // subgradient pins them).
  EncoderParams params = init_params(config, mix_seed(seed, 1));
  Rng rng(mix_seed(seed, 2));
  auto jitter = [&](Mat& m, double amp) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) += rng.uniform(-amp, amp);
  };
  for (auto& k : params.conv_k) jitter(k, 0.5);
  for (auto& b : params.proj_b) jitter(b, 0.1);
  if (params.group_b.size() > 0) jitter(params.group_b, 0.1);
  for (auto& b : params.subj_b) jitter(b, 0.1);

  const Index len = std::max<Index>(config.kernel_width, 4) + 3;
  TrainBatch batch;
  for (int i = 0; i < 2; ++i) {
    TrainBatchItem item;
    for (const auto& bb : config.backbones) {
      Mat f(len, bb.dim);
      for (Index r = 0; r < f.rows(); ++r)
        for (Index c = 0; c < f.cols(); ++c) f(r, c) = rng.normal();
      item.features.push_back(std::move(f));
    }
    item.targets.resize(static_cast<size_t>(config.subjects));
    for (int s = 0; s < config.subjects; ++s) {
      Mat t(len, config.parcels);
      for (Index r = 0; r < t.rows(); ++r)
        for (Index c = 0; c < t.cols(); ++c) t(r, c) = rng.normal();
      item.targets[static_cast<size_t>(s)] = std::move(t);
    }
    batch.push_back(std::move(item));
  }

  EncoderParams analytic;
  loss_and_grad(params, config, batch, analytic);

  const double h = 1e-5;
  auto param_blocks = collect_blocks<double>(params, config.backbones);
  auto grad_blocks = collect_blocks<double>(analytic, config.backbones);
  for (size_t b = 0; b < param_blocks.size(); ++b) {
    Mat& block = *param_blocks[b].value;
    const Mat& ga = *grad_blocks[b].value;
    double max_err = 0;
    for (Index r = 0; r < block.rows(); ++r) {
      for (Index c = 0; c < block.cols(); ++c) {
        const double orig = block(r, c);
        block(r, c) = orig + h;
        const double lp = loss(params, config, batch);
        block(r, c) = orig - h;
        const double lm = loss(params, config, batch);
        block(r, c) = orig;
        const double fd = (lp - lm) / (2 * h);
        const double a = ga(r, c);
        const double rel =
            (a == fd) ? 0.0
                      : std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
        max_err = std::max(max_err, rel);
      }
    }
    report.entries.push_back(
        {param_blocks[b].name, max_err, max_err <= tolerance});
  }
  report.all_pass = std::all_of(report.entries.begin(), report.entries.end(),
                                [](const auto& e) { return e.pass; });
  return report;
}

}  // namespace aenc
