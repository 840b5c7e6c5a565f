#include "aenc/ceilings.hpp"

#include "aenc/serde.hpp"
#include "aenc/tensor_file.hpp"
#include "model_math.hpp"
#include "train_loop.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace aenc {

std::vector<RepeatPair> collect_repeats(const Dataset& ds) {
  std::vector<RepeatPair> out;
  for (const auto& ep : ds.episodes)
    for (int s = 0; s < ds.subjects; ++s) {
      const auto& first = ep.bold[static_cast<size_t>(s)];
      const auto& second = ep.bold_repeat[static_cast<size_t>(s)];
      if (first && second) out.push_back({ep.id, s, *first, *second});
    }
  return out;
}

std::vector<ParcelScores> split_half_ceiling(std::span<const RepeatPair> pairs) {
  if (pairs.empty()) throw ValidationError("split_half_ceiling: no repeat pairs");
  // (subject, movie) -> episode-name-sorted pair list
  std::map<std::pair<int, std::string>, std::vector<const RepeatPair*>> cells;
  for (const auto& p : pairs) {
    if (p.first.rows() != p.second.rows() || p.first.cols() != p.second.cols())
      throw ValidationError("split_half_ceiling: presentation shapes differ for " +
                            p.episode.name);
    cells[{p.subject, p.episode.movie}].push_back(&p);
  }
  std::vector<ParcelScores> out;
  for (auto& [key, list] : cells) {
    std::sort(list.begin(), list.end(), [](const RepeatPair* a, const RepeatPair* b) {
      return a->episode.name < b->episode.name;
    });
    Index total = 0;
    for (const auto* p : list) total += p->first.rows();
    Mat first(total, list.front()->first.cols());
    Mat second(total, list.front()->first.cols());
    Index row = 0;
    for (const auto* p : list) {
      first.middleRows(row, p->first.rows()) = p->first;
      second.middleRows(row, p->second.rows()) = p->second;
      row += p->first.rows();
    }
    ParcelScores ps;
    ps.subject = key.first;
    ps.movie = key.second;
    ps.n_trs = total;
    ps.r = columnwise_pearson(first, second);
    out.push_back(std::move(ps));
  }
  return out;
}

void CrossConfig::validate() const {
  if (embed_dim < 1) throw ValidationError("cross config: embed_dim must be >= 1");
  if (kernel_width < 0 || (kernel_width > 0 && kernel_width % 2 == 0))
    throw ValidationError("cross config: kernel_width must be 0 or odd");
  if (subjects < 2) throw ValidationError("cross config: needs at least 2 subjects");
  if (parcels < 1) throw ValidationError("cross config: parcels must be >= 1");
}

CrossParams cross_zero_params(const CrossConfig& config) {
  CrossParams p;
  const Index d = config.embed_dim;
  p.in_group_w = Mat::Zero(config.parcels, d);
  p.in_group_b = Mat::Zero(1, d);
  for (int s = 0; s < config.subjects; ++s) {
    p.in_subj_w.push_back(Mat::Zero(config.parcels, d));
    p.in_subj_b.push_back(Mat::Zero(1, d));
    if (config.kernel_width > 0)
      p.conv_k.push_back(Mat::Zero(
          config.kernel_type == KernelType::kTied ? 1 : d, config.kernel_width));
  }
  if (config.has_group_head()) {
    p.head_group_w = Mat::Zero(d, config.parcels);
    p.head_group_b = Mat::Zero(1, config.parcels);
  }
  if (config.has_subject_heads()) {
    for (int s = 0; s < config.subjects; ++s) {
      p.head_subj_w.push_back(Mat::Zero(d, config.parcels));
      p.head_subj_b.push_back(Mat::Zero(1, config.parcels));
    }
  }
  return p;
}

std::vector<BlockRef> collect_cross_blocks(CrossParams& p) {
  std::vector<BlockRef> out;
  out.push_back({"in.group.w", &p.in_group_w});
  out.push_back({"in.group.b", &p.in_group_b});
  for (size_t s = 0; s < p.in_subj_w.size(); ++s) {
    out.push_back({"in.sub" + std::to_string(s) + ".w", &p.in_subj_w[s]});
    out.push_back({"in.sub" + std::to_string(s) + ".b", &p.in_subj_b[s]});
  }
  for (size_t s = 0; s < p.conv_k.size(); ++s)
    out.push_back({"conv.sub" + std::to_string(s) + ".k", &p.conv_k[s]});
  if (p.head_group_w.size() > 0) {
    out.push_back({"head.group.w", &p.head_group_w});
    out.push_back({"head.group.b", &p.head_group_b});
  }
  for (size_t s = 0; s < p.head_subj_w.size(); ++s) {
    out.push_back({"head.sub" + std::to_string(s) + ".w", &p.head_subj_w[s]});
    out.push_back({"head.sub" + std::to_string(s) + ".b", &p.head_subj_b[s]});
  }
  return out;
}

CrossParams cross_init_params(const CrossConfig& config, std::uint64_t seed) {
  config.validate();
  CrossParams p = cross_zero_params(config);
  Rng rng(seed);
  auto fill_uniform = [&](Mat& m, double bound) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
  };
  const double in_bound = std::sqrt(3.0 / static_cast<double>(config.parcels));
  fill_uniform(p.in_group_w, in_bound);
  for (auto& w : p.in_subj_w) fill_uniform(w, in_bound);
  if (config.kernel_width > 0) {
    const Index center = (config.kernel_width - 1) / 2;
    for (auto& k : p.conv_k) k.col(center).setOnes();
  }
  const double head_bound = std::sqrt(3.0 / static_cast<double>(config.embed_dim));
  if (config.has_group_head()) fill_uniform(p.head_group_w, head_bound);
  for (auto& h : p.head_subj_w) fill_uniform(h, head_bound);
  return p;
}

std::int64_t cross_param_count(const CrossConfig& config) {
  config.validate();
  CrossParams p = cross_zero_params(config);
  std::int64_t total = 0;
  for (const auto& b : collect_cross_blocks(p)) total += b.value->size();
  return total;
}

namespace {

Mat cross_embed_subject(const CrossParams& p, const CrossConfig& config,
                        const Mat& bold, int subject) {
  const auto s = static_cast<size_t>(subject);
  Mat z = bold * p.in_group_w;
  z.rowwise() += p.in_group_b.row(0);
  z.noalias() += bold * p.in_subj_w[s];
  z.rowwise() += p.in_subj_b[s].row(0);
  if (config.kernel_width == 0) return z;
  return depthwise_conv(z, p.conv_k[s], config.kernel_type);
}

Mat cross_head(const CrossParams& p, const CrossConfig& config, const Mat& pooled,
               int target) {
  const auto s = static_cast<size_t>(target);
  Mat out;
  if (config.has_group_head()) {
    out = pooled * p.head_group_w;
    out.rowwise() += p.head_group_b.row(0);
  }
  if (config.has_subject_heads()) {
    if (out.size() == 0)
      out = pooled * p.head_subj_w[s];
    else
      out += pooled * p.head_subj_w[s];
    out.rowwise() += p.head_subj_b[s].row(0);
  }
  return out;
}

}  // namespace

Mat cross_forward(const CrossParams& params, const CrossConfig& config,
                  std::span<const Mat> bold, int target) {
  config.validate();
  if (static_cast<int>(bold.size()) != config.subjects)
    throw ValidationError("cross_forward: need one BOLD series per subject");
  if (target < 0 || target >= config.subjects)
    throw ValidationError("cross_forward: target subject out of range");
  Mat pooled;
  for (int j = 0; j < config.subjects; ++j) {
    if (j == target) continue;
    Mat e = cross_embed_subject(params, config, bold[static_cast<size_t>(j)], j);
    if (pooled.size() == 0)
      pooled = std::move(e);
    else
      pooled += e;
  }
  pooled /= static_cast<double>(config.subjects - 1);
  return cross_head(params, config, pooled, target);
}

namespace {

double cross_loss_impl(const CrossParams& p, const CrossConfig& config,
                       const CrossBatch& batch, CrossParams* grads) {
  if (batch.empty()) throw ValidationError("cross_loss: empty batch");
  double denom = 0;
  for (const auto& item : batch) {
    if (static_cast<int>(item.bold.size()) != config.subjects ||
        static_cast<int>(item.targets.size()) != config.subjects)
      throw ValidationError("cross_loss: item must cover every subject");
    for (const auto& t : item.targets) denom += static_cast<double>(t.size());
  }
  const double scale = 2.0 / denom;
  const double pool_n = static_cast<double>(config.subjects - 1);

  double sq_sum = 0;
  for (const auto& item : batch) {
    std::vector<Mat> embeds;
    embeds.reserve(static_cast<size_t>(config.subjects));
    for (int j = 0; j < config.subjects; ++j)
      embeds.push_back(
          cross_embed_subject(p, config, item.bold[static_cast<size_t>(j)], j));

    std::vector<Mat> grad_embeds;
    if (grads)
      grad_embeds.assign(static_cast<size_t>(config.subjects),
                         Mat::Zero(embeds[0].rows(), embeds[0].cols()));

    for (int i = 0; i < config.subjects; ++i) {
      Mat pooled;
      for (int j = 0; j < config.subjects; ++j) {
        if (j == i) continue;
        if (pooled.size() == 0)
          pooled = embeds[static_cast<size_t>(j)];
        else
          pooled += embeds[static_cast<size_t>(j)];
      }
      pooled /= pool_n;
      Mat resid = cross_head(p, config, pooled, i) - item.targets[static_cast<size_t>(i)];
      sq_sum += resid.squaredNorm();
      if (!grads) continue;
      resid *= scale;
      Mat grad_pooled = Mat::Zero(pooled.rows(), pooled.cols());
      const auto si = static_cast<size_t>(i);
      if (config.has_group_head()) {
        grads->head_group_w.noalias() += pooled.transpose() * resid;
        grads->head_group_b += resid.colwise().sum();
        grad_pooled.noalias() += resid * p.head_group_w.transpose();
      }
      if (config.has_subject_heads()) {
        grads->head_subj_w[si].noalias() += pooled.transpose() * resid;
        grads->head_subj_b[si] += resid.colwise().sum();
        grad_pooled.noalias() += resid * p.head_subj_w[si].transpose();
      }
      grad_pooled /= pool_n;
      for (int j = 0; j < config.subjects; ++j)
        if (j != i) grad_embeds[static_cast<size_t>(j)] += grad_pooled;
    }
    if (!grads) continue;
    for (int j = 0; j < config.subjects; ++j) {
      const auto sj = static_cast<size_t>(j);
      Mat grad_z;
      if (config.kernel_width > 0) {
        // recompute the pre-conv projection for the conv backward pass
        Mat z = item.bold[sj] * p.in_group_w;
        z.rowwise() += p.in_group_b.row(0);
        z.noalias() += item.bold[sj] * p.in_subj_w[sj];
        z.rowwise() += p.in_subj_b[sj].row(0);
        grad_z = Mat::Zero(z.rows(), z.cols());
        depthwise_conv_backward(z, p.conv_k[sj], config.kernel_type,
                                grad_embeds[sj], &grad_z, &grads->conv_k[sj]);
      } else {
        grad_z = std::move(grad_embeds[sj]);
      }
      grads->in_group_w.noalias() += item.bold[sj].transpose() * grad_z;
      grads->in_group_b += grad_z.colwise().sum();
      grads->in_subj_w[sj].noalias() += item.bold[sj].transpose() * grad_z;
      grads->in_subj_b[sj] += grad_z.colwise().sum();
    }
  }
  return sq_sum / denom;
}

}  // namespace

double cross_loss(const CrossParams& params, const CrossConfig& config,
                  const CrossBatch& batch) {
  return cross_loss_impl(params, config, batch, nullptr);
}

double cross_loss_and_grad(const CrossParams& params, const CrossConfig& config,
                           const CrossBatch& batch, CrossParams& grads) {
  grads = cross_zero_params(config);
  return cross_loss_impl(params, config, batch, &grads);
}

namespace {

std::vector<int> all_present_episodes(const Dataset& ds,
                                      const std::set<std::string>& movies) {
  std::vector<int> out;
  for (int e : ds.episode_indices(movies)) {
    const Episode& ep = ds.episodes[static_cast<size_t>(e)];
    bool all = true;
    for (int s = 0; s < ds.subjects; ++s)
      if (!ep.bold[static_cast<size_t>(s)]) all = false;
    if (all) out.push_back(e);
  }
  return out;
}

std::vector<Mat> normalized_bold(const Episode& ep, const NormStats& norm,
                                 int subjects) {
  std::vector<Mat> out;
  for (int s = 0; s < subjects; ++s) {
    Mat b = *ep.bold[static_cast<size_t>(s)];
    b.rowwise() -= norm.bold_mean[static_cast<size_t>(s)];
    b.array().rowwise() /= norm.bold_std[static_cast<size_t>(s)].array();
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<ParcelScores> cross_score_params(const CrossParams& params,
                                             const CrossConfig& config,
                                             const NormStats& norm,
                                             const Dataset& ds,
                                             const std::set<std::string>& movies) {
  std::vector<ParcelScores> out;
  for (const auto& movie : movies) {
    const auto eps = all_present_episodes(ds, {movie});
    if (eps.empty()) continue;
    for (int s = 0; s < ds.subjects; ++s) {
      std::vector<Mat> preds, targets;
      Index total = 0;
      for (int e : eps) {
        const Episode& ep = ds.episodes[static_cast<size_t>(e)];
        const auto bold = normalized_bold(ep, norm, ds.subjects);
        Mat pred = cross_forward(params, config, bold, s);
        pred.array().rowwise() *= norm.bold_std[static_cast<size_t>(s)].array();
        pred.rowwise() += norm.bold_mean[static_cast<size_t>(s)];
        total += pred.rows();
        preds.push_back(std::move(pred));
        targets.push_back(*ep.bold[static_cast<size_t>(s)]);
      }
      Mat pred_cat(total, preds.front().cols());
      Mat targ_cat(total, preds.front().cols());
      Index row = 0;
      for (size_t i = 0; i < preds.size(); ++i) {
        pred_cat.middleRows(row, preds[i].rows()) = preds[i];
        targ_cat.middleRows(row, preds[i].rows()) = targets[i];
        row += preds[i].rows();
      }
      ParcelScores ps;
      ps.subject = s;
      ps.movie = movie;
      ps.n_trs = total;
      ps.r = columnwise_pearson(pred_cat, targ_cat);
      out.push_back(std::move(ps));
    }
  }
  return out;
}

}  // namespace

CrossTrainResult cross_train(const Dataset& ds, const SplitSpec& split,
                             CrossConfig config, TrainConfig train_config) {
  split.validate();
  train_config.validate();
  config.subjects = ds.subjects;
  config.parcels = ds.parcels();
  config.validate();
  if (config.kernel_width > train_config.window_length)
    throw ValidationError("cross_train: window_length must be >= kernel_width");

  const auto train_eps = all_present_episodes(ds, split.train);
  if (train_eps.empty())
    throw ValidationError("cross_train: no train episode has every subject present");
  if (train_config.max_steps > 0 &&
      ds.episode_indices(split.validation).empty())
    throw ValidationError("cross_train: early stopping needs a validation split");

  const NormStats norm = train_config.normalize ? zscore_fit(ds, split)
                                                : NormStats::identity_for(ds);

  // normalized all-subject views of the usable train episodes
  std::vector<std::vector<Mat>> views(ds.episodes.size());
  std::vector<bool> usable(ds.episodes.size(), false);
  for (int e : train_eps) {
    views[static_cast<size_t>(e)] =
        normalized_bold(ds.episodes[static_cast<size_t>(e)], norm, ds.subjects);
    usable[static_cast<size_t>(e)] = true;
  }

  struct Stream {
    const Dataset& ds;
    const SplitSpec& split;
    const std::vector<bool>& usable;
    Index length;
    std::uint64_t seed;
    std::vector<Window> pool;
    size_t cursor = 0;
    std::uint64_t epoch = 0;

    Window next() {
      while (cursor >= pool.size()) refill();
      return pool[cursor++];
    }
    void refill() {
      pool = make_windows(ds, split, length, mix_seed(seed, 1000 + epoch));
      std::erase_if(pool, [&](const Window& w) {
        return !usable[static_cast<size_t>(w.episode)];
      });
      Rng rng(mix_seed(seed, 2000 + epoch));
      for (size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[rng.bounded(i)]);
      ++epoch;
      cursor = 0;
      if (pool.empty() && epoch > 1)
        throw ValidationError("cross_train: no usable training windows");
    }
  } stream{ds, split, usable, train_config.window_length, train_config.seed, {}, 0, 0};

  auto next_batch = [&](long) {
    CrossBatch batch;
    batch.reserve(static_cast<size_t>(train_config.batch_size));
    for (int b = 0; b < train_config.batch_size; ++b) {
      const Window w = stream.next();
      const auto& view = views[static_cast<size_t>(w.episode)];
      CrossBatchItem item;
      for (int s = 0; s < ds.subjects; ++s) {
        Mat slice = view[static_cast<size_t>(s)].middleRows(w.start, w.length);
        item.bold.push_back(slice);
        item.targets.push_back(std::move(slice));
      }
      batch.push_back(std::move(item));
    }
    return batch;
  };
  auto make_zeros = [&] { return cross_zero_params(config); };
  auto collect = [&](CrossParams& p) { return collect_cross_blocks(p); };
  auto loss_grad = [&](const CrossParams& p, const CrossBatch& batch,
                       CrossParams& grads) {
    return cross_loss_impl(p, config, batch, &grads);
  };
  auto evaluate = [&](const CrossParams& p) {
    const auto scores = cross_score_params(p, config, norm, ds, split.validation);
    if (scores.empty())
      throw ValidationError("cross_train: no validation episode has every subject");
    return aggregate(scores, AggregateLevel::kOverall).overall();
  };

  auto loop = detail::run_steps<double>(cross_init_params(config, train_config.seed),
                                        train_config, make_zeros, collect,
                                        next_batch, loss_grad, evaluate);
  CrossTrainResult result;
  result.checkpoint.params = std::move(loop.best);
  result.checkpoint.config = config;
  result.checkpoint.train = train_config;
  result.checkpoint.norm = norm;
  result.checkpoint.best_score = loop.best_score;
  result.checkpoint.best_step = loop.best_step;
  result.evals = std::move(loop.evals);
  result.losses = std::move(loop.losses);
  return result;
}

std::vector<ParcelScores> cross_score(const CrossCheckpoint& ckpt, const Dataset& ds,
                                      const std::set<std::string>& movies) {
  return cross_score_params(ckpt.params, ckpt.config, ckpt.norm, ds, movies);
}

void save_cross_checkpoint(const std::filesystem::path& path,
                           const CrossCheckpoint& ckpt) {
  TensorBundle bundle;
  bundle.header["kind"] = "cross_checkpoint";
  bundle.header["cross"] = {{"embed_dim", ckpt.config.embed_dim},
                            {"kernel_width", ckpt.config.kernel_width},
                            {"kernel_type", to_string(ckpt.config.kernel_type)},
                            {"head_mode", to_string(ckpt.config.head_mode)},
                            {"subjects", ckpt.config.subjects},
                            {"parcels", ckpt.config.parcels}};
  bundle.header["train"] = train_config_to_json(ckpt.train);
  if (std::isnan(ckpt.best_score))
    bundle.header["best_score"] = nullptr;
  else
    bundle.header["best_score"] = ckpt.best_score;
  bundle.header["best_step"] = ckpt.best_step;
  bundle.header["norm"] = norm_stats_meta_to_json(ckpt.norm);
  auto& params = const_cast<CrossCheckpoint&>(ckpt).params;
  for (const auto& block : collect_cross_blocks(params))
    bundle.add(block.name, *block.value);
  for (size_t s = 0; s < ckpt.norm.bold_mean.size(); ++s) {
    bundle.add("norm.bold.sub" + std::to_string(s) + ".mean", ckpt.norm.bold_mean[s]);
    bundle.add("norm.bold.sub" + std::to_string(s) + ".std", ckpt.norm.bold_std[s]);
  }
  write_bundle(path, bundle);
}

CrossCheckpoint load_cross_checkpoint(const std::filesystem::path& path) {
  const TensorBundle bundle = read_bundle(path);
  if (bundle.header.value("kind", "") != "cross_checkpoint")
    throw ValidationError(path.string() + ": not a cross-subject checkpoint");
  CrossCheckpoint ckpt;
  const auto& jc = bundle.header.at("cross");
  ckpt.config.embed_dim = jc.at("embed_dim").get<Index>();
  ckpt.config.kernel_width = jc.at("kernel_width").get<Index>();
  ckpt.config.kernel_type = kernel_type_from_string(jc.at("kernel_type").get<std::string>());
  ckpt.config.head_mode = head_mode_from_string(jc.at("head_mode").get<std::string>());
  ckpt.config.subjects = jc.at("subjects").get<int>();
  ckpt.config.parcels = jc.at("parcels").get<Index>();
  ckpt.train = train_config_from_json(bundle.header.at("train"));
  ckpt.best_score = bundle.header.at("best_score").is_null()
                        ? std::numeric_limits<double>::quiet_NaN()
                        : bundle.header.at("best_score").get<double>();
  ckpt.best_step = bundle.header.value("best_step", -1);
  ckpt.params = cross_zero_params(ckpt.config);
  for (const auto& block : collect_cross_blocks(ckpt.params)) {
    const Mat& stored = bundle.at(block.name);
    if (stored.rows() != block.value->rows() || stored.cols() != block.value->cols())
      throw ValidationError(path.string() + ": shape mismatch for block " + block.name);
    *block.value = stored;
  }
  const auto& jnorm = bundle.header.at("norm");
  ckpt.norm.identity = jnorm.value("identity", false);
  ckpt.norm.bold_floored =
      jnorm.value("bold_floored", std::vector<std::vector<Index>>{});
  for (size_t s = 0;; ++s) {
    const std::string base = "norm.bold.sub" + std::to_string(s);
    if (!bundle.has(base + ".mean")) break;
    ckpt.norm.bold_mean.push_back(bundle.at(base + ".mean").row(0));
    ckpt.norm.bold_std.push_back(bundle.at(base + ".std").row(0));
  }
  return ckpt;
}

GradCheckReport cross_grad_check(const CrossConfig& config, double tolerance,
                                 std::uint64_t seed) {
  config.validate();
  GradCheckReport report;
  report.tolerance = tolerance;

  CrossParams params = cross_init_params(config, mix_seed(seed, 1));
  Rng rng(mix_seed(seed, 2));
  auto jitter = [&](Mat& m, double amp) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) += rng.uniform(-amp, amp);
  };
  for (auto& k : params.conv_k) jitter(k, 0.5);
  jitter(params.in_group_b, 0.1);
  for (auto& b : params.in_subj_b) jitter(b, 0.1);
  if (params.head_group_b.size() > 0) jitter(params.head_group_b, 0.1);
  for (auto& b : params.head_subj_b) jitter(b, 0.1);

  const Index len = std::max<Index>(config.kernel_width, 4) + 3;
  CrossBatch batch;
  for (int i = 0; i < 2; ++i) {
    CrossBatchItem item;
    for (int s = 0; s < config.subjects; ++s) {
      Mat b(len, config.parcels), t(len, config.parcels);
      for (Index r = 0; r < len; ++r)
        for (Index c = 0; c < config.parcels; ++c) {
          b(r, c) = rng.normal();
          t(r, c) = rng.normal();
        }
      item.bold.push_back(std::move(b));
      item.targets.push_back(std::move(t));
    }
    batch.push_back(std::move(item));
  }

  CrossParams analytic;
  cross_loss_and_grad(params, config, batch, analytic);

  const double h = 1e-5;
  auto param_blocks = collect_cross_blocks(params);
  auto grad_blocks = collect_cross_blocks(analytic);
  for (size_t b = 0; b < param_blocks.size(); ++b) {
    Mat& block = *param_blocks[b].value;
    const Mat& ga = *grad_blocks[b].value;
    double max_err = 0;
    for (Index r = 0; r < block.rows(); ++r) {
      for (Index c = 0; c < block.cols(); ++c) {
        const double orig = block(r, c);
        block(r, c) = orig + h;
        const double lp = cross_loss(params, config, batch);
        block(r, c) = orig - h;
        const double lm = cross_loss(params, config, batch);
        block(r, c) = orig;
        const double fd = (lp - lm) / (2 * h);
        const double a = ga(r, c);
        const double rel =
            (a == fd) ? 0.0
                      : std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
        max_err = std::max(max_err, rel);
      }
    }
    report.entries.push_back({param_blocks[b].name, max_err, max_err <= tolerance});
  }
  report.all_pass = std::all_of(report.entries.begin(), report.entries.end(),
                                [](const auto& e) { return e.pass; });
  return report;
}

std::vector<ParcelScores> ceiling_gap(const std::vector<ParcelScores>& feature_scores,
                                      const std::vector<ParcelScores>& ceiling_scores) {
  if (feature_scores.size() != ceiling_scores.size())
    throw ValidationError("ceiling_gap: score grids differ in size");
  auto find = [](const std::vector<ParcelScores>& scores, int subject,
                 const std::string& movie) -> const ParcelScores* {
    for (const auto& s : scores)
      if (s.subject == subject && s.movie == movie) return &s;
    return nullptr;
  };
  std::vector<ParcelScores> out;
  for (const auto& feat : feature_scores) {
    const auto* ceil = find(ceiling_scores, feat.subject, feat.movie);
    if (!ceil)
      throw ValidationError("ceiling_gap: no ceiling cell for subject " +
                            std::to_string(feat.subject) + ", movie " + feat.movie);
    if (ceil->r.size() != feat.r.size())
      throw ValidationError("ceiling_gap: parcel counts differ");
    ParcelScores gap;
    gap.subject = feat.subject;
    gap.movie = feat.movie;
    gap.n_trs = feat.n_trs;
    gap.r.resize(feat.r.size());
    for (Index p = 0; p < feat.r.size(); ++p) {
      const double f = std::isnan(feat.r(p)) ? 0.0 : feat.r(p);
      const double c = std::isnan(ceil->r(p)) ? 0.0 : ceil->r(p);
      gap.r(p) = c - f;
    }
    out.push_back(std::move(gap));
  }
  return out;
}

}  // namespace aenc
