#include "aenc/synth.hpp"

#include <algorithm>
#include <cmath>

namespace aenc {

using nlohmann::json;

void SynthSpec::validate() const {
  if (subjects < 1) throw ValidationError("synth: subjects must be >= 1");
  if (parcels < 1) throw ValidationError("synth: parcels must be >= 1");
  if (backbones.empty()) throw ValidationError("synth: need at least one backbone");
  for (const auto& bb : backbones)
    if (bb.label.empty() || bb.dim < 1)
      throw ValidationError("synth: backbone needs a label and dim >= 1");
  if (episodes.empty()) throw ValidationError("synth: need at least one episode");
  for (const auto& ep : episodes)
    if (ep.name.empty() || ep.movie.empty() || ep.trs < 1)
      throw ValidationError("synth: episode needs a name, movie, and trs >= 1");
  if (embed_dim < 1) throw ValidationError("synth: embed_dim must be >= 1");
  if (kernel_width < 0 || (kernel_width > 0 && kernel_width % 2 == 0))
    throw ValidationError("synth: kernel_width must be 0 or odd");
  if (kernel_shape != "hrf" && kernel_shape != "random" && kernel_shape != "delta")
    throw ValidationError("synth: kernel_shape must be hrf, random, or delta");
  if (noise_std < 0) throw ValidationError("synth: noise_std must be >= 0");
  if (group_weight < 0 || subject_weight < 0 || group_weight + subject_weight <= 0)
    throw ValidationError("synth: head weights must be >= 0 and not both zero");
  if (tr_seconds <= 0) throw ValidationError("synth: tr_seconds must be positive");
}

SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec spec;
  try {
    spec.subjects = j.value("subjects", spec.subjects);
    spec.parcels = j.value("parcels", spec.parcels);
    if (j.contains("backbones")) {
      spec.backbones.clear();
      for (const auto& bb : j.at("backbones"))
        spec.backbones.push_back(
            {bb.at("label").get<std::string>(), bb.at("dim").get<Index>()});
    }
    spec.episodes.clear();
    for (const auto& ep : j.at("episodes"))
      spec.episodes.push_back({ep.at("name").get<std::string>(),
                               ep.at("movie").get<std::string>(),
                               ep.at("trs").get<Index>()});
    spec.embed_dim = j.value("embed_dim", spec.embed_dim);
    spec.kernel_width = j.value("kernel_width", spec.kernel_width);
    spec.kernel_shape = j.value("kernel_shape", spec.kernel_shape);
    spec.noise_std = j.value("noise_std", spec.noise_std);
    spec.group_weight = j.value("group_weight", spec.group_weight);
    spec.subject_weight = j.value("subject_weight", spec.subject_weight);
    if (j.contains("repeat_movies"))
      for (const auto& m : j.at("repeat_movies"))
        spec.repeat_movies.insert(m.get<std::string>());
    spec.tr_seconds = j.value("tr_seconds", spec.tr_seconds);
    spec.seed = j.value("seed", spec.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synth spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

json synth_spec_to_json(const SynthSpec& spec) {
  json backbones = json::array();
  for (const auto& bb : spec.backbones)
    backbones.push_back({{"label", bb.label}, {"dim", bb.dim}});
  json episodes = json::array();
  for (const auto& ep : spec.episodes)
    episodes.push_back({{"name", ep.name}, {"movie", ep.movie}, {"trs", ep.trs}});
  return {{"subjects", spec.subjects},
          {"parcels", spec.parcels},
          {"backbones", std::move(backbones)},
          {"episodes", std::move(episodes)},
          {"embed_dim", spec.embed_dim},
          {"kernel_width", spec.kernel_width},
          {"kernel_shape", spec.kernel_shape},
          {"noise_std", spec.noise_std},
          {"group_weight", spec.group_weight},
          {"subject_weight", spec.subject_weight},
          {"repeat_movies", spec.repeat_movies},
          {"tr_seconds", spec.tr_seconds},
          {"seed", spec.seed}};
}

namespace {

// Gamma-bump hemodynamic-style kernel over past delays, L2-normalized.
// delay = center - tap, so mass sits on taps that read earlier TRs.
RowVec hrf_taps(Index width) {
  const Index center = (width - 1) / 2;
  RowVec taps = RowVec::Zero(width);
  for (Index j = 0; j < width; ++j) {
    const double delay = static_cast<double>(center - j);
    if (delay < 0) continue;
    taps(j) = std::pow(delay, 2.0) * std::exp(-delay / 1.5);
  }
  if (taps.norm() == 0) taps(center) = 1.0;
  return taps / taps.norm();
}

void fill_normal(Mat& m, Rng& rng, double std_dev = 1.0) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = std_dev * rng.normal();
}

}  // namespace

SynthResult synth_generate(const SynthSpec& spec) {
  spec.validate();

  EncoderConfig config;
  config.backbones = spec.backbones;
  config.embed_dim = spec.embed_dim;
  config.kernel_width = spec.kernel_width;
  config.kernel_type = KernelType::kDefault;
  config.head_mode = HeadMode::kGroupPlusSubject;
  config.subjects = spec.subjects;
  config.parcels = spec.parcels;
  config.validate();

  // planted parameters
  Rng prng(mix_seed(spec.seed, 0xA11));
  EncoderParams params = zero_params(config);
  for (size_t m = 0; m < spec.backbones.size(); ++m) {
    const double bound = std::sqrt(3.0 / static_cast<double>(spec.backbones[m].dim));
    for (Index r = 0; r < params.proj_w[m].rows(); ++r)
      for (Index c = 0; c < params.proj_w[m].cols(); ++c)
        params.proj_w[m](r, c) = prng.uniform(-bound, bound);
  }
  if (spec.kernel_width > 0) {
    const RowVec base = hrf_taps(spec.kernel_width);
    for (auto& k : params.conv_k) {
      if (spec.kernel_shape == "delta") {
        k.col((spec.kernel_width - 1) / 2).setOnes();
      } else if (spec.kernel_shape == "hrf") {
        for (Index c = 0; c < k.rows(); ++c)
          k.row(c) = base * prng.uniform(0.5, 1.5);
      } else {  // random
        for (Index c = 0; c < k.rows(); ++c) {
          for (Index j = 0; j < k.cols(); ++j) k(c, j) = prng.normal();
          k.row(c) /= k.row(c).norm();
        }
      }
    }
  }
  const double total_weight = spec.group_weight + spec.subject_weight;
  const double d_scale = 1.0 / std::sqrt(static_cast<double>(spec.embed_dim));
  fill_normal(params.group_w, prng,
              d_scale * std::sqrt(spec.group_weight / total_weight));
  for (auto& h : params.subj_w)
    fill_normal(h, prng, d_scale * std::sqrt(spec.subject_weight / total_weight));

  // features, f32-rounded so the on-disk round trip is exact
  Dataset ds;
  ds.subjects = spec.subjects;
  ds.backbones = spec.backbones;
  ds.tr_seconds = spec.tr_seconds;
  for (size_t e = 0; e < spec.episodes.size(); ++e) {
    Episode ep;
    ep.id = {spec.episodes[e].name, spec.episodes[e].movie};
    Rng frng(mix_seed(spec.seed, 0xF000 + e));
    for (const auto& bb : spec.backbones) {
      Mat f(spec.episodes[e].trs, bb.dim);
      fill_normal(f, frng);
      ep.features.push_back(f32_round(f));
    }
    ep.bold.resize(static_cast<size_t>(spec.subjects));
    ep.bold_repeat.resize(static_cast<size_t>(spec.subjects));
    ds.episodes.push_back(std::move(ep));
  }

  // calibrate the pooled per-parcel signal std to ~1 via the head columns
  RowVec sumsq = RowVec::Zero(spec.parcels);
  RowVec sum = RowVec::Zero(spec.parcels);
  double n = 0;
  for (const auto& ep : ds.episodes) {
    const Mat e = embed(params, config, ep.features);
    for (int s = 0; s < spec.subjects; ++s) {
      const Mat sig = predict(params, config, e, s);
      sum += sig.colwise().sum();
      sumsq += sig.array().square().colwise().sum().matrix();
      n += static_cast<double>(sig.rows());
    }
  }
  RowVec stddev =
      (sumsq / n - (sum / n).array().square().matrix()).cwiseMax(0.0).array().sqrt();
  for (Index p = 0; p < spec.parcels; ++p) {
    const double scale = stddev(p) > 1e-9 ? 1.0 / stddev(p) : 1.0;
    params.group_w.col(p) *= scale;
    for (auto& h : params.subj_w) h.col(p) *= scale;
  }
  // freeze the planted parameters at f32 precision before producing BOLD
  for (const auto& block : collect_blocks<double>(params, config.backbones))
    *block.value = f32_round(*block.value);

  for (size_t e = 0; e < ds.episodes.size(); ++e) {
    Episode& ep = ds.episodes[e];
    const Mat emb = embed(params, config, ep.features);
    const bool repeat = spec.repeat_movies.count(ep.id.movie) > 0;
    for (int s = 0; s < spec.subjects; ++s) {
      const Mat sig = predict(params, config, emb, s);
      Rng nrng(mix_seed(spec.seed, 0xB000 + (e * static_cast<size_t>(spec.subjects) +
                                             static_cast<size_t>(s)) * 2));
      Mat noise(sig.rows(), sig.cols());
      fill_normal(noise, nrng, spec.noise_std);
      ep.bold[static_cast<size_t>(s)] = f32_round(sig + noise);
      if (repeat) {
        Mat noise2(sig.rows(), sig.cols());
        fill_normal(noise2, nrng, spec.noise_std);
        ep.bold_repeat[static_cast<size_t>(s)] = f32_round(sig + noise2);
      }
    }
  }

  std::sort(ds.episodes.begin(), ds.episodes.end(),
            [](const Episode& a, const Episode& b) { return a.id.name < b.id.name; });
  ds.validate();
  return {std::move(ds), std::move(config), std::move(params)};
}

}  // namespace aenc
