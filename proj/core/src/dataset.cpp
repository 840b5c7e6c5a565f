#include "aenc/dataset.hpp"

#include "aenc/tensor_file.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>

namespace aenc {

using nlohmann::json;

namespace {

void check_finite(const Mat& m, const std::string& ctx) {
  if (!m.allFinite())
    throw ValidationError(ctx + ": non-finite values");
}

std::string episode_file_tag(const std::string& episode, const std::string& series) {
  return episode + "." + series + ".aenc";
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing file: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw ValidationError(path.string() + ": invalid JSON");
  return j;
}

}  // namespace

Index Dataset::parcels() const {
  for (const auto& ep : episodes)
    for (const auto& b : ep.bold)
      if (b) return b->cols();
  return 0;
}

const Episode& Dataset::episode(const std::string& name) const {
  for (const auto& ep : episodes)
    if (ep.id.name == name) return ep;
  throw ValidationError("unknown episode: " + name);
}

std::set<std::string> Dataset::movies() const {
  std::set<std::string> out;
  for (const auto& ep : episodes) out.insert(ep.id.movie);
  return out;
}

std::vector<int> Dataset::episode_indices(const std::set<std::string>& movies) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(episodes.size()); ++i)
    if (movies.count(episodes[i].id.movie)) out.push_back(i);
  return out;
}

Index Dataset::backbone_index(const std::string& label) const {
  for (Index i = 0; i < static_cast<Index>(backbones.size()); ++i)
    if (backbones[static_cast<size_t>(i)].label == label) return i;
  throw ValidationError("unknown backbone: " + label);
}

void Dataset::validate() const {
  if (subjects < 1) throw ValidationError("dataset needs at least one subject");
  if (backbones.empty()) throw ValidationError("dataset needs at least one backbone");
  if (tr_seconds <= 0) throw ValidationError("tr_seconds must be positive");
  std::set<std::string> names;
  Index parcel_count = -1;
  for (const auto& ep : episodes) {
    if (ep.id.movie.empty())
      throw ValidationError(ep.id.name + ": empty movie label");
    if (!names.insert(ep.id.name).second)
      throw ValidationError("duplicate episode name: " + ep.id.name);
    if (ep.features.size() != backbones.size())
      throw ValidationError(ep.id.name + ": feature count does not match backbones");
    const Index trs = ep.trs();
    if (trs < 1) throw ValidationError(ep.id.name + ": empty episode");
    for (size_t m = 0; m < backbones.size(); ++m) {
      const Mat& f = ep.features[m];
      if (f.rows() != trs || f.cols() != backbones[m].dim)
        throw ValidationError(ep.id.name + ": feature shape mismatch for " +
                              backbones[m].label);
      check_finite(f, ep.id.name + "/" + backbones[m].label);
    }
    if (static_cast<int>(ep.bold.size()) != subjects ||
        static_cast<int>(ep.bold_repeat.size()) != subjects)
      throw ValidationError(ep.id.name + ": bold slots do not match subject count");
    for (int s = 0; s < subjects; ++s) {
      for (const auto* series : {&ep.bold[static_cast<size_t>(s)],
                                 &ep.bold_repeat[static_cast<size_t>(s)]}) {
        if (!series->has_value()) continue;
        const Mat& b = series->value();
        if (b.rows() != trs)
          throw ValidationError(ep.id.name + ": bold length differs from features");
        if (parcel_count < 0) parcel_count = b.cols();
        if (b.cols() != parcel_count)
          throw ValidationError(ep.id.name + ": parcel count differs across series");
        check_finite(b, ep.id.name + "/sub" + std::to_string(s));
      }
      if (ep.bold_repeat[static_cast<size_t>(s)] && !ep.bold[static_cast<size_t>(s)])
        throw ValidationError(ep.id.name + ": repeat presentation without a first one");
    }
  }
}

void SplitSpec::validate() const {
  if (train.empty()) throw ValidationError("train split must be non-empty");
  for (const auto& m : validation) {
    if (train.count(m)) throw ValidationError("movie in both train and validation: " + m);
    if (test.count(m)) throw ValidationError("movie in both validation and test: " + m);
  }
  for (const auto& m : test)
    if (train.count(m)) throw ValidationError("movie in both train and test: " + m);
}

NormStats NormStats::identity_for(const Dataset& ds) {
  NormStats out;
  out.identity = true;
  for (const auto& bb : ds.backbones) {
    out.feat_mean.push_back(RowVec::Zero(bb.dim));
    out.feat_std.push_back(RowVec::Ones(bb.dim));
  }
  const Index parcels = ds.parcels();
  for (int s = 0; s < ds.subjects; ++s) {
    out.bold_mean.push_back(RowVec::Zero(parcels));
    out.bold_std.push_back(RowVec::Ones(parcels));
  }
  out.feat_floored.resize(ds.backbones.size());
  out.bold_floored.resize(static_cast<size_t>(ds.subjects));
  return out;
}

NormStats NormStats::subset(const Dataset& ds,
                            std::span<const BackboneInfo> backbones) const {
  NormStats out;
  out.identity = identity;
  out.bold_mean = bold_mean;
  out.bold_std = bold_std;
  out.bold_floored = bold_floored;
  for (const auto& bb : backbones) {
    const size_t i = static_cast<size_t>(ds.backbone_index(bb.label));
    out.feat_mean.push_back(feat_mean[i]);
    out.feat_std.push_back(feat_std[i]);
    out.feat_floored.push_back(i < feat_floored.size() ? feat_floored[i]
                                                       : std::vector<Index>{});
  }
  return out;
}

Episode align_lengths(const std::vector<FeatureSeries>& features,
                      const std::vector<BoldSeries>& bold,
                      std::span<const BackboneInfo> backbones, int subjects,
                      LoadReport* report) {
  if (features.empty()) throw ValidationError("align_lengths: no feature series");
  const EpisodeId id = features.front().episode;
  Index t_min = features.front().data.rows();
  Index t_max = t_min;
  auto fold = [&](Index t) {
    t_min = std::min(t_min, t);
    t_max = std::max(t_max, t);
  };
  for (const auto& f : features) {
    if (f.episode.name != id.name)
      throw ValidationError("align_lengths: series from different episodes");
    fold(f.data.rows());
  }
  for (const auto& b : bold) {
    if (b.episode.name != id.name)
      throw ValidationError("align_lengths: series from different episodes");
    fold(b.data.rows());
  }
  if (t_min == 0) throw ValidationError(id.name + ": a series has zero TRs");
  if (report && t_max - t_min > 5)
    report->warnings.push_back(id.name + ": dropped " +
                               std::to_string(t_max - t_min) +
                               " TRs when aligning series lengths");

  Episode ep;
  ep.id = id;
  ep.features.resize(backbones.size());
  ep.bold.resize(static_cast<size_t>(subjects));
  ep.bold_repeat.resize(static_cast<size_t>(subjects));
  std::vector<bool> seen(backbones.size(), false);
  for (const auto& f : features) {
    bool matched = false;
    for (size_t m = 0; m < backbones.size(); ++m) {
      if (backbones[m].label != f.backbone) continue;
      if (seen[m]) throw ValidationError(id.name + ": duplicate features for " + f.backbone);
      ep.features[m] = f.data.topRows(t_min);
      seen[m] = matched = true;
    }
    if (!matched) throw ValidationError(id.name + ": unknown backbone " + f.backbone);
  }
  for (size_t m = 0; m < backbones.size(); ++m)
    if (!seen[m])
      throw ValidationError(id.name + ": missing features for " + backbones[m].label);
  for (const auto& b : bold) {
    if (b.subject < 0 || b.subject >= subjects)
      throw ValidationError(id.name + ": subject index out of range");
    auto& slot = ep.bold[static_cast<size_t>(b.subject)];
    auto& repeat = ep.bold_repeat[static_cast<size_t>(b.subject)];
    if (!slot)
      slot = b.data.topRows(t_min);
    else if (!repeat)
      repeat = b.data.topRows(t_min);
    else
      throw ValidationError(id.name + ": more than two presentations for one subject");
  }
  return ep;
}

Dataset load_manifest(const std::filesystem::path& manifest_path, LoadReport* report) {
  const json j = load_json_file(manifest_path);
  const auto base = manifest_path.parent_path();

  Dataset ds;
  try {
    ds.subjects = j.at("subjects").get<int>();
    ds.tr_seconds = j.value("tr_seconds", 1.49);
    for (const auto& bb : j.at("backbones"))
      ds.backbones.push_back({bb.at("label").get<std::string>(),
                              bb.at("dim").get<Index>()});
  } catch (const json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  if (ds.subjects < 1) throw ValidationError("manifest: subjects must be >= 1");
  for (const auto& bb : ds.backbones)
    if (bb.label.empty() || bb.dim < 1)
      throw ValidationError("manifest: backbone needs a label and dim >= 1");

  if (!j.contains("episodes") || !j.at("episodes").is_array())
    throw ValidationError("manifest: episodes array missing");
  for (const auto& je : j.at("episodes")) {
    EpisodeId id;
    std::vector<FeatureSeries> features;
    std::vector<BoldSeries> bold;
    std::map<int, std::map<int, Mat>> presentations;  // subject -> presentation -> data
    try {
      id.name = je.at("name").get<std::string>();
      id.movie = je.at("movie").get<std::string>();
      for (const auto& [label, rel] : je.at("features").items()) {
        Mat data = read_tensor(base / rel.get<std::string>());
        features.push_back({id, label, std::move(data)});
      }
      for (const auto& jb : je.at("bold")) {
        const int subject = jb.at("subject").get<int>();
        const int presentation = jb.value("presentation", 0);
        if (presentation < 0 || presentation > 1)
          throw ValidationError(id.name + ": presentation must be 0 or 1");
        Mat data = read_tensor(base / jb.at("path").get<std::string>());
        if (!presentations[subject].emplace(presentation, std::move(data)).second)
          throw ValidationError(id.name + ": duplicate (subject, presentation)");
      }
    } catch (const json::exception& e) {
      throw ValidationError(manifest_path.string() + ": " + e.what());
    }
    // presentation 0 first so align_lengths records it as the primary series
    for (auto& [subject, by_pres] : presentations) {
      if (!by_pres.count(0))
        throw ValidationError(id.name + ": repeat presentation without a first one");
      for (auto& [pres, data] : by_pres)
        bold.push_back({id, subject, std::move(data)});
    }
    Episode ep = align_lengths(features, bold, ds.backbones, ds.subjects, report);
    if (ep.id.movie.empty()) throw ValidationError(ep.id.name + ": empty movie label");
    ds.episodes.push_back(std::move(ep));
  }
  std::sort(ds.episodes.begin(), ds.episodes.end(),
            [](const Episode& a, const Episode& b) { return a.id.name < b.id.name; });
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "tensors");
  json j;
  j["subjects"] = ds.subjects;
  j["tr_seconds"] = ds.tr_seconds;
  j["backbones"] = json::array();
  for (const auto& bb : ds.backbones)
    j["backbones"].push_back({{"label", bb.label}, {"dim", bb.dim}});
  j["episodes"] = json::array();
  for (const auto& ep : ds.episodes) {
    json je;
    je["name"] = ep.id.name;
    je["movie"] = ep.id.movie;
    je["features"] = json::object();
    for (size_t m = 0; m < ds.backbones.size(); ++m) {
      const std::string rel =
          "tensors/" + episode_file_tag(ep.id.name, ds.backbones[m].label);
      write_tensor(dir / rel, ep.features[m]);
      je["features"][ds.backbones[m].label] = rel;
    }
    je["bold"] = json::array();
    for (int s = 0; s < ds.subjects; ++s) {
      const auto& main = ep.bold[static_cast<size_t>(s)];
      if (!main) continue;
      const std::string tag = "sub" + std::to_string(s);
      const std::string rel = "tensors/" + episode_file_tag(ep.id.name, tag);
      write_tensor(dir / rel, *main);
      je["bold"].push_back({{"subject", s}, {"path", rel}});
      const auto& repeat = ep.bold_repeat[static_cast<size_t>(s)];
      if (repeat) {
        const std::string rel2 = "tensors/" + episode_file_tag(ep.id.name, tag + ".rep1");
        write_tensor(dir / rel2, *repeat);
        je["bold"].push_back({{"subject", s}, {"path", rel2}, {"presentation", 1}});
      }
    }
    j["episodes"].push_back(std::move(je));
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest under " + dir.string());
  out << j.dump(2) << "\n";
}

NormStats zscore_fit(const Dataset& ds, const SplitSpec& split) {
  split.validate();
  NormStats out;
  const auto train_eps = ds.episode_indices(split.train);
  if (train_eps.empty())
    throw ValidationError("zscore_fit: train split matches no episodes");

  for (size_t m = 0; m < ds.backbones.size(); ++m) {
    const Index dim = ds.backbones[m].dim;
    RowVec sum = RowVec::Zero(dim), sumsq = RowVec::Zero(dim);
    double n = 0;
    for (int e : train_eps) {
      const Mat& f = ds.episodes[static_cast<size_t>(e)].features[m];
      sum += f.colwise().sum();
      sumsq += f.array().square().colwise().sum().matrix();
      n += static_cast<double>(f.rows());
    }
    RowVec mean = sum / n;
    RowVec var = (sumsq / n - mean.array().square().matrix()).cwiseMax(0.0);
    RowVec stddev = var.array().sqrt();
    std::vector<Index> floored;
    for (Index c = 0; c < dim; ++c)
      if (stddev(c) < kStdFloor) {
        stddev(c) = kStdFloor;
        floored.push_back(c);
      }
    out.feat_mean.push_back(std::move(mean));
    out.feat_std.push_back(std::move(stddev));
    out.feat_floored.push_back(std::move(floored));
  }

  const Index parcels = ds.parcels();
  for (int s = 0; s < ds.subjects; ++s) {
    RowVec sum = RowVec::Zero(parcels), sumsq = RowVec::Zero(parcels);
    double n = 0;
    for (int e : train_eps) {
      const auto& b = ds.episodes[static_cast<size_t>(e)].bold[static_cast<size_t>(s)];
      if (!b) continue;
      sum += b->colwise().sum();
      sumsq += b->array().square().colwise().sum().matrix();
      n += static_cast<double>(b->rows());
    }
    RowVec mean, stddev;
    std::vector<Index> floored;
    if (n == 0) {
      // subject absent from the whole train split; identity stats
      mean = RowVec::Zero(parcels);
      stddev = RowVec::Ones(parcels);
    } else {
      mean = sum / n;
      RowVec var = (sumsq / n - mean.array().square().matrix()).cwiseMax(0.0);
      stddev = var.array().sqrt();
      for (Index c = 0; c < parcels; ++c)
        if (stddev(c) < kStdFloor) {
          stddev(c) = kStdFloor;
          floored.push_back(c);
        }
    }
    out.bold_mean.push_back(std::move(mean));
    out.bold_std.push_back(std::move(stddev));
    out.bold_floored.push_back(std::move(floored));
  }
  return out;
}

std::vector<std::pair<Index, Index>> tile_episode(Index trs, Index length,
                                                  Index offset) {
  std::vector<std::pair<Index, Index>> out;
  if (trs <= length) {
    out.emplace_back(0, trs);
    return out;
  }
  auto push_unique = [&](Index start) {
    const std::pair<Index, Index> w{start, length};
    if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
  };
  push_unique(0);
  for (Index s = offset; s + length <= trs; s += length) push_unique(s);
  push_unique(trs - length);
  return out;
}

std::vector<Window> make_windows(const Dataset& ds, const SplitSpec& split,
                                 Index length, std::uint64_t seed) {
  if (length < 1) throw ValidationError("window length must be >= 1");
  Rng rng(seed);
  std::vector<Window> out;
  for (int e : ds.episode_indices(split.train)) {
    const Index trs = ds.episodes[static_cast<size_t>(e)].trs();
    if (trs <= length) {
      out.push_back({e, 0, trs, trs < length});
      continue;
    }
    const Index offset = static_cast<Index>(rng.bounded(static_cast<std::uint64_t>(length)));
    for (const auto& [start, len] : tile_episode(trs, length, offset))
      out.push_back({e, start, len, false});
  }
  return out;
}

std::vector<Mat> gather_features(const Dataset& ds, const Episode& ep,
                                 std::span<const BackboneInfo> backbones,
                                 const NormStats* stats) {
  std::vector<Mat> out;
  out.reserve(backbones.size());
  for (size_t m = 0; m < backbones.size(); ++m) {
    const size_t src = static_cast<size_t>(ds.backbone_index(backbones[m].label));
    if (!stats) {
      out.push_back(ep.features[src]);
      continue;
    }
    Mat f = ep.features[src];
    f.rowwise() -= stats->feat_mean[m];
    f.array().rowwise() /= stats->feat_std[m].array();
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace aenc
