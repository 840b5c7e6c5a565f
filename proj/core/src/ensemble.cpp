#include "aenc/ensemble.hpp"

#include "aenc/serde.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

namespace aenc {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) {
      if (std::isnan(m(r, c)))
        row.push_back(nullptr);
      else
        row.push_back(m(r, c));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat mat_from_json(const json& j) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 ? static_cast<Index>(j.at(0).size()) : 0;
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) {
      const auto& v = j.at(static_cast<size_t>(r)).at(static_cast<size_t>(c));
      m(r, c) = v.is_null() ? kNaN : v.get<double>();
    }
  return m;
}

std::string model_id_for(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "m%04d", index);
  return buf;
}

}  // namespace

void SweepSpace::validate() const {
  auto need = [](bool ok, const char* axis) {
    if (!ok) throw ValidationError(std::string("sweep space: empty axis ") + axis);
  };
  need(!lr.empty(), "lr");
  need(!weight_decay.empty(), "weight_decay");
  need(!kernel_width.empty(), "kernel_width");
  need(!kernel_type.empty(), "kernel_type");
  need(!batch_size.empty(), "batch_size");
  need(!embed_dim.empty(), "embed_dim");
  need(!feature_subsets.empty(), "feature_subsets");
  need(!train_movies.empty(), "train_movies");
  if (samples < 1) throw ValidationError("sweep space: samples must be >= 1");
  for (const auto& k : kernel_type) kernel_type_from_string(k);
}

SweepSpace sweep_space_from_json(const json& j) {
  SweepSpace space;
  try {
    if (j.contains("lr")) space.lr = j.at("lr").get<std::vector<double>>();
    if (j.contains("weight_decay"))
      space.weight_decay = j.at("weight_decay").get<std::vector<double>>();
    if (j.contains("kernel_width"))
      space.kernel_width = j.at("kernel_width").get<std::vector<Index>>();
    if (j.contains("kernel_type"))
      space.kernel_type = j.at("kernel_type").get<std::vector<std::string>>();
    if (j.contains("batch_size"))
      space.batch_size = j.at("batch_size").get<std::vector<int>>();
    if (j.contains("embed_dim"))
      space.embed_dim = j.at("embed_dim").get<std::vector<Index>>();
    if (j.contains("feature_subsets"))
      space.feature_subsets =
          j.at("feature_subsets").get<std::vector<std::vector<std::string>>>();
    if (j.contains("train_movies"))
      space.train_movies =
          j.at("train_movies").get<std::vector<std::vector<std::string>>>();
    space.samples = j.value("samples", space.samples);
    space.seed = j.value("seed", space.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("sweep space: ") + e.what());
  }
  space.validate();
  return space;
}

json sweep_space_to_json(const SweepSpace& space) {
  return {{"lr", space.lr},
          {"weight_decay", space.weight_decay},
          {"kernel_width", space.kernel_width},
          {"kernel_type", space.kernel_type},
          {"batch_size", space.batch_size},
          {"embed_dim", space.embed_dim},
          {"feature_subsets", space.feature_subsets},
          {"train_movies", space.train_movies},
          {"samples", space.samples},
          {"seed", space.seed}};
}

json sweep_draw_to_json(const SweepDraw& draw) {
  return {{"index", draw.index},
          {"model_id", draw.model_id},
          {"lr", draw.lr},
          {"weight_decay", draw.weight_decay},
          {"kernel_width", draw.kernel_width},
          {"kernel_type", to_string(draw.kernel_type)},
          {"batch_size", draw.batch_size},
          {"embed_dim", draw.embed_dim},
          {"feature_subset", draw.feature_subset},
          {"train_movies", draw.train_movies},
          {"train_seed", draw.train_seed}};
}

SweepDraw sweep_draw_from_json(const json& j) {
  SweepDraw draw;
  try {
    draw.index = j.at("index").get<int>();
    draw.model_id = j.at("model_id").get<std::string>();
    draw.lr = j.at("lr").get<double>();
    draw.weight_decay = j.at("weight_decay").get<double>();
    draw.kernel_width = j.at("kernel_width").get<Index>();
    draw.kernel_type = kernel_type_from_string(j.at("kernel_type").get<std::string>());
    draw.batch_size = j.at("batch_size").get<int>();
    draw.embed_dim = j.at("embed_dim").get<Index>();
    draw.feature_subset = j.at("feature_subset").get<std::vector<std::string>>();
    draw.train_movies = j.at("train_movies").get<std::vector<std::string>>();
    draw.train_seed = j.at("train_seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("sweep draw: ") + e.what());
  }
  return draw;
}

std::vector<SweepDraw> sample_configs(const SweepSpace& space) {
  space.validate();
  Rng rng(space.seed);
  std::vector<SweepDraw> draws;
  draws.reserve(static_cast<size_t>(space.samples));
  for (int i = 0; i < space.samples; ++i) {
    SweepDraw d;
    d.index = i;
    d.model_id = model_id_for(i);
    d.lr = space.lr[rng.bounded(space.lr.size())];
    d.weight_decay = space.weight_decay[rng.bounded(space.weight_decay.size())];
    d.kernel_width = space.kernel_width[rng.bounded(space.kernel_width.size())];
    d.kernel_type = kernel_type_from_string(
        space.kernel_type[rng.bounded(space.kernel_type.size())]);
    d.batch_size = space.batch_size[rng.bounded(space.batch_size.size())];
    d.embed_dim = space.embed_dim[rng.bounded(space.embed_dim.size())];
    d.feature_subset = space.feature_subsets[rng.bounded(space.feature_subsets.size())];
    d.train_movies = space.train_movies[rng.bounded(space.train_movies.size())];
    d.train_seed = mix_seed(space.seed, 0x6000 + static_cast<std::uint64_t>(i));
    draws.push_back(std::move(d));
  }
  return draws;
}

json model_record_to_json(const ModelRecord& record) {
  json val = json::object();
  for (const auto& [movie, r] : record.val_r) val[movie] = mat_to_json(r);
  return {{"model_id", record.model_id},
          {"draw", sweep_draw_to_json(record.draw)},
          {"checkpoint_file", record.checkpoint_file},
          {"validation_movies", record.validation_movies},
          {"val_r", std::move(val)},
          {"failed", record.failed},
          {"error", record.error}};
}

ModelRecord model_record_from_json(const json& j) {
  ModelRecord record;
  try {
    record.model_id = j.at("model_id").get<std::string>();
    record.draw = sweep_draw_from_json(j.at("draw"));
    record.checkpoint_file = j.at("checkpoint_file").get<std::string>();
    record.validation_movies =
        j.at("validation_movies").get<std::set<std::string>>();
    for (const auto& [movie, r] : j.at("val_r").items())
      record.val_r[movie] = mat_from_json(r);
    record.failed = j.at("failed").get<bool>();
    record.error = j.value("error", "");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model record: ") + e.what());
  }
  return record;
}

namespace {

ModelRecord run_one(const Dataset& ds, const SplitSpec& split,
                    const EncoderConfig& base_encoder, const TrainConfig& base_train,
                    const SweepDraw& draw, const std::filesystem::path& store_dir) {
  ModelRecord record;
  record.model_id = draw.model_id;
  record.draw = draw;
  record.checkpoint_file = draw.model_id + ".ckpt.aenc";
  record.validation_movies = split.validation;
  try {
    EncoderConfig enc = base_encoder;
    enc.backbones = resolve_backbones(draw.feature_subset, ds);
    enc.embed_dim = draw.embed_dim;
    enc.kernel_width = draw.kernel_width;
    enc.kernel_type = draw.kernel_type;
    enc.subjects = ds.subjects;
    enc.parcels = ds.parcels();

    TrainConfig tc = base_train;
    tc.lr = draw.lr;
    tc.weight_decay = draw.weight_decay;
    tc.batch_size = draw.batch_size;
    tc.seed = draw.train_seed;
    if (tc.window_length < enc.kernel_width) tc.window_length = enc.kernel_width;

    SplitSpec run_split = split;
    if (!draw.train_movies.empty())
      run_split.train = {draw.train_movies.begin(), draw.train_movies.end()};
    run_split.validate();

    TrainResult result = train(ds, run_split, enc, tc);
    save_checkpoint(store_dir / record.checkpoint_file, result.checkpoint);

    const auto scores = score(result.checkpoint, ds, split.validation);
    for (const auto& movie : split.validation) {
      Mat r = Mat::Constant(ds.subjects, ds.parcels(), kNaN);
      for (const auto& ps : scores)
        if (ps.movie == movie) r.row(ps.subject) = ps.r.transpose();
      record.val_r[movie] = std::move(r);
    }
  } catch (const std::exception& e) {
    record.failed = true;
    record.error = e.what();
    record.val_r.clear();
  }
  return record;
}

void persist_record(const ModelRecord& record, const std::filesystem::path& store_dir) {
  const auto final_path = store_dir / (record.model_id + ".record.json");
  const auto tmp_path = store_dir / (record.model_id + ".record.json.tmp");
  {
    std::ofstream out(tmp_path);
    if (!out) throw std::runtime_error("cannot write " + tmp_path.string());
    out << model_record_to_json(record).dump(2) << "\n";
  }
  std::filesystem::rename(tmp_path, final_path);
}

}  // namespace

std::vector<ModelRecord> run_sweep(const Dataset& ds, const SplitSpec& split,
                                   const EncoderConfig& base_encoder,
                                   const TrainConfig& base_train,
                                   std::span<const SweepDraw> draws,
                                   const std::filesystem::path& store_dir,
                                   int workers) {
  if (draws.empty()) throw ValidationError("run_sweep: no configs");
  split.validate();
  std::filesystem::create_directories(store_dir);
  workers = std::max(1, workers);

  std::vector<ModelRecord> records(draws.size());
  std::atomic<size_t> cursor{0};
  auto work = [&] {
    for (;;) {
      const size_t i = cursor.fetch_add(1);
      if (i >= draws.size()) return;
      records[i] = run_one(ds, split, base_encoder, base_train, draws[i], store_dir);
      persist_record(records[i], store_dir);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return records;
}

std::vector<ModelRecord> load_records(const std::filesystem::path& store_dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(store_dir)) {
    const auto name = entry.path().filename().string();
    if (name.size() > 12 && name.substr(name.size() - 12) == ".record.json")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ModelRecord> records;
  for (const auto& f : files) {
    std::ifstream in(f);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ValidationError(f.string() + ": invalid JSON");
    records.push_back(model_record_from_json(j));
  }
  return records;
}

EnsembleSelection select_topk(std::span<const ModelRecord> records, int k,
                              const std::set<std::string>& validation_movies) {
  if (k < 1) throw ValidationError("select_topk: k must be >= 1");
  if (validation_movies.empty())
    throw ValidationError("select_topk: no validation movies");
  std::vector<const ModelRecord*> usable;
  for (const auto& r : records)
    if (!r.failed) usable.push_back(&r);
  if (usable.empty()) throw ValidationError("select_topk: no usable records");

  const Index parcels = usable.front()->val_r.begin()->second.cols();
  const int subjects = static_cast<int>(usable.front()->val_r.begin()->second.rows());
  for (const auto* r : usable)
    for (const auto& movie : validation_movies)
      if (!r->val_r.count(movie))
        throw ValidationError("select_topk: record " + r->model_id +
                              " not scored on movie " + movie);

  EnsembleSelection sel;
  sel.k = k;
  sel.subjects = subjects;
  sel.parcels = parcels;
  sel.ids.resize(static_cast<size_t>(subjects));
  std::vector<std::pair<double, const ModelRecord*>> ranked;
  for (int s = 0; s < subjects; ++s) {
    sel.ids[static_cast<size_t>(s)].resize(static_cast<size_t>(parcels));
    for (Index p = 0; p < parcels; ++p) {
      ranked.clear();
      for (const auto* r : usable) {
        double acc = 0;
        for (const auto& movie : validation_movies) {
          const double v = r->val_r.at(movie)(s, p);
          acc += std::isnan(v) ? 0.0 : v;
        }
        ranked.emplace_back(acc / static_cast<double>(validation_movies.size()), r);
      }
      std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second->model_id < b.second->model_id;
      });
      auto& cell = sel.ids[static_cast<size_t>(s)][static_cast<size_t>(p)];
      const size_t keep = std::min<size_t>(static_cast<size_t>(k), ranked.size());
      for (size_t i = 0; i < keep; ++i) cell.push_back(ranked[i].second->model_id);
    }
  }
  return sel;
}

json selection_to_json(const EnsembleSelection& sel) {
  json ids = json::array();
  for (const auto& per_subject : sel.ids) {
    json row = json::array();
    for (const auto& cell : per_subject) row.push_back(cell);
    ids.push_back(std::move(row));
  }
  return {{"k", sel.k},
          {"subjects", sel.subjects},
          {"parcels", sel.parcels},
          {"ids", std::move(ids)}};
}

std::map<SubjectMovie, Mat> predict_ensemble(
    const EnsembleSelection& selection, std::span<const ModelRecord> records,
    const std::filesystem::path& store_dir, const Dataset& ds,
    const std::set<std::string>& movies) {
  // which models are selected anywhere, and for which (subject, parcel) cells
  std::map<std::string, std::vector<std::pair<int, Index>>> cells_by_model;
  for (int s = 0; s < selection.subjects; ++s)
    for (Index p = 0; p < selection.parcels; ++p)
      for (const auto& id : selection.ids[static_cast<size_t>(s)][static_cast<size_t>(p)])
        cells_by_model[id].emplace_back(s, p);

  std::map<std::string, const ModelRecord*> by_id;
  for (const auto& r : records) by_id[r.model_id] = &r;

  std::map<SubjectMovie, Mat> sums;
  std::map<SubjectMovie, Eigen::VectorXd> counts;
  for (const auto& [model_id, cells] : cells_by_model) {  // sorted by id
    const auto it = by_id.find(model_id);
    if (it == by_id.end())
      throw ValidationError("predict_ensemble: unknown model " + model_id);
    const Checkpoint ckpt = load_checkpoint(store_dir / it->second->checkpoint_file);
    for (const auto& movie : movies) {
      // predictions shared across subjects' cells for this model
      for (int s = 0; s < selection.subjects; ++s) {
        bool any = false;
        for (const auto& [cs, cp] : cells)
          if (cs == s) {
            any = true;
            break;
          }
        if (!any) continue;
        const Mat pred = predict_movie(ckpt.params, ckpt.encoder, ckpt.norm, ds, movie, s);
        const SubjectMovie key{s, movie};
        auto [sit, fresh] = sums.try_emplace(key, Mat::Zero(pred.rows(), pred.cols()));
        if (fresh) counts[key] = Eigen::VectorXd::Zero(selection.parcels);
        for (const auto& [cs, cp] : cells) {
          if (cs != s) continue;
          sit->second.col(cp) += pred.col(cp);
          counts[key](cp) += 1.0;
        }
      }
    }
  }
  for (auto& [key, sum] : sums) {
    const auto& count = counts[key];
    for (Index p = 0; p < sum.cols(); ++p)
      if (count(p) > 0) sum.col(p) /= count(p);
  }
  return sums;
}

double submission_aggregate(const std::map<SubjectMovie, double>& scores) {
  std::map<std::string, std::pair<double, int>> per_movie;
  for (const auto& [key, r] : scores) {
    per_movie[key.movie].first += r;
    per_movie[key.movie].second += 1;
  }
  if (per_movie.empty()) throw ValidationError("submission_aggregate: empty grid");
  double acc = 0;
  for (const auto& [movie, sum_n] : per_movie)
    acc += sum_n.first / sum_n.second;
  return acc / static_cast<double>(per_movie.size());
}

CombinedSubmission per_movie_best(std::span<const Submission> submissions) {
  if (submissions.empty()) throw ValidationError("per_movie_best: no submissions");
  const auto& grid = submissions.front().scores;
  for (const auto& sub : submissions) {
    if (sub.scores.size() != grid.size())
      throw ValidationError("per_movie_best: submission grids differ");
    for (const auto& [key, _] : grid)
      if (!sub.scores.count(key))
        throw ValidationError("per_movie_best: submission " + sub.id +
                              " is missing a (subject, movie) cell");
  }
  CombinedSubmission combined;
  for (const auto& [key, _] : grid) {
    const Submission* best = nullptr;
    for (const auto& sub : submissions) {
      const double r = sub.scores.at(key);
      if (!best || r > best->scores.at(key) ||
          (r == best->scores.at(key) && sub.id < best->id))
        best = &sub;
    }
    combined.source[key] = best->id;
    combined.scores[key] = best->scores.at(key);
    const auto pit = best->predictions.find(key);
    if (pit != best->predictions.end()) combined.predictions[key] = pit->second;
  }
  combined.aggregate = submission_aggregate(combined.scores);
  return combined;
}

}  // namespace aenc
