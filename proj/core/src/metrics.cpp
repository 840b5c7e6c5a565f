#include "aenc/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace aenc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double nan_to_zero(double v, long& undefined) {
  if (std::isnan(v)) {
    ++undefined;
    return 0.0;
  }
  return v;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("pearson: length mismatch");
  if (x.size() < 2) throw ValidationError("pearson: need at least 2 samples");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0 || syy <= 0) return kNaN;
  return sxy / std::sqrt(sxx * syy);
}

Vec columnwise_pearson(const Mat& x, const Mat& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw ValidationError("columnwise_pearson: shape mismatch");
  if (x.rows() < 2) throw ValidationError("columnwise_pearson: need at least 2 rows");
  const double n = static_cast<double>(x.rows());
  Vec out(x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const auto xc = x.col(c);
    const auto yc = y.col(c);
    const double mx = xc.sum() / n, my = yc.sum() / n;
    const double sxy = (xc.array() - mx).matrix().dot((yc.array() - my).matrix());
    const double sxx = (xc.array() - mx).square().sum();
    const double syy = (yc.array() - my).square().sum();
    out(c) = (sxx <= 0 || syy <= 0) ? kNaN : sxy / std::sqrt(sxx * syy);
  }
  return out;
}

std::vector<ParcelScores> score_params(const EncoderParams& params,
                                       const EncoderConfig& config,
                                       const NormStats& norm, const Dataset& ds,
                                       const std::set<std::string>& movies,
                                       const std::vector<int>* subjects) {
  const auto dataset_movies = ds.movies();
  for (const auto& m : movies)
    if (!dataset_movies.count(m)) throw ValidationError("unknown movie: " + m);

  std::vector<int> subject_list;
  if (subjects) {
    subject_list = *subjects;
  } else {
    for (int s = 0; s < ds.subjects; ++s) subject_list.push_back(s);
  }

  std::vector<ParcelScores> out;
  for (const auto& movie : movies) {  // std::set iterates sorted
    const auto eps = ds.episode_indices({movie});
    for (int s : subject_list) {
      // concatenate predictions and targets across the movie's episodes
      std::vector<Mat> preds, targets;
      Index total = 0;
      for (int e : eps) {
        const Episode& ep = ds.episodes[static_cast<size_t>(e)];
        const auto& bold = ep.bold[static_cast<size_t>(s)];
        if (!bold) continue;
        const auto feats = gather_features(ds, ep, config.backbones, &norm);
        Mat pred = forward(params, config, feats, s);
        // back to raw BOLD units
        pred.array().rowwise() *= norm.bold_std[static_cast<size_t>(s)].array();
        pred.rowwise() += norm.bold_mean[static_cast<size_t>(s)];
        total += pred.rows();
        preds.push_back(std::move(pred));
        targets.push_back(*bold);
      }
      if (preds.empty()) continue;  // subject absent for the whole movie
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

std::vector<ParcelScores> score(const Checkpoint& ckpt, const Dataset& ds,
                                const std::set<std::string>& movies) {
  return score_params(ckpt.params, ckpt.encoder, ckpt.norm, ds, movies, nullptr);
}

Mat predict_movie(const EncoderParams& params, const EncoderConfig& config,
                  const NormStats& norm, const Dataset& ds,
                  const std::string& movie, int subject) {
  const auto eps = ds.episode_indices({movie});
  if (eps.empty()) throw ValidationError("unknown movie: " + movie);
  std::vector<Mat> preds;
  Index total = 0;
  for (int e : eps) {
    const Episode& ep = ds.episodes[static_cast<size_t>(e)];
    const auto feats = gather_features(ds, ep, config.backbones, &norm);
    Mat pred = forward(params, config, feats, subject);
    pred.array().rowwise() *= norm.bold_std[static_cast<size_t>(subject)].array();
    pred.rowwise() += norm.bold_mean[static_cast<size_t>(subject)];
    total += pred.rows();
    preds.push_back(std::move(pred));
  }
  Mat out(total, preds.front().cols());
  Index row = 0;
  for (const auto& p : preds) {
    out.middleRows(row, p.rows()) = p;
    row += p.rows();
  }
  return out;
}

Vec score_prediction(const Dataset& ds, const std::string& movie, int subject,
                     const Mat& prediction) {
  const auto eps = ds.episode_indices({movie});
  if (eps.empty()) throw ValidationError("unknown movie: " + movie);
  std::vector<std::pair<Index, const Episode*>> rows;  // offset, episode
  Index total = 0;
  for (int e : eps) {
    const Episode& ep = ds.episodes[static_cast<size_t>(e)];
    rows.emplace_back(total, &ep);
    total += ep.trs();
  }
  if (prediction.rows() != total)
    throw ValidationError("score_prediction: prediction rows do not match movie length");
  Index kept = 0;
  for (const auto& [offset, ep] : rows)
    if (ep->bold[static_cast<size_t>(subject)]) kept += ep->trs();
  if (kept < 2)
    throw ValidationError("score_prediction: subject has no BOLD for movie " + movie);
  Mat pred(kept, prediction.cols()), targ(kept, prediction.cols());
  Index at = 0;
  for (const auto& [offset, ep] : rows) {
    const auto& bold = ep->bold[static_cast<size_t>(subject)];
    if (!bold) continue;
    pred.middleRows(at, ep->trs()) = prediction.middleRows(offset, ep->trs());
    targ.middleRows(at, ep->trs()) = *bold;
    at += ep->trs();
  }
  return columnwise_pearson(pred, targ);
}

AggregateLevel aggregate_level_from_string(const std::string& s) {
  if (s == "parcel") return AggregateLevel::kParcel;
  if (s == "subject") return AggregateLevel::kSubject;
  if (s == "movie") return AggregateLevel::kMovie;
  if (s == "overall") return AggregateLevel::kOverall;
  throw ValidationError("unknown aggregate level: " + s);
}

std::string to_string(AggregateLevel level) {
  switch (level) {
    case AggregateLevel::kParcel: return "parcel";
    case AggregateLevel::kSubject: return "subject";
    case AggregateLevel::kMovie: return "movie";
    case AggregateLevel::kOverall: return "overall";
  }
  return "overall";
}

double AggregateTable::overall() const {
  for (const auto& [k, v] : rows)
    if (k == "overall") return v;
  throw std::runtime_error("aggregate table has no overall row");
}

AggregateTable aggregate(const std::vector<ParcelScores>& scores,
                         AggregateLevel level) {
  if (scores.empty()) throw ValidationError("aggregate: no scores");
  AggregateTable table;
  table.level = level;

  const Index parcels = scores.front().r.size();
  std::set<std::string> movies;
  std::set<int> subjects;
  for (const auto& s : scores) {
    if (s.r.size() != parcels) throw ValidationError("aggregate: ragged parcel counts");
    movies.insert(s.movie);
    subjects.insert(s.subject);
  }
  auto find = [&](const std::string& movie, int subject) -> const ParcelScores* {
    for (const auto& s : scores)
      if (s.movie == movie && s.subject == subject) return &s;
    return nullptr;
  };

  if (level == AggregateLevel::kParcel) {
    // per parcel: mean over movies of mean over subjects
    Vec acc = Vec::Zero(parcels);
    for (const auto& movie : movies) {
      Vec movie_acc = Vec::Zero(parcels);
      int n_sub = 0;
      for (int s : subjects) {
        if (const auto* ps = find(movie, s)) {
          for (Index p = 0; p < parcels; ++p)
            movie_acc(p) += nan_to_zero(ps->r(p), table.undefined);
          ++n_sub;
        }
      }
      if (n_sub > 0) acc += movie_acc / n_sub;
    }
    acc /= static_cast<double>(movies.size());
    for (Index p = 0; p < parcels; ++p)
      table.rows.emplace_back("parcel_" + std::to_string(p), acc(p));
    return table;
  }

  // parcel-mean per (movie, subject) cell, NaNs folded as 0
  auto cell_mean = [&](const ParcelScores& ps) {
    double acc = 0;
    for (Index p = 0; p < parcels; ++p) acc += nan_to_zero(ps.r(p), table.undefined);
    return acc / static_cast<double>(parcels);
  };

  if (level == AggregateLevel::kMovie || level == AggregateLevel::kOverall) {
    std::vector<std::pair<std::string, double>> movie_rows;
    for (const auto& movie : movies) {
      double acc = 0;
      int n = 0;
      for (int s : subjects) {
        if (const auto* ps = find(movie, s)) {
          acc += cell_mean(*ps);
          ++n;
        }
      }
      if (n > 0) movie_rows.emplace_back(movie, acc / n);
    }
    if (level == AggregateLevel::kMovie) {
      table.rows = std::move(movie_rows);
      return table;
    }
    double acc = 0;
    for (const auto& [_, v] : movie_rows) acc += v;
    table.rows.emplace_back("overall", acc / static_cast<double>(movie_rows.size()));
    return table;
  }

  // per subject: mean over movies of the subject's parcel mean
  for (int s : subjects) {
    double acc = 0;
    int n = 0;
    for (const auto& movie : movies) {
      if (const auto* ps = find(movie, s)) {
        acc += cell_mean(*ps);
        ++n;
      }
    }
    if (n > 0) table.rows.emplace_back("sub" + std::to_string(s), acc / n);
  }
  return table;
}

double mean_score(const EncoderParams& params, const EncoderConfig& config,
                  const NormStats& norm, const Dataset& ds,
                  const std::set<std::string>& movies,
                  const std::vector<int>* subjects) {
  const auto scores = score_params(params, config, norm, ds, movies, subjects);
  if (scores.empty()) throw ValidationError("mean_score: no scorable cells");
  return aggregate(scores, AggregateLevel::kOverall).overall();
}

void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<ParcelScores>& scores,
                      const std::string& value_column) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "subject,movie,parcel_index," << value_column << "\n";
  for (const auto& s : scores)
    for (Index p = 0; p < s.r.size(); ++p)
      out << s.subject << "," << s.movie << "," << p << ","
          << format_double(s.r(p)) << "\n";
}

std::vector<ParcelScores> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing scores csv: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("subject,movie,parcel_index,", 0) != 0)
    throw ValidationError(path.string() + ": unexpected csv header");
  std::map<std::pair<int, std::string>, std::vector<std::pair<Index, double>>> cells;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string subject_s, movie, parcel_s, r_s;
    if (!std::getline(ss, subject_s, ',') || !std::getline(ss, movie, ',') ||
        !std::getline(ss, parcel_s, ',') || !std::getline(ss, r_s))
      throw ValidationError(path.string() + ": malformed row at line " +
                            std::to_string(line_no));
    cells[{std::stoi(subject_s), movie}].emplace_back(
        static_cast<Index>(std::stol(parcel_s)), std::strtod(r_s.c_str(), nullptr));
  }
  std::vector<ParcelScores> out;
  for (auto& [key, vals] : cells) {
    std::sort(vals.begin(), vals.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    ParcelScores ps;
    ps.subject = key.first;
    ps.movie = key.second;
    ps.r.resize(static_cast<Index>(vals.size()));
    for (size_t i = 0; i < vals.size(); ++i) {
      if (vals[i].first != static_cast<Index>(i))
        throw ValidationError(path.string() + ": non-contiguous parcel indices");
      ps.r(static_cast<Index>(i)) = vals[i].second;
    }
    ps.n_trs = 2;  // unknown from csv; kept valid
    out.push_back(std::move(ps));
  }
  return out;
}

}  // namespace aenc
