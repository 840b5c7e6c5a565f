#pragma once

#include "aenc/common.hpp"
#include "aenc/dataset.hpp"
#include "aenc/trainer.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace aenc {

// Per-parcel correlations for one (subject, movie) cell. Undefined
// correlations (a constant series) are stored as NaN; aggregates treat them
// as 0 and count them separately.
struct ParcelScores {
  int subject = 0;
  std::string movie;
  Vec r;
  Index n_trs = 0;
};

// Sample Pearson correlation; NaN when either input has zero variance.
// Throws on length mismatch or fewer than two samples.
double pearson(std::span<const double> x, std::span<const double> y);

inline bool pearson_defined(double r) { return r == r; }

// Column-wise Pearson between two equally-shaped matrices.
Vec columnwise_pearson(const Mat& x, const Mat& y);

// Predictions are computed episode by episode (normalized features in,
// de-normalized BOLD out), concatenated per movie in episode-name order,
// then correlated per parcel against the raw targets. A subject absent from
// every episode of a movie yields no entry.
std::vector<ParcelScores> score_params(const EncoderParams& params,
                                       const EncoderConfig& config,
                                       const NormStats& norm, const Dataset& ds,
                                       const std::set<std::string>& movies,
                                       const std::vector<int>* subjects = nullptr);

std::vector<ParcelScores> score(const Checkpoint& ckpt, const Dataset& ds,
                                const std::set<std::string>& movies);

// Concatenated raw-space predictions for one movie over all of its episodes
// (episode-name order), whether or not targets exist for them.
Mat predict_movie(const EncoderParams& params, const EncoderConfig& config,
                  const NormStats& norm, const Dataset& ds,
                  const std::string& movie, int subject);

// Per-parcel Pearson of such a prediction against the raw targets; rows of
// episodes without the subject's BOLD are skipped on both sides.
Vec score_prediction(const Dataset& ds, const std::string& movie, int subject,
                     const Mat& prediction);

enum class AggregateLevel { kParcel, kSubject, kMovie, kOverall };

AggregateLevel aggregate_level_from_string(const std::string& s);
std::string to_string(AggregateLevel level);

struct AggregateTable {
  AggregateLevel level = AggregateLevel::kOverall;
  std::vector<std::pair<std::string, double>> rows;
  long undefined = 0;  // NaN correlations folded in as 0

  double overall() const;  // value of the single "overall" row
};

// Nested arithmetic means, movie -> subject -> parcel from the outside in;
// overall = mean over movies of (mean over subjects of (mean over parcels)).
AggregateTable aggregate(const std::vector<ParcelScores>& scores,
                         AggregateLevel level);

// Convenience: aggregate(...).overall() for a trained model on a movie set.
double mean_score(const EncoderParams& params, const EncoderConfig& config,
                  const NormStats& norm, const Dataset& ds,
                  const std::set<std::string>& movies,
                  const std::vector<int>* subjects = nullptr);

// CSV with header "subject,movie,parcel_index,<value_column>". Scores use
// column "r"; ceiling and gap tables use "value". The reader accepts any
// value-column name.
void write_scores_csv(const std::filesystem::path& path,
                      const std::vector<ParcelScores>& scores,
                      const std::string& value_column = "r");
std::vector<ParcelScores> read_scores_csv(const std::filesystem::path& path);

}  // namespace aenc
