#include "aenc/metrics.hpp"

#include "aenc/synth.hpp"
#include "aenc/trainer.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace aenc;
using testutil::TempDir;

TEST_CASE("pearson basics") {
  std::vector<double> x = {1, 2, 3, 4};

  SUBCASE("self correlation is 1") {
    CHECK(pearson(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("negated input gives -1") {
    std::vector<double> y = {-1, -2, -3, -4};
    CHECK(pearson(x, y) == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("worked example against the covariance formula") {
    std::vector<double> y = {2, 1, 4, 3};
    // oracle: direct covariance computation
    double mx = 0, my = 0;
    for (size_t i = 0; i < 4; ++i) {
      mx += x[i] / 4;
      my += y[i] / 4;
    }
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < 4; ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
    }
    const double expected = sxy / std::sqrt(sxx * syy);
    CHECK(expected == doctest::Approx(0.6));
    CHECK(pearson(x, y) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("constant series is undefined") {
    std::vector<double> y = {5, 5, 5, 5};
    CHECK(!pearson_defined(pearson(x, y)));
    CHECK(!pearson_defined(pearson(y, x)));
  }
  SUBCASE("errors") {
    std::vector<double> shorter = {1, 2, 3};
    CHECK_THROWS_AS(pearson(x, shorter), ValidationError);
    std::vector<double> one = {1};
    CHECK_THROWS_AS(pearson(one, one), ValidationError);
  }
  SUBCASE("symmetry and positive-affine invariance") {
    Rng rng(3);
    std::vector<double> a(40), b(40), a_affine(40);
    for (size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
      a_affine[i] = 2.7 * a[i] + 0.9;
    }
    CHECK(pearson(a, b) == doctest::Approx(pearson(b, a)).epsilon(1e-12));
    CHECK(pearson(a_affine, b) == doctest::Approx(pearson(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("score on planted data after training puts every parcel near 1") {
  SynthSpec spec = testutil::small_synth_spec();
  spec.episodes = {{"trainA-01", "trainA", 600},
                   {"trainA-02", "trainA", 600},
                   {"valB-01", "valB", 300},
                   {"testC-01", "testC", 400}};
  const SynthResult synth = synth_generate(spec);
  EncoderConfig enc = synth.planted_config;
  enc.embed_dim = 6;
  enc.kernel_width = 9;
  TrainConfig tc;
  tc.max_steps = 700;
  tc.batch_size = 8;
  tc.window_length = 32;
  tc.lr = 0.015;
  tc.weight_decay = 1e-4;
  tc.eval_every = 100;
  const TrainResult result = train(synth.dataset, testutil::small_split(), enc, tc);
  const auto scores = score(result.checkpoint, synth.dataset, {"testC"});
  REQUIRE(scores.size() == 2);
  for (const auto& ps : scores) {
    CHECK(ps.n_trs == 400);
    for (Index p = 0; p < ps.r.size(); ++p) CHECK(ps.r(p) >= 0.99);
  }
}

TEST_CASE("score flags constant predictions as undefined") {
  const SynthSpec spec = testutil::small_synth_spec();
  const SynthResult synth = synth_generate(spec);
  EncoderConfig enc = synth.planted_config;
  Checkpoint ckpt;
  ckpt.params = zero_params(enc);  // constant (zero) predictions everywhere
  ckpt.encoder = enc;
  ckpt.norm = NormStats::identity_for(synth.dataset);
  const auto scores = score(ckpt, synth.dataset, {"testC"});
  for (const auto& ps : scores)
    for (Index p = 0; p < ps.r.size(); ++p) CHECK(!pearson_defined(ps.r(p)));
  const auto table = aggregate(scores, AggregateLevel::kOverall);
  CHECK(table.overall() == 0.0);
  CHECK(table.undefined == scores.size() * spec.parcels);
}

TEST_CASE("score is deterministic and respects episode-name concatenation order") {
  const SynthSpec spec = testutil::small_synth_spec();
  const SynthResult synth = synth_generate(spec);
  Checkpoint ckpt;
  ckpt.params = synth.planted_params;
  ckpt.encoder = synth.planted_config;
  ckpt.norm = NormStats::identity_for(synth.dataset);

  const auto a = score(ckpt, synth.dataset, {"trainA"});
  const auto b = score(ckpt, synth.dataset, {"trainA"});
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(testutil::mats_equal(a[i].r, b[i].r));
  // two episodes concatenated
  CHECK(a.front().n_trs == 580);
}

TEST_CASE("score of a single-episode movie equals direct columnwise pearson") {
  const SynthSpec spec = testutil::small_synth_spec();
  const SynthResult synth = synth_generate(spec);
  Checkpoint ckpt;
  ckpt.params = synth.planted_params;
  ckpt.encoder = synth.planted_config;
  ckpt.norm = NormStats::identity_for(synth.dataset);
  const auto scores = score(ckpt, synth.dataset, {"testC"});
  const Episode& ep = synth.dataset.episode("testC-01");
  for (const auto& ps : scores) {
    const Mat pred =
        forward(ckpt.params, ckpt.encoder, ep.features, ps.subject);
    const Vec direct =
        columnwise_pearson(pred, *ep.bold[static_cast<size_t>(ps.subject)]);
    CHECK(testutil::max_abs_diff(ps.r, direct) < 1e-12);
  }
}

TEST_CASE("aggregate levels") {
  auto make = [](int subject, const std::string& movie, std::vector<double> rs) {
    ParcelScores ps;
    ps.subject = subject;
    ps.movie = movie;
    ps.n_trs = 10;
    ps.r = Eigen::Map<Vec>(rs.data(), static_cast<Index>(rs.size()));
    return ps;
  };

  SUBCASE("single score aggregates to itself") {
    const std::vector<ParcelScores> scores = {make(0, "m", {0.4, 0.2})};
    CHECK(aggregate(scores, AggregateLevel::kOverall).overall() ==
          doctest::Approx(0.3));
  }
  SUBCASE("two movies with means 0.2 and 0.3 average to 0.25") {
    const std::vector<ParcelScores> scores = {make(0, "m1", {0.2, 0.2}),
                                              make(0, "m2", {0.3, 0.3})};
    CHECK(aggregate(scores, AggregateLevel::kOverall).overall() ==
          doctest::Approx(0.25));
    const auto by_movie = aggregate(scores, AggregateLevel::kMovie);
    REQUIRE(by_movie.rows.size() == 2);
    CHECK(by_movie.rows[0].second == doctest::Approx(0.2));
    CHECK(by_movie.rows[1].second == doctest::Approx(0.3));
  }
  SUBCASE("matches a brute-force nested mean on random tables") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
      const int n_mov = 1 + static_cast<int>(rng.bounded(3));
      const int n_sub = 1 + static_cast<int>(rng.bounded(3));
      const Index parcels = 1 + static_cast<Index>(rng.bounded(5));
      std::vector<ParcelScores> scores;
      for (int m = 0; m < n_mov; ++m)
        for (int s = 0; s < n_sub; ++s) {
          std::vector<double> rs;
          for (Index p = 0; p < parcels; ++p) rs.push_back(rng.uniform(-1, 1));
          scores.push_back(make(s, "mov" + std::to_string(m), rs));
        }
      // oracle: independent nested loops
      double movie_acc = 0;
      for (int m = 0; m < n_mov; ++m) {
        double subj_acc = 0;
        for (int s = 0; s < n_sub; ++s) {
          double parcel_acc = 0;
          for (const auto& ps : scores)
            if (ps.movie == "mov" + std::to_string(m) && ps.subject == s)
              parcel_acc = ps.r.mean();
          subj_acc += parcel_acc;
        }
        movie_acc += subj_acc / n_sub;
      }
      const double expected = movie_acc / n_mov;
      CHECK(aggregate(scores, AggregateLevel::kOverall).overall() ==
            doctest::Approx(expected).epsilon(1e-12));
      // parcel level agrees with its own nesting
      const auto by_parcel = aggregate(scores, AggregateLevel::kParcel);
      REQUIRE(static_cast<Index>(by_parcel.rows.size()) == parcels);
      for (Index p = 0; p < parcels; ++p) {
        double acc = 0;
        for (int m = 0; m < n_mov; ++m) {
          double sub_acc = 0;
          for (const auto& ps : scores)
            if (ps.movie == "mov" + std::to_string(m)) sub_acc += ps.r(p);
          acc += sub_acc / n_sub;
        }
        CHECK(by_parcel.rows[static_cast<size_t>(p)].second ==
              doctest::Approx(acc / n_mov).epsilon(1e-12));
      }
    }
  }
  SUBCASE("undefined entries count and contribute zero") {
    std::vector<ParcelScores> scores = {make(0, "m", {0.5, 0.5})};
    scores[0].r(1) = std::numeric_limits<double>::quiet_NaN();
    const auto table = aggregate(scores, AggregateLevel::kOverall);
    CHECK(table.overall() == doctest::Approx(0.25));
    CHECK(table.undefined == 1);
  }
}

TEST_CASE("scores csv round trip") {
  std::vector<ParcelScores> scores;
  ParcelScores a;
  a.subject = 0;
  a.movie = "mov-x";
  a.n_trs = 7;
  a.r = Vec(3);
  a.r << 0.25, -0.5, std::numeric_limits<double>::quiet_NaN();
  scores.push_back(a);
  ParcelScores b = a;
  b.subject = 1;
  b.r << 0.125, 0, 1;
  scores.push_back(b);

  TempDir dir("scores_csv");
  write_scores_csv(dir.path() / "s.csv", scores);
  const auto back = read_scores_csv(dir.path() / "s.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].subject == 0);
  CHECK(back[0].movie == "mov-x");
  CHECK(back[0].r(0) == 0.25);
  CHECK(back[0].r(1) == -0.5);
  CHECK(std::isnan(back[0].r(2)));
  CHECK(back[1].r(2) == 1.0);
}
