#include "aenc/ceilings.hpp"

#include "aenc/synth.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace aenc;
using testutil::TempDir;

namespace {

CrossConfig tiny_cross() {
  CrossConfig cfg;
  cfg.embed_dim = 3;
  cfg.kernel_width = 3;
  cfg.subjects = 3;
  cfg.parcels = 4;
  return cfg;
}

std::vector<RepeatPair> noise_pairs(Index trs, Index parcels, double signal_std,
                                    double noise_std, std::uint64_t seed) {
  Rng rng(seed);
  Mat signal(trs, parcels);
  for (Index r = 0; r < trs; ++r)
    for (Index c = 0; c < parcels; ++c) signal(r, c) = signal_std * rng.normal();
  Mat first = signal, second = signal;
  for (Index r = 0; r < trs; ++r)
    for (Index c = 0; c < parcels; ++c) {
      first(r, c) += noise_std * rng.normal();
      second(r, c) += noise_std * rng.normal();
    }
  return {{{"ep", "mov"}, 0, first, second}};
}

}  // namespace

TEST_CASE("split_half_ceiling oracles") {
  SUBCASE("identical repeats give r = 1 everywhere") {
    SynthSpec spec = testutil::small_synth_spec();
    spec.noise_std = 0.0;
    spec.repeat_movies = {"valB"};
    const Dataset ds = synth_generate(spec).dataset;
    const auto pairs = collect_repeats(ds);
    REQUIRE(pairs.size() == 2);  // one valB episode x two subjects
    const auto scores = split_half_ceiling(pairs);
    for (const auto& ps : scores)
      for (Index p = 0; p < ps.r.size(); ++p)
        CHECK(ps.r(p) == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("independent noise repeats correlate near zero") {
    const auto pairs = noise_pairs(10000, 6, 0.0, 1.0, 3);
    const auto scores = split_half_ceiling(pairs);
    REQUIRE(scores.size() == 1);
    CHECK(std::abs(scores[0].r.mean()) < 0.03);
  }
  SUBCASE("shared unit signal with unit noise gives r near 0.5") {
    // r = sigma_s^2 / (sigma_s^2 + sigma_n^2)
    const auto pairs = noise_pairs(10000, 6, 1.0, 1.0, 4);
    const auto scores = split_half_ceiling(pairs);
    CHECK(scores[0].r.mean() == doctest::Approx(0.5).epsilon(0.06));
  }
  SUBCASE("symmetric in the presentation order") {
    auto pairs = noise_pairs(500, 4, 1.0, 0.5, 5);
    const auto forward_scores = split_half_ceiling(pairs);
    std::swap(pairs[0].first, pairs[0].second);
    const auto swapped = split_half_ceiling(pairs);
    CHECK(testutil::max_abs_diff(forward_scores[0].r, swapped[0].r) == 0.0);
  }
  SUBCASE("shape mismatch is rejected") {
    auto pairs = noise_pairs(100, 4, 1.0, 0.5, 6);
    pairs[0].second = pairs[0].second.topRows(50).eval();
    CHECK_THROWS_AS(split_half_ceiling(pairs), ValidationError);
  }
}

TEST_CASE("cross_forward composition and invariance") {
  const CrossConfig cfg = tiny_cross();
  const CrossParams params = cross_init_params(cfg, 3);
  std::vector<Mat> bold;
  for (int s = 0; s < cfg.subjects; ++s)
    bold.push_back(testutil::random_mat(12, cfg.parcels, 100 + s));

  SUBCASE("matches a direct project-conv-mean-head oracle") {
    for (int target = 0; target < cfg.subjects; ++target) {
      Mat pooled = Mat::Zero(12, cfg.embed_dim);
      int n = 0;
      for (int j = 0; j < cfg.subjects; ++j) {
        if (j == target) continue;
        Mat z = bold[static_cast<size_t>(j)] * params.in_group_w;
        z.rowwise() += params.in_group_b.row(0);
        z += bold[static_cast<size_t>(j)] * params.in_subj_w[static_cast<size_t>(j)];
        z.rowwise() += params.in_subj_b[static_cast<size_t>(j)].row(0);
        pooled += depthwise_conv(z, params.conv_k[static_cast<size_t>(j)],
                                 cfg.kernel_type);
        ++n;
      }
      pooled /= n;
      Mat expected = pooled * params.head_group_w;
      expected.rowwise() += params.head_group_b.row(0);
      expected += pooled * params.head_subj_w[static_cast<size_t>(target)];
      expected.rowwise() += params.head_subj_b[static_cast<size_t>(target)].row(0);
      CHECK(testutil::max_abs_diff(cross_forward(params, cfg, bold, target),
                                   expected) < 1e-12);
    }
  }
  SUBCASE("prediction for i is bit-identical under changes to input i") {
    const Mat base = cross_forward(params, cfg, bold, 1);
    auto mutated = bold;
    mutated[1] = testutil::random_mat(12, cfg.parcels, 999, 50.0);
    const Mat after = cross_forward(params, cfg, mutated, 1);
    CHECK(testutil::mats_equal(base, after));
  }
  SUBCASE("with S=2 the pooled embedding is the other subject's embedding") {
    CrossConfig cfg2 = tiny_cross();
    cfg2.subjects = 2;
    const CrossParams p2 = cross_init_params(cfg2, 5);
    std::vector<Mat> two = {testutil::random_mat(10, cfg2.parcels, 7),
                            testutil::random_mat(10, cfg2.parcels, 8)};
    // prediction for 0 uses exactly subject 1's embedding
    Mat z = two[1] * p2.in_group_w;
    z.rowwise() += p2.in_group_b.row(0);
    z += two[1] * p2.in_subj_w[1];
    z.rowwise() += p2.in_subj_b[1].row(0);
    const Mat e1 = depthwise_conv(z, p2.conv_k[1], cfg2.kernel_type);
    Mat expected = e1 * p2.head_group_w;
    expected.rowwise() += p2.head_group_b.row(0);
    expected += e1 * p2.head_subj_w[0];
    expected.rowwise() += p2.head_subj_b[0].row(0);
    CHECK(testutil::max_abs_diff(cross_forward(p2, cfg2, two, 0), expected) < 1e-12);
    // swapping the subjects' data swaps the pooled embeddings
    std::vector<Mat> swapped = {two[1], two[0]};
    // after the swap, target 1 pools subject 0's slot, which now holds two[1]
    CHECK(!testutil::mats_equal(cross_forward(p2, cfg2, two, 0),
                                cross_forward(p2, cfg2, swapped, 0)));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(cross_forward(params, cfg, bold, 3), ValidationError);
    std::vector<Mat> short_list = {bold[0], bold[1]};
    CHECK_THROWS_AS(cross_forward(params, cfg, short_list, 0), ValidationError);
  }
}

TEST_CASE("cross-subject gradients match finite differences") {
  for (const auto kernel : {KernelType::kDefault, KernelType::kCausal,
                            KernelType::kPositive, KernelType::kTied}) {
    for (const auto head : {HeadMode::kGroupOnly, HeadMode::kSubjectOnly,
                            HeadMode::kGroupPlusSubject}) {
      CrossConfig cfg = tiny_cross();
      cfg.kernel_type = kernel;
      cfg.head_mode = head;
      const GradCheckReport report = cross_grad_check(cfg, 1e-4, 11);
      INFO("kernel=", to_string(kernel), " head=", to_string(head));
      CHECK(report.all_pass);
    }
  }
}

TEST_CASE("cross_train reconstructs identical subjects at zero noise") {
  SynthSpec spec;
  spec.subjects = 2;
  spec.parcels = 10;
  spec.backbones = {{"f", 8}};
  spec.episodes = {{"trainA-01", "trainA", 700},
                   {"valB-01", "valB", 300},
                   {"testC-01", "testC", 300}};
  spec.embed_dim = 4;
  spec.kernel_width = 5;
  spec.noise_std = 0.0;
  spec.group_weight = 1.0;
  spec.subject_weight = 0.0;  // both subjects see the identical signal
  spec.seed = 9;
  const Dataset ds = synth_generate(spec).dataset;

  CrossConfig cfg;
  cfg.embed_dim = 6;
  cfg.kernel_width = 3;
  TrainConfig tc;
  tc.max_steps = 400;
  tc.batch_size = 8;
  tc.window_length = 32;
  tc.lr = 0.02;
  tc.weight_decay = 1e-4;
  tc.eval_every = 100;
  const CrossTrainResult result = cross_train(ds, testutil::small_split(), cfg, tc);
  const auto scores = cross_score(result.checkpoint, ds, {"testC"});
  REQUIRE(scores.size() == 2);
  for (const auto& ps : scores) CHECK(ps.r.mean() >= 0.99);
}

TEST_CASE("cross_train approaches the predictable-variance ceiling") {
  // shared stimulus-driven signal with private measurement noise
  SynthSpec spec;
  spec.subjects = 3;
  spec.parcels = 10;
  spec.backbones = {{"f", 8}};
  spec.episodes = {{"trainA-01", "trainA", 1500},
                   {"valB-01", "valB", 400},
                   {"testC-01", "testC", 600}};
  spec.embed_dim = 4;
  spec.kernel_width = 5;
  spec.noise_std = 0.6;
  spec.group_weight = 0.8;
  spec.subject_weight = 0.2;
  spec.seed = 19;
  const Dataset ds = synth_generate(spec).dataset;

  CrossConfig cfg;
  cfg.embed_dim = 6;
  cfg.kernel_width = 3;
  TrainConfig tc;
  tc.max_steps = 500;
  tc.batch_size = 8;
  tc.window_length = 32;
  tc.lr = 0.01;
  tc.weight_decay = 1e-4;
  tc.eval_every = 100;
  const CrossTrainResult result = cross_train(ds, testutil::small_split(), cfg, tc);
  const auto scores = cross_score(result.checkpoint, ds, {"testC"});
  const double got = aggregate(scores, AggregateLevel::kOverall).overall();
  // ceiling: all planted signal is stimulus-driven; r_max = 1/sqrt(1+0.36)
  const double ceiling = 1.0 / std::sqrt(1.0 + spec.noise_std * spec.noise_std);
  CHECK(got > 0.5 * ceiling);
  CHECK(got <= ceiling + 0.05);
}

TEST_CASE("cross_train is deterministic and round-trips its checkpoint") {
  SynthSpec spec = testutil::small_synth_spec();
  spec.noise_std = 0.4;
  const Dataset ds = synth_generate(spec).dataset;
  CrossConfig cfg;
  cfg.embed_dim = 4;
  cfg.kernel_width = 3;
  TrainConfig tc;
  tc.max_steps = 50;
  tc.batch_size = 4;
  tc.window_length = 24;
  tc.eval_every = 25;

  const CrossTrainResult a = cross_train(ds, testutil::small_split(), cfg, tc);
  const CrossTrainResult b = cross_train(ds, testutil::small_split(), cfg, tc);
  CHECK(a.checkpoint.best_score == b.checkpoint.best_score);
  CrossParams pa = a.checkpoint.params;
  CrossParams pb = b.checkpoint.params;
  auto blocks_a = collect_cross_blocks(pa);
  auto blocks_b = collect_cross_blocks(pb);
  for (size_t i = 0; i < blocks_a.size(); ++i)
    CHECK(testutil::mats_equal(*blocks_a[i].value, *blocks_b[i].value));

  TempDir dir("cross_ckpt");
  save_cross_checkpoint(dir.path() / "c.aenc", a.checkpoint);
  const CrossCheckpoint back = load_cross_checkpoint(dir.path() / "c.aenc");
  CHECK(back.config.embed_dim == cfg.embed_dim);
  CHECK(back.best_step == a.checkpoint.best_step);
  const auto scores = cross_score(back, ds, {"testC"});
  CHECK(scores.size() == 2);
}

TEST_CASE("cross_train requires every subject present") {
  SynthSpec spec = testutil::small_synth_spec();
  Dataset ds = synth_generate(spec).dataset;
  for (auto& ep : ds.episodes)
    if (ep.id.movie == "trainA") ep.bold[1].reset();
  CrossConfig cfg;
  cfg.embed_dim = 4;
  cfg.kernel_width = 3;
  TrainConfig tc;
  tc.max_steps = 10;
  tc.window_length = 24;
  CHECK_THROWS_AS(cross_train(ds, testutil::small_split(), cfg, tc),
                  ValidationError);
}

TEST_CASE("ceiling_gap") {
  auto make = [](int subject, const std::string& movie, std::vector<double> rs) {
    ParcelScores ps;
    ps.subject = subject;
    ps.movie = movie;
    ps.n_trs = 10;
    ps.r = Eigen::Map<Vec>(rs.data(), static_cast<Index>(rs.size()));
    return ps;
  };

  SUBCASE("identical inputs give all zeros") {
    const std::vector<ParcelScores> s = {make(0, "m", {0.3, 0.7})};
    const auto gap = ceiling_gap(s, s);
    CHECK(gap[0].r.isZero());
  }
  SUBCASE("0.5 ceiling minus 0.3 feature gives 0.2") {
    const auto gap = ceiling_gap({make(0, "m", {0.3})}, {make(0, "m", {0.5})});
    CHECK(gap[0].r(0) == doctest::Approx(0.2));
  }
  SUBCASE("matches the elementwise oracle on random tables") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> f, c;
      for (int i = 0; i < 6; ++i) {
        f.push_back(rng.uniform(-1, 1));
        c.push_back(rng.uniform(-1, 1));
      }
      const auto gap = ceiling_gap({make(1, "mv", f)}, {make(1, "mv", c)});
      for (int i = 0; i < 6; ++i)
        CHECK(gap[0].r(i) == doctest::Approx(c[static_cast<size_t>(i)] -
                                             f[static_cast<size_t>(i)])
                                 .epsilon(1e-12));
    }
  }
  SUBCASE("undefined cells enter as zero") {
    auto feat = make(0, "m", {0.3, 0.4});
    feat.r(1) = std::numeric_limits<double>::quiet_NaN();
    const auto gap = ceiling_gap({feat}, {make(0, "m", {0.5, 0.5})});
    CHECK(gap[0].r(1) == doctest::Approx(0.5));
  }
  SUBCASE("grid mismatch is rejected") {
    CHECK_THROWS_AS(ceiling_gap({make(0, "m", {0.1})}, {make(1, "m", {0.1})}),
                    ValidationError);
    CHECK_THROWS_AS(ceiling_gap({make(0, "m", {0.1})}, {}), ValidationError);
  }
}
