#include "aenc/dataset.hpp"

#include "aenc/synth.hpp"
#include "aenc/tensor_file.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <json.hpp>

#include <fstream>

using namespace aenc;
using testutil::TempDir;

namespace {

// hand-rolled minimal manifest: 2 episodes, 1 backbone (D=8), 2 subjects
void write_minimal_fixture(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "tensors");
  nlohmann::json j;
  j["subjects"] = 2;
  j["tr_seconds"] = 1.49;
  j["backbones"] = {{{"label", "feat0"}, {"dim", 8}}};
  j["episodes"] = nlohmann::json::array();
  for (const std::string name : {"ep-a", "ep-b"}) {
    write_tensor(dir / ("tensors/" + name + ".feat0.aenc"),
                 f32_round(testutil::random_mat(40, 8, name == "ep-a" ? 1 : 2)));
    write_tensor(dir / ("tensors/" + name + ".sub0.aenc"),
                 f32_round(testutil::random_mat(40, 5, 3)));
    write_tensor(dir / ("tensors/" + name + ".sub1.aenc"),
                 f32_round(testutil::random_mat(40, 5, 4)));
    j["episodes"].push_back(
        {{"name", name},
         {"movie", "m1"},
         {"features", {{"feat0", "tensors/" + name + ".feat0.aenc"}}},
         {"bold",
          {{{"subject", 0}, {"path", "tensors/" + name + ".sub0.aenc"}},
           {{"subject", 1}, {"path", "tensors/" + name + ".sub1.aenc"}}}}});
  }
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2);
}

}  // namespace

TEST_CASE("load_manifest accepts a minimal well-formed fixture") {
  TempDir dir("manifest_min");
  write_minimal_fixture(dir.path());
  const Dataset ds = load_manifest(dir.path() / "manifest.json");
  CHECK(ds.subjects == 2);
  CHECK(ds.episodes.size() == 2);
  CHECK(ds.parcels() == 5);
  CHECK(ds.backbones.size() == 1);
  CHECK(ds.backbones[0].dim == 8);
  CHECK(ds.movies() == std::set<std::string>{"m1"});
}

TEST_CASE("load_manifest rejects broken inputs") {
  TempDir dir("manifest_bad");
  write_minimal_fixture(dir.path());

  SUBCASE("shape mismatch vs manifest: truncated payload") {
    // overwrite one tensor with a shorter payload than its header claims
    auto path = dir.path() / "tensors/ep-a.feat0.aenc";
    std::ifstream in(path, std::ios::binary);
    std::string bytes{std::istreambuf_iterator<char>(in),
                      std::istreambuf_iterator<char>()};
    in.close();
    bytes.resize(bytes.size() - 8);
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_manifest(dir.path() / "manifest.json"), ValidationError);
  }
  SUBCASE("missing tensor file") {
    std::filesystem::remove(dir.path() / "tensors/ep-b.sub1.aenc");
    CHECK_THROWS_AS(load_manifest(dir.path() / "manifest.json"), ValidationError);
  }
  SUBCASE("duplicate episode name") {
    std::ifstream in(dir.path() / "manifest.json");
    nlohmann::json j = nlohmann::json::parse(in);
    in.close();
    j["episodes"][1]["name"] = "ep-a";
    std::ofstream out(dir.path() / "manifest.json");
    out << j.dump(2);
    out.close();
    CHECK_THROWS_AS(load_manifest(dir.path() / "manifest.json"), ValidationError);
  }
  SUBCASE("non-finite values") {
    Mat bad = Mat::Ones(40, 8);
    bad(3, 3) = std::numeric_limits<double>::infinity();
    write_tensor(dir.path() / "tensors/ep-a.feat0.aenc", bad);
    CHECK_THROWS_AS(load_manifest(dir.path() / "manifest.json"), ValidationError);
  }
}

TEST_CASE("synth dataset round-trips through save and load bit-exactly") {
  const SynthSpec spec = testutil::small_synth_spec();
  SynthResult synth = synth_generate(spec);
  TempDir dir("synth_rt");
  save_dataset(synth.dataset, dir.path());
  const Dataset back = load_manifest(dir.path() / "manifest.json");
  REQUIRE(back.episodes.size() == synth.dataset.episodes.size());
  CHECK(back.subjects == synth.dataset.subjects);
  CHECK(back.tr_seconds == doctest::Approx(synth.dataset.tr_seconds));
  for (size_t e = 0; e < back.episodes.size(); ++e) {
    const Episode& a = synth.dataset.episodes[e];
    const Episode& b = back.episodes[e];
    CHECK(a.id == b.id);
    for (size_t m = 0; m < a.features.size(); ++m)
      CHECK(testutil::mats_equal(a.features[m], b.features[m]));
    for (size_t s = 0; s < a.bold.size(); ++s) {
      REQUIRE(a.bold[s].has_value() == b.bold[s].has_value());
      if (a.bold[s]) CHECK(testutil::mats_equal(*a.bold[s], *b.bold[s]));
    }
  }
}

TEST_CASE("align_lengths truncates to the shortest series") {
  const EpisodeId id{"ep", "m"};
  std::vector<BackboneInfo> backbones = {{"f", 4}};

  SUBCASE("feature 100 vs bold 98 gives 98") {
    std::vector<FeatureSeries> f = {{id, "f", testutil::random_mat(100, 4, 1)}};
    std::vector<BoldSeries> b = {{id, 0, testutil::random_mat(98, 3, 2)}};
    const Episode ep = align_lengths(f, b, backbones, 1);
    CHECK(ep.trs() == 98);
    CHECK(ep.bold[0]->rows() == 98);
  }
  SUBCASE("equal lengths unchanged") {
    std::vector<FeatureSeries> f = {{id, "f", testutil::random_mat(50, 4, 1)}};
    std::vector<BoldSeries> b = {{id, 0, testutil::random_mat(50, 3, 2)}};
    const Episode ep = align_lengths(f, b, backbones, 1);
    CHECK(ep.trs() == 50);
    CHECK(testutil::mats_equal(ep.features[0], f[0].data));
  }
  SUBCASE("three series 50/49/51 give 49") {
    std::vector<FeatureSeries> f = {{id, "f", testutil::random_mat(50, 4, 1)}};
    std::vector<BoldSeries> b = {{id, 0, testutil::random_mat(49, 3, 2)},
                                 {id, 1, testutil::random_mat(51, 3, 3)}};
    const Episode ep = align_lengths(f, b, backbones, 2);
    CHECK(ep.trs() == 49);
    CHECK(ep.bold[1]->rows() == 49);
  }
  SUBCASE("warning recorded when more than 5 TRs dropped") {
    LoadReport report;
    std::vector<FeatureSeries> f = {{id, "f", testutil::random_mat(100, 4, 1)}};
    std::vector<BoldSeries> b = {{id, 0, testutil::random_mat(90, 3, 2)}};
    align_lengths(f, b, backbones, 1, &report);
    CHECK(report.warnings.size() == 1);
  }
  SUBCASE("mixed episodes rejected") {
    std::vector<FeatureSeries> f = {{id, "f", testutil::random_mat(10, 4, 1)}};
    std::vector<BoldSeries> b = {{{"other", "m"}, 0, testutil::random_mat(10, 3, 2)}};
    CHECK_THROWS_AS(align_lengths(f, b, backbones, 1), ValidationError);
  }
}

TEST_CASE("zscore_fit statistics") {
  SynthSpec spec = testutil::small_synth_spec();
  spec.episodes = {{"trainA-01", "trainA", 10000}, {"valB-01", "valB", 50}};
  spec.noise_std = 0.5;
  Dataset ds = synth_generate(spec).dataset;
  const SplitSpec split{{"trainA"}, {"valB"}, {}};

  SUBCASE("standard-normal channels have mean ~0 and std ~1") {
    const NormStats stats = zscore_fit(ds, split);
    for (size_t m = 0; m < stats.feat_mean.size(); ++m) {
      CHECK(stats.feat_mean[m].cwiseAbs().maxCoeff() < 0.05);
      CHECK((stats.feat_std[m].array() - 1.0).abs().maxCoeff() < 0.05);
      CHECK(stats.feat_floored[m].empty());
    }
  }
  SUBCASE("constant channel gets the floored std and a flag") {
    for (auto& ep : ds.episodes) ep.features[0].col(2).setConstant(5.0);
    const NormStats stats = zscore_fit(ds, split);
    CHECK(stats.feat_mean[0](2) == doctest::Approx(5.0));
    CHECK(stats.feat_std[0](2) == kStdFloor);
    REQUIRE(stats.feat_floored[0].size() == 1);
    CHECK(stats.feat_floored[0][0] == 2);
  }
  SUBCASE("stats depend only on the train split") {
    const NormStats before = zscore_fit(ds, split);
    for (auto& ep : ds.episodes) {
      if (ep.id.movie != "valB") continue;
      for (auto& f : ep.features) f.setConstant(123.0);
      for (auto& b : ep.bold)
        if (b) b->setConstant(-7.0);
    }
    const NormStats after = zscore_fit(ds, split);
    for (size_t m = 0; m < before.feat_mean.size(); ++m) {
      CHECK(testutil::mats_equal(before.feat_mean[m], after.feat_mean[m]));
      CHECK(testutil::mats_equal(before.feat_std[m], after.feat_std[m]));
    }
    for (size_t s = 0; s < before.bold_mean.size(); ++s) {
      CHECK(testutil::mats_equal(before.bold_mean[s], after.bold_mean[s]));
      CHECK(testutil::mats_equal(before.bold_std[s], after.bold_std[s]));
    }
  }
}

TEST_CASE("tile_episode covers exactly at offset 0") {
  const auto tiles = tile_episode(128, 64, 0);
  REQUIRE(tiles.size() == 2);
  CHECK(tiles[0] == std::pair<Index, Index>{0, 64});
  CHECK(tiles[1] == std::pair<Index, Index>{64, 64});
}

TEST_CASE("make_windows is deterministic and covers every train TR") {
  SynthSpec spec = testutil::small_synth_spec();
  const Dataset ds = synth_generate(spec).dataset;
  const SplitSpec split = testutil::small_split();

  SUBCASE("same seed, same windows") {
    const auto a = make_windows(ds, split, 64, 9);
    const auto b = make_windows(ds, split, 64, 9);
    CHECK(a == b);
  }
  SUBCASE("different seeds generally differ") {
    const auto a = make_windows(ds, split, 64, 9);
    const auto b = make_windows(ds, split, 64, 10);
    CHECK(a != b);
  }
  SUBCASE("coverage on 50 random episode lengths") {
    Rng rng(777);
    for (int trial = 0; trial < 50; ++trial) {
      const Index trs = 20 + static_cast<Index>(rng.bounded(500));
      const Index length = 1 + static_cast<Index>(rng.bounded(80));
      const Index offset =
          trs > length ? static_cast<Index>(rng.bounded(static_cast<std::uint64_t>(
                             length)))
                       : 0;
      std::vector<bool> covered(static_cast<size_t>(trs), false);
      for (const auto& [start, len] : tile_episode(trs, length, offset))
        for (Index t = start; t < start + len; ++t)
          covered[static_cast<size_t>(t)] = true;
      const bool all = std::all_of(covered.begin(), covered.end(),
                                   [](bool b) { return b; });
      CHECK(all);
    }
  }
  SUBCASE("short episode yields a single truncated window") {
    const auto windows = make_windows(ds, split, 1000, 4);
    REQUIRE(windows.size() == 2);  // two trainA episodes
    for (const auto& w : windows) {
      CHECK(w.truncated);
      CHECK(w.start == 0);
      CHECK(w.length < 1000);
    }
  }
}

TEST_CASE("synth zero-noise BOLD equals the planted forward output") {
  SynthSpec spec = testutil::small_synth_spec();
  spec.noise_std = 0.0;
  const SynthResult synth = synth_generate(spec);
  for (const auto& ep : synth.dataset.episodes) {
    for (int s = 0; s < spec.subjects; ++s) {
      const Mat pred =
          forward(synth.planted_params, synth.planted_config, ep.features, s);
      // stored BOLD is the f32 rounding of the f64 forward output
      CHECK(testutil::max_abs_diff(*ep.bold[static_cast<size_t>(s)], pred) < 1e-6);
      CHECK(testutil::mats_equal(*ep.bold[static_cast<size_t>(s)], f32_round(pred)));
    }
  }
}

TEST_CASE("synth noise_std=1 puts per-parcel correlation near 1/sqrt(2)") {
  SynthSpec spec;
  spec.subjects = 1;
  spec.parcels = 12;
  spec.backbones = {{"f", 16}};
  spec.episodes = {{"long-01", "m", 20000}};
  spec.embed_dim = 8;
  spec.kernel_width = 7;
  spec.noise_std = 1.0;
  spec.seed = 5;
  const SynthResult synth = synth_generate(spec);
  const Episode& ep = synth.dataset.episodes[0];
  const Mat signal = forward(synth.planted_params, synth.planted_config, ep.features, 0);
  // r = sigma_s / sqrt(sigma_s^2 + sigma_n^2) with sigma_s ~ 1, sigma_n = 1
  double sum = 0;
  for (Index p = 0; p < spec.parcels; ++p) {
    Vec a = signal.col(p), b = ep.bold[0]->col(p);
    double r = 0;
    {
      const double ma = a.mean(), mb = b.mean();
      r = ((a.array() - ma) * (b.array() - mb)).sum() /
          std::sqrt((a.array() - ma).square().sum() * (b.array() - mb).square().sum());
    }
    sum += r;
  }
  CHECK(sum / static_cast<double>(spec.parcels) ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.045));
}

TEST_CASE("synth is bit-identical for a fixed seed") {
  const SynthSpec spec = testutil::small_synth_spec();
  SynthResult a = synth_generate(spec);
  SynthResult b = synth_generate(spec);
  REQUIRE(a.dataset.episodes.size() == b.dataset.episodes.size());
  for (size_t e = 0; e < a.dataset.episodes.size(); ++e) {
    for (size_t m = 0; m < a.dataset.episodes[e].features.size(); ++m)
      CHECK(testutil::mats_equal(a.dataset.episodes[e].features[m],
                                 b.dataset.episodes[e].features[m]));
    for (size_t s = 0; s < a.dataset.episodes[e].bold.size(); ++s)
      CHECK(testutil::mats_equal(*a.dataset.episodes[e].bold[s],
                                 *b.dataset.episodes[e].bold[s]));
  }
  CHECK(testutil::params_equal(a.planted_params, b.planted_params,
                               a.planted_config.backbones));
}

TEST_CASE("repeat presentations are generated for repeat movies") {
  SynthSpec spec = testutil::small_synth_spec();
  spec.noise_std = 0.4;
  spec.repeat_movies = {"valB"};
  const Dataset ds = synth_generate(spec).dataset;
  for (const auto& ep : ds.episodes) {
    const bool expect = ep.id.movie == "valB";
    for (int s = 0; s < ds.subjects; ++s) {
      CHECK(ep.bold_repeat[static_cast<size_t>(s)].has_value() == expect);
      if (expect)
        CHECK(!testutil::mats_equal(*ep.bold_repeat[static_cast<size_t>(s)],
                                    *ep.bold[static_cast<size_t>(s)]));
    }
  }
}
