// aenc: fMRI encoding toolkit CLI.
//
// Subcommands: validate, synth, train, score, sweep, ensemble, ceiling, gap.
// Every command writes its resolved run configuration (runconfig.json) next
// to its outputs, so a run can be reproduced from the output directory
// alone. Exit codes: 0 success, 1 input validation failure, 2 runtime error.

#include "aenc/ceilings.hpp"
#include "aenc/dataset.hpp"
#include "aenc/ensemble.hpp"
#include "aenc/metrics.hpp"
#include "aenc/serde.hpp"
#include "aenc/synth.hpp"
#include "aenc/tensor_file.hpp"
#include "aenc/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using aenc::ValidationError;
using json = nlohmann::json;

namespace {

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing config file: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError(path.string() + ": invalid JSON");
  return j;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_runconfig(const fs::path& out_dir, const std::string& command,
                     json flags, json config) {
  json rc;
  rc["command"] = command;
  rc["flags"] = std::move(flags);
  if (!config.is_null()) rc["config"] = std::move(config);
  write_json(out_dir / "runconfig.json", rc);
}

void require_fresh(const fs::path& artifact, bool force) {
  if (fs::exists(artifact) && !force)
    throw ValidationError(artifact.string() +
                          " already exists; pass --force to overwrite");
}

std::set<std::string> parse_movie_list(const std::string& csv) {
  std::set<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.insert(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.insert(cur);
  return out;
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.')
               ? c
               : '_';
  return out;
}

json aggregate_to_json(const std::vector<aenc::ParcelScores>& scores) {
  json out;
  const auto overall = aenc::aggregate(scores, aenc::AggregateLevel::kOverall);
  out["overall"] = overall.overall();
  out["undefined"] = overall.undefined;
  json by_movie = json::object();
  for (const auto& [k, v] : aenc::aggregate(scores, aenc::AggregateLevel::kMovie).rows)
    by_movie[k] = v;
  out["by_movie"] = std::move(by_movie);
  json by_subject = json::object();
  for (const auto& [k, v] : aenc::aggregate(scores, aenc::AggregateLevel::kSubject).rows)
    by_subject[k] = v;
  out["by_subject"] = std::move(by_subject);
  return out;
}

// ---------------------------------------------------------------------------

int cmd_validate(const fs::path& manifest, const std::optional<fs::path>& out_dir) {
  aenc::LoadReport report;
  const aenc::Dataset ds = aenc::load_manifest(manifest, &report);
  json j;
  j["ok"] = true;
  j["subjects"] = ds.subjects;
  j["episodes"] = ds.episodes.size();
  j["parcels"] = ds.parcels();
  j["movies"] = ds.movies();
  j["warnings"] = report.warnings;
  if (out_dir) {
    fs::create_directories(*out_dir);
    write_json(*out_dir / "validate_report.json", j);
    write_runconfig(*out_dir, "validate", {{"manifest", manifest.string()}}, {});
  }
  std::cout << "ok: " << ds.episodes.size() << " episodes, " << ds.subjects
            << " subjects, " << ds.parcels() << " parcels, "
            << report.warnings.size() << " warnings\n";
  return 0;
}

int cmd_synth(const fs::path& config_path, const fs::path& out_dir,
              std::optional<std::uint64_t> seed, bool force) {
  json config = load_json(config_path);
  if (seed) config["seed"] = *seed;
  const aenc::SynthSpec spec = aenc::synth_spec_from_json(config);
  require_fresh(out_dir / "dataset" / "manifest.json", force);
  fs::create_directories(out_dir);

  aenc::SynthResult result = aenc::synth_generate(spec);
  aenc::save_dataset(result.dataset, out_dir / "dataset");

  aenc::TensorBundle planted;
  planted.header["kind"] = "synth_planted";
  planted.header["spec"] = aenc::synth_spec_to_json(spec);
  planted.header["encoder"] = aenc::encoder_config_to_json(result.planted_config);
  for (const auto& block : aenc::collect_blocks<double>(
           result.planted_params, result.planted_config.backbones))
    planted.add(block.name, *block.value);
  aenc::write_bundle(out_dir / "planted.aenc", planted);

  write_runconfig(out_dir, "synth",
                  {{"config", config_path.string()},
                   {"seed", spec.seed},
                   {"force", force}},
                  aenc::synth_spec_to_json(spec));
  std::cout << "synth: wrote " << result.dataset.episodes.size()
            << " episodes to " << (out_dir / "dataset").string() << "\n";
  return 0;
}

int cmd_train(const fs::path& manifest, const fs::path& config_path,
              const fs::path& out_dir, std::optional<std::uint64_t> seed,
              bool force) {
  const json config = load_json(config_path);
  const aenc::Dataset ds = aenc::load_manifest(manifest);
  const aenc::SplitSpec split = aenc::split_from_json(config.at("split"));
  const aenc::EncoderConfig enc =
      aenc::resolve_encoder_config(config.value("encoder", json::object()), ds);
  aenc::TrainConfig tc =
      aenc::train_config_from_json(config.value("train", json::object()));
  if (seed) tc.seed = *seed;

  const fs::path ckpt_path = out_dir / "checkpoint.aenc";
  require_fresh(ckpt_path, force);
  fs::create_directories(out_dir);

  aenc::TrainResult result = aenc::train(ds, split, enc, tc);
  aenc::save_checkpoint(ckpt_path, result.checkpoint);

  json log;
  log["best_score"] = result.checkpoint.best_score;
  log["best_step"] = result.checkpoint.best_step;
  log["evals"] = json::array();
  for (const auto& e : result.evals)
    log["evals"].push_back(
        {{"step", e.step}, {"loss", e.loss}, {"val_score", e.val_score}});
  log["losses"] = json::array();
  for (const auto& [step, l] : result.losses) log["losses"].push_back({step, l});
  write_json(out_dir / "train_log.json", log);

  write_runconfig(out_dir, "train",
                  {{"manifest", manifest.string()},
                   {"config", config_path.string()},
                   {"seed", tc.seed},
                   {"force", force}},
                  {{"split", aenc::split_to_json(split)},
                   {"encoder", aenc::encoder_config_to_json(result.checkpoint.encoder)},
                   {"train", aenc::train_config_to_json(tc)}});
  std::cout << "train: best validation score " << result.checkpoint.best_score
            << " at step " << result.checkpoint.best_step << "\n";
  return 0;
}

int cmd_score(const fs::path& manifest, const fs::path& ckpt_path,
              const std::string& movies_csv, const fs::path& out_dir, bool force) {
  const aenc::Dataset ds = aenc::load_manifest(manifest);
  const aenc::Checkpoint ckpt = aenc::load_checkpoint(ckpt_path);
  const auto movies = parse_movie_list(movies_csv);
  if (movies.empty()) throw ValidationError("score: no movies given");

  require_fresh(out_dir / "scores.csv", force);
  fs::create_directories(out_dir);
  const auto scores = aenc::score(ckpt, ds, movies);
  aenc::write_scores_csv(out_dir / "scores.csv", scores);
  write_json(out_dir / "aggregate.json", aggregate_to_json(scores));
  write_runconfig(out_dir, "score",
                  {{"manifest", manifest.string()},
                   {"checkpoint", ckpt_path.string()},
                   {"movies", movies_csv},
                   {"force", force}},
                  {});
  std::cout << "score: overall "
            << aenc::aggregate(scores, aenc::AggregateLevel::kOverall).overall()
            << " over " << movies.size() << " movie(s)\n";
  return 0;
}

int cmd_sweep(const fs::path& manifest, const fs::path& config_path,
              const fs::path& out_dir, int workers,
              std::optional<std::uint64_t> seed, bool force) {
  const json config = load_json(config_path);
  const aenc::Dataset ds = aenc::load_manifest(manifest);
  const aenc::SplitSpec split = aenc::split_from_json(config.at("split"));
  const aenc::EncoderConfig base_enc =
      aenc::resolve_encoder_config(config.value("encoder", json::object()), ds);
  const aenc::TrainConfig base_train =
      aenc::train_config_from_json(config.value("train", json::object()));
  aenc::SweepSpace space = aenc::sweep_space_from_json(config.at("space"));
  if (seed) space.seed = *seed;

  const fs::path store = out_dir / "store";
  require_fresh(store, force);
  fs::create_directories(store);

  const auto draws = aenc::sample_configs(space);
  const auto records =
      aenc::run_sweep(ds, split, base_enc, base_train, draws, store, workers);

  json summary;
  summary["models"] = json::array();
  int failed = 0;
  for (const auto& r : records) {
    summary["models"].push_back({{"model_id", r.model_id}, {"failed", r.failed}});
    if (r.failed) ++failed;
  }
  summary["count"] = records.size();
  summary["failed"] = failed;
  write_json(out_dir / "sweep_summary.json", summary);
  write_runconfig(out_dir, "sweep",
                  {{"manifest", manifest.string()},
                   {"config", config_path.string()},
                   {"workers", workers},
                   {"seed", space.seed},
                   {"force", force}},
                  {{"split", aenc::split_to_json(split)},
                   {"space", aenc::sweep_space_to_json(space)},
                   {"encoder", aenc::encoder_config_to_json(base_enc)},
                   {"train", aenc::train_config_to_json(base_train)}});
  std::cout << "sweep: " << records.size() << " models trained, " << failed
            << " failed\n";
  return 0;
}

int cmd_ensemble(const fs::path& manifest, const fs::path& store, int k,
                 const std::string& rank_movies_csv,
                 const std::string& predict_movies_csv, const fs::path& out_dir,
                 bool force) {
  const aenc::Dataset ds = aenc::load_manifest(manifest);
  const auto records = aenc::load_records(store);
  if (records.empty()) throw ValidationError("ensemble: empty record store");

  std::set<std::string> rank_movies = parse_movie_list(rank_movies_csv);
  if (rank_movies.empty()) rank_movies = records.front().validation_movies;
  const auto predict_movies = parse_movie_list(predict_movies_csv);
  if (predict_movies.empty())
    throw ValidationError("ensemble: --predict movie list required");

  require_fresh(out_dir / "selection.json", force);
  fs::create_directories(out_dir);

  const auto selection = aenc::select_topk(records, k, rank_movies);
  write_json(out_dir / "selection.json", aenc::selection_to_json(selection));

  const auto preds =
      aenc::predict_ensemble(selection, records, store, ds, predict_movies);
  std::vector<aenc::ParcelScores> scores;
  for (const auto& [key, pred] : preds) {
    char tag[32];
    std::snprintf(tag, sizeof(tag), "pred_sub%02d_", key.subject);
    aenc::write_tensor(out_dir / (tag + sanitize(key.movie) + ".aenc"), pred);
    // score the averaged prediction wherever targets exist
    bool has_target = false;
    for (int e : ds.episode_indices({key.movie}))
      if (ds.episodes[static_cast<size_t>(e)].bold[static_cast<size_t>(key.subject)])
        has_target = true;
    if (!has_target) continue;
    aenc::ParcelScores ps;
    ps.subject = key.subject;
    ps.movie = key.movie;
    ps.n_trs = pred.rows();
    ps.r = aenc::score_prediction(ds, key.movie, key.subject, pred);
    scores.push_back(std::move(ps));
  }
  if (!scores.empty()) {
    aenc::write_scores_csv(out_dir / "ensemble_scores.csv", scores);
    write_json(out_dir / "ensemble_aggregate.json", aggregate_to_json(scores));
  }
  write_runconfig(out_dir, "ensemble",
                  {{"manifest", manifest.string()},
                   {"store", store.string()},
                   {"k", k},
                   {"movies", rank_movies_csv},
                   {"predict", predict_movies_csv},
                   {"force", force}},
                  {});
  std::cout << "ensemble: top-" << k << " over " << records.size() << " models, "
            << preds.size() << " prediction cells\n";
  return 0;
}

int cmd_ceiling(const fs::path& manifest, const std::string& mode,
                const std::optional<fs::path>& config_path, const fs::path& out_dir,
                std::optional<std::uint64_t> seed, bool force) {
  const aenc::Dataset ds = aenc::load_manifest(manifest);
  fs::create_directories(out_dir);

  if (mode == "split_half") {
    require_fresh(out_dir / "ceiling_split_half.csv", force);
    const auto pairs = aenc::collect_repeats(ds);
    const auto scores = aenc::split_half_ceiling(pairs);
    aenc::write_scores_csv(out_dir / "ceiling_split_half.csv", scores, "value");
    write_runconfig(out_dir, "ceiling",
                    {{"manifest", manifest.string()}, {"mode", mode}, {"force", force}},
                    {});
    std::cout << "ceiling: split-half over " << pairs.size() << " repeat pairs, "
              << scores.size() << " cells\n";
    return 0;
  }
  if (mode != "cross") throw ValidationError("ceiling: mode must be split_half or cross");
  if (!config_path) throw ValidationError("ceiling: cross mode needs --config");

  const json config = load_json(*config_path);
  const aenc::SplitSpec split = aenc::split_from_json(config.at("split"));
  aenc::TrainConfig tc =
      aenc::train_config_from_json(config.value("train", json::object()));
  if (seed) tc.seed = *seed;
  aenc::CrossConfig cc;
  const json jc = config.value("cross", json::object());
  cc.embed_dim = jc.value("embed_dim", cc.embed_dim);
  cc.kernel_width = jc.value("kernel_width", cc.kernel_width);
  cc.kernel_type = aenc::kernel_type_from_string(jc.value("kernel_type", "default"));
  cc.head_mode = aenc::head_mode_from_string(jc.value("head_mode", "group_plus_subject"));

  std::set<std::string> score_movies = split.validation;
  if (config.contains("score_movies"))
    score_movies = config.at("score_movies").get<std::set<std::string>>();

  require_fresh(out_dir / "ceiling_cross.csv", force);
  aenc::CrossTrainResult result = aenc::cross_train(ds, split, cc, tc);
  aenc::save_cross_checkpoint(out_dir / "cross_checkpoint.aenc", result.checkpoint);
  const auto scores = aenc::cross_score(result.checkpoint, ds, score_movies);
  aenc::write_scores_csv(out_dir / "ceiling_cross.csv", scores, "value");
  write_runconfig(out_dir, "ceiling",
                  {{"manifest", manifest.string()},
                   {"mode", mode},
                   {"config", config_path->string()},
                   {"seed", tc.seed},
                   {"force", force}},
                  config);
  std::cout << "ceiling: cross-subject best validation score "
            << result.checkpoint.best_score << " at step "
            << result.checkpoint.best_step << "\n";
  return 0;
}

int cmd_gap(const fs::path& feature_csv, const fs::path& ceiling_csv,
            const fs::path& out_dir, bool force) {
  const auto feature = aenc::read_scores_csv(feature_csv);
  const auto ceiling = aenc::read_scores_csv(ceiling_csv);
  require_fresh(out_dir / "gap.csv", force);
  fs::create_directories(out_dir);
  const auto gap = aenc::ceiling_gap(feature, ceiling);
  aenc::write_scores_csv(out_dir / "gap.csv", gap, "value");
  write_runconfig(out_dir, "gap",
                  {{"feature", feature_csv.string()},
                   {"ceiling", ceiling_csv.string()},
                   {"force", force}},
                  {});
  std::cout << "gap: " << gap.size() << " cells\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aenc: multi-subject fMRI encoding toolkit"};
  app.require_subcommand(1);

  std::string manifest, config, out, movies, predict, mode = "split_half";
  std::string feature_csv, ceiling_csv, checkpoint, store;
  std::uint64_t seed_value = 0;
  bool seed_set = false, force = false;
  int workers = 1, k = 5;

  auto add_common = [&](CLI::App* cmd, bool with_out = true) {
    if (with_out) cmd->add_option("--out", out, "output directory")->required();
    cmd->add_flag("--force", force, "overwrite existing outputs");
    cmd->add_option("--seed", seed_value, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
  };

  auto* validate = app.add_subcommand("validate", "check a manifest and its tensors");
  validate->add_option("--manifest", manifest)->required();
  validate->add_option("--out", out, "optional report directory");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", config)->required();
  add_common(synth);

  auto* train = app.add_subcommand("train", "train one encoding model");
  train->add_option("--manifest", manifest)->required();
  train->add_option("--config", config)->required();
  add_common(train);

  auto* score = app.add_subcommand("score", "score a checkpoint on movies");
  score->add_option("--manifest", manifest)->required();
  score->add_option("--checkpoint", checkpoint)->required();
  score->add_option("--movies", movies, "comma-separated movie labels")->required();
  add_common(score);

  auto* sweep = app.add_subcommand("sweep", "random hyperparameter sweep");
  sweep->add_option("--manifest", manifest)->required();
  sweep->add_option("--config", config)->required();
  sweep->add_option("--workers", workers, "parallel training workers");
  add_common(sweep);

  auto* ensemble = app.add_subcommand("ensemble", "parcel-wise top-k ensemble");
  ensemble->add_option("--manifest", manifest)->required();
  ensemble->add_option("--store", store, "sweep record store")->required();
  ensemble->add_option("--k", k, "ensemble size per parcel");
  ensemble->add_option("--movies", movies, "ranking (validation) movies");
  ensemble->add_option("--predict", predict, "movies to predict")->required();
  add_common(ensemble);

  auto* ceiling = app.add_subcommand("ceiling", "performance-ceiling estimators");
  ceiling->add_option("--manifest", manifest)->required();
  ceiling->add_option("--mode", mode, "split_half or cross");
  ceiling->add_option("--config", config, "cross-subject config (cross mode)");
  add_common(ceiling);

  auto* gap = app.add_subcommand("gap", "ceiling minus feature scores");
  gap->add_option("--feature", feature_csv)->required();
  gap->add_option("--ceiling", ceiling_csv)->required();
  add_common(gap);

  CLI11_PARSE(app, argc, argv);

  try {
    std::optional<std::uint64_t> seed;
    if (seed_set) seed = seed_value;
    if (validate->parsed())
      return cmd_validate(manifest, out.empty()
                                        ? std::nullopt
                                        : std::optional<fs::path>(out));
    if (synth->parsed()) return cmd_synth(config, out, seed, force);
    if (train->parsed()) return cmd_train(manifest, config, out, seed, force);
    if (score->parsed()) return cmd_score(manifest, checkpoint, movies, out, force);
    if (sweep->parsed()) return cmd_sweep(manifest, config, out, workers, seed, force);
    if (ensemble->parsed())
      return cmd_ensemble(manifest, store, k, movies, predict, out, force);
    if (ceiling->parsed())
      return cmd_ceiling(manifest, mode,
                         config.empty() ? std::nullopt
                                        : std::optional<fs::path>(config),
                         out, seed, force);
    if (gap->parsed()) return cmd_gap(feature_csv, ceiling_csv, out, force);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
