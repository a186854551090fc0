// drivex: data generation, training, evaluation and visualization.
//
// Exit codes: 0 success, 2 configuration or validation error, 3 runtime or
// data error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "drivex/checkpoint.hpp"
#include "drivex/metrics.hpp"
#include "drivex/scene_data.hpp"
#include "drivex/training.hpp"
#include "drivex/visualize.hpp"
#include "json.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace drivex;
using cli::ConfigError;
using cli::RunConfig;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_file, "JSON config file (same layout as the echoed config.json)");
  cmd->add_option("--set", o.overrides, "Dotted-key override, e.g. --set train.lr=0.001")->take_all();
  cmd->add_flag("--force", o.force, "Replace a non-empty output directory");
}

void apply_user(RunConfig& rc, const CommonOptions& o) {
  if (!o.config_file.empty()) rc.merge_file(o.config_file);
  for (const auto& s : o.overrides) rc.apply_override(s);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

/// Creates `dir`, refusing a non-empty one unless forced (then it is cleared).
void prepare_output_dir(const fs::path& dir, bool force) {
  if (dir.empty()) throw ConfigError("an output directory is required (--out)");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ConfigError(dir.string() + " is not empty; pass --force to replace it");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

json scene_json(const scene::SceneSpec& s) {
  return {{"height", s.height},
          {"width", s.width},
          {"frames", s.frames},
          {"patch_size", s.patch_size},
          {"crop_size", s.crop_size},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"jitter_sigma", s.jitter_sigma},
          {"false_positive_rate", s.false_positive_rate},
          {"max_false_positives", s.max_false_positives},
          {"drop_rate", s.drop_rate},
          {"drop_significant", s.drop_significant},
          {"min_speed", s.min_speed},
          {"max_speed", s.max_speed},
          {"significance_margin", s.significance_margin},
          {"seed", s.seed}};
}

scene::SceneSpec scene_from_json(const json& j) {
  scene::SceneSpec s;
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.frames = j.at("frames").get<int>();
  s.patch_size = j.at("patch_size").get<int>();
  s.crop_size = j.at("crop_size").get<int>();
  s.min_objects = j.at("min_objects").get<int>();
  s.max_objects = j.at("max_objects").get<int>();
  s.jitter_sigma = j.at("jitter_sigma").get<double>();
  s.false_positive_rate = j.at("false_positive_rate").get<double>();
  s.max_false_positives = j.at("max_false_positives").get<int>();
  s.drop_rate = j.at("drop_rate").get<double>();
  s.drop_significant = j.at("drop_significant").get<bool>();
  s.min_speed = j.at("min_speed").get<double>();
  s.max_speed = j.at("max_speed").get<double>();
  s.significance_margin = j.at("significance_margin").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

struct GenDataArgs {
  CommonOptions common;
  std::string out;
  std::optional<int> clips;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenDataArgs& a) {
  RunConfig rc(json{{"clips", 2000}, {"scene", scene_json(scene::SceneSpec{})}});
  apply_user(rc, a.common);
  if (a.clips) rc.set("clips", *a.clips);
  if (a.seed) rc.set("scene.seed", *a.seed);
  const int clips = rc.at("clips").get<int>();
  if (clips <= 0) throw ConfigError("clips must be positive");
  const scene::SceneSpec spec = scene_from_json(rc.at("scene"));
  scene::validate(spec);
  prepare_output_dir(a.out, a.common.force);

  const auto corpus = scene::generate_corpus(spec, clips);
  scene::save_dataset(corpus, scene::info_from_spec(spec), a.out);
  write_json(fs::path(a.out) / "config.json", rc.resolved());

  std::map<std::string, int> counts;
  for (const auto& c : corpus) counts[std::string(scene::label_of(c.gt_action))] += 1;
  std::printf("wrote %d clips to %s\n", clips, a.out.c_str());
  for (auto label : scene::kActionLabels) {
    const int n = counts[std::string(label)];
    std::printf("  %-10s %6d  %.4f\n", std::string(label).c_str(), n, static_cast<double>(n) / clips);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train-gen / train-vlm
// ---------------------------------------------------------------------------

struct TrainArgs {
  CommonOptions common;
  std::string out;
  std::string dataset;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::string attention;
  std::string generator;
  bool timing = false;
};

void log_epoch(const training::EpochRecord& r, double seconds) {
  std::fprintf(stderr, "epoch %4d  lr %.2e  train %.5f  val %.5f", r.epoch, r.lr, r.train_loss, r.val_loss);
  for (const auto& [k, v] : r.metrics.items()) {
    if (v.is_number()) std::fprintf(stderr, "  %s %.4f", k.c_str(), v.get<double>());
  }
  std::fprintf(stderr, "  (%.1fs)\n", seconds);
}

/// Shared flag handling; returns the resolved output directory.
fs::path resolve_train(RunConfig& rc, const TrainArgs& a) {
  apply_user(rc, a.common);
  if (!a.dataset.empty()) rc.set("train.dataset_dir", a.dataset);
  if (!a.out.empty()) rc.set("train.checkpoint_dir", a.out);
  if (a.seed) rc.set("train.seed", *a.seed);
  if (a.epochs) rc.set("train.epochs", *a.epochs);
  if (a.lr) rc.set("train.lr", *a.lr);
  if (!a.attention.empty()) rc.set("train.attention", a.attention);
  if (!a.generator.empty()) rc.set("train.generator_checkpoint", a.generator);
  if (!rc.user_set("model.init_seed")) rc.set_default("model.init_seed", rc.at("train.seed"));
  if (rc.at("train.dataset_dir").get<std::string>().empty()) throw ConfigError("a dataset is required (--dataset)");
  return rc.at("train.checkpoint_dir").get<std::string>();
}

/// Copies frame geometry from the dataset unless the user pinned a value,
/// in which case it must agree.
void bind_dataset_geometry(RunConfig& rc, const std::map<std::string, int>& values) {
  for (const auto& [key, v] : values) {
    if (rc.user_set(key) && rc.at(key).get<int>() != v) {
      throw ConfigError(key + " = " + rc.at(key).dump() + " does not match the dataset (" + std::to_string(v) + ")");
    }
    rc.set_default(key, v);
  }
}

int cmd_train_gen(const TrainArgs& a) {
  const auto defaults = training::TrainConfig::generator_defaults();
  RunConfig rc(json{{"model", checkpoint::to_json(generator::GeneratorConfig{})}, {"train", training::to_json(defaults)}});
  const fs::path out = resolve_train(rc, a);
  const auto data = scene::load_dataset(rc.at("train.dataset_dir").get<std::string>());
  bind_dataset_geometry(rc, {{"model.frame_height", data.info.height},
                             {"model.frame_width", data.info.width},
                             {"model.crop_size", data.info.crop_size}});
  const auto train_cfg = training::train_config_from_json(rc.at("train"));
  const auto model_cfg = checkpoint::generator_config_from_json(rc.at("model"));
  training::validate(train_cfg);
  prepare_output_dir(out, a.common.force);

  const auto run = training::train_generator(train_cfg, model_cfg, data.clips, log_epoch);
  training::save_generator_run(out, run, train_cfg, a.timing);
  const auto& best = run.history.epochs.empty() ? training::EpochRecord{} : run.history.epochs[static_cast<size_t>(std::max(0, run.history.best_epoch))];
  std::printf("best epoch %d  val top1 %.4f  top3 %.4f\n", run.history.best_epoch,
              best.metrics.value("top1", 0.0), best.metrics.value("top3", 0.0));
  return 0;
}

int cmd_train_vlm(const TrainArgs& a) {
  const auto defaults = training::TrainConfig::vlm_defaults();
  RunConfig rc(json{{"model", checkpoint::to_json(vlm::VlmConfig{})}, {"train", training::to_json(defaults)}});
  const fs::path out = resolve_train(rc, a);
  const auto data = scene::load_dataset(rc.at("train.dataset_dir").get<std::string>());
  bind_dataset_geometry(rc, {{"model.frame_height", data.info.height},
                             {"model.frame_width", data.info.width},
                             {"model.patch_size", data.info.patch_size},
                             {"model.frames", data.info.frames}});
  const auto train_cfg = training::train_config_from_json(rc.at("train"));
  const auto model_cfg = checkpoint::vlm_config_from_json(rc.at("model"));
  training::validate(train_cfg);
  vlm::validate(model_cfg);
  const auto provider =
      training::make_attention_provider(train_cfg.attention, model_cfg.patch_size, train_cfg.generator_checkpoint);
  prepare_output_dir(out, a.common.force);

  const auto run = training::train_vlm(train_cfg, model_cfg, data.clips, *provider, log_epoch);
  training::save_vlm_run(out, run, train_cfg, a.timing);
  std::printf("best epoch %d  val loss %.5f\n", run.history.best_epoch, run.history.best_value);
  return 0;
}

// ---------------------------------------------------------------------------
// eval / score
// ---------------------------------------------------------------------------

struct EvalArgs {
  CommonOptions common;
  std::string out;
  std::string checkpoint;
  std::string dataset;
  std::string generator;
  std::string split;
  bool self_check = false;
};

std::vector<size_t> split_indices(std::span<const scene::LabeledClip> clips, const std::string& which) {
  const auto s = training::split_clips(clips);
  if (which == "validation") return s.validation;
  if (which == "train") return s.train;
  if (which == "all") {
    std::vector<size_t> all(clips.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  throw ConfigError("split must be validation, train or all, got '" + which + "'");
}

fs::path require_checkpoint(const std::string& path) {
  if (path.empty()) throw ConfigError("a VLM checkpoint is required (--checkpoint)");
  if (!fs::exists(fs::path(path) / "manifest.json")) throw std::runtime_error("no checkpoint at " + path);
  return path;
}

int cmd_eval(const EvalArgs& a) {
  RunConfig rc(json{{"checkpoint", ""}, {"dataset", ""}, {"generator", ""}, {"split", "validation"}, {"self_check", false}});
  apply_user(rc, a.common);
  if (!a.checkpoint.empty()) rc.set("checkpoint", a.checkpoint);
  if (!a.dataset.empty()) rc.set("dataset", a.dataset);
  if (!a.generator.empty()) rc.set("generator", a.generator);
  if (!a.split.empty()) rc.set("split", a.split);
  if (a.self_check) rc.set("self_check", true);

  const fs::path ckpt = require_checkpoint(rc.at("checkpoint").get<std::string>());
  const auto manifest = checkpoint::read_manifest(ckpt);
  if (manifest.model != "mini_vlm") throw ConfigError(ckpt.string() + " is not a mini_vlm checkpoint");
  const auto train_cfg = training::train_config_from_json(manifest.config.at("train"));
  if (rc.at("dataset").get<std::string>().empty()) rc.set_default("dataset", train_cfg.dataset_dir.string());
  std::string gen = rc.at("generator").get<std::string>();
  if (gen.empty() && train_cfg.attention == training::AttentionSource::predicted_patch) {
    gen = train_cfg.generator_checkpoint.string();
    rc.set_default("generator", gen);
  }
  const auto data = scene::load_dataset(rc.at("dataset").get<std::string>());
  const auto indices = split_indices(data.clips, rc.at("split").get<std::string>());
  if (indices.empty()) throw std::runtime_error("the selected split is empty");
  const bool self_check = rc.at("self_check").get<bool>();
  prepare_output_dir(a.out, a.common.force);

  const auto model = checkpoint::load_vlm(ckpt);
  const auto provider = training::make_attention_provider(train_cfg.attention, model.config().patch_size, gen);
  std::vector<metrics::EvalRecord> records;
  if (self_check) {
    for (size_t i : indices) {
      const auto& c = data.clips[i];
      records.push_back({c.clip_id, c.gt_explanation, c.gt_explanation, training::to_string(train_cfg.attention)});
    }
  } else {
    records = training::generate_records(model, data.clips, indices, *provider);
  }
  std::vector<metrics::TopkCase> cases;
  if (!gen.empty()) {
    const auto g = checkpoint::load_generator(gen);
    std::vector<generator::GeneratorSample> samples;
    for (size_t i : indices) samples.push_back(generator::make_generator_sample(data.clips[i], g.config()));
    cases = training::evaluate_generator(g, samples).cases;
  }
  const auto report = metrics::evaluate(records, cases);
  json j = metrics::to_json(report);
  j["attention_source"] = training::to_string(train_cfg.attention);
  j["split"] = rc.at("split");
  j["self_check"] = self_check;
  j["loss"] = self_check ? json(nullptr) : json(training::vlm_loss(model, data.clips, indices, *provider));
  j["best_epoch"] = manifest.epoch;
  write_json(fs::path(a.out) / "report.json", j);
  metrics::write_jsonl(fs::path(a.out) / "generations.jsonl", records);
  write_json(fs::path(a.out) / "config.json", rc.resolved());
  std::printf("%s\n", j["scores"].dump().c_str());
  return 0;
}

struct ScoreArgs {
  CommonOptions common;
  std::string out;
  std::string generations;
};

int cmd_score(const ScoreArgs& a) {
  RunConfig rc(json{{"generations", ""}});
  apply_user(rc, a.common);
  if (!a.generations.empty()) rc.set("generations", a.generations);
  const std::string path = rc.at("generations").get<std::string>();
  if (path.empty()) throw ConfigError("a generations file is required (--generations)");
  const auto records = metrics::read_jsonl(path);
  prepare_output_dir(a.out, a.common.force);
  const json j = metrics::to_json(metrics::evaluate(records));
  write_json(fs::path(a.out) / "report.json", j);
  write_json(fs::path(a.out) / "config.json", rc.resolved());
  std::printf("%s\n", j["scores"].dump().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// visualize
// ---------------------------------------------------------------------------

struct VisualizeArgs {
  CommonOptions common;
  std::string out;
  std::string checkpoint;
  std::string dataset;
  std::string clip;
  std::string generator;
};

int cmd_visualize(const VisualizeArgs& a) {
  RunConfig rc(json{{"checkpoint", ""}, {"dataset", ""}, {"clip", ""}, {"generator", ""}, {"scale", 4}});
  apply_user(rc, a.common);
  if (!a.checkpoint.empty()) rc.set("checkpoint", a.checkpoint);
  if (!a.dataset.empty()) rc.set("dataset", a.dataset);
  if (!a.clip.empty()) rc.set("clip", a.clip);
  if (!a.generator.empty()) rc.set("generator", a.generator);
  if (a.out.empty()) throw ConfigError("an output PNG path is required (--out)");
  const std::string clip_id = rc.at("clip").get<std::string>();
  if (clip_id.empty()) throw ConfigError("a clip id is required (--clip)");
  const int scale = rc.at("scale").get<int>();
  if (scale <= 0) throw ConfigError("scale must be positive");

  const fs::path ckpt = require_checkpoint(rc.at("checkpoint").get<std::string>());
  const auto manifest = checkpoint::read_manifest(ckpt);
  const auto train_cfg = training::train_config_from_json(manifest.config.at("train"));
  if (rc.at("dataset").get<std::string>().empty()) rc.set_default("dataset", train_cfg.dataset_dir.string());
  std::string gen = rc.at("generator").get<std::string>();
  if (gen.empty() && train_cfg.attention == training::AttentionSource::predicted_patch) {
    gen = train_cfg.generator_checkpoint.string();
    rc.set_default("generator", gen);
  }
  const auto data = scene::load_dataset(rc.at("dataset").get<std::string>());
  size_t index = data.clips.size();
  for (size_t i = 0; i < data.clips.size(); ++i) {
    if (data.clips[i].clip_id == clip_id) index = i;
  }
  if (index == data.clips.size()) throw ConfigError("unknown clip '" + clip_id + "'");
  const auto& clip = data.clips[index];

  const auto model = checkpoint::load_vlm(ckpt);
  const auto provider = training::make_attention_provider(train_cfg.attention, model.config().patch_size, gen);
  visualize::OverlaySpec spec;
  spec.scale = scale;
  spec.map = provider->map_for(clip);
  if (!gen.empty()) {
    const auto g = std::make_shared<generator::AttentionGenerator<float>>(checkpoint::load_generator(gen));
    const training::PredictedPatchAttention predicted(g, model.config().patch_size);
    const auto a_sig = predicted.a_sig(clip);
    for (int i : predicted.selected(clip)) {
      spec.boxes.push_back(clip.detections.at(static_cast<size_t>(i)).box);
      spec.box_strength.push_back(a_sig.at(static_cast<size_t>(i)));
    }
  } else if (train_cfg.attention == training::AttentionSource::oracle_object) {
    spec.boxes.push_back(clip.gt_box);
  }
  const size_t one[] = {index};
  spec.generated = training::generate_records(model, data.clips, one, *provider).front().candidate;
  spec.reference = clip.gt_explanation;

  const fs::path out = a.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (fs::exists(out) && !a.common.force) throw ConfigError(out.string() + " exists; pass --force to replace it");
  visualize::write_overlay(out, clip.keyframe().image, spec);
  fs::path cfg = out;
  cfg.replace_extension(".config.json");
  write_json(cfg, rc.resolved());
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"drivex: attention-guided driving explanations on a synthetic corpus"};
  app.require_subcommand(1);

  GenDataArgs gen_data;
  auto* gd = app.add_subcommand("gen-data", "Generate a synthetic clip corpus");
  add_common(gd, gen_data.common);
  gd->add_option("--out", gen_data.out, "Dataset directory")->required();
  gd->add_option("--clips", gen_data.clips, "Number of clips");
  gd->add_option("--seed", gen_data.seed, "Scene seed");

  TrainArgs train_gen, train_vlm;
  auto add_train = [](CLI::App* cmd, TrainArgs& t) {
    add_common(cmd, t.common);
    cmd->add_option("--dataset", t.dataset, "Dataset directory");
    cmd->add_option("--out", t.out, "Checkpoint directory");
    cmd->add_option("--seed", t.seed, "Training seed (also the init seed unless model.init_seed is set)");
    cmd->add_option("--epochs", t.epochs, "Epoch cap");
    cmd->add_option("--lr", t.lr, "Base learning rate");
    cmd->add_flag("--timing", t.timing, "Also write timing.json (wall-clock, not reproducible)");
  };
  auto* tg = app.add_subcommand("train-gen", "Train the attention generator");
  add_train(tg, train_gen);
  auto* tv = app.add_subcommand("train-vlm", "Train the mini VLM");
  add_train(tv, train_vlm);
  tv->add_option("--attention", train_vlm.attention, "none | oracle-object | predicted-patch");
  tv->add_option("--generator", train_vlm.generator, "Generator checkpoint (predicted-patch)");

  EvalArgs eval;
  auto* ev = app.add_subcommand("eval", "Generate and score explanations for a split");
  add_common(ev, eval.common);
  ev->add_option("--checkpoint", eval.checkpoint, "VLM checkpoint");
  ev->add_option("--dataset", eval.dataset, "Dataset directory (default: the one it was trained on)");
  ev->add_option("--generator", eval.generator, "Generator checkpoint for top-k accuracy");
  ev->add_option("--split", eval.split, "validation | train | all");
  ev->add_flag("--self-check", eval.self_check, "Score references against themselves");
  ev->add_option("--out", eval.out, "Output directory")->required();

  ScoreArgs score;
  auto* sc = app.add_subcommand("score", "Score an existing generations.jsonl");
  add_common(sc, score.common);
  sc->add_option("--generations", score.generations, "JSON-lines file");
  sc->add_option("--out", score.out, "Output directory")->required();

  VisualizeArgs vis;
  auto* vz = app.add_subcommand("visualize", "Render a keyframe attention overlay");
  add_common(vz, vis.common);
  vz->add_option("--checkpoint", vis.checkpoint, "VLM checkpoint");
  vz->add_option("--dataset", vis.dataset, "Dataset directory (default: the one it was trained on)");
  vz->add_option("--clip", vis.clip, "Clip id");
  vz->add_option("--generator", vis.generator, "Generator checkpoint for box strengths");
  vz->add_option("--out", vis.out, "Output PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gd) return cmd_gen_data(gen_data);
    if (*tg) return cmd_train_gen(train_gen);
    if (*tv) return cmd_train_vlm(train_vlm);
    if (*ev) return cmd_eval(eval);
    if (*sc) return cmd_score(score);
    if (*vz) return cmd_visualize(vis);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitConfig;
}
