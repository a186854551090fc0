#include "drivex/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace drivex::training {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Matrix;
using nn::Var;

double lr_schedule(double base_lr, int epoch, int step_size, double gamma) {
  if (epoch < 0) throw std::invalid_argument("lr_schedule: negative epoch");
  if (step_size <= 0) throw std::invalid_argument("lr_schedule: step size must be positive");
  double lr = base_lr;
  for (int k = 0; k < epoch / step_size; ++k) lr *= gamma;
  // Round to 15 significant digits so decimal schedules land on their
  // decimal values (1e-4 * 0.1 * 0.1 is one ulp above 1e-6 otherwise).
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, lr, std::chars_format::general, 15).ptr;
  std::from_chars(buf, end, lr);
  return lr;
}

std::string to_string(AttentionSource s) {
  switch (s) {
    case AttentionSource::none:
      return "none";
    case AttentionSource::oracle_object:
      return "oracle-object";
    case AttentionSource::predicted_patch:
      return "predicted-patch";
  }
  return "none";
}

AttentionSource parse_attention_source(const std::string& text) {
  if (text == "none") return AttentionSource::none;
  if (text == "oracle-object") return AttentionSource::oracle_object;
  if (text == "predicted-patch") return AttentionSource::predicted_patch;
  throw std::invalid_argument("attention source must be none, oracle-object or predicted-patch, got '" + text + "'");
}

TrainConfig TrainConfig::generator_defaults() {
  TrainConfig c;
  c.batch_size = 16;
  c.patience = 20;
  return c;
}

TrainConfig TrainConfig::vlm_defaults() { return TrainConfig{}; }

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) fail("lr must be positive");
  if (c.batch_size <= 0) fail("batch_size must be positive");
  if (c.epochs < 0) fail("epochs must be non-negative");
  if (c.step_size <= 0) fail("step_size must be positive");
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) fail("gamma must lie in (0, 1]");
  if (c.patience <= 0) fail("patience must be positive");
  if (c.warm_epochs < 0) fail("warm_epochs must be non-negative");
  if (!(c.p_mask >= 0.0 && c.p_mask <= 1.0)) fail("p_mask must lie in [0, 1]");
  if (c.metrics_every < 0) fail("metrics_every must be non-negative");
}

json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"step_size", c.step_size},
          {"gamma", c.gamma},
          {"seed", c.seed},
          {"attention", to_string(c.attention)},
          {"patience", c.patience},
          {"warm_epochs", c.warm_epochs},
          {"p_mask", c.p_mask},
          {"metrics_every", c.metrics_every},
          {"dataset_dir", c.dataset_dir.string()},
          {"checkpoint_dir", c.checkpoint_dir.string()},
          {"generator_checkpoint", c.generator_checkpoint.string()}};
}

TrainConfig train_config_from_json(const json& j) {
  try {
    TrainConfig c;
    c.lr = j.at("lr").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.step_size = j.at("step_size").get<int>();
    c.gamma = j.at("gamma").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.attention = parse_attention_source(j.at("attention").get<std::string>());
    c.patience = j.at("patience").get<int>();
    c.warm_epochs = j.at("warm_epochs").get<int>();
    c.p_mask = j.at("p_mask").get<double>();
    c.metrics_every = j.at("metrics_every").get<int>();
    c.dataset_dir = j.at("dataset_dir").get<std::string>();
    c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
    c.generator_checkpoint = j.at("generator_checkpoint").get<std::string>();
    return c;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
}

json to_json(const TrainHistory& h) {
  json epochs = json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"encoder_frozen", e.encoder_frozen},
                      {"metrics", e.metrics}});
  }
  return {{"model", h.model},
          {"monitor", h.monitor},
          {"maximize", h.maximize},
          {"best_epoch", h.best_epoch},
          {"best_value", h.best_value},
          {"early_stopped", h.early_stopped},
          {"optimizer_steps", h.optimizer_steps},
          {"epochs", std::move(epochs)}};
}

json timing_json(const TrainHistory& h) {
  double total = 0.0;
  for (double s : h.epoch_seconds) total += s;
  return {{"epoch_seconds", h.epoch_seconds}, {"total_seconds", total}};
}

bool is_validation(const std::string& clip_id) { return scene::fnv1a(clip_id) % 10 == 0; }

Split split_clips(std::span<const scene::LabeledClip> clips) {
  Split s;
  for (size_t i = 0; i < clips.size(); ++i) {
    (is_validation(clips[i].clip_id) ? s.validation : s.train).push_back(i);
  }
  return s;
}

std::optional<geometry::PatchAttentionMap> OracleObjectAttention::map_for(const scene::LabeledClip& clip) const {
  const Image& key = clip.keyframe().image;
  const geometry::Box boxes[] = {clip.gt_box};
  return geometry::project_to_patch_map(boxes, key.height, key.width, patch_size_);
}

PredictedPatchAttention::PredictedPatchAttention(std::shared_ptr<const generator::AttentionGenerator<float>> model,
                                                 int patch_size, generator::SelectionPolicy policy)
    : model_(std::move(model)), patch_size_(patch_size), policy_(policy) {
  if (!model_) throw std::invalid_argument("predicted-patch attention needs a generator");
}

std::vector<double> PredictedPatchAttention::a_sig(const scene::LabeledClip& clip) const {
  const auto& cfg = model_->config();
  const auto features =
      generator::build_object_features(clip.detections, cfg.frame_height, cfg.frame_width, cfg.n_max, cfg.crop_size);
  nn::NoGradGuard no_grad;
  return model_->score(features).a_sig;
}

std::vector<int> PredictedPatchAttention::selected(const scene::LabeledClip& clip) const {
  return generator::select_significant(a_sig(clip), policy_);
}

std::optional<geometry::PatchAttentionMap> PredictedPatchAttention::map_for(const scene::LabeledClip& clip) const {
  std::vector<geometry::Box> boxes;
  for (int i : selected(clip)) boxes.push_back(clip.detections.at(static_cast<size_t>(i)).box);
  const Image& key = clip.keyframe().image;
  return geometry::project_to_patch_map(boxes, key.height, key.width, patch_size_);
}

std::unique_ptr<AttentionProvider> make_attention_provider(AttentionSource source, int patch_size,
                                                           const fs::path& generator_checkpoint) {
  switch (source) {
    case AttentionSource::none:
      return std::make_unique<NoAttention>();
    case AttentionSource::oracle_object:
      return std::make_unique<OracleObjectAttention>(patch_size);
    case AttentionSource::predicted_patch: {
      if (generator_checkpoint.empty()) {
        throw std::invalid_argument("attention source predicted-patch requires a generator checkpoint");
      }
      auto model = std::make_shared<generator::AttentionGenerator<float>>(
          checkpoint::load_generator(generator_checkpoint));
      return std::make_unique<PredictedPatchAttention>(std::move(model), patch_size);
    }
  }
  throw std::invalid_argument("unknown attention source");
}

namespace {

using Clock = std::chrono::steady_clock;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

template <typename T>
std::vector<Matrix<T>> snapshot(const nn::ParamStore<T>& store) {
  std::vector<Matrix<T>> out;
  for (const auto& [name, v] : store.entries()) out.push_back(v.value());
  return out;
}

template <typename T>
void restore(nn::ParamStore<T>& store, const std::vector<Matrix<T>>& values) {
  for (size_t i = 0; i < values.size(); ++i) {
    Var<T> v = store.entries()[i].second;
    v.mutable_value() = values[i];
  }
}

bool improves(const TrainHistory& h, double value) {
  if (h.best_epoch < 0) return true;
  return h.maximize ? value > h.best_value : value < h.best_value;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

GeneratorEval evaluate_generator(const generator::AttentionGenerator<float>& model,
                                 std::span<const generator::GeneratorSample> samples) {
  nn::NoGradGuard no_grad;
  GeneratorEval ev;
  if (samples.empty()) return ev;
  ev.losses = generator::evaluate_losses(model, samples);
  for (const auto& s : samples) ev.cases.push_back({model.score(s.features).a_sig, s.gt_index});
  ev.top1 = metrics::topk_accuracy(ev.cases, 1);
  ev.top3 = metrics::topk_accuracy(ev.cases, 3);
  return ev;
}

GeneratorRun train_generator(const TrainConfig& config, const generator::GeneratorConfig& model_config,
                             std::span<const scene::LabeledClip> clips, const EpochCallback& on_epoch) {
  validate(config);
  const Split split = split_clips(clips);
  if (split.train.empty() || split.validation.empty()) {
    throw std::invalid_argument("train_generator: need clips in both the train and validation split");
  }
  std::vector<generator::GeneratorSample> train, val;
  for (size_t i : split.train) train.push_back(generator::make_generator_sample(clips[i], model_config));
  for (size_t i : split.validation) val.push_back(generator::make_generator_sample(clips[i], model_config));

  GeneratorRun run{generator::AttentionGenerator<float>(model_config), {}};
  run.history.model = "attention_generator";
  run.history.monitor = "val_top1";
  run.history.maximize = true;
  nn::Adam<float> adam(run.model.params());
  auto best = snapshot(run.model.params());
  std::mt19937_64 rng = make_rng(config.seed, 1);
  std::vector<size_t> order(train.size());
  int since_best = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const double lr = lr_schedule(config.lr, epoch, config.step_size, config.gamma);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    double train_loss = 0.0;
    std::vector<generator::GeneratorSample> batch;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      batch.clear();
      const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      for (size_t k = start; k < end; ++k) batch.push_back(train[order[k]]);
      const auto l = generator::generator_step(run.model, std::span<const generator::GeneratorSample>(batch), adam, lr);
      train_loss += l.total * static_cast<double>(batch.size());
      ++run.history.optimizer_steps;
    }
    train_loss /= static_cast<double>(train.size());
    const GeneratorEval ev = evaluate_generator(run.model, val);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = train_loss;
    rec.val_loss = ev.losses.total;
    rec.metrics = {{"top1", ev.top1}, {"top3", ev.top3}, {"val_iou_loss", ev.losses.iou}, {"val_ce_loss", ev.losses.ce}};
    run.history.epochs.push_back(rec);
    run.history.epoch_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    if (on_epoch) on_epoch(run.history.epochs.back(), run.history.epoch_seconds.back());
    if (improves(run.history, ev.top1)) {
      run.history.best_epoch = epoch;
      run.history.best_value = ev.top1;
      best = snapshot(run.model.params());
      since_best = 0;
    } else if (++since_best >= config.patience) {
      run.history.early_stopped = true;
      break;
    }
  }
  restore(run.model.params(), best);
  return run;
}

Var<float> clip_tokens(const vlm::MiniVlm<float>& model, const scene::LabeledClip& clip,
                       const std::optional<geometry::PatchAttentionMap>& map, vlm::MaskMode mode, double p_mask,
                       std::mt19937_64& rng) {
  std::vector<Var<float>> toks;
  for (const auto& f : clip.frames) toks.push_back(model.frame_tokens(f.image, map, mode, p_mask, rng));
  return vlm::concat_temporal(toks);
}

namespace {

/// Per-clip inputs prepared once per run, plus encoder outputs cached while
/// the encoder is frozen and the mask is deterministic.
class VlmData {
 public:
  VlmData(const vlm::MiniVlm<float>& model, std::span<const scene::LabeledClip> clips,
          const AttentionProvider& attention)
      : model_(model), clips_(clips) {
    for (const auto& c : clips) {
      if (static_cast<int>(c.frames.size()) > model.config().frames) {
        throw std::invalid_argument(c.clip_id + ": clip has more frames than the model supports");
      }
      maps_.push_back(attention.map_for(c));
      tokens_.push_back(model.vocabulary().encode(c.gt_explanation));
    }
    full_cache_.resize(clips.size());
    infer_cache_.resize(clips.size());
  }

  const std::vector<int>& tokens(size_t i) const { return tokens_[i]; }

  void set_caching(bool on) {
    caching_ = on;
    if (!on) {
      for (auto& c : full_cache_) c.clear();
      for (auto& c : infer_cache_) c.clear();
    }
  }

  Var<float> clip_tv(size_t i, vlm::MaskMode mode, double p_mask, std::mt19937_64& rng) {
    const auto& clip = clips_[i];
    const int P = model_.config().patch_count();
    std::vector<Var<float>> toks;
    for (size_t f = 0; f < clip.frames.size(); ++f) {
      const vlm::PatchMask mask = vlm::resolve_mask(maps_[i], P, mode, p_mask, rng);
      const Image& img = clip.frames[f].image;
      Var<float> enc;
      if (!caching_) {
        enc = mask.empty() ? model_.encode_frame(img) : model_.encode_visible(img, mask);
      } else if (mask.empty()) {
        enc = cached(full_cache_[i], f, clip, [&] { return model_.encode_frame(img); });
      } else if (mode == vlm::MaskMode::infer) {
        enc = cached(infer_cache_[i], f, clip, [&] { return model_.encode_visible(img, mask); });
      } else {
        nn::NoGradGuard no_grad;
        enc = Var<float>(model_.encode_visible(img, mask).value());
      }
      toks.push_back(mask.empty() ? model_.qformer_extract(enc) : model_.qformer_visible(enc));
    }
    return vlm::concat_temporal(toks);
  }

 private:
  template <typename F>
  Var<float> cached(std::vector<Matrix<float>>& slot, size_t f, const scene::LabeledClip& clip, F&& compute) {
    if (slot.empty()) slot.resize(clip.frames.size());
    if (slot[f].size() == 0) {
      nn::NoGradGuard no_grad;
      slot[f] = compute().value();
    }
    return Var<float>(slot[f]);
  }

  const vlm::MiniVlm<float>& model_;
  std::span<const scene::LabeledClip> clips_;
  std::vector<std::optional<geometry::PatchAttentionMap>> maps_;
  std::vector<std::vector<int>> tokens_;
  std::vector<std::vector<Matrix<float>>> full_cache_;
  std::vector<std::vector<Matrix<float>>> infer_cache_;
  bool caching_ = false;
};

double mean_loss(const vlm::MiniVlm<float>& model, VlmData& data, std::span<const size_t> indices) {
  nn::NoGradGuard no_grad;
  std::mt19937_64 unused(0);
  double total = 0.0;
  for (size_t i : indices) {
    total += model.decode_loss(data.clip_tv(i, vlm::MaskMode::infer, 0.0, unused), data.tokens(i)).scalar();
  }
  return indices.empty() ? 0.0 : total / static_cast<double>(indices.size());
}

std::vector<metrics::EvalRecord> generate_with(const vlm::MiniVlm<float>& model, VlmData& data,
                                               std::span<const scene::LabeledClip> clips,
                                               std::span<const size_t> indices, AttentionSource source) {
  nn::NoGradGuard no_grad;
  std::mt19937_64 unused(0);
  std::vector<metrics::EvalRecord> out;
  for (size_t i : indices) {
    metrics::EvalRecord r;
    r.clip_id = clips[i].clip_id;
    r.candidate = model.generate_text(data.clip_tv(i, vlm::MaskMode::infer, 0.0, unused));
    r.reference = clips[i].gt_explanation;
    r.attention_source = to_string(source);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

VlmRun train_vlm(const TrainConfig& config, const vlm::VlmConfig& model_config,
                 std::span<const scene::LabeledClip> clips, const AttentionProvider& attention,
                 const EpochCallback& on_epoch) {
  validate(config);
  if (attention.source() != config.attention) {
    throw std::invalid_argument("attention provider is " + to_string(attention.source()) + " but the config asks for " +
                                to_string(config.attention));
  }
  const Split split = split_clips(clips);
  if (split.train.empty() || split.validation.empty()) {
    throw std::invalid_argument("train_vlm: need clips in both the train and validation split");
  }
  VlmRun run{vlm::MiniVlm<float>(model_config), {}};
  run.history.model = "mini_vlm";
  run.history.monitor = "val_loss";
  run.history.maximize = false;
  VlmData data(run.model, clips, attention);
  nn::Adam<float> adam(run.model.params());
  auto best = snapshot(run.model.params());
  std::mt19937_64 rng = make_rng(config.seed, 2);
  std::vector<size_t> order = split.train;
  int since_best = 0;
  bool frozen = false;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    if (!frozen && epoch >= config.warm_epochs) {
      run.model.set_encoder_trainable(false);
      data.set_caching(true);
      frozen = true;
    }
    const double lr = lr_schedule(config.lr, epoch, config.step_size, config.gamma);
    std::shuffle(order.begin(), order.end(), rng);
    double train_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      run.model.params().zero_grad();
      double batch_loss = 0.0;
      for (size_t k = start; k < end; ++k) {
        const size_t i = order[k];
        const Var<float> loss =
            run.model.decode_loss(data.clip_tv(i, vlm::MaskMode::train, config.p_mask, rng), data.tokens(i));
        batch_loss += loss.scalar();
        nn::backward(loss);
      }
      if (!std::isfinite(batch_loss)) {
        std::string ids;
        for (size_t k = start; k < end; ++k) ids += (ids.empty() ? "" : ",") + clips[order[k]].clip_id;
        throw std::runtime_error("train_vlm: non-finite loss in batch [" + ids + "]");
      }
      adam.step(run.model.params(), lr, 1.0 / static_cast<double>(end - start));
      ++run.history.optimizer_steps;
      train_loss += batch_loss;
    }
    train_loss /= static_cast<double>(order.size());

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = train_loss;
    rec.val_loss = mean_loss(run.model, data, split.validation);
    rec.encoder_frozen = frozen;
    if (config.metrics_every > 0 && (epoch + 1) % config.metrics_every == 0) {
      const auto recs = generate_with(run.model, data, clips, split.validation, config.attention);
      const auto rep = metrics::evaluate(recs);
      rec.metrics = {{"bleu4", rep.bleu4},
                     {"rouge_l", rep.rouge_l},
                     {"cider", rep.cider},
                     {"spice_slot", rep.spice_slot},
                     {"parse_rate", rep.parse_rate}};
    }
    run.history.epochs.push_back(rec);
    run.history.epoch_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    if (on_epoch) on_epoch(run.history.epochs.back(), run.history.epoch_seconds.back());
    if (improves(run.history, rec.val_loss)) {
      run.history.best_epoch = epoch;
      run.history.best_value = rec.val_loss;
      best = snapshot(run.model.params());
      since_best = 0;
    } else if (++since_best >= config.patience) {
      run.history.early_stopped = true;
      break;
    }
  }
  restore(run.model.params(), best);
  run.model.set_encoder_trainable(true);
  return run;
}

double vlm_loss(const vlm::MiniVlm<float>& model, std::span<const scene::LabeledClip> clips,
                std::span<const size_t> indices, const AttentionProvider& attention) {
  VlmData data(model, clips, attention);
  return mean_loss(model, data, indices);
}

std::vector<metrics::EvalRecord> generate_records(const vlm::MiniVlm<float>& model,
                                                  std::span<const scene::LabeledClip> clips,
                                                  std::span<const size_t> indices,
                                                  const AttentionProvider& attention) {
  VlmData data(model, clips, attention);
  return generate_with(model, data, clips, indices, attention.source());
}

void save_generator_run(const fs::path& dir, const GeneratorRun& run, const TrainConfig& config, bool write_timing) {
  checkpoint::Manifest man;
  man.model = "attention_generator";
  man.config = {{"model", checkpoint::to_json(run.model.config())}, {"train", to_json(config)}};
  man.init_seed = run.model.config().init_seed;
  man.train_seed = config.seed;
  man.epoch = run.history.best_epoch;
  man.step = run.history.optimizer_steps;
  checkpoint::save(dir, run.model.params(), man);
  write_json(dir / "history.json", to_json(run.history));
  if (write_timing) write_json(dir / "timing.json", timing_json(run.history));
  write_json(dir / "config.json", man.config);
}

void save_vlm_run(const fs::path& dir, const VlmRun& run, const TrainConfig& config, bool write_timing) {
  checkpoint::Manifest man;
  man.model = "mini_vlm";
  man.config = {{"model", checkpoint::to_json(run.model.config())}, {"train", to_json(config)}};
  man.init_seed = run.model.config().init_seed;
  man.train_seed = config.seed;
  man.epoch = run.history.best_epoch;
  man.step = run.history.optimizer_steps;
  checkpoint::save(dir, run.model.params(), man);
  write_json(dir / "history.json", to_json(run.history));
  if (write_timing) write_json(dir / "timing.json", timing_json(run.history));
  write_json(dir / "config.json", man.config);
}

}  // namespace drivex::training
