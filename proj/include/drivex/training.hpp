#pragma once

// Training loops and experiment plumbing for the attention generator and
// the mini VLM.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drivex/attn_generator.hpp"
#include "drivex/checkpoint.hpp"
#include "drivex/metrics.hpp"
#include "drivex/mini_vlm.hpp"
#include "drivex/scene_data.hpp"
#include "json.hpp"

namespace drivex::training {

/// base_lr * gamma^floor(epoch / step_size), rounded to 15 significant digits.
double lr_schedule(double base_lr, int epoch, int step_size, double gamma);

enum class AttentionSource { none, oracle_object, predicted_patch };

std::string to_string(AttentionSource source);
/// Accepts "none", "oracle-object" and "predicted-patch".
AttentionSource parse_attention_source(const std::string& text);

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 32;
  int epochs = 500;
  int step_size = 50;
  double gamma = 0.1;
  std::uint64_t seed = 0;
  AttentionSource attention = AttentionSource::none;
  /// Early stopping: epochs without improvement of the monitored value.
  int patience = 25;
  /// VLM only: epochs during which the patch projection and encoder train.
  int warm_epochs = 20;
  double p_mask = 0.75;
  /// VLM only: compute validation caption metrics every n epochs (0 = never).
  int metrics_every = 0;
  std::filesystem::path dataset_dir;
  std::filesystem::path checkpoint_dir;
  std::filesystem::path generator_checkpoint;

  static TrainConfig generator_defaults();
  static TrainConfig vlm_defaults();
};

/// Throws std::invalid_argument on non-positive lr, batch, step size,
/// patience, negative epochs, or gamma / p_mask outside their ranges.
void validate(const TrainConfig& config);
nlohmann::json to_json(const TrainConfig& config);
/// Inverse of to_json; every key is required. Throws std::invalid_argument.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool encoder_frozen = false;
  /// Validation diagnostics (top-k for the generator, caption metrics for the VLM).
  nlohmann::json metrics = nlohmann::json::object();
};

struct TrainHistory {
  std::string model;
  /// Name of the monitored validation quantity and whether larger is better.
  std::string monitor;
  bool maximize = false;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_value = 0.0;
  bool early_stopped = false;
  long optimizer_steps = 0;
  /// Wall-clock seconds per epoch; kept out of history.json so that seeded
  /// reruns produce identical bytes.
  std::vector<double> epoch_seconds;
};

/// Called after each completed epoch with the record and its wall-clock seconds.
using EpochCallback = std::function<void(const EpochRecord&, double seconds)>;

nlohmann::json to_json(const TrainHistory& history);
nlohmann::json timing_json(const TrainHistory& history);

/// Validation membership by clip-id hash: fnv1a(id) % 10 == 0.
bool is_validation(const std::string& clip_id);

struct Split {
  std::vector<size_t> train;
  std::vector<size_t> validation;
};
Split split_clips(std::span<const scene::LabeledClip> clips);

/// Source of the per-clip patch attention map fed to the Q-Former. The same
/// keyframe map is applied to every frame of the clip.
class AttentionProvider {
 public:
  virtual ~AttentionProvider() = default;
  virtual AttentionSource source() const = 0;
  virtual std::optional<geometry::PatchAttentionMap> map_for(const scene::LabeledClip& clip) const = 0;
};

class NoAttention final : public AttentionProvider {
 public:
  AttentionSource source() const override { return AttentionSource::none; }
  std::optional<geometry::PatchAttentionMap> map_for(const scene::LabeledClip&) const override {
    return std::nullopt;
  }
};

/// project_to_patch_map([gt_box]).
class OracleObjectAttention final : public AttentionProvider {
 public:
  explicit OracleObjectAttention(int patch_size) : patch_size_(patch_size) {}
  AttentionSource source() const override { return AttentionSource::oracle_object; }
  std::optional<geometry::PatchAttentionMap> map_for(const scene::LabeledClip& clip) const override;

 private:
  int patch_size_;
};

/// Boxes chosen by select_significant over the trained generator's A_sig.
class PredictedPatchAttention final : public AttentionProvider {
 public:
  PredictedPatchAttention(std::shared_ptr<const generator::AttentionGenerator<float>> model, int patch_size,
                          generator::SelectionPolicy policy = {});
  AttentionSource source() const override { return AttentionSource::predicted_patch; }
  std::optional<geometry::PatchAttentionMap> map_for(const scene::LabeledClip& clip) const override;
  /// Selected detection indices into clip.detections.
  std::vector<int> selected(const scene::LabeledClip& clip) const;
  std::vector<double> a_sig(const scene::LabeledClip& clip) const;

 private:
  std::shared_ptr<const generator::AttentionGenerator<float>> model_;
  int patch_size_;
  generator::SelectionPolicy policy_;
};

/// Throws std::invalid_argument when source is predicted-patch and no
/// generator checkpoint is configured, std::runtime_error when it cannot be loaded.
std::unique_ptr<AttentionProvider> make_attention_provider(AttentionSource source, int patch_size,
                                                           const std::filesystem::path& generator_checkpoint);

// ---------------------------------------------------------------------------
// Attention generator
// ---------------------------------------------------------------------------

struct GeneratorEval {
  double top1 = 0.0;
  double top3 = 0.0;
  generator::GeneratorLosses losses;
  std::vector<metrics::TopkCase> cases;
};

GeneratorEval evaluate_generator(const generator::AttentionGenerator<float>& model,
                                 std::span<const generator::GeneratorSample> samples);

struct GeneratorRun {
  generator::AttentionGenerator<float> model;
  TrainHistory history;
};

/// Adam on batch-mean L_IoU + L_CE, early stop on validation top-1. The
/// returned model holds the parameters of the best validation epoch.
GeneratorRun train_generator(const TrainConfig& config, const generator::GeneratorConfig& model_config,
                             std::span<const scene::LabeledClip> clips, const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Mini VLM
// ---------------------------------------------------------------------------

struct VlmRun {
  vlm::MiniVlm<float> model;
  TrainHistory history;
};

/// Teacher-forced training, encoder frozen after `warm_epochs`, early stop
/// on validation loss. The returned model holds the best-epoch parameters.
VlmRun train_vlm(const TrainConfig& config, const vlm::VlmConfig& model_config,
                 std::span<const scene::LabeledClip> clips, const AttentionProvider& attention,
                 const EpochCallback& on_epoch = {});

/// T_V for a clip with the provider's map applied to every frame.
nn::Var<float> clip_tokens(const vlm::MiniVlm<float>& model, const scene::LabeledClip& clip,
                           const std::optional<geometry::PatchAttentionMap>& map, vlm::MaskMode mode,
                           double p_mask, std::mt19937_64& rng);

/// Mean inference-mode decode loss over the given clip indices.
double vlm_loss(const vlm::MiniVlm<float>& model, std::span<const scene::LabeledClip> clips,
                std::span<const size_t> indices, const AttentionProvider& attention);

/// Greedy generations for the given clips in inference mode.
std::vector<metrics::EvalRecord> generate_records(const vlm::MiniVlm<float>& model,
                                                  std::span<const scene::LabeledClip> clips,
                                                  std::span<const size_t> indices,
                                                  const AttentionProvider& attention);

/// Writes the checkpoint, history.json and config.json, plus timing.json
/// when asked (wall-clock output is the one non-reproducible artifact).
void save_generator_run(const std::filesystem::path& dir, const GeneratorRun& run, const TrainConfig& config,
                        bool write_timing = false);
void save_vlm_run(const std::filesystem::path& dir, const VlmRun& run, const TrainConfig& config,
                  bool write_timing = false);

}  // namespace drivex::training
