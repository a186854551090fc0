#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drivex/geometry.hpp"
#include "drivex/nn/adam.hpp"
#include "drivex/nn/layers.hpp"
#include "drivex/scene_data.hpp"

namespace drivex::generator {

using geometry::Box;

/// [normalised index, normalised box (4), flattened crop].
struct ObjectFeature {
  std::vector<double> values;
};

inline int feature_length(int crop_size) { return 1 + 4 + crop_size * crop_size * 3; }

/// One feature vector per detection, in detection order. Index is divided
/// by n_max and the box by (W, H, W, H). Throws std::invalid_argument when
/// a crop is not crop_size x crop_size x 3.
std::vector<ObjectFeature> build_object_features(std::span<const scene::DetectedObject> objects,
                                                 int frame_height, int frame_width, int n_max,
                                                 int crop_size = 8);

struct SignificanceOutput {
  std::vector<double> a_sig;
  std::vector<double> action_logits;
  int action_pred = 0;
};

struct GeneratorConfig {
  int dim = 64;
  int heads = 4;
  int blocks = 2;
  int ffn_mult = 4;
  int n_max = 8;
  int crop_size = 8;
  int frame_height = 64;
  int frame_width = 64;
  std::uint64_t init_seed = 0;
};

/// Transformer encoder over a frame's detections. A per-object scalar head
/// gives the significance logits; the mean-pooled states feed the
/// ego-action head.
template <typename T>
class AttentionGenerator {
 public:
  struct Outputs {
    nn::Var<T> scores;         // 1 x n
    nn::Var<T> action_logits;  // 1 x kNumActions
  };

  explicit AttentionGenerator(const GeneratorConfig& config);
  // Layers alias the parameter store, so copies would share weights.
  AttentionGenerator(const AttentionGenerator&) = delete;
  AttentionGenerator& operator=(const AttentionGenerator&) = delete;
  AttentionGenerator(AttentionGenerator&&) = default;
  AttentionGenerator& operator=(AttentionGenerator&&) = default;

  Outputs forward(std::span<const ObjectFeature> features) const;
  SignificanceOutput score(std::span<const ObjectFeature> features) const;

  const GeneratorConfig& config() const { return config_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

 private:
  GeneratorConfig config_;
  nn::ParamStore<T> params_;
  nn::Linear<T> embed_;
  std::vector<nn::EncoderBlock<T>> blocks_;
  nn::LayerNorm<T> final_norm_;
  nn::Linear<T> significance_head_;
  nn::Linear<T> action_head_;
};

template <typename T>
SignificanceOutput score_objects(const AttentionGenerator<T>& model,
                                 std::span<const ObjectFeature> features) {
  return model.score(features);
}

/// -sum_i IoU(detections[i], gt_box) * log a_sig[i].
double significance_loss(std::span<const Box> detections, const Box& gt_box,
                         std::span<const double> a_sig);

/// Negative log-softmax of the true class.
double action_loss(std::span<const double> action_logits, int gt_action);

inline double total_loss(double significance, double action) { return significance + action; }

struct SelectionPolicy {
  double relative_threshold = 0.5;
  int max_selected = 3;
};

/// The argmax plus every index with a_sig strictly above threshold * max,
/// strongest first, ties toward the lower index, capped at max_selected.
/// Never empty for non-empty input.
std::vector<int> select_significant(std::span<const double> a_sig,
                                    const SelectionPolicy& policy = {});

/// Precomputed per-clip training inputs.
struct GeneratorSample {
  std::string clip_id;
  std::vector<ObjectFeature> features;
  std::vector<Box> boxes;
  std::vector<double> iou_weights;
  int gt_index = 0;
  int gt_action = 0;
};

GeneratorSample make_generator_sample(const scene::LabeledClip& clip, const GeneratorConfig& config);

struct GeneratorLosses {
  double iou = 0.0;
  double ce = 0.0;
  double total = 0.0;
};

/// Builds the combined loss graph for one sample.
template <typename T>
nn::Var<T> sample_loss(const AttentionGenerator<T>& model, const GeneratorSample& sample,
                       GeneratorLosses* parts = nullptr);

/// Batch-mean losses without touching parameters.
template <typename T>
GeneratorLosses evaluate_losses(const AttentionGenerator<T>& model,
                                std::span<const GeneratorSample> batch);

/// One Adam update on the batch-mean loss. Throws std::runtime_error naming
/// the batch's clip ids if any loss is non-finite.
template <typename T>
GeneratorLosses generator_step(AttentionGenerator<T>& model, std::span<const GeneratorSample> batch,
                               nn::Adam<T>& optimizer, double lr);

}  // namespace drivex::generator
