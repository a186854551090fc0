#include "drivex/attn_generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace drivex::generator {

using nn::Matrix;
using nn::Var;

std::vector<ObjectFeature> build_object_features(std::span<const scene::DetectedObject> objects,
                                                 int frame_height, int frame_width, int n_max,
                                                 int crop_size) {
  if (n_max <= 0) throw std::invalid_argument("n_max must be positive");
  std::vector<ObjectFeature> out;
  out.reserve(objects.size());
  const size_t crop_len = static_cast<size_t>(crop_size) * crop_size * 3;
  for (const auto& obj : objects) {
    if (obj.crop.height != crop_size || obj.crop.width != crop_size ||
        obj.crop.pixels.size() != crop_len) {
      throw std::invalid_argument("detection " + std::to_string(obj.index) + ": crop must be " +
                                  std::to_string(crop_size) + "x" + std::to_string(crop_size) + "x3");
    }
    ObjectFeature f;
    f.values.reserve(static_cast<size_t>(feature_length(crop_size)));
    f.values.push_back(static_cast<double>(obj.index) / n_max);
    f.values.push_back(obj.box.x_min / frame_width);
    f.values.push_back(obj.box.y_min / frame_height);
    f.values.push_back(obj.box.x_max / frame_width);
    f.values.push_back(obj.box.y_max / frame_height);
    for (float v : obj.crop.pixels) f.values.push_back(v);
    out.push_back(std::move(f));
  }
  return out;
}

template <typename T>
AttentionGenerator<T>::AttentionGenerator(const GeneratorConfig& config) : config_(config) {
  if (config.dim <= 0 || config.heads <= 0 || config.dim % config.heads != 0 || config.blocks < 0) {
    throw std::invalid_argument("generator: invalid model dimensions");
  }
  std::mt19937_64 rng(config.init_seed);
  const int in = feature_length(config.crop_size);
  embed_ = nn::Linear<T>(params_, "embed", in, config.dim, rng);
  for (int b = 0; b < config.blocks; ++b) {
    blocks_.emplace_back(params_, "block" + std::to_string(b), config.dim, config.heads,
                         config.dim * config.ffn_mult, rng);
  }
  final_norm_ = nn::LayerNorm<T>(params_, "final_norm", config.dim);
  significance_head_ = nn::Linear<T>(params_, "significance_head", config.dim, 1, rng);
  action_head_ = nn::Linear<T>(params_, "action_head", config.dim, scene::kNumActions, rng);
}

template <typename T>
typename AttentionGenerator<T>::Outputs AttentionGenerator<T>::forward(
    std::span<const ObjectFeature> features) const {
  if (features.empty()) throw std::invalid_argument("score_objects: no detections");
  const auto width = static_cast<Eigen::Index>(feature_length(config_.crop_size));
  Matrix<T> x(static_cast<Eigen::Index>(features.size()), width);
  for (size_t i = 0; i < features.size(); ++i) {
    if (static_cast<Eigen::Index>(features[i].values.size()) != width) {
      throw std::invalid_argument("score_objects: feature length mismatch");
    }
    for (Eigen::Index j = 0; j < width; ++j) {
      x(static_cast<Eigen::Index>(i), j) = static_cast<T>(features[i].values[static_cast<size_t>(j)]);
    }
  }
  Var<T> h = embed_(nn::constant(std::move(x)));
  for (const auto& block : blocks_) h = block(h);
  h = final_norm_(h);
  return Outputs{nn::transpose(significance_head_(h)), action_head_(nn::mean_rows(h))};
}

template <typename T>
SignificanceOutput AttentionGenerator<T>::score(std::span<const ObjectFeature> features) const {
  const Outputs out = forward(features);
  const Matrix<T> probs = nn::softmax_rows(out.scores.value());
  SignificanceOutput result;
  for (Eigen::Index i = 0; i < probs.cols(); ++i) result.a_sig.push_back(probs(0, i));
  for (Eigen::Index i = 0; i < out.action_logits.cols(); ++i) {
    result.action_logits.push_back(out.action_logits.value()(0, i));
  }
  result.action_pred = static_cast<int>(
      std::max_element(result.action_logits.begin(), result.action_logits.end()) -
      result.action_logits.begin());
  return result;
}

double significance_loss(std::span<const Box> detections, const Box& gt_box,
                         std::span<const double> a_sig) {
  if (detections.size() != a_sig.size()) {
    throw std::invalid_argument("significance_loss: A_sig length differs from detection count");
  }
  double loss = 0.0;
  for (size_t i = 0; i < detections.size(); ++i) {
    if (!(a_sig[i] > 0.0)) {
      throw std::invalid_argument("significance_loss: A_sig entries must be positive");
    }
    loss -= geometry::iou(detections[i], gt_box) * std::log(a_sig[i]);
  }
  return loss;
}

double action_loss(std::span<const double> action_logits, int gt_action) {
  if (gt_action < 0 || gt_action >= static_cast<int>(action_logits.size())) {
    throw std::invalid_argument("action_loss: class " + std::to_string(gt_action) +
                                " out of range");
  }
  const double mx = *std::max_element(action_logits.begin(), action_logits.end());
  double total = 0.0;
  for (double v : action_logits) total += std::exp(v - mx);
  return mx + std::log(total) - action_logits[static_cast<size_t>(gt_action)];
}

std::vector<int> select_significant(std::span<const double> a_sig, const SelectionPolicy& policy) {
  std::vector<int> order(a_sig.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return a_sig[static_cast<size_t>(a)] > a_sig[static_cast<size_t>(b)];
  });
  std::vector<int> out;
  if (order.empty()) return out;
  const double cut = policy.relative_threshold * a_sig[static_cast<size_t>(order.front())];
  for (int i : order) {
    if (static_cast<int>(out.size()) >= std::max(policy.max_selected, 1)) break;
    if (out.empty() || a_sig[static_cast<size_t>(i)] > cut) out.push_back(i);
  }
  return out;
}

GeneratorSample make_generator_sample(const scene::LabeledClip& clip, const GeneratorConfig& config) {
  GeneratorSample s;
  s.clip_id = clip.clip_id;
  s.features = build_object_features(clip.detections, config.frame_height, config.frame_width,
                                     config.n_max, config.crop_size);
  for (const auto& d : clip.detections) {
    s.boxes.push_back(d.box);
    s.iou_weights.push_back(geometry::iou(d.box, clip.gt_box));
  }
  s.gt_index = clip.gt_detection_index;
  s.gt_action = static_cast<int>(clip.gt_action);
  return s;
}

template <typename T>
Var<T> sample_loss(const AttentionGenerator<T>& model, const GeneratorSample& sample,
                   GeneratorLosses* parts) {
  const auto out = model.forward(sample.features);
  std::vector<T> weights(sample.iou_weights.begin(), sample.iou_weights.end());
  const Var<T> l_iou = nn::weighted_neg_log_softmax(out.scores, weights);
  const Var<T> l_ce = nn::cross_entropy(out.action_logits, {sample.gt_action});
  if (parts) {
    parts->iou = static_cast<double>(l_iou.scalar());
    parts->ce = static_cast<double>(l_ce.scalar());
    parts->total = total_loss(parts->iou, parts->ce);
  }
  return nn::add(l_iou, l_ce);
}

template <typename T>
GeneratorLosses evaluate_losses(const AttentionGenerator<T>& model,
                                std::span<const GeneratorSample> batch) {
  GeneratorLosses mean;
  for (const auto& s : batch) {
    GeneratorLosses p;
    sample_loss(model, s, &p);
    mean.iou += p.iou / batch.size();
    mean.ce += p.ce / batch.size();
  }
  mean.total = total_loss(mean.iou, mean.ce);
  return mean;
}

template <typename T>
GeneratorLosses generator_step(AttentionGenerator<T>& model, std::span<const GeneratorSample> batch,
                               nn::Adam<T>& optimizer, double lr) {
  if (batch.empty()) throw std::invalid_argument("generator_step: empty batch");
  model.params().zero_grad();
  GeneratorLosses mean;
  for (const auto& s : batch) {
    GeneratorLosses p;
    nn::backward(sample_loss(model, s, &p));
    mean.iou += p.iou / batch.size();
    mean.ce += p.ce / batch.size();
  }
  mean.total = total_loss(mean.iou, mean.ce);
  if (!std::isfinite(mean.total)) {
    std::string ids;
    for (const auto& s : batch) ids += (ids.empty() ? "" : ",") + s.clip_id;
    throw std::runtime_error("generator_step: non-finite loss in batch [" + ids + "]");
  }
  optimizer.step(model.params(), lr, 1.0 / static_cast<double>(batch.size()));
  return mean;
}

template class AttentionGenerator<float>;
template class AttentionGenerator<double>;
template Var<float> sample_loss(const AttentionGenerator<float>&, const GeneratorSample&,
                                GeneratorLosses*);
template Var<double> sample_loss(const AttentionGenerator<double>&, const GeneratorSample&,
                                 GeneratorLosses*);
template GeneratorLosses evaluate_losses(const AttentionGenerator<float>&,
                                         std::span<const GeneratorSample>);
template GeneratorLosses evaluate_losses(const AttentionGenerator<double>&,
                                         std::span<const GeneratorSample>);
template GeneratorLosses generator_step(AttentionGenerator<float>&, std::span<const GeneratorSample>,
                                        nn::Adam<float>&, double);
template GeneratorLosses generator_step(AttentionGenerator<double>&,
                                        std::span<const GeneratorSample>, nn::Adam<double>&, double);

}  // namespace drivex::generator
