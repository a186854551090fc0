#include "drivex/scene_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

namespace drivex::scene {

namespace {

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

template <size_t N>
bool in_vocab(const std::array<std::string_view, N>& vocab, std::string_view item) {
  return std::find(vocab.begin(), vocab.end(), item) != vocab.end();
}

// Longest phrase of `vocab` matching words[pos...]; returns words consumed (0 = none).
template <size_t N>
size_t longest_match(const std::array<std::string_view, N>& vocab,
                     const std::vector<std::string_view>& words, size_t pos,
                     std::string_view& matched) {
  size_t best = 0;
  for (std::string_view phrase : vocab) {
    const auto pw = split_words(phrase);
    if (pw.size() <= best || pos + pw.size() > words.size()) continue;
    if (std::equal(pw.begin(), pw.end(), words.begin() + static_cast<std::ptrdiff_t>(pos))) {
      best = pw.size();
      matched = phrase;
    }
  }
  return best;
}

struct SceneObject {
  ObjectKind kind;
  Status status;
  Box key_box;
  double vx = 0.0;
  double vy = 0.0;
};

std::array<float, 3> glyph_color(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::car: return {0.85f, 0.20f, 0.20f};
    case ObjectKind::truck: return {0.20f, 0.35f, 0.90f};
    case ObjectKind::pedestrian: return {0.95f, 0.85f, 0.25f};
    case ObjectKind::cyclist: return {0.25f, 0.85f, 0.35f};
  }
  return {1.0f, 1.0f, 1.0f};
}

bool glyph_contains(ObjectKind kind, const Box& b, double px, double py) {
  if (px < b.x_min || px >= b.x_max || py < b.y_min || py >= b.y_max) return false;
  switch (kind) {
    case ObjectKind::car:
    case ObjectKind::truck: return true;
    case ObjectKind::pedestrian: {
      const double dx = (px - b.center_x()) / (0.5 * b.width());
      const double dy = (py - b.center_y()) / (0.5 * b.height());
      return dx * dx + dy * dy <= 1.0;
    }
    case ObjectKind::cyclist: {
      const double t = (py - b.y_min) / b.height();
      return std::abs(px - b.center_x()) <= 0.5 * b.width() * t + 0.5;
    }
  }
  return false;
}

Image render_background(const SceneSpec& spec, std::mt19937_64& rng) {
  Image bg(spec.height, spec.width);
  std::uniform_real_distribution<float> noise(-0.03f, 0.03f);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const float base = 0.32f + noise(rng);
      bg.at(y, x, 0) = base;
      bg.at(y, x, 1) = base;
      bg.at(y, x, 2) = base + 0.03f;
    }
  }
  // Dashed lane markings at the thirds.
  for (int lane : {spec.width / 3, 2 * spec.width / 3}) {
    for (int y = 0; y < spec.height; ++y) {
      if ((y / 4) % 2 != 0) continue;
      for (int c = 0; c < 3; ++c) bg.at(y, lane, c) = 0.75f;
    }
  }
  return bg;
}

Image render_frame(const Image& background, const std::vector<SceneObject>& objects,
                   double offset_frames) {
  Image img = background;
  std::vector<size_t> order(objects.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Far (smaller y) objects first so nearer ones occlude them.
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return objects[a].key_box.y_max < objects[b].key_box.y_max;
  });
  for (size_t idx : order) {
    const SceneObject& o = objects[idx];
    const Box b{o.key_box.x_min + o.vx * offset_frames, o.key_box.y_min + o.vy * offset_frames,
                o.key_box.x_max + o.vx * offset_frames, o.key_box.y_max + o.vy * offset_frames};
    const auto color = glyph_color(o.kind);
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x_min)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(b.x_max)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y_min)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(b.y_max)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!glyph_contains(o.kind, b, x + 0.5, y + 0.5)) continue;
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[static_cast<size_t>(c)];
      }
    }
  }
  quantize(img);
  return img;
}

double anchor_distance(const SceneSpec& spec, const Box& b) {
  return std::hypot(b.center_x() - ego_anchor_x(spec), b.center_y() - ego_anchor_y(spec));
}

bool separated(const Box& a, const Box& b, double gap) {
  return a.x_max + gap <= b.x_min || b.x_max + gap <= a.x_min || a.y_max + gap <= b.y_min ||
         b.y_max + gap <= a.y_min;
}

Box jitter_box(const Box& truth, const SceneSpec& spec, std::mt19937_64& rng) {
  if (spec.jitter_sigma <= 0.0) return truth;
  std::normal_distribution<double> normal(0.0, spec.jitter_sigma);
  const double lim = 2.0 * spec.jitter_sigma;
  for (int attempt = 0; attempt < 32; ++attempt) {
    Box b{truth.x_min + std::clamp(normal(rng), -lim, lim),
          truth.y_min + std::clamp(normal(rng), -lim, lim),
          truth.x_max + std::clamp(normal(rng), -lim, lim),
          truth.y_max + std::clamp(normal(rng), -lim, lim)};
    b = geometry::clip_to_frame(b, spec.width, spec.height);
    if (b.width() >= 1.0 && b.height() >= 1.0) return b;
  }
  return truth;
}

}  // namespace

std::string_view name_of(ObjectKind k) { return kObjectNames[static_cast<size_t>(k)]; }
std::string_view phrase_of(Status s) { return kStatusPhrases[static_cast<size_t>(s)]; }
std::string_view phrase_of(Position p) { return kPositionPhrases[static_cast<size_t>(p)]; }
std::string_view label_of(EgoAction a) { return kActionLabels[static_cast<size_t>(a)]; }

std::optional<EgoAction> parse_action(std::string_view label) {
  for (size_t i = 0; i < kActionLabels.size(); ++i) {
    if (kActionLabels[i] == label) return static_cast<EgoAction>(i);
  }
  return std::nullopt;
}

std::optional<Position> parse_position(std::string_view phrase) {
  for (size_t i = 0; i < kPositionPhrases.size(); ++i) {
    if (kPositionPhrases[i] == phrase) return static_cast<Position>(i);
  }
  return std::nullopt;
}

EgoAction action_rule(ObjectKind kind, Position position) {
  using A = EgoAction;
  // rows: car, truck, pedestrian, cyclist; cols: left, ahead, right
  static constexpr A table[kNumKinds][kNumPositions] = {
      {A::proceed, A::slow_down, A::proceed},
      {A::slow_down, A::slow_down, A::proceed},
      {A::yield, A::stop, A::yield},
      {A::slow_down, A::stop, A::yield},
  };
  return table[static_cast<int>(kind)][static_cast<int>(position)];
}

std::string make_explanation(std::string_view object_name, std::string_view action_status,
                             std::string_view position) {
  if (!in_vocab(kObjectNames, object_name)) {
    throw std::invalid_argument("unknown object name '" + std::string(object_name) + "'");
  }
  if (!in_vocab(kStatusPhrases, action_status)) {
    throw std::invalid_argument("unknown action/status '" + std::string(action_status) + "'");
  }
  if (!in_vocab(kPositionPhrases, position)) {
    throw std::invalid_argument("unknown position '" + std::string(position) + "'");
  }
  std::string out;
  out.reserve(object_name.size() + action_status.size() + position.size() + 2);
  out.append(object_name).append(" ").append(action_status).append(" ").append(position);
  return out;
}

std::optional<ExplanationSlots> parse_explanation(std::string_view text) {
  const auto words = split_words(text);
  size_t pos = 0;
  std::string_view obj, status, where;
  size_t n = longest_match(kObjectNames, words, pos, obj);
  if (n == 0) return std::nullopt;
  pos += n;
  n = longest_match(kStatusPhrases, words, pos, status);
  if (n == 0) return std::nullopt;
  pos += n;
  n = longest_match(kPositionPhrases, words, pos, where);
  if (n == 0) return std::nullopt;
  pos += n;
  if (pos != words.size()) return std::nullopt;
  return ExplanationSlots{std::string(obj), std::string(status), std::string(where)};
}

std::vector<std::string> template_words() {
  std::vector<std::string> out;
  auto add = [&](std::string_view phrase) {
    for (auto w : split_words(phrase)) {
      if (std::find(out.begin(), out.end(), w) == out.end()) out.emplace_back(w);
    }
  };
  for (auto p : kObjectNames) add(p);
  for (auto p : kStatusPhrases) add(p);
  for (auto p : kPositionPhrases) add(p);
  return out;
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::array<double, 2> glyph_size(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::car: return {12.0, 9.0};
    case ObjectKind::truck: return {16.0, 12.0};
    case ObjectKind::pedestrian: return {6.0, 8.0};
    case ObjectKind::cyclist: return {8.0, 10.0};
  }
  return {8.0, 8.0};
}

std::vector<Status> allowed_statuses(ObjectKind kind) {
  const bool vehicle = kind == ObjectKind::car || kind == ObjectKind::truck;
  return {Status::stopped, Status::approaching, Status::moving_away,
          vehicle ? Status::cutting_in : Status::crossing};
}

void validate(const SceneSpec& s) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("scene spec: " + msg); };
  if (s.height <= 0 || s.width <= 0) fail("frame dimensions must be positive");
  if (s.patch_size <= 0 || s.height % s.patch_size != 0 || s.width % s.patch_size != 0) {
    fail("frame dimensions must be divisible by the patch size");
  }
  if (s.frames <= 0) fail("clips need at least one frame");
  if (s.crop_size <= 0) fail("crop size must be positive");
  if (s.min_objects < 1 || s.max_objects < s.min_objects) fail("object count range is invalid");
  if (s.max_objects > 8) fail("at most 8 objects per scene are supported");
  if (!(s.jitter_sigma >= 0.0)) fail("jitter sigma must be non-negative");
  if (!(s.false_positive_rate >= 0.0 && s.false_positive_rate <= 1.0)) {
    fail("false-positive rate must lie in [0,1]");
  }
  if (s.max_false_positives < 0) fail("false-positive cap must be non-negative");
  if (!(s.drop_rate >= 0.0 && s.drop_rate < 1.0)) fail("drop rate must lie in [0,1)");
  if (s.drop_significant) fail("the significant object may not be dropped from detections");
  if (!(s.min_speed >= 0.0 && s.max_speed >= s.min_speed)) fail("speed range is invalid");
  if (!(s.significance_margin >= 0.0)) fail("significance margin must be non-negative");
}

Image resample_crop(const Image& frame, const Box& box, int size) {
  Image crop(size, size);
  auto sample = [&](double x, double y, int c) {
    // Pixel centers sit at integer + 0.5.
    const double fx = std::clamp(x - 0.5, 0.0, frame.width - 1.0);
    const double fy = std::clamp(y - 0.5, 0.0, frame.height - 1.0);
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const int x1 = std::min(x0 + 1, frame.width - 1);
    const int y1 = std::min(y0 + 1, frame.height - 1);
    const double tx = fx - x0;
    const double ty = fy - y0;
    const double top = (1 - tx) * frame.at(y0, x0, c) + tx * frame.at(y0, x1, c);
    const double bot = (1 - tx) * frame.at(y1, x0, c) + tx * frame.at(y1, x1, c);
    return (1 - ty) * top + ty * bot;
  };
  for (int v = 0; v < size; ++v) {
    for (int u = 0; u < size; ++u) {
      const double x = box.x_min + (u + 0.5) / size * box.width();
      const double y = box.y_min + (v + 0.5) / size * box.height();
      for (int c = 0; c < 3; ++c) crop.at(v, u, c) = static_cast<float>(sample(x, y, c));
    }
  }
  quantize(crop);
  return crop;
}

LabeledClip generate_scene(const SceneSpec& spec, const std::string& clip_id) {
  validate(spec);
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(clip_id)),
                    static_cast<std::uint32_t>(fnv1a(clip_id) >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double W = spec.width;
  const double H = spec.height;

  // Placement: rejection-sample until objects are separated and the
  // nearest-to-ego object is unambiguous.
  std::vector<SceneObject> objects;
  size_t significant = 0;
  bool placed = false;
  for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
    objects.clear();
    const int count = std::uniform_int_distribution<int>(spec.min_objects, spec.max_objects)(rng);
    bool ok = true;
    for (int i = 0; i < count && ok; ++i) {
      SceneObject o;
      o.kind = static_cast<ObjectKind>(std::uniform_int_distribution<int>(0, kNumKinds - 1)(rng));
      const auto [w, h] = glyph_size(o.kind);
      const double cx = uniform(0.5 * w + 1.0, W - 0.5 * w - 1.0);
      const double cy = uniform(0.3 * H, H - 0.5 * h - 1.0);
      o.key_box = Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
      for (const auto& other : objects) {
        if (!separated(o.key_box, other.key_box, 2.0)) ok = false;
      }
      objects.push_back(o);
    }
    if (!ok) continue;
    std::vector<double> dist;
    for (const auto& o : objects) dist.push_back(anchor_distance(spec, o.key_box));
    significant = static_cast<size_t>(std::min_element(dist.begin(), dist.end()) - dist.begin());
    bool margin_ok = true;
    for (size_t i = 0; i < dist.size(); ++i) {
      if (i != significant && dist[i] - dist[significant] < spec.significance_margin) {
        margin_ok = false;
      }
    }
    placed = margin_ok;
  }
  if (!placed) throw std::runtime_error("scene placement failed for clip " + clip_id);

  for (auto& o : objects) {
    const auto statuses = allowed_statuses(o.kind);
    o.status = statuses[std::uniform_int_distribution<size_t>(0, statuses.size() - 1)(rng)];
    const double speed = uniform(spec.min_speed, spec.max_speed);
    switch (o.status) {
      case Status::stopped: break;
      case Status::approaching: o.vy = speed; break;
      case Status::moving_away: o.vy = -speed; break;
      case Status::crossing: o.vx = unit(rng) < 0.5 ? -speed : speed; break;
      case Status::cutting_in: o.vx = o.key_box.center_x() < 0.5 * W ? speed : -speed; break;
    }
  }

  LabeledClip clip;
  clip.clip_id = clip_id;
  clip.keyframe_index = spec.frames - 1;
  const Image background = render_background(spec, rng);
  for (int k = 0; k < spec.frames; ++k) {
    clip.frames.push_back(
        Frame{k, render_frame(background, objects, static_cast<double>(k - clip.keyframe_index))});
  }

  const SceneObject& sig = objects[significant];
  clip.gt_box = sig.key_box;
  const Position where = *parse_position(geometry::position_label(sig.key_box, W));
  clip.gt_action = action_rule(sig.kind, where);
  clip.gt_explanation = make_explanation(name_of(sig.kind), phrase_of(sig.status), phrase_of(where));

  // Detector stub.
  std::vector<size_t> kept;
  for (size_t i = 0; i < objects.size(); ++i) {
    const bool drop = unit(rng) < spec.drop_rate;
    if (i == significant || !drop) kept.push_back(i);
  }
  std::vector<Box> false_positives;
  for (int slot = 0; slot < spec.max_false_positives; ++slot) {
    if (unit(rng) >= spec.false_positive_rate) continue;
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double w = uniform(6.0, 14.0);
      const double h = uniform(6.0, 14.0);
      const double x0 = uniform(0.0, W - w);
      const double y0 = uniform(0.2 * H, H - h);
      const Box fp{x0, y0, x0 + w, y0 + h};
      bool clear = true;
      for (const auto& o : objects) {
        if (geometry::intersect(fp, o.key_box).area() > 0.0) clear = false;
      }
      if (clear) {
        false_positives.push_back(fp);
        break;
      }
    }
  }

  std::vector<Box> boxes;
  size_t sig_slot = 0;
  bool property_ok = false;
  for (int attempt = 0; attempt < 100 && !property_ok; ++attempt) {
    boxes.clear();
    for (size_t i : kept) {
      if (i == significant) sig_slot = boxes.size();
      boxes.push_back(attempt < 99 ? jitter_box(objects[i].key_box, spec, rng) : objects[i].key_box);
    }
    for (const auto& fp : false_positives) boxes.push_back(fp);
    const double best = geometry::iou(boxes[sig_slot], clip.gt_box);
    property_ok = best > 0.0;
    for (size_t j = 0; j < boxes.size() && property_ok; ++j) {
      if (j != sig_slot && geometry::iou(boxes[j], clip.gt_box) >= best) property_ok = false;
    }
  }

  std::vector<size_t> order(boxes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const Image& key = clip.keyframe().image;
  for (size_t slot = 0; slot < order.size(); ++slot) {
    const Box& b = boxes[order[slot]];
    if (order[slot] == sig_slot) clip.gt_detection_index = static_cast<int>(slot);
    clip.detections.push_back(
        DetectedObject{static_cast<int>(slot), b, resample_crop(key, b, spec.crop_size)});
  }
  return clip;
}

std::string clip_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%05d", i);
  return buf;
}

std::vector<LabeledClip> generate_corpus(const SceneSpec& spec, int count) {
  validate(spec);
  std::vector<LabeledClip> clips;
  clips.reserve(static_cast<size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) clips.push_back(generate_scene(spec, clip_name(i)));
  return clips;
}

DatasetError::DatasetError(std::string clip_id, std::string field, const std::string& what)
    : std::runtime_error("clip '" + clip_id + "', field '" + field + "': " + what),
      clip_id_(std::move(clip_id)),
      field_(std::move(field)) {}

DatasetInfo info_from_spec(const SceneSpec& spec) {
  DatasetInfo info;
  info.height = spec.height;
  info.width = spec.width;
  info.frames = spec.frames;
  info.patch_size = spec.patch_size;
  info.crop_size = spec.crop_size;
  return info;
}

}  // namespace drivex::scene
