#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "drivex/geometry.hpp"
#include "drivex/image.hpp"

namespace drivex::scene {

using geometry::Box;

// ---------------------------------------------------------------------------
// Closed vocabularies of the explanation template
//   <object name> <action/status> <position>
// ---------------------------------------------------------------------------

enum class ObjectKind : int { car = 0, truck, pedestrian, cyclist };
enum class Status : int { stopped = 0, approaching, moving_away, crossing, cutting_in };
enum class Position : int { left = 0, ahead, right };
enum class EgoAction : int { stop = 0, slow_down, yield, proceed };

inline constexpr int kNumKinds = 4;
inline constexpr int kNumStatuses = 5;
inline constexpr int kNumPositions = 3;
inline constexpr int kNumActions = 4;

inline constexpr std::array<std::string_view, kNumKinds> kObjectNames = {"car", "truck",
                                                                        "pedestrian", "cyclist"};
inline constexpr std::array<std::string_view, kNumStatuses> kStatusPhrases = {
    "stopped", "approaching", "moving away", "crossing", "cutting in"};
inline constexpr std::array<std::string_view, kNumPositions> kPositionPhrases = {
    "on the left", "ahead", "on the right"};
inline constexpr std::array<std::string_view, kNumActions> kActionLabels = {"stop", "slow down",
                                                                           "yield", "proceed"};

std::string_view name_of(ObjectKind k);
std::string_view phrase_of(Status s);
std::string_view phrase_of(Position p);
std::string_view label_of(EgoAction a);
std::optional<EgoAction> parse_action(std::string_view label);
std::optional<Position> parse_position(std::string_view phrase);

/// Ego reaction as a function of the significant object's kind and position.
EgoAction action_rule(ObjectKind kind, Position position);

struct ExplanationSlots {
  std::string object_name;
  std::string action_status;
  std::string position;

  bool operator==(const ExplanationSlots&) const = default;
};

/// Throws std::invalid_argument on an out-of-vocabulary slot.
std::string make_explanation(std::string_view object_name, std::string_view action_status,
                             std::string_view position);

/// Longest-match parse in template order; std::nullopt when the text is
/// outside the grammar.
std::optional<ExplanationSlots> parse_explanation(std::string_view text);

/// All distinct whitespace tokens used by the template vocabularies, in
/// first-appearance order (objects, statuses, positions).
std::vector<std::string> template_words();

// ---------------------------------------------------------------------------
// Clip data
// ---------------------------------------------------------------------------

struct Frame {
  int index = 0;
  Image image;

  bool operator==(const Frame&) const = default;
};

struct DetectedObject {
  int index = 0;
  Box box;
  Image crop;

  bool operator==(const DetectedObject&) const = default;
};

struct LabeledClip {
  std::string clip_id;
  std::vector<Frame> frames;
  int keyframe_index = 0;
  std::vector<DetectedObject> detections;
  Box gt_box;
  int gt_detection_index = 0;
  EgoAction gt_action = EgoAction::proceed;
  std::string gt_explanation;

  const Frame& keyframe() const { return frames.at(static_cast<size_t>(keyframe_index)); }
  bool operator==(const LabeledClip&) const = default;
};

struct SceneSpec {
  int height = 64;
  int width = 64;
  int frames = 4;
  int patch_size = 8;
  int crop_size = 8;
  int min_objects = 2;
  int max_objects = 4;
  /// Gaussian corner jitter of the detector stub, truncated at 2 sigma.
  double jitter_sigma = 2.0;
  /// Each of `max_false_positives` slots emits a spurious box with this probability.
  double false_positive_rate = 0.5;
  int max_false_positives = 2;
  /// Applies to non-significant objects only.
  double drop_rate = 0.1;
  bool drop_significant = false;
  double min_speed = 1.5;
  double max_speed = 2.5;
  /// Required gap between nearest and runner-up distance to the ego anchor.
  double significance_margin = 3.0;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument for inconsistent specs, including any spec
/// that could drop the significant object from the detections.
void validate(const SceneSpec& spec);

/// Bottom-center point the significant object is measured against.
inline double ego_anchor_x(const SceneSpec& s) { return 0.5 * s.width; }
inline double ego_anchor_y(const SceneSpec& s) { return static_cast<double>(s.height); }

/// Box size (w, h) of each object kind at the keyframe.
std::array<double, 2> glyph_size(ObjectKind kind);

/// Statuses a kind can take; horizontal motion is "cutting in" for
/// vehicles and "crossing" for vulnerable road users.
std::vector<Status> allowed_statuses(ObjectKind kind);

/// Deterministic in (spec, clip_id).
LabeledClip generate_scene(const SceneSpec& spec, const std::string& clip_id);

/// Bilinear resample of a box region onto a size x size grid, quantised to 8 bits.
Image resample_crop(const Image& frame, const Box& box, int size);

std::string clip_name(int i);
std::vector<LabeledClip> generate_corpus(const SceneSpec& spec, int count);

/// 64-bit FNV-1a; stable across platforms, used for seeding and the split.
std::uint64_t fnv1a(std::string_view text);

// ---------------------------------------------------------------------------
// On-disk dataset
// ---------------------------------------------------------------------------

class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::string clip_id, std::string field, const std::string& what);
  const std::string& clip_id() const { return clip_id_; }
  const std::string& field() const { return field_; }

 private:
  std::string clip_id_;
  std::string field_;
};

struct DatasetInfo {
  std::string name = "synthetic-drive";
  int version = 1;
  int height = 64;
  int width = 64;
  int frames = 4;
  int patch_size = 8;
  int crop_size = 8;
};

DatasetInfo info_from_spec(const SceneSpec& spec);

void save_dataset(const std::vector<LabeledClip>& clips, const DatasetInfo& info,
                  const std::filesystem::path& directory);

struct LoadedDataset {
  DatasetInfo info;
  std::vector<LabeledClip> clips;
};

LoadedDataset load_dataset(const std::filesystem::path& directory);

}  // namespace drivex::scene
