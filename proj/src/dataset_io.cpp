#include <fstream>
#include <map>
#include <sstream>

#include "drivex/scene_data.hpp"
#include "json.hpp"

namespace drivex::scene {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json box_to_json(const Box& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

Box box_from_json(const json& j, const std::string& clip_id, const std::string& field) {
  if (!j.is_array() || j.size() != 4) throw DatasetError(clip_id, field, "expected [x0,y0,x1,y1]");
  for (const auto& v : j) {
    if (!v.is_number()) throw DatasetError(clip_id, field, "box coordinates must be numbers");
  }
  Box b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  try {
    geometry::validate(b);
  } catch (const std::invalid_argument& e) {
    throw DatasetError(clip_id, field, e.what());
  }
  return b;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path, const std::string& clip_id, const std::string& field) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(clip_id, field, "missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DatasetError(clip_id, field, std::string("malformed JSON: ") + e.what());
  }
}

template <typename T>
T required(const json& obj, const char* key, const std::string& clip_id) {
  if (!obj.is_object() || !obj.contains(key)) throw DatasetError(clip_id, key, "missing");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DatasetError(clip_id, key, std::string("wrong type: ") + e.what());
  }
}

json vocab_json() {
  json v;
  v["objects"] = json::array();
  for (auto s : kObjectNames) v["objects"].push_back(std::string(s));
  v["statuses"] = json::array();
  for (auto s : kStatusPhrases) v["statuses"].push_back(std::string(s));
  v["positions"] = json::array();
  for (auto s : kPositionPhrases) v["positions"].push_back(std::string(s));
  v["actions"] = json::array();
  for (auto s : kActionLabels) v["actions"].push_back(std::string(s));
  return v;
}

json action_table_json() {
  json t = json::array();
  for (int k = 0; k < kNumKinds; ++k) {
    for (int p = 0; p < kNumPositions; ++p) {
      const auto kind = static_cast<ObjectKind>(k);
      const auto pos = static_cast<Position>(p);
      t.push_back({{"object", std::string(name_of(kind))},
                   {"position", std::string(phrase_of(pos))},
                   {"action", std::string(label_of(action_rule(kind, pos)))}});
    }
  }
  return t;
}

}  // namespace

void save_dataset(const std::vector<LabeledClip>& clips, const DatasetInfo& info,
                  const fs::path& directory) {
  fs::create_directories(directory / "clips");
  json manifest;
  manifest["name"] = info.name;
  manifest["version"] = info.version;
  manifest["height"] = info.height;
  manifest["width"] = info.width;
  manifest["frames"] = info.frames;
  manifest["patch_size"] = info.patch_size;
  manifest["crop_size"] = info.crop_size;
  manifest["vocabulary"] = vocab_json();
  manifest["action_table"] = action_table_json();
  std::map<std::string, int> counts;
  for (auto a : kActionLabels) counts[std::string(a)] = 0;
  manifest["clips"] = json::array();
  for (const auto& clip : clips) {
    manifest["clips"].push_back(clip.clip_id);
    counts[std::string(label_of(clip.gt_action))] += 1;
  }
  manifest["action_counts"] = counts;

  for (const auto& clip : clips) {
    const fs::path dir = directory / "clips" / clip.clip_id;
    fs::create_directories(dir);
    for (const auto& frame : clip.frames) {
      write_png(dir / ("frame_" + std::to_string(frame.index) + ".png"), frame.image);
    }
    json ann;
    ann["clip_id"] = clip.clip_id;
    ann["keyframe_index"] = clip.keyframe_index;
    ann["detections"] = json::array();
    for (const auto& det : clip.detections) {
      const std::string crop_file = "crop_" + std::to_string(det.index) + ".png";
      write_png(dir / crop_file, det.crop);
      ann["detections"].push_back(
          {{"index", det.index}, {"box", box_to_json(det.box)}, {"crop_file", crop_file}});
    }
    ann["gt_box"] = box_to_json(clip.gt_box);
    ann["gt_detection_index"] = clip.gt_detection_index;
    ann["gt_action"] = std::string(label_of(clip.gt_action));
    ann["gt_explanation"] = clip.gt_explanation;
    write_text(dir / "annotation.json", ann.dump(2) + "\n");
  }
  write_text(directory / "manifest.json", manifest.dump(2) + "\n");
}

LoadedDataset load_dataset(const fs::path& directory) {
  const json manifest = read_json(directory / "manifest.json", "<manifest>", "manifest.json");
  LoadedDataset out;
  const std::string m = "<manifest>";
  out.info.name = required<std::string>(manifest, "name", m);
  out.info.version = required<int>(manifest, "version", m);
  out.info.height = required<int>(manifest, "height", m);
  out.info.width = required<int>(manifest, "width", m);
  out.info.frames = required<int>(manifest, "frames", m);
  out.info.patch_size = required<int>(manifest, "patch_size", m);
  out.info.crop_size = required<int>(manifest, "crop_size", m);
  const auto ids = required<std::vector<std::string>>(manifest, "clips", m);

  for (const auto& id : ids) {
    const fs::path dir = directory / "clips" / id;
    const json ann = read_json(dir / "annotation.json", id, "annotation.json");
    LabeledClip clip;
    clip.clip_id = id;
    clip.keyframe_index = required<int>(ann, "keyframe_index", id);
    if (clip.keyframe_index < 0 || clip.keyframe_index >= out.info.frames) {
      throw DatasetError(id, "keyframe_index", "out of range");
    }
    for (int k = 0; k < out.info.frames; ++k) {
      const fs::path file = dir / ("frame_" + std::to_string(k) + ".png");
      Image img;
      try {
        img = read_png(file);
      } catch (const std::runtime_error& e) {
        throw DatasetError(id, "frame_" + std::to_string(k), e.what());
      }
      if (img.height != out.info.height || img.width != out.info.width) {
        throw DatasetError(id, "frame_" + std::to_string(k), "unexpected frame dimensions");
      }
      clip.frames.push_back(Frame{k, std::move(img)});
    }
    if (!ann.contains("detections") || !ann["detections"].is_array()) {
      throw DatasetError(id, "detections", "missing or not a list");
    }
    for (const auto& d : ann["detections"]) {
      DetectedObject det;
      det.index = required<int>(d, "index", id);
      det.box = box_from_json(d.contains("box") ? d["box"] : json(), id, "detections.box");
      const auto crop_file = required<std::string>(d, "crop_file", id);
      try {
        det.crop = read_png(dir / crop_file);
      } catch (const std::runtime_error& e) {
        throw DatasetError(id, "detections.crop_file", e.what());
      }
      if (det.index != static_cast<int>(clip.detections.size())) {
        throw DatasetError(id, "detections.index", "indices must be 0..n-1 in order");
      }
      clip.detections.push_back(std::move(det));
    }
    if (clip.detections.empty()) throw DatasetError(id, "detections", "empty");
    clip.gt_box = box_from_json(ann.contains("gt_box") ? ann["gt_box"] : json(), id, "gt_box");
    clip.gt_detection_index = required<int>(ann, "gt_detection_index", id);
    if (clip.gt_detection_index < 0 ||
        clip.gt_detection_index >= static_cast<int>(clip.detections.size())) {
      throw DatasetError(id, "gt_detection_index", "out of range");
    }
    const auto action = parse_action(required<std::string>(ann, "gt_action", id));
    if (!action) throw DatasetError(id, "gt_action", "unknown action label");
    clip.gt_action = *action;
    clip.gt_explanation = required<std::string>(ann, "gt_explanation", id);
    if (!parse_explanation(clip.gt_explanation)) {
      throw DatasetError(id, "gt_explanation", "does not parse under the template grammar");
    }
    out.clips.push_back(std::move(clip));
  }
  return out;
}

}  // namespace drivex::scene
