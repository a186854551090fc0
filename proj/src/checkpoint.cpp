#include "drivex/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "drivex/scene_data.hpp"

namespace drivex::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::string file_for(const std::string& name) { return name + ".f32"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

std::string config_hash(const json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(scene::fnv1a(config.dump())));
  return buf;
}

template <typename T>
void save(const fs::path& dir, const nn::ParamStore<T>& params, Manifest manifest) {
  fs::create_directories(dir);
  manifest.params.clear();
  manifest.config_hash = config_hash(manifest.config);
  std::vector<float> buf;
  for (const auto& [name, v] : params.entries()) {
    const auto& m = v.value();
    if (!m.allFinite()) throw std::runtime_error("parameter " + name + " is not finite; refusing to save");
    buf.resize(static_cast<size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(m.data()[i]);
    const std::string file = file_for(name);
    std::ofstream out(dir / file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw std::runtime_error("cannot write " + (dir / file).string());
    manifest.params.push_back({name, static_cast<long>(m.rows()), static_cast<long>(m.cols()), file});
  }
  json j;
  j["format"] = "drivex-checkpoint";
  j["version"] = 1;
  j["model"] = manifest.model;
  j["config"] = manifest.config;
  j["config_hash"] = manifest.config_hash;
  j["init_seed"] = manifest.init_seed;
  j["train_seed"] = manifest.train_seed;
  j["step"] = manifest.step;
  j["epoch"] = manifest.epoch;
  j["dtype"] = "float32-le";
  json plist = json::array();
  for (const auto& p : manifest.params) {
    plist.push_back({{"name", p.name}, {"shape", {p.rows, p.cols}}, {"file", p.file}});
  }
  j["params"] = std::move(plist);
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint manifest not found: " + path.string());
  Manifest m;
  try {
    const json j = json::parse(in);
    if (j.at("format").get<std::string>() != "drivex-checkpoint") throw std::runtime_error("not a drivex checkpoint");
    m.model = j.at("model").get<std::string>();
    m.config = j.at("config");
    m.config_hash = j.at("config_hash").get<std::string>();
    m.init_seed = j.at("init_seed").get<std::uint64_t>();
    m.train_seed = j.at("train_seed").get<std::uint64_t>();
    m.step = j.at("step").get<long>();
    m.epoch = j.at("epoch").get<int>();
    for (const auto& p : j.at("params")) {
      m.params.push_back({p.at("name").get<std::string>(), p.at("shape").at(0).get<long>(),
                          p.at("shape").at(1).get<long>(), p.at("file").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  if (config_hash(m.config) != m.config_hash) {
    throw std::runtime_error(path.string() + ": config hash mismatch");
  }
  return m;
}

template <typename T>
Manifest load(const fs::path& dir, nn::ParamStore<T>& params) {
  Manifest m = read_manifest(dir);
  if (m.params.size() != params.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(m.params.size()) + " parameters, model has " +
                             std::to_string(params.size()));
  }
  std::vector<float> buf;
  for (size_t i = 0; i < m.params.size(); ++i) {
    const auto& e = m.params[i];
    const auto& [name, var] = params.entries()[i];
    if (e.name != name) throw std::runtime_error("checkpoint parameter " + e.name + " where " + name + " expected");
    if (e.rows != var.rows() || e.cols != var.cols()) {
      throw std::runtime_error("checkpoint parameter " + name + " has shape " + std::to_string(e.rows) + "x" +
                               std::to_string(e.cols));
    }
    const fs::path path = dir / e.file;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("missing parameter file " + path.string());
    buf.assign(static_cast<size_t>(e.rows * e.cols), 0.0f);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)) || in.peek() != EOF) {
      throw std::runtime_error("parameter file " + path.string() + " has the wrong size");
    }
    nn::Var<T> v = var;
    auto& w = v.mutable_value();
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<T>(buf[static_cast<size_t>(k)]);
  }
  return m;
}

json to_json(const generator::GeneratorConfig& c) {
  return {{"dim", c.dim},         {"heads", c.heads},
          {"blocks", c.blocks},   {"ffn_mult", c.ffn_mult},
          {"n_max", c.n_max},     {"crop_size", c.crop_size},
          {"frame_height", c.frame_height}, {"frame_width", c.frame_width},
          {"init_seed", c.init_seed}};
}

generator::GeneratorConfig generator_config_from_json(const json& j) {
  generator::GeneratorConfig c;
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.n_max = j.at("n_max").get<int>();
  c.crop_size = j.at("crop_size").get<int>();
  c.frame_height = j.at("frame_height").get<int>();
  c.frame_width = j.at("frame_width").get<int>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

json to_json(const vlm::VlmConfig& c) {
  return {{"frame_height", c.frame_height},
          {"frame_width", c.frame_width},
          {"patch_size", c.patch_size},
          {"dim", c.dim},
          {"heads", c.heads},
          {"encoder_blocks", c.encoder_blocks},
          {"qformer_blocks", c.qformer_blocks},
          {"decoder_blocks", c.decoder_blocks},
          {"queries", c.queries},
          {"frames", c.frames},
          {"ffn_mult", c.ffn_mult},
          {"max_length", c.max_length},
          {"init_seed", c.init_seed}};
}

vlm::VlmConfig vlm_config_from_json(const json& j) {
  vlm::VlmConfig c;
  c.frame_height = j.at("frame_height").get<int>();
  c.frame_width = j.at("frame_width").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.encoder_blocks = j.at("encoder_blocks").get<int>();
  c.qformer_blocks = j.at("qformer_blocks").get<int>();
  c.decoder_blocks = j.at("decoder_blocks").get<int>();
  c.queries = j.at("queries").get<int>();
  c.frames = j.at("frames").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.max_length = j.at("max_length").get<int>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

generator::AttentionGenerator<float> load_generator(const fs::path& dir) {
  const Manifest m = read_manifest(dir);
  if (m.model != "attention_generator") {
    throw std::runtime_error(dir.string() + " holds a " + m.model + " checkpoint, not an attention generator");
  }
  generator::AttentionGenerator<float> model(generator_config_from_json(m.config.at("model")));
  load(dir, model.params());
  return model;
}

vlm::MiniVlm<float> load_vlm(const fs::path& dir) {
  const Manifest m = read_manifest(dir);
  if (m.model != "mini_vlm") {
    throw std::runtime_error(dir.string() + " holds a " + m.model + " checkpoint, not a mini VLM");
  }
  vlm::MiniVlm<float> model(vlm_config_from_json(m.config.at("model")));
  load(dir, model.params());
  return model;
}

template void save<float>(const fs::path&, const nn::ParamStore<float>&, Manifest);
template void save<double>(const fs::path&, const nn::ParamStore<double>&, Manifest);
template Manifest load<float>(const fs::path&, nn::ParamStore<float>&);
template Manifest load<double>(const fs::path&, nn::ParamStore<double>&);

}  // namespace drivex::checkpoint
