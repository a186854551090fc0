#include "drivex/mini_vlm.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "drivex/scene_data.hpp"

namespace drivex::vlm {

using nn::Matrix;
using nn::Var;

Vocabulary::Vocabulary() {
  words_ = {"<pad>", "<bos>", "<eos>"};
  for (const auto& w : scene::template_words()) words_.push_back(w);
  for (int i = 0; i < size(); ++i) index_[words_[static_cast<size_t>(i)]] = i;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("token id out of vocabulary: " + std::to_string(id));
  return words_[static_cast<size_t>(id)];
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw std::invalid_argument("word out of vocabulary: " + word);
  return it->second;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> ids;
  std::istringstream in(text);
  std::string w;
  while (in >> w) ids.push_back(id(w));
  ids.push_back(kEos);
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int t : ids) {
    if (t == kEos) break;
    if (t == kPad || t == kBos) continue;
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

void validate(const VlmConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("vlm config: " + what); };
  if (c.patch_size <= 0 || c.frame_height <= 0 || c.frame_width <= 0) fail("non-positive frame or patch size");
  if (c.frame_height % c.patch_size != 0 || c.frame_width % c.patch_size != 0) {
    fail("frame size not divisible by patch size");
  }
  if (c.dim <= 0 || c.heads <= 0 || c.dim % c.heads != 0) fail("dim must be a positive multiple of heads");
  if (c.dim % 4 != 0) fail("dim must be a multiple of 4 for 2-D positional encodings");
  if (c.encoder_blocks < 0 || c.qformer_blocks < 0 || c.decoder_blocks < 0) fail("negative block count");
  if (c.queries <= 0 || c.frames <= 0 || c.ffn_mult <= 0 || c.max_length <= 0) {
    fail("queries, frames, ffn_mult and max_length must be positive");
  }
}

PatchMask resolve_mask(const std::optional<geometry::PatchAttentionMap>& map, int patch_count,
                       MaskMode mode, double p_mask, std::mt19937_64& rng) {
  if (!map) return {};
  if (map->size() != patch_count) {
    throw std::invalid_argument("patch map has " + std::to_string(map->size()) + " cells, expected " +
                                std::to_string(patch_count));
  }
  if (!(p_mask >= 0.0 && p_mask <= 1.0)) throw std::invalid_argument("p_mask must lie in [0, 1]");
  const auto& cells = map->cells();
  if (map->count() == 0) return {};
  PatchMask mask(cells.size(), 0);
  bool any = false;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (size_t j = 0; j < cells.size(); ++j) {
    if (cells[j] != 0) continue;
    const bool drop = mode == MaskMode::infer || u(rng) < p_mask;
    mask[j] = drop ? 1 : 0;
    any = any || drop;
  }
  if (!any) return {};
  return mask;
}

Matrix<double> patch_positional_encoding(int rows, int cols, int dim) {
  if (dim % 4 != 0) throw std::invalid_argument("positional encoding width must be a multiple of 4");
  const int half = dim / 2;
  const int pairs = half / 2;
  Matrix<double> pe(rows * cols, dim);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int p = r * cols + c;
      for (int k = 0; k < pairs; ++k) {
        const double freq = std::pow(100.0, -static_cast<double>(k) / pairs);
        pe(p, 2 * k) = std::sin(r * freq);
        pe(p, 2 * k + 1) = std::cos(r * freq);
        pe(p, half + 2 * k) = std::sin(c * freq);
        pe(p, half + 2 * k + 1) = std::cos(c * freq);
      }
    }
  }
  return pe;
}

template <typename T>
Matrix<T> patchify(const Image& frame, int patch_size) {
  const int pr = frame.height / patch_size;
  const int pc = frame.width / patch_size;
  Matrix<T> out(pr * pc, patch_size * patch_size * 3);
  for (int r = 0; r < pr; ++r) {
    for (int c = 0; c < pc; ++c) {
      Eigen::Index col = 0;
      for (int y = 0; y < patch_size; ++y) {
        const size_t base = (static_cast<size_t>(r * patch_size + y) * frame.width + c * patch_size) * 3;
        for (int x = 0; x < patch_size * 3; ++x) {
          out(r * pc + c, col++) = static_cast<T>(frame.pixels[base + static_cast<size_t>(x)]);
        }
      }
    }
  }
  return out;
}

namespace {

template <typename T>
Var<T> uniform_param(nn::ParamStore<T>& store, const std::string& name, int rows, int cols,
                     std::mt19937_64& rng) {
  return store.add(name, nn::uniform_matrix<T>(rows, cols, 0.05, rng));
}

}  // namespace

template <typename T>
MiniVlm<T>::MiniVlm(const VlmConfig& config) : config_(config) {
  validate(config_);
  std::mt19937_64 rng(config_.init_seed);
  const int d = config_.dim;
  const int hidden = d * config_.ffn_mult;
  patch_embed_ = nn::Linear<T>(params_, "patch_embed", config_.patch_features(), d, rng);
  patch_pos_ = Var<T>(patch_positional_encoding(config_.patch_rows(), config_.patch_cols(), d).template cast<T>());
  for (int b = 0; b < config_.encoder_blocks; ++b) {
    encoder_.emplace_back(params_, "encoder.block" + std::to_string(b), d, config_.heads, hidden, rng);
  }
  encoder_norm_ = nn::LayerNorm<T>(params_, "encoder.final_norm", d);

  queries_ = uniform_param(params_, "qformer.queries", config_.queries, d, rng);
  for (int b = 0; b < config_.qformer_blocks; ++b) {
    const std::string n = "qformer.block" + std::to_string(b);
    QFormerBlock blk;
    blk.ln_self = nn::LayerNorm<T>(params_, n + ".ln_self", d);
    blk.ln_cross = nn::LayerNorm<T>(params_, n + ".ln_cross", d);
    blk.ln_ffn = nn::LayerNorm<T>(params_, n + ".ln_ffn", d);
    blk.self_attn = nn::MultiHeadAttention<T>(params_, n + ".self_attn", d, config_.heads, rng);
    blk.cross_attn = nn::MultiHeadAttention<T>(params_, n + ".cross_attn", d, config_.heads, rng);
    blk.ffn = nn::FeedForward<T>(params_, n + ".ffn", d, hidden, rng);
    qformer_.push_back(std::move(blk));
  }
  qformer_norm_ = nn::LayerNorm<T>(params_, "qformer.final_norm", d);

  token_embed_ = uniform_param(params_, "decoder.token_embed", vocab_.size(), d, rng);
  text_pos_ = uniform_param(params_, "decoder.text_pos", config_.max_length, d, rng);
  frame_pos_ = uniform_param(params_, "decoder.frame_pos", config_.frames, d, rng);
  for (int b = 0; b < config_.decoder_blocks; ++b) {
    decoder_.emplace_back(params_, "decoder.block" + std::to_string(b), d, config_.heads, hidden, rng);
  }
  decoder_norm_ = nn::LayerNorm<T>(params_, "decoder.final_norm", d);
}

template <typename T>
void MiniVlm<T>::set_encoder_trainable(bool trainable) {
  for (const char* prefix : kEncoderPrefixes) params_.set_trainable(prefix, trainable);
}

template <typename T>
void MiniVlm<T>::check_frame(const Image& frame) const {
  if (frame.height != config_.frame_height || frame.width != config_.frame_width ||
      frame.pixels.size() != static_cast<size_t>(frame.height) * frame.width * 3) {
    throw std::invalid_argument("frame is " + std::to_string(frame.height) + "x" + std::to_string(frame.width) +
                                ", model expects " + std::to_string(config_.frame_height) + "x" +
                                std::to_string(config_.frame_width) + "x3");
  }
}

template <typename T>
Var<T> MiniVlm<T>::embed_patches(const Image& frame) const {
  check_frame(frame);
  return patch_embed_(Var<T>(patchify<T>(frame, config_.patch_size)));
}

template <typename T>
Var<T> MiniVlm<T>::encode_frame(const Image& frame, const PatchMask& mask) const {
  if (!mask.empty() && static_cast<int>(mask.size()) != config_.patch_count()) {
    throw std::invalid_argument("patch mask length mismatch");
  }
  Var<T> x = nn::add(embed_patches(frame), patch_pos_);
  for (const auto& blk : encoder_) x = blk(x, mask);
  return encoder_norm_(x);
}

template <typename T>
Var<T> MiniVlm<T>::encode_visible(const Image& frame, const PatchMask& mask) const {
  if (mask.empty()) return encode_frame(frame);
  if (static_cast<int>(mask.size()) != config_.patch_count()) {
    throw std::invalid_argument("patch mask length mismatch");
  }
  check_frame(frame);
  std::vector<int> keep;
  for (size_t j = 0; j < mask.size(); ++j) {
    if (!mask[j]) keep.push_back(static_cast<int>(j));
  }
  if (keep.empty()) throw std::invalid_argument("patch mask excludes every patch");
  const Matrix<T> pixels = patchify<T>(frame, config_.patch_size);
  Matrix<T> rows(static_cast<Eigen::Index>(keep.size()), pixels.cols());
  for (size_t i = 0; i < keep.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = pixels.row(keep[i]);
  Var<T> x = nn::add(patch_embed_(Var<T>(std::move(rows))), nn::gather_rows(patch_pos_, keep));
  for (const auto& blk : encoder_) x = blk(x);
  return encoder_norm_(x);
}

template <typename T>
Var<T> MiniVlm<T>::qformer_visible(const Var<T>& visible, std::vector<Matrix<T>>* cross_probs) const {
  if (visible.rows() == 0 || visible.cols() != config_.dim) {
    throw std::invalid_argument("qformer: expected a nonempty set of " + std::to_string(config_.dim) +
                                "-wide patch embeddings");
  }
  Var<T> x = queries_;
  for (size_t b = 0; b < qformer_.size(); ++b) {
    const auto& blk = qformer_[b];
    const Var<T> hs = blk.ln_self(x);
    x = nn::add(x, blk.self_attn(hs, hs));
    std::vector<Matrix<T>>* probs = (cross_probs && b + 1 == qformer_.size()) ? cross_probs : nullptr;
    x = nn::add(x, blk.cross_attn(blk.ln_cross(x), visible, {}, false, probs));
    x = nn::add(x, blk.ffn(blk.ln_ffn(x)));
  }
  return qformer_norm_(x);
}

template <typename T>
Var<T> MiniVlm<T>::qformer_extract(const Var<T>& patches, const PatchMask& mask,
                                   std::vector<Matrix<T>>* cross_probs) const {
  if (patches.rows() != config_.patch_count() || patches.cols() != config_.dim) {
    throw std::invalid_argument("qformer: expected " + std::to_string(config_.patch_count()) + "x" +
                                std::to_string(config_.dim) + " patch embeddings");
  }
  if (!mask.empty() && static_cast<int>(mask.size()) != config_.patch_count()) {
    throw std::invalid_argument("qformer: patch mask length mismatch");
  }
  Var<T> x = queries_;
  for (size_t b = 0; b < qformer_.size(); ++b) {
    const auto& blk = qformer_[b];
    const Var<T> hs = blk.ln_self(x);
    x = nn::add(x, blk.self_attn(hs, hs));
    std::vector<Matrix<T>>* probs = (cross_probs && b + 1 == qformer_.size()) ? cross_probs : nullptr;
    x = nn::add(x, blk.cross_attn(blk.ln_cross(x), patches, mask, false, probs));
    x = nn::add(x, blk.ffn(blk.ln_ffn(x)));
  }
  return qformer_norm_(x);
}

template <typename T>
Var<T> MiniVlm<T>::frame_tokens(const Image& frame, const std::optional<geometry::PatchAttentionMap>& map,
                                MaskMode mode, double p_mask, std::mt19937_64& rng) const {
  if (map && (map->rows() != config_.patch_rows() || map->cols() != config_.patch_cols())) {
    throw std::invalid_argument("patch map grid " + std::to_string(map->rows()) + "x" + std::to_string(map->cols()) +
                                " does not match the model's " + std::to_string(config_.patch_rows()) + "x" +
                                std::to_string(config_.patch_cols()));
  }
  const PatchMask mask = resolve_mask(map, config_.patch_count(), mode, p_mask, rng);
  if (mask.empty()) return qformer_extract(encode_frame(frame));
  return qformer_visible(encode_visible(frame, mask));
}

template <typename T>
Var<T> MiniVlm<T>::decoder_hidden(const Var<T>& t_v, const std::vector<int>& inputs) const {
  const int q = config_.queries;
  if (t_v.cols() != config_.dim || t_v.rows() == 0 || t_v.rows() % q != 0 ||
      t_v.rows() / q > config_.frames) {
    throw std::invalid_argument("decoder: prefix must be n*" + std::to_string(q) + " x " +
                                std::to_string(config_.dim) + " with n <= " + std::to_string(config_.frames));
  }
  if (inputs.size() > static_cast<size_t>(config_.max_length)) {
    throw std::invalid_argument("decoder: sequence longer than max_length");
  }
  std::vector<int> frame_ids(static_cast<size_t>(t_v.rows()));
  for (size_t i = 0; i < frame_ids.size(); ++i) frame_ids[i] = static_cast<int>(i) / q;
  std::vector<int> positions(inputs.size());
  for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);

  const Var<T> prefix = nn::add(t_v, nn::gather_rows(frame_pos_, frame_ids));
  const Var<T> text = nn::add(nn::gather_rows(token_embed_, inputs), nn::gather_rows(text_pos_, positions));
  Var<T> x = nn::concat_rows<T>({prefix, text});
  for (const auto& blk : decoder_) x = blk(x, {}, true);
  x = nn::slice_rows(x, t_v.rows(), static_cast<Eigen::Index>(inputs.size()));
  return decoder_norm_(x);
}

template <typename T>
Var<T> MiniVlm<T>::decode_loss(const Var<T>& t_v, const std::vector<int>& gt_tokens) const {
  if (gt_tokens.empty() || gt_tokens.back() != Vocabulary::kEos) {
    throw std::invalid_argument("decode_loss: target must end with EOS");
  }
  if (gt_tokens.size() > static_cast<size_t>(config_.max_length)) {
    throw std::invalid_argument("decode_loss: target longer than " + std::to_string(config_.max_length));
  }
  for (int t : gt_tokens) vocab_.word(t);
  std::vector<int> inputs{Vocabulary::kBos};
  inputs.insert(inputs.end(), gt_tokens.begin(), gt_tokens.end() - 1);
  std::vector<int> targets(gt_tokens);
  for (int& t : targets) {
    if (t == Vocabulary::kPad) t = -1;
  }
  const Var<T> logits = nn::matmul_nt(decoder_hidden(t_v, inputs), token_embed_);
  return nn::cross_entropy(logits, targets);
}

template <typename T>
int argmax_lowest(const Matrix<T>& row) {
  int best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row.data()[i] > row.data()[best]) best = static_cast<int>(i);
  }
  return best;
}

template <typename T>
std::vector<int> MiniVlm<T>::generate(const Var<T>& t_v) const {
  nn::NoGradGuard no_grad;
  std::vector<int> inputs{Vocabulary::kBos};
  std::vector<int> out;
  for (int step = 0; step < config_.max_length; ++step) {
    const Var<T> h = decoder_hidden(t_v, inputs);
    const Var<T> last = nn::slice_rows(h, h.rows() - 1, 1);
    const int next = argmax_lowest<T>(nn::matmul_nt(last, token_embed_).value());
    out.push_back(next);
    if (next == Vocabulary::kEos) break;
    inputs.push_back(next);
  }
  return out;
}

template <typename T>
std::string MiniVlm<T>::generate_text(const Var<T>& t_v) const {
  return vocab_.decode(generate(t_v));
}

template <typename T>
Var<T> concat_temporal(const std::vector<Var<T>>& per_frame) {
  if (per_frame.empty()) throw std::invalid_argument("concat_temporal: no frames");
  for (size_t i = 1; i < per_frame.size(); ++i) {
    if (per_frame[i].rows() != per_frame[0].rows() || per_frame[i].cols() != per_frame[0].cols()) {
      throw std::invalid_argument("concat_temporal: frame " + std::to_string(i) + " has shape " +
                                  std::to_string(per_frame[i].rows()) + "x" + std::to_string(per_frame[i].cols()) +
                                  ", expected " + std::to_string(per_frame[0].rows()) + "x" +
                                  std::to_string(per_frame[0].cols()));
    }
  }
  return nn::concat_rows(per_frame);
}

template class MiniVlm<float>;
template class MiniVlm<double>;
template Matrix<float> patchify<float>(const Image&, int);
template Matrix<double> patchify<double>(const Image&, int);
template Var<float> concat_temporal<float>(const std::vector<Var<float>>&);
template Var<double> concat_temporal<double>(const std::vector<Var<double>>&);
template int argmax_lowest<float>(const Matrix<float>&);
template int argmax_lowest<double>(const Matrix<double>&);

}  // namespace drivex::vlm
