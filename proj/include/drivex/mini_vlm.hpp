#pragma once

// Miniature query-transformer vision-language model: a patch encoder, a
// per-frame Q-Former whose cross-attention can be restricted by a patch
// attention map, temporal concatenation of the per-frame query tokens and a
// small causal decoder that treats them as a prompt prefix.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "drivex/geometry.hpp"
#include "drivex/image.hpp"
#include "drivex/nn/layers.hpp"

namespace drivex::vlm {

/// Closed word vocabulary: PAD, BOS, EOS, then the template words.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  Vocabulary();

  int size() const { return static_cast<int>(words_.size()); }
  const std::string& word(int id) const;
  /// Throws std::invalid_argument for words outside the vocabulary.
  int id(const std::string& word) const;

  /// Whitespace-split words followed by EOS.
  std::vector<int> encode(const std::string& text) const;
  /// Joins ids up to the first EOS, skipping PAD and BOS.
  std::string decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

struct VlmConfig {
  int frame_height = 64;
  int frame_width = 64;
  int patch_size = 8;
  int dim = 64;
  int heads = 4;
  int encoder_blocks = 2;
  int qformer_blocks = 2;
  int decoder_blocks = 2;
  int queries = 8;
  int frames = 4;
  int ffn_mult = 4;
  int max_length = 12;
  uint64_t init_seed = 0;

  int patch_rows() const { return frame_height / patch_size; }
  int patch_cols() const { return frame_width / patch_size; }
  int patch_count() const { return patch_rows() * patch_cols(); }
  int patch_features() const { return patch_size * patch_size * 3; }
};

/// Throws std::invalid_argument on inconsistent sizes.
void validate(const VlmConfig& config);

enum class MaskMode { train, infer };

/// One byte per patch, 1 = excluded from cross-attention. Empty means no
/// patch is excluded.
using PatchMask = std::vector<unsigned char>;

/// Resolves a patch attention map into a key mask. An absent, all-ones or
/// all-zeros map yields the empty mask. In train mode each map-0 patch is
/// excluded with probability p_mask; in infer mode every map-0 patch is.
/// Throws std::invalid_argument when the grid does not match `patch_count`.
PatchMask resolve_mask(const std::optional<geometry::PatchAttentionMap>& map, int patch_count,
                       MaskMode mode, double p_mask, std::mt19937_64& rng);

/// Fixed 2-D sinusoidal table, one row per patch in row-major grid order.
nn::Matrix<double> patch_positional_encoding(int rows, int cols, int dim);

/// Row-major patch flattening of an HWC image, one row per patch.
template <typename T>
nn::Matrix<T> patchify(const Image& frame, int patch_size);

template <typename T>
class MiniVlm {
 public:
  static constexpr const char* kEncoderPrefixes[] = {"patch_embed.", "encoder."};

  explicit MiniVlm(const VlmConfig& config);
  // Layers alias the parameter store, so copies would share weights.
  MiniVlm(const MiniVlm&) = delete;
  MiniVlm& operator=(const MiniVlm&) = delete;
  MiniVlm(MiniVlm&&) = default;
  MiniVlm& operator=(MiniVlm&&) = default;

  const VlmConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// Freezes or unfreezes the patch projection and encoder blocks.
  void set_encoder_trainable(bool trainable);

  /// Patch projection only, before positional encodings: P x d.
  nn::Var<T> embed_patches(const Image& frame) const;
  /// Projection, positional encodings and encoder blocks: P x d. Masked
  /// patches are also excluded as keys inside the encoder so that their
  /// content cannot reach any unmasked position.
  nn::Var<T> encode_frame(const Image& frame, const PatchMask& mask = {}) const;
  /// q x d query tokens for one frame.
  nn::Var<T> qformer_extract(const nn::Var<T>& patches, const PatchMask& mask = {},
                             std::vector<nn::Matrix<T>>* cross_probs = nullptr) const;
  /// Encoder run over the unmasked patches only, one row per visible patch
  /// in patch order. Matches the unmasked rows of encode_frame(frame, mask)
  /// up to rounding, at a fraction of the cost.
  nn::Var<T> encode_visible(const Image& frame, const PatchMask& mask) const;
  /// Q-Former over any number of visible patch embeddings, unmasked.
  nn::Var<T> qformer_visible(const nn::Var<T>& visible,
                             std::vector<nn::Matrix<T>>* cross_probs = nullptr) const;
  /// Resolves the mask and runs encode_visible and qformer_visible. An
  /// empty mask takes the full-frame path, so absent and all-ones maps give
  /// bit-identical tokens.
  nn::Var<T> frame_tokens(const Image& frame, const std::optional<geometry::PatchAttentionMap>& map,
                          MaskMode mode, double p_mask, std::mt19937_64& rng) const;

  /// Teacher-forced mean cross-entropy of gt_tokens (ending in EOS) given
  /// the prefix T_V. PAD targets are ignored.
  nn::Var<T> decode_loss(const nn::Var<T>& t_v, const std::vector<int>& gt_tokens) const;
  /// Greedy decoding from BOS. Returns generated ids without BOS; EOS is
  /// included when it was produced. At most max_length ids.
  std::vector<int> generate(const nn::Var<T>& t_v) const;
  std::string generate_text(const nn::Var<T>& t_v) const;

 private:
  void check_frame(const Image& frame) const;
  nn::Var<T> decoder_hidden(const nn::Var<T>& t_v, const std::vector<int>& inputs) const;

  VlmConfig config_;
  Vocabulary vocab_;
  nn::ParamStore<T> params_;
  nn::Linear<T> patch_embed_;
  nn::Var<T> patch_pos_;
  std::vector<nn::EncoderBlock<T>> encoder_;
  nn::LayerNorm<T> encoder_norm_;

  struct QFormerBlock {
    nn::LayerNorm<T> ln_self, ln_cross, ln_ffn;
    nn::MultiHeadAttention<T> self_attn, cross_attn;
    nn::FeedForward<T> ffn;
  };
  nn::Var<T> queries_;
  std::vector<QFormerBlock> qformer_;
  nn::LayerNorm<T> qformer_norm_;

  nn::Var<T> token_embed_;
  nn::Var<T> text_pos_;
  nn::Var<T> frame_pos_;
  std::vector<nn::EncoderBlock<T>> decoder_;
  nn::LayerNorm<T> decoder_norm_;
};

/// Concatenates per-frame token blocks in the given order. Throws
/// std::invalid_argument on an empty list or ragged shapes.
template <typename T>
nn::Var<T> concat_temporal(const std::vector<nn::Var<T>>& per_frame);

/// Index of the largest entry, ties toward the lower index.
template <typename T>
int argmax_lowest(const nn::Matrix<T>& row);

}  // namespace drivex::vlm
