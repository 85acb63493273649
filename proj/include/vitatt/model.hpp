// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vitatt/ops.hpp"
#include "vitatt/tensor.hpp"

namespace vitatt {

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 3;
  std::size_t embed_dim = 16;
  std::size_t num_encoder_layers = 2;
  std::size_t num_heads = 2;
  std::size_t mlp_hidden = 32;
  std::size_t num_metadata_slots = 4;
  std::size_t metadata_width = 3;
  std::size_t num_classes = 3;
  std::size_t head_hidden = 32;
  // Encoder + head only: no metadata tokens and no fusion layer.
  bool image_only = false;

  std::size_t grid_size() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid_size() * grid_size(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t image_tokens() const { return num_patches() + 1; }
  std::size_t metadata_tokens() const { return image_only ? 0 : num_metadata_slots; }
  std::size_t total_tokens() const { return image_tokens() + metadata_tokens(); }

  // Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  // image 32, patch 8, d=16, L=2, h=2, M=4, C=3
  static ModelConfig tiny();
  // Geometry of vit_small_patch16_224: image 224, patch 16, d=384, 12 layers,
  // 6 heads, MLP 1536.
  static ModelConfig vit_small_patch16_224(std::size_t metadata_slots,
                                           std::size_t metadata_width,
                                           std::size_t classes);

  bool operator==(const ModelConfig&) const = default;
};

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderLayerWeights {
  Tensor ln1_gain, ln1_bias;
  AttentionWeights attn;
  Tensor ln2_gain, ln2_bias;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

enum class ParamGroup { kEncoder, kOther };

struct NamedTensor {
  std::string name;
  Tensor tensor;
  ParamGroup group;
};

/// Every learnable weight of the fusion model, plus the head's batch-norm
/// running statistics. Linear weights are stored [in × out].
struct VitAttParams {
  // image encoder
  Tensor patch_w, patch_b;
  Tensor cls_token;  // [1×d]
  Tensor pos_embed;  // [(P+1)×d]
  std::vector<EncoderLayerWeights> encoder;
  Tensor encoder_norm_gain, encoder_norm_bias;
  // metadata embedding: one linear map per slot, then a shared layer norm
  Tensor meta_w;  // [M×w×d]
  Tensor meta_b;  // [M·d]
  Tensor meta_norm_gain, meta_norm_bias;
  // fusion self-attention
  AttentionWeights fusion;
  // classification head
  Tensor head_w1, head_b1, head_bn_gain, head_bn_bias, head_w2, head_b2;
  BatchNormStats head_bn;

  // Truncated-normal(0.02) weights and embeddings, zero biases, unit gains.
  static VitAttParams init(const ModelConfig& config, std::uint64_t seed);

  // Learnable tensors in a fixed order. Image-only models omit the metadata
  // and fusion weights.
  std::vector<NamedTensor> named(const ModelConfig& config) const;

  std::size_t parameter_count(const ModelConfig& config) const;

  // Deep copy; the copy shares no storage with this one.
  VitAttParams clone(const ModelConfig& config) const;
};

// One sample's channel-major image [ch×H×W] and encoded metadata [M×w].
struct Batch {
  Tensor images;    // [B×ch×H×W]
  Tensor metadata;  // [B×M×w]; may be empty for image-only models
  std::size_t size() const { return images.defined() ? images.dim(0) : 0; }
};

struct AttentionRecord {
  Tensor probs;  // [B·h × T × T], softmax rows
  std::size_t tokens = 0;
  std::size_t heads = 0;
  bool fusion = false;
};

struct ForwardTrace {
  std::vector<AttentionRecord> attention;  // encoder layers first, fusion last
  Tensor pre_fusion_cls;                   // [B×d]
  Tensor post_fusion_cls;                  // [B×d]
  Tensor logits;                           // [B×C]
};

enum class Mode { kTrain, kEval };

// [ch×H×W] → [P × ch·ps²]; row p is patch p in row-major grid order, each
// flattened channel-major.
Tensor patchify(const Tensor& image, std::size_t patch_size);
// Inverse of patchify.
Tensor unpatchify(const Tensor& patches, std::size_t channels,
                  std::size_t image_size, std::size_t patch_size);

// X[B·T × d] → [B·T × d]. Per head: softmax(Q·Kᵀ/√d_h)·V, heads
// concatenated then projected. The attention probabilities are appended to
// `records` when it is non-null.
Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w,
                            std::size_t batch, std::size_t heads,
                            std::vector<AttentionRecord>* records = nullptr,
                            bool fusion = false);

// Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x)) with GELU.
Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w,
                     std::size_t batch, std::size_t heads,
                     std::vector<AttentionRecord>* records = nullptr);

// [B×M×w] → [B·M × d]
Tensor embed_metadata(const Tensor& encoded, const VitAttParams& params,
                      const ModelConfig& config);

// Interleaves per-sample image tokens [B·(P+1) × d] and metadata tokens
// [B·M × d] into [B·T × d] and applies z + MHA(z).
Tensor fuse(const Tensor& image_tokens, const Tensor& metadata_tokens,
            const VitAttParams& params, const ModelConfig& config,
            std::size_t batch, std::vector<AttentionRecord>* records = nullptr);

// linear → batch norm → swish → linear. Needs B ≥ 2 in training mode.
Tensor classify_head(const Tensor& class_embeddings, VitAttParams& params,
                     Mode mode);

// Full pipeline. With `record` set, attention maps land in the trace.
ForwardTrace forward(const Batch& batch, VitAttParams& params,
                     const ModelConfig& config, Mode mode, bool record = false);

}  // namespace vitatt
