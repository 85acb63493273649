// SPDX-License-Identifier: Apache-2.0
#include "vitatt/model.hpp"

#include <cmath>
#include <stdexcept>

#include "vitatt/error.hpp"
#include "vitatt/random.hpp"

namespace vitatt {
namespace {

constexpr double kInitStd = 0.02;

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("model config: " + msg);
}

Tensor normal_init(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.truncated_normal(kInitStd);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

AttentionWeights init_attention(Rng& rng, std::size_t d) {
  AttentionWeights w;
  w.wq = normal_init(rng, {d, d});
  w.bq = zeros_param({d});
  w.wk = normal_init(rng, {d, d});
  w.bk = zeros_param({d});
  w.wv = normal_init(rng, {d, d});
  w.bv = zeros_param({d});
  w.wo = normal_init(rng, {d, d});
  w.bo = zeros_param({d});
  return w;
}

void append_attention(std::vector<NamedTensor>& out, const std::string& prefix,
                      const AttentionWeights& w, ParamGroup g) {
  out.push_back({prefix + ".wq", w.wq, g});
  out.push_back({prefix + ".bq", w.bq, g});
  out.push_back({prefix + ".wk", w.wk, g});
  out.push_back({prefix + ".bk", w.bk, g});
  out.push_back({prefix + ".wv", w.wv, g});
  out.push_back({prefix + ".bv", w.bv, g});
  out.push_back({prefix + ".wo", w.wo, g});
  out.push_back({prefix + ".bo", w.bo, g});
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

Tensor clone_tensor(const Tensor& t) {
  return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()),
                t.requires_grad());
}

AttentionWeights clone_attention(const AttentionWeights& w) {
  return {clone_tensor(w.wq), clone_tensor(w.bq), clone_tensor(w.wk), clone_tensor(w.bk),
          clone_tensor(w.wv), clone_tensor(w.bv), clone_tensor(w.wo), clone_tensor(w.bo)};
}

}  // namespace

void ModelConfig::validate() const {
  check(image_size > 0 && patch_size > 0, "image_size and patch_size must be positive");
  check(image_size % patch_size == 0, "image_size " + std::to_string(image_size) +
                                          " is not divisible by patch_size " +
                                          std::to_string(patch_size));
  check(channels > 0, "channels must be positive");
  check(embed_dim > 0 && num_heads > 0, "embed_dim and num_heads must be positive");
  check(embed_dim % num_heads == 0, "embed_dim " + std::to_string(embed_dim) +
                                        " is not divisible by num_heads " +
                                        std::to_string(num_heads));
  check(mlp_hidden > 0 && head_hidden > 0, "mlp_hidden and head_hidden must be positive");
  check(num_classes >= 2, "num_classes must be at least 2");
  if (!image_only) {
    check(num_metadata_slots > 0, "num_metadata_slots must be positive unless image_only");
    check(metadata_width > 0, "metadata_width must be positive unless image_only");
  }
}

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::vit_small_patch16_224(std::size_t metadata_slots,
                                               std::size_t metadata_width,
                                               std::size_t classes) {
  ModelConfig c;
  c.image_size = 224;
  c.patch_size = 16;
  c.embed_dim = 384;
  c.num_encoder_layers = 12;
  c.num_heads = 6;
  c.mlp_hidden = 1536;
  c.num_metadata_slots = metadata_slots;
  c.metadata_width = metadata_width;
  c.num_classes = classes;
  c.head_hidden = 384;
  return c;
}

VitAttParams VitAttParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.embed_dim;
  VitAttParams p;
  p.patch_w = normal_init(rng, {config.patch_dim(), d});
  p.patch_b = zeros_param({d});
  p.cls_token = normal_init(rng, {1, d});
  p.pos_embed = normal_init(rng, {config.image_tokens(), d});
  for (std::size_t l = 0; l < config.num_encoder_layers; ++l) {
    EncoderLayerWeights e;
    e.ln1_gain = ones_param({d});
    e.ln1_bias = zeros_param({d});
    e.attn = init_attention(rng, d);
    e.ln2_gain = ones_param({d});
    e.ln2_bias = zeros_param({d});
    e.mlp_w1 = normal_init(rng, {d, config.mlp_hidden});
    e.mlp_b1 = zeros_param({config.mlp_hidden});
    e.mlp_w2 = normal_init(rng, {config.mlp_hidden, d});
    e.mlp_b2 = zeros_param({d});
    p.encoder.push_back(std::move(e));
  }
  p.encoder_norm_gain = ones_param({d});
  p.encoder_norm_bias = zeros_param({d});
  if (!config.image_only) {
    const std::size_t m = config.num_metadata_slots;
    p.meta_w = normal_init(rng, {m, config.metadata_width, d});
    p.meta_b = zeros_param({m * d});
    p.meta_norm_gain = ones_param({d});
    p.meta_norm_bias = zeros_param({d});
    p.fusion = init_attention(rng, d);
  }
  p.head_w1 = normal_init(rng, {d, config.head_hidden});
  p.head_b1 = zeros_param({config.head_hidden});
  p.head_bn_gain = ones_param({config.head_hidden});
  p.head_bn_bias = zeros_param({config.head_hidden});
  p.head_w2 = normal_init(rng, {config.head_hidden, config.num_classes});
  p.head_b2 = zeros_param({config.num_classes});
  p.head_bn = BatchNormStats(config.head_hidden);
  return p;
}

std::vector<NamedTensor> VitAttParams::named(const ModelConfig& config) const {
  using enum ParamGroup;
  std::vector<NamedTensor> out;
  out.push_back({"patch.w", patch_w, kEncoder});
  out.push_back({"patch.b", patch_b, kEncoder});
  out.push_back({"cls_token", cls_token, kEncoder});
  out.push_back({"pos_embed", pos_embed, kEncoder});
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string pre = "encoder." + std::to_string(l);
    const auto& e = encoder[l];
    out.push_back({pre + ".ln1.gain", e.ln1_gain, kEncoder});
    out.push_back({pre + ".ln1.bias", e.ln1_bias, kEncoder});
    append_attention(out, pre + ".attn", e.attn, kEncoder);
    out.push_back({pre + ".ln2.gain", e.ln2_gain, kEncoder});
    out.push_back({pre + ".ln2.bias", e.ln2_bias, kEncoder});
    out.push_back({pre + ".mlp.w1", e.mlp_w1, kEncoder});
    out.push_back({pre + ".mlp.b1", e.mlp_b1, kEncoder});
    out.push_back({pre + ".mlp.w2", e.mlp_w2, kEncoder});
    out.push_back({pre + ".mlp.b2", e.mlp_b2, kEncoder});
  }
  out.push_back({"encoder.norm.gain", encoder_norm_gain, kEncoder});
  out.push_back({"encoder.norm.bias", encoder_norm_bias, kEncoder});
  if (!config.image_only) {
    out.push_back({"meta.w", meta_w, kOther});
    out.push_back({"meta.b", meta_b, kOther});
    out.push_back({"meta.norm.gain", meta_norm_gain, kOther});
    out.push_back({"meta.norm.bias", meta_norm_bias, kOther});
    append_attention(out, "fusion", fusion, kOther);
  }
  out.push_back({"head.w1", head_w1, kOther});
  out.push_back({"head.b1", head_b1, kOther});
  out.push_back({"head.bn.gain", head_bn_gain, kOther});
  out.push_back({"head.bn.bias", head_bn_bias, kOther});
  out.push_back({"head.w2", head_w2, kOther});
  out.push_back({"head.b2", head_b2, kOther});
  return out;
}

std::size_t VitAttParams::parameter_count(const ModelConfig& config) const {
  std::size_t n = 0;
  for (const auto& p : named(config)) n += p.tensor.numel();
  return n;
}

VitAttParams VitAttParams::clone(const ModelConfig& config) const {
  VitAttParams c;
  c.patch_w = clone_tensor(patch_w);
  c.patch_b = clone_tensor(patch_b);
  c.cls_token = clone_tensor(cls_token);
  c.pos_embed = clone_tensor(pos_embed);
  for (const auto& e : encoder) {
    c.encoder.push_back({clone_tensor(e.ln1_gain), clone_tensor(e.ln1_bias),
                         clone_attention(e.attn), clone_tensor(e.ln2_gain),
                         clone_tensor(e.ln2_bias), clone_tensor(e.mlp_w1),
                         clone_tensor(e.mlp_b1), clone_tensor(e.mlp_w2),
                         clone_tensor(e.mlp_b2)});
  }
  c.encoder_norm_gain = clone_tensor(encoder_norm_gain);
  c.encoder_norm_bias = clone_tensor(encoder_norm_bias);
  if (!config.image_only) {
    c.meta_w = clone_tensor(meta_w);
    c.meta_b = clone_tensor(meta_b);
    c.meta_norm_gain = clone_tensor(meta_norm_gain);
    c.meta_norm_bias = clone_tensor(meta_norm_bias);
    c.fusion = clone_attention(fusion);
  }
  c.head_w1 = clone_tensor(head_w1);
  c.head_b1 = clone_tensor(head_b1);
  c.head_bn_gain = clone_tensor(head_bn_gain);
  c.head_bn_bias = clone_tensor(head_bn_bias);
  c.head_w2 = clone_tensor(head_w2);
  c.head_b2 = clone_tensor(head_b2);
  c.head_bn = head_bn;
  return c;
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2)) {
    throw DimensionError("patchify: expected a square [ch×H×W] image, got " +
                         shape_str(image.shape()));
  }
  const std::size_t ch = image.dim(0), size = image.dim(1);
  if (patch_size == 0 || size % patch_size != 0) {
    throw DimensionError("patchify: image size " + std::to_string(size) +
                         " is not divisible by patch size " + std::to_string(patch_size));
  }
  const std::size_t grid = size / patch_size;
  const std::size_t width = ch * patch_size * patch_size;
  // source index of every output element, so the op is a pure gather
  std::vector<std::size_t> src(image.numel());
  for (std::size_t py = 0; py < grid; ++py)
    for (std::size_t px = 0; px < grid; ++px)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < patch_size; ++y)
          for (std::size_t x = 0; x < patch_size; ++x) {
            const std::size_t row = py * grid + px;
            const std::size_t col = (c * patch_size + y) * patch_size + x;
            const std::size_t iy = py * patch_size + y, ix = px * patch_size + x;
            src[row * width + col] = (c * size + iy) * size + ix;
          }
  std::vector<double> out(image.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = image.data()[src[i]];
  return make_result({grid * grid, width}, std::move(out), {image}, "patchify",
                     [image, src = std::move(src)](std::span<const double> g) {
                       std::vector<double> dx(g.size());
                       for (std::size_t i = 0; i < g.size(); ++i) dx[src[i]] = g[i];
                       accumulate_grad(image, dx);
                     });
}

Tensor unpatchify(const Tensor& patches, std::size_t channels, std::size_t image_size,
                  std::size_t patch_size) {
  const std::size_t grid = image_size / patch_size;
  if (patches.rank() != 2 || patches.dim(0) != grid * grid ||
      patches.dim(1) != channels * patch_size * patch_size) {
    throw DimensionError("unpatchify: patches " + shape_str(patches.shape()) +
                         " do not match image geometry");
  }
  const std::size_t width = patches.dim(1);
  std::vector<double> out(patches.numel());
  for (std::size_t py = 0; py < grid; ++py)
    for (std::size_t px = 0; px < grid; ++px)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < patch_size; ++y)
          for (std::size_t x = 0; x < patch_size; ++x) {
            const std::size_t row = py * grid + px;
            const std::size_t col = (c * patch_size + y) * patch_size + x;
            const std::size_t iy = py * patch_size + y, ix = px * patch_size + x;
            out[(c * image_size + iy) * image_size + ix] = patches.data()[row * width + col];
          }
  return Tensor({channels, image_size, image_size}, std::move(out));
}

Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w,
                            std::size_t batch, std::size_t heads,
                            std::vector<AttentionRecord>* records, bool fusion) {
  if (x.rank() != 2 || batch == 0 || x.dim(0) % batch != 0 || x.dim(0) == 0) {
    throw DimensionError("multi_head_attention: input " + shape_str(x.shape()) +
                         " is not " + std::to_string(batch) + " token sequences");
  }
  const std::size_t tokens = x.dim(0) / batch;
  const std::size_t head_dim = x.dim(1) / heads;
  const Tensor q = split_heads(linear(x, w.wq, w.bq), batch, heads);
  const Tensor k = split_heads(linear(x, w.wk, w.bk), batch, heads);
  const Tensor v = split_heads(linear(x, w.wv, w.bv), batch, heads);
  const Tensor scores = scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  const Tensor probs = softmax_rows(scores);
  if (records != nullptr) records->push_back({probs, tokens, heads, fusion});
  const Tensor context = merge_heads(bmm(probs, v), batch, heads);
  return linear(context, w.wo, w.bo);
}

Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w, std::size_t batch,
                     std::size_t heads, std::vector<AttentionRecord>* records) {
  Tensor h = layer_norm(x, w.ln1_gain, w.ln1_bias);
  Tensor out = add(x, multi_head_attention(h, w.attn, batch, heads, records));
  h = layer_norm(out, w.ln2_gain, w.ln2_bias);
  h = linear(gelu(linear(h, w.mlp_w1, w.mlp_b1)), w.mlp_w2, w.mlp_b2);
  return add(out, h);
}

Tensor embed_metadata(const Tensor& encoded, const VitAttParams& params,
                      const ModelConfig& config) {
  const std::size_t m = config.num_metadata_slots, w = config.metadata_width;
  if (encoded.rank() != 3 || encoded.dim(1) != m || encoded.dim(2) != w) {
    throw DimensionError("embed_metadata: encoded metadata " + shape_str(encoded.shape()) +
                         " does not match config [B×" + std::to_string(m) + "×" +
                         std::to_string(w) + "]");
  }
  const std::size_t batch = encoded.dim(0);
  const std::size_t d = config.embed_dim;
  // [B×M×w] → [M×B×w] · [M×w×d] → [M×B×d] → [B×M×d]
  Tensor slots = swap_leading_axes(bmm(swap_leading_axes(encoded), params.meta_w));
  Tensor biased = add_bias(reshape(slots, {batch, m * d}), params.meta_b);
  return layer_norm(reshape(biased, {batch * m, d}), params.meta_norm_gain,
                    params.meta_norm_bias);
}

Tensor fuse(const Tensor& image_tokens, const Tensor& metadata_tokens,
            const VitAttParams& params, const ModelConfig& config, std::size_t batch,
            std::vector<AttentionRecord>* records) {
  const std::size_t ti = config.image_tokens(), m = config.num_metadata_slots;
  if (image_tokens.dim(0) != batch * ti || metadata_tokens.dim(0) != batch * m) {
    throw DimensionError("fuse: token counts " + shape_str(image_tokens.shape()) + " / " +
                         shape_str(metadata_tokens.shape()) + " do not match batch " +
                         std::to_string(batch));
  }
  std::vector<std::size_t> order;
  order.reserve(batch * (ti + m));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < ti; ++t) order.push_back(b * ti + t);
    for (std::size_t j = 0; j < m; ++j) order.push_back(batch * ti + b * m + j);
  }
  const Tensor z = gather_rows(concat_rows({image_tokens, metadata_tokens}), order);
  return add(z, multi_head_attention(z, params.fusion, batch, config.num_heads, records,
                                     /*fusion=*/true));
}

Tensor classify_head(const Tensor& class_embeddings, VitAttParams& params, Mode mode) {
  Tensor h = linear(class_embeddings, params.head_w1, params.head_b1);
  h = batch_norm(h, params.head_bn_gain, params.head_bn_bias, params.head_bn,
                 mode == Mode::kTrain);
  return linear(swish(h), params.head_w2, params.head_b2);
}

ForwardTrace forward(const Batch& batch, VitAttParams& params, const ModelConfig& config,
                     Mode mode, bool record) {
  const std::size_t b = batch.size();
  const std::size_t p = config.num_patches(), ti = config.image_tokens();
  const Shape image_shape{config.channels, config.image_size, config.image_size};
  if (b == 0 || batch.images.rank() != 4 ||
      Shape(batch.images.shape().begin() + 1, batch.images.shape().end()) != image_shape) {
    throw DimensionError("forward: images " +
                         (batch.images.defined() ? shape_str(batch.images.shape()) : "<none>") +
                         " do not match [B×" + std::to_string(config.channels) + "×" +
                         std::to_string(config.image_size) + "×" +
                         std::to_string(config.image_size) + "]");
  }
  ForwardTrace trace;
  std::vector<AttentionRecord>* records = record ? &trace.attention : nullptr;

  std::vector<Tensor> patch_rows;
  patch_rows.reserve(b);
  const std::size_t per_image = shape_numel(image_shape);
  for (std::size_t i = 0; i < b; ++i) {
    Tensor img(image_shape,
               std::vector<double>(batch.images.data().begin() + i * per_image,
                                   batch.images.data().begin() + (i + 1) * per_image));
    patch_rows.push_back(patchify(img, config.patch_size));
  }
  const Tensor patches = linear(concat_rows(patch_rows), params.patch_w, params.patch_b);

  // row 0 is the class token, rows 1.. the patch embeddings of all samples
  std::vector<std::size_t> token_rows, pos_rows;
  token_rows.reserve(b * ti);
  pos_rows.reserve(b * ti);
  for (std::size_t i = 0; i < b; ++i) {
    token_rows.push_back(0);
    for (std::size_t j = 0; j < p; ++j) token_rows.push_back(1 + i * p + j);
    for (std::size_t t = 0; t < ti; ++t) pos_rows.push_back(t);
  }
  Tensor x = gather_rows(concat_rows({params.cls_token, patches}), token_rows);
  x = add(x, gather_rows(params.pos_embed, pos_rows));

  for (const auto& layer : params.encoder) {
    x = encoder_layer(x, layer, b, config.num_heads, records);
  }
  x = layer_norm(x, params.encoder_norm_gain, params.encoder_norm_bias);

  std::vector<std::size_t> cls_rows(b);
  for (std::size_t i = 0; i < b; ++i) cls_rows[i] = i * ti;
  trace.pre_fusion_cls = gather_rows(x, cls_rows);

  if (config.image_only) {
    trace.post_fusion_cls = trace.pre_fusion_cls;
  } else {
    const Tensor meta = embed_metadata(batch.metadata, params, config);
    const Tensor fused = fuse(x, meta, params, config, b, records);
    const std::size_t t_all = config.total_tokens();
    for (std::size_t i = 0; i < b; ++i) cls_rows[i] = i * t_all;
    trace.post_fusion_cls = gather_rows(fused, cls_rows);
  }
  trace.logits = classify_head(trace.post_fusion_cls, params, mode);
  return trace;
}

}  // namespace vitatt
