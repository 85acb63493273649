// SPDX-License-Identifier: Apache-2.0
#include "vitatt/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "vitatt/error.hpp"

namespace vitatt {
namespace {

using nlohmann::json;

#define VITATT_CONFIG_FIELDS(X) \
  X(image_size)                 \
  X(patch_size)                 \
  X(channels)                   \
  X(embed_dim)                  \
  X(num_encoder_layers)         \
  X(num_heads)                  \
  X(mlp_hidden)                 \
  X(num_metadata_slots)         \
  X(metadata_width)             \
  X(num_classes)                \
  X(head_hidden)                \
  X(image_only)

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()},
              {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

void fill_tensor(Tensor& t, const json& j, const std::string& name) {
  const auto shape = j.at("shape").get<Shape>();
  if (shape != t.shape()) {
    throw DataError("checkpoint: parameter '" + name + "' has shape " + shape_str(shape) +
                    ", config expects " + shape_str(t.shape()));
  }
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != t.numel()) {
    throw DataError("checkpoint: parameter '" + name + "' has " +
                    std::to_string(data.size()) + " values");
  }
  std::copy(data.begin(), data.end(), t.mutable_data().begin());
}

}  // namespace

json config_to_json(const ModelConfig& c) {
  json j;
#define X(field) j[#field] = c.field;
  VITATT_CONFIG_FIELDS(X)
#undef X
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    bool known = false;
#define X(field)                        \
  if (key == #field) {                  \
    value.get_to(c.field);              \
    known = true;                       \
  }
    VITATT_CONFIG_FIELDS(X)
#undef X
    if (!known) throw std::invalid_argument("model config: unknown key '" + key + "'");
  }
  return c;
}

std::string serialize_checkpoint(const ModelConfig& config, const VitAttParams& params,
                                 const json& extra) {
  json params_json = json::object();
  for (const auto& p : params.named(config)) params_json[p.name] = tensor_to_json(p.tensor);
  json doc;
  doc["format"] = kCheckpointMagic;
  doc["config"] = config_to_json(config);
  doc["parameters"] = std::move(params_json);
  doc["buffers"] = {{"head.bn.running_mean", params.head_bn.running_mean},
                    {"head.bn.running_var", params.head_bn.running_var}};
  doc["extra"] = extra;
  return doc.dump(1) + "\n";
}

Checkpoint parse_checkpoint(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("checkpoint: not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("format", std::string{}) != kCheckpointMagic) {
    throw DataError("checkpoint: missing format marker " + std::string(kCheckpointMagic));
  }
  try {
    Checkpoint ck;
    ck.config = config_from_json(doc.at("config"));
    ck.params = VitAttParams::init(ck.config, 0);
    const json& pj = doc.at("parameters");
    for (auto& p : ck.params.named(ck.config)) {
      if (!pj.contains(p.name)) throw DataError("checkpoint: missing parameter '" + p.name + "'");
      fill_tensor(p.tensor, pj.at(p.name), p.name);
    }
    const json& bj = doc.at("buffers");
    ck.params.head_bn.running_mean = bj.at("head.bn.running_mean").get<std::vector<double>>();
    ck.params.head_bn.running_var = bj.at("head.bn.running_var").get<std::vector<double>>();
    if (ck.params.head_bn.running_mean.size() != ck.config.head_hidden ||
        ck.params.head_bn.running_var.size() != ck.config.head_hidden) {
      throw DataError("checkpoint: batch-norm buffers do not match head_hidden");
    }
    ck.extra = doc.value("extra", json::object());
    return ck;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: malformed document: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const VitAttParams& params, const json& extra) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << serialize_checkpoint(config, params, extra);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace vitatt
