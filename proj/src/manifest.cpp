#include "staticquant/manifest.hpp"

#include <bit>
#include <cstdio>
#include <fstream>

namespace sq {

using nlohmann::json;

std::string fnv1a_hex(const float* data, std::size_t count) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < count; ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(data[i]);
    for (int b = 0; b < 4; ++b) {
      h ^= (bits >> (8 * b)) & 0xff;
      h *= 0x100000001b3ull;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

namespace {

const char* method_name(InitMethod m) {
  return m == InitMethod::mean_based ? "mean_based" : "max_min";
}

InitMethod method_from_name(const std::string& s) {
  if (s == "mean_based") return InitMethod::mean_based;
  if (s == "max_min") return InitMethod::max_min;
  throw ConfigError("manifest: unknown init method '" + s + "'");
}

Stage stage_from_name(const std::string& s) {
  if (s == "one") return Stage::one;
  if (s == "two") return Stage::two;
  if (s == "excluded") return Stage::excluded;
  throw ConfigError("manifest: unknown stage '" + s + "'");
}

json site_to_json(const QuantSite& s) {
  json j;
  j["id"] = s.index;
  j["name"] = s.name();
  j["layer"] = s.layer;
  j["op"] = to_string(s.op);
  j["role"] = to_string(s.role);
  j["stage"] = to_string(s.stage);
  j["bits"] = s.spec.bits;
  j["symmetric"] = s.spec.symmetric;
  j["granularity"] =
      s.spec.granularity == Granularity::per_channel ? "per_channel" : "per_tensor";
  j["tensor_class"] =
      s.spec.tensor_class == TensorClass::rotated ? "rotated" : "unrotated";
  j["init_method"] = method_name(s.init_method);
  j["initialized"] = s.initialized;
  // floats stored as doubles: exact and round-trippable
  json scales = json::array();
  for (float v : s.params.scale) scales.push_back(static_cast<double>(v));
  j["scale"] = std::move(scales);
  j["zero_point"] = s.params.zero_point;
  return j;
}

json rotation_to_json(const char* site_name, std::uint64_t seed, const Tensor& theta,
                      std::size_t size) {
  json j;
  j["site"] = site_name;
  j["kind"] = "cayley_over_randomized_hadamard";
  j["size"] = size;
  j["hadamard_seed"] = seed;
  json params = json::array();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    params.push_back(static_cast<double>(theta[i]));
  }
  j["cayley_params"] = std::move(params);
  j["param_digest"] = fnv1a_hex(theta.data(), theta.size());
  return j;
}

template <typename T>
T get_field(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw ConfigError(std::string("missing required field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("field '") + key + "' has the wrong type");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace

json manifest_to_json(const Model& model, const PrecisionPlan& plan,
                      const EvalReport& eval, std::size_t calib_sequences,
                      std::size_t eval_sequences, const std::string& data_path) {
  json j;
  j["format"] = "staticquant-manifest";
  j["version"] = 1;
  j["tool_version"] = kToolVersion;
  j["seed"] = model.seed;
  j["model"] = config_to_json(model.config, model.bits);
  j["data"]["calibration"] = data_path.empty() ? std::string("synthetic") : data_path;
  j["data"]["calib_sequences"] = calib_sequences;
  j["data"]["eval_sequences"] = eval_sequences;

  json sites = json::array();
  for (const QuantSite& s : model.sites) sites.push_back(site_to_json(s));
  j["sites"] = std::move(sites);

  json rotations = json::array();
  if (model.config.use_rotation) {
    rotations.push_back(
        rotation_to_json("R1", model.r1_seed, model.theta1, model.config.hidden_dim));
    rotations.push_back(
        rotation_to_json("R2", model.r2_seed, model.theta2, model.config.head_dim()));
  }
  j["rotations"] = std::move(rotations);

  json plan_json;
  plan_json["promote_fraction"] = plan.promote_fraction;
  json entries = json::array();
  for (std::size_t i = 0; i < plan.site_indices.size(); ++i) {
    json e;
    e["site"] = plan.site_indices[i];
    e["bits"] = plan.bits[i];
    entries.push_back(std::move(e));
  }
  plan_json["assignments"] = std::move(entries);
  j["precision_plan"] = std::move(plan_json);

  j["metrics"]["output_mse"] = eval.output_mse;
  return j;
}

void save_manifest(const std::string& path, const json& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError(path + ": write failed");
}

json load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(path + ": invalid JSON (" + e.what() + ")");
  }
  if (get_or<std::string>(j, "format", "") != "staticquant-manifest") {
    throw ConfigError(path + ": field 'format' is not a staticquant manifest");
  }
  return j;
}

json config_to_json(const ToyTransformerConfig& config, const QuantBits& bits) {
  json j;
  j["hidden_dim"] = config.hidden_dim;
  j["num_heads"] = config.num_heads;
  j["mlp_dim"] = config.mlp_dim;
  j["num_layers"] = config.num_layers;
  j["vocab_size"] = config.vocab_size;
  j["seq_len"] = config.seq_len;
  j["use_rotation"] = config.use_rotation;
  j["outlier_layer"] = config.outlier_layer;
  j["outlier_channel"] = config.outlier_channel;
  j["outlier_gain"] = config.outlier_gain;
  j["weight_bits"] = bits.weight_bits;
  j["act_bits"] = bits.act_bits;
  j["kv_bits"] = bits.kv_bits;
  j["output_act_bits"] = bits.output_act_bits;
  j["gate_output_bits"] = bits.gate_output_bits;
  j["silu_bits"] = bits.silu_bits;
  return j;
}

ToyTransformerConfig config_from_json(const json& j) {
  ToyTransformerConfig c;
  c.hidden_dim = get_or<std::size_t>(j, "hidden_dim", c.hidden_dim);
  c.num_heads = get_or<std::size_t>(j, "num_heads", c.num_heads);
  c.mlp_dim = get_or<std::size_t>(j, "mlp_dim", c.mlp_dim);
  c.num_layers = get_or<std::size_t>(j, "num_layers", c.num_layers);
  c.vocab_size = get_or<std::size_t>(j, "vocab_size", c.vocab_size);
  c.seq_len = get_or<std::size_t>(j, "seq_len", c.seq_len);
  c.use_rotation = get_or<bool>(j, "use_rotation", c.use_rotation);
  c.outlier_layer = get_or<int>(j, "outlier_layer", c.outlier_layer);
  c.outlier_channel = get_or<std::size_t>(j, "outlier_channel", c.outlier_channel);
  c.outlier_gain = get_or<float>(j, "outlier_gain", c.outlier_gain);
  c.validate();
  return c;
}

QuantBits bits_from_json(const json& j) {
  QuantBits b;
  b.weight_bits = get_or<int>(j, "weight_bits", b.weight_bits);
  b.act_bits = get_or<int>(j, "act_bits", b.act_bits);
  b.kv_bits = get_or<int>(j, "kv_bits", b.kv_bits);
  b.output_act_bits = get_or<int>(j, "output_act_bits", b.output_act_bits);
  b.gate_output_bits = get_or<int>(j, "gate_output_bits", b.gate_output_bits);
  b.silu_bits = get_or<int>(j, "silu_bits", b.silu_bits);
  b.validate();
  return b;
}

void check_manifest_matches(const json& manifest, const Model& model) {
  const json expected = config_to_json(model.config, model.bits);
  const json& recorded = manifest.at("model");
  for (auto it = expected.begin(); it != expected.end(); ++it) {
    if (!recorded.contains(it.key()) || recorded.at(it.key()) != it.value()) {
      throw ConfigError("manifest/model mismatch on field '" + it.key() + "'");
    }
  }
  const auto& sites = manifest.at("sites");
  if (sites.size() != model.sites.size()) {
    throw ConfigError("manifest/model mismatch: site count differs");
  }
  for (const QuantSite& s : model.sites) {
    const json& js = sites.at(static_cast<std::size_t>(s.index));
    if (get_field<std::string>(js, "name") != s.name() ||
        get_field<std::string>(js, "role") != std::string(to_string(s.role))) {
      throw ConfigError("manifest/model mismatch at site " + s.name());
    }
  }
}

void apply_manifest(Model& model, const json& manifest) {
  check_manifest_matches(manifest, model);

  for (const json& r : manifest.at("rotations")) {
    const std::string site = get_field<std::string>(r, "site");
    Tensor* theta = site == "R1" ? &model.theta1 : site == "R2" ? &model.theta2 : nullptr;
    if (theta == nullptr) throw ConfigError("manifest: unknown rotation site '" + site + "'");
    const auto& params = r.at("cayley_params");
    if (params.size() != theta->size()) {
      throw ConfigError("manifest: rotation parameter count mismatch for " + site);
    }
    for (std::size_t i = 0; i < theta->size(); ++i) {
      (*theta)[i] = static_cast<float>(params.at(i).get<double>());
    }
    const std::string digest = get_or<std::string>(r, "param_digest", "");
    if (!digest.empty() && digest != fnv1a_hex(theta->data(), theta->size())) {
      throw ConfigError("manifest: rotation parameter digest mismatch for " + site);
    }
  }

  for (const json& js : manifest.at("sites")) {
    const int index = get_field<int>(js, "id");
    QuantSite& s = model.sites.at(static_cast<std::size_t>(index));
    s.spec.bits = get_field<int>(js, "bits");
    s.stage = stage_from_name(get_field<std::string>(js, "stage"));
    s.init_method = method_from_name(get_field<std::string>(js, "init_method"));
    s.initialized = get_field<bool>(js, "initialized");
    const auto& scales = js.at("scale");
    const auto& zps = js.at("zero_point");
    s.params.scale.clear();
    s.params.zero_point.clear();
    for (const auto& v : scales) s.params.scale.push_back(static_cast<float>(v.get<double>()));
    for (const auto& v : zps) s.params.zero_point.push_back(v.get<int>());
    s.params.learnable = false;
  }
}

Model model_from_manifest(const json& manifest) {
  const ToyTransformerConfig config = config_from_json(manifest.at("model"));
  const QuantBits bits = bits_from_json(manifest.at("model"));
  const auto seed = get_field<std::uint64_t>(manifest, "seed");
  Model model = build_model(config, bits, seed);
  apply_manifest(model, manifest);
  return model;
}

}  // namespace sq
