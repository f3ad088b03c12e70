#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "staticquant/manifest.hpp"
#include "staticquant/qtns.hpp"

using namespace sq;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("staticquant_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << data;
}

}  // namespace

TEST_CASE("qtns round trip is bit exact") {
  TempDir dir;
  Rng rng(1);
  Tensor t = rng.normal_tensor({3, 4});
  save_qtns(dir.file("t.qtns"), t);
  Tensor loaded = load_qtns_f32(dir.file("t.qtns"));
  REQUIRE(loaded.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(loaded[i] == t[i]);

  TensorI32 ti{{2, 3}, {1, -2, 3, -4, 5, -6}};
  save_qtns(dir.file("i.qtns"), ti);
  TensorI32 li = load_qtns_i32(dir.file("i.qtns"));
  CHECK(li.shape == ti.shape);
  CHECK(li.data == ti.data);
}

TEST_CASE("qtns save produces identical bytes across calls") {
  TempDir dir;
  Rng rng(2);
  Tensor t = rng.normal_tensor({8});
  save_qtns(dir.file("a.qtns"), t);
  save_qtns(dir.file("b.qtns"), t);
  CHECK(read_file(dir.file("a.qtns")) == read_file(dir.file("b.qtns")));
}

TEST_CASE("qtns rejections carry distinct diagnostics") {
  TempDir dir;
  Tensor t({2}, std::vector<float>{1.0f, 2.0f});
  save_qtns(dir.file("good.qtns"), t);
  std::string bytes = read_file(dir.file("good.qtns"));

  // wrong magic
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  write_file(dir.file("magic.qtns"), bad_magic);
  CHECK_THROWS_WITH_AS(load_qtns(dir.file("magic.qtns")),
                       doctest::Contains("bad magic"), IoError);

  // unknown version
  std::string bad_version = bytes;
  bad_version[4] = 9;
  write_file(dir.file("version.qtns"), bad_version);
  CHECK_THROWS_WITH_AS(load_qtns(dir.file("version.qtns")),
                       doctest::Contains("unsupported version"), IoError);

  // unknown dtype
  std::string bad_dtype = bytes;
  bad_dtype[6] = 7;
  write_file(dir.file("dtype.qtns"), bad_dtype);
  CHECK_THROWS_WITH_AS(load_qtns(dir.file("dtype.qtns")),
                       doctest::Contains("unknown dtype"), IoError);

  // payload one byte short
  std::string truncated = bytes.substr(0, bytes.size() - 1);
  write_file(dir.file("trunc.qtns"), truncated);
  CHECK_THROWS_WITH_AS(load_qtns(dir.file("trunc.qtns")),
                       doctest::Contains("truncated payload"), IoError);

  // missing file
  CHECK_THROWS_WITH_AS(load_qtns(dir.file("absent.qtns")),
                       doctest::Contains("cannot open"), IoError);
}

namespace {

nlohmann::json calibrate_small(std::uint64_t seed, Model* out_model = nullptr) {
  ToyTransformerConfig cfg;
  cfg.hidden_dim = 32;
  cfg.num_heads = 4;
  cfg.mlp_dim = 64;
  cfg.num_layers = 2;
  cfg.vocab_size = 64;
  cfg.seq_len = 8;
  Model model = build_model(cfg, QuantBits{}, seed);
  TokenSet calib = synth_tokens(mix_seed(seed, 22), 8, cfg.seq_len, cfg.vocab_size);
  TokenSet eval_tokens = synth_tokens(mix_seed(seed, 23), 4, cfg.seq_len, cfg.vocab_size);
  OptimConfig optim;
  optim.steps = 4;
  optim.warmup_local_loss_steps = 2;
  CalibrationResult result = run_full_calibration(model, calib, eval_tokens, optim, 0.1);
  nlohmann::json manifest =
      manifest_to_json(model, result.plan, result.eval, calib.size(), eval_tokens.size(), "");
  if (out_model) *out_model = std::move(model);
  return manifest;
}

}  // namespace

TEST_CASE("manifest reload reproduces the calibrated model bit for bit") {
  Model original;
  nlohmann::json manifest = calibrate_small(77, &original);

  Model rebuilt = model_from_manifest(manifest);
  TokenSet eval_tokens = synth_tokens(mix_seed(77, 23), 4, original.config.seq_len,
                                      original.config.vocab_size);
  EvalReport a = evaluate(original, eval_tokens);
  EvalReport b = evaluate(rebuilt, eval_tokens);
  CHECK(a.output_mse == b.output_mse);  // bit-identical reconstruction

  // and the recorded metric matches what evaluate reproduces
  CHECK(manifest.at("metrics").at("output_mse").get<double>() == b.output_mse);
}

TEST_CASE("manifest round trip is field-for-field identical") {
  TempDir dir;
  nlohmann::json manifest = calibrate_small(78);
  save_manifest(dir.file("m.json"), manifest);
  nlohmann::json loaded = load_manifest(dir.file("m.json"));
  CHECK(loaded == manifest);

  // re-serializing the reloaded model reproduces the same site/rotation state
  Model rebuilt = model_from_manifest(loaded);
  PrecisionPlan plan;
  plan.promote_fraction = loaded.at("precision_plan").at("promote_fraction").get<double>();
  for (const auto& e : loaded.at("precision_plan").at("assignments")) {
    plan.site_indices.push_back(e.at("site").get<int>());
    plan.bits.push_back(e.at("bits").get<int>());
  }
  EvalReport eval;
  eval.output_mse = loaded.at("metrics").at("output_mse").get<double>();
  nlohmann::json again = manifest_to_json(
      rebuilt, plan, eval, loaded.at("data").at("calib_sequences").get<std::size_t>(),
      loaded.at("data").at("eval_sequences").get<std::size_t>(), "");
  CHECK(again == manifest);
}

TEST_CASE("manifest mismatch is detected") {
  nlohmann::json manifest = calibrate_small(79);
  ToyTransformerConfig other;
  other.hidden_dim = 64;
  other.num_heads = 4;
  other.mlp_dim = 64;
  other.num_layers = 2;
  other.vocab_size = 64;
  other.seq_len = 8;
  Model different = build_model(other, QuantBits{}, 79);
  CHECK_THROWS_AS(check_manifest_matches(manifest, different), ConfigError);

  // corrupted digest is rejected
  nlohmann::json tampered = manifest;
  tampered["rotations"][0]["param_digest"] = "0000000000000000";
  Model target = model_from_manifest(manifest);
  CHECK_THROWS_AS(apply_manifest(target, tampered), ConfigError);
}

TEST_CASE("config json round trip and field diagnostics") {
  ToyTransformerConfig cfg;
  QuantBits bits;
  nlohmann::json j = config_to_json(cfg, bits);
  ToyTransformerConfig parsed = config_from_json(j);
  CHECK(parsed.hidden_dim == cfg.hidden_dim);
  CHECK(parsed.outlier_gain == cfg.outlier_gain);

  nlohmann::json bad = j;
  bad["hidden_dim"] = "not a number";
  bool caught = false;
  try {
    config_from_json(bad);
  } catch (const ConfigError& e) {
    caught = true;
    CHECK(std::string(e.what()).find("hidden_dim") != std::string::npos);
  }
  CHECK(caught);
}
