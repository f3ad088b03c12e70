#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

namespace sq::cli {

// Exit-code contract: 0 success, 2 input error, 3 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 2;
inline constexpr int kExitNumericError = 3;

struct CalibrateOptions {
  std::string model_config;  // optional; defaults when empty
  std::string data;          // optional QTNS int32 token sequences
  std::string out;           // manifest path, required
  std::size_t steps = 512;
  std::uint64_t seed = 1;
  double promote_fraction = 0.10;
  int weight_bits = 0;  // 0 keeps the config value
  int act_bits = 0;
};

struct SensitivityOptions {
  std::string model_config;
  std::string data;
  std::string out;  // report path, required
  std::uint64_t seed = 1;
};

struct EvalOptions {
  std::string model_config;  // optional cross-check against the manifest
  std::string manifest;      // required
  std::string data;          // optional eval token file
};

int cmd_calibrate(const CalibrateOptions& options, std::ostream& out, std::ostream& err);
int cmd_sensitivity(const SensitivityOptions& options, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);

}  // namespace sq::cli
