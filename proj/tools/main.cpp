#include <CLI11.hpp>
#include <iostream>

#include "staticquant/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Static integer-only quantization toolkit for toy transformer blocks"};
  app.require_subcommand(1);

  sq::cli::CalibrateOptions calibrate;
  CLI::App* cal = app.add_subcommand(
      "calibrate", "Run the two-stage pipeline and write a calibration manifest");
  cal->add_option("--model-config", calibrate.model_config, "Model config JSON path");
  cal->add_option("--data", calibrate.data, "QTNS int32 token sequences");
  cal->add_option("--out", calibrate.out, "Output manifest path")->required();
  cal->add_option("--steps", calibrate.steps, "Stage-one optimization steps");
  cal->add_option("--seed", calibrate.seed, "Root seed for all randomness");
  cal->add_option("--promote-fraction", calibrate.promote_fraction,
                  "Fraction of down_proj inputs promoted to 16-bit");
  cal->add_option("--weight-bits", calibrate.weight_bits, "Weight bit-width {4,8}")
      ->check(CLI::IsMember({4, 8}));
  cal->add_option("--act-bits", calibrate.act_bits, "Activation bit-width {4,8}")
      ->check(CLI::IsMember({4, 8}));

  sq::cli::SensitivityOptions sensitivity;
  CLI::App* sen = app.add_subcommand(
      "sensitivity", "Write per-site sensitivity ratios for down_proj inputs");
  sen->add_option("--model-config", sensitivity.model_config, "Model config JSON path");
  sen->add_option("--data", sensitivity.data, "QTNS int32 token sequences");
  sen->add_option("--out", sensitivity.out, "Output report path")->required();
  sen->add_option("--seed", sensitivity.seed, "Root seed for all randomness");

  sq::cli::EvalOptions eval;
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a calibration manifest");
  ev->add_option("--model-config", eval.model_config, "Model config JSON path");
  ev->add_option("--manifest", eval.manifest, "Calibration manifest path")->required();
  ev->add_option("--data", eval.data, "QTNS int32 token sequences");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return sq::cli::kExitInputError;
  }

  if (cal->parsed()) return sq::cli::cmd_calibrate(calibrate, std::cout, std::cerr);
  if (sen->parsed()) return sq::cli::cmd_sensitivity(sensitivity, std::cout, std::cerr);
  if (ev->parsed()) return sq::cli::cmd_eval(eval, std::cout, std::cerr);
  return sq::cli::kExitInputError;
}
