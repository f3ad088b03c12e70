#include "staticquant/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "staticquant/manifest.hpp"
#include "staticquant/qtns.hpp"

namespace sq::cli {

namespace {

constexpr std::size_t kCalibSequences = 16;
constexpr std::size_t kEvalSequences = 8;

// Seed salts for the independent random streams derived from --seed.
constexpr std::uint64_t kCalibDataSalt = 22;
constexpr std::uint64_t kEvalDataSalt = 23;

int guard(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const AbortedRunError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumericError;
  } catch (const SingularMatrixError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumericError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

nlohmann::json load_config_json(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": invalid JSON (" + e.what() + ")");
  }
  return j;
}

TokenSet load_token_file(const std::string& path, const ToyTransformerConfig& config) {
  TensorI32 t = load_qtns_i32(path);
  if (t.shape.size() != 2) {
    throw IoError(path + ": token tensor must be 2-D [sequences x tokens]");
  }
  const std::size_t rows = t.shape[0], cols = t.shape[1];
  TokenSet set(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    set[r].assign(t.data.begin() + static_cast<std::ptrdiff_t>(r * cols),
                  t.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
    for (std::int32_t tok : set[r]) {
      if (tok < 0 || static_cast<std::size_t>(tok) >= config.vocab_size) {
        throw IoError(path + ": token id " + std::to_string(tok) +
                      " outside the vocabulary");
      }
    }
  }
  return set;
}

struct LoadedSetup {
  ToyTransformerConfig config;
  QuantBits bits;
  Model model;
  TokenSet calib;
};

LoadedSetup load_setup(const std::string& config_path, const std::string& data_path,
                       std::uint64_t seed, int weight_bits_override,
                       int act_bits_override) {
  const nlohmann::json cj = load_config_json(config_path);
  LoadedSetup setup{config_from_json(cj), bits_from_json(cj), Model{}, {}};
  if (weight_bits_override > 0) setup.bits.weight_bits = weight_bits_override;
  if (act_bits_override > 0) setup.bits.act_bits = act_bits_override;
  setup.bits.validate();
  setup.model = build_model(setup.config, setup.bits, seed);
  setup.calib = data_path.empty()
                    ? synth_tokens(mix_seed(seed, kCalibDataSalt), kCalibSequences,
                                   setup.config.seq_len, setup.config.vocab_size)
                    : load_token_file(data_path, setup.config);
  if (setup.calib.empty()) throw IoError("calibration set is empty");
  return setup;
}

std::string format_sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return std::string(buf);
}

std::string format_ratio(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return std::string(buf);
}

}  // namespace

int cmd_calibrate(const CalibrateOptions& options, std::ostream& out, std::ostream& err) {
  return guard(err, [&]() {
    if (options.out.empty()) throw ArgumentError("calibrate: --out is required");
    if (options.promote_fraction < 0.0 || options.promote_fraction > 1.0) {
      throw ArgumentError("calibrate: --promote-fraction must lie in [0, 1]");
    }
    LoadedSetup setup = load_setup(options.model_config, options.data, options.seed,
                                   options.weight_bits, options.act_bits);
    const TokenSet eval_tokens =
        synth_tokens(mix_seed(options.seed, kEvalDataSalt), kEvalSequences,
                     setup.config.seq_len, setup.config.vocab_size);

    OptimConfig optim;
    optim.steps = options.steps;
    optim.seed = options.seed;

    CalibrationResult result = run_full_calibration(
        setup.model, setup.calib, eval_tokens, optim, options.promote_fraction);

    const nlohmann::json manifest =
        manifest_to_json(setup.model, result.plan, result.eval, setup.calib.size(),
                         eval_tokens.size(), options.data);
    save_manifest(options.out, manifest);

    out << "sites: " << setup.model.sites.size() << "\n";
    out << "promoted: " << result.plan.promoted_count() << "\n";
    if (!result.trace.entries.empty()) {
      out << "initial_mse: " << format_sci(result.trace.initial_mse()) << "\n";
      out << "final_mse: " << format_sci(result.trace.final_mse()) << "\n";
    }
    out << "output_mse: " << format_sci(result.eval.output_mse) << "\n";
    out << "manifest: " << options.out << "\n";
    return kExitOk;
  });
}

int cmd_sensitivity(const SensitivityOptions& options, std::ostream& out,
                    std::ostream& err) {
  return guard(err, [&]() {
    if (options.out.empty()) throw ArgumentError("sensitivity: --out is required");
    LoadedSetup setup = load_setup(options.model_config, options.data, options.seed, 0, 0);
    CalibrationWorkspace ws = initialize_stage_one_sites(setup.model, setup.calib);
    std::vector<SensitivityReport> reports = probe_down_proj_sensitivity(setup.model, ws);
    std::sort(reports.begin(), reports.end(),
              [](const SensitivityReport& a, const SensitivityReport& b) {
                if (a.ratio != b.ratio) return a.ratio > b.ratio;
                return a.site_index < b.site_index;
              });

    std::ofstream file(options.out, std::ios::trunc);
    if (!file) throw IoError(options.out + ": cannot open for writing");
    for (const SensitivityReport& r : reports) {
      file << r.site_name << " linear_input_act " << format_ratio(r.ratio) << "\n";
    }
    if (!file) throw IoError(options.out + ": write failed");
    out << "sites: " << reports.size() << "\n";
    out << "report: " << options.out << "\n";
    return kExitOk;
  });
}

int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err) {
  return guard(err, [&]() {
    if (options.manifest.empty()) throw ArgumentError("eval: --manifest is required");
    const nlohmann::json manifest = load_manifest(options.manifest);
    Model model = model_from_manifest(manifest);
    if (!options.model_config.empty()) {
      const nlohmann::json cj = load_config_json(options.model_config);
      Model expected = build_model(config_from_json(cj), bits_from_json(cj), model.seed);
      check_manifest_matches(manifest, expected);
    }

    TokenSet eval_tokens;
    if (!options.data.empty()) {
      eval_tokens = load_token_file(options.data, model.config);
    } else {
      const auto seed = manifest.at("seed").get<std::uint64_t>();
      const auto count = manifest.at("data").at("eval_sequences").get<std::size_t>();
      eval_tokens = synth_tokens(mix_seed(seed, kEvalDataSalt), count,
                                 model.config.seq_len, model.config.vocab_size);
    }

    EvalReport report = evaluate(model, eval_tokens);
    double rounding = 0.0, clipping = 0.0;
    for (const SiteError& s : report.sites) {
      rounding += s.decomposition.e_rounding;
      clipping += s.decomposition.e_clipping;
    }
    out << "output_mse: " << format_sci(report.output_mse) << "\n";
    out << "error_decomposition: rounding=" << format_sci(rounding)
        << " clipping=" << format_sci(clipping)
        << " total=" << format_sci(rounding + clipping) << "\n";
    out << "per-site relative error:\n";
    for (const SiteError& s : report.sites) {
      const QuantSite& site = model.sites[static_cast<std::size_t>(s.site_index)];
      out << s.name << " " << to_string(site.role) << " " << site.spec.bits << " "
          << format_sci(s.rel_error) << "\n";
    }
    return kExitOk;
  });
}

}  // namespace sq::cli
