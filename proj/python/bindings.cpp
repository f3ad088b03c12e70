#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "staticquant/cli.hpp"
#include "staticquant/manifest.hpp"
#include "staticquant/qtns.hpp"

namespace py = pybind11;
using namespace sq;

namespace {

Tensor tensor_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
  std::vector<std::size_t> shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arr.shape(i));
  }
  std::vector<float> data(arr.data(), arr.data() + arr.size());
  return Tensor(std::move(shape), std::move(data));
}

py::array_t<float> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> arr(shape);
  std::copy(t.data(), t.data() + t.size(), arr.mutable_data());
  return arr;
}

QuantSpec make_spec(int bits, bool is_signed, bool symmetric) {
  QuantSpec spec;
  spec.bits = bits;
  spec.is_signed = is_signed;
  spec.symmetric = symmetric;
  return spec;
}

QuantParams make_params(float scale, int zero_point) {
  QuantParams p;
  p.scale = {scale};
  p.zero_point = {zero_point};
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Static integer-only quantization toolkit (toy-transformer scale)";

  py::register_exception<Error>(m, "StaticquantError");

  m.def(
      "quantize",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> x, float scale,
         int zero_point, int bits, bool is_signed) {
        const Tensor t = tensor_from_array(x);
        const TensorI32 q = quantize(t, make_params(scale, zero_point),
                                     make_spec(bits, is_signed, zero_point == 0));
        std::vector<py::ssize_t> shape(q.shape.begin(), q.shape.end());
        py::array_t<std::int32_t> out(shape);
        std::copy(q.data.begin(), q.data.end(), out.mutable_data());
        return out;
      },
      py::arg("x"), py::arg("scale"), py::arg("zero_point") = 0, py::arg("bits") = 8,
      py::arg("is_signed") = true);

  m.def(
      "fake_quantize",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> x, float scale,
         int zero_point, int bits, bool is_signed) {
        const Tensor t = tensor_from_array(x);
        return array_from_tensor(fake_quantize(t, make_params(scale, zero_point),
                                               make_spec(bits, is_signed, zero_point == 0)));
      },
      py::arg("x"), py::arg("scale"), py::arg("zero_point") = 0, py::arg("bits") = 8,
      py::arg("is_signed") = true);

  m.def("ste_grad_scale", &ste_grad_scale, py::arg("x"), py::arg("scale"),
        py::arg("zero_point"), py::arg("q_min"), py::arg("q_max"));
  m.def("ste_grad_zero_point", &ste_grad_zero_point, py::arg("x"), py::arg("scale"),
        py::arg("zero_point"), py::arg("q_min"), py::arg("q_max"));
  m.def("gradient_scale_factor", &gradient_scale_factor, py::arg("num_elements"),
        py::arg("q_max"));

  m.def(
      "symmetric_scale",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> x, int bits) {
        const RunningStats stats = collect_stats(tensor_from_array(x));
        return symmetric_scale(stats, make_spec(bits, true, true)).scale[0];
      },
      py::arg("x"), py::arg("bits"));

  m.def(
      "asymmetric_params",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> x, int bits) {
        const RunningStats stats = collect_stats(tensor_from_array(x));
        const QuantParams p = asymmetric_params(stats, make_spec(bits, false, false));
        return py::make_tuple(p.scale[0], p.zero_point[0]);
      },
      py::arg("x"), py::arg("bits"));

  m.def(
      "mean_based_scale",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> x, int bits) {
        const RunningStats stats = collect_stats(tensor_from_array(x));
        return mean_based_init(stats, make_spec(bits, true, true)).scale[0];
      },
      py::arg("x"), py::arg("bits"));

  m.def(
      "select_policy",
      [](const std::string& tensor_class, int requested_bits) {
        const TensorClass cls = tensor_class == "rotated" ? TensorClass::rotated
                                                          : TensorClass::unrotated;
        const InitPolicy p = select_policy(cls, requested_bits);
        return py::make_tuple(
            p.method == InitMethod::mean_based ? "mean_based" : "max_min", p.min_bits);
      },
      py::arg("tensor_class"), py::arg("requested_bits"));

  m.def(
      "hadamard",
      [](std::size_t n) { return array_from_tensor(sylvester_hadamard(n).matrix); },
      py::arg("n"));
  m.def(
      "randomized_hadamard",
      [](std::size_t n, std::uint64_t seed) {
        return array_from_tensor(randomized_hadamard(n, seed).matrix);
      },
      py::arg("n"), py::arg("seed"));
  m.def(
      "cayley_rotation",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> params,
         std::size_t n) {
        return array_from_tensor(cayley_rotation(tensor_from_array(params), n).matrix);
      },
      py::arg("free_params"), py::arg("n"));
  m.def(
      "fuse_into_weight",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> w,
         py::array_t<float, py::array::c_style | py::array::forcecast> r,
         const std::string& side) {
        RotationHandle handle;
        handle.matrix = tensor_from_array(r);
        handle.size = handle.matrix.rows();
        return array_from_tensor(fuse_into_weight(
            tensor_from_array(w), handle,
            side == "input" ? FuseSide::input : FuseSide::output));
      },
      py::arg("weight"), py::arg("rotation"), py::arg("side"));

  m.def(
      "sensitivity_ratio",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> x, float scale,
         int bits) {
        return sensitivity_ratio(tensor_from_array(x), make_params(scale, 0),
                                 make_spec(bits, true, true));
      },
      py::arg("x"), py::arg("scale"), py::arg("bits") = 8);

  m.def(
      "plan_mixed_precision",
      [](const std::vector<double>& ratios, double promote_fraction) {
        std::vector<SensitivityReport> reports(ratios.size());
        for (std::size_t i = 0; i < ratios.size(); ++i) {
          reports[i].site_index = static_cast<int>(i);
          reports[i].ratio = ratios[i];
        }
        const PrecisionPlan plan = plan_mixed_precision(reports, promote_fraction);
        std::vector<int> bits(ratios.size(), 8);
        for (std::size_t i = 0; i < plan.site_indices.size(); ++i) {
          bits[static_cast<std::size_t>(plan.site_indices[i])] = plan.bits[i];
        }
        return bits;
      },
      py::arg("ratios"), py::arg("promote_fraction") = 0.10);

  m.def(
      "error_decomposition",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> x, float scale,
         int bits) {
        const ErrorDecomposition d = error_decomposition(
            tensor_from_array(x), make_params(scale, 0), make_spec(bits, true, true));
        return py::make_tuple(d.e_rounding, d.e_clipping, d.e_total);
      },
      py::arg("x"), py::arg("scale"), py::arg("bits") = 8);

  m.def(
      "calibrate",
      [](const std::string& out_path, const std::string& model_config,
         const std::string& data, std::size_t steps, std::uint64_t seed,
         double promote_fraction) {
        cli::CalibrateOptions options;
        options.out = out_path;
        options.model_config = model_config;
        options.data = data;
        options.steps = steps;
        options.seed = seed;
        options.promote_fraction = promote_fraction;
        std::ostringstream out, err;
        const int code = cli::cmd_calibrate(options, out, err);
        if (code != 0) throw Error(err.str().empty() ? "calibrate failed" : err.str());
        return out.str();
      },
      py::arg("out_path"), py::arg("model_config") = std::string(),
      py::arg("data") = std::string(), py::arg("steps") = 512, py::arg("seed") = 1,
      py::arg("promote_fraction") = 0.10);

  m.def(
      "evaluate_manifest",
      [](const std::string& manifest_path, const std::string& data) {
        cli::EvalOptions options;
        options.manifest = manifest_path;
        options.data = data;
        std::ostringstream out, err;
        const int code = cli::cmd_eval(options, out, err);
        if (code != 0) throw Error(err.str().empty() ? "eval failed" : err.str());
        return out.str();
      },
      py::arg("manifest_path"), py::arg("data") = std::string());

  m.def(
      "save_qtns",
      [](const std::string& path,
         py::array_t<float, py::array::c_style | py::array::forcecast> x) {
        save_qtns(path, tensor_from_array(x));
      },
      py::arg("path"), py::arg("x"));
  m.def(
      "load_qtns",
      [](const std::string& path) { return array_from_tensor(load_qtns_f32(path)); },
      py::arg("path"));
  m.def(
      "save_tokens",
      [](const std::string& path,
         py::array_t<std::int32_t, py::array::c_style | py::array::forcecast> tokens) {
        TensorI32 t;
        t.shape.assign(tokens.shape(), tokens.shape() + tokens.ndim());
        t.data.assign(tokens.data(), tokens.data() + tokens.size());
        save_qtns(path, t);
      },
      py::arg("path"), py::arg("tokens"));
}
