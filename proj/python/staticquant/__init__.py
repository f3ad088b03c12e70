"""Static integer-only quantization toolkit (desk-scale toy transformer).

Thin wrapper around the C++ core: quantization kernels, STE gradients,
rotation construction/fusion, sensitivity planning and the calibration
pipeline driver.
"""

from staticquant._core import (  # noqa: F401
    StaticquantError,
    asymmetric_params,
    calibrate,
    cayley_rotation,
    error_decomposition,
    evaluate_manifest,
    fake_quantize,
    fuse_into_weight,
    gradient_scale_factor,
    hadamard,
    load_qtns,
    mean_based_scale,
    plan_mixed_precision,
    quantize,
    randomized_hadamard,
    save_qtns,
    save_tokens,
    select_policy,
    sensitivity_ratio,
    ste_grad_scale,
    ste_grad_zero_point,
    symmetric_scale,
)

__version__ = "0.1.0"
