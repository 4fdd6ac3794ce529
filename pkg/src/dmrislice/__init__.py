"""dmrislice: through-plane slice reconstruction for diffusion MRI.

Reconstructs missing or thick slices either with classical interpolation or
with a convolutional autoencoder whose latent codes of the two neighboring
slices are blended, operating on raw signals or on their spherical-harmonics
representation. Ships diffusion-tensor scalar maps and a phantom-driven
evaluation harness.
"""

from .dti import TensorVolume, eig_sym3, fa_map, fit_dti, md_map
from .evaluate import EvalReport, mse_region, run_experiment
from .inference import (
    GapSpec,
    blend_latents,
    histogram_match,
    infer_gap_sh,
    infer_gap_signal,
)
from .interp import (
    InterpMethod,
    bspline_prefilter,
    interp_fill,
    interp_missing_slices,
    kernel_eval,
)
from .nifti import read_nifti, write_nifti
from .phantom import PhantomData, PhantomSpec, fibonacci_directions, make_phantom
from .sh import (
    ShBasisMatrix,
    ShCoeffVolume,
    fit_sh,
    project_sh,
    read_sh,
    sh_basis_matrix,
    sh_roundtrip_error,
    write_sh,
)
from .stats import wilcoxon_signed_rank
from .volume import (
    GradientTable,
    SliceImage,
    Volume4D,
    denormalize_slice,
    normalize_slice,
    read_gradient_table,
    replace_slices,
    select_shell,
)

__version__ = "0.1.0"

__all__ = [
    "blend_latents",
    "bspline_prefilter",
    "denormalize_slice",
    "eig_sym3",
    "EvalReport",
    "fa_map",
    "fibonacci_directions",
    "fit_dti",
    "fit_sh",
    "GapSpec",
    "GradientTable",
    "histogram_match",
    "infer_gap_sh",
    "infer_gap_signal",
    "interp_fill",
    "interp_missing_slices",
    "InterpMethod",
    "kernel_eval",
    "make_phantom",
    "md_map",
    "mse_region",
    "normalize_slice",
    "PhantomData",
    "PhantomSpec",
    "project_sh",
    "read_gradient_table",
    "read_nifti",
    "read_sh",
    "replace_slices",
    "run_experiment",
    "select_shell",
    "sh_basis_matrix",
    "sh_roundtrip_error",
    "ShBasisMatrix",
    "ShCoeffVolume",
    "SliceImage",
    "TensorVolume",
    "Volume4D",
    "wilcoxon_signed_rank",
    "write_nifti",
    "write_sh",
]
