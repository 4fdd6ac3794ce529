"""Synthetic dMRI phantom with known tensors and tissue labels.

The phantom substitutes for cohort data that cannot be redistributed: nested
in-plane shells of CSF, cortical gray matter and white matter around a
corpus-callosum band, with the monoexponential tensor signal
S(b, g) = S0 exp(-b g^T D g) per voxel. Diffusivities are standard
literature values and serve only as self-consistent ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dti import TensorVolume
from .errors import ShapeError
from .volume import GradientTable, Volume4D

LABELS = {"background": 0, "csf": 1, "cgm": 2, "wm": 3, "cc": 4}
REGION_NAMES = {v: k for k, v in LABELS.items()}

CSF_DIFFUSIVITY = 3.0e-3  # mm^2/s, isotropic
CGM_DIFFUSIVITY = 0.8e-3  # mm^2/s, isotropic
WM_EIGENVALUES = (1.7e-3, 0.3e-3, 0.3e-3)  # mm^2/s, anisotropic

S0_BY_LABEL = {0: 0.0, 1: 1.0, 2: 0.8, 3: 0.7, 4: 0.75}


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 16)
    b_value: float = 1000.0
    n_directions: int = 88
    n_b0: int = 4
    noise: str = "none"  # none | gaussian | rician
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or any(d < 4 for d in self.dims):
            raise ShapeError(f"phantom dims must be 3 values >= 4, got {self.dims}")
        if self.noise not in ("none", "gaussian", "rician"):
            raise ShapeError(f"unknown noise model {self.noise!r}")
        if self.noise != "none" and self.noise_sigma <= 0:
            raise ShapeError("noise_sigma must be positive for noisy phantoms")


@dataclass(frozen=True)
class PhantomData:
    """Everything the evaluation harness needs about one synthetic study."""

    dwi: Volume4D
    b0: Volume4D
    gtab: GradientTable
    labels: Volume4D
    tensors: TensorVolume | None = None
    spec: PhantomSpec | None = None


def fibonacci_directions(n: int) -> np.ndarray:
    """Deterministic near-uniform unit directions (spherical Fibonacci)."""
    if n < 1:
        raise ShapeError("need at least one direction")
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden * i
    dirs = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _region_layout(dims):
    """Label map plus the smooth geometry fields used to orient WM fibers."""
    nx, ny, nz = dims
    x, y, z = np.meshgrid(
        np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"
    )
    cx, cy, cz = (nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0
    # Head-like taper: in-plane radii shrink toward the top and bottom slices.
    taper = np.sqrt(1.0 - 0.55 * ((z - cz) / (nz / 2.0)) ** 2)
    rmax = min(nx, ny) / 2.0 - 1.0
    r = np.sqrt((x - cx) ** 2 + (y - cy) ** 2) / (rmax * taper)

    labels = np.zeros(dims, dtype=np.int64)
    labels[r <= 1.0] = LABELS["csf"]
    labels[r <= 0.86] = LABELS["cgm"]
    labels[r <= 0.72] = LABELS["wm"]
    cc = (np.abs(y - cy) <= 0.05 * ny * taper) & (r <= 0.45)
    labels[cc] = LABELS["cc"]

    azimuth = np.arctan2(y - cy, x - cx)
    return labels, azimuth, (z - cz) / nz


def _tensor_field(labels, azimuth, zfrac):
    """Per-voxel 6-vector tensors for each labeled region."""
    d6 = np.zeros(labels.shape + (6,))
    for label, diff in ((LABELS["csf"], CSF_DIFFUSIVITY), (LABELS["cgm"], CGM_DIFFUSIVITY)):
        sel = labels == label
        d6[sel, 0] = d6[sel, 1] = d6[sel, 2] = diff

    l1, l2, _ = WM_EIGENVALUES
    # WM fibers run tangentially around the center, tilting smoothly with z.
    wm = labels == LABELS["wm"]
    tilt = 0.35 * np.sin(2.0 * np.pi * zfrac)
    e1 = np.stack(
        [-np.sin(azimuth), np.cos(azimuth), np.broadcast_to(tilt, azimuth.shape)],
        axis=-1,
    )
    e1 = e1 / np.linalg.norm(e1, axis=-1, keepdims=True)
    outer = e1[..., :, None] * e1[..., None, :]
    aniso = (l1 - l2) * outer + l2 * np.eye(3)
    d6_wm = np.stack(
        [
            aniso[..., 0, 0],
            aniso[..., 1, 1],
            aniso[..., 2, 2],
            aniso[..., 0, 1],
            aniso[..., 0, 2],
            aniso[..., 1, 2],
        ],
        axis=-1,
    )
    d6[wm] = d6_wm[wm]

    cc = labels == LABELS["cc"]
    d6[cc, 0] = l1  # left-right principal axis
    d6[cc, 1] = l2
    d6[cc, 2] = l2
    return d6


def _apply_noise(signal, spec, rng):
    if spec.noise == "none":
        return signal
    if spec.noise == "gaussian":
        return signal + spec.noise_sigma * rng.standard_normal(signal.shape)
    real = signal + spec.noise_sigma * rng.standard_normal(signal.shape)
    imag = spec.noise_sigma * rng.standard_normal(signal.shape)
    return np.sqrt(real * real + imag * imag)


def make_phantom(spec: PhantomSpec) -> PhantomData:
    """Simulate a phantom study, deterministic under spec.seed."""
    labels, azimuth, zfrac = _region_layout(spec.dims)
    d6 = _tensor_field(labels, azimuth, zfrac)
    s0 = np.zeros(spec.dims)
    for label, value in S0_BY_LABEL.items():
        s0[labels == label] = value

    dirs = fibonacci_directions(spec.n_directions)
    dmat = np.zeros(spec.dims + (3, 3))
    dmat[..., 0, 0] = d6[..., 0]
    dmat[..., 1, 1] = d6[..., 1]
    dmat[..., 2, 2] = d6[..., 2]
    dmat[..., 0, 1] = dmat[..., 1, 0] = d6[..., 3]
    dmat[..., 0, 2] = dmat[..., 2, 0] = d6[..., 4]
    dmat[..., 1, 2] = dmat[..., 2, 1] = d6[..., 5]
    gdg = np.einsum("di,xyzij,dj->xyzd", dirs, dmat, dirs, optimize=True)
    signal = s0[..., None] * np.exp(-spec.b_value * gdg)

    rng = np.random.default_rng(spec.seed)
    signal = _apply_noise(signal, spec, rng)
    b0_data = np.repeat(s0[..., None], spec.n_b0, axis=3)
    b0_data = _apply_noise(b0_data, spec, rng)

    gtab = GradientTable(np.full(spec.n_directions, spec.b_value), dirs)
    dwi = Volume4D(signal, intent="dwi")
    b0 = Volume4D(b0_data, intent="dwi")
    labels_vol = Volume4D(labels.astype(np.float64)[..., None], intent="labels")
    tensors = TensorVolume(d6=d6, s0=s0)
    return PhantomData(dwi=dwi, b0=b0, gtab=gtab, labels=labels_vol, tensors=tensors, spec=spec)
