"""Diffusion tensor estimation (log-linear least squares) and FA/MD maps.

Tensors are stored as 6 values per voxel in lower-triangular order
(Dxx, Dyy, Dzz, Dxy, Dxz, Dyz), units mm^2/s.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask, ShapeError, Underdetermined
from .volume import GradientTable, Volume4D

SIGNAL_FLOOR = 1e-6


@dataclass(frozen=True)
class TensorVolume:
    """Per-voxel symmetric diffusion tensor plus estimated b0 signal."""

    d6: np.ndarray  # (X, Y, Z, 6)
    s0: np.ndarray  # (X, Y, Z)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray = None

    def __post_init__(self):
        d6 = np.asarray(self.d6, dtype=np.float64)
        s0 = np.asarray(self.s0, dtype=np.float64)
        if d6.ndim != 4 or d6.shape[3] != 6:
            raise ShapeError(f"tensor array must be (X, Y, Z, 6), got {d6.shape}")
        if s0.shape != d6.shape[:3]:
            raise ShapeError(f"s0 shape {s0.shape} does not match {d6.shape[:3]}")
        object.__setattr__(self, "d6", d6)
        object.__setattr__(self, "s0", s0)
        affine = np.eye(4) if self.affine is None else np.asarray(self.affine)
        object.__setattr__(self, "affine", affine)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.d6.shape[:3]

    def as_matrices(self) -> np.ndarray:
        """Dense symmetric matrices, shape (X, Y, Z, 3, 3)."""
        return _d6_to_matrix(self.d6)

    def to_volume(self) -> Volume4D:
        return Volume4D(self.d6, spacing=self.spacing, affine=self.affine, intent="scalar")


def _d6_to_matrix(d6: np.ndarray) -> np.ndarray:
    dxx, dyy, dzz, dxy, dxz, dyz = np.moveaxis(d6, -1, 0)
    mat = np.empty(d6.shape[:-1] + (3, 3))
    mat[..., 0, 0] = dxx
    mat[..., 1, 1] = dyy
    mat[..., 2, 2] = dzz
    mat[..., 0, 1] = mat[..., 1, 0] = dxy
    mat[..., 0, 2] = mat[..., 2, 0] = dxz
    mat[..., 1, 2] = mat[..., 2, 1] = dyz
    return mat


def design_matrix(bvals: np.ndarray, bvecs: np.ndarray) -> np.ndarray:
    """Rows [1, -b gx^2, -b gy^2, -b gz^2, -2b gx gy, -2b gx gz, -2b gy gz]
    so that X @ (ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz) = ln S(b, g)."""
    b = np.asarray(bvals, dtype=np.float64)
    g = np.asarray(bvecs, dtype=np.float64)
    gx, gy, gz = g[:, 0], g[:, 1], g[:, 2]
    return np.column_stack(
        [
            np.ones_like(b),
            -b * gx * gx,
            -b * gy * gy,
            -b * gz * gz,
            -2 * b * gx * gy,
            -2 * b * gx * gz,
            -2 * b * gy * gz,
        ]
    )


def fit_dti(
    dwi: Volume4D,
    b0: Volume4D,
    g: GradientTable,
    mask: Volume4D | None = None,
) -> TensorVolume:
    """Ordinary log-linear least-squares tensor fit.

    The b0 volume contributes its measurements as b=0 rows of the design
    matrix. Signals at or below zero are floored to 1e-6 before the log.
    """
    if dwi.dims[:3] != b0.dims[:3]:
        raise ShapeError(f"dwi grid {dwi.dims[:3]} does not match b0 {b0.dims[:3]}")
    if len(g) != dwi.n_volumes:
        raise ShapeError(
            f"gradient table ({len(g)}) does not match volume count ({dwi.n_volumes})"
        )
    n_meas = dwi.n_volumes + b0.n_volumes
    if n_meas < 7:
        raise Underdetermined(f"{n_meas} measurements, need at least 7")

    bvals = np.concatenate([np.zeros(b0.n_volumes), g.bvals])
    bvecs = np.vstack([np.zeros((b0.n_volumes, 3)), g.bvecs])
    design = design_matrix(bvals, bvecs)
    solver = np.linalg.pinv(design)

    signal = np.concatenate([b0.data, dwi.data], axis=3)
    signal = np.maximum(signal, SIGNAL_FLOOR)
    nx, ny, nz, _ = signal.shape
    beta = np.log(signal).reshape(-1, n_meas) @ solver.T
    beta = beta.reshape(nx, ny, nz, 7)

    if mask is not None:
        keep = mask.data[..., 0] > 0
        if not np.any(keep):
            raise EmptyMask("mask selects no voxels")
        beta = np.where(keep[..., None], beta, 0.0)

    return TensorVolume(
        d6=beta[..., 1:7],
        s0=np.exp(beta[..., 0]),
        spacing=dwi.spacing,
        affine=dwi.affine,
    )


def eig_sym3(tensor) -> tuple[np.ndarray, np.ndarray]:
    """Analytic eigendecomposition of symmetric 3x3 matrices.

    Accepts (..., 6) arrays in (Dxx, Dyy, Dzz, Dxy, Dxz, Dyz) order. Returns
    eigenvalues (..., 3) in descending order and orthonormal eigenvectors
    (..., 3, 3) with column i belonging to eigenvalue i. Eigenvalues follow
    the trigonometric (Cardano) closed form.
    """
    d6 = np.asarray(tensor, dtype=np.float64)
    scalar_input = d6.ndim == 1
    d6 = np.atleast_2d(d6)
    if d6.shape[-1] != 6:
        raise ShapeError(f"expected trailing dimension 6, got {d6.shape}")
    a = _d6_to_matrix(d6)

    q = np.trace(a, axis1=-2, axis2=-1) / 3.0
    off2 = d6[..., 3] ** 2 + d6[..., 4] ** 2 + d6[..., 5] ** 2
    p2 = (
        (d6[..., 0] - q) ** 2
        + (d6[..., 1] - q) ** 2
        + (d6[..., 2] - q) ** 2
        + 2.0 * off2
    )
    p = np.sqrt(p2 / 6.0)
    scale = np.maximum(np.abs(q), np.sqrt(p2))
    isotropic = p <= 1e-14 * np.maximum(scale, 1e-300)

    p_safe = np.where(isotropic, 1.0, p)
    b = (a - q[..., None, None] * np.eye(3)) / p_safe[..., None, None]
    det_b = np.linalg.det(b)
    r = np.clip(det_b / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0

    lam1 = q + 2.0 * p * np.cos(phi)
    lam3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    lam2 = 3.0 * q - lam1 - lam3
    lam1 = np.where(isotropic, q, lam1)
    lam2 = np.where(isotropic, q, lam2)
    lam3 = np.where(isotropic, q, lam3)
    eigvals = np.stack([lam1, lam2, lam3], axis=-1)

    vecs = _eigenvectors(a, eigvals, isotropic, scale)
    if scalar_input:
        return eigvals[0], vecs[0]
    return eigvals, vecs


def _null_direction(a, lam, scale):
    """Best cross-product of rows of (A - lam I); zero norm means degenerate."""
    m = a - lam[..., None, None] * np.eye(3)
    c01 = np.cross(m[..., 0, :], m[..., 1, :])
    c02 = np.cross(m[..., 0, :], m[..., 2, :])
    c12 = np.cross(m[..., 1, :], m[..., 2, :])
    cand = np.stack([c01, c02, c12], axis=-2)
    norms = np.linalg.norm(cand, axis=-1)
    best = np.argmax(norms, axis=-1)
    idx = np.expand_dims(best, axis=(-2, -1))
    vec = np.take_along_axis(cand, np.broadcast_to(idx, cand.shape[:-2] + (1, 3)), axis=-2)[
        ..., 0, :
    ]
    best_norm = np.take_along_axis(norms, best[..., None], axis=-1)[..., 0]
    ok = best_norm > 1e-12 * np.maximum(scale, 1e-300) ** 2
    return vec, best_norm, ok


def _any_perpendicular(v):
    """A unit vector orthogonal to each unit vector in v."""
    helper = np.zeros_like(v)
    smallest = np.argmin(np.abs(v), axis=-1)
    np.put_along_axis(helper, smallest[..., None], 1.0, axis=-1)
    perp = np.cross(v, helper)
    return perp / np.linalg.norm(perp, axis=-1, keepdims=True)


def _eigenvectors(a, eigvals, isotropic, scale):
    e1_raw, _, ok1 = _null_direction(a, eigvals[..., 0], scale)
    e3_raw, _, ok3 = _null_direction(a, eigvals[..., 2], scale)

    fallback = np.zeros(a.shape[:-2] + (3,))
    fallback[..., 0] = 1.0
    e1 = np.where(ok1[..., None], e1_raw, fallback)
    e1 = e1 / np.linalg.norm(e1, axis=-1, keepdims=True)
    fallback_z = np.zeros_like(fallback)
    fallback_z[..., 2] = 1.0
    e3 = np.where(ok3[..., None], e3_raw, fallback_z)
    e3 = e3 / np.linalg.norm(e3, axis=-1, keepdims=True)

    # Repair the degenerate pairs: whichever side lost its cross product is
    # reconstructed orthogonal to the well-defined side.
    e1 = np.where((~ok1 & ok3)[..., None], _any_perpendicular(e3), e1)
    e3 = np.where((~ok3 & ok1)[..., None], _any_perpendicular(e1), e3)
    neither = ~ok1 & ~ok3
    e1 = np.where(neither[..., None], fallback, e1)
    e3 = np.where(neither[..., None], fallback_z, e3)

    # Orthonormalize exactly: project e3 off e1, then e2 completes the frame.
    e3 = e3 - np.sum(e3 * e1, axis=-1, keepdims=True) * e1
    e3 = e3 / np.linalg.norm(e3, axis=-1, keepdims=True)
    e2 = np.cross(e3, e1)

    ident = np.broadcast_to(np.eye(3), a.shape).copy()
    vecs = np.stack([e1, e2, e3], axis=-1)
    return np.where(isotropic[..., None, None], ident, vecs)


def _clamped_eigvals(t: TensorVolume) -> np.ndarray:
    eigvals, _ = eig_sym3(t.d6)
    return np.maximum(eigvals, 0.0)


def fa_map(t: TensorVolume) -> Volume4D:
    """Fractional anisotropy from eigenvalues clamped to be non-negative.

    FA = sqrt(1/2) sqrt((l1-l2)^2 + (l2-l3)^2 + (l3-l1)^2) / sqrt(l1^2+l2^2+l3^2),
    defined as 0 where all eigenvalues vanish.
    """
    lam = _clamped_eigvals(t)
    l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
    num = np.sqrt(0.5) * np.sqrt((l1 - l2) ** 2 + (l2 - l3) ** 2 + (l3 - l1) ** 2)
    den = np.sqrt(l1 * l1 + l2 * l2 + l3 * l3)
    fa = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return Volume4D(fa[..., None], spacing=t.spacing, affine=t.affine, intent="scalar")


def md_map(t: TensorVolume) -> Volume4D:
    """Mean diffusivity: average of the (clamped) eigenvalues."""
    lam = _clamped_eigvals(t)
    md = lam.mean(axis=-1)
    return Volume4D(md[..., None], spacing=t.spacing, affine=t.affine, intent="scalar")
