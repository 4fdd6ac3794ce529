"""Core data model: 4D volumes, gradient tables, slices, and intensity scaling.

Volumes are stored as float64 arrays indexed (x, y, z, v). Instances are
frozen after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyShell, ParseError, ShapeError

# b-values at or below this (s/mm^2) are treated as unweighted (b0) images.
B0_THRESHOLD = 50.0

INTENTS = ("dwi", "sh_coeffs", "scalar", "labels")


@dataclass(frozen=True)
class Volume4D:
    """A 4D image volume: X*Y*Z voxels with V values per voxel."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))
    intent: str = "dwi"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[..., None]
        if data.ndim != 4:
            raise ShapeError(f"expected 3D or 4D data, got ndim={data.ndim}")
        object.__setattr__(self, "data", data)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ShapeError(f"spacing must be 3 positive reals, got {self.spacing}")
        object.__setattr__(self, "spacing", spacing)
        affine = np.asarray(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ShapeError(f"affine must be 4x4, got {affine.shape}")
        object.__setattr__(self, "affine", affine)
        if self.intent not in INTENTS:
            raise ShapeError(f"unknown intent {self.intent!r}")
        if self.intent == "labels":
            if data.size and (np.any(data < 0) or np.any(data != np.round(data))):
                raise ShapeError("labels volume must hold non-negative integers")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n_volumes(self) -> int:
        return self.data.shape[3]

    def slice_at(self, z: int) -> "SliceImage":
        """Extract the in-plane slice at index z as a (X, Y, V) image."""
        if not 0 <= z < self.data.shape[2]:
            raise ShapeError(f"slice index {z} outside [0, {self.data.shape[2]})")
        return SliceImage(self.data[:, :, z, :].copy())

    def with_data(self, data: np.ndarray, intent: str | None = None) -> "Volume4D":
        return replace(self, data=data, intent=intent or self.intent)

    def labels_array(self) -> np.ndarray:
        """Integer label map (X, Y, Z); only meaningful for intent='labels'."""
        return np.round(self.data[..., 0]).astype(np.int64)


@dataclass(frozen=True)
class GradientTable:
    """Per-volume b-values (s/mm^2) and unit gradient directions."""

    bvals: np.ndarray
    bvecs: np.ndarray

    def __post_init__(self):
        bvals = np.asarray(self.bvals, dtype=np.float64).ravel()
        bvecs = np.asarray(self.bvecs, dtype=np.float64)
        if bvecs.ndim != 2 or bvecs.shape[1] != 3:
            raise ShapeError(f"bvecs must be (V, 3), got {bvecs.shape}")
        if bvecs.shape[0] != bvals.shape[0]:
            raise ShapeError(
                f"bvals ({bvals.shape[0]}) and bvecs ({bvecs.shape[0]}) disagree on V"
            )
        if np.any(bvals < 0):
            raise ShapeError("b-values must be non-negative")
        norms = np.linalg.norm(bvecs, axis=1)
        weighted = bvals > B0_THRESHOLD
        if np.any(np.abs(norms[weighted] - 1.0) > 1e-6):
            raise ShapeError("weighted gradient directions must be unit length")
        object.__setattr__(self, "bvals", bvals)
        object.__setattr__(self, "bvecs", bvecs)

    def __len__(self) -> int:
        return self.bvals.shape[0]

    @property
    def b0_mask(self) -> np.ndarray:
        return self.bvals <= B0_THRESHOLD


@dataclass(frozen=True)
class SliceImage:
    """A single in-plane slice of shape (width, height, channels).

    ``norm_range`` records the per-channel (min, max) captured by
    :func:`normalize_slice` so the original intensities can be restored.
    """

    data: np.ndarray
    norm_range: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3:
            raise ShapeError(f"slice data must be 2D or 3D, got ndim={data.ndim}")
        object.__setattr__(self, "data", data)
        if self.norm_range is not None:
            nr = np.asarray(self.norm_range, dtype=np.float64)
            if nr.shape != (data.shape[2], 2):
                raise ShapeError(f"norm_range must be (channels, 2), got {nr.shape}")
            object.__setattr__(self, "norm_range", nr)

    @property
    def width(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def normalize_slice(s: SliceImage) -> SliceImage:
    """Min-max rescale each channel to [0, 1], recording the input range.

    A constant channel maps to all zeros and records the degenerate range
    (min, min).
    """
    data = s.data
    mn = data.min(axis=(0, 1))
    mx = data.max(axis=(0, 1))
    span = mx - mn
    out = np.zeros_like(data)
    rng = np.empty((data.shape[2], 2))
    for c in range(data.shape[2]):
        if span[c] > 0:
            out[:, :, c] = (data[:, :, c] - mn[c]) / span[c]
            rng[c] = (mn[c], mx[c])
        else:
            rng[c] = (mn[c], mn[c])
    return SliceImage(out, norm_range=rng)


def denormalize_slice(s: SliceImage) -> SliceImage:
    """Invert :func:`normalize_slice` using the recorded per-channel range."""
    if s.norm_range is None:
        raise ShapeError("slice has no recorded normalization range")
    mn = s.norm_range[:, 0]
    mx = s.norm_range[:, 1]
    out = s.data * (mx - mn) + mn
    return SliceImage(out)


def select_shell(
    v: Volume4D, g: GradientTable, b_target: float, tol: float = 50.0
) -> tuple[Volume4D, GradientTable]:
    """Keep exactly the volumes with \\|b - b_target\\| <= tol, order preserved."""
    if tol < 0:
        raise ShapeError("shell tolerance must be non-negative")
    if len(g) != v.n_volumes:
        raise ShapeError(
            f"gradient table ({len(g)}) does not match volume count ({v.n_volumes})"
        )
    keep = np.abs(g.bvals - b_target) <= tol
    if not np.any(keep):
        raise EmptyShell(f"no volumes with b within {tol} of {b_target}")
    sub = v.with_data(v.data[:, :, :, keep])
    return sub, GradientTable(g.bvals[keep], g.bvecs[keep])


def _parse_numeric_rows(path) -> list[list[float]]:
    try:
        with open(path, "r") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            continue
        try:
            rows.append([float(t) for t in tokens])
        except ValueError as exc:
            raise ParseError(f"non-numeric token in {path}", offset=lineno) from exc
    return rows


def read_gradient_table(bval_path, bvec_path) -> GradientTable:
    """Parse FSL-convention bval/bvec text files.

    Directions are renormalized to unit length whenever their norm is
    positive; zero vectors are kept as-is (b0 entries).
    """
    bval_rows = _parse_numeric_rows(bval_path)
    bvals = [x for row in bval_rows for x in row]
    if not bvals:
        raise ParseError(f"{bval_path} holds no b-values")

    bvec_rows = _parse_numeric_rows(bvec_path)
    if len(bvec_rows) != 3:
        raise ParseError(
            f"{bvec_path} must hold exactly 3 rows, found {len(bvec_rows)}"
        )
    lengths = {len(r) for r in bvec_rows}
    if len(lengths) != 1:
        raise ParseError(f"{bvec_path} rows have inconsistent lengths {sorted(lengths)}")
    (ncols,) = lengths
    if ncols != len(bvals):
        raise ShapeError(
            f"bvec columns ({ncols}) do not match bval count ({len(bvals)})"
        )
    bvecs = np.array(bvec_rows, dtype=np.float64).T
    norms = np.linalg.norm(bvecs, axis=1)
    nonzero = norms > 0
    bvecs[nonzero] /= norms[nonzero, None]
    return GradientTable(np.asarray(bvals), bvecs)


def write_gradient_table(g: GradientTable, bval_path, bvec_path) -> None:
    """Emit FSL-convention bval/bvec text files."""
    with open(bval_path, "w") as fh:
        fh.write(" ".join(f"{b:g}" for b in g.bvals) + "\n")
    with open(bvec_path, "w") as fh:
        for axis in range(3):
            fh.write(" ".join(f"{x:.9g}" for x in g.bvecs[:, axis]) + "\n")


def replace_slices(v: Volume4D, z_start: int, slices: list[SliceImage]) -> Volume4D:
    """Return a copy of ``v`` with slices z_start.. replaced in order."""
    data = v.data.copy()
    for k, s in enumerate(slices):
        z = z_start + k
        if not 0 <= z < data.shape[2]:
            raise ShapeError(f"replacement slice index {z} out of range")
        if s.data.shape != data[:, :, z, :].shape:
            raise ShapeError(
                f"slice shape {s.data.shape} does not match volume {data[:, :, z, :].shape}"
            )
        data[:, :, z, :] = s.data
    return v.with_data(data)
