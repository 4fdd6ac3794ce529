"""Latent-space inference of missing slices.

The two surviving neighbors are normalized, encoded separately, their latent
feature maps blended with gap-position weights (equal for N=1; {2/3, 1/3} and
{1/3, 2/3} for N=2, nearer neighbor heavier), decoded, and finally mapped
back to input intensities by histogram matching against the same weighted
average of the two unnormalized neighbor slices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ae.model import Autoencoder
from .errors import BoundaryGap, ShapeError
from .sh import fit_sh, project_sh_slice, sh_basis_matrix
from .volume import GradientTable, SliceImage, Volume4D, normalize_slice


@dataclass(frozen=True)
class GapSpec:
    """N consecutive missing slices starting at gap_start."""

    gap_start: int
    n_missing: int

    def __post_init__(self):
        if self.n_missing not in (1, 2):
            raise ShapeError(f"n_missing must be 1 or 2, got {self.n_missing}")
        if self.gap_start < 1:
            raise BoundaryGap("gap must leave a neighbor slice below it")

    @property
    def weights(self) -> list[tuple[float, float]]:
        """Per missing slice: (weight of previous, weight of next) neighbor."""
        n = self.n_missing
        return [((n - k) / (n + 1), (k + 1) / (n + 1)) for k in range(n)]

    def validate_for(self, z_dim: int) -> None:
        if self.gap_start + self.n_missing > z_dim - 1:
            raise BoundaryGap(
                f"gap [{self.gap_start}, {self.gap_start + self.n_missing}) needs "
                f"neighbors on both sides of a {z_dim}-slice volume"
            )


def blend_latents(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """Convex combination alpha*a + (1-alpha)*b of two latent codes.

    Evaluated as b + alpha*(a-b) so equal inputs reproduce exactly.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"latent shapes differ: {a.shape} vs {b.shape}")
    if not 0.0 < alpha < 1.0:
        raise ShapeError(f"alpha must lie in (0, 1), got {alpha}")
    return b + alpha * (a - b)


def _match_channel(source: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Exact sorted-quantile CDF matching of one channel (no binning)."""
    src_values, src_inverse, src_counts = np.unique(
        source.ravel(), return_inverse=True, return_counts=True
    )
    ref_values, ref_counts = np.unique(reference.ravel(), return_counts=True)
    src_quantiles = np.cumsum(src_counts) / source.size
    ref_quantiles = np.cumsum(ref_counts) / reference.size
    mapped = np.interp(src_quantiles, ref_quantiles, ref_values)
    return mapped[src_inverse].reshape(source.shape)


def histogram_match(source, reference):
    """Map source intensities so their distribution matches the reference.

    Works per channel. Accepts SliceImage or plain arrays; returns the same
    kind as the source.
    """
    src_img = source if isinstance(source, SliceImage) else SliceImage(np.asarray(source))
    ref_img = (
        reference if isinstance(reference, SliceImage) else SliceImage(np.asarray(reference))
    )
    if src_img.channels != ref_img.channels:
        raise ShapeError(
            f"channel mismatch: source {src_img.channels}, reference {ref_img.channels}"
        )
    out = np.empty_like(src_img.data)
    for c in range(src_img.channels):
        out[:, :, c] = _match_channel(src_img.data[:, :, c], ref_img.data[:, :, c])
    if isinstance(source, SliceImage):
        return SliceImage(out)
    return out


def center_crop_pad(data: np.ndarray, size: int) -> tuple[np.ndarray, tuple]:
    """Center-crop or zero-pad a (W, H, C) slice to (size, size, C)."""
    w, h, c = data.shape
    out = np.zeros((size, size, c))
    src_w0 = max(0, (w - size) // 2)
    src_h0 = max(0, (h - size) // 2)
    dst_w0 = max(0, (size - w) // 2)
    dst_h0 = max(0, (size - h) // 2)
    cw = min(w, size)
    ch = min(h, size)
    out[dst_w0 : dst_w0 + cw, dst_h0 : dst_h0 + ch] = data[
        src_w0 : src_w0 + cw, src_h0 : src_h0 + ch
    ]
    return out, (w, h, src_w0, src_h0, dst_w0, dst_h0, cw, ch)


def uncrop(data: np.ndarray, geometry: tuple) -> np.ndarray:
    """Invert :func:`center_crop_pad`; padded borders come back as zeros."""
    w, h, src_w0, src_h0, dst_w0, dst_h0, cw, ch = geometry
    out = np.zeros((w, h, data.shape[2]))
    out[src_w0 : src_w0 + cw, src_h0 : src_h0 + ch] = data[
        dst_w0 : dst_w0 + cw, dst_h0 : dst_h0 + ch
    ]
    return out


def _to_batches(data: np.ndarray, model: Autoencoder):
    """Arrange a (W, H, C) slice for the model: (1, C, W, H) when channel
    counts match, else C single-channel items for a 1-channel model."""
    c = data.shape[2]
    if model.cfg.input_channels == c:
        return data.transpose(2, 0, 1)[None]
    if model.cfg.input_channels == 1:
        return data.transpose(2, 0, 1)[:, None]
    raise ShapeError(
        f"model expects {model.cfg.input_channels} channels, slice has {c}"
    )


def _from_batches(batch: np.ndarray, channels: int) -> np.ndarray:
    if batch.shape[0] == 1 and batch.shape[1] == channels:
        return batch[0].transpose(1, 2, 0)
    return batch[:, 0].transpose(1, 2, 0)


def infer_between_slices(
    model: Autoencoder,
    prev_slice: SliceImage,
    next_slice: SliceImage,
    gap: GapSpec,
) -> list[SliceImage]:
    """Decode blended latents of the two neighbors, one image per missing slice."""
    if prev_slice.data.shape != next_slice.data.shape:
        raise ShapeError("adjacent slices must share a shape")
    size = model.cfg.input_size

    prepared = []
    for s in (prev_slice, next_slice):
        cropped, geometry = center_crop_pad(normalize_slice(s).data, size)
        prepared.append(_to_batches(cropped, model))
    z_prev = model.encode(prepared[0], train=False)
    z_next = model.encode(prepared[1], train=False)

    w, h, src_w0, src_h0, dst_w0, dst_h0, cw, ch = geometry
    outputs = []
    for w_prev, w_next in gap.weights:
        blended = blend_latents(z_prev, z_next, w_prev)
        decoded = model.decode(blended, train=False)
        raw = _from_batches(decoded, prev_slice.channels)
        reference = w_prev * prev_slice.data + w_next * next_slice.data
        # Histogram-match over the model's real field of view (padding and
        # crop borders excluded); anything outside the crop falls back to the
        # reference, the weighted neighbor average.
        source_real = raw[dst_w0 : dst_w0 + cw, dst_h0 : dst_h0 + ch]
        ref_real = reference[src_w0 : src_w0 + cw, src_h0 : src_h0 + ch]
        matched = histogram_match(SliceImage(source_real), SliceImage(ref_real))
        out = reference.copy()
        out[src_w0 : src_w0 + cw, src_h0 : src_h0 + ch] = matched.data
        outputs.append(SliceImage(out))
    return outputs


def infer_gap_signal(model: Autoencoder, v: Volume4D, gap: GapSpec) -> list[SliceImage]:
    """Infer the missing slices of a volume in the raw signal domain.

    Multi-volume inputs are handled channel by channel through a 1-channel
    model, or jointly when the model's channel count matches V.
    """
    gap.validate_for(v.dims[2])
    prev_slice = v.slice_at(gap.gap_start - 1)
    next_slice = v.slice_at(gap.gap_start + gap.n_missing)
    return infer_between_slices(model, prev_slice, next_slice, gap)


def infer_gap_sh(
    model_sh: Autoencoder,
    model_b0: Autoencoder,
    dwi: Volume4D,
    b0: Volume4D,
    g: GradientTable,
    gap: GapSpec,
    lmax: int = 4,
    lambda_reg: float = 0.0,
) -> tuple[list[SliceImage], list[SliceImage]]:
    """SH-domain gap inference plus matching b0 slices.

    The two neighbor slices are SH-fit, the coefficient stacks inferred with
    the SH model, the histogram-matched outputs projected back onto the
    acquisition directions. The b0 slices come from the 1-channel b0 model
    applied to the voxelwise mean of the b0 volumes; both are returned so a
    tensor fit can run downstream.
    """
    gap.validate_for(dwi.dims[2])
    z_prev = gap.gap_start - 1
    z_next = gap.gap_start + gap.n_missing

    neighbors = dwi.data[:, :, [z_prev, z_next], :]
    sh = fit_sh(Volume4D(neighbors, intent="dwi"), g, lmax=lmax, lambda_reg=lambda_reg)
    prev_sh = SliceImage(sh.volume.data[:, :, 0, :])
    next_sh = SliceImage(sh.volume.data[:, :, 1, :])
    inferred = infer_between_slices(model_sh, prev_sh, next_sh, gap)

    basis = sh_basis_matrix(g.bvecs, lmax)
    dwi_slices = [SliceImage(project_sh_slice(s.data, basis)) for s in inferred]

    b0_mean = Volume4D(b0.data.mean(axis=3, keepdims=True), intent="dwi")
    b0_slices = infer_gap_signal(model_b0, b0_mean, gap)
    return dwi_slices, b0_slices
