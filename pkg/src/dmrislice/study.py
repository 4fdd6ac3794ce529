"""Study-directory layout: one DWI acquisition as files on disk.

A study directory holds ``dwi.nii`` (b0 volumes and the diffusion shell
together), FSL ``dwi.bval``/``dwi.bvec``, optionally ``labels.nii`` with
tissue labels, and for phantoms the ground-truth ``tensors.nii``/``s0.nii``
plus ``phantom.json``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

import numpy as np

from .dti import TensorVolume
from .errors import EmptyShell, ParseError
from .nifti import read_nifti, write_nifti
from .phantom import PhantomData, PhantomSpec
from .volume import (
    B0_THRESHOLD,
    GradientTable,
    Volume4D,
    read_gradient_table,
    select_shell,
    write_gradient_table,
)


def write_study(data: PhantomData, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    combined = np.concatenate([data.b0.data, data.dwi.data], axis=3)
    n_b0 = data.b0.n_volumes
    bvals = np.concatenate([np.zeros(n_b0), data.gtab.bvals])
    bvecs = np.vstack([np.zeros((n_b0, 3)), data.gtab.bvecs])
    write_nifti(Volume4D(combined, intent="dwi"), os.path.join(out_dir, "dwi.nii"))
    write_gradient_table(
        GradientTable(bvals, bvecs),
        os.path.join(out_dir, "dwi.bval"),
        os.path.join(out_dir, "dwi.bvec"),
    )
    write_nifti(data.labels, os.path.join(out_dir, "labels.nii"))
    if data.tensors is not None:
        write_nifti(
            Volume4D(data.tensors.d6, intent="scalar"),
            os.path.join(out_dir, "tensors.nii"),
        )
        write_nifti(
            Volume4D(data.tensors.s0[..., None], intent="scalar"),
            os.path.join(out_dir, "s0.nii"),
        )
    if data.spec is not None:
        with open(os.path.join(out_dir, "phantom.json"), "w") as fh:
            json.dump(asdict(data.spec), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_study(path, b_target: float | None = None, shell_tol: float = 50.0) -> PhantomData:
    """Load a study directory back into memory.

    ``b_target`` selects the diffusion shell; by default the largest b-value
    present is used. Ground-truth tensors and the phantom spec are loaded
    when their files exist; without a labels file every voxel is tagged with
    label 1 so mask-based slice filtering keeps everything.
    """
    dwi_path = os.path.join(path, "dwi.nii")
    combined = read_nifti(dwi_path, intent="dwi")
    gtab = read_gradient_table(
        os.path.join(path, "dwi.bval"), os.path.join(path, "dwi.bvec")
    )
    if len(gtab) != combined.n_volumes:
        raise ParseError(
            f"{path}: gradient table ({len(gtab)}) does not match dwi volumes "
            f"({combined.n_volumes})"
        )

    b0_idx = gtab.b0_mask
    if not np.any(b0_idx):
        raise EmptyShell(f"{path}: no b0 volumes (b <= {B0_THRESHOLD})")
    b0 = combined.with_data(combined.data[:, :, :, b0_idx])

    if b_target is None:
        b_target = float(gtab.bvals.max())
    dwi, shell = select_shell(combined, gtab, b_target, tol=shell_tol)

    labels_path = os.path.join(path, "labels.nii")
    if os.path.exists(labels_path):
        labels = read_nifti(labels_path, intent="labels")
    else:
        labels = Volume4D(
            np.ones(combined.dims[:3] + (1,)), intent="labels"
        )

    tensors = None
    tensors_path = os.path.join(path, "tensors.nii")
    s0_path = os.path.join(path, "s0.nii")
    if os.path.exists(tensors_path) and os.path.exists(s0_path):
        d6 = read_nifti(tensors_path).data
        s0 = read_nifti(s0_path).data[..., 0]
        tensors = TensorVolume(d6=d6, s0=s0)

    spec = None
    spec_path = os.path.join(path, "phantom.json")
    if os.path.exists(spec_path):
        with open(spec_path) as fh:
            raw = json.load(fh)
        raw["dims"] = tuple(raw["dims"])
        spec = PhantomSpec(**raw)

    return PhantomData(dwi=dwi, b0=b0, gtab=shell, labels=labels, tensors=tensors, spec=spec)
