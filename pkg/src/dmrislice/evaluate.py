"""Slice-removal evaluation harness.

For each gap and method the harness reconstructs the missing slices,
scores the signal error against the held-out ground truth on a shared
[0, 1] intensity scale, rebuilds the volume, refits the diffusion tensor and
scores FA/MD per tissue region on the reconstructed slices. The SH
fit-project error of the ground-truth slices is reported alongside as the
representability lower bound. Paired Wilcoxon signed-rank tests compare
methods across gap positions.

All tensor fits (ground truth and reconstructions) use the voxelwise mean of
the b0 volumes as the single unweighted measurement, so every method differs
only in how the missing slices were filled.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .dti import fa_map, fit_dti, md_map
from .errors import DegenerateSample, EmptyMask, ModelMissing, ShapeError
from .inference import GapSpec, infer_gap_sh, infer_gap_signal
from .interp import interp_missing_slices
from .phantom import LABELS, PhantomData
from .sh import fit_sh, project_sh, project_sh_slice, sh_basis_matrix
from .stats import wilcoxon_signed_rank
from .volume import SliceImage, Volume4D, replace_slices

CLASSICAL_METHODS = ("linear", "cubic", "bspline5")
MODEL_METHODS = ("ae-signal", "ae-sh4")
ALL_METHODS = CLASSICAL_METHODS + ("sh-linear",) + MODEL_METHODS

REGION_LABELS = {"wm": LABELS["wm"], "cgm": LABELS["cgm"], "cc": LABELS["cc"]}


def mse_region(est: Volume4D, gt: Volume4D, mask: Volume4D, label: int) -> float:
    """Mean squared difference over voxels carrying the given label."""
    if est.dims != gt.dims or est.dims[:3] != mask.dims[:3]:
        raise ShapeError(
            f"shape mismatch: est {est.dims}, gt {gt.dims}, mask {mask.dims}"
        )
    sel = mask.labels_array() == label
    if not np.any(sel):
        raise EmptyMask(f"no voxels with label {label}")
    diff = est.data[sel] - gt.data[sel]
    return float(np.mean(diff * diff))


@dataclass
class EvalReport:
    config: dict
    results: dict = field(default_factory=dict)
    sh_bound: dict = field(default_factory=dict)
    wilcoxon: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    folds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "config": self.config,
            "results": self.results,
            "sh_bound": self.sh_bound,
            "wilcoxon": self.wilcoxon,
            "timing": self.timing,
        }
        if self.folds:
            out["folds"] = self.folds
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["n_missing", "method", "metric", "region", "gap", "value"])
        for n_key in sorted(self.results):
            for method in sorted(self.results[n_key]):
                cell = self.results[n_key][method]
                for gap, value in zip(
                    self.config["gaps"], cell["signal_mse"]["per_gap"]
                ):
                    writer.writerow([n_key, method, "signal_mse", "all", gap, value])
                writer.writerow(
                    [n_key, method, "signal_mse", "all", "mean", cell["signal_mse"]["mean"]]
                )
                for metric in ("fa_mse", "md_mse"):
                    for region in sorted(cell[metric]):
                        entry = cell[metric][region]
                        for gap, value in zip(self.config["gaps"], entry["per_gap"]):
                            writer.writerow([n_key, method, metric, region, gap, value])
                        writer.writerow([n_key, method, metric, region, "mean", entry["mean"]])
            if n_key in self.sh_bound:
                bound = self.sh_bound[n_key]
                for gap, value in zip(self.config["gaps"], bound["per_gap"]):
                    writer.writerow([n_key, "sh4-bound", "signal_mse", "all", gap, value])
                writer.writerow([n_key, "sh4-bound", "signal_mse", "all", "mean", bound["mean"]])
            for metric in sorted(self.wilcoxon.get(n_key, {})):
                block = self.wilcoxon[n_key][metric]
                for region in sorted(block):
                    for pair in sorted(block[region]):
                        entry = block[region][pair]
                        writer.writerow(
                            [n_key, pair, f"wilcoxon_p_{metric}", region, "", entry["p"]]
                        )
        return buf.getvalue()

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(self.to_json())
        with open(os.path.join(out_dir, "report.csv"), "w") as fh:
            fh.write(self.to_csv())


def _normalized_mse(est: np.ndarray, gt: np.ndarray, span: float) -> float:
    diff = (est - gt) / span
    return float(np.mean(diff * diff))


def _estimate_slices(data: PhantomData, method, gap: GapSpec, models, lmax, sh_cache):
    """Returns (dwi slice estimates, b0 slice estimates) for one cell."""
    b0_mean = Volume4D(data.b0.data.mean(axis=3, keepdims=True), intent="dwi")
    if method in CLASSICAL_METHODS:
        dwi_slices = interp_missing_slices(data.dwi, gap.gap_start, gap.n_missing, method)
        b0_slices = interp_missing_slices(b0_mean, gap.gap_start, gap.n_missing, method)
        return dwi_slices, b0_slices
    if method == "sh-linear":
        if "sh" not in sh_cache:
            sh_cache["sh"] = fit_sh(data.dwi, data.gtab, lmax=lmax)
        sh_vol = sh_cache["sh"].volume
        coeff_slices = interp_missing_slices(sh_vol, gap.gap_start, gap.n_missing, "linear")
        basis = sh_basis_matrix(data.gtab.bvecs, lmax)
        dwi_slices = [SliceImage(project_sh_slice(s.data, basis)) for s in coeff_slices]
        b0_slices = interp_missing_slices(b0_mean, gap.gap_start, gap.n_missing, "linear")
        return dwi_slices, b0_slices
    if method == "ae-signal":
        if models is None or "signal" not in models or "b0" not in models:
            raise ModelMissing("ae-signal needs 'signal' and 'b0' models")
        dwi_slices = infer_gap_signal(models["signal"], data.dwi, gap)
        b0_slices = infer_gap_signal(models["b0"], b0_mean, gap)
        return dwi_slices, b0_slices
    if method == "ae-sh4":
        if models is None or "sh4" not in models or "b0" not in models:
            raise ModelMissing("ae-sh4 needs 'sh4' and 'b0' models")
        return infer_gap_sh(
            models["sh4"], models["b0"], data.dwi, data.b0, data.gtab, gap, lmax=lmax
        )
    raise ShapeError(f"unknown method {method!r}")


def _gap_subvolume(vol: Volume4D, gap: GapSpec) -> Volume4D:
    return vol.with_data(vol.data[:, :, gap.gap_start : gap.gap_start + gap.n_missing, :])


def _dti_maps(dwi: Volume4D, b0: Volume4D, gtab):
    tensors = fit_dti(dwi, b0, gtab)
    return fa_map(tensors), md_map(tensors)


def _evaluate_cell(data, method, gap, models, lmax, span, gt_maps, sh_cache):
    start = time.perf_counter()
    dwi_slices, b0_slices = _estimate_slices(data, method, gap, models, lmax, sh_cache)

    gt_slices = data.dwi.data[:, :, gap.gap_start : gap.gap_start + gap.n_missing, :]
    est_stack = np.stack([s.data for s in dwi_slices], axis=2)
    signal_mse = _normalized_mse(est_stack, gt_slices, span)

    b0_mean = Volume4D(data.b0.data.mean(axis=3, keepdims=True), intent="dwi")
    dwi_est = replace_slices(data.dwi, gap.gap_start, dwi_slices)
    b0_est = replace_slices(b0_mean, gap.gap_start, b0_slices)
    fa_est, md_est = _dti_maps(dwi_est, b0_est, data.gtab)
    fa_gt, md_gt = gt_maps

    labels_gap = _gap_subvolume(data.labels, gap)
    fa_cell = {}
    md_cell = {}
    for region, label in REGION_LABELS.items():
        fa_cell[region] = mse_region(
            _gap_subvolume(fa_est, gap), _gap_subvolume(fa_gt, gap), labels_gap, label
        )
        md_cell[region] = mse_region(
            _gap_subvolume(md_est, gap), _gap_subvolume(md_gt, gap), labels_gap, label
        )
    runtime = time.perf_counter() - start
    return signal_mse, fa_cell, md_cell, runtime


def _sh_bound_for_gap(data: PhantomData, gap: GapSpec, lmax: int, span: float) -> float:
    gt_gap = _gap_subvolume(data.dwi, gap)
    recon = project_sh(fit_sh(gt_gap, data.gtab, lmax=lmax), data.gtab.bvecs)
    return _normalized_mse(recon.data, gt_gap.data, span)


def run_experiment(
    data: PhantomData,
    methods=CLASSICAL_METHODS + ("sh-linear",),
    gaps=(3, 5, 7, 9, 11),
    n_values=(1, 2),
    models=None,
    lmax: int = 4,
    seed: int = 0,
    threads: int | None = None,
    folds: int = 1,
) -> EvalReport:
    """Run the full method x N x gap grid and assemble the report.

    ``models`` maps {'signal', 'sh4', 'b0'} to Autoencoder instances for the
    model-based methods. Cells run in a thread pool when ``threads`` exceeds
    one (each cell gets its own model clones); report assembly is always in
    fixed order, so the output is identical either way. ``folds`` > 1 adds a
    per-fold breakdown (gap positions split round-robin), the desk-scale
    stand-in for subject-level cross-validation.
    """
    methods = list(methods)
    gaps = [int(z) for z in gaps]
    n_values = [int(n) for n in n_values]
    for m in methods:
        if m not in ALL_METHODS:
            raise ShapeError(f"unknown method {m!r} (choose from {ALL_METHODS})")
    if folds < 1 or folds > len(gaps):
        raise ShapeError(f"folds must lie in [1, {len(gaps)}], got {folds}")

    values = data.dwi.data
    span = float(values.max() - values.min()) or 1.0
    gt_maps = _dti_maps(
        data.dwi,
        Volume4D(data.b0.data.mean(axis=3, keepdims=True), intent="dwi"),
        data.gtab,
    )

    config = {
        "methods": methods,
        "gaps": gaps,
        "n_values": n_values,
        "lmax": lmax,
        "seed": seed,
        "folds": folds,
        "regions": sorted(REGION_LABELS),
    }
    report = EvalReport(config=config)

    def run_cell(n, method, gap_start, local_models, sh_cache):
        gap = GapSpec(gap_start=gap_start, n_missing=n)
        return _evaluate_cell(data, method, gap, local_models, lmax, span, gt_maps, sh_cache)

    cells = {}
    jobs = [(n, m, g) for n in n_values for m in methods for g in gaps]
    if threads is not None and threads > 1:
        def worker(job):
            n, method, gap_start = job
            local = (
                {k: v.clone() for k, v in models.items()} if models else None
            )
            return job, run_cell(n, method, gap_start, local, {})

        with ThreadPoolExecutor(max_workers=threads) as pool:
            for job, result in pool.map(worker, jobs):
                cells[job] = result
    else:
        sh_cache = {}
        for job in jobs:
            n, method, gap_start = job
            cells[job] = run_cell(n, method, gap_start, models, sh_cache)

    for n in n_values:
        n_key = str(n)
        report.results[n_key] = {}
        report.timing[n_key] = {}
        for method in methods:
            per_gap_signal, per_gap_fa, per_gap_md, runtimes = [], [], [], []
            for gap_start in gaps:
                signal_mse, fa_cell, md_cell, runtime = cells[(n, method, gap_start)]
                per_gap_signal.append(signal_mse)
                per_gap_fa.append(fa_cell)
                per_gap_md.append(md_cell)
                runtimes.append(runtime)
            cell = {
                "signal_mse": {
                    "per_gap": per_gap_signal,
                    "mean": float(np.mean(per_gap_signal)),
                },
                "fa_mse": {},
                "md_mse": {},
            }
            for region in REGION_LABELS:
                fa_vals = [c[region] for c in per_gap_fa]
                md_vals = [c[region] for c in per_gap_md]
                cell["fa_mse"][region] = {
                    "per_gap": fa_vals,
                    "mean": float(np.mean(fa_vals)),
                }
                cell["md_mse"][region] = {
                    "per_gap": md_vals,
                    "mean": float(np.mean(md_vals)),
                }
            report.results[n_key][method] = cell
            report.timing[n_key][method] = float(np.sum(runtimes))

        bound_vals = [
            _sh_bound_for_gap(data, GapSpec(gap_start=g, n_missing=n), lmax, span)
            for g in gaps
        ]
        report.sh_bound[n_key] = {
            "per_gap": bound_vals,
            "mean": float(np.mean(bound_vals)),
        }

        report.wilcoxon[n_key] = _wilcoxon_block(report.results[n_key], methods)

        if folds > 1:
            fold_block = {}
            for f in range(folds):
                fold_gaps = gaps[f::folds]
                fold_block[f"fold{f}"] = {
                    "gaps": fold_gaps,
                    "signal_mse": {
                        method: float(
                            np.mean([cells[(n, method, g)][0] for g in fold_gaps])
                        )
                        for method in methods
                    },
                }
            report.folds[n_key] = fold_block
    return report


def _wilcoxon_block(results_for_n: dict, methods) -> dict:
    block = {"signal": {"all": {}}, "fa": {}, "md": {}}
    for region in REGION_LABELS:
        block["fa"][region] = {}
        block["md"][region] = {}
    for a, b in combinations(methods, 2):
        pair = f"{a}_vs_{b}"
        pairs = [
            (
                "signal",
                "all",
                results_for_n[a]["signal_mse"]["per_gap"],
                results_for_n[b]["signal_mse"]["per_gap"],
            )
        ]
        for region in REGION_LABELS:
            pairs.append(
                (
                    "fa",
                    region,
                    results_for_n[a]["fa_mse"][region]["per_gap"],
                    results_for_n[b]["fa_mse"][region]["per_gap"],
                )
            )
            pairs.append(
                (
                    "md",
                    region,
                    results_for_n[a]["md_mse"][region]["per_gap"],
                    results_for_n[b]["md_mse"][region]["per_gap"],
                )
            )
        for metric, region, x, y in pairs:
            try:
                w, p = wilcoxon_signed_rank(x, y)
                entry = {"W": w, "p": p}
            except DegenerateSample as exc:
                entry = {"W": None, "p": None, "note": str(exc)}
            block[metric][region][pair] = entry
    return block
