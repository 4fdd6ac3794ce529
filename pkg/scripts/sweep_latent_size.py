#!/usr/bin/env python3
"""Sweep the latent feature-map count M and keep the best validation loss.

Replaces opaque hyperparameter-search tooling with an explicit grid; the
selection criterion is the same (minimal validation MSE). At full scale the
candidate set is {16, 32, 64, 128}; reduced widths make sense for phantoms.

Example:
    python scripts/sweep_latent_size.py --out runs/sweep --net sh4 \
        --m-values 4,8,16 --epochs 30
"""

import argparse
import os
import sys

from dmrislice import make_phantom
from dmrislice.ae import ModelConfig, TrainConfig, save_checkpoint
from dmrislice.ae.train import (
    averaged_dwi_slices,
    slices_per_volume,
    stacked_slices,
    sweep_latent_size,
)
from dmrislice.phantom import PhantomSpec
from dmrislice.sh import fit_sh


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True)
    p.add_argument("--net", choices=("b0", "avg-b1000", "sh4"), default="sh4")
    p.add_argument("--dims", default="64,64,16")
    p.add_argument("--directions", type=int, default=88)
    p.add_argument("--m-values", default="16,32,64,128")
    p.add_argument("--base-width", type=int, default=4)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--avg-n", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    dims = tuple(int(t) for t in args.dims.split(","))
    data = make_phantom(
        PhantomSpec(dims=dims, n_directions=args.directions,
                    noise="rician", noise_sigma=0.02, seed=args.seed)
    )
    if args.net == "b0":
        dataset = slices_per_volume(data.b0, mask=data.labels)
        channels = 1
    elif args.net == "avg-b1000":
        dataset = averaged_dwi_slices(
            data.dwi, n_average=args.avg_n, n_samples=4, seed=args.seed, mask=data.labels
        )
        channels = 1
    else:
        dataset = stacked_slices(fit_sh(data.dwi, data.gtab, lmax=4).volume, mask=data.labels)
        channels = 15

    size = -(-max(dims[0], dims[1]) // 16) * 16
    cfg = TrainConfig(lr=args.lr, batch_size=args.batch, epochs=args.epochs,
                      seed=args.seed, split_by="slice")
    base = ModelConfig(input_channels=channels, latent_maps=16, input_size=size,
                       base_width=args.base_width, seed=args.seed)
    m_values = [int(t) for t in args.m_values.split(",")]

    best, results = sweep_latent_size(dataset, cfg, base, m_values=m_values)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(best.model, os.path.join(args.out, f"{args.net}_best.ckpt"))

    print(f"{args.net} sweep (val MSE at the selected checkpoint):")
    for m in m_values:
        marker = " <-- selected" if best.model.cfg.latent_maps == m else ""
        print(f"  M={m:4d}: {results[m]:.5e}{marker}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
