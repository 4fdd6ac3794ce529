"""The convolutional autoencoder: four two-conv encoder blocks with 2x2
average pooling, three extra convolutions forming the latent feature maps,
and a mirrored decoder using nearest-neighbor upsampling (a stride-2
transposed-convolution variant is available but off by default), closed by a
1x1 convolution with sigmoid output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .layers import (
    ELU,
    AvgPool2x2,
    BatchNorm2D,
    Conv2D,
    ConvTranspose2D,
    NearestUpsample2x2,
    Sigmoid,
)

N_POOLINGS = 4


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 1
    latent_maps: int = 32
    input_size: int = 128
    base_width: int = 32  # width of the first encoder block; 4 gives the /8 reduced model
    upsample: str = "nearest"  # nearest | transposed
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.input_size % (2**N_POOLINGS) != 0 or self.input_size < 2**N_POOLINGS:
            raise ShapeError(
                f"input_size must be a multiple of {2 ** N_POOLINGS}, got {self.input_size}"
            )
        if self.upsample not in ("nearest", "transposed"):
            raise ShapeError(f"unknown upsample mode {self.upsample!r}")
        if self.input_channels < 1 or self.latent_maps < 1 or self.base_width < 1:
            raise ShapeError("channel counts must be positive")

    @property
    def latent_size(self) -> int:
        return self.input_size // (2**N_POOLINGS)

    @property
    def encoder_widths(self) -> tuple[int, ...]:
        return tuple(self.base_width * (2**i) for i in range(N_POOLINGS))

    @property
    def extra_widths(self) -> tuple[int, int, int]:
        return (self.base_width * 16, self.base_width * 8, self.latent_maps)

    @property
    def decoder_widths(self) -> tuple[int, ...]:
        return tuple(self.base_width * (2**i) for i in range(N_POOLINGS, -1, -1))


class Autoencoder:
    """Holds the ordered layer stacks and provides encode/decode/forward."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.encoder: list = []
        self.decoder: list = []

        def block(layers, c_in, c_out, rng):
            layers.append(Conv2D(c_in, c_out, 3, rng))
            layers.append(BatchNorm2D(c_out, cfg.bn_momentum, cfg.bn_eps))
            layers.append(ELU())

        c = cfg.input_channels
        for width in cfg.encoder_widths:
            block(self.encoder, c, width, rng)
            block(self.encoder, width, width, rng)
            self.encoder.append(AvgPool2x2())
            c = width
        for width in cfg.extra_widths:
            block(self.encoder, c, width, rng)
            c = width

        widths = cfg.decoder_widths  # e.g. (512, 256, 128, 64, 32)
        block(self.decoder, cfg.latent_maps, widths[0], rng)
        c = widths[0]
        for width in widths[1:]:
            if cfg.upsample == "nearest":
                self.decoder.append(NearestUpsample2x2())
                self.decoder.append(Conv2D(c, width, 3, rng))
            else:
                self.decoder.append(ConvTranspose2D(c, width, rng))
            self.decoder.append(BatchNorm2D(width, cfg.bn_momentum, cfg.bn_eps))
            self.decoder.append(ELU())
            c = width
        self.decoder.append(Conv2D(c, cfg.input_channels, 1, rng, bias=True))
        self.decoder.append(Sigmoid())

    # -- plumbing ----------------------------------------------------------
    def _layers(self):
        return self.encoder + self.decoder

    def parameters(self):
        """(name, array) pairs in fixed declaration order."""
        out = []
        for i, layer in enumerate(self._layers()):
            for name, arr in layer.params.items():
                out.append((f"layer{i:02d}.{name}", arr))
        return out

    def gradients(self):
        out = []
        for layer in self._layers():
            for name in layer.params:
                out.append(layer.grads[name])
        return out

    def set_parameters(self, arrays):
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"expected {len(params)} tensors, got {len(arrays)}")
        for (name, current), new in zip(params, arrays):
            if current.shape != new.shape:
                raise ShapeError(f"{name}: shape {new.shape} != {current.shape}")
            current[...] = new

    def named_buffers(self):
        out = []
        for i, layer in enumerate(self._layers()):
            for name, arr in layer.buffers.items():
                out.append((f"layer{i:02d}.{name}", arr))
        return out

    def state_snapshot(self):
        return (
            [arr.copy() for _, arr in self.parameters()],
            [arr.copy() for _, arr in self.named_buffers()],
        )

    def load_snapshot(self, snapshot):
        params, buffers = snapshot
        self.set_parameters(params)
        for (name, current), new in zip(self.named_buffers(), buffers):
            current[...] = new

    def clone(self) -> "Autoencoder":
        other = Autoencoder(self.cfg)
        other.load_snapshot(self.state_snapshot())
        return other

    # -- computation -------------------------------------------------------
    def _check_input(self, x):
        if x.ndim != 4:
            raise ShapeError(f"expected NCHW batch, got ndim={x.ndim}")
        if x.shape[1] != self.cfg.input_channels:
            raise ShapeError(
                f"model expects {self.cfg.input_channels} channels, got {x.shape[1]}"
            )
        if x.shape[2] != self.cfg.input_size or x.shape[3] != self.cfg.input_size:
            raise ShapeError(
                f"model expects {self.cfg.input_size}x{self.cfg.input_size} slices, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )

    def encode(self, x, train=False):
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        for layer in self.encoder:
            x = layer.forward(x, train=train)
        return x

    def decode(self, z, train=False):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 4 or z.shape[1] != self.cfg.latent_maps:
            raise ShapeError(
                f"latent must be (B, {self.cfg.latent_maps}, {self.cfg.latent_size}, "
                f"{self.cfg.latent_size}), got {z.shape}"
            )
        for layer in self.decoder:
            z = layer.forward(z, train=train)
        return z

    def forward(self, x, train=False):
        """Reconstruction and latent code for a batch."""
        z = self.encode(x, train=train)
        return self.decode(z, train=train), z

    def loss_and_grads(self, batch):
        """Mean-squared reconstruction error and gradients for all parameters.

        Runs in train mode (batch statistics); gradients are averaged over
        every output value, matching the loss reduction.
        """
        x = np.asarray(batch, dtype=np.float64)
        if x.size == 0:
            raise ShapeError("empty batch")
        y, _ = self.forward(x, train=True)
        diff = y - x
        mse = float(np.mean(diff * diff))
        grad = 2.0 * diff / diff.size
        for layer in reversed(self._layers()):
            grad = layer.backward(grad)
        return mse, self.gradients()


def build_model(cfg: ModelConfig) -> Autoencoder:
    """Construct an autoencoder with He-uniform seeded initialization."""
    return Autoencoder(cfg)


def config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "input_channels": cfg.input_channels,
        "latent_maps": cfg.latent_maps,
        "input_size": cfg.input_size,
        "base_width": cfg.base_width,
        "upsample": cfg.upsample,
        "bn_momentum": cfg.bn_momentum,
        "bn_eps": cfg.bn_eps,
        "seed": cfg.seed,
    }


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        input_channels=int(d["input_channels"]),
        latent_maps=int(d["latent_maps"]),
        input_size=int(d["input_size"]),
        base_width=int(d["base_width"]),
        upsample=str(d["upsample"]),
        bn_momentum=float(d["bn_momentum"]),
        bn_eps=float(d["bn_eps"]),
        seed=int(d["seed"]),
    )
