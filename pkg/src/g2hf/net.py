"""Network assembly: toy pyramid encoder, module wiring, heads, weights I/O."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import ops
from .attention import PCA_FACTORS, PSA_FACTORS
from .dgc import GEO_FACTORS, dgc_forward, dgc_shapes
from .fusion import decode, decoder_shapes, dsp_forward, dsp_shapes
from .mde import KERNELS, mde_forward, mde_shapes
from .params import Params, Shapes, as_params, conv_shapes, init_uniform, prefixed
from .rng import Rng
from .tensor import ShapeError, Tensor

ModelWeights = dict[str, np.ndarray]

# encoder stage strides: stem, then levels 1..5
STAGE_STRIDES = (2, 2, 1, 2, 2, 2)
LEVEL_STRIDES = (4, 4, 8, 16, 32)


class PreconditionError(ShapeError):
    """Input geometry violates a module's divisibility requirement."""


@dataclass(frozen=True)
class NetConfig:
    channels: int = 64
    input_size: int = 384
    psa_factors: tuple[int, ...] = PSA_FACTORS
    pca_factors: tuple[int, ...] = PCA_FACTORS
    kernels: tuple[int, ...] = KERNELS
    geo_factors: tuple[int, ...] = GEO_FACTORS
    encoder_widths: tuple[int, ...] = (32, 64, 64, 128, 256, 256)
    scaled_attention: bool = False

    @property
    def grid(self) -> int:
        return math.isqrt(self.channels)

    @classmethod
    def toy(cls, **overrides) -> "NetConfig":
        base = dict(
            channels=4,
            input_size=192,
            pca_factors=(1, 2),
            encoder_widths=(8, 16, 16, 16, 16, 16),
        )
        base.update(overrides)
        return cls(**base)

    def with_size(self, size: int) -> "NetConfig":
        return replace(self, input_size=size)

    def level_sizes(self, h: int, w: int) -> list[tuple[int, int]]:
        return [(h // s, w // s) for s in LEVEL_STRIDES]

    def check_input(self, h: int, w: int) -> None:
        """Raise :class:`PreconditionError` naming every offending level."""
        problems = []
        if h % 32 or w % 32:
            problems.append(f"input {h}x{w} is not divisible by 32")
        else:
            grid = self.grid
            if grid * grid != self.channels:
                problems.append(f"channel count {self.channels} is not a perfect square")
            elif any(grid % r for r in self.pca_factors):
                problems.append(f"pca factors {self.pca_factors} do not divide {grid}")
            for level, (lh, lw) in enumerate(self.level_sizes(h, w), start=1):
                need = []
                if level <= 4:
                    need += list(self.psa_factors)
                if level <= 2:
                    need.append(2)
                if level in (3, 4):
                    need += list(self.geo_factors)
                bad = sorted({r for r in need if lh % r or lw % r})
                if bad:
                    problems.append(f"level {level} ({lh}x{lw}) not divisible by {bad}")
        if problems:
            raise PreconditionError("divisibility: " + "; ".join(problems))


@dataclass
class SaliencyOutputs:
    """Five ``[1,H,W]`` maps in [0, 1]; ``s1`` is the primary prediction."""

    maps: list[Tensor]
    trace: dict[str, Tensor] = field(default_factory=dict)

    @property
    def s1(self) -> Tensor:
        return self.maps[0]

    def __iter__(self):
        return iter(self.maps)

    def __len__(self) -> int:
        return len(self.maps)

    def __getitem__(self, i: int) -> Tensor:
        return self.maps[i]


# ---------------------------------------------------------------- shapes

def encoder_shapes(cfg: NetConfig) -> Shapes:
    widths = cfg.encoder_widths
    shapes: Shapes = conv_shapes("stem", widths[0], 3, 3)
    for level in range(1, 6):
        shapes.update(conv_shapes(f"stage{level}", widths[level], widths[level - 1], 3))
    for level in range(1, 6):
        shapes.update(conv_shapes(f"compress{level}", cfg.channels, widths[level], 1))
    return shapes


def param_shapes(cfg: NetConfig) -> Shapes:
    c = cfg.channels
    shapes: Shapes = prefixed("encoder", encoder_shapes(cfg))
    for level in (1, 2):
        shapes.update(prefixed(
            f"mde{level}", mde_shapes(c, cfg.kernels, cfg.psa_factors, cfg.pca_factors)
        ))
    for level in (3, 4):
        shapes.update(prefixed(
            f"dgc{level}",
            dgc_shapes(c, cfg.kernels, cfg.psa_factors, cfg.pca_factors, cfg.geo_factors),
        ))
    shapes.update(prefixed("dsp5", dsp_shapes(c)))
    shapes.update(prefixed("decoder", decoder_shapes(c)))
    for level in range(1, 6):
        shapes.update(conv_shapes(f"head{level}", 1, c, 1))
    return shapes


def init_weights(rng: Rng, cfg: NetConfig) -> ModelWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    Values are rounded to float32 so that saving and loading is exact.
    """
    return init_uniform(param_shapes(cfg), rng)


# ---------------------------------------------------------------- forward

def encode(image: Tensor, p: Params, cfg: NetConfig) -> list[Tensor]:
    """Toy backbone: strided 3x3 convs with ReLU, 1x1 compression per level."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"image must be [3,H,W], got {list(image.shape)}")
    cfg.check_input(image.shape[1], image.shape[2])
    e = p.scope("encoder")
    h = ops.relu(ops.conv2d(image, e.conv("stem", stride=STAGE_STRIDES[0])))
    pyramid = []
    for level in range(1, 6):
        h = ops.relu(ops.conv2d(h, e.conv(f"stage{level}", stride=STAGE_STRIDES[level])))
        pyramid.append(ops.conv2d(h, e.conv(f"compress{level}")))
    return pyramid


Backbone = Callable[[Tensor, Params, NetConfig], list[Tensor]]


def forward_params(
    image: Tensor,
    p: Params,
    cfg: NetConfig,
    backbone: Backbone = encode,
    trace: bool = False,
) -> SaliencyOutputs:
    _, h, w = image.shape
    f1, f2, f3, f4, f5 = backbone(image, p, cfg)
    kw = dict(psa_factors=cfg.psa_factors, pca_factors=cfg.pca_factors)
    m1 = mde_forward(f1, p.scope("mde1"), len(cfg.kernels), **kw)
    m2 = mde_forward(f2, p.scope("mde2"), len(cfg.kernels), **kw)
    dkw = dict(n_convs=len(cfg.kernels), geo_factors=cfg.geo_factors,
               scaled=cfg.scaled_attention, **kw)
    c3 = dgc_forward(f3, p.scope("dgc3"), **dkw)
    c4 = dgc_forward(f4, p.scope("dgc4"), **dkw)
    s5 = dsp_forward(f5, p.scope("dsp5"), cfg.scaled_attention)
    dec = decode([m1, m2, c3, c4, s5], p.scope("decoder"))
    maps = []
    for level, d in enumerate(dec, start=1):
        logit = ops.conv2d(d, p.conv(f"head{level}"))
        maps.append(ops.sigmoid(ops.resize_bilinear(logit, h, w)))
    out = SaliencyOutputs(maps)
    if trace:
        names = ["f1", "f2", "f3", "f4", "f5", "m1", "m2", "c3", "c4", "s5"]
        out.trace = dict(zip(names, [f1, f2, f3, f4, f5, m1, m2, c3, c4, s5]))
        out.trace.update({f"d{i}": d for i, d in enumerate(dec, start=1)})
    return out


def forward(image, weights: Mapping[str, np.ndarray], cfg: NetConfig, trace: bool = False) -> SaliencyOutputs:
    """Inference on one ``[3,H,W]`` image in [0, 1]."""
    p, _ = as_params(weights)
    return forward_params(image if isinstance(image, Tensor) else Tensor(image), p, cfg,
                          trace=trace)


# ---------------------------------------------------------------- weight files

MAGIC = b"G2HF"
VERSION = 1


class WeightFileError(Exception):
    code = "weight-file"


class BadMagicError(WeightFileError):
    code = "bad-magic"


class VersionMismatchError(WeightFileError):
    code = "version-mismatch"


class TruncatedFileError(WeightFileError):
    code = "truncated"


class UnknownParameterError(WeightFileError):
    code = "unknown-parameter"


class MissingParameterError(WeightFileError):
    code = "missing-parameter"


class ShapeMismatchError(WeightFileError):
    code = "shape-mismatch"


def save_weights(weights: Mapping[str, np.ndarray], path) -> None:
    """Little-endian ``G2HF`` v1 container of float32 tensors."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(weights))]
    for name, arr in weights.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"truncated: needed {n} bytes at offset {self.pos}, file has {len(self.buf)}"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_weights(path) -> ModelWeights:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic: expected {MAGIC!r}, found {magic!r}")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(f"version mismatch: file is v{version}, reader supports v{VERSION}")
    weights: ModelWeights = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        dims = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        weights[name] = data.astype(np.float64)
    if r.pos != len(r.buf):
        raise WeightFileError(f"{len(r.buf) - r.pos} trailing bytes after last tensor")
    return weights


def bind_weights(weights: Mapping[str, np.ndarray], cfg: NetConfig) -> ModelWeights:
    """Check ``weights`` against the layout ``cfg`` expects; return them ordered."""
    expected = param_shapes(cfg)
    unknown = [k for k in weights if k not in expected]
    if unknown:
        raise UnknownParameterError(f"unknown parameter name(s): {', '.join(unknown[:5])}")
    missing = [k for k in expected if k not in weights]
    if missing:
        raise MissingParameterError(f"missing parameter(s): {', '.join(missing[:5])}")
    for name, shape in expected.items():
        if tuple(np.shape(weights[name])) != shape:
            raise ShapeMismatchError(
                f"shape mismatch for {name}: file {list(np.shape(weights[name]))}, model {list(shape)}"
            )
    return {k: np.asarray(weights[k], dtype=np.float64) for k in expected}
