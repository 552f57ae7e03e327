"""Crossbar tile model.

A tile stores a weight block in a normalised conductance domain
``[-1, 1]`` together with a scalar scale ``alpha = max|block|``. Programming
adds Gaussian noise relative to that scale; a matrix-vector multiply passes
the input through a DAC, the crossbar, additive output noise and an ADC whose
range is set per call from the raw output.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, MappingError, ShapeError
from .numerics import Tensor, as_tensor
from .rng import make_rng

DEFAULT_TILE_ROWS = 512
DEFAULT_TILE_COLS = 512

SEED_POLICIES = ("fixed-per-programming", "fresh-per-pass")
INPUT_SCALINGS = ("abs-max", "none")
INFINITE = "infinite"


def _parse_bits(value, name: str) -> int | None:
    if value is None or value == INFINITE:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{name} must be an integer or '{INFINITE}', got {value!r}")
    # 1 bit is accepted so the two-level converter can be modelled
    if not 1 <= int(value) <= 16:
        raise ConfigError(f"{name} must lie in 1..16 or be '{INFINITE}', got {value}")
    return int(value)


@dataclass(frozen=True)
class NoiseConfig:
    """Analog non-ideality settings.

    ``dac_bits`` / ``adc_bits`` of ``None`` mean an ideal (infinite
    resolution) converter. ``sigma_prog`` is relative to the per-tile weight
    scale, ``sigma_out`` is in normalised output units.

    ``input_scaling`` controls how network layers drive the DAC: with
    ``"abs-max"`` each image's layer input is divided by
    ``max|x| / input_clip`` before conversion and the digital output is
    multiplied back, so the DAC range follows the activation range; with
    ``"none"`` raw activations are clipped at ``±input_clip``. It has no
    effect on a standalone :func:`analog_mvm`.
    """

    sigma_prog: float = 0.0
    sigma_out: float = 0.02
    dac_bits: int | None = 8
    adc_bits: int | None = 8
    input_clip: float = 3.0
    seed_policy: str = "fresh-per-pass"
    input_scaling: str = "abs-max"

    def __post_init__(self):
        object.__setattr__(self, "dac_bits", _parse_bits(self.dac_bits, "dac_bits"))
        object.__setattr__(self, "adc_bits", _parse_bits(self.adc_bits, "adc_bits"))
        if not self.sigma_prog >= 0:
            raise ConfigError("sigma_prog must be >= 0")
        if not self.sigma_out >= 0:
            raise ConfigError("sigma_out must be >= 0")
        if not self.input_clip > 0:
            raise ConfigError("input_clip must be > 0")
        if np.isinf(self.input_clip) and self.dac_bits is not None:
            raise ConfigError("an infinite input_clip needs an infinite-resolution DAC")
        if self.seed_policy not in SEED_POLICIES:
            raise ConfigError(f"seed_policy must be one of {SEED_POLICIES}")
        if self.input_scaling not in INPUT_SCALINGS:
            raise ConfigError(f"input_scaling must be one of {INPUT_SCALINGS}")

    @classmethod
    def ideal(cls) -> "NoiseConfig":
        """No noise, infinite converters, no input clipping.

        The analog path then reproduces the digital one.
        """
        return cls(sigma_prog=0.0, sigma_out=0.0, dac_bits=None, adc_bits=None,
                   input_clip=np.inf)

    @property
    def is_ideal(self) -> bool:
        return (self.sigma_prog == 0 and self.sigma_out == 0
                and self.dac_bits is None and self.adc_bits is None)

    def replace(self, **changes) -> "NoiseConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "sigma_prog": float(self.sigma_prog),
            "sigma_out": float(self.sigma_out),
            "dac_bits": INFINITE if self.dac_bits is None else self.dac_bits,
            "adc_bits": INFINITE if self.adc_bits is None else self.adc_bits,
            "input_clip": INFINITE if np.isinf(self.input_clip) else float(self.input_clip),
            "seed_policy": self.seed_policy,
            "input_scaling": self.input_scaling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown noise keys: {sorted(unknown)}")
        kw = dict(d)
        if kw.get("input_clip") == INFINITE:
            kw["input_clip"] = np.inf
        for key in ("sigma_prog", "sigma_out", "input_clip"):
            if key in kw:
                if isinstance(kw[key], bool) or not isinstance(kw[key], (int, float, np.floating)):
                    raise ConfigError(f"{key} must be a number")
                kw[key] = float(kw[key])
        return cls(**kw)


@dataclass(frozen=True)
class AnalogTile:
    """One programmed crossbar. ``programmed`` has the shape of ``nominal``."""

    rows: int
    cols: int
    nominal: Tensor
    programmed: Tensor
    scale: float
    rng_seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.nominal.shape


def quantize_uniform(x, bits: int | None, r):
    """Round ``x`` to the nearest of ``2**bits`` evenly spaced levels on ``[-r, r]``.

    Mid-rise: the outermost levels are ``+-r`` and zero is a decision
    boundary (ties round up). Values outside the range saturate. ``r`` may
    be an array broadcastable against ``x``; entries with ``r == 0`` map
    to 0. ``bits=None`` returns ``x`` unchanged.
    """
    if bits is None:
        return x
    steps = (1 << bits) - 1
    r = np.asarray(r, dtype=np.float64)
    if r.ndim == 0:
        if r <= 0:
            return np.zeros(np.shape(x))
        u = np.clip(x, -r, r)
        u += r
        u *= steps / (2.0 * r)
    else:
        safe_r = np.where(r > 0, r, 1.0)
        u = np.clip(x, -safe_r, safe_r)
        u += safe_r
        u *= steps / (2.0 * safe_r)
    u += 0.5
    np.floor(u, out=u)
    u *= 2.0
    u -= steps
    if r.ndim == 0:
        u *= r
    else:
        u *= np.where(r > 0, r, 0.0)
    u /= steps
    return u


def program_tile(block, cfg: NoiseConfig, seed: int,
                 rows: int = DEFAULT_TILE_ROWS, cols: int = DEFAULT_TILE_COLS) -> AnalogTile:
    """Write ``block`` onto a ``rows x cols`` crossbar with programming noise."""
    block = as_tensor(block, 2)
    r, c = block.shape
    if r > rows or c > cols:
        raise MappingError(f"block {r}x{c} does not fit a {rows}x{cols} tile")
    amax = float(np.max(np.abs(block))) if block.size else 0.0
    scale = amax if amax > 0 else 1.0
    target = block / scale
    if cfg.sigma_prog > 0:
        eps = make_rng(seed).standard_normal(block.shape)
        target = target + cfg.sigma_prog * eps
    programmed = np.clip(target, -1.0, 1.0)
    return AnalogTile(rows, cols, block, programmed, scale, int(seed))


def reprogram(tile: AnalogTile, cfg: NoiseConfig, new_seed: int) -> AnalogTile:
    """Fresh noise draw for the same nominal block."""
    return program_tile(tile.nominal, cfg, new_seed, tile.rows, tile.cols)


def dac(x, cfg: NoiseConfig):
    """Clip to the input range and quantize."""
    if cfg.dac_bits is None:
        return np.clip(x, -cfg.input_clip, cfg.input_clip)
    return quantize_uniform(x, cfg.dac_bits, cfg.input_clip)


def adc(y_raw, cfg: NoiseConfig, rng: np.random.Generator | None, axis: int = 0):
    """Add output noise and quantize over the per-call range ``max|y_raw|``.

    ``axis`` is the axis holding one call's outputs (the tile columns).
    """
    y = y_raw
    if cfg.sigma_out > 0:
        if rng is None:
            raise ValueError("output noise requires an rng")
        y = y_raw + cfg.sigma_out * rng.standard_normal(y_raw.shape)
    if cfg.adc_bits is None:
        return y
    r = np.max(np.abs(y_raw), axis=axis, keepdims=True)
    return quantize_uniform(y, cfg.adc_bits, r)


def analog_mvm(tile: AnalogTile, x, cfg: NoiseConfig,
               rng: np.random.Generator | None = None, dac_applied: bool = False) -> Tensor:
    """Compute ``tile.nominal.T @ x`` through the noisy crossbar.

    ``x`` is a length-``r`` vector or an ``r x n`` matrix whose columns are
    independent calls (each gets its own ADC range). ``dac_applied`` skips
    the input conversion for inputs that already went through :func:`dac`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != tile.shape[0]:
        raise ShapeError(f"input length {x.shape[0]} != tile rows in use {tile.shape[0]}")
    xq = x if dac_applied else dac(x, cfg)
    y_raw = tile.programmed.T @ xq
    return tile.scale * adc(y_raw, cfg, rng, axis=0)


def analog_depthwise(tile: AnalogTile, patches, cfg: NoiseConfig,
                     rng: np.random.Generator | None = None, dac_applied: bool = False) -> Tensor:
    """Per-channel dot products for a depthwise layer mapped as one ``k x C`` block.

    ``patches`` has shape ``k x C x n``: column ``c`` of the tile only sees the
    patch of channel ``c``. The ADC range is shared by all channels of one
    output position.
    """
    patches = np.asarray(patches, dtype=np.float64)
    k, c = tile.shape
    if patches.shape[:2] != (k, c):
        raise ShapeError(f"patches {patches.shape[:2]} do not match tile block {(k, c)}")
    xq = patches if dac_applied else dac(patches, cfg)
    y_raw = np.einsum("kc,kcn->cn", tile.programmed, xq)
    return tile.scale * adc(y_raw, cfg, rng, axis=0)
