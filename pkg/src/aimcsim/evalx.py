"""Dice, noise sweeps and Monte-Carlo uncertainty."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analog import DEFAULT_TILE_COLS, DEFAULT_TILE_ROWS, NoiseConfig
from .errors import ConfigError, ShapeError
from .network.engine import forward, program_network
from .rng import derive_seed, make_rng

THRESHOLD = 0.5
DENSITY_RANGE = (0.0, 0.5)


def dice(pred, target) -> float:
    """``2|P & T| / (|P| + |T|)`` for binary masks; 1.0 when both are empty."""
    p = np.asarray(pred)
    t = np.asarray(target)
    if p.shape != t.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {t.shape}")
    p = p.astype(bool)
    t = t.astype(bool)
    total = int(p.sum()) + int(t.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, t).sum()) / total


def dataset_dice(probs, masks, threshold: float = THRESHOLD) -> float:
    """Mean per-image dice of thresholded probabilities (``N x H x W``)."""
    return float(np.mean([dice(p > threshold, m) for p, m in zip(probs, masks)]))


def _map(fn, items, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _predict(net, images, cfg, prog, rng, batch: int, tiles):
    outs = []
    for s in range(0, len(images), batch):
        outs.append(forward(net, images[s:s + batch], "analog", cfg, rng, prog, *tiles)[:, 0])
    return np.concatenate(outs)


@dataclass
class SweepRow:
    preset_id: str
    sigma: float
    mean_dice: float
    std_dice: float
    dice_drop: float
    n_seeds: int
    seed_dice: list[float] = field(default_factory=list, repr=False)


@dataclass
class SweepResult:
    rows: list[SweepRow]

    def row(self, sigma: float) -> SweepRow:
        for r in self.rows:
            if r.sigma == sigma:
                return r
        raise KeyError(sigma)

    def as_table(self) -> list[dict]:
        return [{"preset": r.preset_id, "sigma": r.sigma, "mean_dice": r.mean_dice,
                 "std_dice": r.std_dice, "dice_drop": r.dice_drop, "n_seeds": r.n_seeds}
                for r in self.rows]


def noise_sweep(net, dataset, sigmas, n_seeds: int, cfg: NoiseConfig | None = None,
                seed: int = 0, threads: int = 1, batch: int = 16,
                tile_rows: int = DEFAULT_TILE_ROWS, tile_cols: int = DEFAULT_TILE_COLS) -> SweepResult:
    """Mean test dice under programming noise ``sigma_prog = s`` for each ``s``.

    Seed ``k`` draws the same standard-normal programming perturbation at
    every sigma (only its amplitude changes), which makes the curve
    comparisons across sigma paired. Output noise uses a separate stream per
    (sigma, seed).
    """
    images, masks = dataset
    sigmas = [float(s) for s in sigmas]
    if not sigmas or sigmas[0] != 0.0:
        raise ConfigError("sigmas must start with 0")
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ConfigError("sigmas must be strictly ascending")
    if n_seeds < 1:
        raise ConfigError("n_seeds must be >= 1")
    cfg = cfg or NoiseConfig()
    tiles = (tile_rows, tile_cols)

    def one(job):
        si, k = job
        c = cfg.replace(sigma_prog=sigmas[si])
        prog = program_network(net, c, derive_seed(seed, "program", k), *tiles)
        rng = make_rng(seed, "output", si, k)
        return dataset_dice(_predict(net, images, c, prog, rng, batch, tiles), masks)

    jobs = [(si, k) for si in range(len(sigmas)) for k in range(n_seeds)]
    scores = np.array(_map(one, jobs, threads)).reshape(len(sigmas), n_seeds)
    base = float(np.mean(scores[0]))
    rows = []
    for si, s in enumerate(sigmas):
        m = float(np.mean(scores[si]))
        rows.append(SweepRow(net.preset_id, s, m, float(np.std(scores[si])),
                             0.0 if si == 0 else base - m, n_seeds, scores[si].tolist()))
    return SweepResult(rows)


@dataclass
class UncertaintyMap:
    std: np.ndarray  # H x W
    n_samples: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.std))


def mc_uncertainty_batch(net, images, n_samples: int, cfg: NoiseConfig | None = None,
                         seed: int = 0, threads: int = 1, batch: int = 16,
                         tile_rows: int = DEFAULT_TILE_ROWS,
                         tile_cols: int = DEFAULT_TILE_COLS) -> list[UncertaintyMap]:
    """Per-pixel std of the sigmoid output over ``n_samples`` analog passes, per image.

    With ``seed_policy == 'fresh-per-pass'`` each pass programs new tiles;
    with ``'fixed-per-programming'`` every pass reuses one programming, so
    only output noise varies. Population std (ddof 0), hence at most 0.5.
    """
    if n_samples < 2:
        raise ConfigError("n_samples must be >= 2")
    cfg = cfg or NoiseConfig()
    images = np.asarray(images, dtype=np.float64)
    tiles = (tile_rows, tile_cols)
    fixed = None
    if cfg.seed_policy == "fixed-per-programming":
        fixed = program_network(net, cfg, derive_seed(seed, "program", "fixed"), *tiles)

    def one(k):
        prog = fixed or program_network(net, cfg, derive_seed(seed, "program", k), *tiles)
        return _predict(net, images, cfg, prog, make_rng(seed, "output", k), batch, tiles)

    passes = np.stack(_map(one, range(n_samples), threads))
    # centre on the first pass so identical passes give exactly zero
    std = (passes - passes[0]).std(axis=0)
    return [UncertaintyMap(s, n_samples) for s in std]


def mc_uncertainty(net, x, n_samples: int, cfg: NoiseConfig | None = None, seed: int = 0,
                   **kw) -> UncertaintyMap:
    """Uncertainty map of a single ``C x H x W`` image."""
    x = np.asarray(x, dtype=np.float64)
    return mc_uncertainty_batch(net, x[None], n_samples, cfg, seed, **kw)[0]


@dataclass
class Density:
    edges: np.ndarray
    mass: np.ndarray
    mean: float
    median: float
    p95: float

    @property
    def density(self) -> np.ndarray:
        return self.mass / np.diff(self.edges)

    def summary(self) -> dict:
        return {"mean": self.mean, "median": self.median, "p95": self.p95}


def uncertainty_density(maps, n_bins: int = 50) -> Density:
    """Histogram of pooled per-pixel std values on ``[0, 0.5]``; masses sum to 1."""
    if not maps:
        raise ConfigError("no uncertainty maps given")
    shape = maps[0].std.shape
    if any(m.std.shape != shape for m in maps):
        raise ShapeError("uncertainty maps differ in shape")
    vals = np.concatenate([m.std.ravel() for m in maps])
    counts, edges = np.histogram(vals, bins=n_bins, range=DENSITY_RANGE)
    mass = counts / counts.sum()
    return Density(edges, mass, float(np.mean(vals)), float(np.median(vals)),
                   float(np.percentile(vals, 95)))
