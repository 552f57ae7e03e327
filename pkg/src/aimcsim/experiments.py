"""Replicate-level experiment helpers: per-preset defaults and the comparisons
the acceptance suite and the CLI share.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analog import NoiseConfig
from .errors import ConfigError
from .evalx import SweepResult, dataset_dice, mc_uncertainty_batch, noise_sweep
from .network import TrainConfig, build_preset, forward, hwa_train
from .rng import derive_seed
from .synthdata import stack, train_test_split

SWEEP_SIGMAS = (0.0, 0.02, 0.05, 0.1, 0.2)
# the isotropic net trains poorly at the step size that suits the pyramidal ones
PRESET_LR = {"toy_unet": 0.05, "toy_unetpp": 0.05, "toy_isotropic": 0.5}
HWA_SIGMA = 0.1


@dataclass(frozen=True)
class DataProfile:
    n_train: int = 64
    n_test: int = 32
    h: int = 32
    w: int = 32
    seed: int = 0
    difficulty: float = 0.5

    def load(self):
        """``((train_images, train_masks), (test_images, test_masks))``."""
        tr, te = train_test_split(self.n_train, self.n_test, self.h, self.w, self.seed,
                                  self.difficulty)
        return stack(tr), stack(te)


def train_config(preset_id: str, seed: int, sigma_train: float = 0.0, **overrides) -> TrainConfig:
    """Default training recipe for ``preset_id`` with optional weight-noise injection."""
    if preset_id not in PRESET_LR:
        raise ConfigError(f"unknown preset {preset_id!r}")
    noise = NoiseConfig(sigma_prog=sigma_train, sigma_out=0.0, dac_bits=None, adc_bits=None)
    kw = dict(learning_rate=PRESET_LR[preset_id], seed=seed, train_noise=noise)
    kw.update(overrides)
    return TrainConfig(**kw)


def train_preset(preset_id: str, train, seed: int, sigma_train: float = 0.0, width_scale: int = 1,
                 **overrides):
    """Build, initialise (from ``seed``) and train a preset; returns ``(net, history)``."""
    net = build_preset(preset_id, width_scale, seed=seed)
    return hwa_train(net, train, train_config(preset_id, seed, sigma_train, **overrides))


def digital_dice(net, data) -> float:
    images, masks = data
    return dataset_dice(forward(net, images)[:, 0], masks)


def first_sigma_exceeding(result: SweepResult, threshold: float = 0.05) -> float | None:
    """Smallest sigma whose mean dice drop is above ``threshold`` (None if none is)."""
    for row in result.rows:
        if row.dice_drop > threshold:
            return row.sigma
    return None


def count_inversions(values, tol: float = 0.0) -> tuple[int, float]:
    """Number of adjacent increases larger than ``tol`` and the largest increase."""
    diffs = np.diff(np.asarray(values, dtype=np.float64))
    return int(np.sum(diffs > tol)), float(max(0.0, diffs.max(initial=0.0)))


def monotone_within(values, max_inversions: int = 1, max_size: float = 0.005) -> bool:
    """Non-increasing up to ``max_inversions`` adjacent increases of at most ``max_size``."""
    n_up, biggest = count_inversions(values)
    return n_up <= max_inversions and biggest <= max_size


@dataclass
class ReplicateResult:
    seed: int
    sweeps: dict[str, SweepResult]
    hwa_dice: float
    digital_twin_dice: float
    hwa_uncertainty: float
    digital_uncertainty: float


def run_replicate(seed: int, data, n_seeds: int = 20, n_mc: int = 20,
                  presets=("toy_unet", "toy_unetpp", "toy_isotropic"),
                  sigmas=SWEEP_SIGMAS, eval_sigma: float = HWA_SIGMA,
                  cfg: NoiseConfig | None = None, threads: int = 1) -> ReplicateResult:
    """Train every preset digitally plus an HWA toy_unetpp from ``seed`` and evaluate them.

    The sweeps, the HWA-vs-digital dice comparison and the uncertainty
    comparison all use the test split and the same evaluation noise config.
    """
    train, test = data
    cfg = cfg or NoiseConfig()
    eval_seed = derive_seed(seed, "eval")
    nets, sweeps = {}, {}
    for p in presets:
        nets[p], _ = train_preset(p, train, seed)
        sweeps[p] = noise_sweep(nets[p], test, sigmas, n_seeds, cfg, eval_seed, threads)
    digital = nets.get("toy_unetpp")
    if digital is None:
        digital, _ = train_preset("toy_unetpp", train, seed)
    hwa, _ = train_preset("toy_unetpp", train, seed, sigma_train=HWA_SIGMA)
    pair = {}
    for name, net in (("hwa", hwa), ("digital", digital)):
        sw = noise_sweep(net, test, [0.0, eval_sigma], n_seeds, cfg, eval_seed, threads)
        maps = mc_uncertainty_batch(net, test[0], n_mc, cfg.replace(sigma_prog=eval_sigma),
                                    derive_seed(eval_seed, "mc"), threads)
        pair[name] = (sw.row(eval_sigma).mean_dice, float(np.mean([m.mean for m in maps])))
    return ReplicateResult(seed, sweeps, pair["hwa"][0], pair["digital"][0],
                           pair["hwa"][1], pair["digital"][1])
