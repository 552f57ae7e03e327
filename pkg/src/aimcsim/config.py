"""Experiment configuration: a YAML file with fixed sections.

Unknown keys anywhere are rejected. Omitted keys take the defaults below;
``resolve`` returns the fully populated mapping that every command echoes
next to its outputs.

Sub-seeds are derived from the single master ``seed`` with
:func:`aimcsim.rng.derive_seed`:

* data: ``data.seed`` if set, else ``derive_seed(seed, "data")``
* network init and batch order: ``train.seed`` if set, else ``seed``
* sweep reprogramming / output noise: ``derive_seed(seed, "sweep")``
* Monte-Carlo passes: ``derive_seed(seed, "uncertainty")``
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from .analog import DEFAULT_TILE_COLS, DEFAULT_TILE_ROWS, NoiseConfig
from .errors import ConfigError
from .experiments import PRESET_LR, SWEEP_SIGMAS
from .network import PRESETS, TrainConfig
from .pipeline import TimingModel
from .rng import derive_seed

DEFAULT_K = [16, 32, 64, 128, 256, 512, 1024]

DEFAULTS: dict = {
    "seed": 0,
    "output_dir": None,
    "noise": NoiseConfig().to_dict(),
    "train": {
        "learning_rate": None,  # None: per-preset default
        "epochs": 25,
        "batch_size": 8,
        "loss": "bce",
        "train_noise": {"sigma_prog": 0.0, "sigma_out": 0.0, "dac_bits": "infinite",
                        "adc_bits": "infinite", "input_clip": 3.0,
                        "seed_policy": "fresh-per-pass", "input_scaling": "abs-max"},
        "weight_clip": None,
        "seed": None,
        "converters": False,
    },
    "model": {"preset_id": "toy_unet", "width_scale": 1, "attention": False},
    "tiles": {"rows": DEFAULT_TILE_ROWS, "cols": DEFAULT_TILE_COLS},
    "sweep": {"sigmas": list(SWEEP_SIGMAS), "n_seeds": 20},
    "uncertainty": {"n_samples": 20, "n_bins": 50},
    "pipeline": {"t_mvm": 100e-9, "t_overhead_layer": 1e-6, "K": DEFAULT_K},
    "data": {"n": 96, "n_test": 32, "H": 32, "W": 32, "seed": None, "difficulty": 0.5},
}


def _merge(defaults: dict, given: dict, path: str = "") -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {path or 'config'}: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        sub = f"{path}.{key}" if path else key
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], val or {}, sub)
        else:
            out[key] = val
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    # --- construction -----------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        cfg = cls(_merge(DEFAULTS, d or {}))
        try:
            cfg.validate()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            d = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        return cls.from_dict(d)

    def with_overrides(self, seed: int | None = None, output_dir=None) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if output_dir is not None:
            raw["output_dir"] = str(output_dir)
        return ExperimentConfig.from_dict(raw)

    def validate(self) -> None:
        # building every typed record surfaces type/range errors early
        _ = self.noise
        self.train_config()
        _ = self.timing
        _ = self.data_split
        seed = self.raw["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        m = self.raw["model"]
        if m["preset_id"] not in PRESETS:
            raise ConfigError(f"unknown preset {m['preset_id']!r}; choose from {PRESETS}")
        if isinstance(m["width_scale"], bool) or not isinstance(m["width_scale"], int) \
                or m["width_scale"] < 1:
            raise ConfigError("model.width_scale must be an integer >= 1")
        t = self.raw["tiles"]
        for key in ("rows", "cols"):
            if isinstance(t[key], bool) or not isinstance(t[key], int) or t[key] < 1:
                raise ConfigError(f"tiles.{key} must be a positive integer")
        s = self.raw["sweep"]
        if not isinstance(s["sigmas"], list) or not s["sigmas"]:
            raise ConfigError("sweep.sigmas must be a non-empty list")
        if float(s["sigmas"][0]) != 0.0:
            raise ConfigError("sweep.sigmas must start with 0")
        if any(float(b) <= float(a) for a, b in zip(s["sigmas"], s["sigmas"][1:])):
            raise ConfigError("sweep.sigmas must be strictly ascending")
        if not isinstance(s["n_seeds"], int) or s["n_seeds"] < 1:
            raise ConfigError("sweep.n_seeds must be >= 1")
        u = self.raw["uncertainty"]
        if not isinstance(u["n_samples"], int) or u["n_samples"] < 2:
            raise ConfigError("uncertainty.n_samples must be >= 2")
        if not isinstance(u["n_bins"], int) or u["n_bins"] < 1:
            raise ConfigError("uncertainty.n_bins must be >= 1")
        ks = self.raw["pipeline"]["K"]
        if not isinstance(ks, list) or not ks or any(
                isinstance(k, bool) or not isinstance(k, int) or k < 1 for k in ks):
            raise ConfigError("pipeline.K must be a list of integers >= 1")

    # --- typed views --------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def output_dir(self) -> Path:
        if not self.raw["output_dir"]:
            raise ConfigError("output_dir is not set (config key or --out)")
        return Path(self.raw["output_dir"])

    @property
    def noise(self) -> NoiseConfig:
        return NoiseConfig.from_dict(self.raw["noise"])

    @property
    def preset_id(self) -> str:
        return self.raw["model"]["preset_id"]

    @property
    def width_scale(self) -> int:
        return int(self.raw["model"]["width_scale"])

    @property
    def attention(self) -> bool:
        return bool(self.raw["model"]["attention"])

    @property
    def tiles(self) -> tuple[int, int]:
        return int(self.raw["tiles"]["rows"]), int(self.raw["tiles"]["cols"])

    @property
    def train_seed(self) -> int:
        s = self.raw["train"]["seed"]
        return self.seed if s is None else int(s)

    def train_config(self) -> TrainConfig:
        d = dict(self.raw["train"])
        if d["learning_rate"] is None:
            d["learning_rate"] = PRESET_LR.get(self.raw["model"]["preset_id"], 0.05)
        d["seed"] = self.train_seed
        return TrainConfig.from_dict(d)

    @property
    def timing(self) -> TimingModel:
        p = self.raw["pipeline"]
        return TimingModel(float(p["t_mvm"]), float(p["t_overhead_layer"]))

    @property
    def data_seed(self) -> int:
        s = self.raw["data"]["seed"]
        return derive_seed(self.seed, "data") if s is None else int(s)

    @property
    def data_split(self) -> tuple[int, int]:
        d = self.raw["data"]
        n, n_test = d["n"], d["n_test"]
        if not isinstance(n, int) or not isinstance(n_test, int) or not 1 <= n_test < n:
            raise ConfigError("data needs integers with 1 <= n_test < n")
        return n - n_test, n_test

    def resolve(self) -> dict:
        """Fully populated config, with per-preset defaults and derived seeds filled in."""
        raw = copy.deepcopy(self.raw)
        raw["noise"] = self.noise.to_dict()
        raw["train"] = self.train_config().to_dict()
        raw["data"]["seed"] = self.data_seed
        raw["output_dir"] = str(self.output_dir)
        return raw
