"""Command-line entry point for the analog in-memory-computing simulator.

Every subcommand reads one YAML experiment config, writes the resolved
config into the output directory first, then its results. Exit codes: 0 on
success, 2 for configuration errors, 3 for runtime or numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import evalx, pipeline
from .config import ExperimentConfig
from .errors import AimcError, ConfigError
from .mapping import analyze_network
from .network import build_preset, hwa_train, load_checkpoint, save_checkpoint
from .rng import derive_seed
from .synthdata import stack, train_test_split

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


# --------------------------------------------------------------------------
# file helpers


def write_pgm16(path: Path, img) -> None:
    """Binary 16-bit PGM of an ``H x W`` array in ``[0, 1]`` (values clipped)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    q = np.round(np.clip(img, 0.0, 1.0) * 65535).astype(">u2")
    h, w = img.shape
    path.write_bytes(f"P5\n{w} {h}\n65535\n".encode("ascii") + q.tobytes())


def read_pgm16(path: Path) -> np.ndarray:
    """Inverse of :func:`write_pgm16` (returns values in ``[0, 1]``)."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 65535:
        raise ValueError(f"{path}: not a 16-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    pix = np.frombuffer(parts[4][:2 * w * h], dtype=">u2").reshape(h, w)
    return pix.astype(np.float64) / 65535


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({c: _fmt(r[c]) for c in columns})


def _fmt(v):
    # repr gives the shortest round-trip form, independent of locale
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _prepare(cfg: ExperimentConfig, stem: str) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.resolved.yaml").write_text(yaml.safe_dump(cfg.resolve(), sort_keys=True))
    return out


def _dataset(cfg: ExperimentConfig):
    d = cfg.raw["data"]
    n_train, n_test = cfg.data_split
    return train_test_split(n_train, n_test, d["H"], d["W"], cfg.data_seed, d["difficulty"])


def _input_shape(cfg: ExperimentConfig):
    return (1, cfg.raw["data"]["H"], cfg.raw["data"]["W"])


def _run_tag(cfg: ExperimentConfig) -> str:
    return "hwa" if cfg.train_config().train_noise.sigma_prog > 0 else "digital"


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_data(cfg: ExperimentConfig, args) -> None:
    out = _prepare(cfg, "gen_data") / "data"
    train, test = _dataset(cfg)
    manifest = {"seed": cfg.data_seed, "H": cfg.raw["data"]["H"], "W": cfg.raw["data"]["W"],
                "difficulty": cfg.raw["data"]["difficulty"], "samples": []}
    for split, samples in (("train", train), ("test", test)):
        (out / split).mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(samples):
            img, msk = f"{split}/image_{i:05d}.pgm", f"{split}/mask_{i:05d}.pgm"
            write_pgm16(out / img, s.image[0])
            write_pgm16(out / msk, s.mask)
            manifest["samples"].append({"split": split, "index": s.index, "seed": s.seed,
                                        "image": img, "mask": msk})
    write_json(out / "manifest.json", manifest)


def cmd_analyze(cfg: ExperimentConfig, args) -> None:
    out = _prepare(cfg, "analyze")
    net = build_preset(cfg.preset_id, cfg.width_scale, cfg.train_seed, cfg.attention)
    rep = analyze_network(net, *cfg.tiles, _input_shape(cfg))
    write_csv(out / "analyze.csv", rep.rows(),
              ["layer", "rows", "cols", "tiles", "utilization", "reuse"])
    summary = dict(rep.summary(), preset_id=cfg.preset_id, width_scale=cfg.width_scale)
    write_json(out / "analyze.json", summary)


def cmd_train(cfg: ExperimentConfig, args) -> None:
    tag = _run_tag(cfg)
    stem = f"train_{cfg.preset_id}_{tag}"
    out = _prepare(cfg, stem)
    tcfg = cfg.train_config()
    train, _ = _dataset(cfg)
    net = build_preset(cfg.preset_id, cfg.width_scale, cfg.train_seed, cfg.attention)
    net, hist = hwa_train(net, stack(train), tcfg)
    ckpt = Path(args.checkpoint[0]) if args.checkpoint else out / f"{cfg.preset_id}_{tag}.ckpt.json"
    save_checkpoint(net, ckpt, meta={"train": tcfg.to_dict(), "tag": tag,
                                     "final_train_dice": hist.final_dice})
    rows = [{"epoch": 0, "loss": float("nan"), "dice": hist.initial_dice}] + hist.epochs
    write_csv(out / f"{stem}_history.csv", rows, ["epoch", "loss", "dice"])


def _checkpoints(args) -> list[Path]:
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    return [Path(p) for p in args.checkpoint]


def _ckpt_stem(path: Path) -> str:
    name = path.name
    for suffix in (".ckpt.json", ".json"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def cmd_sweep(cfg: ExperimentConfig, args) -> None:
    paths = _checkpoints(args)
    out = _prepare(cfg, "sweep")
    _, test = _dataset(cfg)
    data = stack(test)
    for path in paths:
        net, _ = load_checkpoint(path)
        res = evalx.noise_sweep(net, data, cfg.raw["sweep"]["sigmas"], cfg.raw["sweep"]["n_seeds"],
                                cfg.noise, derive_seed(cfg.seed, "sweep"), args.threads,
                                tile_rows=cfg.tiles[0], tile_cols=cfg.tiles[1])
        write_csv(out / f"sweep_{_ckpt_stem(path)}.csv", res.as_table(),
                  ["preset", "sigma", "mean_dice", "std_dice", "dice_drop", "n_seeds"])


def cmd_uncertainty(cfg: ExperimentConfig, args) -> None:
    paths = _checkpoints(args)
    out = _prepare(cfg, "uncertainty") / "uncertainty"
    out.mkdir(exist_ok=True)
    _, test = _dataset(cfg)
    images, _ = stack(test)
    u = cfg.raw["uncertainty"]
    noise = cfg.noise
    summary = {"n_samples": u["n_samples"], "noise": noise.to_dict(), "models": {}}
    for path in paths:
        net, _ = load_checkpoint(path)
        stem = _ckpt_stem(path)
        maps = evalx.mc_uncertainty_batch(net, images, u["n_samples"], noise,
                                          derive_seed(cfg.seed, "uncertainty"), args.threads,
                                          tile_rows=cfg.tiles[0], tile_cols=cfg.tiles[1])
        (out / stem).mkdir(exist_ok=True)
        for i, m in enumerate(maps):
            # std in [0, 0.5] spans the full grey range
            write_pgm16(out / stem / f"map_{i:05d}.pgm", m.std / 0.5)
        dens = evalx.uncertainty_density(maps, u["n_bins"])
        rows = [{"bin_left": a, "bin_right": b, "mass": m}
                for a, b, m in zip(dens.edges[:-1], dens.edges[1:], dens.mass)]
        write_csv(out / f"{stem}_density.csv", rows, ["bin_left", "bin_right", "mass"])
        summary["models"][stem] = dict(dens.summary(), preset_id=net.preset_id)
    write_json(out / "summary.json", summary)


def cmd_pipeline(cfg: ExperimentConfig, args) -> None:
    out = _prepare(cfg, "pipeline")
    net = build_preset(cfg.preset_id, cfg.width_scale, cfg.train_seed, cfg.attention)
    rep = analyze_network(net, *cfg.tiles, _input_shape(cfg))
    stages = pipeline.stage_times(rep, cfg.timing)
    reports = [pipeline.pipeline_report(stages, k) for k in cfg.raw["pipeline"]["K"]]
    write_json(out / "pipeline.json", {
        "preset_id": cfg.preset_id,
        "stage_names": [m.layer_id for m in rep.layers],
        "breakeven_K": pipeline.breakeven_slices(stages),
        "reports": [r.to_dict() for r in reports],
    })
    cols = ["K", "latency_pipelined", "latency_sequential", "throughput_pipelined",
            "throughput_sequential", "speedup"]
    write_csv(out / "pipeline_latency.csv", [r.to_dict() for r in reports], cols)


COMMANDS = {
    "gen-data": (cmd_gen_data, "write the synthetic dataset as 16-bit PGM images + manifest"),
    "analyze": (cmd_analyze, "tile utilization / reuse / parameter report"),
    "train": (cmd_train, "digital or hardware-aware training; writes a checkpoint"),
    "sweep": (cmd_sweep, "dice versus programming-noise sweep of checkpoints"),
    "uncertainty": (cmd_uncertainty, "Monte-Carlo uncertainty maps and density"),
    "pipeline": (cmd_pipeline, "pipelined vs sequential multi-slice latency"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aimcsim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--checkpoint", action="append",
                       help="checkpoint path (train: output path; repeatable for sweep "
                            "and uncertainty)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="cap on internal parallelism (default: available cores)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.command == "train" and args.checkpoint and len(args.checkpoint) > 1:
            raise ConfigError("train writes a single checkpoint")
        cfg = ExperimentConfig.load(args.config).with_overrides(args.seed, args.out)
        COMMANDS[args.command][0](cfg, args)
    except ConfigError as exc:
        print(f"aimcsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AimcError, ArithmeticError, ValueError, OSError) as exc:
        print(f"aimcsim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
