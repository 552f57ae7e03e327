"""End-to-end reproduction: gen-data -> train (digital, HWA) -> sweep -> uncertainty -> pipeline.

Run ``python -m aimcsim.reproduce --out runs/repro --check`` to execute the
whole chain twice under the same master seed and compare every CSV byte for
byte.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .cli import main as cli_main

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def run_chain(out: Path, config_dir: Path = CONFIG_DIR, seed: int | None = None,
              threads: int | None = None, log=print) -> None:
    """Run the six-step chain into ``out``; raises ``RuntimeError`` on any failing step."""
    default, hwa = str(config_dir / "default.yaml"), str(config_dir / "hwa.yaml")
    common = ["--out", str(out)]
    if seed is not None:
        common += ["--seed", str(seed)]
    if threads is not None:
        common += ["--threads", str(threads)]
    ck_dig, ck_hwa = str(out / "toy_unetpp_digital.ckpt.json"), str(out / "toy_unetpp_hwa.ckpt.json")
    steps = [
        ["gen-data", "--config", default],
        ["train", "--config", default, "--checkpoint", ck_dig],
        ["train", "--config", hwa, "--checkpoint", ck_hwa],
        ["sweep", "--config", default, "--checkpoint", ck_dig, "--checkpoint", ck_hwa],
        ["uncertainty", "--config", default, "--checkpoint", ck_dig, "--checkpoint", ck_hwa],
        ["pipeline", "--config", default],
    ]
    for argv in steps:
        t0 = time.perf_counter()
        code = cli_main(argv + common)
        log(f"  {argv[0]:<12} exit {code}  {time.perf_counter() - t0:7.1f} s")
        if code != 0:
            raise RuntimeError(f"step {' '.join(argv)} failed with exit code {code}")


def compare_outputs(a: Path, b: Path, patterns=("*.csv",)) -> list[str]:
    """Relative paths matching ``patterns`` that differ (or exist on one side only)."""
    diffs = []
    for pat in patterns:
        names = {p.relative_to(a) for p in a.rglob(pat)} | {p.relative_to(b) for p in b.rglob(pat)}
        for rel in sorted(names):
            pa, pb = a / rel, b / rel
            if not (pa.exists() and pb.exists()) or pa.read_bytes() != pb.read_bytes():
                diffs.append(str(rel))
    return diffs


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--configs", default=str(CONFIG_DIR), help="directory with default/hwa.yaml")
    ap.add_argument("--seed", type=int, help="master seed override")
    ap.add_argument("--threads", type=int, help="internal parallelism cap")
    ap.add_argument("--check", action="store_true",
                    help="run twice and require bit-identical CSVs")
    args = ap.parse_args(argv)
    out = Path(args.out)
    runs = [out / "run1", out / "run2"] if args.check else [out]
    for r in runs:
        print(f"reproduction run -> {r}")
        t0 = time.perf_counter()
        run_chain(r, Path(args.configs), args.seed, args.threads)
        print(f"  total {time.perf_counter() - t0:.1f} s")
    if args.check:
        diffs = compare_outputs(*runs)
        print("CSV outputs bit-identical" if not diffs else f"differing outputs: {diffs}")
        return 0 if not diffs else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
