"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line.

The statistical criteria (4-7) share ten train-seed replicates computed once
per session: every replicate trains toy_unet, toy_unetpp and toy_isotropic
digitally plus a hardware-aware toy_unetpp on the same synthetic data, then
sweeps them under the default noise configuration. Expect roughly half an
hour on one core.
"""

import time

import numpy as np
import pytest

from aimcsim.analog import NoiseConfig
from aimcsim.evalx import dice, mc_uncertainty
from aimcsim.experiments import (
    SWEEP_SIGMAS,
    DataProfile,
    count_inversions,
    first_sigma_exceeding,
    monotone_within,
    run_replicate,
)
from aimcsim.mapping import LayerSpec, map_layer, weight_matrix_shape
from aimcsim.network import build_preset, forward
from aimcsim.pipeline import pipeline_report, pipelined_latency, sequential_latency
from aimcsim.reproduce import compare_outputs, run_chain
from aimcsim.rng import make_rng
from micronets import MICRO_NETS, gradient_errors

PRESETS = ("toy_unet", "toy_unetpp", "toy_isotropic")
N_REPLICATES = 10
US = 1e-6


@pytest.fixture(scope="session")
def replicates():
    data = DataProfile().load()
    out = []
    for seed in range(N_REPLICATES):
        t0 = time.perf_counter()
        out.append((run_replicate(seed, data, n_seeds=20, n_mc=20), time.perf_counter() - t0))
    return out


def test_criterion_01_zero_noise_equivalence(verdict):
    t0 = time.perf_counter()
    x = np.random.default_rng(0).uniform(0, 1, (20, 1, 32, 32))
    worst = {}
    for preset in PRESETS:
        for attention in ((False, True) if preset == "toy_isotropic" else (False,)):
            net = build_preset(preset, attention=attention)
            a = forward(net, x, "analog", NoiseConfig.ideal(), make_rng(0))
            worst[f"{preset}{'+attn' if attention else ''}"] = float(
                np.max(np.abs(a - forward(net, x))))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-9 and dt < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert verdict(1, ok, f"max |analog - digital|: {detail}; {dt:.1f} s")


def test_criterion_02_gradients(verdict):
    t0 = time.perf_counter()
    errs = {}
    for name, make in MICRO_NETS.items():
        errs[name] = max(gradient_errors(make()).values())
    errs["pyramid/dice_loss"] = max(gradient_errors(MICRO_NETS["pyramid"](), "dice_loss").values())
    dt = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-4 and dt < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    assert verdict(2, ok, f"max relative FD error: {detail}; {dt:.1f} s")


def _random_layer(rng):
    """A random weighted layer of any kind plus a compatible input shape."""
    kind = int(rng.integers(5))
    a, b = (int(v) for v in rng.integers(1, 700, size=2))
    k = int(rng.integers(1, 6))
    if kind == 0:
        layer = LayerSpec.conv2d(max(1, a // 10), b, k)
    elif kind == 1:
        layer = LayerSpec.linear(a, b)
    elif kind == 2:
        layer = LayerSpec.depthwise(b, k)
    elif kind == 3:
        layer = LayerSpec.patch_embed(int(rng.integers(1, 4)), b, k)
    else:
        layer = LayerSpec.attention_proj(a, b)
    if layer.kind in ("linear", "attention_proj"):
        return layer, (layer.in_features,)
    return layer, (layer.in_features, 4 * k, 4 * k)


def test_criterion_03_mapping_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(200):
        layer, shape = _random_layer(rng)
        tr, tc = (int(v) for v in rng.integers(1, 600, size=2))
        m = map_layer("l", layer, shape, tr, tc)
        grid = np.zeros(weight_matrix_shape(layer), dtype=np.int64)
        used = 0
        for blk in m.blocks:
            grid[blk.r0:blk.r1, blk.c0:blk.c1] += 1
            tile = np.zeros((tr, tc), dtype=bool)
            tile[:blk.r1 - blk.r0, :blk.c1 - blk.c0] = True
            used += int(tile.sum())
        bad += not (np.all(grid == 1) and m.utilization == used / (len(m.blocks) * tr * tc))
    ex = [
        map_layer("a", LayerSpec.linear(512, 512), (512,), 512, 512).utilization,
        map_layer("b", LayerSpec.linear(600, 600), (600,), 512, 512).utilization,
        map_layer("c", LayerSpec.conv2d(3, 16, 3), (3, 8, 8), 512, 512).utilization,
    ]
    examples_ok = (abs(ex[0] - 1.0) <= 1e-12 and abs(ex[1] - 360000 / 1048576) <= 1e-12
                   and round(ex[1], 4) == 0.3433 and abs(ex[2] - 432 / 262144) <= 1e-12
                   and round(ex[2], 6) == 0.001648)
    dt = time.perf_counter() - t0
    ok = bad == 0 and examples_ok and dt < 10
    assert verdict(3, ok, f"{200 - bad}/200 random mappings match the cell-count oracle; "
                          f"examples {ex[0]:.4f} {ex[1]:.4f} {ex[2]:.6f}; {dt:.1f} s")


def _degenerate(replicates, floor=0.5):
    """Models whose sigma=0 dice is below ``floor``; reported, never excluded."""
    bad = [f"seed {rep.seed} {p}" for rep, _ in replicates for p in PRESETS
           if rep.sweeps[p].rows[0].mean_dice < floor]
    return ", ".join(bad) or "none"


def test_criterion_04_noise_monotonicity(replicates, verdict):
    rep, seconds = replicates[0]
    curves = {p: [r.mean_dice for r in rep.sweeps[p].rows] for p in PRESETS}
    ok = all(monotone_within(c, 1, 0.005) for c in curves.values()) and seconds < 600
    others = sum(all(monotone_within([r.mean_dice for r in rp.sweeps[p].rows], 1, 0.005)
                     for p in PRESETS) for rp, _ in replicates)
    detail = "; ".join(
        f"{p} {' '.join(f'{v:.3f}' for v in c)} (inversions {count_inversions(c)[0]})"
        for p, c in curves.items())
    assert verdict(4, ok, f"replicate 0 mean dice over sigma {list(SWEEP_SIGMAS)}: {detail}; "
                          f"{seconds:.0f} s incl. training; {others}/{len(replicates)} "
                          f"replicates monotone")


def test_criterion_05_architecture_direction(replicates, verdict):
    wins, notes = 0, []
    for rep, _ in replicates:
        s = first_sigma_exceeding(rep.sweeps["toy_unet"], 0.05)
        if s is None:
            notes.append("none")
            continue
        drop = {p: rep.sweeps[p].row(s).dice_drop for p in PRESETS}
        wins += drop["toy_isotropic"] < min(drop["toy_unet"], drop["toy_unetpp"])
        notes.append(f"{s:g}")
    # pyramidal ordering on the replicate-averaged drop curves
    mean_drop = {p: np.mean([[r.dice_drop for r in rep.sweeps[p].rows] for rep, _ in replicates],
                            axis=0) for p in PRESETS}
    idx = next((i for i, d in enumerate(mean_drop["toy_unet"]) if d > 0.05), None)
    pp_ok = idx is not None and mean_drop["toy_unetpp"][idx] >= mean_drop["toy_unet"][idx]
    iso_ok = idx is not None and mean_drop["toy_isotropic"][idx] < mean_drop["toy_unet"][idx]
    ok = wins >= 8 and pp_ok and iso_ok
    at = "n/a" if idx is None else (
        f"sigma {SWEEP_SIGMAS[idx]:g}: mean drops unet {mean_drop['toy_unet'][idx]:.3f}, "
        f"unetpp {mean_drop['toy_unetpp'][idx]:.3f}, iso {mean_drop['toy_isotropic'][idx]:.3f}")
    assert verdict(5, ok, f"isotropic < pyramidal in {wins}/{len(replicates)} replicates "
                          f"(first sigma per replicate: {' '.join(notes)}); {at}; "
                          f"untrained models (sigma=0 dice < 0.5): {_degenerate(replicates)}")


def test_criterion_06_hwa_benefit(replicates, verdict):
    gains = [rep.hwa_dice - rep.digital_twin_dice for rep, _ in replicates]
    wins = sum(g >= 0.02 for g in gains)
    ok = wins >= 8
    assert verdict(6, ok, f"HWA - digital dice at sigma 0.1 >= 0.02 in {wins}/{len(gains)} "
                          f"replicates (gains {' '.join(f'{g:+.3f}' for g in gains)}); "
                          f"untrained models: {_degenerate(replicates)}")


def test_criterion_07_uncertainty(replicates, verdict):
    pairs = [(rep.hwa_uncertainty, rep.digital_uncertainty) for rep, _ in replicates]
    wins = sum(h < d for h, d in pairs)
    net = build_preset("toy_unetpp")
    x = DataProfile().load()[1][0][0]
    zero = mc_uncertainty(net, x, 20, NoiseConfig(sigma_prog=0.0, sigma_out=0.0))
    zero_ok = bool(np.all(zero.std == 0.0))
    ok = wins >= 8 and zero_ok
    assert verdict(7, ok, f"HWA pooled mean std lower in {wins}/{len(pairs)} replicates "
                          f"(hwa/digital {' '.join(f'{h:.3f}/{d:.3f}' for h, d in pairs)}); "
                          f"sigma=0 map all zero: {zero_ok}")


def _speedup_violations(n=1000, seed=8):
    """Stage lists of 1..16 stages with times uniform in [0.1, 100] us, K uniform in [L, 4L]."""
    rng = np.random.default_rng(seed)
    bad = []
    for _ in range(n):
        L = int(rng.integers(1, 17))
        stages = list(rng.uniform(0.1, 100.0, L) * US)
        K = int(rng.integers(L, 4 * L + 1))
        if pipeline_report(stages, K).speedup < 1:
            bad.append((stages, K))
    return bad


@pytest.mark.xfail(strict=True, reason="speedup >= 1 does not follow from K >= L; "
                                       "e.g. stages [10, 1], K=2 gives 30 vs 22")
def test_criterion_08_pipeline(verdict):
    t0 = time.perf_counter()
    exact = (pipelined_latency([2 * US, 5 * US, 3 * US], 4) == 6 * 5 * US
             and sequential_latency([2 * US, 5 * US, 3 * US], 4) == 4 * (2 * US + 5 * US + 3 * US)
             and pipelined_latency([2, 5, 3], 4) == 30 and sequential_latency([2, 5, 3], 4) == 40)
    bad = _speedup_violations()
    rng = np.random.default_rng(9)
    thr = max(abs(pipeline_report(list(s), 10 ** 4).throughput_pipelined * s.max() - 1)
              for s in (rng.uniform(0.1, 100, int(rng.integers(1, 17))) * US for _ in range(1000)))
    dt = time.perf_counter() - t0
    ok = exact and not bad and thr <= 0.01 and dt < 5
    worst = min(bad, key=lambda b: pipeline_report(*b).speedup) if bad else None
    example = "" if worst is None else (
        f", worst L={len(worst[0])} K={worst[1]} speedup {pipeline_report(*worst).speedup:.3f}")
    assert verdict(8, ok, f"[2,5,3] us K=4 -> 30/40 us exact: {exact}; speedup >= 1 in "
                          f"{1000 - len(bad)}/1000 random lists with K >= L{example}; "
                          f"throughput at K=1e4 within {thr:.4f} of 1/t_max; {dt:.1f} s")


def test_criterion_09_dice(verdict):
    a = np.zeros((4, 4), bool)
    a[1:3, 1:3] = True
    b = np.zeros((4, 4), bool)
    b[0, 0] = True
    half = np.zeros((6, 8), bool)
    half[:, :4] = True
    ok = dice(a, a) == 1.0 and dice(a, b) == 0.0 and dice(half, np.ones((6, 8))) == 2 / 3
    rng = np.random.default_rng(10)
    sym = 0
    for _ in range(100):
        shape = tuple(int(v) for v in rng.integers(1, 20, size=2))
        p, t = rng.uniform(size=shape) < rng.uniform(), rng.uniform(size=shape) < rng.uniform()
        perm = rng.permutation(p.size)
        d = dice(p, t)
        sym += d == dice(t, p) == dice(p.ravel()[perm], t.ravel()[perm])
    ok = ok and sym == 100
    assert verdict(9, ok, f"examples exact; symmetric and permutation-invariant on {sym}/100 pairs")


def test_criterion_10_reproduction(tmp_path, verdict):
    t0 = time.perf_counter()
    run_chain(tmp_path / "run1", log=lambda *_: None)
    first = time.perf_counter() - t0
    run_chain(tmp_path / "run2", log=lambda *_: None)
    diffs = compare_outputs(tmp_path / "run1", tmp_path / "run2")
    n_csv = len(list((tmp_path / "run1").rglob("*.csv")))
    ok = not diffs and first < 1800
    assert verdict(10, ok, f"chain ran in {first:.0f} s; {n_csv - len(diffs)}/{n_csv} CSVs "
                           f"bit-identical on rerun")
