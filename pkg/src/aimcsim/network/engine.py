"""Forward passes (digital, analog, noisy training), reverse-mode gradients and SGD.

Weighted layers are evaluated as matrix products against their weight
matrix: convolutions via ``im2col``, token-wise linear layers on the
flattened token grid, depthwise convolutions as per-channel dot products on
``k x C x n`` patches. A *runner* decides how those products are computed,
which is the only difference between the digital, analog and training
forward passes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .. import analog
from ..analog import NoiseConfig, analog_depthwise, analog_mvm, program_tile
from ..errors import ConfigError, ShapeError, TrainingError
from ..mapping import partition, weight_matrix_shape
from ..numerics import col2im_cnhw, im2col_cnhw
from ..rng import derive_seed, make_rng
from . import ops
from .graph import NetworkSpec, Node

MODES = ("digital", "analog")


# --------------------------------------------------------------------------
# runners


def _abs_max_scale(x, cfg: NoiseConfig):
    """Per-image ``max|x| / input_clip`` (1 for an all-zero image), or ``None``."""
    if cfg.input_scaling == "none" or np.isinf(cfg.input_clip):
        return None
    m = np.abs(x).max(axis=(0, 2, 3))
    return np.where(m > 0, m / cfg.input_clip, 1.0)


class DigitalRunner:
    """Exact float64 products against the stored (or supplied) weights."""

    def __init__(self, weights: dict[str, np.ndarray]):
        self.weights = weights

    def input_scale(self, x):
        """Per-image divisor for a layer's input map, or ``None`` for no scaling."""
        return None

    def prepare(self, x):
        """Elementwise input transform applied to a layer's input map before unfolding."""
        return x

    def dense(self, node: Node, cols):
        return self.weights[node.name].T @ cols, cols

    def dense_backward(self, node: Node, ctx, dz):
        w = self.weights[node.name]
        return w @ dz, ctx @ dz.T

    def depthwise(self, node: Node, patches):
        return np.einsum("kc,kcn->cn", self.weights[node.name], patches), patches

    def depthwise_backward(self, node: Node, ctx, dz):
        w = self.weights[node.name]
        return w[:, :, None] * dz[None], np.einsum("kcn,cn->kc", ctx, dz)


class ConverterRunner(DigitalRunner):
    """Training-time DAC/ADC with straight-through gradients.

    Inputs are clipped and quantized, outputs get additive noise and are
    quantized over their per-call range. Gradients pass through both
    quantizers unchanged and are zeroed where the input was clipped.
    """

    def __init__(self, weights, cfg: NoiseConfig, rng: np.random.Generator):
        super().__init__(weights)
        self.cfg = cfg
        self.rng = rng
        self.scales = {k: max(float(np.max(np.abs(w))), 0.0) or 1.0 for k, w in weights.items()}

    def input_scale(self, x):
        return _abs_max_scale(x, self.cfg)

    def _out(self, node, y):
        a = self.scales[node.name]
        return a * analog.adc(y / a, self.cfg, self.rng, axis=0)

    def dense(self, node, cols):
        xq = analog.dac(cols, self.cfg)
        keep = np.abs(cols) <= self.cfg.input_clip
        return self._out(node, self.weights[node.name].T @ xq), (xq, keep)

    def dense_backward(self, node, ctx, dz):
        xq, keep = ctx
        return (self.weights[node.name] @ dz) * keep, xq @ dz.T

    def depthwise(self, node, patches):
        xq = analog.dac(patches, self.cfg)
        keep = np.abs(patches) <= self.cfg.input_clip
        y = np.einsum("kc,kcn->cn", self.weights[node.name], xq)
        return self._out(node, y), (xq, keep)

    def depthwise_backward(self, node, ctx, dz):
        xq, keep = ctx
        w = self.weights[node.name]
        return w[:, :, None] * dz[None] * keep, np.einsum("kcn,cn->kc", xq, dz)


@dataclass
class ProgrammedNetwork:
    """Tiles for every weighted layer: ``tiles[name] = [(Block, AnalogTile), ...]``."""

    cfg: NoiseConfig
    seed: int
    tiles: dict[str, list] = field(default_factory=dict)


def program_network(net: NetworkSpec, cfg: NoiseConfig, seed: int,
                    tile_rows: int = analog.DEFAULT_TILE_ROWS,
                    tile_cols: int = analog.DEFAULT_TILE_COLS) -> ProgrammedNetwork:
    """Partition every weight matrix onto tiles and program each with its own sub-seed."""
    prog = ProgrammedNetwork(cfg, int(seed))
    for node in net.weighted_nodes():
        w = net.params[node.name]["w"]
        rows, cols = weight_matrix_shape(node.layer)
        entries = []
        for i, blk in enumerate(partition(rows, cols, tile_rows, tile_cols)):
            tile = program_tile(w[blk.r0:blk.r1, blk.c0:blk.c1], cfg,
                                derive_seed(seed, node.name, i), tile_rows, tile_cols)
            entries.append((blk, tile))
        prog.tiles[node.name] = entries
    return prog


class AnalogRunner:
    """Inference through programmed tiles; row blocks are summed digitally."""

    def __init__(self, prog: ProgrammedNetwork, cfg: NoiseConfig, rng: np.random.Generator):
        self.prog = prog
        self.cfg = cfg
        self.rng = rng

    def input_scale(self, x):
        return _abs_max_scale(x, self.cfg)

    def prepare(self, x):
        # DAC before im2col: padding taps stay undriven (exactly 0)
        return analog.dac(x, self.cfg)

    def dense(self, node, cols):
        entries = self.prog.tiles[node.name]
        ncols = max(b.c1 for b, _ in entries)
        out = np.zeros((ncols, cols.shape[1]))
        for blk, tile in entries:
            out[blk.c0:blk.c1] += analog_mvm(tile, cols[blk.r0:blk.r1], self.cfg, self.rng,
                                                  dac_applied=True)
        return out, None

    def depthwise(self, node, patches):
        entries = self.prog.tiles[node.name]
        out = np.zeros(patches.shape[1:])
        for blk, tile in entries:
            out[blk.c0:blk.c1] += analog_depthwise(
                tile, patches[blk.r0:blk.r1, blk.c0:blk.c1], self.cfg, self.rng, dac_applied=True)
        return out, None


# --------------------------------------------------------------------------
# graph execution


@dataclass
class _Record:
    pre: np.ndarray
    out: np.ndarray
    ctx: object = None
    in_shape: tuple = ()


def _weighted_forward(node: Node, x, runner, bias):
    ly = node.layer
    s = runner.input_scale(x)
    if s is not None:
        # the clip only trims the rounding overshoot of the division
        x = np.clip(x / s[None, :, None, None], -runner.cfg.input_clip, runner.cfg.input_clip)
    x = runner.prepare(x)
    c, n, h, w = x.shape
    if ly.kind in ("conv2d", "patch_embed"):
        cols = im2col_cnhw(x, ly.kernel, ly.kernel, ly.stride, ly.pad)
        z, ctx = runner.dense(node, cols)
        ho = (h + 2 * ly.pad - ly.kernel) // ly.stride + 1
        wo = (w + 2 * ly.pad - ly.kernel) // ly.stride + 1
        z = z.reshape(ly.out_features, n, ho, wo)
    elif ly.kind == "depthwise_conv2d":
        k2 = ly.kernel * ly.kernel
        cols = im2col_cnhw(x, ly.kernel, ly.kernel, ly.stride, ly.pad)
        patches = cols.reshape(c, k2, -1).transpose(1, 0, 2)
        z, ctx = runner.depthwise(node, patches)
        ho = (h + 2 * ly.pad - ly.kernel) // ly.stride + 1
        wo = (w + 2 * ly.pad - ly.kernel) // ly.stride + 1
        z = z.reshape(c, n, ho, wo)
    else:
        z, ctx = runner.dense(node, x.reshape(c, -1))
        z = z.reshape(ly.out_features, n, h, w)
    if s is not None:
        # the scale is digital periphery: undo it exactly on the output
        z = z * s[None, :, None, None]
    if bias is not None:
        z = z + bias[:, None, None, None]
    return z, (ctx, s)


def _weighted_backward(node: Node, dz, rec: _Record, runner):
    ly = node.layer
    c, n, h, w = rec.in_shape
    ctx, s = rec.ctx
    db = dz.reshape(dz.shape[0], -1).sum(axis=1) if ly.has_bias else None
    if s is not None:
        # scales are treated as constants (straight-through)
        dz = dz * s[None, :, None, None]
    d2 = dz.reshape(dz.shape[0], -1)
    if ly.kind in ("conv2d", "patch_embed"):
        dcols, dw = runner.dense_backward(node, ctx, d2)
        dx = col2im_cnhw(dcols, rec.in_shape, ly.kernel, ly.kernel, ly.stride, ly.pad)
    elif ly.kind == "depthwise_conv2d":
        dpatches, dw = runner.depthwise_backward(node, ctx, d2)
        dcols = dpatches.transpose(1, 0, 2).reshape(c * ly.kernel * ly.kernel, -1)
        dx = col2im_cnhw(dcols, rec.in_shape, ly.kernel, ly.kernel, ly.stride, ly.pad)
    else:
        dcols, dw = runner.dense_backward(node, ctx, d2)
        dx = dcols.reshape(rec.in_shape)
    if s is not None:
        dx = dx / s[None, :, None, None]
    return dx, dw, db


def run_graph(net: NetworkSpec, x, runner, keep: bool = False):
    """Execute the graph on a ``C x N x H x W`` input.

    Returns ``(outputs, records)``; ``records`` is filled only with ``keep``.
    """
    vals: dict[str, np.ndarray] = {}
    recs: dict[str, _Record] = {}
    for node in net.nodes:
        if node.op == "input":
            vals[node.name] = x
            continue
        ins = [vals[i] for i in node.inputs]
        ctx = None
        if node.weighted:
            z, ctx = _weighted_forward(node, ins[0], runner, net.params[node.name].get("b"))
        elif node.op == "maxpool":
            z, ctx = ops.maxpool2_forward(ins[0])
        elif node.op == "upsample":
            z = ops.upsample2_forward(ins[0])
        elif node.op == "concat":
            z = np.concatenate(ins, axis=0)
            ctx = [t.shape[0] for t in ins]
        elif node.op == "add":
            z = ins[0]
            for t in ins[1:]:
                z = z + t
        elif node.op == "layernorm":
            z, ctx = ops.layernorm_forward(ins[0])
        elif node.op == "unpatchify":
            z = ops.unpatchify_forward(ins[0], node.arg)
        elif node.op == "attention":
            z, cache = ops.attention_forward(*ins)
            ctx = (cache, ins[0].shape, ins[2].shape)
        else:
            raise ShapeError(f"unmapped op {node.op}")
        y = ops.act_forward(node.act, z)
        vals[node.name] = y
        if keep:
            recs[node.name] = _Record(z, y, ctx, ins[0].shape)
    return vals, recs


def backprop(net: NetworkSpec, recs: dict[str, _Record], d_logits, runner):
    """Gradients of every parameter given dL/d(pre-activation of the output node)."""
    grads: dict[str, np.ndarray] = {net.output.name: d_logits}
    pgrads: dict[str, dict[str, np.ndarray]] = {}
    out_name = net.output.name

    def acc(name, g):
        if name in grads:
            grads[name] = grads[name] + g
        else:
            grads[name] = g

    for node in reversed(net.nodes):
        if node.op == "input" or node.name not in grads:
            continue
        rec = recs[node.name]
        dy = grads.pop(node.name)
        dz = dy if node.name == out_name else ops.act_backward(node.act, dy, rec.pre, rec.out)
        if node.weighted:
            dx, dw, db = _weighted_backward(node, dz, rec, runner)
            pgrads[node.name] = {"w": dw} if db is None else {"w": dw, "b": db}
            acc(node.inputs[0], dx)
        elif node.op == "maxpool":
            acc(node.inputs[0], ops.maxpool2_backward(dz, rec.ctx, rec.in_shape))
        elif node.op == "upsample":
            acc(node.inputs[0], ops.upsample2_backward(dz))
        elif node.op == "concat":
            start = 0
            for src, width in zip(node.inputs, rec.ctx):
                acc(src, dz[start:start + width])
                start += width
        elif node.op == "add":
            for src in node.inputs:
                acc(src, dz)
        elif node.op == "layernorm":
            acc(node.inputs[0], ops.layernorm_backward(dz, rec.pre, rec.ctx))
        elif node.op == "unpatchify":
            acc(node.inputs[0], ops.unpatchify_backward(dz, node.arg))
        elif node.op == "attention":
            q, k, v = node.inputs
            cache, q_shape, v_shape = rec.ctx
            dq, dk, dv = ops.attention_backward(dz, cache, q_shape, v_shape)
            acc(q, dq)
            acc(k, dk)
            acc(v, dv)
    return pgrads


def _to_cnhw(x, in_channels: int):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != in_channels:
        raise ShapeError(f"expected ({in_channels}, H, W) or (N, {in_channels}, H, W), got {x.shape}")
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3)), single


def _weights(net: NetworkSpec) -> dict[str, np.ndarray]:
    return {name: p["w"] for name, p in net.params.items()}


def logits(net: NetworkSpec, x, runner) -> np.ndarray:
    """Pre-sigmoid output for an ``N x C x H x W`` batch, as ``N x 1 x H x W``."""
    xc, _ = _to_cnhw(x, net.in_channels)
    _, recs = run_graph(net, xc, runner, keep=True)
    return recs[net.output.name].pre.transpose(1, 0, 2, 3)


def forward(net: NetworkSpec, x, mode: str = "digital", cfg: NoiseConfig | None = None,
            rng: np.random.Generator | None = None, programmed: ProgrammedNetwork | None = None,
            tile_rows: int = analog.DEFAULT_TILE_ROWS,
            tile_cols: int = analog.DEFAULT_TILE_COLS) -> np.ndarray:
    """Sigmoid output for one ``C x H x W`` image or an ``N x C x H x W`` batch.

    Analog mode uses ``programmed`` tiles when given (fixed programming);
    otherwise it programs a fresh set from ``rng`` for this call.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    xc, single = _to_cnhw(x, net.in_channels)
    net.node_shapes(xc.shape[:1] + xc.shape[2:])
    if mode == "digital":
        runner = DigitalRunner(_weights(net))
    else:
        cfg = cfg or NoiseConfig()
        if rng is None:
            raise ConfigError("analog mode needs an rng")
        if programmed is None:
            programmed = program_network(net, cfg, int(rng.integers(0, 2 ** 63)),
                                         tile_rows, tile_cols)
        runner = AnalogRunner(programmed, cfg, rng)
    vals, _ = run_graph(net, xc, runner)
    y = vals[net.output.name].transpose(1, 0, 2, 3)
    return y[0] if single else y


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 25
    batch_size: int = 8
    loss: str = "bce"
    train_noise: NoiseConfig = field(
        default_factory=lambda: NoiseConfig(sigma_prog=0.0, sigma_out=0.0,
                                            dac_bits=None, adc_bits=None))
    weight_clip: float | None = None
    seed: int = 0
    # simulate DAC/ADC (and output noise) in the training forward pass
    converters: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.loss not in ops.LOSSES:
            raise ConfigError(f"loss must be one of {sorted(ops.LOSSES)}")
        if self.weight_clip is not None and not self.weight_clip > 0:
            raise ConfigError("weight_clip must be > 0")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate, "epochs": self.epochs,
            "batch_size": self.batch_size, "loss": self.loss,
            "train_noise": self.train_noise.to_dict(), "weight_clip": self.weight_clip,
            "seed": self.seed, "converters": self.converters,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        kw = dict(d)
        if "train_noise" in kw:
            tn = kw["train_noise"]
            kw["train_noise"] = tn if isinstance(tn, NoiseConfig) else NoiseConfig.from_dict(tn)
        return cls(**kw)


def perturb_weights(net: NetworkSpec, sigma: float, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """``w + sigma * max|w| * eps`` per layer; the clean weights are untouched."""
    out = {}
    for name, p in net.params.items():
        w = p["w"]
        if sigma > 0:
            w = w + sigma * np.max(np.abs(w)) * rng.standard_normal(w.shape)
        out[name] = w
    return out


def loss_and_grads(net: NetworkSpec, images, masks, tcfg: TrainConfig,
                   rng: np.random.Generator | None = None):
    """Batch loss and parameter gradients under the training-time noise model."""
    tn = tcfg.train_noise
    if tn.sigma_prog > 0 and rng is None:
        raise ConfigError("noisy training needs an rng")
    weights = perturb_weights(net, tn.sigma_prog, rng) if tn.sigma_prog > 0 else _weights(net)
    if tcfg.converters:
        runner = ConverterRunner(weights, tn, rng if rng is not None else make_rng(tcfg.seed))
    else:
        runner = DigitalRunner(weights)
    xc, _ = _to_cnhw(images, net.in_channels)
    _, recs = run_graph(net, xc, runner, keep=True)
    z = recs[net.output.name].pre
    t = np.asarray(masks, dtype=np.float64).reshape(z.shape[1], *z.shape[2:])[None]
    loss, dz = ops.LOSSES[tcfg.loss](z, t)
    grads = backprop(net, recs, dz, runner) if np.isfinite(loss) else {}
    return loss, grads


def train_step(net: NetworkSpec, batch, tcfg: TrainConfig, rng: np.random.Generator,
               step: int = 0) -> tuple[NetworkSpec, float]:
    """One SGD step; returns the updated network and the pre-update batch loss."""
    images, masks = batch
    if len(images) == 0:
        raise ConfigError("empty batch")
    loss, grads = loss_and_grads(net, images, masks, tcfg, rng)
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss", step)
    lr = tcfg.learning_rate
    new = {}
    for name, p in net.params.items():
        g = grads[name]
        upd = {}
        for key, val in p.items():
            v = val - lr * g[key]
            if tcfg.weight_clip is not None and key == "w":
                v = np.clip(v, -tcfg.weight_clip, tcfg.weight_clip)
            upd[key] = v
        new[name] = upd
    return net.with_params(new), loss


@dataclass
class TrainHistory:
    initial_dice: float
    epochs: list[dict] = field(default_factory=list)

    @property
    def final_dice(self) -> float:
        return self.epochs[-1]["dice"] if self.epochs else self.initial_dice


def hwa_train(net: NetworkSpec, dataset, tcfg: TrainConfig, eval_fn=None):
    """SGD over ``epochs`` shuffled passes of ``dataset`` (``(images, masks)`` arrays).

    ``eval_fn(net) -> dice`` scores each epoch (defaults to digital train dice).
    """
    images, masks = dataset
    n = len(images)
    if n == 0:
        raise ConfigError("empty dataset")
    if eval_fn is None:
        from ..evalx import dataset_dice

        def eval_fn(m):
            return dataset_dice(forward(m, images)[:, 0], masks)

    rng = make_rng(tcfg.seed, "train")
    hist = TrainHistory(initial_dice=float(eval_fn(net)))
    step = 0
    for epoch in range(tcfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, tcfg.batch_size):
            idx = order[start:start + tcfg.batch_size]
            net, loss = train_step(net, (images[idx], masks[idx]), tcfg, rng, step)
            losses.append(loss)
            step += 1
        hist.epochs.append({"epoch": epoch + 1, "loss": float(np.mean(losses)),
                            "dice": float(eval_fn(net))})
    return net, hist
