"""Declarative layer graph shared by the toy presets."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, ShapeError
from ..mapping import LayerSpec, weight_matrix_shape
from ..numerics import conv_output_size

ACTIVATIONS = ("relu", "gelu", "sigmoid", "none")
STRUCTURAL_OPS = ("input", "maxpool", "upsample", "concat", "add", "layernorm", "unpatchify",
                  "attention")


@dataclass(frozen=True)
class Node:
    """One graph node.

    Weighted nodes carry a :class:`LayerSpec` and their ``op`` equals the
    layer kind. ``arg`` holds the patch size for ``unpatchify``.
    """

    name: str
    op: str
    inputs: tuple[str, ...] = ()
    layer: LayerSpec | None = None
    act: str = "none"
    arg: int = 0

    def __post_init__(self):
        if self.act not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.act!r}")
        if self.layer is not None and self.layer.kind != self.op:
            raise ConfigError(f"node {self.name}: op {self.op} != layer kind {self.layer.kind}")
        if self.layer is None and self.op not in STRUCTURAL_OPS:
            raise ConfigError(f"node {self.name}: unmapped op {self.op!r}")

    @property
    def weighted(self) -> bool:
        return self.layer is not None


@dataclass
class NetworkSpec:
    """A runnable network: ordered nodes (a topological order) plus parameters.

    ``params[name]`` holds ``"w"`` as the layer's weight matrix
    (fan-in x fan-out, the same view that is mapped onto tiles) and ``"b"``
    when the layer has a bias.
    """

    preset_id: str
    width_scale: int
    nodes: tuple[Node, ...]
    params: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    seed: int = 0
    attention: bool = False
    in_channels: int = 1

    def __post_init__(self):
        self._validate()

    def _validate(self):
        seen = set()
        for i, node in enumerate(self.nodes):
            if node.name in seen:
                raise ConfigError(f"duplicate node {node.name}")
            if (node.op == "input") != (i == 0):
                raise ConfigError("the first node, and only the first, must be the input")
            for src in node.inputs:
                if src not in seen:
                    raise ConfigError(f"node {node.name} reads {src} before it is defined")
            seen.add(node.name)
        if self.nodes[-1].act != "sigmoid":
            raise ConfigError("the output node must end in a sigmoid")

    @property
    def output(self) -> Node:
        return self.nodes[-1]

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def weighted_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.weighted]

    def param_count(self) -> int:
        return sum(a.size for p in self.params.values() for a in p.values())

    def skip_edges(self) -> int:
        """Edges entering merge nodes besides their main path."""
        return sum(len(n.inputs) - 1 for n in self.nodes if n.op in ("concat", "add"))

    def copy(self) -> "NetworkSpec":
        new = copy.copy(self)
        new.params = {k: {kk: vv.copy() for kk, vv in v.items()} for k, v in self.params.items()}
        return new

    def with_params(self, params) -> "NetworkSpec":
        new = copy.copy(self)
        new.params = params
        return new

    def init_params(self, rng: np.random.Generator) -> None:
        """He-normal weights for rectified layers, LeCun-normal otherwise; zero biases."""
        for n in self.weighted_nodes():
            rows, cols = weight_matrix_shape(n.layer)
            gain = 2.0 if n.act in ("relu", "gelu") else 1.0
            w = rng.standard_normal((rows, cols)) * np.sqrt(gain / rows)
            p = {"w": w}
            if n.layer.has_bias:
                p["b"] = np.zeros(cols)
            self.params[n.name] = p

    def node_shapes(self, input_shape) -> dict[str, tuple[int, ...]]:
        """Per-node output shapes (``(C, H, W)`` for maps and token grids)."""
        shapes: dict[str, tuple[int, ...]] = {}
        for n in self.nodes:
            if n.op == "input":
                s = tuple(int(v) for v in input_shape)
                if len(s) != 3 or s[0] != self.in_channels:
                    raise ShapeError(f"expected a ({self.in_channels}, H, W) input, got {s}")
                shapes[n.name] = s
                continue
            ins = [shapes[i] for i in n.inputs]
            shapes[n.name] = _infer(n, ins)
        return shapes

    def layer_inputs(self, input_shape):
        shapes = self.node_shapes(input_shape)
        for n in self.weighted_nodes():
            yield n.name, n.layer, shapes[n.inputs[0]]


def _infer(n: Node, ins: list[tuple[int, ...]]) -> tuple[int, ...]:
    s = ins[0]
    if n.weighted:
        ly = n.layer
        if s[0] != ly.in_features:
            raise ShapeError(f"{n.name}: expects {ly.in_features} channels, got {s[0]}")
        if ly.is_conv:
            return (ly.out_features, conv_output_size(s[1], ly.kernel, ly.stride, ly.pad),
                    conv_output_size(s[2], ly.kernel, ly.stride, ly.pad))
        return (ly.out_features,) + s[1:]
    if n.op == "maxpool":
        if s[1] % 2 or s[2] % 2:
            raise ShapeError(f"{n.name}: max-pool needs even spatial dims, got {s}")
        return (s[0], s[1] // 2, s[2] // 2)
    if n.op == "upsample":
        return (s[0], 2 * s[1], 2 * s[2])
    if n.op == "concat":
        if any(t[1:] != s[1:] for t in ins):
            raise ShapeError(f"{n.name}: concat of mismatched maps {ins}")
        return (sum(t[0] for t in ins),) + s[1:]
    if n.op == "layernorm":
        return s
    if n.op == "add":
        if any(t != s for t in ins):
            raise ShapeError(f"{n.name}: add of mismatched maps {ins}")
        return s
    if n.op == "unpatchify":
        p = n.arg
        if s[0] % (p * p):
            raise ShapeError(f"{n.name}: {s[0]} channels not divisible by {p}x{p}")
        return (s[0] // (p * p), s[1] * p, s[2] * p)
    if n.op == "attention":
        if len(ins) != 3 or ins[0] != ins[1] or ins[1][1:] != ins[2][1:]:
            raise ShapeError(f"{n.name}: attention needs matching q, k, v")
        return ins[2]
    raise ShapeError(f"{n.name}: cannot infer shape for op {n.op}")
