"""Layer-to-tile mapping and the per-network tile metrics.

Definitions used throughout:

* A layer is viewed as a ``rows x cols`` weight matrix (fan-in x fan-out).
  Biases stay in the digital periphery and are not mapped.
* The matrix is cut into a row-major grid of tile-sized blocks; edge blocks
  are ragged. Each block occupies one tile.
* Tile utilization is occupied cells over allocated cells. Network averages
  weight every tile equally.
* Reuse factor is the number of MVM calls a layer's tiles serve for a single
  network input (one per output pixel for convolutions, one per token for
  token-wise linear layers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import MappingError, ShapeError
from .numerics import conv_output_size

LAYER_KINDS = ("conv2d", "depthwise_conv2d", "linear", "patch_embed", "attention_proj")


@dataclass(frozen=True)
class LayerSpec:
    """A weighted layer.

    ``in_features`` / ``out_features`` are channels for convolutional kinds
    and features for linear kinds. For ``patch_embed`` the kernel and the
    stride both equal the patch size.
    """

    kind: str
    in_features: int
    out_features: int
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    has_bias: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise MappingError(f"unsupported layer kind {self.kind!r}")
        if min(self.in_features, self.out_features, self.kernel, self.stride) < 1 or self.pad < 0:
            raise ShapeError(f"non-positive dimension in {self}")
        if self.kind == "depthwise_conv2d" and self.in_features != self.out_features:
            raise ShapeError("depthwise conv needs in_features == out_features")
        if self.kind == "patch_embed" and self.stride != self.kernel:
            raise ShapeError("patch_embed needs stride == kernel (the patch size)")

    @classmethod
    def conv2d(cls, cin, cout, k=3, stride=1, pad=None, has_bias=True):
        return cls("conv2d", cin, cout, k, stride, k // 2 if pad is None else pad, has_bias)

    @classmethod
    def depthwise(cls, channels, k=3, pad=None, has_bias=True):
        return cls("depthwise_conv2d", channels, channels, k, 1, k // 2 if pad is None else pad,
                   has_bias)

    @classmethod
    def linear(cls, fin, fout, has_bias=True):
        return cls("linear", fin, fout, has_bias=has_bias)

    @classmethod
    def patch_embed(cls, cin, dim, patch, has_bias=True):
        return cls("patch_embed", cin, dim, patch, patch, 0, has_bias)

    @classmethod
    def attention_proj(cls, fin, fout, has_bias=True):
        return cls("attention_proj", fin, fout, has_bias=has_bias)

    @property
    def is_conv(self) -> bool:
        return self.kind in ("conv2d", "depthwise_conv2d", "patch_embed")

    @property
    def param_count(self) -> int:
        rows, cols = weight_matrix_shape(self)
        return rows * cols + (self.out_features if self.has_bias else 0)


def weight_matrix_shape(layer: LayerSpec) -> tuple[int, int]:
    k = layer.kernel
    if layer.kind in ("conv2d", "patch_embed"):
        return layer.in_features * k * k, layer.out_features
    if layer.kind == "depthwise_conv2d":
        return k * k, layer.out_features
    if layer.kind in ("linear", "attention_proj"):
        return layer.in_features, layer.out_features
    raise MappingError(f"unsupported layer kind {layer.kind!r}")


@dataclass(frozen=True)
class Block:
    """Half-open row/column ranges of one tile-resident block."""

    r0: int
    r1: int
    c0: int
    c1: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.r1 - self.r0, self.c1 - self.c0

    @property
    def cells(self) -> int:
        return (self.r1 - self.r0) * (self.c1 - self.c0)


def partition(rows: int, cols: int, tile_rows: int, tile_cols: int) -> list[Block]:
    """Row-major ceiling grid of blocks covering a ``rows x cols`` matrix."""
    if min(rows, cols, tile_rows, tile_cols) < 1:
        raise MappingError("matrix and tile dimensions must be positive")
    return [
        Block(r0, min(r0 + tile_rows, rows), c0, min(c0 + tile_cols, cols))
        for r0 in range(0, rows, tile_rows)
        for c0 in range(0, cols, tile_cols)
    ]


@dataclass(frozen=True)
class TileMapping:
    layer_id: str
    weight_rows: int
    weight_cols: int
    tile_rows: int
    tile_cols: int
    blocks: tuple[Block, ...]
    reuse: int

    @property
    def tiles_used(self) -> int:
        return len(self.blocks)

    @property
    def utilization(self) -> float:
        return utilization(self)


def utilization(mapping: TileMapping) -> float:
    used = mapping.weight_rows * mapping.weight_cols
    return used / (mapping.tiles_used * mapping.tile_rows * mapping.tile_cols)


def reuse_factor(layer: LayerSpec, input_shape) -> int:
    """MVM invocations per network input.

    ``input_shape`` is ``(C, H, W)`` for a feature map or token grid, or
    ``(features,)`` for a single vector.
    """
    shape = tuple(int(s) for s in input_shape)
    if layer.is_conv:
        if len(shape) != 3:
            raise ShapeError(f"{layer.kind} needs a (C, H, W) input, got {shape}")
        c, h, w = shape
        if c != layer.in_features:
            raise ShapeError(f"{layer.kind} expects {layer.in_features} channels, got {c}")
        if layer.kind == "patch_embed" and (h % layer.kernel or w % layer.kernel):
            raise ShapeError(f"{h}x{w} input is not divisible into {layer.kernel}-pixel patches")
        ho = conv_output_size(h, layer.kernel, layer.stride, layer.pad)
        wo = conv_output_size(w, layer.kernel, layer.stride, layer.pad)
        return ho * wo
    if shape[0] != layer.in_features:
        raise ShapeError(f"{layer.kind} expects {layer.in_features} features, got {shape[0]}")
    if len(shape) == 1:
        return 1
    if len(shape) == 3:
        return shape[1] * shape[2]
    raise ShapeError(f"cannot interpret input shape {shape}")


def map_layer(layer_id: str, layer: LayerSpec, input_shape, tile_rows: int, tile_cols: int) -> TileMapping:
    rows, cols = weight_matrix_shape(layer)
    return TileMapping(layer_id, rows, cols, tile_rows, tile_cols,
                       tuple(partition(rows, cols, tile_rows, tile_cols)),
                       reuse_factor(layer, input_shape))


@dataclass
class NetworkReport:
    layers: list[TileMapping]
    total_params: int
    tile_rows: int
    tile_cols: int
    input_shape: tuple = field(default=())

    @property
    def total_tiles(self) -> int:
        return sum(m.tiles_used for m in self.layers)

    @property
    def avg_utilization(self) -> float:
        # per-tile mean == sum(used cells) / sum(allocated cells)
        used = sum(m.weight_rows * m.weight_cols for m in self.layers)
        return used / (self.total_tiles * self.tile_rows * self.tile_cols)

    @property
    def avg_reuse(self) -> float:
        return math.fsum(m.reuse * m.tiles_used for m in self.layers) / self.total_tiles

    def summary(self) -> dict:
        return {
            "avg_utilization": self.avg_utilization,
            "avg_reuse": self.avg_reuse,
            "total_params": self.total_params,
            "total_tiles": self.total_tiles,
            "tile_rows": self.tile_rows,
            "tile_cols": self.tile_cols,
        }

    def rows(self) -> list[dict]:
        return [
            {"layer": m.layer_id, "rows": m.weight_rows, "cols": m.weight_cols,
             "tiles": m.tiles_used, "utilization": m.utilization, "reuse": m.reuse}
            for m in self.layers
        ]


def analyze_network(net, tile_rows: int, tile_cols: int, input_shape) -> NetworkReport:
    """Map every weighted layer of ``net`` and aggregate the tile metrics.

    ``net`` needs a ``layer_inputs(input_shape)`` method yielding
    ``(layer_id, LayerSpec, layer_input_shape)`` in execution order, and a
    ``param_count()`` method.
    """
    layers = [map_layer(name, layer, shape, tile_rows, tile_cols)
              for name, layer, shape in net.layer_inputs(input_shape)]
    if not layers:
        raise MappingError("network has no mappable layers")
    return NetworkReport(layers, net.param_count(), tile_rows, tile_cols, tuple(input_shape))
