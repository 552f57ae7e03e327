"""Toy pyramidal and isotropic segmentation networks."""

from __future__ import annotations

from ..errors import ConfigError
from ..mapping import LayerSpec
from ..rng import make_rng
from .graph import NetworkSpec, Node

PRESETS = ("toy_unet", "toy_unetpp", "toy_isotropic")
PATCH = 4
MIXER_BLOCKS = 4


def _conv(name, src, cin, cout, k=3, act="relu"):
    return Node(name, "conv2d", (src,), LayerSpec.conv2d(cin, cout, k), act)


def _double_conv(prefix, src, cin, cout):
    return [_conv(f"{prefix}a", src, cin, cout), _conv(f"{prefix}b", f"{prefix}a", cout, cout)]


def _unet_nodes(c: int) -> list[Node]:
    nodes = [Node("input", "input")]
    nodes += _double_conv("enc0", "input", 1, c)
    nodes.append(Node("pool0", "maxpool", ("enc0b",)))
    nodes += _double_conv("enc1", "pool0", c, 2 * c)
    nodes.append(Node("pool1", "maxpool", ("enc1b",)))
    nodes += _double_conv("mid", "pool1", 2 * c, 4 * c)
    nodes.append(Node("up1", "upsample", ("midb",)))
    nodes.append(_conv("up1c", "up1", 4 * c, 2 * c))
    nodes.append(Node("cat1", "concat", ("enc1b", "up1c")))
    nodes += _double_conv("dec1", "cat1", 4 * c, 2 * c)
    nodes.append(Node("up0", "upsample", ("dec1b",)))
    nodes.append(_conv("up0c", "up0", 2 * c, c))
    nodes.append(Node("cat0", "concat", ("enc0b", "up0c")))
    nodes += _double_conv("dec0", "cat0", 2 * c, c)
    nodes.append(_conv("head", "dec0b", c, 1, k=1, act="sigmoid"))
    return nodes


def _unetpp_nodes(c: int) -> list[Node]:
    """Depth-2 nested U-Net: node ``x{i}{j}`` sits at level ``i``, column ``j``."""
    ch = [c, 2 * c, 4 * c]
    nodes = [Node("input", "input")]
    nodes += _double_conv("x00", "input", 1, ch[0])
    nodes.append(Node("pool0", "maxpool", ("x00b",)))
    nodes += _double_conv("x10", "pool0", ch[0], ch[1])
    nodes.append(Node("pool1", "maxpool", ("x10b",)))
    nodes += _double_conv("x20", "pool1", ch[1], ch[2])

    def nested(i, j, skips):
        below = f"x{i + 1}{j - 1}b"
        up = f"up{i + 1}{j - 1}"
        out = [Node(up, "upsample", (below,)),
               _conv(f"{up}c", up, ch[i + 1], ch[i])]
        cat = f"cat{i}{j}"
        out.append(Node(cat, "concat", tuple(skips) + (f"{up}c",)))
        out += _double_conv(f"x{i}{j}", cat, ch[i] * (len(skips) + 1), ch[i])
        return out

    nodes += nested(0, 1, ["x00b"])
    nodes += nested(1, 1, ["x10b"])
    nodes += nested(0, 2, ["x00b", "x01b"])
    nodes.append(_conv("head", "x02b", c, 1, k=1, act="sigmoid"))
    return nodes


def _isotropic_nodes(d: int, attention: bool) -> list[Node]:
    nodes = [Node("input", "input"),
             Node("embed", "patch_embed", ("input",), LayerSpec.patch_embed(1, d, PATCH), "gelu")]
    prev = "embed"
    for i in range(MIXER_BLOCKS):
        b = f"blk{i}"
        nodes.append(Node(f"{b}norm", "layernorm", (prev,)))
        if attention:
            nodes += [
                Node(f"{b}q", "attention_proj", (f"{b}norm",), LayerSpec.attention_proj(d, d)),
                Node(f"{b}k", "attention_proj", (f"{b}norm",), LayerSpec.attention_proj(d, d)),
                Node(f"{b}v", "attention_proj", (f"{b}norm",), LayerSpec.attention_proj(d, d)),
                Node(f"{b}att", "attention", (f"{b}q", f"{b}k", f"{b}v")),
                Node(f"{b}mix", "attention_proj", (f"{b}att",),
                     LayerSpec.attention_proj(d, d), "gelu"),
            ]
        else:
            nodes.append(Node(f"{b}mix", "depthwise_conv2d", (f"{b}norm",), LayerSpec.depthwise(d, 3),
                              "gelu"))
        nodes.append(Node(f"{b}pw", "linear", (f"{b}mix",), LayerSpec.linear(d, d)))
        nodes.append(Node(f"{b}res", "add", (prev, f"{b}pw")))
        prev = f"{b}res"
    nodes.append(Node("norm", "layernorm", (prev,)))
    nodes.append(Node("head", "linear", ("norm",), LayerSpec.linear(d, PATCH * PATCH)))
    nodes.append(Node("unpatch", "unpatchify", ("head",), act="sigmoid", arg=PATCH))
    return nodes


def build_preset(preset_id: str, width_scale: int = 1, seed: int = 0,
                 attention: bool = False) -> NetworkSpec:
    """Build and initialise a toy network.

    ``toy_unet`` / ``toy_unetpp`` use ``8 * width_scale`` base channels; the
    isotropic net embeds 4x4 patches into ``32 * width_scale`` features.
    ``attention`` swaps the isotropic token mixer for single-head
    self-attention.
    """
    if isinstance(width_scale, bool) or int(width_scale) != width_scale or width_scale < 1:
        raise ConfigError("width_scale must be an integer >= 1")
    width_scale = int(width_scale)
    if preset_id == "toy_unet":
        nodes = _unet_nodes(8 * width_scale)
    elif preset_id == "toy_unetpp":
        nodes = _unetpp_nodes(8 * width_scale)
    elif preset_id == "toy_isotropic":
        nodes = _isotropic_nodes(32 * width_scale, attention)
    else:
        raise ConfigError(f"unknown preset {preset_id!r}; choose from {PRESETS}")
    net = NetworkSpec(preset_id, width_scale, tuple(nodes), seed=int(seed),
                      attention=bool(attention and preset_id == "toy_isotropic"))
    net.init_params(make_rng(seed, "init", preset_id))
    return net
