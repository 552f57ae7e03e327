"""Tiny networks covering every layer kind, plus a finite-difference gradient check."""

import numpy as np

from aimcsim.mapping import LayerSpec
from aimcsim.network import NetworkSpec, Node, TrainConfig, loss_and_grads
from aimcsim.rng import make_rng


def micro(nodes, seed=0, in_channels=1):
    net = NetworkSpec("micro", 1, tuple(nodes), in_channels=in_channels)
    net.init_params(make_rng(seed))
    # non-zero biases so their gradients are exercised too
    rng = make_rng(seed, "bias")
    for p in net.params.values():
        if "b" in p:
            p["b"] = 0.1 * rng.standard_normal(p["b"].shape)
    return net


def conv_stack():
    """Three convolutions: plain, strided, and a 1x1 head after upsampling."""
    return micro([
        Node("input", "input"),
        Node("c1", "conv2d", ("input",), LayerSpec.conv2d(1, 3, 3), "gelu"),
        Node("c2", "conv2d", ("c1",), LayerSpec.conv2d(3, 2, 3, stride=2, pad=1), "relu"),
        Node("up", "upsample", ("c2",)),
        Node("head", "conv2d", ("up",), LayerSpec.conv2d(2, 1, 1), "sigmoid"),
    ])


def pyramid():
    return micro([
        Node("input", "input"),
        Node("e", "conv2d", ("input",), LayerSpec.conv2d(1, 2, 3), "gelu"),
        Node("p", "maxpool", ("e",)),
        Node("m", "conv2d", ("p",), LayerSpec.conv2d(2, 3, 3), "gelu"),
        Node("u", "upsample", ("m",)),
        Node("uc", "conv2d", ("u",), LayerSpec.conv2d(3, 2, 3), "none"),
        Node("cat", "concat", ("e", "uc")),
        Node("head", "conv2d", ("cat",), LayerSpec.conv2d(4, 1, 1), "sigmoid"),
    ])


def isotropic(attention=False):
    d = 6
    nodes = [Node("input", "input"),
             Node("emb", "patch_embed", ("input",), LayerSpec.patch_embed(1, d, 2), "gelu"),
             Node("n0", "layernorm", ("emb",))]
    if attention:
        nodes += [
            Node("q", "attention_proj", ("n0",), LayerSpec.attention_proj(d, d)),
            Node("k", "attention_proj", ("n0",), LayerSpec.attention_proj(d, d)),
            Node("v", "attention_proj", ("n0",), LayerSpec.attention_proj(d, d)),
            Node("att", "attention", ("q", "k", "v")),
            Node("mix", "attention_proj", ("att",), LayerSpec.attention_proj(d, d), "gelu"),
        ]
    else:
        nodes.append(Node("mix", "depthwise_conv2d", ("n0",), LayerSpec.depthwise(d, 3), "gelu"))
    nodes += [Node("pw", "linear", ("mix",), LayerSpec.linear(d, d)),
              Node("res", "add", ("emb", "pw")),
              Node("n1", "layernorm", ("res",)),
              Node("head", "linear", ("n1",), LayerSpec.linear(d, 4)),
              Node("out", "unpatchify", ("head",), act="sigmoid", arg=2)]
    return micro(nodes)


MICRO_NETS = {
    "conv_stack": conv_stack,
    "pyramid": pyramid,
    "isotropic_conv": isotropic,
    "isotropic_attention": lambda: isotropic(True),
}


def batch(h=8, w=8, n=2, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (n, 1, h, w)), (rng.uniform(size=(n, h, w)) > 0.5).astype(float)


def rel_err(a, b):
    # the floor keeps gradients that vanish identically (e.g. the key bias, to which
    # softmax is invariant) from dividing finite-difference round-off (~1e-11) by ~0
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


def gradient_errors(net, loss="bce", h=1e-5):
    """Max relative error between analytic and central-difference gradients, per tensor."""
    x, m = batch()
    errs = {}
    tcfg = TrainConfig(loss=loss)
    _, grads = loss_and_grads(net, x, m, tcfg)
    for name, p in net.params.items():
        for key, arr in p.items():
            fd = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                lp, _ = loss_and_grads(net, x, m, tcfg)
                arr[idx] = orig - h
                lm, _ = loss_and_grads(net, x, m, tcfg)
                arr[idx] = orig
                fd[idx] = (lp - lm) / (2 * h)
            errs[f"{name}.{key}"] = float(rel_err(grads[name][key], fd).max())
    return errs
