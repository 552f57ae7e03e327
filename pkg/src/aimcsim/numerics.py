"""Dense float64 reference arithmetic.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. The functions here are the digital reference path: :func:`matmul`
accumulates in a fixed left-to-right order over the inner dimension so its
result is bit-identical to a naive triple loop, and :func:`conv2d_ref` is
literally ``im2col`` followed by :func:`matmul`.

Feature maps inside the network use a channel-major ``C x N x H x W``
layout; :func:`im2col_cnhw` / :func:`col2im_cnhw` work on that layout and
:func:`im2col` is the single-image special case.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

Tensor = np.ndarray


def as_tensor(x, ndim: int | None = None) -> Tensor:
    """Convert to a finite float64 C-contiguous array."""
    t = np.ascontiguousarray(x, dtype=np.float64)
    if ndim is not None and t.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d tensor, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ShapeError("tensor contains non-finite entries")
    return t


def matmul(a, b) -> Tensor:
    """Exact ``a @ b`` with sequential accumulation over the inner index.

    Equivalent, bit for bit, to ``c[i, j] = sum(a[i, q] * b[q, j] for q in
    range(k))`` evaluated left to right. Slower than BLAS; used as the
    reference, not in the training hot loop.
    """
    a = as_tensor(a, 2)
    b = as_tensor(b, 2)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for q in range(a.shape[1]):
        out += a[:, q, None] * b[None, q, :]
    return out


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(f"kernel {k} larger than padded input {size + 2 * pad}")
    return span // stride + 1


def _check_conv_args(kh: int, kw: int, stride: int, pad: int) -> None:
    if kh < 1 or kw < 1:
        raise ShapeError("kernel dimensions must be >= 1")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if pad < 0:
        raise ShapeError("pad must be >= 0")


def im2col_cnhw(x: Tensor, kh: int, kw: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Unfold a ``C x N x H x W`` map into ``(C*kh*kw) x (N*Ho*Wo)`` columns.

    Rows are ordered (channel, kernel row, kernel col); columns are ordered
    (image, output row, output col).
    """
    _check_conv_args(kh, kw, stride, pad)
    c, n, h, w = x.shape
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError("non-positive output size")
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((c, kh, kw, n, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * kh * kw, n * ho * wo)


def col2im_cnhw(cols: Tensor, x_shape: tuple[int, int, int, int], kh: int, kw: int,
                stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of :func:`im2col_cnhw`: scatter-add columns back to a map."""
    c, n, h, w = x_shape
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((c, n, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def im2col(x, kh: int, kw: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Unfold a ``C x H x W`` image; column ``j`` is the patch of output pixel ``j``."""
    x = as_tensor(x, 3)
    return im2col_cnhw(x[:, None], kh, kw, stride, pad)


def conv2d_ref(x, w, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of a ``Cin x H x W`` image with ``Cout x Cin x kh x kw`` weights."""
    x = as_tensor(x, 3)
    w = as_tensor(w, 4)
    cout, cin, kh, kw = w.shape
    if x.shape[0] != cin:
        raise ShapeError(f"input has {x.shape[0]} channels, weights expect {cin}")
    ho = conv_output_size(x.shape[1], kh, stride, pad)
    wo = conv_output_size(x.shape[2], kw, stride, pad)
    out = matmul(w.reshape(cout, -1), im2col(x, kh, kw, stride, pad))
    if bias is not None:
        bias = as_tensor(bias, 1)
        if bias.shape[0] != cout:
            raise ShapeError("bias length differs from output channels")
        out = out + bias[:, None]
    return out.reshape(cout, ho, wo)
