"""Dense float64 tensors with tape-based reverse-mode differentiation.

Values are plain ``numpy.ndarray`` objects (float64, C-contiguous, NCHW for
images). A :class:`Tape` records every operation applied to :class:`Var`
handles; :func:`backward` walks the tape in reverse insertion order.

Convolutions are lowered to im2col / col2im plus a single matrix product.
The accumulation order of that product is fixed for a given shape, so
repeated calls are bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class TapeError(RuntimeError):
    """Invalid use of a tape (foreign node, dangling id, non-scalar loss)."""


def as_tensor(data) -> np.ndarray:
    return np.asarray(data, dtype=DTYPE, order="C")


@dataclass
class Node:
    parents: tuple[int, ...]
    shape: tuple[int, ...]
    # maps upstream gradient -> tuple of gradients, one per parent
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None


@dataclass
class Tape:
    """Append-only record of operations for a single forward pass."""

    nodes: list[Node] = field(default_factory=list)
    values: list[np.ndarray] = field(default_factory=list)

    def leaf(self, value) -> "Var":
        """Register an input or parameter tensor."""
        value = as_tensor(value)
        return self._push(value, (), None)

    def _push(self, value, parents, vjp) -> "Var":
        idx = len(self.nodes)
        self.nodes.append(Node(tuple(parents), value.shape, vjp))
        self.values.append(value)
        return Var(self, idx)

    def record(self, value: np.ndarray, parents: Sequence["Var"], vjp) -> "Var":
        for p in parents:
            if p.tape is not self:
                raise TapeError("operand belongs to a different tape")
        return self._push(value, tuple(p.id for p in parents), vjp)


@dataclass(frozen=True)
class Var:
    """Handle to a node on a tape."""

    tape: Tape
    id: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.id]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other: "Var") -> "Var":
        return add(self, other)

    def __sub__(self, other: "Var") -> "Var":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


def backward(tape: Tape, loss: Var | int, params: Sequence[Var | int]) -> dict[int, np.ndarray]:
    """Gradient of a scalar ``loss`` w.r.t. each node in ``params``.

    Returns a mapping from node id to a gradient array of the node's shape.
    Parameters the loss does not depend on receive zeros.
    """
    loss_id = loss.id if isinstance(loss, Var) else int(loss)
    param_ids = [p.id if isinstance(p, Var) else int(p) for p in params]
    n = len(tape.nodes)
    for pid in [loss_id, *param_ids]:
        if not 0 <= pid < n:
            raise TapeError(f"node id {pid} is not on the tape (size {n})")
    if tape.values[loss_id].size != 1:
        raise TapeError(f"loss must be scalar, got shape {tape.values[loss_id].shape}")

    grads: dict[int, np.ndarray] = {loss_id: np.ones_like(tape.values[loss_id])}
    keep = set(param_ids)
    stop = min(param_ids, default=loss_id)
    for idx in range(loss_id, stop - 1, -1):
        g = grads.get(idx)
        node = tape.nodes[idx]
        if g is None or node.vjp is None:
            continue
        for pid, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
        if idx not in keep:
            del grads[idx]
    return {
        pid: grads[pid] if pid in grads else np.zeros(tape.nodes[pid].shape, dtype=DTYPE)
        for pid in param_ids
    }


# --------------------------------------------------------------------------
# elementwise and structural ops

def _same_shape(op: str, a: Var, b: Var) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Var, b: Var) -> Var:
    _same_shape("add", a, b)
    return a.tape.record(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    _same_shape("sub", a, b)
    return a.tape.record(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Var, b: Var) -> Var:
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return a.tape.record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Var, c: float) -> Var:
    c = float(c)
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return a.tape.record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid_backward(out: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * out * (1.0 - out)


def sigmoid(a: Var) -> Var:
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return a.tape.record(out, (a,), lambda g: (_sigmoid_backward(out, g),))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape.record(out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    x = a.value
    return a.tape.record(np.log(x), (a,), lambda g: (g / x,))


def square(a: Var) -> Var:
    x = a.value
    return a.tape.record(x * x, (a,), lambda g: (2.0 * x * g,))


def clip(a: Var, lo: float, hi: float) -> Var:
    """Clamp to ``[lo, hi]``; gradient passes only where the value was inside."""
    x = a.value
    inside = (x >= lo) & (x <= hi)
    return a.tape.record(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def reshape(a: Var, shape: Sequence[int]) -> Var:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.value.size:
        raise ShapeError(f"reshape: cannot view {a.shape} ({a.value.size} elements) as {shape}")
    src = a.shape
    return a.tape.record(a.value.reshape(shape), (a,), lambda g: (g.reshape(src),))


def flatten(a: Var) -> Var:
    """Collapse all but the leading (batch) dimension."""
    return reshape(a, (a.shape[0], int(np.prod(a.shape[1:]))))


def sum(a: Var) -> Var:  # noqa: A001 - mirrors the reduce op name
    x = a.value
    # one reduction over the row-major ravel: order depends only on the shape
    out = np.array(np.add.reduce(x.ravel()), dtype=DTYPE)
    return a.tape.record(out, (a,), lambda g: (np.full(x.shape, float(g), dtype=DTYPE),))


def mean(a: Var) -> Var:
    n = a.value.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    x = a.value
    out = np.array(np.add.reduce(x.ravel()) / n, dtype=DTYPE)
    return a.tape.record(out, (a,), lambda g: (np.full(x.shape, float(g) / n, dtype=DTYPE),))


# --------------------------------------------------------------------------
# dense and convolution

def dense(x: Var, w: Var, b: Var) -> Var:
    """``x @ w + b`` for ``x`` (N, Din), ``w`` (Din, Dout), ``b`` (Dout,)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or b.value.ndim != 1:
        raise ShapeError(f"dense: expected 2-D x/w and 1-D b, got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: x has {x.shape[1]} features but weight expects {w.shape[0]}")
    if b.shape[0] != w.shape[1]:
        raise ShapeError(f"dense: bias length {b.shape[0]} != output width {w.shape[1]}")
    xv, wv = x.value, w.value
    out = xv @ wv + b.value

    def vjp(g):
        return g @ wv.T, xv.T @ g, g.sum(axis=0)

    return x.tape.record(out, (x, w, b), vjp)


def conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def convT_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + k


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    """(N, C, H, W) -> (N*Ho*Wo, C*kh*kw) patch matrix."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], kh: int, kw: int,
            stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back into an image."""
    n, c, h, w = shape
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=DTYPE)
    patches = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for u in range(kh):
        for v in range(kw):
            out[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += patches[:, :, u, v]
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(out)


def _check_stride_padding(op: str, stride: int, padding: int) -> None:
    if int(stride) != stride or stride < 1:
        raise ShapeError(f"{op}: stride must be a positive int, got {stride}")
    if int(padding) != padding or padding < 0:
        raise ShapeError(f"{op}: padding must be a non-negative int, got {padding}")


def _conv2d_shapes(x_shape, w_shape, b_shape, stride, padding):
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x_shape} and {w_shape}")
    n, cin, h, w = x_shape
    cout, wcin, kh, kw = w_shape
    if cin != wcin:
        raise ShapeError(f"conv2d: input has {cin} channels but weight expects {wcin}")
    if tuple(b_shape) != (cout,):
        raise ShapeError(f"conv2d: bias shape {tuple(b_shape)} != ({cout},)")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    return conv_out_size(h, kh, stride, padding), conv_out_size(w, kw, stride, padding)


def conv2d_raw(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1,
               padding: int = 0) -> np.ndarray:
    """Forward convolution on raw arrays (cross-correlation, zero padding)."""
    cout, cin, kh, kw = w.shape
    bias = np.zeros(cout, dtype=DTYPE) if b is None else b
    _check_stride_padding("conv2d", stride, padding)
    _conv2d_shapes(x.shape, w.shape, bias.shape, stride, padding)
    cols, ho, wo = _im2col(x, kh, kw, stride, padding)
    out = cols @ w.reshape(cout, -1).T + bias
    return np.ascontiguousarray(out.reshape(x.shape[0], ho, wo, cout).transpose(0, 3, 1, 2))


def conv_transpose2d_raw(y: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1,
                         padding: int = 0) -> np.ndarray:
    """Transposed convolution on raw arrays; ``w`` is (Cin, Cout, kh, kw)."""
    _check_stride_padding("conv_transpose2d", stride, padding)
    if y.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv_transpose2d: expected 4-D input and weight, got {y.shape} and {w.shape}")
    n, cin, h, wd = y.shape
    wcin, cout, kh, kw = w.shape
    if cin != wcin:
        raise ShapeError(f"conv_transpose2d: input has {cin} channels but weight expects {wcin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv_transpose2d: bias shape {b.shape} != ({cout},)")
    ho, wo = convT_out_size(h, kh, stride, padding), convT_out_size(wd, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv_transpose2d: output size {ho}x{wo} is not positive")
    cols = y.transpose(0, 2, 3, 1).reshape(n * h * wd, cin) @ w.reshape(cin, cout * kh * kw)
    out = _col2im(cols, (n, cout, ho, wo), kh, kw, stride, padding, h, wd)
    if b is not None:
        out += b[None, :, None, None]
    return out


def conv2d(x: Var, w: Var, b: Var, stride: int = 1, padding: int = 0) -> Var:
    """2-D cross-correlation, NCHW input, (Cout, Cin, kh, kw) weight."""
    _check_stride_padding("conv2d", stride, padding)
    xv, wv = x.value, w.value
    _conv2d_shapes(xv.shape, wv.shape, b.shape, stride, padding)
    cout, cin, kh, kw = wv.shape
    cols, ho, wo = _im2col(xv, kh, kw, stride, padding)
    wmat = wv.reshape(cout, -1)
    out = (cols @ wmat.T + b.value).reshape(xv.shape[0], ho, wo, cout).transpose(0, 3, 1, 2)

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        dw = (g2.T @ cols).reshape(wv.shape)
        dx = _col2im(g2 @ wmat, xv.shape, kh, kw, stride, padding, ho, wo)
        return dx, dw, g2.sum(axis=0)

    return x.tape.record(np.ascontiguousarray(out), (x, w, b), vjp)


def conv_transpose2d(x: Var, w: Var, b: Var, stride: int = 1, padding: int = 0) -> Var:
    """Adjoint of :func:`conv2d` w.r.t. its input, plus a per-channel bias."""
    xv, wv = x.value, w.value
    out = conv_transpose2d_raw(xv, wv, b.value, stride, padding)
    cin, cout, kh, kw = wv.shape
    n, _, h, wd = xv.shape

    def vjp(g):
        gcols, _, _ = _im2col(g, kh, kw, stride, padding)  # (n*h*wd, cout*kh*kw)
        wmat = wv.reshape(cin, -1)
        x2 = xv.transpose(0, 2, 3, 1).reshape(-1, cin)
        dx = (gcols @ wmat.T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2)
        dw = (x2.T @ gcols).reshape(wv.shape)
        return np.ascontiguousarray(dx), dw, g.sum(axis=(0, 2, 3))

    return x.tape.record(out, (x, w, b), vjp)
