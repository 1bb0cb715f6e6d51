"""Minimal reverse-mode differentiation over float64 numpy arrays.

A :class:`Tape` is an append-only list of nodes; every op that sees a
taped :class:`Var` computes its result eagerly and appends one node whose
``back`` closure propagates gradients. ``backward`` replays the nodes in
strict reverse append order, so gradient accumulation order (and hence
the bits of every gradient) is fixed for a given program.

Ops accept plain ndarrays or python scalars anywhere a Var is allowed;
those operands are constants and receive no gradient. A Var built with
``tape=None`` behaves the same way, which lets inference share the exact
code paths of training without recording anything.

Only one tape may appear among the operands of a single op; tapes are
meant to live for one training step and be discarded.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

_SQUEEZE_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))  # row-major 2x2 order


class Tape:
    """Append-only record of executed ops, replayed in reverse by backward."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []


class _Node:
    __slots__ = ("op", "back", "inputs")

    def __init__(self, op, back, inputs):
        self.op = op
        self.back = back
        self.inputs = inputs


class Var:
    """Array value tracked (optionally) on a tape.

    ``grad`` is a same-shaped float64 buffer when the Var belongs to a
    tape, else None. Treat ``data`` as immutable while the tape is alive.
    """

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.grad = np.zeros_like(self.data) if tape is not None else None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Var(shape={self.data.shape}, taped={self.tape is not None})"


def lift(x, tape=None) -> Var:
    """Wrap an array (or pass a Var through) onto ``tape``."""
    if isinstance(x, Var):
        return x
    return Var(x, tape)


def _data(x):
    return x.data if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var) and x.tape is not None:
            if tape is not None and tape is not x.tape:
                raise ShapeError("operands belong to different tapes")
            tape = x.tape
    return tape


def _record(tape, op, out_data, back, inputs):
    out = Var(out_data, tape)
    if tape is not None:
        taped = tuple(x for x in inputs if isinstance(x, Var) and x.tape is tape)
        tape.nodes.append(_Node(op, lambda: back(out.grad), taped))
    return out


def _accum(x, g):
    if isinstance(x, Var) and x.grad is not None:
        x.grad += g


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Var:
    da, db = _data(a), _data(b)
    tape = _tape_of(a, b)
    out = da + db

    def back(g):
        _accum(a, _unbroadcast(g, da.shape))
        _accum(b, _unbroadcast(g, db.shape))

    return _record(tape, "add", out, back, (a, b))


def sub(a, b) -> Var:
    da, db = _data(a), _data(b)
    tape = _tape_of(a, b)
    out = da - db

    def back(g):
        _accum(a, _unbroadcast(g, da.shape))
        _accum(b, _unbroadcast(-g, db.shape))

    return _record(tape, "sub", out, back, (a, b))


def mul(a, b) -> Var:
    da, db = _data(a), _data(b)
    tape = _tape_of(a, b)
    out = da * db

    def back(g):
        _accum(a, _unbroadcast(g * db, da.shape))
        _accum(b, _unbroadcast(g * da, db.shape))

    return _record(tape, "mul", out, back, (a, b))


def div(a, b) -> Var:
    da, db = _data(a), _data(b)
    tape = _tape_of(a, b)
    out = da / db

    def back(g):
        _accum(a, _unbroadcast(g / db, da.shape))
        _accum(b, _unbroadcast(-g * da / (db * db), db.shape))

    return _record(tape, "div", out, back, (a, b))


def neg(a) -> Var:
    da = _data(a)

    def back(g):
        _accum(a, -g)

    return _record(_tape_of(a), "neg", -da, back, (a,))


def reshape(a, shape) -> Var:
    da = _data(a)
    old = da.shape

    def back(g):
        _accum(a, g.reshape(old))

    return _record(_tape_of(a), "reshape", da.reshape(shape), back, (a,))


def relu(a) -> Var:
    da = _data(a)
    mask = da > 0.0  # subgradient at 0 is 0

    def back(g):
        _accum(a, g * mask)

    return _record(_tape_of(a), "relu", da * mask, back, (a,))


def maximum_scalar(a, floor: float) -> Var:
    """Elementwise max(a, floor); gradient is 0 on the clamped side."""
    da = _data(a)
    mask = da > floor

    def back(g):
        _accum(a, g * mask)

    return _record(
        _tape_of(a), "maximum_scalar", np.maximum(da, floor), back, (a,)
    )


def sqrt(a) -> Var:
    da = _data(a)
    root = np.sqrt(da)

    def back(g):
        # Subgradient 0 where the root is 0 (keeps clamped stats NaN-free).
        safe = np.where(root > 0.0, root, 1.0)
        _accum(a, np.where(root > 0.0, g / (2.0 * safe), 0.0))

    return _record(_tape_of(a), "sqrt", root, back, (a,))


# ---------------------------------------------------------------------------
# reductions


def sum_all(a) -> Var:
    da = _data(a)

    def back(g):
        _accum(a, np.full(da.shape, float(g)))

    return _record(_tape_of(a), "sum_all", np.asarray(da.sum()), back, (a,))


def mean_all(a) -> Var:
    da = _data(a)
    n = da.size

    def back(g):
        _accum(a, np.full(da.shape, float(g) / n))

    return _record(_tape_of(a), "mean_all", np.asarray(da.mean()), back, (a,))


def channel_mean(x) -> Var:
    """Per-channel mean over batch and spatial axes: (B,C,H,W) -> (C,)."""
    dx = _data(x)
    if dx.ndim != 4:
        raise ShapeError(f"channel_mean expects rank-4 input, got {dx.shape}")
    n = dx.shape[0] * dx.shape[2] * dx.shape[3]

    def back(g):
        _accum(x, np.broadcast_to(g[np.newaxis, :, np.newaxis, np.newaxis] / n, dx.shape))

    return _record(_tape_of(x), "channel_mean", dx.mean(axis=(0, 2, 3)), back, (x,))


def per_channel(v) -> Var:
    """Reshape a length-C vector to (1,C,1,1) for broadcasting."""
    dv = _data(v)
    return reshape(v, (1, dv.shape[0], 1, 1))


# ---------------------------------------------------------------------------
# structured ops


def conv2d(x, k, stride: int = 1, pad: int = 0) -> Var:
    """2-d convolution (cross-correlation), zero padding, square stride.

    ``x`` is (B,I,H,W), ``k`` is (O,I,kh,kw). Bias is not fused; add one
    with ``add(out, per_channel(b))``.
    """
    dx, dk = _data(x), _data(k)
    if dx.ndim != 4 or dk.ndim != 4:
        raise ShapeError("conv2d expects rank-4 input and kernel")
    if dx.shape[1] != dk.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {dx.shape[1]}, kernel {dk.shape[1]}"
        )
    kh, kw = dk.shape[2], dk.shape[3]
    xp = np.pad(dx, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else dx
    h_out = (xp.shape[2] - kh) // stride + 1
    w_out = (xp.shape[3] - kw) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ShapeError("conv2d kernel larger than padded input")
    out = np.zeros((dx.shape[0], dk.shape[0], h_out, w_out))
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, :, u : u + stride * h_out : stride, v : v + stride * w_out : stride]
            out += np.einsum("bihw,oi->bohw", xs, dk[:, :, u, v])

    def back(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(dk) if isinstance(k, Var) and k.grad is not None else None
        for u in range(kh):
            for v in range(kw):
                sl = (
                    slice(None),
                    slice(None),
                    slice(u, u + stride * h_out, stride),
                    slice(v, v + stride * w_out, stride),
                )
                gxp[sl] += np.einsum("bohw,oi->bihw", g, dk[:, :, u, v])
                if gk is not None:
                    gk[:, :, u, v] = np.einsum("bohw,bihw->oi", g, xp[sl])
        if pad:
            gxp = gxp[:, :, pad:-pad, pad:-pad]
        _accum(x, gxp)
        if gk is not None:
            k.grad += gk

    return _record(_tape_of(x, k), "conv2d", out, back, (x, k))


def channel_mix(x, w) -> Var:
    """Per-position channel mixing y = W x (a 1x1 convolution by matrix W)."""
    dx, dw = _data(x), _data(w)
    if dx.shape[1] != dw.shape[1]:
        raise ShapeError(f"channel_mix: {dw.shape} cannot act on {dx.shape}")
    out = np.einsum("bihw,oi->bohw", dx, dw)

    def back(g):
        _accum(x, np.einsum("bohw,oi->bihw", g, dw))
        if isinstance(w, Var) and w.grad is not None:
            w.grad += np.einsum("bohw,bihw->oi", g, dx)

    return _record(_tape_of(x, w), "channel_mix", out, back, (x, w))


def channel_mix_inv(x, w, w_inv: np.ndarray) -> Var:
    """Per-position mixing by the inverse matrix, y = W^{-1} x.

    ``w_inv`` is the precomputed inverse (callers own the inversion so its
    failure mode stays theirs). Gradient w.r.t. W uses
    d(W^{-1}) = -W^{-1} dW W^{-1}.
    """
    dx = _data(x)
    m = np.asarray(w_inv, dtype=np.float64)
    out = np.einsum("bihw,oi->bohw", dx, m)

    def back(g):
        _accum(x, np.einsum("bohw,oi->bihw", g, m))
        if isinstance(w, Var) and w.grad is not None:
            g_m = np.einsum("bohw,bihw->oi", g, dx)
            w.grad += -(m.T @ g_m @ m.T)

    return _record(_tape_of(x, w), "channel_mix_inv", out, back, (x, w))


def squeeze2(x) -> Var:
    """Trade 2x2 spatial blocks for channels: (B,C,H,W) -> (B,4C,H/2,W/2).

    Output channel 4*c + k holds input channel c at spatial offset k, with
    offsets enumerated row-major: top-left, top-right, bottom-left,
    bottom-right.
    """
    dx = _data(x)
    b, c, h, w = dx.shape
    if h % 2 or w % 2:
        raise ShapeError(f"squeeze needs even spatial extents, got {h}x{w}")
    out = (
        dx.reshape(b, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(b, 4 * c, h // 2, w // 2)
    )

    def back(g):
        _accum(x, _unsqueeze_data(g))

    return _record(_tape_of(x), "squeeze2", np.ascontiguousarray(out), back, (x,))


def _unsqueeze_data(z):
    b, c4, h2, w2 = z.shape
    c = c4 // 4
    return (
        z.reshape(b, c, 2, 2, h2, w2)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(b, c, 2 * h2, 2 * w2)
    )


def unsqueeze2(x) -> Var:
    """Exact inverse of :func:`squeeze2`."""
    dx = _data(x)
    if dx.shape[1] % 4:
        raise ShapeError(f"unsqueeze needs channels divisible by 4, got {dx.shape[1]}")

    def back(g):
        b, c, h, w = g.shape
        _accum(
            x,
            g.reshape(b, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(b, 4 * c, h // 2, w // 2),
        )

    out = _unsqueeze_data(dx)
    return _record(_tape_of(x), "unsqueeze2", np.ascontiguousarray(out), back, (x,))


def split_half(x) -> tuple[Var, Var]:
    """Split channels into two equal halves."""
    dx = _data(x)
    c = dx.shape[1]
    if c % 2:
        raise ShapeError(f"split_half needs an even channel count, got {c}")
    half = c // 2
    tape = _tape_of(x)
    a = Var(np.ascontiguousarray(dx[:, :half]), tape)
    b = Var(np.ascontiguousarray(dx[:, half:]), tape)
    if tape is not None:

        def back(_g=None):
            if isinstance(x, Var) and x.grad is not None:
                x.grad[:, :half] += a.grad
                x.grad[:, half:] += b.grad

        taped = (x,) if isinstance(x, Var) and x.tape is tape else ()
        tape.nodes.append(_Node("split_half", back, taped))
    return a, b


def concat_half(a, b) -> Var:
    """Concatenate two equal-channel tensors along the channel axis."""
    da, db = _data(a), _data(b)
    if da.shape[0] != db.shape[0] or da.shape[2:] != db.shape[2:]:
        raise ShapeError(f"concat_half shape mismatch: {da.shape} vs {db.shape}")
    half = da.shape[1]

    def back(g):
        _accum(a, g[:, :half])
        _accum(b, g[:, half:])

    out = np.concatenate([da, db], axis=1)
    return _record(_tape_of(a, b), "concat_half", out, back, (a, b))


# ---------------------------------------------------------------------------
# backward sweep and gradient checking


def backward(loss: Var, check_finite: bool = True) -> None:
    """Propagate d(loss)/d(everything) back through the loss's tape.

    The loss must be a taped scalar. With ``check_finite`` each node's
    freshly written input gradients are validated and a NumericError
    naming the op is raised on the first NaN/Inf.
    """
    if not isinstance(loss, Var) or loss.tape is None:
        raise ValueError("backward requires a Var recorded on a tape")
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar, got shape {loss.data.shape}")
    loss.grad[...] = 1.0
    for node in reversed(loss.tape.nodes):
        node.back()
        if check_finite:
            for var in node.inputs:
                if var.grad is not None and not np.isfinite(var.grad).all():
                    raise NumericError(f"non-finite gradient produced by op '{node.op}'")


def grad_check(params, build_loss, step: float = 1e-5, tol: float = 1e-4):
    """Compare analytic gradients against central finite differences.

    ``params`` maps names to float64 arrays; ``build_loss`` maps a
    same-keyed dict of Vars (or raw arrays for the perturbed evaluations)
    to a scalar Var. Per parameter the reported error is
    ``max|analytic - numeric|`` normalized by the largest gradient
    magnitude seen across *all* parameters, so parameters whose true
    gradient is exactly zero are judged against the overall gradient
    scale rather than against finite-difference noise.

    Returns a :class:`GradCheckReport`; ``report.passed`` is True when
    every parameter's relative error is below ``tol``.
    """
    tape = Tape()
    pvars = {name: Var(arr, tape) for name, arr in params.items()}
    loss = build_loss(pvars)
    backward(loss)
    analytic = {name: pvars[name].grad.copy() for name in params}

    def eval_loss(arrays) -> float:
        out = build_loss({n: Var(a) for n, a in arrays.items()})
        return float(_data(out))

    numeric = {}
    for name, arr in params.items():
        num = np.zeros_like(arr)
        for idx in range(arr.size):
            orig = arr.flat[idx]
            arr.flat[idx] = orig + step
            up = eval_loss(params)
            arr.flat[idx] = orig - step
            down = eval_loss(params)
            arr.flat[idx] = orig
            num.flat[idx] = (up - down) / (2.0 * step)
        numeric[name] = num
    scale = max(
        max((float(np.max(np.abs(g), initial=0.0)) for g in analytic.values()), default=0.0),
        max((float(np.max(np.abs(g), initial=0.0)) for g in numeric.values()), default=0.0),
        1e-12,
    )
    errors = {
        name: float(np.max(np.abs(analytic[name] - numeric[name]), initial=0.0)) / scale
        for name in params
    }
    return GradCheckReport(per_param=errors, tol=tol)


class GradCheckReport:
    """Per-parameter relative errors from :func:`grad_check`."""

    def __init__(self, per_param: dict[str, float], tol: float):
        self.per_param = per_param
        self.tol = tol

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(err < self.tol for err in self.per_param.values())

    @property
    def failures(self) -> dict[str, float]:
        return {n: e for n, e in self.per_param.items() if e >= self.tol}

    def __repr__(self):
        return (
            f"GradCheckReport(max_rel_error={self.max_rel_error:.3e}, "
            f"passed={self.passed})"
        )
