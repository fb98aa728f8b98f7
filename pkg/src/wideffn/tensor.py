"""Float32 tensors with reverse-mode gradients on a linear tape.

Every op records (output, inputs, backward_fn) on the active tape in call
order; ComputeTape.backward replays the records in reverse and accumulates
gradients by summation. Parameter tying therefore needs no special casing:
a Tensor object used at several call sites receives the sum of the
gradients from all of them.

All payloads are numpy float32. Finite-difference arithmetic inside
grad_check runs in float64 on top of float32 function values.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import NumericError, ShapeError

MASK_FILL_VALUE = np.float32(-1e9)


class Tensor:
    """A float32 array (rank 0 to 3) plus an optional gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim > 3:
            raise ShapeError(f"rank {arr.ndim} not supported, shape {arr.shape}")
        self.data = arr
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class ComputeTape:
    """Append-only record of op applications, replayed in reverse."""

    def __init__(self):
        self.nodes = []

    def record(self, out, inputs, backward_fn):
        self.nodes.append((out, inputs, backward_fn))

    def backward(self, loss):
        """Seed d(loss)/d(loss) = 1 and accumulate grads into every input."""
        if loss.data.shape != ():
            raise ShapeError(f"backward needs a scalar, got shape {loss.data.shape}")
        if not np.isfinite(loss.data):
            raise NumericError(f"loss is not finite: {loss.data!r}")
        loss.grad = np.ones((), dtype=np.float32)
        for out, inputs, backward_fn in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            grads = backward_fn(g)
            for tensor, piece in zip(inputs, grads):
                if piece is None:
                    continue
                if tensor.grad is None:
                    tensor.grad = piece.astype(np.float32, copy=True)
                else:
                    tensor.grad = tensor.grad + piece.astype(np.float32, copy=False)


_TAPE_STACK: list[ComputeTape] = []


@contextlib.contextmanager
def recording(tape: ComputeTape):
    """Route every op built inside the block onto `tape`."""
    _TAPE_STACK.append(tape)
    try:
        yield tape
    finally:
        _TAPE_STACK.pop()


def _emit(out, inputs, backward_fn):
    if _TAPE_STACK:
        _TAPE_STACK[-1].record(out, inputs, backward_fn)
    return out


def _require_rank(t: Tensor, rank: int, op: str):
    if t.data.ndim != rank:
        raise ShapeError(f"{op}: expected rank {rank}, got shape {t.data.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_rank(a, 2, "matmul")
    _require_rank(b, 2, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape} do not agree")
    out = Tensor(a.data @ b.data)

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _emit(out, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data + b.data)

    def backward_fn(g):
        return g, g

    return _emit(out, (a, b), backward_fn)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a rank-1 bias to every row of a rank-2 input."""
    _require_rank(x, 2, "add_bias")
    _require_rank(bias, 1, "add_bias")
    if x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_bias: {x.shape} vs bias {bias.shape}")
    out = Tensor(x.data + bias.data)

    def backward_fn(g):
        return g, g.sum(axis=0)

    return _emit(out, (x, bias), backward_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    f = np.float32(factor)
    out = Tensor(x.data * f)

    def backward_fn(g):
        return (g * f,)

    return _emit(out, (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, np.float32(0.0)))

    def backward_fn(g):
        return (g * (x.data > 0),)

    return _emit(out, (x,), backward_fn)


def transpose(x: Tensor) -> Tensor:
    _require_rank(x, 2, "transpose")
    out = Tensor(x.data.T.copy())

    def backward_fn(g):
        return (g.T,)

    return _emit(out, (x,), backward_fn)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    _require_rank(x, 2, "slice_cols")
    if not (0 <= lo < hi <= x.shape[1]):
        raise ShapeError(f"slice_cols: [{lo}:{hi}] out of range for {x.shape}")
    out = Tensor(x.data[:, lo:hi].copy())

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[:, lo:hi] = g
        return (full,)

    return _emit(out, (x,), backward_fn)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols: empty input")
    for p in parts:
        _require_rank(p, 2, "concat_cols")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeError("concat_cols: row counts differ")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    widths = [p.shape[1] for p in parts]

    def backward_fn(g):
        grads = []
        at = 0
        for w in widths:
            grads.append(g[:, at : at + w])
            at += w
        return tuple(grads)

    return _emit(out, tuple(parts), backward_fn)


def mask_fill(x: Tensor, keep: np.ndarray, fill=MASK_FILL_VALUE) -> Tensor:
    """Replace entries where `keep` is False with `fill` (no grad flows there)."""
    _require_rank(x, 2, "mask_fill")
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != x.shape:
        raise ShapeError(f"mask_fill: mask {keep.shape} vs input {x.shape}")
    out = Tensor(np.where(keep, x.data, np.float32(fill)))

    def backward_fn(g):
        return (g * keep,)

    return _emit(out, (x,), backward_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability."""
    _require_rank(x, 2, "softmax_rows")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)

    def backward_fn(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return _emit(out, (x,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then scale and shift."""
    _require_rank(x, 2, "layer_norm")
    _require_rank(gain, 1, "layer_norm")
    _require_rank(bias, 1, "layer_norm")
    d = x.shape[1]
    if gain.shape[0] != d or bias.shape[0] != d:
        raise ShapeError(f"layer_norm: input {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward_fn(g):
        gh = g * gain.data
        dx = inv * (gh - gh.mean(axis=1, keepdims=True) - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _emit(out, (x, gain, bias), backward_fn)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise NumericError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(np.float32) / np.float32(1.0 - p)
    out = Tensor(x.data * keep)

    def backward_fn(g):
        return (g * keep,)

    return _emit(out, (x,), backward_fn)


def sum_all(x: Tensor) -> Tensor:
    """Sum every entry down to a rank-0 scalar."""
    out = Tensor(x.data.sum())

    def backward_fn(g):
        return (np.broadcast_to(g, x.data.shape),)

    return _emit(out, (x,), backward_fn)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of `table`; the backward scatters into a dense grad."""
    _require_rank(table, 2, "embedding_lookup")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding_lookup: ids must be rank 1, got {ids.shape}")
    n = table.shape[0]
    bad = (ids < 0) | (ids >= n)
    if bad.any():
        raise IndexError(f"token id {int(ids[bad][0])} outside embedding table of size {n}")
    out = Tensor(table.data[ids])

    def backward_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _emit(out, (table,), backward_fn)


def cross_entropy(logits: Tensor, targets, ignore_index: int = -1) -> Tensor:
    """Mean negative log-softmax over rows whose target != ignore_index.

    Fused log-softmax keeps the backward to the standard (p - onehot)/n form.
    """
    _require_rank(logits, 2, "cross_entropy")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    n_classes = logits.shape[1]
    keep = targets != ignore_index
    kept_targets = targets[keep]
    if kept_targets.size and ((kept_targets < 0) | (kept_targets >= n_classes)).any():
        bad = kept_targets[(kept_targets < 0) | (kept_targets >= n_classes)][0]
        raise IndexError(f"target id {int(bad)} outside vocabulary of size {n_classes}")
    n_kept = int(keep.sum())
    if n_kept == 0:
        out = Tensor(np.float32(0.0))

        def backward_zero(g):
            return (np.zeros_like(logits.data),)

        return _emit(out, (logits,), backward_zero)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    rows = np.nonzero(keep)[0]
    loss = -logp[rows, targets[rows]].sum() / np.float32(n_kept)
    out = Tensor(loss)

    def backward_fn(g):
        p = np.exp(logp)
        p[~keep] = 0.0
        p[rows, targets[rows]] -= 1.0
        return (g * p / np.float32(n_kept),)

    return _emit(out, (logits,), backward_fn)


def grad_check(f, params, eps: float = 1e-3, coords_per_tensor: int = 2, seed: int = 0) -> float:
    """Compare tape gradients of f(params) against finite differences.

    The loss surface here is only piecewise smooth (relu) and evaluated in
    float32, so no single step size works for every coordinate: a large
    step can straddle a kink, a small one drowns in roundoff. Each probed
    coordinate therefore takes central differences at eps, eps/2, eps/4,
    and eps/8 plus a Richardson extrapolation of the first pair, and is
    scored by the best-agreeing estimate. A wrong gradient disagrees with
    all of them; a correct one matches wherever the local regime is clean.
    Returns the worst relative error max |analytic - fd| / max(1, |fd|)
    over a deterministic coordinate sample. f must be deterministic and
    read parameter values at call time.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    tape = ComputeTape()
    with recording(tape):
        loss = f(params)
    if loss.data.shape != ():
        raise ShapeError(f"grad_check: f must return a scalar, got {loss.data.shape}")
    if not np.isfinite(loss.data):
        raise NumericError("grad_check: loss is not finite")
    tape.backward(loss)
    analytic = [None if p.grad is None else np.asarray(p.grad, dtype=np.float64) for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ga in zip(params, analytic):
        n = p.data.size
        if n == 0:
            continue
        if n <= coords_per_tensor:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=coords_per_tensor, replace=False)
        flat = p.data.reshape(-1)
        ga_flat = None if ga is None else ga.reshape(-1)
        for i in coords:
            orig = flat[i]

            def central(step: float) -> float:
                hi = np.float32(float(orig) + step)
                lo = np.float32(float(orig) - step)
                h = float(hi) - float(lo)
                if h == 0.0:
                    raise NumericError(f"grad_check: step {step} vanishes at value {orig}")
                flat[i] = hi
                f_hi = float(f(params).data)
                flat[i] = lo
                f_lo = float(f(params).data)
                flat[i] = orig
                return (f_hi - f_lo) / h

            estimates = [central(eps * s) for s in (1.0, 0.5, 0.25, 0.125)]
            estimates.append((4.0 * estimates[1] - estimates[0]) / 3.0)
            a = 0.0 if ga_flat is None else float(ga_flat[i])
            err = min(abs(a - fd) / max(1.0, abs(fd)) for fd in estimates)
            if not math.isfinite(err):
                raise NumericError(f"grad_check: non-finite difference at coord {i}")
            worst = max(worst, err)
    return worst
