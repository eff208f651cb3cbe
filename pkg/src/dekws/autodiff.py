"""Minimal reverse-mode autodiff: exactly the ops the backbone and losses need.

A Tensor wraps a numpy array and, when gradients are enabled, a backward
closure plus references to its parent tensors. Calling .backward() on a
scalar walks the graph in reverse topological order and accumulates .grad
on every tensor with requires_grad set.

Scope is deliberately narrow: 1-D convolution, batch norm, ReLU, global
average pooling, an affine head, the two losses, and Adam. No broadcasting
beyond what those ops need, no GPU, no fusion. Activations may be float32
or float64; losses and Adam moments always accumulate in float64.

A graph must stay on the thread that built it; the grad-enable flag is
thread-local so concurrent eval and training do not interfere.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidShapeError, TrainingFaultError

_FLOAT_DTYPES = (np.float32, np.float64)

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph construction (e.g. during evaluation)."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """n-dimensional float array, optionally part of a gradient graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        """Copy of the value with no graph attached."""
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def backward(self):
        """Backpropagate from a scalar, accumulating into .grad fields."""
        if self.data.size != 1:
            raise InvalidShapeError(
                f"backward() needs a scalar root, got shape {self.shape}"
            )
        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _topological_order(root: Tensor) -> list:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, idx = stack.pop()
        if idx == 0:
            if id(node) in seen:
                continue
            seen.add(id(node))
        if idx < len(node._parents):
            stack.append((node, idx + 1))
            stack.append((node._parents[idx], 0))
        else:
            order.append(node)
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    t.grad = g if t.grad is None else t.grad + g


def _node(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b) -> Tensor:
    """a + b for same-shape tensors, or tensor + python scalar."""
    if not isinstance(b, Tensor):
        const = float(b)
        out_data = a.data + np.asarray(const, dtype=a.data.dtype)

        def backward_const(g):
            _accumulate(a, g)

        return _node(out_data, (a,), backward_const)

    if a.shape != b.shape:
        raise InvalidShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    """a * b for same-shape tensors, or tensor * python scalar."""
    if not isinstance(b, Tensor):
        const = float(b)
        out_data = a.data * np.asarray(const, dtype=a.data.dtype)

        def backward_const(g):
            _accumulate(a, g * np.asarray(const, dtype=g.dtype))

        return _node(out_data, (a,), backward_const)

    if a.shape != b.shape:
        raise InvalidShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g):
        _accumulate(a, g * b_data)
        _accumulate(b, g * a_data)

    return _node(a_data * b_data, (a, b), backward)


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a float64 scalar."""
    out_data = np.asarray(x.data.sum(dtype=np.float64))

    def backward(g):
        _accumulate(x, np.full(x.shape, float(g), dtype=x.data.dtype))

    return _node(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient 0 at exactly 0."""
    mask = x.data > 0

    def backward(g):
        _accumulate(x, g * mask)

    return _node(np.where(mask, x.data, x.data.dtype.type(0)), (x,), backward)


# ---------------------------------------------------------------------------
# network layers


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation along the last axis.

    x is (N, C_in, L) or unbatched (C_in, L); weight is (C_out, C_in, K);
    bias is (C_out,). Output length is floor((L + 2*padding - K)/stride) + 1.
    """
    if stride < 1:
        raise InvalidInputError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise InvalidInputError(f"padding must be >= 0, got {padding}")
    unbatched = x.data.ndim == 2
    xd = x.data[None] if unbatched else x.data
    wd, bd = weight.data, bias.data
    if xd.ndim != 3 or wd.ndim != 3:
        raise InvalidShapeError(
            f"conv1d expects (N, C_in, L) and (C_out, C_in, K), got "
            f"{x.shape} and {weight.shape}"
        )
    n, c_in, length = xd.shape
    c_out, wc_in, k = wd.shape
    if wc_in != c_in:
        raise InvalidShapeError(
            f"conv1d channel mismatch: input has {c_in}, weight expects {wc_in}"
        )
    if bd.shape != (c_out,):
        raise InvalidShapeError(f"bias must be ({c_out},), got {bias.shape}")
    if k > length + 2 * padding:
        raise InvalidShapeError(
            f"kernel {k} exceeds padded length {length + 2 * padding}"
        )
    l_out = (length + 2 * padding - k) // stride + 1

    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    s0, s1, s2 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c_in, k, l_out), strides=(s0, s1, s2, stride * s2)
    )
    cols2 = cols.reshape(n, c_in * k, l_out)
    w2 = wd.reshape(c_out, c_in * k)
    out = np.matmul(w2, cols2) + bd[None, :, None]

    def backward(g):
        if unbatched:
            g = g[None]
        _accumulate(bias, g.sum(axis=(0, 2)))
        grad_w = np.tensordot(g, cols2, axes=([0, 2], [0, 2]))
        _accumulate(weight, grad_w.reshape(wd.shape))
        if x.requires_grad:
            grad_cols = np.matmul(w2.T, g).reshape(n, c_in, k, l_out)
            grad_xp = np.zeros((n, c_in, length + 2 * padding), dtype=g.dtype)
            for j in range(k):
                grad_xp[:, :, j : j + stride * l_out : stride] += grad_cols[:, :, j, :]
            grad_x = grad_xp[:, :, padding : padding + length]
            _accumulate(x, grad_x[0] if unbatched else grad_x)

    return _node(out[0] if unbatched else out, (x, weight, bias), backward)


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over the batch and time axes.

    x is (N, C, L). Train mode normalizes by the batch mean and biased batch
    variance and folds them into the float64 running stats as
    running <- (1 - momentum) * running + momentum * batch. Eval mode
    normalizes by the running stats. The running arrays are mutated in place
    and are not part of the gradient graph.
    """
    xd = x.data
    if xd.ndim != 3:
        raise InvalidShapeError(f"batchnorm1d expects (N, C, L), got {x.shape}")
    n, c, length = xd.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise InvalidShapeError(
            f"gamma/beta must be ({c},), got {gamma.shape} and {beta.shape}"
        )
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise InvalidShapeError(
            f"running stats must be ({c},), got {running_mean.shape} "
            f"and {running_var.shape}"
        )
    dt = xd.dtype
    count = n * length
    if training:
        if count < 2:
            raise InvalidInputError(
                f"train-mode batch norm needs N*L >= 2, got N={n}, L={length}"
            )
        mean = xd.mean(axis=(0, 2), dtype=np.float64)
        var = xd.var(axis=(0, 2), dtype=np.float64)
        running_mean[:] = (1.0 - momentum) * running_mean + momentum * mean
        running_var[:] = (1.0 - momentum) * running_var + momentum * var
    else:
        mean = running_mean
        var = running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = (xd - mean.astype(dt)[None, :, None]) * inv_std[None, :, None]
    out = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward(g):
        _accumulate(beta, g.sum(axis=(0, 2)))
        _accumulate(gamma, (g * xhat).sum(axis=(0, 2)))
        if not x.requires_grad:
            return
        scale = (gamma.data * inv_std)[None, :, None]
        if training:
            dxhat = g * gamma.data[None, :, None]
            mean_dxhat = dxhat.mean(axis=(0, 2), keepdims=True)
            mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2), keepdims=True)
            dx = inv_std[None, :, None] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
        else:
            dx = g * scale
        _accumulate(x, dx)

    return _node(out, (x, gamma, beta), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the temporal axis: (N, C, L) -> (N, C)."""
    xd = x.data
    if xd.ndim != 3:
        raise InvalidShapeError(f"global_avg_pool expects (N, C, L), got {x.shape}")
    length = xd.shape[2]
    if length == 0:
        raise InvalidShapeError("global_avg_pool needs L >= 1")

    def backward(g):
        _accumulate(x, np.repeat(g[:, :, None] / length, length, axis=2))

    return _node(xd.mean(axis=2), (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map: (N, D) @ (M, D).T + (M,) -> (N, M).

    The forward product uses einsum so each row's reduction order is fixed,
    making eval logits independent of batch composition.
    """
    xd, wd, bd = x.data, weight.data, bias.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[1]:
        raise InvalidShapeError(
            f"linear expects (N, D) and (M, D), got {x.shape} and {weight.shape}"
        )
    if bd.shape != (wd.shape[0],):
        raise InvalidShapeError(f"bias must be ({wd.shape[0]},), got {bias.shape}")

    def backward(g):
        _accumulate(bias, g.sum(axis=0))
        _accumulate(weight, g.T @ xd)
        _accumulate(x, g @ wd)

    return _node(np.einsum("nd,md->nm", xd, wd) + bd, (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# losses (float64 accumulation regardless of activation dtype)


def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    zd = logits.data
    if zd.ndim != 2:
        raise InvalidShapeError(f"logits must be (N, C), got {logits.shape}")
    n, c = zd.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise InvalidShapeError(f"labels must be ({n},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidInputError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InvalidInputError(
            f"labels must lie in [0, {c}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    z = zd.astype(np.float64)
    z_shift = z - z.max(axis=1, keepdims=True)
    exp_z = np.exp(z_shift)
    total = exp_z.sum(axis=1, keepdims=True)
    log_probs = z_shift - np.log(total)
    loss = -log_probs[np.arange(n), labels].mean()

    def backward(g):
        grad = exp_z / total
        grad[np.arange(n), labels] -= 1.0
        _accumulate(logits, grad * (float(g) / n))

    return _node(np.asarray(loss), (logits,), backward)


def mse_logit_loss(stored: Tensor, current: Tensor) -> Tensor:
    """Mean over all entries of the squared logit difference."""
    if stored.shape != current.shape:
        raise InvalidShapeError(
            f"logit shape mismatch: stored {stored.shape} vs current {current.shape}"
        )
    diff = current.data.astype(np.float64) - stored.data.astype(np.float64)
    loss = np.asarray((diff * diff).mean())
    scale = 2.0 / diff.size

    def backward(g):
        d = diff * (scale * float(g))
        _accumulate(current, d)
        _accumulate(stored, -d)

    return _node(loss, (stored, current), backward)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam moments and step counter; moments are always float64."""

    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params, lr: float = 0.1, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        t=0,
        m=[np.zeros(p.shape, dtype=np.float64) for p in params],
        v=[np.zeros(p.shape, dtype=np.float64) for p in params],
    )


def adam_step(params, grads, state: AdamState) -> None:
    """One bias-corrected Adam update, applied to params in place.

    Raises TrainingFaultError (before touching any state) if a gradient is
    non-finite.
    """
    if len(params) != len(state.m):
        raise InvalidShapeError(
            f"optimizer state holds {len(state.m)} slots, got {len(params)} params"
        )
    if len(grads) != len(params):
        raise InvalidShapeError(
            f"got {len(grads)} gradients for {len(params)} params"
        )
    for p, g in zip(params, grads):
        if g is None:
            raise InvalidInputError(f"missing gradient for parameter {p.name!r}")
        if g.shape != p.shape:
            raise InvalidShapeError(
                f"gradient shape {g.shape} does not match parameter "
                f"{p.name!r} shape {p.shape}"
            )
        if not np.isfinite(g).all():
            raise TrainingFaultError(
                f"non-finite gradient for parameter {p.name!r}; step aborted"
            )
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g64 = g.astype(np.float64)
        m *= state.beta1
        m += (1.0 - state.beta1) * g64
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g64)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= update.astype(p.data.dtype)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Per-tensor and overall max relative error vs central differences."""

    max_rel_err: float
    per_input: dict
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def grad_check(fn, inputs, tolerance: float = 1e-4, step: float = 1e-5,
               max_elements: int | None = None, rng=None) -> GradCheckReport:
    """Compare fn's analytic gradients to central finite differences.

    fn must take no arguments, read the given input tensors, and return a
    scalar Tensor; it is re-evaluated twice per checked element. Inputs
    should be float64 for the differences to resolve at the default step.
    The relative error per element is |analytic - numeric| /
    max(|analytic|, |numeric|, 1e-6). When max_elements is given, at most
    that many elements per tensor are checked (a random slice drawn from
    rng), which keeps whole-model checks affordable.
    """
    checked = [t for t in inputs if t.requires_grad]
    if not checked:
        raise InvalidInputError("grad_check needs at least one requires_grad input")
    zero_grads(checked)
    out = fn()
    if out.size != 1:
        raise InvalidShapeError(f"fn must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = []
    for t in checked:
        if t.grad is None:
            analytic.append(np.zeros(t.shape, dtype=np.float64))
        else:
            analytic.append(t.grad.astype(np.float64))

    per_input = {}
    overall = 0.0
    with no_grad():
        for idx, t in enumerate(checked):
            flat_indices = np.arange(t.size)
            if max_elements is not None and t.size > max_elements:
                if rng is None:
                    rng = np.random.default_rng(0)
                flat_indices = rng.choice(t.size, size=max_elements, replace=False)
                flat_indices.sort()
            a_flat = analytic[idx].reshape(-1)
            err = 0.0
            for j in flat_indices:
                mi = np.unravel_index(j, t.shape) if t.shape else ()
                orig = t.data[mi]
                t.data[mi] = orig + step
                f_plus = fn().item()
                t.data[mi] = orig - step
                f_minus = fn().item()
                t.data[mi] = orig
                numeric = (f_plus - f_minus) / (2.0 * step)
                denom = max(abs(a_flat[j]), abs(numeric), 1e-6)
                err = max(err, abs(a_flat[j] - numeric) / denom)
            key = t.name or f"input_{idx}"
            per_input[key] = err
            overall = max(overall, err)
    return GradCheckReport(max_rel_err=overall, per_input=per_input, tolerance=tolerance)
