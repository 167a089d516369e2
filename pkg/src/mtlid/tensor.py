"""Dense tensors with reverse-mode automatic differentiation and Adam.

float32 is the working precision. Construct tensors from float64 arrays
(or pass dtype=np.float64) for verification runs such as finite-difference
gradient checks, which are unreliable in 32-bit. Gradients accumulate into
``Tensor.grad`` across backward() calls until explicitly reset.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

# Additive score applied to masked keys before a plain softmax.
MASK_SCORE = -1e9


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DegenerateMaskError(ValueError):
    """Every position of a softmax row is masked out."""


class Tensor:
    """n-dimensional float array participating in a differentiation graph.

    The graph reachable through parents is acyclic by construction: each
    operation creates a fresh node pointing back at its inputs. Repeated
    backward() calls keep accumulating into ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.asarray(arr, dtype=dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(x) into x.grad for every reachable tensor.

        Requires a scalar value. Uses pass-local buffers for propagation so
        that calling backward() twice doubles leaf gradients instead of
        compounding stale interior state.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        topo = _toposort(self)
        local: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = local.get(id(node))
            if g is None or node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in local:
                    local[key] = local[key] + pg
                else:
                    local[key] = pg
        for node in topo:
            g = local.get(id(node))
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g

    def sum(self) -> "Tensor":
        return sum_all(self)

    def __add__(self, other) -> "Tensor":
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other) -> "Tensor":
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other) -> "Tensor":
        return sub(self, _as_tensor(other, self.dtype))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other) -> "Tensor":
        return self.__mul__(other)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def vjp(g):
        return (g * s,)

    return _make(data, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    Both operands must have rank >= 2 and agreeing inner dimensions.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from exc

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), vjp)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return _make(y, (a,), vjp)


_GELU_C0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_C1 = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh formulation."""
    x = a.data
    inner = _GELU_C0 * (x + _GELU_C1 * x * x * x)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def vjp(g):
        d_inner = _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return _make(y, (a,), vjp)


def softmax(a: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), vjp)


def softmax_masked(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to unmasked positions.

    Masked positions come out exactly 0; unmasked outputs are positive and
    sum to 1 per row. Max-subtraction keeps the exponentials in range.
    Raises DegenerateMaskError when a row has no unmasked position.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if not m.any(axis=-1).all():
        raise DegenerateMaskError("softmax_masked: a row has every position masked")
    neg_inf = np.where(m, scores.data, -np.inf)
    mx = neg_inf.max(axis=-1, keepdims=True)
    shifted = np.where(m, scores.data - mx, 0.0)
    e = np.where(m, np.exp(shifted), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (scores,), vjp)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis; gradients split back accordingly."""
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last: leading dimensions differ, {a.shape} vs {b.shape}")
    data = np.concatenate([a.data, b.data], axis=-1)
    p = a.shape[-1]

    def vjp(g):
        return g[..., :p], g[..., p:]

    return _make(data, (a, b), vjp)


def select(a: Tensor, index: int, axis: int) -> Tensor:
    """Pick one slice at a static index, dropping that axis."""
    data = np.take(a.data, index, axis=axis)
    slicer = [slice(None)] * a.ndim
    slicer[axis] = index
    slicer_t = tuple(slicer)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[slicer_t] = g
        return (full,)

    return _make(data, (a,), vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    data = a.data.reshape(tuple(shape))

    def vjp(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), vjp)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _make(data, (a,), vjp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup into an embedding table; gradients scatter-add by id."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(
            f"embedding: id out of range for table with {table.shape[0]} rows"
        )
    data = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(data, (table,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * gain.data + bias.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * xhat).sum(axis=lead) if lead else g * xhat
        g_bias = g.sum(axis=lead) if lead else g
        gt = g * gain.data
        gx = inv * (
            gt
            - gt.mean(axis=-1, keepdims=True)
            - xhat * (gt * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, g_gain, g_bias

    return _make(y, (x, gain, bias), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the survivor mask comes from the caller's rng."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    m = keep / (1.0 - rate)
    data = x.data * m

    def vjp(g):
        return (g * m,)

    return _make(data, (x,), vjp)


def sum_all(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def vjp(g):
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=True),)

    return _make(data, (a,), vjp)


def cross_entropy_from_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax.

    Computed in log space via log-sum-exp so that large-magnitude logits
    neither overflow nor lose the correct limit.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_from_logits expects [batch, classes], got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise ValueError(f"label {int(bad)} out of range for {c} classes")
    mx = logits.data.max(axis=-1, keepdims=True)
    lse = mx + np.log(np.exp(logits.data - mx).sum(axis=-1, keepdims=True))
    picked = logits.data[np.arange(n), labels]
    data = np.asarray((lse[:, 0] - picked).mean(), dtype=logits.data.dtype)

    def vjp(g):
        p = np.exp(logits.data - lse)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _make(data, (logits,), vjp)


# ---------------------------------------------------------------------------
# parameter initialization and optimization
# ---------------------------------------------------------------------------


def name_seeded_rng(global_seed: int, name: str) -> np.random.Generator:
    """Deterministic per-name generator, stable across platforms and runs."""
    digest = hashlib.sha256(f"{global_seed}:{name}".encode()).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


def trunc_normal(
    shape: Sequence[int],
    rng: np.random.Generator,
    sigma: float = 0.02,
    dtype=DEFAULT_DTYPE,
) -> np.ndarray:
    """Normal(0, sigma) with entries redrawn until all lie within +-2 sigma."""
    out = rng.normal(0.0, sigma, size=tuple(shape))
    bad = np.abs(out) > 2.0 * sigma
    while bad.any():
        out[bad] = rng.normal(0.0, sigma, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * sigma
    return out.astype(dtype)


def init_parameters(
    specs: Iterable[tuple[str, tuple[int, ...], str]],
    global_seed: int,
    dtype=DEFAULT_DTYPE,
) -> dict[str, Tensor]:
    """Materialize named parameters from (name, shape, kind) specs.

    kind is one of: "normal" (name-seeded truncated normal), "zeros",
    "ones", or "normal_rows" (each leading-axis row drawn from its own
    name-seeded stream, so shared rows stay identical when the leading
    dimension grows).
    """
    params: dict[str, Tensor] = {}
    for name, shape, kind in specs:
        if kind == "normal":
            arr = trunc_normal(shape, name_seeded_rng(global_seed, name), dtype=dtype)
        elif kind == "normal_rows":
            rows = [
                trunc_normal(shape[1:], name_seeded_rng(global_seed, f"{name}.row{r}"), dtype=dtype)
                for r in range(shape[0])
            ]
            arr = np.stack(rows) if rows else np.zeros(shape, dtype=dtype)
        elif kind == "zeros":
            arr = np.zeros(shape, dtype=dtype)
        elif kind == "ones":
            arr = np.ones(shape, dtype=dtype)
        else:
            raise ValueError(f"unknown init kind {kind!r} for parameter {name!r}")
        params[name] = Tensor(arr, requires_grad=True)
    return params


def zero_grads(params: Mapping[str, Tensor] | Iterable[Tensor]) -> None:
    values = params.values() if isinstance(params, Mapping) else params
    for p in values:
        p.grad = None


class Adam:
    """Bias-corrected Adam over a dict of named parameters, updated in place."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.step_count = 0

    def step(self) -> None:
        """Apply one update; every registered parameter must hold a gradient."""
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)

    def zero_grad(self) -> None:
        zero_grads(self.params)
