"""Dense float64 tensors with reverse-mode automatic differentiation.

A small define-by-run engine: each operation records its input tensors and
a closure that maps the output gradient to input gradients. ``backward()``
on a scalar walks the recorded graph once in reverse topological order and
accumulates gradients additively, so a tensor used along several paths
receives the sum of all path contributions.

Deliberate constraints, chosen for debuggability at desk scale:

* float64 everywhere; gradient checking needs the headroom
* no implicit broadcasting except scalar-with-tensor
* any op that produces a non-finite value raises :class:`NonFiniteError`
  naming the op, so adversarial-training blowups surface immediately
* ``grad_reversal`` is the identity forward and multiplies the upstream
  gradient by ``-coeff`` backward; it is what lets one descent step drive
  both sides of a minimax game
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray

__all__ = [
    "Tensor",
    "DimensionError",
    "GraphError",
    "NonFiniteError",
    "no_grad",
    "grad_enabled",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "linear",
    "elementwise",
    "activation",
    "relu",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "clamp_min",
    "log_softmax",
    "log_sigmoid",
    "outer_product",
    "row_outer",
    "gather_rows",
    "grad_reversal",
    "detach",
    "GradCheckReport",
    "finite_diff_check",
]


class DimensionError(ValueError):
    """Operand shapes do not satisfy an op's contract."""


class GraphError(ValueError):
    """Computation-graph misuse, e.g. backward on a non-scalar."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf. ``op`` names the producer."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite value produced by op '{op}'"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Suspend graph recording; ops inside run as plain array math."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


# Backward closures receive the output gradient and return one gradient
# array (or None) per parent, in parent order.
BackwardFn = Callable[[Array], tuple]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor", "non-finite input data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Populate ``grad`` on every reachable requires_grad tensor.

        Requires a scalar (single-element) tensor. Each graph node is
        visited exactly once; gradients for tensors reached through
        several paths are summed.
        """
        if self.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        pending: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            # accumulation stays out-of-place: closure outputs may alias
            # other tensors' pending gradients
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # Operator sugar; scalars are the only permitted implicit broadcast.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return _sum(self)

    def mean(self):
        return _mean(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: Array, op: str, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    # A sum of finite float64 values can only be non-finite if an operand
    # was, or on astronomic overflow; either way the op must be flagged.
    if not math.isfinite(float(data.sum())):
        raise NonFiniteError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _is_scalar_operand(x) -> bool:
    return isinstance(x, (int, float)) or (isinstance(x, Tensor) and x.data.ndim == 0)


def _check_elementwise(a: Tensor, b, op: str) -> None:
    if isinstance(b, Tensor) and not _is_scalar_operand(b) and not _is_scalar_operand(a):
        if a.shape != b.shape:
            raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _scalar_grad(g: Array) -> Array:
    # gradient of a 0-d tensor broadcast against an array operand
    return np.asarray(g.sum())


def add(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        return _result(a.data + b, "add", (a,), lambda g: (g,))
    b = as_tensor(b)
    _check_elementwise(a, b, "add")
    ga = (lambda g: _scalar_grad(g)) if a.data.ndim == 0 and b.data.ndim != 0 else (lambda g: g)
    gb = (lambda g: _scalar_grad(g)) if b.data.ndim == 0 and a.data.ndim != 0 else (lambda g: g)
    return _result(a.data + b.data, "add", (a, b), lambda g: (ga(g), gb(g)))


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        return _result(a.data - b, "sub", (a,), lambda g: (g,))
    b = as_tensor(b)
    _check_elementwise(a, b, "sub")
    ga = (lambda g: _scalar_grad(g)) if a.data.ndim == 0 and b.data.ndim != 0 else (lambda g: g)
    gb = (lambda g: -_scalar_grad(g)) if b.data.ndim == 0 and a.data.ndim != 0 else (lambda g: -g)
    return _result(a.data - b.data, "sub", (a, b), lambda g: (ga(g), gb(g)))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        bval = float(b)
        return _result(a.data * bval, "mul", (a,), lambda g: (g * bval,))
    b = as_tensor(b)
    _check_elementwise(a, b, "mul")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g * bd
        gb = g * ad
        if ad.ndim == 0 and bd.ndim != 0:
            ga = _scalar_grad(ga)
        if bd.ndim == 0 and ad.ndim != 0:
            gb = _scalar_grad(gb)
        return ga, gb

    return _result(ad * bd, "mul", (a, b), bwd)


def elementwise(a, b, kind: str) -> Tensor:
    """Dispatcher for the binary elementwise family."""
    ops = {"add": add, "sub": sub, "mul": mul}
    if kind not in ops:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return ops[kind](a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, "matmul", (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for weight[out, in], bias[out].

    The bias broadcast over rows happens inside this fused op, keeping
    the elementwise ops free of implicit broadcasting.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError(
            f"linear expects x[n,in], weight[out,in], bias[out]; "
            f"got {x.shape}, {weight.shape}, {bias.shape}"
        )
    if x.shape[1] != weight.shape[1] or weight.shape[0] != bias.shape[0]:
        raise DimensionError(
            f"linear dims disagree: x{x.shape}, weight{weight.shape}, bias{bias.shape}"
        )
    xd, wd = x.data, weight.data
    out = xd @ wd.T + bias.data
    return _result(out, "linear", (x, weight, bias), lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _result(np.maximum(xd, 0.0), "relu", (x,), lambda g: (g * (xd > 0.0),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _result(t, "tanh", (x,), lambda g: (g * (1.0 - t * t),))


def _sigmoid_stable(z: Array) -> Array:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid_stable(x.data)
    return _result(s, "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    if kind not in _ACTIVATIONS:
        raise ValueError(f"unknown activation kind {kind!r}")
    return _ACTIVATIONS[kind](x)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _result(e, "exp", (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    xd = x.data
    return _result(out, "log", (x,), lambda g: (g / xd,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x is above the floor."""
    x = as_tensor(x)
    mask = x.data > floor
    return _result(np.where(mask, x.data, floor), "clamp_min", (x,), lambda g: (g * mask,))


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log softmax over a [batch, C] tensor, C >= 2, max-shifted."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"log_softmax needs [batch, C], got {x.shape}")
    if x.shape[1] < 2:
        raise DimensionError(f"log_softmax needs C >= 2, got C={x.shape[1]}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)
    return _result(out, "log_softmax", (x,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) computed without exponent overflow."""
    x = as_tensor(x)
    z = x.data
    out = np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))
    s = _sigmoid_stable(z)
    return _result(out, "log_sigmoid", (x,), lambda g: (g * (1.0 - s),))


def outer_product(f: Tensor, p: Tensor) -> Tensor:
    """Flattened outer product of two vectors: out[a*dp + b] = f[a]*p[b]."""
    f, p = as_tensor(f), as_tensor(p)
    if f.data.ndim != 1 or p.data.ndim != 1:
        raise DimensionError(f"outer_product needs two vectors, got {f.shape} and {p.shape}")
    fd, pd = f.data, p.data
    out = np.outer(fd, pd).reshape(-1)

    def bwd(g):
        gm = g.reshape(fd.size, pd.size)
        return gm @ pd, gm.T @ fd

    return _result(out, "outer_product", (f, p), bwd)


def row_outer(f: Tensor, p: Tensor) -> Tensor:
    """Row-wise flattened outer product: [n, df] x [n, dp] -> [n, df*dp]."""
    f, p = as_tensor(f), as_tensor(p)
    if f.data.ndim != 2 or p.data.ndim != 2:
        raise DimensionError(f"row_outer needs 2-d operands, got {f.shape} and {p.shape}")
    if f.shape[0] != p.shape[0]:
        raise DimensionError(f"row_outer batch sizes disagree: {f.shape} vs {p.shape}")
    fd, pd = f.data, p.data
    n, df = fd.shape
    dp = pd.shape[1]
    out = (fd[:, :, None] * pd[:, None, :]).reshape(n, df * dp)

    def bwd(g):
        gm = g.reshape(n, df, dp)
        return np.einsum("iab,ib->ia", gm, pd), np.einsum("iab,ia->ib", gm, fd)

    return _result(out, "row_outer", (f, p), bwd)


def gather_rows(x: Tensor, idx) -> Tensor:
    """out[i] = x[i, idx[i]] for a [n, C] tensor and integer labels."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"gather_rows needs [n, C], got {x.shape}")
    idx = np.asarray(idx)
    if idx.ndim != 1 or idx.shape[0] != x.shape[0]:
        raise DimensionError(f"gather_rows index shape {idx.shape} vs rows {x.shape[0]}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("gather_rows needs integer indices")
    n, c = x.shape
    if idx.min() < 0 or idx.max() >= c:
        raise ValueError(f"gather_rows index out of range [0, {c})")
    rows = np.arange(n)
    out = x.data[rows, idx]

    def bwd(g):
        gx = np.zeros((n, c))
        gx[rows, idx] = g
        return (gx,)

    return _result(out, "gather_rows", (x,), bwd)


def grad_reversal(x: Tensor, coeff: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by -coeff."""
    x = as_tensor(x)
    coeff = float(coeff)
    if coeff < 0.0:
        raise ValueError(f"grad_reversal coeff must be nonnegative, got {coeff}")
    return _result(x.data, "grad_reversal", (x,), lambda g: (g * (-coeff),))


def detach(x: Tensor) -> Tensor:
    return as_tensor(x).detach()


def _sum(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _result(np.asarray(x.data.sum()), "sum", (x,), lambda g: (np.full(shape, float(g)),))


def _mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, x.size
    return _result(
        np.asarray(x.data.mean()), "mean", (x,), lambda g: (np.full(shape, float(g) / n),)
    )


# ---------------------------------------------------------------------------
# Finite-difference gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Per-parameter comparison of analytic vs central-difference gradients.

    Relative error uses |a - n| / max(|a|, |n|, floor) so elements with a
    genuinely tiny gradient do not dominate the report.
    """

    eps: float
    tol: float
    entries: list[tuple[str, float]] = field(default_factory=list)
    failure: str | None = None

    @property
    def max_rel_err(self) -> float:
        return max((e for _, e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.failure is None and self.max_rel_err < self.tol

    def worst(self) -> tuple[str, float]:
        if not self.entries:
            return ("<none>", 0.0)
        return max(self.entries, key=lambda kv: kv[1])


def finite_diff_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    names: Sequence[str] | None = None,
    rel_floor: float = 1e-8,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar function against central differences.

    ``fn`` must rebuild its graph from the current contents of ``inputs``
    each call; the check perturbs each input element by +/- eps in place.
    A non-finite intermediate is reported as a failure naming the op that
    produced it.
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    report = GradCheckReport(eps=eps, tol=tol)
    if names is None:
        names = [f"input[{i}]" for i in range(len(inputs))]

    for t in inputs:
        t.zero_grad()
    try:
        out = fn()
        if out.size != 1:
            raise GraphError("finite_diff_check needs a scalar-valued fn")
        out.backward()
    except NonFiniteError as err:
        report.failure = f"analytic pass: {err}"
        return report
    analytic = [
        np.zeros_like(t.data) if t.grad is None else np.array(t.grad) for t in inputs
    ]

    def value() -> float:
        with no_grad():
            return float(fn().data)

    try:
        for t, name, a in zip(inputs, names, analytic):
            flat = t.data.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = value()
                flat[i] = orig - eps
                lo = value()
                flat[i] = orig
                num[i] = (hi - lo) / (2.0 * eps)
            num = num.reshape(t.data.shape)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), rel_floor)
            rel = float((np.abs(a - num) / denom).max()) if a.size else 0.0
            report.entries.append((name, rel))
    except NonFiniteError as err:
        report.failure = f"numeric pass: {err}"
        return report

    return report


LOG_EPS = 1e-12
LOG_FLOOR = math.log(LOG_EPS)
