"""A small define-then-run reverse-mode differentiation engine.

A :class:`Tape` records a static graph of primitive nodes over real arrays.
Batched values carry an explicit leading batch axis; nothing broadcasts
implicitly.  Complex quantities are handled as real (re, im) pairs, so the
spectral transforms of the models are fixed real matrices.

Example::

    tape = Tape()
    x = tape.input("x", 3)
    h = tape.dense(x, tape.parameter("W", w0), tape.parameter("b", b0))
    tape.mark_output(tape.sum(tape.relu(h)))
    forward(tape, {"x": xs})
    grads = backward(tape)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class TapeError(RuntimeError):
    """Misuse of a tape: unknown input, wrong shape, backward before forward."""


# -- primitives ---------------------------------------------------------------

class Primitive:
    """A differentiable operation.

    ``vjp`` returns the cotangent for each input; ``jvp`` the output tangent
    for given input tangents.  Both may use the cached forward output.
    """

    name = "primitive"

    def forward(self, *xs):
        raise NotImplementedError

    def vjp(self, g, out, *xs):
        raise NotImplementedError

    def jvp(self, ts, out, *xs):
        raise NotImplementedError


class Linear(Primitive):
    """``x @ A.T`` for a fixed real matrix ``A``."""

    name = "linear"

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=float)

    def forward(self, x):
        return x @ self.matrix.T

    def vjp(self, g, out, x):
        return (g @ self.matrix,)

    def jvp(self, ts, out, x):
        return ts[0] @ self.matrix.T


class Dense(Primitive):
    """``x @ W.T - b`` (bias subtracted)."""

    name = "dense"

    def forward(self, x, W, b):
        return x @ W.T - b

    def vjp(self, g, out, x, W, b):
        return g @ W, g.T @ x, -g.sum(axis=0)

    def jvp(self, ts, out, x, W, b):
        tx, tW, tb = ts
        return tx @ W.T + x @ tW.T - tb


class Add(Primitive):
    name = "add"

    def forward(self, x, y):
        return x + y

    def vjp(self, g, out, x, y):
        return g, g

    def jvp(self, ts, out, x, y):
        return ts[0] + ts[1]


class AddRow(Primitive):
    """Add a parameter row ``b`` (shape ``(n,)``) to every batch row of ``x``."""

    name = "add_row"

    def forward(self, x, b):
        return x + b[None, :]

    def vjp(self, g, out, x, b):
        return g, g.sum(axis=0)

    def jvp(self, ts, out, x, b):
        return ts[0] + ts[1][None, :]


class ScaleBy(Primitive):
    """``a[0] * x`` for a one-element parameter ``a``."""

    name = "scale_by"

    def forward(self, a, x):
        return a[0] * x

    def vjp(self, g, out, a, x):
        return np.array([np.sum(g * x)]), a[0] * g

    def jvp(self, ts, out, a, x):
        return ts[0][0] * x + a[0] * ts[1]


class ComplexMulPacked(Primitive):
    """Pointwise complex product of packed Hermitian spectra.

    Packing is ``[re_0, re_1, im_1, ..., re_K, im_K]``; ``r`` has shape
    ``(2K+1,)`` and ``w`` shape ``(B, 2K+1)``.  The k=0 entry is real, so its
    product keeps only the real part (Hermitian symmetry of the result).
    """

    name = "cmul_packed"

    @staticmethod
    def _split(p):
        return p[..., 0], p[..., 1::2], p[..., 2::2]

    @staticmethod
    def _join(z0, re, im):
        out = np.empty(re.shape[:-1] + (2 * re.shape[-1] + 1,))
        out[..., 0] = z0
        out[..., 1::2] = re
        out[..., 2::2] = im
        return out

    def forward(self, r, w):
        r0, rr, ri = self._split(r)
        w0, wr, wi = self._split(w)
        return self._join(r0 * w0, rr * wr - ri * wi, rr * wi + ri * wr)

    def vjp(self, g, out, r, w):
        g0, gr, gi = self._split(g)
        r0, rr, ri = self._split(r)
        w0, wr, wi = self._split(w)
        dr = self._join((g0 * w0).sum(0), (gr * wr + gi * wi).sum(0), (-gr * wi + gi * wr).sum(0))
        dw = self._join(g0 * r0, gr * rr + gi * ri, -gr * ri + gi * rr)
        return dr, dw

    def jvp(self, ts, out, r, w):
        tr, tw = ts
        return self.forward(tr, w) + self.forward(r, tw)


class CircularConv(Primitive):
    """``out[m] = sum_{i=-s}^{s} x[m - i] * taps[i + s]`` with periodic indexing."""

    name = "circular_conv"

    def forward(self, x, taps):
        s = (taps.shape[0] - 1) // 2
        out = np.zeros_like(x)
        for j, t in enumerate(taps):
            out += t * np.roll(x, j - s, axis=-1)
        return out

    def vjp(self, g, out, x, taps):
        s = (taps.shape[0] - 1) // 2
        dx = np.zeros_like(x)
        dtaps = np.empty_like(taps)
        for j, t in enumerate(taps):
            dx += t * np.roll(g, -(j - s), axis=-1)
            dtaps[j] = np.sum(g * np.roll(x, j - s, axis=-1))
        return dx, dtaps

    def jvp(self, ts, out, x, taps):
        return self.forward(ts[0], taps) + self.forward(x, ts[1])


class Relu(Primitive):
    """ReLU with the subgradient at 0 taken as 0."""

    name = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0)

    def vjp(self, g, out, x):
        return (g * (x > 0),)

    def jvp(self, ts, out, x):
        return ts[0] * (x > 0)


class Tanh(Primitive):
    name = "tanh"

    def forward(self, x):
        return np.tanh(x)

    def vjp(self, g, out, x):
        return (g * (1.0 - out * out),)

    def jvp(self, ts, out, x):
        return ts[0] * (1.0 - out * out)


class Gelu(Primitive):
    """Exact GELU ``x * Phi(x)`` with the Gaussian CDF from ``erf``."""

    name = "gelu"

    def forward(self, x):
        return gelu(x)

    @staticmethod
    def _deriv(x):
        return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)

    def vjp(self, g, out, x):
        return (g * self._deriv(x),)

    def jvp(self, ts, out, x):
        return ts[0] * self._deriv(x)


class Identity(Primitive):
    name = "identity"

    def forward(self, x):
        return x

    def vjp(self, g, out, x):
        return (g,)

    def jvp(self, ts, out, x):
        return ts[0]


class Sum(Primitive):
    name = "sum"

    def forward(self, x):
        return np.asarray(np.sum(x))

    def vjp(self, g, out, x):
        return (np.full_like(x, g),)

    def jvp(self, ts, out, x):
        return np.asarray(np.sum(ts[0]))


class MeanSquaredError(Primitive):
    """``mean((x - y)**2)`` over all entries."""

    name = "mse"

    def forward(self, x, y):
        return np.asarray(np.mean((x - y) ** 2))

    def vjp(self, g, out, x, y):
        d = 2.0 * g * (x - y) / x.size
        return d, -d

    def jvp(self, ts, out, x, y):
        return np.asarray(2.0 * np.mean((x - y) * (ts[0] - ts[1])))


def gelu(x):
    return 0.5 * x * (1.0 + erf(np.asarray(x) / _SQRT2))


ACTIVATIONS: dict[str, type[Primitive]] = {
    "relu": Relu,
    "gelu": Gelu,
    "tanh": Tanh,
    "identity": Identity,
}


# -- tape -------------------------------------------------------------------------

@dataclass
class Node:
    op: Primitive | None
    inputs: tuple[int, ...]
    kind: str  # "op", "input" or "param"
    name: str = ""
    shape: tuple[int, ...] | None = None


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    params: dict[str, np.ndarray] = field(default_factory=dict)
    output: int | None = None
    _values: list | None = field(default=None, repr=False)

    def _push(self, node: Node) -> int:
        for i in node.inputs:
            if not 0 <= i < len(self.nodes):
                raise TapeError(f"node input {i} does not reference an earlier node")
        self.nodes.append(node)
        self._values = None
        return len(self.nodes) - 1

    def input(self, name: str, features: int | None = None) -> int:
        """Batched input leaf of shape ``(B, features)`` (``features=None`` skips the check)."""
        shape = None if features is None else (features,)
        return self._push(Node(None, (), "input", name, shape))

    def parameter(self, name: str, value) -> int:
        if name in self.params:
            raise TapeError(f"duplicate parameter {name!r}")
        self.params[name] = np.array(value, dtype=float)
        return self._push(Node(None, (), "param", name))

    def apply(self, op: Primitive, *inputs: int) -> int:
        return self._push(Node(op, tuple(inputs), "op"))

    def mark_output(self, node: int) -> int:
        self.output = node
        return node

    @property
    def input_names(self) -> list[str]:
        return [n.name for n in self.nodes if n.kind == "input"]

    # convenience constructors
    def linear(self, x, matrix):
        return self.apply(Linear(matrix), x)

    def dense(self, x, W, b):
        return self.apply(Dense(), x, W, b)

    def add(self, x, y):
        return self.apply(Add(), x, y)

    def add_row(self, x, b):
        return self.apply(AddRow(), x, b)

    def scale_by(self, a, x):
        return self.apply(ScaleBy(), a, x)

    def cmul_packed(self, r, w):
        return self.apply(ComplexMulPacked(), r, w)

    def conv(self, x, taps):
        return self.apply(CircularConv(), x, taps)

    def activation(self, x, kind: str):
        return self.apply(ACTIVATIONS[kind](), x)

    def relu(self, x):
        return self.apply(Relu(), x)

    def sum(self, x):
        return self.apply(Sum(), x)

    def mse(self, x, y):
        return self.apply(MeanSquaredError(), x, y)


def forward(tape: Tape, inputs: dict[str, np.ndarray]):
    """Evaluate every node; returns the value of the marked output."""
    if tape.output is None:
        raise TapeError("tape has no marked output")
    values: list = []
    for node in tape.nodes:
        if node.kind == "input":
            if node.name not in inputs:
                raise TapeError(f"missing input {node.name!r}")
            v = np.asarray(inputs[node.name], dtype=float)
            if node.shape is not None and (v.ndim != 2 or v.shape[1:] != node.shape):
                raise TapeError(f"input {node.name!r} expects shape (B, {node.shape[0]}), got {v.shape}")
            values.append(v)
        elif node.kind == "param":
            values.append(tape.params[node.name])
        else:
            values.append(node.op.forward(*(values[i] for i in node.inputs)))
    tape._values = values
    return values[tape.output]


def backward(tape: Tape, output_cotangent=None, with_inputs: bool = False) -> dict[str, np.ndarray]:
    """Gradients of ``<cotangent, output>`` for every parameter (and inputs, if asked)."""
    if tape._values is None:
        raise TapeError("backward called before forward")
    values = tape._values
    out = values[tape.output]
    g0 = np.ones_like(out) if output_cotangent is None else np.asarray(output_cotangent, dtype=float)
    if g0.shape != np.shape(out):
        raise TapeError(f"cotangent shape {g0.shape} does not match output {np.shape(out)}")
    grads: list = [None] * len(tape.nodes)
    grads[tape.output] = g0
    for idx in range(tape.output, -1, -1):
        node, g = tape.nodes[idx], grads[idx]
        if g is None or node.kind != "op":
            continue
        parts = node.op.vjp(g, values[idx], *(values[i] for i in node.inputs))
        for i, gi in zip(node.inputs, parts):
            grads[i] = gi if grads[i] is None else grads[i] + gi
    result = {}
    for idx, node in enumerate(tape.nodes):
        if node.kind == "param" or (with_inputs and node.kind == "input"):
            result[node.name] = np.zeros_like(values[idx]) if grads[idx] is None else grads[idx]
    return result


def value_and_grad(tape: Tape, inputs: dict[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    loss = forward(tape, inputs)
    return float(loss), backward(tape)


@dataclass(frozen=True)
class GradCheckResult:
    status: str  # "pass", "fail" or "inconclusive"
    max_rel_error: float
    worst: tuple[str, int] | None
    message: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _kink_margin(tape: Tape) -> float:
    values = tape._values
    margin = math.inf
    for idx, node in enumerate(tape.nodes):
        if node.kind == "op" and isinstance(node.op, Relu):
            x = values[node.inputs[0]]
            if x.size:
                margin = min(margin, float(np.min(np.abs(x))))
    return margin


def grad_check(tape: Tape, point: dict[str, np.ndarray], epsilon: float = 1e-4,
               tolerance: float = 1e-5, include_inputs: bool = False) -> GradCheckResult:
    """Compare reverse-mode gradients with central differences at ``point``.

    The loss must be scalar.  Relative errors use the denominator
    ``max(|analytic|, |numeric|, 1e-7 * max(1, max |analytic|))`` so that
    near-zero coordinates do not dominate.  If a ReLU input lies within
    ``10 * epsilon`` of the kink the result is inconclusive.
    """
    point = {k: np.array(v, dtype=float) for k, v in point.items()}
    loss = forward(tape, point)
    if np.ndim(loss) != 0:
        raise TapeError("grad_check needs a scalar output")
    if _kink_margin(tape) < 10 * epsilon:
        return GradCheckResult("inconclusive", math.nan, None, "relu input within 10*epsilon of 0")
    analytic = backward(tape, with_inputs=include_inputs)
    scale = max(1.0, max((float(np.max(np.abs(g))) for g in analytic.values() if g.size), default=1.0))
    floor = 1e-7 * scale

    def evaluate():
        return float(forward(tape, point))

    worst, worst_err = None, 0.0
    for name, grad in analytic.items():
        target = tape.params[name] if name in tape.params else point[name]
        original = np.array(target, dtype=float)
        flat = target.reshape(-1)
        for j in range(flat.size):
            flat[j] = original.reshape(-1)[j] + epsilon
            up = evaluate()
            flat[j] = original.reshape(-1)[j] - epsilon
            down = evaluate()
            flat[j] = original.reshape(-1)[j]
            numeric = (up - down) / (2 * epsilon)
            a = float(grad.reshape(-1)[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if err > worst_err:
                worst, worst_err = (name, j), err
    forward(tape, point)
    status = "pass" if worst_err <= tolerance else "fail"
    return GradCheckResult(status, worst_err, worst)
