"""Reverse-mode differentiation over a fixed set of dense-array primitives.

A :class:`Tape` records float64 numpy values in creation order, which is by
construction a topological order; :func:`backward` walks it once in reverse.
The primitive set is exactly what the recommendation model needs (matrix
products, tanh, log-sigmoid, masked softmax, squashing, segment means, row
gathers, elementwise powers, reductions) rather than a general autodiff.

Also hosts the Adam optimizer state and a central-finite-difference gradient
checker used to validate analytic gradients end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .rng import STREAM_GRAD_CHECK, substream


class ContractError(ValueError):
    """An operation was invoked outside its shape/value contract."""


class Var:
    """One recorded value; leaves carry parameters, interior nodes results."""

    __slots__ = ("value", "tape", "requires_grad", "parents", "vjp")

    def __init__(self, value, tape, requires_grad, parents, vjp):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


class Tape:
    """Ordered operation record; inputs always precede their consumers."""

    __slots__ = ("nodes", "leaves")

    def __init__(self) -> None:
        self.nodes: list[Var] = []
        self.leaves: list[Var] = []

    def leaf(self, value: np.ndarray, requires_grad: bool = True) -> Var:
        arr = np.asarray(value, dtype=np.float64)
        v = Var(arr, self, requires_grad, (), None)
        self.nodes.append(v)
        if requires_grad:
            self.leaves.append(v)
        return v

    def constant(self, value: np.ndarray) -> Var:
        return self.leaf(value, requires_grad=False)


def _record(tape: Tape, value: np.ndarray, parents: tuple[Var, ...], vjp) -> Var:
    needs = any(p.requires_grad for p in parents)
    v = Var(value, tape, needs, parents, vjp if needs else None)
    tape.nodes.append(v)
    return v


def backward(tape: Tape, loss: Var) -> dict[Var, np.ndarray]:
    """Gradients of a scalar loss for every grad-tracked leaf on the tape.

    Leaves not reachable from the loss get an explicit zero gradient.
    """
    if loss.value.ndim != 0:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    if loss.tape is not tape:
        raise ContractError("loss does not belong to this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    for node in reversed(tape.nodes):
        if node.vjp is None:
            continue  # leaf or constant: any accumulated grad stays in the map
        g = grads.pop(id(node), None)
        if g is None:
            continue
        contribs = node.vjp(g)
        for parent, contrib in zip(node.parents, contribs):
            if contrib is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    out: dict[Var, np.ndarray] = {}
    for leaf in tape.leaves:
        g = grads.get(id(leaf))
        out[leaf] = np.zeros_like(leaf.value) if g is None else np.asarray(g)
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def _same_tape(*vars_: Var) -> Tape:
    tape = vars_[0].tape
    for v in vars_[1:]:
        if v.tape is not tape:
            raise ContractError("operands recorded on different tapes")
    return tape


def add(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ContractError(f"add shape mismatch {a.value.shape} vs {b.value.shape}")
    return _record(_same_tape(a, b), a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ContractError(f"sub shape mismatch {a.value.shape} vs {b.value.shape}")
    return _record(_same_tape(a, b), a.value - b.value, (a, b), lambda g: (g, -g))


def scale(a: Var, k: float) -> Var:
    k = float(k)
    return _record(a.tape, a.value * k, (a,), lambda g: (g * k,))


def matmul(a: Var, b: Var, transpose_a: bool = False, transpose_b: bool = False) -> Var:
    av = a.value.T if transpose_a else a.value
    bv = b.value.T if transpose_b else b.value
    out = av @ bv

    def vjp(g):
        if not transpose_a and not transpose_b:
            return g @ b.value.T, a.value.T @ g
        if transpose_b and not transpose_a:
            return g @ b.value, g.T @ a.value
        if transpose_a and not transpose_b:
            return b.value @ g.T, a.value @ g
        return b.value.T @ g.T, g.T @ a.value.T

    return _record(_same_tape(a, b), out, (a, b), vjp)


def matvec(a: Var, x: Var, transpose_a: bool = False) -> Var:
    av = a.value.T if transpose_a else a.value
    out = av @ x.value

    def vjp(g):
        if transpose_a:
            return np.outer(x.value, g), a.value @ g
        return np.outer(g, x.value), a.value.T @ g

    return _record(_same_tape(a, x), out, (a, x), vjp)


def dot(a: Var, b: Var) -> Var:
    if a.value.ndim != 1 or b.value.ndim != 1:
        raise ContractError("dot expects 1-D operands")
    out = np.asarray(a.value @ b.value)
    return _record(_same_tape(a, b), out, (a, b), lambda g: (g * b.value, g * a.value))


def row_dot(a: Var, b: Var) -> Var:
    """Per-row inner product of two equally shaped matrices -> 1-D vector."""
    if a.value.shape != b.value.shape:
        raise ContractError("row_dot shape mismatch")
    out = np.einsum("ij,ij->i", a.value, b.value)
    return _record(
        _same_tape(a, b), out, (a, b),
        lambda g: (g[:, None] * b.value, g[:, None] * a.value),
    )


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return _record(a.tape, out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Overflow-free via tanh.
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_sigmoid(a: Var) -> Var:
    out = -np.logaddexp(0.0, -a.value)
    return _record(a.tape, out, (a,), lambda g: (g * _sigmoid(-a.value),))


def softmax_rows(a: Var) -> Var:
    """Softmax across the columns of each row of a 2-D array."""
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    w = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        inner = (g * w).sum(axis=1, keepdims=True)
        return (w * (g - inner),)

    return _record(a.tape, w, (a,), vjp)


def masked_softmax(a: Var, active: np.ndarray) -> Var:
    """Softmax of a 1-D vector restricted to ``active`` entries; others are 0."""
    active = np.asarray(active, dtype=bool)
    if a.value.shape != active.shape:
        raise ContractError("masked_softmax mask shape mismatch")
    if not active.any():
        raise ContractError("masked_softmax needs at least one active entry")
    x = a.value[active]
    e = np.exp(x - x.max())
    w_active = e / e.sum()
    out = np.zeros_like(a.value)
    out[active] = w_active

    def vjp(g):
        ga = g[active]
        inner = float(ga @ w_active)
        dx = np.zeros_like(a.value)
        dx[active] = w_active * (ga - inner)
        return (dx,)

    return _record(a.tape, out, (a,), vjp)


SQUASH_EPS = 1e-12


def _squash_rows_value(c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    norm_sq = np.einsum("ij,ij->i", c, c)
    norm = np.sqrt(norm_sq)
    factor = np.where(norm < SQUASH_EPS, 0.0, norm / (1.0 + norm_sq))
    return factor[:, None] * c, norm, factor


def squash_rows(a: Var) -> Var:
    """Row-wise squashing: c -> (|c|^2 / (1 + |c|^2)) * c / |c|, 0 guarded."""
    out, norm, factor = _squash_rows_value(a.value)

    def vjp(g):
        safe = norm >= SQUASH_EPS
        norm_sq = norm * norm
        # d factor / d norm = (1 - |c|^2) / (1 + |c|^2)^2, applied along c/|c|.
        dfactor = np.where(safe, (1.0 - norm_sq) / (1.0 + norm_sq) ** 2, 0.0)
        gc = np.einsum("ij,ij->i", g, a.value)
        coef = np.where(safe, dfactor * gc / np.where(safe, norm, 1.0), 0.0)
        return (factor[:, None] * g + coef[:, None] * a.value,)

    return _record(a.tape, out, (a,), vjp)


def power(a: Var, exponent: float) -> Var:
    exponent = float(exponent)
    out = np.power(a.value, exponent)

    def vjp(g):
        if exponent == 0.0:
            return (np.zeros_like(a.value),)
        return (g * exponent * np.power(a.value, exponent - 1.0),)

    return _record(a.tape, out, (a,), vjp)


def gather_rows(a: Var, indices: np.ndarray) -> Var:
    idx = np.asarray(indices, dtype=np.int64)
    out = a.value[idx]

    def vjp(g):
        da = np.zeros_like(a.value)
        np.add.at(da, idx, g)
        return (da,)

    return _record(a.tape, out, (a,), vjp)


def segment_mean(src: Var, offsets: np.ndarray, indices: np.ndarray, fallback: Var) -> Var:
    """Per-segment mean of gathered rows; empty segments copy ``fallback`` rows.

    Segment i averages ``src[indices[offsets[i]:offsets[i+1]]]``. The output has
    one row per segment and must match ``fallback`` row-for-row.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    n_seg = offsets.shape[0] - 1
    if fallback.value.shape != (n_seg, src.value.shape[1]):
        raise ContractError("segment_mean fallback shape mismatch")
    deg = np.diff(offsets)
    empty = deg == 0
    seg_of_index = np.repeat(np.arange(n_seg, dtype=np.int64), deg)
    sums = np.zeros((n_seg, src.value.shape[1]))
    np.add.at(sums, seg_of_index, src.value[indices])
    safe_deg = np.where(empty, 1, deg).astype(np.float64)
    out = sums / safe_deg[:, None]
    out[empty] = fallback.value[empty]

    def vjp(g):
        dsrc = np.zeros_like(src.value)
        per_index = g[seg_of_index] / safe_deg[seg_of_index][:, None]
        np.add.at(dsrc, indices, per_index)
        dfallback = np.zeros_like(fallback.value)
        dfallback[empty] = g[empty]
        return dsrc, dfallback

    return _record(_same_tape(src, fallback), out, (src, fallback), vjp)


def concat_rows(parts: Sequence[Var]) -> Var:
    if not parts:
        raise ContractError("concat_rows needs at least one part")
    tape = _same_tape(*parts)
    sizes = [p.value.shape[0] for p in parts]
    out = np.concatenate([p.value for p in parts], axis=0)
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _record(tape, out, tuple(parts), vjp)


def stack_scalars(parts: Sequence[Var]) -> Var:
    tape = _same_tape(*parts)
    out = np.array([float(p.value) for p in parts])

    def vjp(g):
        return tuple(np.asarray(g[i]) for i in range(len(parts)))

    return _record(tape, out, tuple(parts), vjp)


def reshape(a: Var, shape: tuple[int, ...]) -> Var:
    orig = a.value.shape
    return _record(a.tape, a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def rows_mean(a: Var) -> Var:
    """Column-wise mean of a 2-D array -> 1-D vector."""
    n = a.value.shape[0]
    out = a.value.mean(axis=0)
    return _record(a.tape, out, (a,), lambda g: (np.tile(g / n, (n, 1)),))


def total_sum(a: Var) -> Var:
    out = np.asarray(a.value.sum())
    return _record(a.tape, out, (a,), lambda g: (np.full_like(a.value, float(g)),))


def mean_all(a: Var) -> Var:
    size = a.value.size
    out = np.asarray(a.value.mean())
    return _record(a.tape, out, (a,), lambda g: (np.full_like(a.value, float(g) / size),))


def sum_squares(a: Var) -> Var:
    out = np.asarray(np.vdot(a.value, a.value))
    return _record(a.tape, out, (a,), lambda g: (2.0 * float(g) * a.value,))


def negate(a: Var) -> Var:
    return scale(a, -1.0)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam moments for a named family of parameter arrays."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
) -> None:
    """Apply one in-place Adam update to every parameter with a gradient."""
    state.step += 1
    t = state.step
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    for name in params:
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class FamilyCheck:
    max_rel_error: float
    worst_coordinate: tuple[int, ...]
    checked: int


@dataclass
class GradCheckReport:
    families: dict[str, FamilyCheck]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max((fc.max_rel_error for fc in self.families.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def failing_families(self) -> list[str]:
        return [n for n, fc in self.families.items() if fc.max_rel_error >= self.tolerance]


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def compare_to_finite_differences(
    loss_fn: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    *,
    samples_per_family: int = 20,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Check analytic gradients against central differences on sampled coords.

    ``loss_fn`` must be a deterministic function of the parameter arrays. A
    failing tolerance shows up in the report; nothing raises.
    """
    work = {name: np.array(arr, dtype=np.float64) for name, arr in params.items()}
    families: dict[str, FamilyCheck] = {}
    gen = substream(seed, STREAM_GRAD_CHECK)
    for name in work:
        arr = work[name]
        flat = arr.reshape(-1)
        n = flat.size
        if n <= samples_per_family:
            coords = np.arange(n)
        else:
            coords = np.sort(gen.choice(n, size=samples_per_family, replace=False))
        worst = 0.0
        worst_coord: tuple[int, ...] = ()
        ana_flat = np.asarray(analytic[name]).reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = loss_fn(work)
            flat[c] = orig - step
            down = loss_fn(work)
            flat[c] = orig
            numeric = (up - down) / (2.0 * step)
            err = relative_error(float(ana_flat[c]), numeric)
            if err > worst:
                worst = err
                worst_coord = tuple(int(i) for i in np.unravel_index(int(c), arr.shape))
        families[name] = FamilyCheck(worst, worst_coord, len(coords))
    return GradCheckReport(families, tolerance)


def grad_check(
    loss_builder: Callable[[Mapping[str, np.ndarray]], tuple[Tape, Var, dict[str, Var]]],
    params: Mapping[str, np.ndarray],
    *,
    samples_per_family: int = 20,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Build the loss once for analytic gradients, then finite-difference it.

    ``loss_builder`` maps parameter arrays to (tape, scalar loss, name->leaf).
    """
    tape, loss, leaves = loss_builder(params)
    grads = backward(tape, loss)
    analytic = {name: grads[leaf] for name, leaf in leaves.items()}

    def loss_value(p: Mapping[str, np.ndarray]) -> float:
        _, out, _ = loss_builder(p)
        return float(out.value)

    return compare_to_finite_differences(
        loss_value, params, analytic,
        samples_per_family=samples_per_family, step=step,
        tolerance=tolerance, seed=seed,
    )
