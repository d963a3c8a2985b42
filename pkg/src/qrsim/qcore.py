"""Finite-dimensional quantum states, channels and measurements.

All registers live in spaces spanned by a labelled computational basis.  A
:class:`DensityState` keeps registers that sit in a computational basis state
as plain indices and groups the remaining registers into dense factors; the
global operator is the tensor product of all of them, scaled by ``weight``.
Operations never mutate their arguments.
"""
from __future__ import annotations

import itertools
import math
import string
from dataclasses import dataclass, field
from typing import Callable, Generic, Hashable, Iterable, Mapping, Sequence, TypeVar

import numpy as np

from .errors import ModelError, ValidationError

EPSILON = ""
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
CPTP_TOL = 1e-9
PRUNE_TOL = 1e-12
# Registers whose reduced state is this close to a basis projector (or a
# product) are split off their factor.
ZERO_TOL = 1e-15
SNAP_TOL = 1e-12
MAX_DENSE_DIM = 4096

_LETTERS = string.ascii_letters


def render_label(label: str) -> str:
    return label if label else "ε"


@dataclass(frozen=True)
class LabeledSpace:
    """A Hilbert space with a named computational basis."""

    labels: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise ValidationError("a labelled space needs at least one basis label")
        index = {lab: i for i, lab in enumerate(labels)}
        if len(index) != len(labels):
            dup = sorted({lab for lab in labels if labels.count(lab) > 1})
            raise ValidationError(f"duplicate basis labels {dup}")
        object.__setattr__(self, "_index", index)

    @property
    def dim(self) -> int:
        return len(self.labels)

    def __contains__(self, label) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            shown = ", ".join(render_label(x) for x in self.labels[:8])
            more = ", ..." if len(self.labels) > 8 else ""
            raise ValidationError(
                f"label {render_label(label)!r} is not in space {{{shown}{more}}}"
            ) from None


@dataclass(frozen=True)
class Alphabet:
    """Message alphabet together with the maximal message length."""

    symbols: str = "01"
    max_len: int = 2
    # clock ports carry decimal message indices 1..max_index
    max_index: int = 4

    def __post_init__(self):
        if not self.symbols:
            raise ValidationError("alphabet must contain at least one symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValidationError(f"alphabet {self.symbols!r} repeats a symbol")
        if "," in self.symbols:
            raise ValidationError("',' is reserved for queue encodings")
        if self.max_len < 0:
            raise ValidationError("max_len must be non-negative")
        if self.max_index < 1:
            raise ValidationError("max_index must be at least 1")

    def words(self) -> tuple[str, ...]:
        out = [EPSILON]
        for n in range(1, self.max_len + 1):
            out.extend("".join(w) for w in itertools.product(self.symbols, repeat=n))
        return tuple(out)

    def space(self) -> LabeledSpace:
        return LabeledSpace(self.words())

    def clock_space(self) -> LabeledSpace:
        return LabeledSpace((EPSILON,) + tuple(str(i) for i in range(1, self.max_index + 1)))

    def is_word(self, label: str) -> bool:
        return all(ch in self.symbols for ch in label)


@dataclass(frozen=True, eq=False)
class KrausChannel:
    """A channel rho -> sum_i K_i rho K_i^dagger over a product of registers."""

    operators: tuple
    dims: tuple[int, ...]
    roles: tuple[str, ...] = ()

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.operators)
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "roles", tuple(self.roles))
        if not ops:
            raise ValidationError("a Kraus channel needs at least one operator")
        shape = ops[0].shape
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ValidationError(f"Kraus operators must be square, got shape {shape}")
        if any(k.shape != shape for k in ops):
            raise ValidationError("Kraus operators must all have the same shape")
        if math.prod(self.dims) != shape[0]:
            raise ValidationError(
                f"operator size {shape[0]} does not match register dims {self.dims}"
            )
        if self.roles and len(self.roles) != len(self.dims):
            raise ValidationError("one role name per register dimension expected")

    @property
    def dim(self) -> int:
        return self.operators[0].shape[0]

    def defect(self) -> float:
        total = sum(k.conj().T @ k for k in self.operators)
        return float(np.linalg.norm(total - np.eye(self.dim), ord=2))

    @classmethod
    def identity(cls, dims: Sequence[int]) -> "KrausChannel":
        return cls((np.eye(math.prod(dims)),), tuple(dims))

    @classmethod
    def unitary(cls, matrix, dims: Sequence[int]) -> "KrausChannel":
        return cls((np.asarray(matrix, dtype=complex),), tuple(dims))


@dataclass(frozen=True)
class ChannelReport:
    ok: bool
    defect: float
    message: str


def validate_channel(ch: KrausChannel, tol: float = CPTP_TOL) -> ChannelReport:
    """Check trace preservation; complete positivity holds by Kraus form."""
    defect = ch.defect()
    if defect <= tol:
        return ChannelReport(True, defect, "trace-preserving; completely positive by Kraus form")
    return ChannelReport(
        False, defect, f"not trace-preserving: ||sum K^dag K - 1|| = {defect:.3g}"
    )


def is_unitary(matrix, tol: float = CPTP_TOL) -> bool:
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    return float(np.linalg.norm(m.conj().T @ m - np.eye(m.shape[0]), ord=2)) <= tol


# ---------------------------------------------------------------------------
# tensor helpers; a factor over n registers is stored with shape dims + dims


def _trace(t: np.ndarray) -> complex:
    n = t.ndim // 2
    d = math.prod(t.shape[:n])
    return np.trace(t.reshape(d, d))


def _reduce(t: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Partial trace keeping the axes ``keep`` (in that order)."""
    n = t.ndim // 2
    if 2 * n > len(_LETTERS):
        raise ModelError(f"factor with {n} registers is too wide")
    rows = list(_LETTERS[:n])
    cols = list(rows)
    for i in keep:
        cols[i] = _LETTERS[n + i]
    out = "".join(rows[i] for i in keep) + "".join(cols[i] for i in keep)
    return np.einsum("".join(rows) + "".join(cols) + "->" + out, t)


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na, nb = a.ndim // 2, b.ndim // 2
    c = np.multiply.outer(a, b)
    perm = (
        list(range(na))
        + list(range(2 * na, 2 * na + nb))
        + list(range(na, 2 * na))
        + list(range(2 * na + nb, 2 * na + 2 * nb))
    )
    return c.transpose(perm)


def _project(t: np.ndarray, i: int, x: int) -> np.ndarray:
    n = t.ndim // 2
    return np.take(np.take(t, x, axis=n + i), x, axis=i)


def _basis_tensor(dim: int, x: int) -> np.ndarray:
    t = np.zeros((dim, dim), dtype=complex)
    t[x, x] = 1.0
    return t


def _axes_first(t: np.ndarray, axes: Sequence[int]):
    """Permute ``axes`` to the front and flatten to (Dt, Dr, Dt, Dr)."""
    n = t.ndim // 2
    rest = [i for i in range(n) if i not in axes]
    order = list(axes) + rest
    perm = order + [n + i for i in order]
    dims = t.shape[:n]
    dt = math.prod(dims[i] for i in axes)
    dr = math.prod(dims[i] for i in rest)
    x = t.transpose(perm).reshape(dt, dr, dt, dr)
    return x, perm, [dims[i] for i in order]


def _axes_back(x: np.ndarray, perm, pdims) -> np.ndarray:
    return x.reshape(list(pdims) * 2).transpose(np.argsort(perm))


def _apply_ops(t: np.ndarray, axes: Sequence[int], ops: Iterable[np.ndarray]) -> np.ndarray:
    x, perm, pdims = _axes_first(t, axes)
    acc = np.zeros_like(x)
    for k in ops:
        y = np.tensordot(k, x, axes=([1], [0]))
        y = np.tensordot(y, k.conj(), axes=([2], [1]))
        acc += y.transpose(0, 1, 3, 2)
    return _axes_back(acc, perm, pdims)


@dataclass(frozen=True, eq=False)
class Factor:
    """Dense group of registers.

    Axis i of the tensor runs over the basis indices ``supp[i]`` of register
    ``regs[i]``; the state has no weight outside that support.
    """

    regs: tuple[str, ...]
    supp: tuple[tuple[int, ...], ...]
    tensor: np.ndarray

    @property
    def dims(self) -> tuple[int, ...]:
        return self.tensor.shape[: len(self.regs)]

    @property
    def matrix(self) -> np.ndarray:
        d = math.prod(self.dims)
        return self.tensor.reshape(d, d)


def _embed(t: np.ndarray, supp: list, i: int, dim: int) -> np.ndarray:
    """Widen axis ``i`` from its support to the full basis of size ``dim``."""
    n = t.ndim // 2
    idx = np.asarray(supp[i], dtype=int)
    if len(idx) == dim and np.array_equal(idx, np.arange(dim)):
        return t
    shape = list(t.shape)
    shape[i] = shape[n + i] = dim
    out = np.zeros(shape, dtype=complex)
    src = np.moveaxis(t, [i, n + i], [0, 1])
    dst = np.moveaxis(out, [i, n + i], [0, 1])
    dst[np.ix_(idx, idx)] = src
    supp[i] = tuple(range(dim))
    return out


def _diagonals(t: np.ndarray) -> list[np.ndarray]:
    n = t.ndim // 2
    d = math.prod(t.shape[:n])
    full = np.real(np.diagonal(t.reshape(d, d))).reshape(t.shape[:n])
    return [full.sum(axis=tuple(j for j in range(n) if j != i)) for i in range(n)]


def _compress(t: np.ndarray, supp: list):
    """Drop basis indices that carry no weight."""
    n = t.ndim // 2
    for i, diag in enumerate(_diagonals(t)):
        keep = np.nonzero(diag > ZERO_TOL)[0]
        if len(keep) == len(diag) or len(keep) == 0:
            continue
        t = np.take(np.take(t, keep, axis=i), keep, axis=n + i)
        supp[i] = tuple(supp[i][j] for j in keep)
    return t, supp


class DensityState:
    """Weighted density operator over named registers.

    ``definite`` maps registers in a computational basis state to their basis
    index; ``factors`` hold the remaining registers as dense groups.  The
    weight carries the probability of the branch that produced the state.
    """

    __slots__ = ("spaces", "definite", "factors", "weight")

    def __init__(self, spaces: Mapping[str, LabeledSpace], definite: Mapping[str, int],
                 factors: Iterable[Factor] = (), weight: float = 1.0):
        self.spaces = dict(spaces)
        self.definite = dict(definite)
        self.factors = tuple(factors)
        self.weight = float(weight)

    def __repr__(self):
        dense = ["{" + ",".join(f.regs) + "}" for f in self.factors]
        return (f"DensityState(weight={self.weight:.6g}, definite={len(self.definite)}, "
                f"dense={dense})")

    @property
    def registers(self) -> tuple[str, ...]:
        return tuple(self.spaces)

    def label(self, reg: str) -> str | None:
        """Basis label of ``reg`` if it is in a basis state, else None."""
        if reg in self.definite:
            return self.spaces[reg].labels[self.definite[reg]]
        return None

    def with_weight(self, weight: float) -> "DensityState":
        return DensityState(self.spaces, self.definite, self.factors, weight)

    def factor_of(self, reg: str) -> int | None:
        for i, f in enumerate(self.factors):
            if reg in f.regs:
                return i
        if reg not in self.spaces:
            raise ValidationError(f"register {reg!r} is not part of the state")
        return None

    def probabilities(self, reg: str) -> dict[str, float]:
        space = self.spaces[reg]
        if reg in self.definite:
            return {space.labels[self.definite[reg]]: 1.0}
        f = self.factors[self.factor_of(reg)]
        i = f.regs.index(reg)
        diag = _diagonals(f.tensor)[i]
        pairs = sorted(zip(f.supp[i], diag))
        return {space.labels[x]: float(p) for x, p in pairs if p > PRUNE_TOL}

    def reduced(self, regs: Sequence[str]) -> np.ndarray:
        """Dense reduced density matrix (trace 1) over ``regs`` in order."""
        group, supp, t, _, _ = _gather(self, regs)
        keep = [group.index(r) for r in regs]
        red = _reduce(t, keep)
        sub = [supp[j] for j in keep]
        for i, r in enumerate(regs):
            red = _embed(red, sub, i, self.spaces[r].dim)
        d = math.prod(self.spaces[r].dim for r in regs)
        return red.reshape(d, d)

    def factor_list(self) -> list[tuple[frozenset, np.ndarray]]:
        """All factors as (register set, full matrix), basis registers included."""
        out = []
        for f in self.factors:
            out.append((frozenset(f.regs), self.reduced(list(f.regs))))
        for reg, x in self.definite.items():
            out.append((frozenset([reg]), _basis_tensor(self.spaces[reg].dim, x)))
        return out

    def violations(self) -> list[str]:
        problems = []
        if not (-TRACE_TOL <= self.weight <= 1 + TRACE_TOL):
            problems.append(f"weight {self.weight} outside [0, 1]")
        for f in self.factors:
            m = f.matrix
            herm = float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0
            if herm > HERMITIAN_TOL:
                problems.append(f"factor {f.regs} not Hermitian ({herm:.2g})")
            tr = _trace(f.tensor)
            if abs(tr - 1) > TRACE_TOL:
                problems.append(f"factor {f.regs} has trace {tr:.12g}")
            if m.shape[0] <= 512:
                low = float(np.min(np.linalg.eigvalsh((m + m.conj().T) / 2)))
                if low < -HERMITIAN_TOL:
                    problems.append(f"factor {f.regs} has eigenvalue {low:.3g}")
            for r, s in zip(f.regs, f.supp):
                if len(set(s)) != len(s) or any(not 0 <= x < self.spaces[r].dim for x in s):
                    problems.append(f"factor {f.regs} has a bad support for {r}")
        seen = set(self.definite)
        for f in self.factors:
            if seen & set(f.regs):
                problems.append(f"registers {sorted(seen & set(f.regs))} appear twice")
            seen |= set(f.regs)
        if seen != set(self.spaces):
            problems.append("factors do not partition the registered subsystems")
        return problems


def _check_size(group, supp) -> None:
    size = math.prod(len(s) for s in supp)
    if size > MAX_DENSE_DIM:
        raise ModelError(
            f"entangled group {list(group)} has dimension {size} > {MAX_DENSE_DIM}; "
            "reduce the alphabet, message length or queue capacity"
        )


def _gather(state: DensityState, regs: Sequence[str]):
    """Merge every factor touching ``regs`` into one dense tensor.

    Returns (group registers, supports, tensor, untouched factors, remaining
    definite).
    """
    regs = list(dict.fromkeys(regs))
    for r in regs:
        if r not in state.spaces:
            raise ValidationError(f"register {r!r} is not part of the state")
    wanted = set(regs)
    touched = [f for f in state.factors if wanted & set(f.regs)]
    others = [f for f in state.factors if not wanted & set(f.regs)]
    extra = [r for r in regs if r in state.definite]
    group = [r for f in touched for r in f.regs] + extra
    definite = dict(state.definite)
    supp = [s for f in touched for s in f.supp] + [(definite[r],) for r in extra]
    _check_size(group, supp)
    tensor = None
    for f in touched:
        tensor = f.tensor if tensor is None else _outer(tensor, f.tensor)
    for r in extra:
        definite.pop(r)
        piece = np.ones((1, 1), dtype=complex)
        tensor = piece if tensor is None else _outer(tensor, piece)
    return group, supp, tensor, others, definite


def _split(regs: list[str], supp: list, t: np.ndarray, definite: dict, out: list) -> None:
    """Peel basis-state and product registers off a dense group."""
    regs = list(regs)
    supp = list(supp)
    t, supp = _compress(t, supp)
    while regs:
        n = len(regs)
        progress = False
        for i, r in enumerate(regs):
            red = _reduce(t, [i])
            diag = np.real(np.diag(red))
            x = int(np.argmax(diag))
            if diag[x] >= 1 - SNAP_TOL:
                definite[r] = supp[i][x]
                if n > 1:
                    t = _project(t, i, x)
                    t = t / _trace(t)
                regs.pop(i)
                supp.pop(i)
                progress = True
                break
            if n > 1:
                rest_axes = [j for j in range(n) if j != i]
                rest = _reduce(t, rest_axes)
                x4, _, _ = _axes_first(t, [i])
                prod = _outer(red, rest)
                if np.max(np.abs(x4 - prod.reshape(x4.shape))) <= SNAP_TOL:
                    out.append(Factor((r,), (supp[i],), red / np.trace(red)))
                    t = rest
                    regs.pop(i)
                    supp.pop(i)
                    progress = True
                    break
        if not progress:
            break
    if regs:
        t = t / _trace(t)
        out.append(Factor(tuple(regs), tuple(supp), t))


def _rebuild(state: DensityState, others, definite, group, supp, tensor, weight=None,
             spaces=None) -> DensityState:
    factors = list(others)
    if group:
        _split(group, supp, tensor, definite, factors)
    return DensityState(state.spaces if spaces is None else spaces, definite, factors,
                        state.weight if weight is None else weight)


# ---------------------------------------------------------------------------
# public operations


def basis_state(assignment: Mapping[str, tuple[LabeledSpace, str]]) -> DensityState:
    """Product of basis states, one per register: {reg: (space, label)}."""
    spaces = {r: sp for r, (sp, _) in assignment.items()}
    definite = {r: sp.index(lab) for r, (sp, lab) in assignment.items()}
    return DensityState(spaces, definite)


def make_basis_state(space: LabeledSpace, label: str, reg: str = "r0") -> DensityState:
    return basis_state({reg: (space, label)})


def from_matrix(registers: Sequence[tuple[str, LabeledSpace]], matrix) -> DensityState:
    """State over ``registers`` given as one dense density matrix."""
    regs = [r for r, _ in registers]
    dims = [sp.dim for _, sp in registers]
    m = np.asarray(matrix, dtype=complex)
    d = math.prod(dims)
    if m.shape != (d, d):
        raise ValidationError(f"matrix shape {m.shape} does not match dims {dims}")
    tr = np.trace(m)
    if abs(tr) < PRUNE_TOL:
        raise ValidationError("density matrix has zero trace")
    definite: dict[str, int] = {}
    factors: list[Factor] = []
    supp = [tuple(range(n)) for n in dims]
    _split(regs, supp, (m / tr).reshape(dims * 2), definite, factors)
    return DensityState(dict(registers), definite, factors)


def pure_state(registers: Sequence[tuple[str, LabeledSpace]], amplitudes) -> DensityState:
    v = np.asarray(amplitudes, dtype=complex).ravel()
    return from_matrix(registers, np.outer(v, v.conj()))


def tensor(a: DensityState, b: DensityState) -> DensityState:
    clash = set(a.spaces) & set(b.spaces)
    if clash:
        raise ValidationError(f"subsystems {sorted(clash)} appear in both states")
    return DensityState({**a.spaces, **b.spaces}, {**a.definite, **b.definite},
                        a.factors + b.factors, a.weight * b.weight)


def add_registers(state: DensityState, assignment: Mapping[str, tuple[LabeledSpace, str]]):
    return tensor(state, basis_state(assignment))


def partial_trace(state: DensityState, regs: Sequence[str]) -> DensityState:
    drop = set(regs)
    spaces = {r: sp for r, sp in state.spaces.items() if r not in drop}
    definite = {r: x for r, x in state.definite.items() if r not in drop}
    factors = []
    for f in state.factors:
        axes = [i for i, r in enumerate(f.regs) if r not in drop]
        if len(axes) == len(f.regs):
            factors.append(f)
        elif axes:
            _split([f.regs[i] for i in axes], [f.supp[i] for i in axes],
                   _reduce(f.tensor, axes), definite, factors)
    return DensityState(spaces, definite, factors, state.weight)


def _check_targets(state: DensityState, ch: KrausChannel, targets: Sequence[str]) -> None:
    dims = tuple(state.spaces[t].dim if t in state.spaces else -1 for t in targets)
    missing = [t for t in targets if t not in state.spaces]
    if missing:
        raise ValidationError(f"registers {missing} are not part of the state")
    if len(set(targets)) != len(targets):
        raise ValidationError(f"duplicate channel targets {list(targets)}")
    if dims != ch.dims:
        raise ValidationError(f"channel dims {ch.dims} do not match target dims {dims}")


def apply_operators(state: DensityState, ops: Sequence[np.ndarray],
                    targets: Sequence[str]) -> DensityState:
    """Apply rho -> sum K rho K^dag without any validity check."""
    group, supp, t, others, definite = _gather(state, targets)
    axes = [group.index(r) for r in targets]
    wide = list(supp)
    for i in axes:
        wide[i] = tuple(range(state.spaces[group[i]].dim))
    _check_size(group, wide)
    for i in axes:
        t = _embed(t, supp, i, state.spaces[group[i]].dim)
    t = _apply_ops(t, axes, ops)
    tr = float(np.real(_trace(t)))
    if tr <= PRUNE_TOL:
        raise ModelError("operation annihilated the state")
    return _rebuild(state, others, definite, group, supp, t / tr, weight=state.weight * tr)


def apply_channel(ch: KrausChannel, rho: DensityState, targets: Sequence[str]) -> DensityState:
    targets = list(targets)
    _check_targets(rho, ch, targets)
    report = validate_channel(ch)
    if not report.ok:
        raise ValidationError(report.message)
    return apply_operators(rho, ch.operators, targets)


def apply_unitary(rho: DensityState, matrix, targets: Sequence[str]) -> DensityState:
    dims = [rho.spaces[t].dim for t in targets]
    return apply_channel(KrausChannel.unitary(matrix, dims), rho, targets)


def measure_complete(rho: DensityState, target: str) -> dict[str, DensityState]:
    """Complete measurement of ``target`` in its computational basis.

    Returns label -> post-measurement state, whose weight is the prior weight
    times the outcome probability.  Outcomes below PRUNE_TOL are dropped.
    """
    space = rho.spaces.get(target)
    if space is None:
        raise ValidationError(f"register {target!r} is not part of the state")
    if target in rho.definite:
        return {space.labels[rho.definite[target]]: rho}
    fi = rho.factor_of(target)
    f = rho.factors[fi]
    i = f.regs.index(target)
    diag = _diagonals(f.tensor)[i]
    others = rho.factors[:fi] + rho.factors[fi + 1:]
    rest = [r for r in f.regs if r != target]
    rest_supp = [s for r, s in zip(f.regs, f.supp) if r != target]
    out = {}
    for j, x in sorted(enumerate(f.supp[i]), key=lambda e: e[1]):
        p = diag[j]
        if p <= PRUNE_TOL:
            continue
        definite = dict(rho.definite)
        definite[target] = x
        t = _project(f.tensor, i, j) / p
        out[space.labels[x]] = _rebuild(rho, others, definite, rest, rest_supp, t,
                                        weight=rho.weight * float(p))
    return out


def measure_registers(rho: DensityState, targets: Sequence[str]):
    """Measure several registers in turn; yields (labels tuple, state)."""
    branches = [((), rho)]
    for t in targets:
        branches = [(labs + (lab,), st)
                    for labs, s in branches
                    for lab, st in measure_complete(s, t).items()]
    return branches


def measure_partition(rho: DensityState, target: str,
                      key: Callable[[str], Hashable]) -> dict:
    """Projective measurement onto the subspaces grouping basis labels by ``key``.

    Coherence inside each group is preserved.  Zero-probability groups are
    omitted; the result is ordered by first basis index of each group.
    """
    space = rho.spaces.get(target)
    if space is None:
        raise ValidationError(f"register {target!r} is not part of the state")
    if target in rho.definite:
        return {key(space.labels[rho.definite[target]]): rho}
    fi = rho.factor_of(target)
    f = rho.factors[fi]
    i = f.regs.index(target)
    n = len(f.regs)
    local = f.supp[i]
    groups: dict = {}
    for j, x in sorted(enumerate(local), key=lambda e: e[1]):
        groups.setdefault(key(space.labels[x]), []).append(j)
    diag = _diagonals(f.tensor)[i]
    others = rho.factors[:fi] + rho.factors[fi + 1:]
    out = {}
    for g, idx in groups.items():
        p = float(sum(diag[j] for j in idx))
        if p <= PRUNE_TOL:
            continue
        mask = np.zeros(len(local))
        mask[idx] = 1.0
        shape_r = [1] * (2 * n)
        shape_r[i] = len(local)
        shape_c = [1] * (2 * n)
        shape_c[n + i] = len(local)
        t = f.tensor * mask.reshape(shape_r) * mask.reshape(shape_c)
        t = t / _trace(t)
        out[g] = _rebuild(rho, others, dict(rho.definite), list(f.regs), list(f.supp), t,
                          weight=rho.weight * p)
    return out


def measure_emptiness(rho: DensityState, target: str) -> dict[str, DensityState]:
    """Two-outcome measurement {|eps><eps|, 1 - |eps><eps|} on ``target``.

    Keys are "empty" and "nonempty"; zero-probability outcomes are omitted.
    Coherence inside the nonempty subspace is preserved.
    """
    space = rho.spaces.get(target)
    if space is None:
        raise ValidationError(f"register {target!r} is not part of the state")
    space.index(EPSILON)
    return measure_partition(rho, target, lambda lab: "empty" if lab == EPSILON else "nonempty")


def prepare(rho: DensityState, target: str, label: str = EPSILON) -> DensityState:
    """Discard ``target`` and re-prepare it in basis state ``label``."""
    space = rho.spaces.get(target)
    if space is None:
        raise ValidationError(f"register {target!r} is not part of the state")
    x = space.index(label)
    if rho.definite.get(target) == x:
        return rho
    traced = partial_trace(rho, [target])
    definite = dict(traced.definite)
    definite[target] = x
    return DensityState(rho.spaces, definite, traced.factors, rho.weight)


def prepare_epsilon(rho: DensityState, target: str) -> DensityState:
    return prepare(rho, target, EPSILON)


def move(rho: DensityState, src: str, dst: str) -> DensityState:
    """MOVE: dst receives the content of src, src is left holding epsilon."""
    if src == dst:
        raise ValidationError("move needs two distinct registers")
    for r in (src, dst):
        if r not in rho.spaces:
            raise ValidationError(f"register {r!r} is not part of the state")
    if rho.spaces[src].labels != rho.spaces[dst].labels:
        raise ValidationError(f"cannot move {src!r} to {dst!r}: different bases")
    traced = partial_trace(rho, [dst])
    definite = {}
    for r, x in traced.definite.items():
        definite[dst if r == src else r] = x
    factors = [Factor(tuple(dst if r == src else r for r in f.regs), f.supp, f.tensor)
               for f in traced.factors]
    definite[src] = rho.spaces[src].index(EPSILON)
    return DensityState(rho.spaces, definite, factors, rho.weight)


def apply_basis_map(rho: DensityState, regs: Sequence[str],
                    fn: Callable[[tuple[str, ...]], tuple[str, ...] | None],
                    error: type = ModelError) -> DensityState:
    """Apply the partial isometry |x> -> |fn(x)> on the joint basis of ``regs``.

    ``fn`` must be injective where defined and defined on the whole support of
    the state; otherwise a ModelError is raised.
    """
    regs = list(regs)
    spaces = [rho.spaces[r] for r in regs]
    if all(r in rho.definite for r in regs):
        labels = tuple(sp.labels[rho.definite[r]] for r, sp in zip(regs, spaces))
        image = fn(labels)
        if image is None:
            raise error(f"operation undefined on basis state {labels} of {regs}")
        definite = dict(rho.definite)
        for r, sp, lab in zip(regs, spaces, image):
            definite[r] = sp.index(lab)
        return DensityState(rho.spaces, definite, rho.factors, rho.weight)
    group, supp, t, others, definite = _gather(rho, regs)
    axes = [group.index(r) for r in regs]
    x, perm, pdims = _axes_first(t, axes)
    diag = np.real(np.einsum("axax->a", x))
    local = [supp[i] for i in axes]
    images: dict[tuple, int] = {}
    pairs = []
    for j, combo in enumerate(itertools.product(*local)):
        labels = tuple(sp.labels[c] for sp, c in zip(spaces, combo))
        image = fn(labels)
        if image is None:
            if diag[j] > PRUNE_TOL:
                raise error(f"operation undefined on part of the support of {regs}")
            continue
        key = tuple(sp.index(lab) for sp, lab in zip(spaces, image))
        if key in images:
            raise ModelError(f"basis map is not injective on {regs}")
        images[key] = j
        pairs.append((j, key))
    new_local = [tuple(sorted({k[a] for k in images})) for a in range(len(regs))]
    new_dims = [len(s) for s in new_local]
    dt = math.prod(new_dims)
    if dt * x.shape[1] > MAX_DENSE_DIM:
        _check_size(group, new_local + [(0,) * x.shape[1]])
    pos = [{v: n for n, v in enumerate(s)} for s in new_local]
    dom, tgt = [], []
    for j, key in pairs:
        k = 0
        for a, v in enumerate(key):
            k = k * new_dims[a] + pos[a][v]
        dom.append(j)
        tgt.append(k)
    rest = np.arange(x.shape[1])
    y = np.zeros((dt, x.shape[1], dt, x.shape[1]), dtype=complex)
    dom_a, tgt_a = np.array(dom, dtype=int), np.array(tgt, dtype=int)
    y[np.ix_(tgt_a, rest, tgt_a, rest)] = x[np.ix_(dom_a, rest, dom_a, rest)]
    pdims = new_dims + list(pdims[len(axes):])
    t = _axes_back(y, perm, pdims)
    for a, i in enumerate(axes):
        supp[i] = new_local[a]
    return _rebuild(rho, others, definite, group, supp, t / _trace(t))


def state_fidelity(rho: np.ndarray, psi) -> float:
    """<psi|rho|psi> for a pure target state."""
    v = np.asarray(psi, dtype=complex).ravel()
    return float(np.real(v.conj() @ np.asarray(rho) @ v))


# ---------------------------------------------------------------------------
# distributions

T = TypeVar("T", bound=Hashable)


@dataclass
class Distribution(Generic[T]):
    """Finite distribution; ``pruned_mass`` accounts for dropped branches."""

    entries: dict = field(default_factory=dict)
    pruned_mass: float = 0.0

    def __post_init__(self):
        if any(p < 0 for p in self.entries.values()):
            raise ValidationError("negative probability in distribution")
        if self.pruned_mass < 0:
            raise ValidationError("negative pruned mass")

    def __getitem__(self, outcome) -> float:
        return self.entries.get(outcome, 0.0)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def items(self):
        return self.entries.items()

    @property
    def total(self) -> float:
        return math.fsum(self.entries.values())

    def is_normalized(self, tol: float = TRACE_TOL) -> bool:
        return abs(self.total + self.pruned_mass - 1.0) <= tol

    def map(self, fn: Callable) -> "Distribution":
        """Push forward through ``fn``, summing probabilities of equal images."""
        acc: dict = {}
        for outcome, p in self.entries.items():
            key = fn(outcome)
            acc[key] = acc.get(key, 0.0) + p
        return Distribution(acc, self.pruned_mass)

    @classmethod
    def point(cls, outcome) -> "Distribution":
        return cls({outcome: 1.0})


def statistical_distance(d1: Distribution, d2: Distribution) -> float:
    """Total variation distance 1/2 sum |p1(x) - p2(x)| over the joint support."""
    support = set(d1.entries) | set(d2.entries)
    return 0.5 * math.fsum(abs(d1[x] - d2[x]) for x in support)
