"""Ports, machine definitions, buffers, canonisation and combination.

A machine's state-transition operator is a :class:`Transition`.  Applying a
transition maps one weighted state to a list of weighted states whose sum is
the transition's output; the list form lets unrecorded measurements inside a
transition be carried as separate branches instead of dense mixtures.
"""
from __future__ import annotations

import dataclasses
import itertools
import math
import re
import string
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import qcore
from .errors import MessageLengthError, QueueOverflowError, ValidationError
from .qcore import EPSILON, Alphabet, DensityState, KrausChannel, LabeledSpace

SIMPLE, BUFFER, CLOCK = "simple", "buffer", "clock"
IN, OUT = "in", "out"
_LABEL_MARK = {SIMPLE: "", BUFFER: "~", CLOCK: "<"}
_DIR_MARK = {IN: "?", OUT: "!"}
_PORT_RE = re.compile(r"^(?P<name>.+?)(?P<label>[~<↔◁]?)(?P<dir>[!?])$")
_RESERVED = set("!?~<,()+ \t\n↔◁")
MASTER_NAME = "clk"
# Buffers accept every security parameter up to this bound.
MAX_K = 16
_NUMERAL = re.compile(r"[1-9][0-9]*")


@dataclass(frozen=True, order=True)
class Port:
    name: str
    label: str = SIMPLE
    dir: str = OUT

    def __post_init__(self):
        if not self.name:
            raise ValidationError("port name must be non-empty")
        bad = _RESERVED & set(self.name)
        if bad:
            raise ValidationError(f"port name {self.name!r} uses reserved characters {sorted(bad)}")
        if self.label not in _LABEL_MARK:
            raise ValidationError(f"unknown port label {self.label!r}")
        if self.dir not in _DIR_MARK:
            raise ValidationError(f"unknown port direction {self.dir!r}")

    @property
    def text(self) -> str:
        return self.name + _LABEL_MARK[self.label] + _DIR_MARK[self.dir]

    def __str__(self):
        return self.text

    @property
    def is_in(self) -> bool:
        return self.dir == IN

    @property
    def is_out(self) -> bool:
        return self.dir == OUT

    @property
    def is_clock(self) -> bool:
        return self.label == CLOCK

    @classmethod
    def parse(cls, text: str) -> "Port":
        if text == "⊤":
            return MASTER_CLOCK
        m = _PORT_RE.match(text.strip())
        if not m:
            raise ValidationError(f"cannot parse port {text!r}")
        label = {"": SIMPLE, "~": BUFFER, "↔": BUFFER, "<": CLOCK, "◁": CLOCK}[m["label"]]
        return cls(m["name"], label, IN if m["dir"] == "?" else OUT)


MASTER_CLOCK = Port(MASTER_NAME, CLOCK, IN)

_COMPLEMENT = {
    (SIMPLE, OUT): (BUFFER, IN),
    (SIMPLE, IN): (BUFFER, OUT),
    (CLOCK, OUT): (CLOCK, IN),
    (BUFFER, IN): (SIMPLE, OUT),
    (BUFFER, OUT): (SIMPLE, IN),
    (CLOCK, IN): (CLOCK, OUT),
}


def complement(p: Port) -> Port:
    """Low-level complement: the port wired directly to ``p``."""
    label, d = _COMPLEMENT[(p.label, p.dir)]
    return Port(p.name, label, d)


def port_index(label: str) -> int | None:
    """Message index encoded by a clock-port word, or None if not a numeral."""
    return int(label) if _NUMERAL.fullmatch(label) else None


def split_pair(label: str) -> tuple[str, str]:
    """Split a combined label "(a,b)" at its top-level comma."""
    if not (label.startswith("(") and label.endswith(")")):
        raise ValidationError(f"{label!r} is not a pair label")
    inner = label[1:-1]
    depth = 0
    for i, ch in enumerate(inner):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            return inner[:i], inner[i + 1:]
    raise ValidationError(f"{label!r} is not a pair label")


def pair_label(a: str, b: str) -> str:
    return f"({a},{b})"


# ---------------------------------------------------------------------------
# transitions


class Transition:
    """Base class; subclasses implement ``apply`` and ``violations``."""

    def apply(self, state: DensityState, m: "MachineDef") -> list[DensityState]:
        raise NotImplementedError

    def violations(self, m: "MachineDef") -> list[str]:
        return []


@dataclass(frozen=True, eq=False)
class KrausTransition(Transition):
    """Dense channel over q, c, in-ports, out-ports (ports in declared order)."""

    channel: KrausChannel

    def apply(self, state, m):
        return [qcore.apply_operators(state, self.channel.operators, m.delta_registers())]

    def violations(self, m):
        dims = tuple(m.register_space(r).dim for r in m.delta_registers())
        if dims != self.channel.dims:
            return [f"Kraus dims {self.channel.dims} do not match machine dims {dims}"]
        report = qcore.validate_channel(self.channel)
        return [] if report.ok else [report.message]


# -- program instructions ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class Unitary:
    """Unitary on ``regs``; with ``labels`` it acts on the span of those labels only."""

    regs: tuple[str, ...]
    matrix: np.ndarray
    labels: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "regs", tuple(self.regs))
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=complex))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(tuple(x) for x in self.labels))


@dataclass(frozen=True, eq=False)
class Apply:
    """General channel on ``regs`` given by Kraus operators."""

    regs: tuple[str, ...]
    operators: tuple

    def __post_init__(self):
        object.__setattr__(self, "regs", tuple(self.regs))
        object.__setattr__(self, "operators",
                           tuple(np.asarray(k, dtype=complex) for k in self.operators))


@dataclass(frozen=True)
class Measure:
    reg: str
    var: str


@dataclass(frozen=True)
class Prepare:
    """Discard ``reg`` and prepare a basis state; ``$var`` substitutes measured values."""

    reg: str
    label: str


@dataclass(frozen=True)
class Move:
    """Move the content of ``src`` to ``dst`` (discarding dst); src becomes empty."""

    src: str
    dst: str


@dataclass(frozen=True)
class Copy:
    """Measure ``src`` and prepare the outcome in ``dst``."""

    src: str
    dst: str
    var: str | None = None


@dataclass(frozen=True)
class Map:
    """Coherent injective relabelling of the joint basis of ``regs``.

    The map is partial: the state must be supported on the listed basis
    states, otherwise the run stops with a model error.
    """

    regs: tuple[str, ...]
    mapping: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]

    def __post_init__(self):
        object.__setattr__(self, "regs", tuple(self.regs))
        items = self.mapping.items() if isinstance(self.mapping, Mapping) else self.mapping
        object.__setattr__(self, "mapping",
                           tuple((tuple(a), tuple(b)) for a, b in items))


@dataclass(frozen=True)
class Branch:
    var: str
    values: tuple[str, ...]
    then: tuple = ()
    orelse: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "then", tuple(self.then))
        object.__setattr__(self, "orelse", tuple(self.orelse))


@dataclass(frozen=True)
class Random:
    """Classical coin: bind ``var`` to label x with probability p."""

    var: str
    choices: tuple[tuple[str, float], ...]

    def __post_init__(self):
        items = self.choices.items() if isinstance(self.choices, Mapping) else self.choices
        object.__setattr__(self, "choices", tuple((str(a), float(p)) for a, p in items))


@dataclass(frozen=True)
class Lookup:
    """Classical stochastic table.

    Measures ``reads``; the tuple of outcomes selects a list of
    (probability, labels) rows, and the chosen labels are prepared in
    ``writes``.  Rows may use ``$var``.  Unlisted inputs leave ``writes`` alone.
    """

    reads: tuple[str, ...]
    writes: tuple[str, ...]
    table: tuple

    def __post_init__(self):
        object.__setattr__(self, "reads", tuple(self.reads))
        object.__setattr__(self, "writes", tuple(self.writes))
        items = self.table.items() if isinstance(self.table, Mapping) else self.table
        object.__setattr__(self, "table", tuple(
            (tuple(k), tuple((float(p), tuple(v)) for p, v in rows)) for k, rows in items))

    def rows(self):
        return dict(self.table)


def _embed(matrix: np.ndarray, spaces: Sequence[LabeledSpace], labels) -> np.ndarray:
    dims = [sp.dim for sp in spaces]
    total = math.prod(dims)
    if labels is None:
        return matrix
    idx = []
    for combo in itertools.product(*labels):
        k = 0
        for sp, lab in zip(spaces, combo):
            k = k * sp.dim + sp.index(lab)
        idx.append(k)
    full = np.eye(total, dtype=complex)
    ix = np.array(idx)
    full[np.ix_(ix, ix)] = matrix
    return full


def _label_from(template: str, env: Mapping[str, str]) -> str:
    try:
        return string.Template(template).substitute(env)
    except KeyError as exc:
        raise ValidationError(f"label template {template!r} uses unbound variable {exc}") from None


def _prepare_checked(state: DensityState, reg: str, label: str, m: "MachineDef") -> DensityState:
    space = state.spaces[reg]
    if label not in space:
        if m.alphabet.is_word(label) and len(label) > m.alphabet.max_len:
            raise MessageLengthError(
                f"{m.name} wrote {label!r} to {reg}: longer than max length {m.alphabet.max_len}")
        space.index(label)
    return qcore.prepare(state, reg, label)


@dataclass(frozen=True)
class Program(Transition):
    """Sequential instruction list compiled to a trace-preserving operation."""

    instructions: tuple

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))

    def apply(self, state, m):
        items = _run_block(self.instructions, [({}, state)], m)
        return [st for _, st in items]

    def violations(self, m):
        return _check_block(self.instructions, m, set())


def _run_block(block, items, m):
    for ins in block:
        items = _run_one(ins, items, m)
    return items


def _run_one(ins, items, m):
    out = []
    if isinstance(ins, Unitary):
        regs = [m.reg(r) for r in ins.regs]
        for env, st in items:
            full = _embed(ins.matrix, [st.spaces[r] for r in regs], ins.labels)
            out.append((env, qcore.apply_operators(st, [full], regs)))
    elif isinstance(ins, Apply):
        regs = [m.reg(r) for r in ins.regs]
        for env, st in items:
            out.append((env, qcore.apply_operators(st, ins.operators, regs)))
    elif isinstance(ins, Measure):
        reg = m.reg(ins.reg)
        for env, st in items:
            for lab, sub in qcore.measure_complete(st, reg).items():
                out.append(({**env, ins.var: lab}, sub))
    elif isinstance(ins, Prepare):
        reg = m.reg(ins.reg)
        for env, st in items:
            out.append((env, _prepare_checked(st, reg, _label_from(ins.label, env), m)))
    elif isinstance(ins, Move):
        src, dst = m.reg(ins.src), m.reg(ins.dst)
        for env, st in items:
            dst_space = st.spaces[dst]
            st = qcore.prepare(st, dst, EPSILON)

            def fn(labs, dst_space=dst_space):
                a, b = labs
                if b != EPSILON or a not in dst_space:
                    return None
                return (EPSILON, a)
            out.append((env, qcore.apply_basis_map(st, [src, dst], fn, MessageLengthError)))
    elif isinstance(ins, Copy):
        src, dst = m.reg(ins.src), m.reg(ins.dst)
        for env, st in items:
            for lab, sub in qcore.measure_complete(st, src).items():
                e = {**env, ins.var: lab} if ins.var else env
                out.append((e, _prepare_checked(sub, dst, lab, m)))
    elif isinstance(ins, Map):
        regs = [m.reg(r) for r in ins.regs]
        table = dict(ins.mapping)
        for env, st in items:
            out.append((env, qcore.apply_basis_map(st, regs, table.get)))
    elif isinstance(ins, Branch):
        yes = [(env, st) for env, st in items if env.get(ins.var) in ins.values]
        no = [(env, st) for env, st in items if env.get(ins.var) not in ins.values]
        out = _run_block(ins.then, yes, m) + _run_block(ins.orelse, no, m)
    elif isinstance(ins, Random):
        for env, st in items:
            for lab, p in ins.choices:
                if p > 0:
                    out.append(({**env, ins.var: lab}, st.with_weight(st.weight * p)))
    elif isinstance(ins, Lookup):
        reads = [m.reg(r) for r in ins.reads]
        writes = [m.reg(r) for r in ins.writes]
        rows = ins.rows()
        for env, st in items:
            for labs, sub in qcore.measure_registers(st, reads):
                choices = rows.get(labs)
                if choices is None:
                    out.append((env, sub))
                    continue
                for p, values in choices:
                    if p <= 0:
                        continue
                    branch = sub.with_weight(sub.weight * p)
                    for reg, tpl in zip(writes, values):
                        branch = _prepare_checked(branch, reg, _label_from(tpl, env), m)
                    out.append((env, branch))
    else:
        raise ValidationError(f"unknown instruction {ins!r}")
    return out


def _check_block(block, m, bound: set) -> list[str]:
    problems = []

    def space_of(ref):
        try:
            return m.register_space(m.reg(ref))
        except ValidationError as exc:
            problems.append(str(exc))
            return None

    def check_label(ref, tpl):
        sp = space_of(ref)
        if sp is None or "$" in tpl:
            return
        if tpl not in sp:
            problems.append(f"label {qcore.render_label(tpl)!r} not in space of {ref}")

    for ins in block:
        if isinstance(ins, Unitary):
            spaces = [space_of(r) for r in ins.regs]
            if None in spaces:
                continue
            if not qcore.is_unitary(ins.matrix):
                problems.append(f"matrix on {list(ins.regs)} is not unitary")
                continue
            try:
                if ins.labels is not None:
                    if len(ins.labels) != len(spaces):
                        problems.append("unitary needs one label list per register")
                        continue
                    size = math.prod(len(x) for x in ins.labels)
                    for sp, labs in zip(spaces, ins.labels):
                        for lab in labs:
                            sp.index(lab)
                else:
                    size = math.prod(sp.dim for sp in spaces)
            except ValidationError as exc:
                problems.append(str(exc))
                continue
            if ins.matrix.shape != (size, size):
                problems.append(f"unitary on {list(ins.regs)} must be {size}x{size}")
        elif isinstance(ins, Apply):
            spaces = [space_of(r) for r in ins.regs]
            if None in spaces:
                continue
            try:
                ch = KrausChannel(ins.operators, [sp.dim for sp in spaces])
            except ValidationError as exc:
                problems.append(str(exc))
                continue
            report = qcore.validate_channel(ch)
            if not report.ok:
                problems.append(report.message)
        elif isinstance(ins, Measure):
            space_of(ins.reg)
            bound = bound | {ins.var}
        elif isinstance(ins, Prepare):
            check_label(ins.reg, ins.label)
        elif isinstance(ins, Move):
            space_of(ins.src)
            space_of(ins.dst)
        elif isinstance(ins, Copy):
            space_of(ins.src)
            space_of(ins.dst)
            if ins.var:
                bound = bound | {ins.var}
        elif isinstance(ins, Map):
            spaces = [space_of(r) for r in ins.regs]
            if None in spaces:
                continue
            table = dict(ins.mapping)
            if len(table) != len(ins.mapping):
                problems.append("map lists a basis state twice")
            try:
                for a, b in ins.mapping:
                    if len(a) != len(spaces) or len(b) != len(spaces):
                        raise ValidationError("map entries must give one label per register")
                    for sp, lab in zip(spaces, a):
                        sp.index(lab)
                    for sp, lab in zip(spaces, b):
                        sp.index(lab)
            except ValidationError as exc:
                problems.append(str(exc))
                continue
            if len(set(table.values())) != len(table):
                problems.append(f"map on {list(ins.regs)} is not injective")
        elif isinstance(ins, Branch):
            problems += _check_block(ins.then, m, bound)
            problems += _check_block(ins.orelse, m, bound)
        elif isinstance(ins, Random):
            total = math.fsum(p for _, p in ins.choices)
            if any(p < 0 for _, p in ins.choices) or abs(total - 1) > qcore.TRACE_TOL:
                problems.append(f"random choice for {ins.var!r} does not sum to 1 ({total})")
            bound = bound | {ins.var}
        elif isinstance(ins, Lookup):
            rspaces = [space_of(r) for r in ins.reads]
            wspaces = [space_of(r) for r in ins.writes]
            if None in rspaces or None in wspaces:
                continue
            for key, rows in ins.table:
                if len(key) != len(rspaces):
                    problems.append(f"table key {key} has wrong arity")
                    continue
                total = math.fsum(p for p, _ in rows)
                if any(p < 0 for p, _ in rows) or abs(total - 1) > qcore.TRACE_TOL:
                    problems.append(f"table row {key} does not sum to 1 ({total})")
                for _, vals in rows:
                    if len(vals) != len(wspaces):
                        problems.append(f"table row {key} writes wrong number of labels")
                        continue
                    for ref, v in zip(ins.writes, vals):
                        check_label(ref, v)
        else:
            problems.append(f"unknown instruction {ins!r}")
    return problems


# -- wrapped transitions -----------------------------------------------------


@dataclass(frozen=True)
class CanonisedTransition(Transition):
    """Guarded form of ``inner``.

    Measures the classical state and the emptiness of every in-port, erases
    in-ports whose length function is 0, and applies ``inner`` only if the
    state is not final and some in-port was nonempty.
    """

    inner: Transition

    def apply(self, state, m):
        out = []
        creg = m.reg("c")
        for s, st in qcore.measure_complete(state, creg).items():
            branches = [(st, False)]
            for p in m.in_ports:
                nxt = []
                for b, seen in branches:
                    for outcome, sub in qcore.measure_emptiness(b, p.text).items():
                        nxt.append((sub, seen or outcome == "nonempty"))
                branches = nxt
            for b, nonempty in branches:
                for p in m.in_ports:
                    if (s, p.text) in m.erase:
                        b = qcore.prepare(b, p.text, EPSILON)
                if s not in m.fin and nonempty:
                    out.extend(self.inner.apply(b, m))
                else:
                    out.append(b)
        return out

    def violations(self, m):
        return self.inner.violations(m)


@dataclass(frozen=True)
class BufferTransition(Transition):
    """The buffer operator: append input, read the clock index, release message i."""

    queue_cap: int

    def apply(self, state, m):
        name = m.buffer_of
        q, inp, clk, outp = m.reg("q"), f"{name}~?", f"{name}<?", f"{name}~!"
        cap = self.queue_cap
        out = []
        appended = []
        for outcome, st in qcore.measure_emptiness(state, inp).items():
            if outcome == "nonempty":
                def push(labs):
                    queue, msg = labs
                    items = decode_queue(queue)
                    if msg == EPSILON or len(items) >= cap:
                        return None
                    return (encode_queue(items + [msg]), EPSILON)
                try:
                    st = qcore.apply_basis_map(st, [q, inp], push, QueueOverflowError)
                except QueueOverflowError:
                    raise QueueOverflowError(
                        f"buffer {m.name}: queue already holds {cap} messages") from None
            appended.append(st)
        for st in appended:
            for i, st_i in qcore.measure_complete(st, clk).items():
                st_i = qcore.prepare(st_i, outp, EPSILON)
                by_len = qcore.measure_partition(st_i, q, lambda lab: len(decode_queue(lab)))
                for n, st_n in by_len.items():
                    idx = port_index(i)
                    if idx is not None and idx <= n:
                        def pop(labs, idx=idx):
                            items = decode_queue(labs[0])
                            msg = items.pop(idx - 1)
                            return (encode_queue(items), msg)
                        st_n = qcore.apply_basis_map(st_n, [q, outp], pop)
                    out.append(st_n)
        return out


def encode_queue(messages: Sequence[str]) -> str:
    return ",".join(messages)


def decode_queue(label: str) -> list[str]:
    return label.split(",") if label else []


def queue_space(msg_space: LabeledSpace, cap: int) -> LabeledSpace:
    words = [w for w in msg_space.labels if w != EPSILON]
    labels = [EPSILON]
    for n in range(1, cap + 1):
        labels.extend(encode_queue(c) for c in itertools.product(words, repeat=n))
    return LabeledSpace(tuple(labels))


# ---------------------------------------------------------------------------
# machines


@dataclass(frozen=True, eq=False)
class MachineDef:
    """A single machine: name, ports, classical ports, state spaces, delta, l, Fin.

    The length function is stored as ``erase``, the set of
    (classical state, in-port text) pairs mapped to 0; all others map to infinity.
    """

    name: str
    ports: tuple[Port, ...]
    cports: frozenset
    qstates: LabeledSpace
    cstates: LabeledSpace
    delta: Transition
    fin: frozenset = frozenset()
    erase: frozenset = frozenset()
    alphabet: Alphabet = field(default_factory=Alphabet)
    buffer_of: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "ports", tuple(self.ports))
        object.__setattr__(self, "cports", frozenset(self.cports))
        object.__setattr__(self, "fin", frozenset(self.fin))
        object.__setattr__(self, "erase", frozenset(
            (s, p.text if isinstance(p, Port) else p) for s, p in self.erase))

    def __repr__(self):
        return f"MachineDef({self.name!r}, ports={[p.text for p in self.ports]})"

    @property
    def kind(self) -> str:
        if self.buffer_of is not None:
            return "buffer"
        return "master" if MASTER_CLOCK in self.ports else "simple"

    @property
    def components(self) -> tuple:
        return ()

    def leaves(self) -> tuple["MachineDef", ...]:
        return (self,)

    @property
    def in_ports(self) -> tuple[Port, ...]:
        return tuple(p for p in self.ports if p.is_in)

    @property
    def out_ports(self) -> tuple[Port, ...]:
        return tuple(p for p in self.ports if p.is_out)

    def port_space(self, p: Port) -> LabeledSpace:
        return self.alphabet.clock_space() if p.is_clock else self.alphabet.space()

    def reg(self, ref: str) -> str:
        if ref == "q":
            return f"{self.name}.q"
        if ref == "c":
            return f"{self.name}.c"
        for p in self.ports:
            if p.text == ref:
                return ref
        try:
            p = Port.parse(ref)
        except ValidationError:
            p = None
        if p is not None and p in self.ports:
            return p.text
        raise ValidationError(f"machine {self.name!r} has no register or port {ref!r}")

    def register_space(self, reg: str) -> LabeledSpace:
        if reg == f"{self.name}.q":
            return self.qstates
        if reg == f"{self.name}.c":
            return self.cstates
        for p in self.ports:
            if p.text == reg:
                return self.port_space(p)
        raise ValidationError(f"machine {self.name!r} has no register {reg!r}")

    def delta_registers(self) -> list[str]:
        return ([self.reg("q"), self.reg("c")] + [p.text for p in self.in_ports]
                + [p.text for p in self.out_ports])

    def registers(self) -> list[tuple[str, LabeledSpace]]:
        """Every register this machine owns (its state and its ports)."""
        regs = [(self.reg("q"), self.qstates), (self.reg("c"), self.cstates)]
        return regs + [(p.text, self.port_space(p)) for p in self.ports]

    def initial_labels(self, k: int) -> dict[str, str]:
        init = "1" * k
        if init not in self.cstates:
            raise ValidationError(f"machine {self.name!r} has no classical state 1^{k}")
        if EPSILON not in self.qstates:
            raise ValidationError(f"machine {self.name!r} has no quantum state ε")
        return {self.reg("q"): EPSILON, self.reg("c"): init}

    def classical_registers(self) -> list[str]:
        return [self.reg("c")]

    def state_label(self, labels: Sequence[str]) -> str:
        return labels[0]

    def is_final(self, labels: Sequence[str]) -> bool:
        return labels[0] in self.fin

    def erased(self, labels: Sequence[str], p: Port) -> bool:
        return (labels[0], p.text) in self.erase

    def apply_delta(self, state: DensityState) -> list[DensityState]:
        return self.delta.apply(state, self)

    @property
    def is_canonised(self) -> bool:
        return isinstance(self.delta, CanonisedTransition)


@dataclass(frozen=True, eq=False)
class CombinedMachine:
    """Two canonised machines run side by side as one machine."""

    first: object
    second: object

    @property
    def name(self) -> str:
        return f"{_wrap(self.first.name)}+{_wrap(self.second.name)}"

    def __repr__(self):
        return f"CombinedMachine({self.name!r})"

    @property
    def components(self) -> tuple:
        return (self.first, self.second)

    def leaves(self) -> tuple[MachineDef, ...]:
        return self.first.leaves() + self.second.leaves()

    @property
    def ports(self) -> tuple[Port, ...]:
        return self.first.ports + self.second.ports

    @property
    def cports(self) -> frozenset:
        return self.first.cports | self.second.cports

    @property
    def alphabet(self) -> Alphabet:
        return self.first.alphabet

    @property
    def kind(self) -> str:
        return "master" if MASTER_CLOCK in self.ports else "simple"

    @property
    def in_ports(self) -> tuple[Port, ...]:
        return tuple(p for p in self.ports if p.is_in)

    @property
    def out_ports(self) -> tuple[Port, ...]:
        return tuple(p for p in self.ports if p.is_out)

    @property
    def qstates(self) -> LabeledSpace:
        return LabeledSpace(tuple(pair_label(a, b) for a in self.first.qstates.labels
                                  for b in self.second.qstates.labels))

    @property
    def cstates(self) -> LabeledSpace:
        return LabeledSpace(tuple(pair_label(a, b) for a in self.first.cstates.labels
                                  for b in self.second.cstates.labels))

    @property
    def fin(self) -> frozenset:
        return frozenset(pair_label(a, b) for a in self.first.fin for b in self.second.fin)

    def port_space(self, p: Port) -> LabeledSpace:
        return self.alphabet.clock_space() if p.is_clock else self.alphabet.space()

    def owner(self, p: Port):
        return self.first if p in self.first.ports else self.second

    def registers(self):
        return self.first.registers() + self.second.registers()

    def initial_labels(self, k: int) -> dict[str, str]:
        return {**self.first.initial_labels(k), **self.second.initial_labels(k)}

    def classical_registers(self) -> list[str]:
        return self.first.classical_registers() + self.second.classical_registers()

    def _split(self, labels):
        n = len(self.first.classical_registers())
        return labels[:n], labels[n:]

    def state_label(self, labels) -> str:
        a, b = self._split(labels)
        return pair_label(self.first.state_label(a), self.second.state_label(b))

    def is_final(self, labels) -> bool:
        a, b = self._split(labels)
        return self.first.is_final(a) and self.second.is_final(b)

    def erased(self, labels, p: Port) -> bool:
        # Ports of a component sitting in a final state are switched off.
        a, b = self._split(labels)
        comp, own = (self.first, a) if p in self.first.ports else (self.second, b)
        return comp.is_final(own) or comp.erased(own, p)

    def apply_delta(self, state):
        out = []
        for st in self.first.apply_delta(state):
            out.extend(self.second.apply_delta(st))
        return out

    @property
    def is_canonised(self) -> bool:
        return True


def _wrap(name: str) -> str:
    return f"({name})" if "+" in name else name


# ---------------------------------------------------------------------------
# validation, buffers, canonisation, combination


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str]

    def raise_if_failed(self, what: str = "machine"):
        if not self.ok:
            raise ValidationError(f"invalid {what}: " + "; ".join(self.violations),
                                  self.violations)


def validate_machine(m, ks: Sequence[int] = (1,)) -> ValidationReport:
    problems = []
    if isinstance(m, CombinedMachine):
        for comp in m.components:
            problems += validate_machine(comp, ks).violations
        shared = set(m.first.ports) & set(m.second.ports)
        if shared:
            problems.append(f"components share ports {sorted(p.text for p in shared)}")
        return ValidationReport(not problems, problems)
    if not m.name:
        problems.append("machine name must be non-empty")
    reserved = set("+(),~") if m.buffer_of is None else set("+(),")
    if reserved & set(m.name):
        problems.append(f"machine name {m.name!r} uses reserved characters")
    if len(set(m.ports)) != len(m.ports):
        problems.append("port sequence contains duplicates")
    if not m.cports <= set(m.ports):
        problems.append("classical ports must be ports of the machine")
    for p in m.ports:
        if p.name == MASTER_NAME and p != MASTER_CLOCK:
            problems.append(f"port name {MASTER_NAME!r} is reserved for the master clock")
        if p.is_clock and p not in m.cports:
            problems.append(f"clock port {p.text} is quantum: all clock-ports are classical")
    if m.buffer_of is None:
        for p in m.ports:
            if p.label == BUFFER:
                problems.append(f"port {p.text} is a buffer port; only buffers may have it")
            if p.is_clock and p.is_in and p != MASTER_CLOCK:
                problems.append(f"clock in-port {p.text} is reserved for buffers")
    if EPSILON not in m.qstates:
        problems.append("quantum states must contain ε (the initial quantum state)")
    for k in ks:
        if "1" * k not in m.cstates:
            problems.append(f"classical states must contain 1^{k}")
    if not m.fin <= set(m.cstates.labels):
        problems.append(f"final states {sorted(m.fin - set(m.cstates.labels))} are not classical states")
    in_texts = {p.text for p in m.in_ports}
    for s, p in m.erase:
        if s not in m.cstates:
            problems.append(f"length function names unknown state {s!r}")
        if p not in in_texts:
            problems.append(f"length function names {p!r}, which is not an in-port")
    try:
        problems += m.delta.violations(m)
    except ValidationError as exc:
        problems.append(str(exc))
    return ValidationReport(not problems, problems)


def make_buffer(name: str, queue_cap: int = 4, alphabet: Alphabet | None = None) -> MachineDef:
    """Buffer machine for connection ``name``: ports name~?, name~!, name<?."""
    if queue_cap < 1:
        raise ValidationError("queue capacity must be at least 1")
    alphabet = alphabet or Alphabet()
    clock_in = Port(name, CLOCK, IN)
    return MachineDef(
        name=f"{name}~",
        ports=(Port(name, BUFFER, IN), Port(name, BUFFER, OUT), clock_in),
        cports=frozenset([clock_in]),
        qstates=queue_space(alphabet.space(), queue_cap),
        cstates=LabeledSpace(tuple("1" * k for k in range(1, MAX_K + 1))),
        delta=BufferTransition(queue_cap),
        fin=frozenset(),
        alphabet=alphabet,
        buffer_of=name,
    )


def buffer_transition(state: DensityState, buffer: MachineDef) -> list[DensityState]:
    """Apply the buffer operator; returns the weighted branches it produces."""
    if buffer.kind != "buffer":
        raise ValidationError(f"{buffer.name!r} is not a buffer")
    return buffer.apply_delta(state)


def canonise(m):
    """Replace the transition by its guarded form."""
    if m.kind == "buffer":
        raise ValidationError("buffers cannot be canonised")
    if isinstance(m, CombinedMachine):
        # Both halves are already guarded, so the combination acts canonically.
        return m
    return dataclasses.replace(m, delta=CanonisedTransition(m.delta))


def combine(m1, m2) -> CombinedMachine:
    for m in (m1, m2):
        if m.kind == "buffer":
            raise ValidationError(f"cannot combine buffer {m.name!r}")
    shared = set(m1.ports) & set(m2.ports)
    if shared:
        raise ValidationError(f"machines share ports {sorted(p.text for p in shared)}")
    if m1.alphabet != m2.alphabet:
        raise ValidationError("machines use different alphabets")
    c1 = m1 if m1.is_canonised else canonise(m1)
    c2 = m2 if m2.is_canonised else canonise(m2)
    return CombinedMachine(c1, c2)


def combine_all(machines: Sequence) -> CombinedMachine:
    """Right-nested combination of two or more machines."""
    if len(machines) < 2:
        raise ValidationError("combination needs at least two machines")
    if len(machines) == 2:
        return combine(machines[0], machines[1])
    return combine(machines[0], combine_all(machines[1:]))
