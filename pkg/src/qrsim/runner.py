"""The run algorithm: message-driven activation of machines in a closed collection.

Every measurement in the run forks the execution.  Branches are explored
depth first in basis order, and each leaf contributes its trace with the
branch weight.  The budget bounds the number of switching activations
(records); a run that would switch once more ends in a truncated leaf.
Branches dropped for negligible weight are accounted in
``pruned_mass``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from . import qcore
from .errors import ValidationError
from .machine import SIMPLE, CombinedMachine, Port, split_pair
from .network import Collection, completion, free, master_schedulers, validate_collection
from .machine import MASTER_CLOCK
from .qcore import EPSILON, DensityState, Distribution

_ROUNDING = 1e-13


@dataclass(frozen=True)
class RunConfig:
    k: int = 1
    max_activations: int = 64
    prune_eps: float = 0.0
    queue_cap: int = 4

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("security parameter k must be positive")
        if self.max_activations < 0:
            raise ValidationError("activation budget must be non-negative")
        if not 0 <= self.prune_eps < 1:
            raise ValidationError("prune_eps must lie in [0, 1)")
        if self.queue_cap < 1:
            raise ValidationError("queue capacity must be at least 1")


@dataclass(frozen=True, order=True)
class TraceRecord:
    """One activation: (name, s, I, s', O, P) with I, O as (port, value) pairs."""

    name: str
    s: str
    I: tuple = ()
    s_prime: str = ""
    O: tuple = ()
    P: tuple = ()

    def inputs(self) -> dict[str, str]:
        return dict(self.I)

    def outputs(self) -> dict[str, str]:
        return dict(self.O)


@dataclass(frozen=True, order=True)
class Trace:
    records: tuple = ()
    truncated: bool = False


# A view has the same shape as a trace: the records of one machine.
View = Trace


@dataclass
class RunResult:
    distribution: Distribution
    config: RunConfig
    leaves: list = field(default_factory=list)

    @property
    def truncated_mass(self) -> float:
        return math.fsum(p for t, p in self.distribution.items() if t.truncated)

    @property
    def defect(self) -> float:
        return self.distribution.pruned_mass + self.truncated_mass


def prepare_collection(c, cfg: RunConfig) -> Collection:
    """Complete ``c`` and check it can be run."""
    c = c if isinstance(c, Collection) else Collection(c)
    full = completion(c, cfg.queue_cap)
    dangling = free(full) - {MASTER_CLOCK}
    if dangling or MASTER_CLOCK not in free(full):
        shown = ", ".join(sorted(p.text for p in dangling)) or "no master clock port"
        raise ValidationError(f"collection is not closed: {shown}")
    masters = master_schedulers(full)
    if len(masters) != 1:
        raise ValidationError(
            f"a run needs exactly one master scheduler, found {[m.name for m in masters]}")
    problems = validate_collection(full, ks=(cfg.k,))
    if problems:
        raise ValidationError("invalid machines: " + "; ".join(problems), problems)
    return full


def initial_state(c, k: int, queue_cap: int = 4) -> DensityState:
    """Every machine in state (ε, 1^k) with all ports empty."""
    full = completion(c if isinstance(c, Collection) else Collection(c), queue_cap)
    assignment = {}
    for m in full:
        for reg, space in m.registers():
            assignment[reg] = (space, EPSILON)
        for reg, label in m.initial_labels(k).items():
            space = assignment[reg][0]
            assignment[reg] = (space, label)
    return qcore.basis_state(assignment)


class _Engine:
    def __init__(self, c: Collection, cfg: RunConfig, keep_states: bool):
        self.c = c
        self.cfg = cfg
        self.keep = keep_states
        self.master = master_schedulers(c)[0]
        self.buffers = {m.buffer_of: m for m in c if m.kind == "buffer"}
        self.receiver = {}
        for m in c:
            for p in m.ports:
                if p.label == SIMPLE and p.is_in:
                    self.receiver[p.name] = m
        self.leaves: dict[Trace, list[float]] = {}
        self.states: list = []
        self.pruned: list[float] = []
        self.stack: list = []

    # -- bookkeeping --------------------------------------------------------

    def _lost(self, parent: float, children) -> None:
        gap = parent - math.fsum(children)
        # ignore floating-point noise; real drops are recorded by size
        if gap > _ROUNDING * max(parent, 1e-300):
            self.pruned.append(gap)

    def _measure(self, fn, st, *args):
        out = fn(st, *args)
        self._lost(st.weight, [s.weight for s in out.values()])
        return out.items()

    def _measure_all(self, st, regs):
        out = qcore.measure_registers(st, regs)
        self._lost(st.weight, [s.weight for _, s in out])
        return out

    def _delta(self, m, st):
        out = m.apply_delta(st)
        self._lost(st.weight, [s.weight for s in out])
        return out

    def _leaf(self, st, records, truncated=False):
        trace = Trace(tuple(records), truncated)
        self.leaves.setdefault(trace, []).append(st.weight)
        if self.keep:
            self.states.append((trace, st))

    def _push(self, frame):
        st = frame[1]
        if st.weight < self.cfg.prune_eps:
            self.pruned.append(st.weight)
            return
        self.stack.append(frame)

    # -- the loop -----------------------------------------------------------

    def run(self) -> RunResult:
        st = initial_state(self.c, self.cfg.k, self.cfg.queue_cap)
        self.stack.append(("master", st, ()))
        while self.stack:
            frame = self.stack.pop()
            if frame[0] == "master":
                _, st, records = frame
                st = qcore.prepare(st, MASTER_CLOCK.text, "1")
                self._activate(st, records, self.master, True)
            else:
                _, st, records, mcs = frame
                self._activate(st, records, mcs, False)
        entries = {t: math.fsum(ws) for t, ws in sorted(self.leaves.items())}
        dist = Distribution(entries, math.fsum(self.pruned))
        states = sorted(self.states, key=lambda x: x[0]) if self.keep else []
        return RunResult(dist, self.cfg, states)

    def _activate(self, st, records, mcs, via_master):
        # classical state before activation, termination test
        for labels, st in self._measure_all(st, mcs.classical_registers()):
            if mcs.is_final(labels):
                if mcs is self.master:
                    self._leaf(st, records)
                else:
                    self._push(("master", st, records))
                continue
            s = mcs.state_label(labels)
            # length-function erasure
            for p in mcs.in_ports:
                if mcs.erased(labels, p):
                    st = qcore.prepare(st, p.text, EPSILON)
            # classical inputs
            in_c = [p for p in mcs.in_ports if p in mcs.cports]
            for in_labels, st6 in self._measure_all(st, [p.text for p in in_c]):
                I = tuple(zip((p.text for p in in_c), in_labels))
                # which in-ports are nonempty
                branches = [(st6, ())]
                for p in mcs.in_ports:
                    nxt = []
                    for b, P in branches:
                        for outcome, sub in self._measure(qcore.measure_emptiness, b, p.text):
                            nxt.append((sub, P + (p.text,) if outcome == "nonempty" else P))
                    branches = nxt
                for st7, P in branches:
                    if not P:
                        if via_master:
                            # The master clock input was erased and nothing else is
                            # pending: every further iteration repeats this one
                            # without adding records, so the trace is final.
                            self._leaf(st7, records)
                        else:
                            self._push(("master", st7, records))
                        continue
                    if len(records) >= self.cfg.max_activations:
                        # The budget counts switching activations, i.e. records.
                        self._leaf(st7, records, truncated=True)
                        continue
                    self._switch(st7, records, mcs, s, I, P)

    def _switch(self, st, records, mcs, s, I, P):
        out_c = [p for p in mcs.out_ports if p in mcs.cports]
        # apply the transition
        for st8 in self._delta(mcs, st):
            # classical state after activation and classical outputs
            for labels, st9 in self._measure_all(st8, mcs.classical_registers()):
                s_prime = mcs.state_label(labels)
                for out_labels, st9b in self._measure_all(st9, [p.text for p in out_c]):
                    O = tuple(zip((p.text for p in out_c), out_labels))
                    recs = records + (TraceRecord(mcs.name, s, I, s_prime, O, P),)
                    for st11 in self._to_buffers(st9b, mcs):
                        self._schedule(st11, recs, mcs, dict(O))

    def _to_buffers(self, st, mcs):
        # move nonempty simple outputs into their buffers
        items = [st]
        for p in mcs.out_ports:
            if p.label != SIMPLE:
                continue
            nxt = []
            for b in items:
                for outcome, sub in self._measure(qcore.measure_emptiness, b, p.text):
                    if outcome == "nonempty":
                        buf = self.buffers[p.name]
                        sub = qcore.move(sub, p.text, f"{p.name}~?")
                        nxt.extend(self._delta(buf, sub))
                    else:
                        nxt.append(sub)
            items = nxt
        return items

    def _schedule(self, st, records, mcs, O):
        # clear the ports of the current machine
        for p in mcs.ports:
            st = qcore.prepare(st, p.text, EPSILON)
        # first clock out-port with output
        chosen = None
        for p in mcs.ports:
            if p.is_clock and p.is_out and O.get(p.text, EPSILON) != EPSILON:
                chosen = p
                break
        if chosen is None:
            self._push(("master", st, records))
            return
        # feed the index to the buffer
        name = chosen.name
        buf = self.buffers[name]
        st = qcore.prepare(st, f"{name}<?", O[chosen.text])
        for b in self._delta(buf, st):
            # The index is consumed by this switch; leaving it would make the
            # next enqueue on this buffer release a message nobody delivers.
            b = qcore.prepare(b, f"{name}<?", EPSILON)
            for outcome, sub in self._measure(qcore.measure_emptiness, b, f"{name}~!"):
                if outcome == "empty":
                    self._push(("master", sub, records))
                    continue
                # deliver and activate the recipient
                sub = qcore.move(sub, f"{name}~!", f"{name}?")
                self._push(("loop", sub, records, self.receiver[name]))


def explore(c, cfg: RunConfig, keep_states: bool = False) -> RunResult:
    """Run a closed collection and return the trace distribution with details."""
    full = prepare_collection(c, cfg)
    return _Engine(full, cfg, keep_states).run()


def run(c, cfg: RunConfig) -> Distribution:
    return explore(c, cfg).distribution


def view(runs: Distribution, machine_name: str) -> Distribution:
    """Distribution of the subsequence of records belonging to one machine."""
    def restrict(t: Trace) -> View:
        return View(tuple(r for r in t.records if r.name == machine_name), t.truncated)
    out = runs.map(restrict)
    return Distribution(dict(sorted(out.entries.items())), out.pruned_mass)


def _project_record(rec: TraceRecord, combined: CombinedMachine, component: int):
    comp = combined.components[component]
    texts = {p.text for p in comp.ports}
    if not texts & set(rec.P):
        return None
    s = split_pair(rec.s)[component]
    s_prime = split_pair(rec.s_prime)[component]
    I = tuple((p, v) for p, v in rec.I if p in texts)
    O = tuple((p, v) for p, v in rec.O if p in texts)
    return TraceRecord(comp.name, s, I, s_prime, O, rec.P)


def project_combined_view(v, combined: CombinedMachine, component: int):
    """Recover one component's view from the view of a combination.

    ``component`` is 0 for the first and 1 for the second machine.  Accepts a
    single view or a distribution of views.
    """
    if component not in (0, 1):
        raise ValidationError("component must be 0 or 1")
    if isinstance(v, Distribution):
        out = v.map(lambda x: project_combined_view(x, combined, component))
        return Distribution(dict(sorted(out.entries.items())), out.pruned_mass)
    kept = []
    for rec in v.records:
        if rec.name != combined.name:
            raise ValidationError(f"record of {rec.name!r} is not from {combined.name!r}")
        r = _project_record(rec, combined, component)
        if r is not None:
            kept.append(r)
    return View(tuple(kept), v.truncated)


def replace_machine(c, old: Sequence[str], new: Sequence) -> Collection:
    c = c if isinstance(c, Collection) else Collection(c)
    return c.replace(old, new)


def port_owner(c, port: Port):
    for m in c:
        if port in m.ports:
            return m
    return None
