"""Random closed collections for the structural and oracle tests."""
from __future__ import annotations

import random
from fractions import Fraction

import numpy as np

from qrsim.machine import (
    MASTER_CLOCK, Branch, Lookup, MachineDef, Map, Measure, Port, Prepare, Program, Unitary,
)
from qrsim.qcore import EPSILON, Alphabet, LabeledSpace

from oracle_classical import TableMachine

ALPHABET = Alphabet("01", max_len=1, max_index=2)
WORDS = ALPHABET.words()
CLOCK_WORDS = ALPHABET.clock_space().labels
STATES = ("1", "11", "a", "f")
QLABELS = (EPSILON, "0", "1")
BIT = ("0", "1")
SPLITS = ([Fraction(1)], [Fraction(1, 2), Fraction(1, 2)], [Fraction(1, 3), Fraction(2, 3)])


def _random_unitary(rng: random.Random) -> np.ndarray:
    g = np.random.default_rng(rng.getrandbits(32))
    z = g.normal(size=(2, 2)) + 1j * g.normal(size=(2, 2))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _swap(a_labels, b_labels):
    return {(x, y): (y, x) for x in a_labels for y in b_labels}


def _table(rng, ins, outs, clock_outs):
    """Stochastic table over (state, input contents)."""
    spaces = [CLOCK_WORDS if p.is_clock else WORDS for p in ins]
    table = {}
    for s in STATES:
        if s == "f":
            continue
        combos = [()]
        for sp in spaces:
            combos = [c + (x,) for c in combos for x in sp]
        for combo in combos:
            if all(x == EPSILON for x in combo) or rng.random() < 0.1:
                continue
            rows = []
            for p in rng.choice(SPLITS):
                s2 = "f" if rng.random() < 0.25 else rng.choice(STATES)
                o = {}
                for q in outs:
                    o[q.text] = EPSILON if rng.random() < 0.4 else rng.choice(WORDS[1:])
                for q in clock_outs:
                    o[q.text] = rng.choice((EPSILON, "1", "1", "2"))
                rows.append((p, s2, o))
            table[(s,) + combo] = rows
    return table


def random_network(seed: int, n_machines: int | None = None, quantum: bool = False):
    """Return (machines, oracle tables or None) for a closed collection.

    M0 is the master scheduler.  With ``quantum`` some connections carry a
    qubit and every machine owns one qubit it rotates, swaps through its
    quantum ports and sometimes measures.
    """
    rng = random.Random(seed)
    n = n_machines or rng.randint(2, 3)
    names = [f"M{i}" for i in range(n)]
    ports: dict[str, list[Port]] = {m: [] for m in names}
    ports["M0"].append(MASTER_CLOCK)
    qports: set[Port] = set()
    for e in range(rng.randint(1, 3)):
        name = f"e{e}"
        snd, rcv = rng.choice(names), rng.choice(names)
        sched = snd if rng.random() < 0.7 else rng.choice(names)
        out_p, in_p, clk = Port(name, "simple", "out"), Port(name, "simple", "in"), Port(name, "clock", "out")
        ports[snd].append(out_p)
        ports[rcv].append(in_p)
        ports[sched].append(clk)
        if quantum and rng.random() < 0.5:
            qports |= {out_p, in_p}
    machines, tables = [], []
    for m in names:
        ps = ports[m]
        ins = [p for p in ps if p.is_in]
        cl_ins = [p for p in ins if p not in qports]
        simple_outs = [p for p in ps if p.is_out and not p.is_clock and p not in qports]
        clock_outs = [p for p in ps if p.is_out and p.is_clock]
        table = _table(rng, cl_ins, simple_outs, clock_outs)
        erase = set()
        for s in STATES[:3]:
            for p in ins:
                if rng.random() < (0.04 if p == MASTER_CLOCK else 0.15):
                    erase.add((s, p.text))
        outs = simple_outs + clock_outs
        rows = {k: [(float(p), (s2,) + tuple(o[q.text] for q in outs)) for p, s2, o in v]
                for k, v in table.items()}
        prog = [Lookup(("c",) + tuple(p.text for p in cl_ins),
                       ("c",) + tuple(p.text for p in outs), rows)]
        if quantum:
            for p in ins:
                if p in qports:
                    prog.append(Map(("q", p.text), _swap(QLABELS, WORDS)))
            prog.append(Unitary(("q",), _random_unitary(rng), (BIT,)))
            if rng.random() < 0.5:
                prog += [Measure("q", "z"), Branch("z", ("1",), (Prepare("c", "a"),))]
            for p in ps:
                if p.is_out and p in qports:
                    prog.append(Map(("q", p.text), _swap(QLABELS, WORDS)))
        cports = frozenset(p for p in ps if p not in qports)
        qstates = LabeledSpace(QLABELS if quantum else (EPSILON,))
        machines.append(MachineDef(m, tuple(ps), cports, qstates, LabeledSpace(STATES),
                                   Program(tuple(prog)), frozenset({"f"}), frozenset(erase),
                                   ALPHABET))
        if not quantum:
            otable = {(k[0], k[1:]): v for k, v in table.items()}
            tables.append(TableMachine(m, [p.text for p in ps], list(STATES), {"f"}, otable, erase))
    return machines, (None if quantum else tables)
