"""Brute-force reference for runs of all-classical networks.

Machines are plain tables, queues are Python lists and probabilities are
exact fractions.  Nothing from the package is used.  The rules followed:

* the master scheduler is activated with "1" on its clock port whenever
  the activation token is lost; a run ends when it is final at that moment,
  or when it was activated through the clock and has no pending input;
* a machine in a final state hands the token back to the master;
* in-ports switched off by the length function are cleared first; a machine
  with no pending input returns the token;
* after switching, simple outputs are appended to their queues in port order,
  all ports of the machine are cleared, and the first clock out-port with a
  value i releases message i of its queue (when it exists) to the receiver,
  which is activated next; otherwise the master is;
* the budget bounds the number of switching activations; a run that would
  switch once more is truncated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction


class Overflow(Exception):
    pass


@dataclass
class TableMachine:
    name: str
    ports: list          # port texts in declared order
    states: list
    fin: set
    table: dict          # (state, inputs tuple) -> [(Fraction, next state, {port: value})]
    erase: set = field(default_factory=set)   # (state, port text)

    def ins(self):
        return [p for p in self.ports if p.endswith("?")]

    def outs(self):
        return [p for p in self.ports if p.endswith("!")]


def oracle_run(machines: list[TableMachine], k: int, budget: int, cap: int):
    """Return {trace: Fraction} with trace = (records, truncated)."""
    master = next(m for m in machines if "clk<?" in m.ports)
    receiver = {}
    for m in machines:
        for p in m.ins():
            if not p.endswith("<?"):
                receiver[p[:-1]] = m.name
    by_name = {m.name: m for m in machines}
    start = {
        "state": {m.name: "1" * k for m in machines},
        "ports": {p: "" for m in machines for p in m.ports},
        "queues": {},
    }
    result: dict = {}

    def leaf(records, prob, truncated=False):
        key = (tuple(records), truncated)
        result[key] = result.get(key, Fraction(0)) + prob

    def copy(w):
        return {"state": dict(w["state"]), "ports": dict(w["ports"]),
                "queues": {a: list(b) for a, b in w["queues"].items()}}

    # work items: (world, records, prob, machine name or None for the master, via clock)
    todo = [(start, [], Fraction(1), None, True)]
    while todo:
        w, records, prob, name, via_clock = todo.pop()
        if name is None:
            w = copy(w)
            w["ports"]["clk<?"] = "1"
            name = master.name
        m = by_name[name]
        s = w["state"][name]
        if s in m.fin:
            if m is master:
                leaf(records, prob)
            else:
                todo.append((w, records, prob, None, True))
            continue
        w = copy(w)
        for p in m.ins():
            if (s, p) in m.erase:
                w["ports"][p] = ""
        inputs = tuple(w["ports"][p] for p in m.ins())
        pending = tuple(p for p, v in zip(m.ins(), inputs) if v != "")
        if not pending:
            if via_clock:
                leaf(records, prob)
            else:
                todo.append((w, records, prob, None, True))
            continue
        if len(records) >= budget:
            leaf(records, prob, truncated=True)
            continue
        rows = m.table.get((s, inputs))
        if rows is None:
            rows = [(Fraction(1), s, {})]
        for p_row, s2, outputs in rows:
            v = copy(w)
            v["state"][name] = s2
            out_vals = tuple(outputs.get(p, "") for p in m.outs())
            rec = (name, s, tuple(zip(m.ins(), inputs)), s2,
                   tuple(zip(m.outs(), out_vals)), pending)
            recs = records + [rec]
            for p, val in zip(m.outs(), out_vals):
                if not p.endswith("<!") and val != "":
                    q = v["queues"].setdefault(p[:-1], [])
                    if len(q) >= cap:
                        raise Overflow(p)
                    q.append(val)
            for p in m.ports:
                v["ports"][p] = ""
            clock = next(((p, val) for p, val in zip(m.outs(), out_vals)
                          if p.endswith("<!") and val != ""), None)
            prob2 = prob * p_row
            if clock is None:
                todo.append((v, recs, prob2, None, True))
                continue
            base = clock[0][:-2]
            idx = int(clock[1])
            q = v["queues"].setdefault(base, [])
            if idx > len(q):
                todo.append((v, recs, prob2, None, True))
                continue
            msg = q.pop(idx - 1)
            v["ports"][base + "?"] = msg
            todo.append((v, recs, prob2, receiver[base], False))
    return result
