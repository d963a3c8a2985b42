"""Network description documents: YAML text <-> machines, structures and claims.

A document is a mapping with a ``format`` header and optional sections
``alphabet``, ``queue_cap``, ``machines``, ``collections``, ``structures``,
``configurations`` and ``claims``.  Complex numbers are written as
``[re, im]`` pairs; a matrix is a list of rows of such pairs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .errors import ValidationError
from .machine import (
    MASTER_CLOCK, Apply, Branch, CanonisedTransition, CombinedMachine, Copy, KrausTransition,
    Lookup, MachineDef, Map, Measure, Move, Port, Prepare, Program, Random, Unitary,
)
from .network import Collection, Structure, make_config
from .qcore import Alphabet, KrausChannel, LabeledSpace, is_unitary, validate_channel
from .runner import Trace, TraceRecord
from .security import SecurityClaim, Verdict, Witness

NETWORK_FORMAT = "qrsim-network/1"
RUN_FORMAT = "qrsim-run/1"
VIEW_FORMAT = "qrsim-view/1"
VERDICT_FORMAT = "qrsim-verdict/1"


@dataclass
class NetworkDocument:
    alphabet: Alphabet = field(default_factory=Alphabet)
    queue_cap: int = 4
    machines: dict = field(default_factory=dict)
    collections: dict = field(default_factory=dict)
    structures: dict = field(default_factory=dict)
    configurations: dict = field(default_factory=dict)
    claims: dict = field(default_factory=dict)

    def machine(self, name: str):
        try:
            return self.machines[name]
        except KeyError:
            raise ValidationError(f"unknown machine {name!r}") from None

    def collection(self, name: str) -> Collection:
        """A named collection, or the collection of a named configuration."""
        if name in self.collections:
            return Collection(self.machine(n) for n in self.collections[name])
        if name in self.configurations:
            return self.configurations[name].collection()
        raise ValidationError(f"no collection or configuration named {name!r}")


# -- numbers -------------------------------------------------------------------


def _num(z: complex) -> list[float]:
    return [float(np.real(z)) + 0.0, float(np.imag(z)) + 0.0]


def matrix_to_data(m) -> list:
    return [[_num(z) for z in row] for row in np.asarray(m, dtype=complex)]


def matrix_from_data(data, what: str = "matrix") -> np.ndarray:
    try:
        rows = [[complex(float(re), float(im)) for re, im in row] for row in data]
        m = np.array(rows, dtype=complex)
    except (TypeError, ValueError):
        raise ValidationError(f"{what}: expected rows of [re, im] pairs") from None
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"{what}: matrix must be square, got shape {m.shape}")
    return m


# -- instructions --------------------------------------------------------------


def _ins_to_data(ins) -> dict:
    if isinstance(ins, Unitary):
        body = {"regs": list(ins.regs), "matrix": matrix_to_data(ins.matrix)}
        if ins.labels is not None:
            body["labels"] = [list(x) for x in ins.labels]
        return {"unitary": body}
    if isinstance(ins, Apply):
        return {"apply": {"regs": list(ins.regs),
                          "operators": [matrix_to_data(k) for k in ins.operators]}}
    if isinstance(ins, Measure):
        return {"measure": {"reg": ins.reg, "var": ins.var}}
    if isinstance(ins, Prepare):
        return {"prepare": {"reg": ins.reg, "label": ins.label}}
    if isinstance(ins, Move):
        return {"move": {"src": ins.src, "dst": ins.dst}}
    if isinstance(ins, Copy):
        body = {"src": ins.src, "dst": ins.dst}
        if ins.var is not None:
            body["var"] = ins.var
        return {"copy": body}
    if isinstance(ins, Map):
        return {"map": {"regs": list(ins.regs),
                        "mapping": [[list(a), list(b)] for a, b in ins.mapping]}}
    if isinstance(ins, Branch):
        return {"branch": {"var": ins.var, "values": list(ins.values),
                           "then": [_ins_to_data(i) for i in ins.then],
                           "else": [_ins_to_data(i) for i in ins.orelse]}}
    if isinstance(ins, Random):
        return {"random": {"var": ins.var, "choices": [[a, p] for a, p in ins.choices]}}
    if isinstance(ins, Lookup):
        return {"lookup": {"reads": list(ins.reads), "writes": list(ins.writes),
                           "table": [[list(k), [[p, list(v)] for p, v in rows]]
                                     for k, rows in ins.table]}}
    raise ValidationError(f"cannot serialize instruction {ins!r}")


def _strs(x, what) -> list[str]:
    if not isinstance(x, list):
        raise ValidationError(f"{what}: expected a list")
    return ["" if v is None else str(v) for v in x]


def _ins_from_data(d, where: str):
    if not isinstance(d, dict) or len(d) != 1:
        raise ValidationError(f"{where}: an instruction is a mapping with exactly one key")
    (op, b), = d.items()
    if not isinstance(b, dict):
        raise ValidationError(f"{where}: body of {op!r} must be a mapping")
    try:
        if op == "unitary":
            m = matrix_from_data(b["matrix"], f"{where}: unitary")
            if not is_unitary(m):
                raise ValidationError(f"{where}: unitary matrix is not unitary")
            labels = b.get("labels")
            return Unitary(_strs(b["regs"], where), m,
                           None if labels is None else [_strs(x, where) for x in labels])
        if op == "apply":
            ops = [matrix_from_data(k, f"{where}: apply") for k in b["operators"]]
            if not ops:
                raise ValidationError(f"{where}: apply needs at least one operator")
            report = validate_channel(KrausChannel(ops, (ops[0].shape[0],)))
            if not report.ok:
                raise ValidationError(f"{where}: {report.message}")
            return Apply(_strs(b["regs"], where), ops)
        if op == "measure":
            return Measure(str(b["reg"]), str(b["var"]))
        if op == "prepare":
            return Prepare(str(b["reg"]), str(b.get("label") or ""))
        if op == "move":
            return Move(str(b["src"]), str(b["dst"]))
        if op == "copy":
            return Copy(str(b["src"]), str(b["dst"]), b.get("var"))
        if op == "map":
            return Map(_strs(b["regs"], where),
                       [(tuple(_strs(a, where)), tuple(_strs(c, where))) for a, c in b["mapping"]])
        if op == "branch":
            return Branch(str(b["var"]), _strs(b["values"], where),
                          [_ins_from_data(i, where) for i in b.get("then", [])],
                          [_ins_from_data(i, where) for i in b.get("else", [])])
        if op == "random":
            return Random(str(b["var"]), [(str(a), float(p)) for a, p in b["choices"]])
        if op == "lookup":
            table = [(tuple(_strs(k, where)), [(float(p), tuple(_strs(v, where))) for p, v in rows])
                     for k, rows in b["table"]]
            return Lookup(_strs(b["reads"], where), _strs(b["writes"], where), table)
    except KeyError as exc:
        raise ValidationError(f"{where}: instruction {op!r} lacks field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: malformed instruction {op!r}: {exc}") from None
    raise ValidationError(f"{where}: unknown instruction {op!r}")


# -- machines ------------------------------------------------------------------


def _delta_to_data(delta) -> dict:
    if isinstance(delta, CanonisedTransition):
        return {"canonised": _delta_to_data(delta.inner)}
    if isinstance(delta, KrausTransition):
        return {"kraus": [matrix_to_data(k) for k in delta.channel.operators]}
    if isinstance(delta, Program):
        return {"program": [_ins_to_data(i) for i in delta.instructions]}
    raise ValidationError(f"cannot serialize transition {delta!r}")


def machine_to_data(m) -> dict:
    if isinstance(m, CombinedMachine):
        return {"name": m.name, "combine": [machine_to_data(m.first), machine_to_data(m.second)]}
    if m.kind == "buffer":
        raise ValidationError("buffers are added by completion and are not written out")
    out: dict[str, Any] = {"name": m.name, "ports": [p.text for p in m.ports]}
    cports = [p.text for p in m.ports if p in m.cports]
    if len(cports) != len(m.ports):
        out["cports"] = cports
    out["qstates"] = list(m.qstates.labels)
    out["cstates"] = list(m.cstates.labels)
    out["fin"] = sorted(m.fin)
    if m.erase:
        out["erase"] = [list(x) for x in sorted(m.erase)]
    out["delta"] = _delta_to_data(m.delta)
    return out


def _port(text: str, where: str) -> Port:
    return MASTER_CLOCK if text == MASTER_CLOCK.text else Port.parse(text)


def _delta_from_data(d, m_dims, where: str):
    if not isinstance(d, dict) or len(d) != 1:
        raise ValidationError(f"{where}: delta must have exactly one of kraus, program, canonised")
    (kind, body), = d.items()
    if kind == "canonised":
        return CanonisedTransition(_delta_from_data(body, m_dims, where))
    if kind == "kraus":
        if not isinstance(body, list) or not body:
            raise ValidationError(f"{where}: kraus needs a non-empty list of matrices")
        ops = [matrix_from_data(k, f"{where}: kraus") for k in body]
        ch = KrausChannel(ops, m_dims)
        report = validate_channel(ch)
        if not report.ok:
            raise ValidationError(f"{where}: {report.message}")
        return KrausTransition(ch)
    if kind == "program":
        if not isinstance(body, list):
            raise ValidationError(f"{where}: program must be a list of instructions")
        return Program(tuple(_ins_from_data(i, where) for i in body))
    raise ValidationError(f"{where}: unknown delta kind {kind!r}")


def machine_from_data(d, alphabet: Alphabet):
    if not isinstance(d, dict) or "name" not in d:
        raise ValidationError("every machine needs a name")
    where = f"machine {d['name']!r}"
    if "combine" in d:
        parts = d["combine"]
        if not isinstance(parts, list) or len(parts) != 2:
            raise ValidationError(f"{where}: combine needs exactly two machines")
        m = CombinedMachine(machine_from_data(parts[0], alphabet),
                            machine_from_data(parts[1], alphabet))
        if m.name != str(d["name"]):
            raise ValidationError(f"{where}: a combination is named {m.name!r}")
        return m
    try:
        ports = tuple(_port(t, where) for t in _strs(d["ports"], where))
        cports = (frozenset(_port(t, where) for t in _strs(d["cports"], where))
                  if "cports" in d else frozenset(ports))
        qstates = LabeledSpace(tuple(_strs(d.get("qstates", [""]), where)))
        cstates = LabeledSpace(tuple(_strs(d["cstates"], where)))
        fin = frozenset(_strs(d.get("fin", []), where))
        erase = frozenset(tuple(_strs(x, where)) for x in d.get("erase", []))
    except KeyError as exc:
        raise ValidationError(f"{where}: missing field {exc}") from None
    proto = MachineDef(str(d["name"]), ports, cports, qstates, cstates, Program(()), fin,
                       erase, alphabet)
    dims = tuple(proto.register_space(r).dim for r in proto.delta_registers())
    if "delta" not in d:
        raise ValidationError(f"{where}: missing field 'delta'")
    delta = _delta_from_data(d["delta"], dims, where)
    return MachineDef(proto.name, ports, cports, qstates, cstates, delta, fin, erase, alphabet)


# -- whole documents -------------------------------------------------------------


def _section(raw: dict, key: str) -> dict:
    val = raw.get(key) or {}
    if not isinstance(val, dict):
        raise ValidationError(f"section {key!r} must be a mapping")
    return val


def from_data(raw) -> NetworkDocument:
    if not isinstance(raw, dict):
        raise ValidationError("document must be a mapping")
    if raw.get("format") != NETWORK_FORMAT:
        raise ValidationError(f"unsupported format {raw.get('format')!r}; expected {NETWORK_FORMAT}")
    a = raw.get("alphabet") or {}
    try:
        alphabet = Alphabet(str(a.get("symbols", "01")), int(a.get("max_len", 2)),
                            int(a.get("max_index", 4)))
    except (TypeError, ValueError, AttributeError):
        raise ValidationError("malformed alphabet section") from None
    doc = NetworkDocument(alphabet=alphabet, queue_cap=int(raw.get("queue_cap", 4)))
    machines = raw.get("machines") or []
    if not isinstance(machines, list):
        raise ValidationError("section 'machines' must be a list")
    for md in machines:
        m = machine_from_data(md, alphabet)
        if m.name in doc.machines:
            raise ValidationError(f"machine {m.name!r} defined twice")
        doc.machines[m.name] = m
    for name, members in _section(raw, "collections").items():
        names = _strs(members, f"collection {name!r}")
        for n in names:
            doc.machine(n)
        doc.collections[str(name)] = names
    for name, s in _section(raw, "structures").items():
        try:
            ms = [doc.machine(n) for n in _strs(s["machines"], f"structure {name!r}")]
            service = [_port(t, name) for t in _strs(s.get("service", []), f"structure {name!r}")]
        except (KeyError, TypeError):
            raise ValidationError(f"structure {name!r} needs machines and service") from None
        doc.structures[str(name)] = Structure(Collection(ms), frozenset(service), str(name))
    for name, c in _section(raw, "configurations").items():
        try:
            s = doc.structures[c["structure"]]
        except (KeyError, TypeError):
            raise ValidationError(f"configuration {name!r} names an unknown structure") from None
        doc.configurations[str(name)] = make_config(s, doc.machine(c["user"]),
                                                    doc.machine(c["adversary"]))
    for name, c in _section(raw, "claims").items():
        try:
            real, ideal = doc.structures[c["real"]], doc.structures[c["ideal"]]
        except (KeyError, TypeError):
            raise ValidationError(f"claim {name!r} names an unknown structure") from None
        witnesses = [Witness(doc.machine(w["user"]), doc.machine(w["adversary"]),
                             doc.machine(w["simulator"])) for w in c.get("witnesses", [])]
        bounds = {int(k): float(v) for k, v in (c.get("bounds") or {}).items()}
        doc.claims[str(name)] = SecurityClaim(real, ideal, witnesses, c.get("mode", "perfect"),
                                              c.get("flavor", "standard"), bounds, str(name))
    return doc


def to_data(doc: NetworkDocument) -> dict:
    out: dict[str, Any] = {"format": NETWORK_FORMAT}
    a = doc.alphabet
    out["alphabet"] = {"symbols": a.symbols, "max_len": a.max_len, "max_index": a.max_index}
    out["queue_cap"] = doc.queue_cap
    out["machines"] = [machine_to_data(m) for m in doc.machines.values()]
    if doc.collections:
        out["collections"] = {k: list(v) for k, v in doc.collections.items()}
    if doc.structures:
        out["structures"] = {
            k: {"machines": [m.name for m in s.machines],
                "service": sorted(p.text for p in s.service)}
            for k, s in doc.structures.items()}
    if doc.configurations:
        out["configurations"] = {
            k: {"structure": _name_of(doc.structures, c.structure),
                "user": c.user.name, "adversary": c.adversary.name}
            for k, c in doc.configurations.items()}
    if doc.claims:
        claims = {}
        for k, c in doc.claims.items():
            body = {"real": _name_of(doc.structures, c.real),
                    "ideal": _name_of(doc.structures, c.ideal),
                    "mode": c.mode, "flavor": c.flavor}
            if c.bounds:
                body["bounds"] = {int(x): float(b) for x, b in sorted(c.bounds.items())}
            body["witnesses"] = [{"user": w.user.name, "adversary": w.real_adversary.name,
                                  "simulator": w.simulator.name} for w in c.witnesses]
            claims[k] = body
        out["claims"] = claims
    return out


def _name_of(structures: dict, s: Structure) -> str:
    for k, v in structures.items():
        if v is s:
            return k
    raise ValidationError(f"structure {s.name!r} is not part of the document")


_BaseDumper = getattr(yaml, "CSafeDumper", yaml.SafeDumper)
_Loader = getattr(yaml, "CSafeLoader", yaml.SafeLoader)


class _Dumper(_BaseDumper):
    pass


def _no_dicts(x) -> bool:
    if isinstance(x, dict):
        return False
    return not isinstance(x, list) or all(_no_dicts(y) for y in x)


def _represent_list(dumper, data):
    # short nested lists (table rows, [re, im] pairs, port lists) stay on one line
    flow = _no_dicts(data) and len(repr(data)) <= 90
    return dumper.represent_sequence("tag:yaml.org,2002:seq", data, flow_style=flow)


_Dumper.add_representer(list, _represent_list)


def dumps(data: dict) -> str:
    return yaml.dump(data, Dumper=_Dumper, sort_keys=False, allow_unicode=True, width=100)


def loads(text: str) -> dict:
    try:
        return yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ValidationError(f"document is not valid YAML: {exc}") from None


def parse(text: str) -> NetworkDocument:
    try:
        return from_data(loads(text))
    except KeyError as exc:
        raise ValidationError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, AttributeError) as exc:
        raise ValidationError(f"malformed document: {exc}") from None


def serialize(doc: NetworkDocument) -> str:
    return dumps(to_data(doc))


def build(machines=(), collections=None, structures=None, configurations=None, claims=None,
          alphabet: Alphabet | None = None, queue_cap: int = 4) -> NetworkDocument:
    """Assemble a document from objects; machines of structures are added automatically."""
    doc = NetworkDocument(alphabet=alphabet or Alphabet(), queue_cap=queue_cap)

    def add(m):
        prev = doc.machines.get(m.name)
        if prev is not None and prev is not m:
            if machine_to_data(prev) != machine_to_data(m):
                raise ValidationError(f"two different machines named {m.name!r}")
            return
        doc.machines[m.name] = m

    for m in machines:
        add(m)
    for name, ms in (collections or {}).items():
        for m in ms:
            add(m)
        doc.collections[name] = [m.name for m in ms]
    for name, s in (structures or {}).items():
        for m in s.machines:
            add(m)
        doc.structures[name] = s
    for name, c in (configurations or {}).items():
        add(c.user)
        add(c.adversary)
        doc.configurations[name] = c
    for name, c in (claims or {}).items():
        for w in c.witnesses:
            for m in (w.user, w.real_adversary, w.simulator):
                add(m)
        doc.claims[name] = c
    return doc


# -- run, view and verdict documents ----------------------------------------------


def _record_to_data(r: TraceRecord) -> dict:
    return {"name": r.name, "s": r.s, "I": [list(x) for x in r.I], "s_prime": r.s_prime,
            "O": [list(x) for x in r.O], "P": list(r.P)}


def _record_from_data(d) -> TraceRecord:
    return TraceRecord(d["name"], d["s"] or "", tuple(tuple(x) for x in d.get("I", [])),
                       d["s_prime"] or "", tuple(tuple(x) for x in d.get("O", [])),
                       tuple(d.get("P", [])))


def traces_to_data(dist) -> list:
    return [{"probability": float(p), "truncated": t.truncated,
             "records": [_record_to_data(r) for r in t.records]} for t, p in dist.items()]


def traces_from_data(items) -> dict:
    out = {}
    for e in items:
        t = Trace(tuple(_record_from_data(r) for r in e["records"]), bool(e["truncated"]))
        out[t] = out.get(t, 0.0) + float(e["probability"])
    return out


def run_to_data(result, source: str) -> dict:
    cfg = result.config
    return {"format": RUN_FORMAT, "source": source,
            "settings": {"k": cfg.k, "budget": cfg.max_activations, "prune": cfg.prune_eps,
                         "queue_cap": cfg.queue_cap},
            "pruned_mass": float(result.distribution.pruned_mass),
            "truncated_mass": float(result.truncated_mass),
            "traces": traces_to_data(result.distribution)}


def view_to_data(dist, machine: str) -> dict:
    return {"format": VIEW_FORMAT, "machine": machine,
            "pruned_mass": float(dist.pruned_mass),
            "views": traces_to_data(dist)}


def verdicts_to_data(claim_name: str, verdicts: list[Verdict]) -> dict:
    return {"format": VERDICT_FORMAT, "claim": claim_name,
            "passed": all(v.passed for v in verdicts),
            "verdicts": [{"user": v.user, "passed": v.passed, "unreliable": v.unreliable,
                          "note": v.note,
                          "per_k": [{"k": k, "sd": float(r.sd), "bound": float(v.bounds[k]),
                                     "real_defect": float(r.real_defect),
                                     "ideal_defect": float(r.ideal_defect)}
                                    for k, r in sorted(v.per_k.items())]}
                         for v in verdicts]}
