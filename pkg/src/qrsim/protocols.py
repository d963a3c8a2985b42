"""Ready-made machines and structures used by the examples and tests."""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .machine import (
    MASTER_CLOCK, Branch, Lookup, Map, MachineDef, Measure, Move, Port, Prepare, Program,
    Random, Unitary,
)
from .network import Structure
from .qcore import EPSILON, Alphabet, LabeledSpace

INIT = tuple("1" * k for k in range(1, 4))
HADAMARD = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
PAULI_X = np.array([[0, 1], [1, 0]])
PAULI_Z = np.array([[1, 0], [0, -1]])
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
BIT = ("0", "1")


def ports(*texts: str) -> tuple[Port, ...]:
    return tuple(MASTER_CLOCK if t == "clk<?" else Port.parse(t) for t in texts)


def states(*extra: str) -> LabeledSpace:
    return LabeledSpace(INIT + tuple(x for x in extra if x not in INIT))


Rule = Callable[[str, dict], "list[tuple[float, str, dict]] | None"]


def table_machine(name: str, port_texts: Sequence[str], cstates: Sequence[str], fin: Sequence[str],
                  rule: Rule, alphabet: Alphabet | None = None) -> MachineDef:
    """All-classical machine whose transition is a stochastic lookup table.

    ``rule(state, inputs)`` returns rows (probability, next state, outputs) or
    None to leave everything unchanged.  Inputs map in-port text to content.
    """
    alphabet = alphabet or Alphabet()
    ps = ports(*port_texts)
    cspace = states(*cstates)
    ins = [p for p in ps if p.is_in]
    outs = [p for p in ps if p.is_out]
    proto = MachineDef(name, ps, frozenset(ps), LabeledSpace((EPSILON,)), cspace,
                       Program(()), frozenset(fin), alphabet=alphabet)
    table = {}
    for s in cspace.labels:
        if s in fin:
            continue
        for combo in itertools.product(*[proto.port_space(p).labels for p in ins]):
            rows = rule(s, dict(zip((p.text for p in ins), combo)))
            if rows is None:
                continue
            table[(s,) + combo] = [
                (p, (s2,) + tuple(o.get(q.text, EPSILON) for q in outs)) for p, s2, o in rows]
    reads = ("c",) + tuple(p.text for p in ins)
    writes = ("c",) + tuple(p.text for p in outs)
    return MachineDef(name, ps, frozenset(ps), LabeledSpace((EPSILON,)), cspace,
                      Program((Lookup(reads, writes, table),)), frozenset(fin), alphabet=alphabet)


def xor(a: str, b: str) -> str:
    return "".join("1" if x != y else "0" for x, y in zip(a, b))


def messages(alphabet: Alphabet) -> list[str]:
    return [w for w in alphabet.words() if w]


# ---------------------------------------------------------------------------
# small runnable networks


def ping(alphabet: Alphabet | None = None, message: str = "0") -> list[MachineDef]:
    """X sends one message to M and schedules it; both stop."""
    x = table_machine("X", ["clk<?", "p!", "p<!"], ["f"], ["f"],
                      lambda s, i: [(1.0, "f", {"p!": message, "p<!": "1"})], alphabet)
    m = table_machine("M", ["p?"], ["f"], ["f"],
                      lambda s, i: [(1.0, "f", {})] if i["p?"] else None, alphabet)
    return [x, m]


def ping_unscheduled(alphabet: Alphabet | None = None) -> list[MachineDef]:
    """X writes on p! without scheduling it, then stops; M never runs."""
    x = table_machine("X", ["clk<?", "p!", "p<!"], ["f"], ["f"],
                      lambda s, i: [(1.0, "f", {"p!": "0"})], alphabet)
    m = table_machine("M", ["p?"], ["f"], ["f"],
                      lambda s, i: [(1.0, "f", {})] if i["p?"] else None, alphabet)
    return [x, m]


def coin_flip(alphabet: Alphabet | None = None) -> list[MachineDef]:
    """X measures |+> and schedules p or q on the outcome."""
    alphabet = alphabet or Alphabet()
    ps = ports("clk<?", "p!", "p<!", "r!", "r<!")
    prog = Program((
        Prepare("q", "0"),
        Unitary(("q",), HADAMARD, (BIT,)),
        Measure("q", "b"),
        Branch("b", ("0",),
               (Prepare("p!", "0"), Prepare("p<!", "1")),
               (Prepare("r!", "1"), Prepare("r<!", "1"))),
        Prepare("c", "f"),
    ))
    x = MachineDef("X", ps, frozenset(ps), LabeledSpace((EPSILON,) + BIT), states("f"), prog,
                   frozenset({"f"}), alphabet=alphabet)
    recv_p = table_machine("P", ["p?"], ["f"], ["f"],
                           lambda s, i: [(1.0, "f", {})] if i["p?"] else None, alphabet)
    recv_r = table_machine("R", ["r?"], ["f"], ["f"],
                           lambda s, i: [(1.0, "f", {})] if i["r?"] else None, alphabet)
    return [x, recv_p, recv_r]


# ---------------------------------------------------------------------------
# one-time pad over an adversarially forwarded channel
#
# Service ports: the user feeds send? and reads recv?.  The sender A asks the
# key dealer K for a key, K hands it to A directly and queues a copy for B.  A
# sends the padded message to the adversary, who may forward it to B on fwd.


OTP_SERVICE = frozenset(ports("send~?", "send<?", "recv~!"))
KEYS = ("00", "01", "10", "11")


def _first_input(i: dict) -> tuple[str, str] | None:
    for p, v in i.items():
        if v:
            return p, v
    return None


def otp_sender(alphabet: Alphabet, pad: bool = True) -> MachineDef:
    msgs = messages(alphabet)

    def rule(s, i):
        if s in INIT and i["send?"]:
            return [(1.0, "w" + i["send?"], {"req!": "1", "req<!": "1"})]
        if s.startswith("w") and i["ka?"]:
            m = s[1:]
            c = xor(m, i["ka?"]) if pad else m
            return [(1.0, "f", {"net!": c, "net<!": "1"})]
        return None
    return table_machine("A", ["send?", "req!", "req<!", "ka?", "net!", "net<!"],
                         ["w" + m for m in msgs] + ["f"], ["f"], rule, alphabet)


def key_dealer(alphabet: Alphabet) -> MachineDef:
    def rule(s, i):
        if s in INIT and i["req?"]:
            return [(0.25, "f", {"ka!": key, "kb!": key, "ka<!": "1"}) for key in KEYS]
        return None
    return table_machine("K", ["req?", "ka!", "ka<!", "kb!"], ["f"], ["f"], rule, alphabet)


def otp_receiver(alphabet: Alphabet, pad: bool = True) -> MachineDef:
    msgs = messages(alphabet)

    def rule(s, i):
        if s in INIT and i["fwd?"]:
            if not pad:
                return [(1.0, "f", {"recv!": i["fwd?"], "recv<!": "1"})]
            return [(1.0, "g" + i["fwd?"], {"kb<!": "1"})]
        if s.startswith("g") and i["kb?"]:
            return [(1.0, "f", {"recv!": xor(s[1:], i["kb?"]), "recv<!": "1"})]
        return None
    return table_machine("B", ["fwd?", "kb?", "kb<!", "recv!", "recv<!"],
                         ["g" + m for m in msgs] + ["f"], ["f"], rule, alphabet)


def otp_real(alphabet: Alphabet | None = None) -> Structure:
    alphabet = alphabet or Alphabet()
    return Structure([otp_sender(alphabet), key_dealer(alphabet), otp_receiver(alphabet)],
                     OTP_SERVICE, "otp-real")


def plaintext_real(alphabet: Alphabet | None = None) -> Structure:
    """Same wiring as the one-time pad but the message travels in the clear."""
    alphabet = alphabet or Alphabet()
    return Structure([otp_sender(alphabet, pad=False), key_dealer(alphabet),
                      otp_receiver(alphabet, pad=False)], OTP_SERVICE, "plaintext-real")


def secure_channel_host(alphabet: Alphabet | None = None) -> Structure:
    """Trusted host: stores the message, leaks its length, delivers on request."""
    alphabet = alphabet or Alphabet()
    msgs = messages(alphabet)

    def rule(s, i):
        if s in INIT and i["send?"]:
            return [(1.0, "h" + i["send?"], {"len!": "1" * len(i["send?"]), "len<!": "1"})]
        if s.startswith("h") and i["dlv?"]:
            return [(1.0, "f", {"recv!": s[1:], "recv<!": "1"})]
        return None
    th = table_machine("TH", ["send?", "len!", "len<!", "dlv?", "recv!", "recv<!"],
                       ["h" + m for m in msgs] + ["f"], ["f"], rule, alphabet)
    return Structure([th], OTP_SERVICE, "secure-channel")


def otp_user(alphabet: Alphabet | None = None, message: str | None = None,
             send_port: str = "send", recv_port: str = "recv", name: str = "H") -> MachineDef:
    """Honest user: sends a message (uniform if not given), records what it sees."""
    alphabet = alphabet or Alphabet()
    msgs = messages(alphabet)
    choices = [message] if message is not None else msgs

    def rule(s, i):
        if s in INIT and i["start?"]:
            return [(1.0 / len(choices), "s" + m, {f"{send_port}!": m, f"{send_port}<!": "1"})
                    for m in choices]
        if s.startswith("s") and i["tell?"]:
            return [(1.0, s, {})]
        if s.startswith("s") and i[f"{recv_port}?"]:
            return [(1.0, "f", {})]
        return None
    return table_machine(name, ["start?", f"{send_port}!", f"{send_port}<!", "tell?",
                                f"{recv_port}?"],
                         ["s" + m for m in msgs] + ["f"], ["f"], rule, alphabet)


def forwarding_adversary(alphabet: Alphabet | None = None) -> MachineDef:
    """Master scheduler: starts the user, shows it the ciphertext, then forwards it."""
    alphabet = alphabet or Alphabet()
    msgs = messages(alphabet)

    def rule(s, i):
        if s in INIT and i["clk<?"]:
            return [(1.0, "a", {"start!": "1", "start<!": "1"})]
        if s == "a" and i["net?"]:
            c = i["net?"]
            return [(1.0, "t" + c, {"tell!": c, "tell<!": "1"})]
        if s.startswith("t") and i["clk<?"]:
            return [(1.0, "d", {"fwd!": s[1:], "fwd<!": "1"})]
        if s in ("a", "d") and i["clk<?"]:
            return [(1.0, "f", {})]
        return None
    return table_machine("Adv", ["clk<?", "start!", "start<!", "net?", "tell!", "tell<!",
                                 "fwd!", "fwd<!"],
                         ["a", "d", "f"] + ["t" + m for m in msgs], ["f"], rule, alphabet)


def otp_simulator(alphabet: Alphabet | None = None, mode: str = "random") -> MachineDef:
    """Simulator for the secure channel: fakes a ciphertext of the leaked length.

    ``mode`` is "random" (uniform fake, the correct simulator) or "zeros".
    """
    alphabet = alphabet or Alphabet()

    def rule(s, i):
        if s in INIT and i["clk<?"]:
            return [(1.0, "a", {"start!": "1", "start<!": "1"})]
        if s == "a" and i["len?"]:
            n = len(i["len?"])
            fakes = ["".join(w) for w in itertools.product("01", repeat=n)]
            if mode == "zeros":
                fakes = ["0" * n]
            return [(1.0 / len(fakes), "t", {"tell!": c, "tell<!": "1"}) for c in fakes]
        if s == "t" and i["clk<?"]:
            return [(1.0, "d", {"dlv!": "1", "dlv<!": "1"})]
        if s in ("a", "d") and i["clk<?"]:
            return [(1.0, "f", {})]
        return None
    return table_machine("Sim", ["clk<?", "start!", "start<!", "len?", "tell!", "tell<!",
                                 "dlv!", "dlv<!"],
                         ["a", "t", "d", "f"], ["f"], rule, alphabet)


# ---------------------------------------------------------------------------
# an outer protocol using the secure channel as a sub-service


WRAPPER_SERVICE = frozenset(ports("in~?", "in<?", "out~!"))


def wrapper(alphabet: Alphabet | None = None) -> Structure:
    """W relays user input into send and the channel's output back to the user."""
    alphabet = alphabet or Alphabet()

    def rule(s, i):
        if s in INIT and i["in?"]:
            return [(1.0, "r", {"send!": i["in?"], "send<!": "1"})]
        if s == "r" and i["recv?"]:
            return [(1.0, "f", {"out!": i["recv?"], "out<!": "1"})]
        return None
    w = table_machine("W", ["in?", "send!", "send<!", "recv?", "out!", "out<!"],
                      ["r", "f"], ["f"], rule, alphabet)
    service = WRAPPER_SERVICE | frozenset(ports("send~!", "recv~?", "recv<?"))
    return Structure([w], service, "wrapper")


def wrapper_user(alphabet: Alphabet | None = None, message: str | None = None) -> MachineDef:
    return otp_user(alphabet, message, send_port="in", recv_port="out", name="H")


# ---------------------------------------------------------------------------
# teleportation versus an ideal one-qubit channel

TELEPORT_SERVICE = frozenset(ports("qin~?", "qin<?", "qout~!"))
BELL = np.array([1, 0, 0, 1]) / np.sqrt(2)
PAIRS = ("00", "01", "10", "11")


def tomography_states() -> dict[str, np.ndarray]:
    """Six single-qubit states whose projectors span all 2x2 Hermitian matrices."""
    s = 1 / np.sqrt(2)
    return {
        "0": np.array([1, 0], dtype=complex),
        "1": np.array([0, 1], dtype=complex),
        "+": np.array([s, s], dtype=complex),
        "-": np.array([s, -s], dtype=complex),
        "+i": np.array([s, 1j * s], dtype=complex),
        "-i": np.array([s, -1j * s], dtype=complex),
    }


def state_unitary(psi: np.ndarray) -> np.ndarray:
    """A unitary whose first column is ``psi``."""
    a, b = psi
    return np.array([[a, -np.conj(b)], [b, np.conj(a)]], dtype=complex)


def _qmachine(name, texts, qlabels, extra_states, fin, instructions, alphabet, quantum=()):
    ps = ports(*texts)
    qports = set(ports(*quantum)) if quantum else set()
    cports = frozenset(p for p in ps if p not in qports)
    return MachineDef(name, ps, cports, LabeledSpace((EPSILON,) + tuple(qlabels)),
                      states(*extra_states), Program(tuple(instructions)), frozenset(fin),
                      alphabet=alphabet)


def _store(src: str, regs=("q",)):
    """Map |ε>|x> -> |x>|ε> for a qubit arriving on ``src``."""
    return Map(regs + (src,), {(EPSILON, b): (b, EPSILON) for b in BIT})


def teleport_real(alphabet: Alphabet | None = None) -> Structure:
    alphabet = alphabet or Alphabet()
    bell_basis = np.kron(HADAMARD, np.eye(2)) @ CNOT
    alice = _qmachine(
        "Alice", ["qin?", "req!", "req<!", "ea?", "cb!", "cb<!"], BIT + PAIRS, ["w", "f"], ["f"],
        [
            Measure("c", "s"),
            Branch("s", INIT, [
                _store("qin?"),
                Prepare("req!", "1"), Prepare("req<!", "1"), Prepare("c", "w"),
            ], [
                Map(("q", "ea?"), {(x, y): (x + y, EPSILON) for x in BIT for y in BIT}),
                Unitary(("q",), bell_basis, (PAIRS,)),
                Measure("q", "v"),
                Prepare("q", EPSILON),
                Prepare("cb!", "$v"), Prepare("cb<!", "1"), Prepare("c", "f"),
            ]),
        ], alphabet, quantum=["qin?", "ea?"])
    bell_prep = CNOT @ np.kron(HADAMARD, np.eye(2))
    dealer = _qmachine(
        "D", ["req?", "ea!", "ea<!", "eb!"], (), ["f"], ["f"],
        [
            Prepare("ea!", "0"), Prepare("eb!", "0"),
            Unitary(("ea!", "eb!"), bell_prep, (BIT, BIT)),
            Prepare("ea<!", "1"), Prepare("c", "f"),
        ], alphabet, quantum=["ea!", "eb!"])
    corrections = []
    for v in PAIRS:
        u = np.linalg.matrix_power(PAULI_Z, int(v[0])) @ np.linalg.matrix_power(PAULI_X, int(v[1]))
        corrections.append(Branch("s", ("g" + v,), [Unitary(("eb?",), u, (BIT,))]))
    bob = _qmachine(
        "Bob", ["fwd?", "eb?", "eb<!", "qout!", "qout<!"], (), ["g" + v for v in PAIRS] + ["f"],
        ["f"],
        [
            Measure("c", "s"),
            Branch("s", INIT, [
                Measure("fwd?", "v"), Prepare("c", "g$v"), Prepare("eb<!", "1"),
            ], corrections + [
                Move("eb?", "qout!"), Prepare("qout<!", "1"), Prepare("c", "f"),
            ]),
        ], alphabet, quantum=["eb?", "qout!"])
    return Structure([alice, dealer, bob], TELEPORT_SERVICE, "teleport-real")


def qubit_channel_host(alphabet: Alphabet | None = None) -> Structure:
    """Trusted host: holds the qubit, tells the adversary, releases it on request."""
    alphabet = alphabet or Alphabet()
    th = _qmachine(
        "QTH", ["qin?", "lk!", "lk<!", "dl?", "qout!", "qout<!"], BIT, ["h", "f"], ["f"],
        [
            Measure("c", "s"),
            Branch("s", INIT, [
                _store("qin?"), Prepare("lk!", "1"), Prepare("lk<!", "1"), Prepare("c", "h"),
            ], [
                Move("q", "qout!"), Prepare("qout<!", "1"), Prepare("c", "f"),
            ]),
        ], alphabet, quantum=["qin?", "qout!"])
    return Structure([th], TELEPORT_SERVICE, "qubit-channel")


def teleport_adversary(alphabet: Alphabet | None = None) -> MachineDef:
    alphabet = alphabet or Alphabet()

    def rule(s, i):
        if s in INIT and i["clk<?"]:
            return [(1.0, "a", {"start!": "1", "start<!": "1"})]
        if s == "a" and i["cb?"]:
            return [(1.0, "d", {"fwd!": i["cb?"], "fwd<!": "1"})]
        if s in ("a", "d") and i["clk<?"]:
            return [(1.0, "f", {})]
        return None
    return table_machine("Adv", ["clk<?", "start!", "start<!", "cb?", "fwd!", "fwd<!"],
                         ["a", "d", "f"], ["f"], rule, alphabet)


def teleport_simulator(alphabet: Alphabet | None = None) -> MachineDef:
    alphabet = alphabet or Alphabet()

    def rule(s, i):
        if s in INIT and i["clk<?"]:
            return [(1.0, "a", {"start!": "1", "start<!": "1"})]
        if s == "a" and i["lk?"]:
            return [(1.0, "d", {"dl!": "1", "dl<!": "1"})]
        if s in ("a", "d") and i["clk<?"]:
            return [(1.0, "f", {})]
        return None
    return table_machine("Sim", ["clk<?", "start!", "start<!", "lk?", "dl!", "dl<!"],
                         ["a", "d", "f"], ["f"], rule, alphabet)


def teleport_user(psi: np.ndarray, check: bool = False,
                  alphabet: Alphabet | None = None) -> MachineDef:
    """Sends |psi> and keeps what comes back in q.

    With ``check`` the user undoes the preparation and measures, ending in
    state "r0" or "r1"; "r0" with certainty means the qubit arrived intact.
    """
    alphabet = alphabet or Alphabet()
    u = state_unitary(psi)
    receive = [_store("qout?")]
    if check:
        receive += [Unitary(("q",), u.conj().T, (BIT,)), Measure("q", "r"), Prepare("c", "r$r")]
    else:
        receive += [Prepare("c", "f")]
    return _qmachine(
        "H", ["start?", "qin!", "qin<!", "qout?"], BIT, ["s", "f", "r0", "r1"], ["f", "r0", "r1"],
        [
            Measure("c", "s"),
            Branch("s", INIT, [
                Prepare("qin!", "0"), Unitary(("qin!",), u, (BIT,)),
                Prepare("qin<!", "1"), Prepare("c", "s"),
            ], receive),
        ], alphabet, quantum=["qin!", "qout?"])
