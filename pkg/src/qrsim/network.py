"""Collections, completion, structures, forbidden ports, configurations, composition."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ValidationError
from .machine import MASTER_CLOCK, CLOCK, OUT, Port, complement, make_buffer, validate_machine
from .qcore import Alphabet


class Collection:
    """A finite set of machines with distinct names and disjoint ports."""

    def __init__(self, machines: Iterable = ()):
        self.machines = tuple(machines)
        names = [m.name for m in self.machines]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise ValidationError(f"machine names must be pairwise different: {dup}")
        seen: dict[Port, str] = {}
        clashes = []
        for m in self.machines:
            for p in m.ports:
                if p in seen:
                    clashes.append(f"{p.text} ({seen[p]}, {m.name})")
                seen[p] = m.name
        if clashes:
            raise ValidationError("port sets must be pairwise disjoint: " + ", ".join(clashes))

    def __iter__(self):
        return iter(self.machines)

    def __len__(self):
        return len(self.machines)

    def __repr__(self):
        return f"Collection({[m.name for m in self.machines]})"

    def by_name(self, name: str):
        for m in self.machines:
            if m.name == name:
                return m
        raise ValidationError(f"no machine named {name!r} in collection")

    def names(self) -> list[str]:
        return [m.name for m in self.machines]

    def replace(self, old: Sequence[str], new: Sequence) -> "Collection":
        """Collection with the machines named in ``old`` swapped for ``new``."""
        gone = set(old)
        missing = gone - set(self.names())
        if missing:
            raise ValidationError(f"machines {sorted(missing)} not in collection")
        return Collection([m for m in self.machines if m.name not in gone] + list(new))

    def union(self, other: Iterable) -> "Collection":
        return Collection(list(self.machines) + list(other))


def ports_of(c) -> set[Port]:
    return {p for m in c for p in m.ports}


def free(c) -> set[Port]:
    ports = ports_of(c)
    return {p for p in ports if complement(p) not in ports}


def completion(c, queue_cap: int = 4, alphabet: Alphabet | None = None) -> Collection:
    """Add the buffer for every port name other than the master clock."""
    c = c if isinstance(c, Collection) else Collection(c)
    present = {m.buffer_of for m in c if m.kind == "buffer"}
    if alphabet is None:
        alphabets = {m.alphabet for m in c}
        if len(alphabets) > 1:
            raise ValidationError("machines in a collection must share one alphabet")
        alphabet = alphabets.pop() if alphabets else Alphabet()
    names = sorted({p.name for p in ports_of(c) if p != MASTER_CLOCK})
    added = [make_buffer(n, queue_cap, alphabet) for n in names if n not in present]
    return c.union(added)


def is_closed(c) -> bool:
    return free(completion(c)) == {MASTER_CLOCK}


def scheduler_of(buffer_name: str, c):
    clock_out = Port(buffer_name, CLOCK, OUT)
    for m in c:
        if clock_out in m.ports:
            return m
    return None


def master_schedulers(c) -> list:
    return [m for m in c if m.kind == "master"]


@dataclass(frozen=True, eq=False)
class Structure:
    """A protocol: simple machines plus the free ports offered to the user."""

    machines: Collection
    service: frozenset
    name: str = ""

    def __post_init__(self):
        machines = self.machines if isinstance(self.machines, Collection) else Collection(self.machines)
        object.__setattr__(self, "machines", machines)
        object.__setattr__(self, "service", frozenset(self.service))
        bad = [m.name for m in machines if m.kind != "simple"]
        if bad:
            raise ValidationError(f"structures hold simple machines only; not simple: {bad}")
        outside = self.service - free(completion(machines))
        if outside:
            raise ValidationError(
                f"service ports {sorted(p.text for p in outside)} are not free ports of the completion")


def forbidden(s: Structure) -> set[Port]:
    """Ports of the protocol plus complements of its non-service free ports."""
    rest = free(completion(s.machines)) - s.service
    return ports_of(s.machines) | {complement(p) for p in rest}


@dataclass(frozen=True, eq=False)
class Configuration:
    structure: Structure
    user: object
    adversary: object

    def collection(self) -> Collection:
        return self.structure.machines.union([self.user, self.adversary])


def config_violations(s: Structure, user, adversary) -> list[str]:
    problems = []
    bad = set(user.ports) & forbidden(s)
    if bad:
        problems.append("user has forbidden ports " + ", ".join(sorted(p.text for p in bad)))
    try:
        c = s.machines.union([user, adversary])
    except ValidationError as exc:
        return problems + [str(exc)]
    dangling = free(completion(c)) - {MASTER_CLOCK}
    if dangling or MASTER_CLOCK not in free(completion(c)):
        shown = ", ".join(sorted(p.text for p in dangling)) or "master clock missing"
        problems.append(f"completion is not closed: {shown}")
    masters = master_schedulers(c)
    if len(masters) != 1:
        problems.append(f"exactly one master scheduler required, found {[m.name for m in masters]}")
    return problems


def make_config(s: Structure, user, adversary) -> Configuration:
    problems = config_violations(s, user, adversary)
    if problems:
        raise ValidationError("invalid configuration: " + "; ".join(problems), problems)
    return Configuration(s, user, adversary)


def is_suitable(cfg: Configuration, other: Structure) -> bool:
    return not (set(cfg.user.ports) & forbidden(other))


def composition_violations(structures: Sequence[Structure]) -> list[str]:
    problems = []
    for i, si in enumerate(structures):
        for j, sj in enumerate(structures):
            if i == j:
                continue
            bad = ports_of(si.machines) & forbidden(sj)
            for p in sorted(bad):
                problems.append(f"port {p.text} of structure {i + 1} is forbidden in structure {j + 1}")
    for i, si in enumerate(structures):
        for j in range(i + 1, len(structures)):
            sj = structures[j]
            left = si.service & free(completion(sj.machines))
            right = sj.service & free(completion(si.machines))
            if left != right:
                problems.append(f"service ports of structures {i + 1} and {j + 1} disagree on "
                                "shared free ports")
    return problems


def composable(structures: Sequence[Structure]) -> bool:
    return not composition_violations(structures)


def compose(structures: Sequence[Structure], name: str = "") -> Structure:
    problems = composition_violations(structures)
    if problems:
        raise ValidationError("structures are not composable: " + "; ".join(problems), problems)
    machines = Collection([m for s in structures for m in s.machines])
    service = frozenset().union(*(s.service for s in structures)) & free(completion(machines))
    return Structure(machines, service, name)


def validate_collection(c, ks: Sequence[int] = (1,)) -> list[str]:
    problems = []
    for m in c:
        for v in validate_machine(m, ks).violations:
            problems.append(f"{m.name}: {v}")
    return problems
