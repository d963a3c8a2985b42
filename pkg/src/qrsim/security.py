"""Witnessed security checks: compare the user's view in real and ideal runs.

The checks never quantify over all users and adversaries; they verify the
explicit (user, real adversary, simulator) triples they are given.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import ValidationError
from .network import Configuration, Structure, is_suitable, make_config
from .qcore import statistical_distance
from .runner import RunConfig, explore, view

PERFECT_TOL = 1e-9
DEFAULT_DEFECT_CEILING = 1e-6


@dataclass(frozen=True)
class KResult:
    sd: float
    real_defect: float
    ideal_defect: float


@dataclass
class Verdict:
    user: str
    per_k: dict[int, KResult]
    bounds: dict[int, float]
    passed: bool
    unreliable: bool = False
    note: str = "witness verification"

    @property
    def max_sd(self) -> float:
        return max((r.sd for r in self.per_k.values()), default=0.0)


def _judge(user, per_k, bounds, ceiling) -> Verdict:
    unreliable = any(r.real_defect > ceiling or r.ideal_defect > ceiling for r in per_k.values())
    ok = all(per_k[k].sd <= bounds[k] for k in per_k) and not unreliable
    return Verdict(user, per_k, bounds, ok, unreliable)


def compare_views(cfg1: Configuration, cfg2: Configuration, user_name: str,
                  ks: Iterable[int], rc: RunConfig, bounds: Mapping[int, float] | None = None,
                  defect_ceiling: float = DEFAULT_DEFECT_CEILING) -> Verdict:
    """Statistical distance of the user's view distributions, per k."""
    u1, u2 = cfg1.user, cfg2.user
    if u1.name != user_name or u2.name != user_name:
        raise ValidationError(f"both configurations must use user {user_name!r}")
    if u1 is not u2 and u1.ports != u2.ports:
        raise ValidationError("the two configurations use different user machines")
    per_k = {}
    for k in sorted(set(ks)):
        rck = dataclasses.replace(rc, k=k)
        r1 = explore(cfg1.collection(), rck)
        r2 = explore(cfg2.collection(), rck)
        sd = statistical_distance(view(r1.distribution, user_name),
                                  view(r2.distribution, user_name))
        per_k[k] = KResult(sd, r1.defect, r2.defect)
    limits = {k: (bounds[k] if bounds is not None else PERFECT_TOL) for k in per_k}
    return _judge(user_name, per_k, limits, defect_ceiling)


@dataclass(frozen=True, eq=False)
class Witness:
    user: object
    real_adversary: object
    simulator: object


@dataclass(frozen=True, eq=False)
class SecurityClaim:
    real: Structure
    ideal: Structure
    witnesses: tuple
    mode: str = "perfect"
    flavor: str = "standard"
    bounds: Mapping[int, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "witnesses", tuple(self.witnesses))
        if self.mode not in ("perfect", "statistical"):
            raise ValidationError(f"unknown security mode {self.mode!r}")
        if self.flavor not in ("standard", "universal"):
            raise ValidationError(f"unknown security flavor {self.flavor!r}")


def claim_violations(claim: SecurityClaim) -> list[str]:
    problems = []
    if claim.real.service != claim.ideal.service:
        problems.append("real and ideal structures must have identical service ports")
    if claim.flavor == "universal":
        chosen: dict[str, object] = {}
        for w in claim.witnesses:
            prev = chosen.setdefault(w.real_adversary.name, w.simulator)
            if prev is not w.simulator and prev.name != w.simulator.name:
                problems.append(
                    f"universal claim maps adversary {w.real_adversary.name!r} to two "
                    f"simulators ({prev.name!r}, {w.simulator.name!r})")
    for w in claim.witnesses:
        try:
            cfg = make_config(claim.real, w.user, w.real_adversary)
            if not is_suitable(cfg, claim.ideal):
                problems.append(f"user {w.user.name!r} has ports forbidden in the ideal structure")
            make_config(claim.ideal, w.user, w.simulator)
        except ValidationError as exc:
            problems.append(str(exc))
    return problems


def check_claim(claim: SecurityClaim, ks: Iterable[int], rc: RunConfig,
                defect_ceiling: float = DEFAULT_DEFECT_CEILING) -> list[Verdict]:
    """One verdict per witness triple."""
    problems = claim_violations(claim)
    if problems:
        raise ValidationError("malformed claim: " + "; ".join(problems), problems)
    ks = sorted(set(ks))
    if claim.mode == "perfect":
        bounds = {k: PERFECT_TOL for k in ks}
    else:
        missing = [k for k in ks if k not in claim.bounds]
        if missing:
            raise ValidationError(f"statistical claim has no bound for k in {missing}")
        bounds = {k: float(claim.bounds[k]) for k in ks}
    verdicts = []
    for w in claim.witnesses:
        cfg1 = make_config(claim.real, w.user, w.real_adversary)
        cfg2 = make_config(claim.ideal, w.user, w.simulator)
        verdicts.append(compare_views(cfg1, cfg2, w.user.name, ks, rc, bounds, defect_ceiling))
    return verdicts


def chain_verdicts(v12: Verdict, v23: Verdict) -> Verdict:
    """Bound for the first and third structure via the triangle inequality."""
    if set(v12.per_k) != set(v23.per_k):
        raise ValidationError("verdicts cover different security parameters")
    if v12.user != v23.user:
        raise ValidationError("verdicts concern different users")
    per_k = {k: KResult(v12.per_k[k].sd + v23.per_k[k].sd,
                        v12.per_k[k].real_defect + v23.per_k[k].real_defect,
                        v12.per_k[k].ideal_defect + v23.per_k[k].ideal_defect)
             for k in v12.per_k}
    bounds = {k: v12.bounds[k] + v23.bounds[k] for k in per_k}
    return Verdict(v12.user, per_k, bounds, v12.passed and v23.passed,
                   v12.unreliable or v23.unreliable, "chained witness bound")


def verdict_summary(verdicts: Sequence[Verdict]) -> bool:
    return all(v.passed for v in verdicts)
