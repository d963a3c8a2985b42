"""qrsim command line: validate, run, view, compare, compose, combine, canonise.

Exit status: 0 success, 1 validation failure (or a claim that does not
hold), 2 model error during a run, 3 input/output problem.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import document as docs
from .errors import ModelError, QrsimError, ValidationError
from .machine import canonise, combine_all
from .network import compose, validate_collection
from .qcore import Distribution
from .runner import RunConfig, explore, view
from .security import check_claim, claim_violations

EXIT_OK, EXIT_INVALID, EXIT_MODEL, EXIT_IO = 0, 1, 2, 3


class _IOFailure(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _IOFailure(f"cannot read {path}: {exc.strerror or exc}") from None


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise _IOFailure(f"cannot write {out}: {exc.strerror or exc}") from None


def _load(path: str) -> docs.NetworkDocument:
    return docs.parse(_read(path))


def cmd_validate(args) -> int:
    doc = _load(args.file)
    problems = []
    for m in doc.machines.values():
        problems += validate_collection([m], ks=(args.k,))
    for name, c in doc.claims.items():
        problems += [f"claim {name}: {p}" for p in claim_violations(c)]
    if problems:
        for p in problems:
            print(f"error: {p}")
        return EXIT_INVALID
    print(f"ok: {len(doc.machines)} machines, {len(doc.structures)} structures, "
          f"{len(doc.claims)} claims")
    return EXIT_OK


def _run_config(args, doc) -> RunConfig:
    cap = args.queue_cap if args.queue_cap is not None else doc.queue_cap
    return RunConfig(k=args.k, max_activations=args.budget, prune_eps=args.prune, queue_cap=cap)


def cmd_run(args) -> int:
    doc = _load(args.file)
    result = explore(doc.collection(args.collection), _run_config(args, doc))
    _emit(docs.dumps(docs.run_to_data(result, args.collection)), args.out)
    return EXIT_OK


def cmd_view(args) -> int:
    raw = docs.loads(_read(args.run))
    if not isinstance(raw, dict) or raw.get("format") != docs.RUN_FORMAT:
        raise ValidationError(f"{args.run} is not a run document ({docs.RUN_FORMAT})")
    dist = Distribution(docs.traces_from_data(raw.get("traces", [])),
                        float(raw.get("pruned_mass", 0.0)))
    _emit(docs.dumps(docs.view_to_data(view(dist, args.machine), args.machine)), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    doc = _load(args.file)
    if args.claim not in doc.claims:
        raise ValidationError(f"no claim named {args.claim!r}")
    ks = [int(k) for k in args.ks.split(",") if k.strip()]
    rc = _run_config(args, doc)
    verdicts = check_claim(doc.claims[args.claim], ks, rc, defect_ceiling=args.defect_ceiling)
    data = docs.verdicts_to_data(args.claim, verdicts)
    _emit(docs.dumps(data), args.out)
    return EXIT_OK if data["passed"] else EXIT_INVALID


def cmd_compose(args) -> int:
    doc = _load(args.file)
    try:
        parts = [doc.structures[n] for n in args.structures]
    except KeyError as exc:
        raise ValidationError(f"no structure named {exc.args[0]!r}") from None
    name = args.name or "|".join(args.structures)
    if name in doc.structures:
        raise ValidationError(f"structure {name!r} already exists")
    doc.structures[name] = compose(parts, name)
    _emit(docs.serialize(doc), args.out)
    return EXIT_OK


def cmd_combine(args) -> int:
    doc = _load(args.file)
    m = combine_all([doc.machine(n) for n in args.machines])
    if m.name in doc.machines:
        raise ValidationError(f"machine {m.name!r} already exists")
    doc.machines[m.name] = m
    _emit(docs.serialize(doc), args.out)
    return EXIT_OK


def cmd_canonise(args) -> int:
    doc = _load(args.file)
    m = doc.machine(args.machine)
    doc.machines[m.name] = canonise(m)
    # structures and claims keep pointing at the old object; rebuild them by name
    doc = docs.parse(docs.serialize(doc))
    _emit(docs.serialize(doc), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qrsim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--k", type=int, default=1, help="security parameter")
        p.add_argument("--budget", type=int, default=64, help="activation budget per run")
        p.add_argument("--prune", type=float, default=0.0, help="drop branches below this weight")
        p.add_argument("--queue-cap", type=int, default=None, help="override the document's queue cap")

    p = sub.add_parser("validate", help="check a network document")
    p.add_argument("file")
    p.add_argument("--k", type=int, default=1)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="run a closed collection or configuration")
    p.add_argument("file")
    p.add_argument("collection")
    run_flags(p)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("view", help="restrict a run document to one machine")
    p.add_argument("run")
    p.add_argument("machine")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_view)

    p = sub.add_parser("compare", help="check a witnessed security claim")
    p.add_argument("file")
    p.add_argument("claim")
    p.add_argument("--ks", default="1", help="comma-separated security parameters")
    run_flags(p)
    p.add_argument("--defect-ceiling", type=float, default=1e-6)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("compose", help="compose structures")
    p.add_argument("file")
    p.add_argument("structures", nargs="+")
    p.add_argument("--name")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_compose)

    p = sub.add_parser("combine", help="combine machines into one")
    p.add_argument("file")
    p.add_argument("machines", nargs="+")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_combine)

    p = sub.add_parser("canonise", help="replace a machine by its canonised form")
    p.add_argument("file")
    p.add_argument("machine")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_canonise)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except QrsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
