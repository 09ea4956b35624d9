"""Command-line entry point: ``qleak entropy|run|audit|demo``.

Exit codes: 0 success (all audited cases pass), 1 a chain-rule violation was
found, 2 usage or input error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import audit as audit_mod
from . import protocol as proto
from .errors import QleakError, SolverDiverged
from .minentropy import hmin
from .numkernel import save_matrix
from .qstate import load_state, save_state

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


def _labels(text: str | None) -> list[str]:
    return [t for t in (text or "").split(",") if t]


def cmd_entropy(args) -> int:
    rho = load_state(args.statefile)
    a = _labels(args.a)
    if not a:
        raise QleakError("--a needs at least one subsystem label")
    b = _labels(args.b) if args.b is not None else list(rho.layout.complement(a))
    keep = a + b
    if len(keep) < len(rho.layout):
        rho = rho.reduced(keep)
    sol = hmin(rho, a, b)
    print(f"hmin={sol.hmin:.10f} gap={sol.gap:.3e} pguess={sol.pguess:.10f}")
    if args.witness_dir:
        os.makedirs(args.witness_dir, exist_ok=True)
        save_matrix(os.path.join(args.witness_dir, "sigma.mat"), sol.primal_sigma,
                    f"primal witness: 1_A (x) sigma >= rho, tr sigma = {sol.primal_bound!r}")
        save_matrix(os.path.join(args.witness_dir, "X.mat"), sol.dual_X,
                    f"dual witness: X >= 0, tr_A X = 1_B, tr(rho X) = {sol.dual_bound!r}")
    return EXIT_OK


def cmd_run(args) -> int:
    spec = proto.load(args.protocolfile)
    rho = load_state(args.input) if args.input else None
    res = proto.run(spec, rho)
    if args.trace_dir:
        os.makedirs(args.trace_dir, exist_ok=True)
        for k, (state, step) in enumerate(zip(res.trace, res.steps), start=1):
            save_state(os.path.join(args.trace_dir, f"step{k:03d}.state"), state,
                       f"round {step.round} {step.party} {step.detail}")
        save_state(os.path.join(args.trace_dir, "final.state"), res.final, f"final state of {spec.name}")
    if args.json:
        out = {
            "protocol": spec.name, "rounds": spec.r,
            "m_a": res.stats.m_a, "m_b": res.stats.m_b,
            "per_round": [{"round": i, "alice_to_bob": qa, "bob_to_alice": qb} for i, qa, qb in res.stats.per_round],
            "steps": [{"round": s.round, "party": s.party, "kind": s.kind, "detail": s.detail,
                       "bob_holds": list(s.bob_labels)} for s in res.steps],
            "bob_final": list(spec.bob_final()),
        }
        print(json.dumps(out, indent=2))
    else:
        print(f"protocol {spec.name}: r={spec.r} m_a={res.stats.m_a:g} m_b={res.stats.m_b:g}")
        for s in res.steps:
            print(f"  round {s.round} {s.party:5s} {s.detail}")
        print(f"Bob holds at the end: {', '.join(spec.bob_final()) or '(nothing)'}")
    return EXIT_OK


def cmd_audit(args) -> int:
    report = audit_mod.run_audit(args.rule, args.trials, args.seed, workers=args.workers, measured=args.measured)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_demo(args) -> int:
    if args.name == "lo-attack":
        res = audit_mod.demo_lo_attack(args.trials, args.seed)
        print(res.render())
        return EXIT_OK if res.worst_excess <= 1e-8 and res.worst_exact <= 1e-8 else EXIT_VIOLATION
    demo = audit_mod.demo_superdense() if args.name == "superdense" else audit_mod.demo_bitsend()
    print(demo.render())
    return EXIT_OK if all(c.passed for c in demo.cases) else EXIT_VIOLATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qleak", description="Min-entropy solver, two-party protocol runner "
                                "and leakage chain-rule audits.")
    sub = p.add_subparsers(dest="verb", required=True)

    e = sub.add_parser("entropy", help="conditional min-entropy of a state file")
    e.add_argument("statefile")
    e.add_argument("--a", required=True, help="comma-separated labels of the guessed system")
    e.add_argument("--b", help="comma-separated conditioning labels (default: all others)")
    e.add_argument("--witness-dir", help="write primal/dual witness matrices here")
    e.set_defaults(fn=cmd_entropy)

    r = sub.add_parser("run", help="run a protocol file")
    r.add_argument("protocolfile")
    r.add_argument("--input", help="state file to use instead of the declared inputs")
    r.add_argument("--trace-dir", help="write the state after every step here")
    r.add_argument("--json", action="store_true", help="print a JSON summary")
    r.set_defaults(fn=cmd_run)

    a = sub.add_parser("audit", help="randomized chain-rule audit")
    a.add_argument("--rule", required=True, choices=audit_mod.RULES)
    a.add_argument("--trials", type=int, default=100)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--json", metavar="PATH", help="write the JSON report here")
    a.add_argument("--measured", action="store_true",
                   help="COMM rules: recovery probability from Bob's output register only")
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(fn=cmd_audit)

    d = sub.add_parser("demo", help="bundled tightness witnesses")
    d.add_argument("name", choices=("superdense", "bitsend", "lo-attack"))
    d.add_argument("--trials", type=int, default=200, help="lo-attack: number of random pairs")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(fn=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    if getattr(args, "trials", 1) < 0 or getattr(args, "workers", 1) < 1:
        print("qleak: --trials must be >= 0 and --workers >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except SolverDiverged as e:
        print(f"qleak: solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (QleakError, OSError, KeyError, ValueError) as e:
        print(f"qleak: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
