"""Numerical audits of the leakage chain rules and communication bounds.

Every audit produces :class:`ChainRuleCase` records with ``slack = lhs - rhs``
in bits; a case passes when ``slack >= -1e-6``.  Randomized audits derive one
seed per trial from the master seed, so a report depends only on
``(rule, trials, master_seed)`` and not on the number of workers.

Rules:

``SEP_LCR``          H(A|XB) >= H(A|B) - log d_X, rho = sum_k p_k rho_AB^k (x) rho_X^k
``GEN_LCR``          H(A|XB) >= H(A|B) - 2 log min(d_A d_B, d_X)
``INTERACTIVE_LCR``  H(A0|B_r) >= H(A0|B_0) - min(m_A + m_B, 2 m_A)
``ENTANGLED_LCR``    H(A0|B_r) >= H(A0|B_0) - 2 m_A, m_A <= #EPR pairs
``COMM_TOTAL``       m_A + m_B >= H(A0|B_0) - log 1/p
``COMM_ONEWAY``      2 m_A >= H(A0|B_0) - log 1/p

The entangled rule was stated without proof; here it is a conjecture checked
at small dimension.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ensembles
from . import protocol as proto
from .errors import BadDims, HypothesisViolated, NotClassicallyControlled, QleakError
from .minentropy import hmin, pguess_cq
from .qstate import DensityOperator, PureState, Subsystem, SystemLayout

SLACK_TOL = -1e-6
RULES = ("SEP_LCR", "GEN_LCR", "INTERACTIVE_LCR", "ENTANGLED_LCR", "COMM_TOTAL", "COMM_ONEWAY")
STATIC_DIM_CAP = 256
PROTOCOL_DIM_CAP = 64


@dataclass(frozen=True)
class ChainRuleCase:
    rule: str
    lhs_bits: float
    rhs_bits: float
    seed: int = 0
    descriptor: str = ""
    slack: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "slack", float(self.lhs_bits) - float(self.rhs_bits))

    @property
    def passed(self) -> bool:
        return self.slack >= SLACK_TOL

    def as_dict(self) -> dict:
        return {"seed": int(self.seed), "lhs_bits": float(self.lhs_bits), "rhs_bits": float(self.rhs_bits),
                "slack": self.slack, "pass": self.passed, "descriptor": self.descriptor}


@dataclass
class AuditReport:
    rule: str
    master_seed: int
    cases: list

    @property
    def trials(self) -> int:
        return len(self.cases)

    @property
    def failures(self) -> int:
        return sum(not c.passed for c in self.cases)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def tightest(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for c in self.cases:
            out[c.rule] = min(out.get(c.rule, math.inf), c.slack)
        return out

    def as_dict(self) -> dict:
        return {"master_seed": int(self.master_seed), "rule": self.rule, "trials": self.trials,
                "failures": self.failures, "cases": [c.as_dict() for c in self.cases]}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2) + "\n"

    def summary(self) -> str:
        lines = [f"rule={self.rule} master_seed={self.master_seed} trials={self.trials} "
                 f"failures={self.failures}"]
        for rule, s in sorted(self.tightest().items()):
            lines.append(f"  tightest slack {rule}: {s:.3e} bits")
        for c in self.cases:
            if not c.passed:
                lines.append(f"  FAIL seed={c.seed} slack={c.slack:.3e} {c.descriptor}")
        return "\n".join(lines)


# -- static chain rules --------------------------------------------------------------


def _h(rho: DensityOperator, a, b) -> float:
    keep = list(a) + list(b)
    if len(keep) < len(rho.layout):
        rho = rho.reduced(keep)
    return hmin(rho, a, b).hmin


def separable_case(rho: DensityOperator, seed: int = 0, descriptor: str = "") -> ChainRuleCase:
    """Separable leakage chain-rule check on ``rho`` over subsystems labelled A, X, B.

    The bound needs ``rho`` separable across the cut between the leak ``X``
    and ``AB``; it is not checked here.
    """
    dx = rho.layout["X"].dim
    lhs = _h(rho, ["A"], ["X", "B"])
    rhs = _h(rho, ["A"], ["B"]) - math.log2(dx)
    return ChainRuleCase("SEP_LCR", lhs, rhs, seed, descriptor)


def general_case(rho: DensityOperator, seed: int = 0, descriptor: str = "") -> ChainRuleCase:
    """General leakage chain-rule check on ``rho`` over subsystems labelled A, X, B."""
    lay = rho.layout
    d = min(lay["A"].dim * lay["B"].dim, lay["X"].dim)
    lhs = _h(rho, ["A"], ["X", "B"])
    rhs = _h(rho, ["A"], ["B"]) - 2 * math.log2(d)
    return ChainRuleCase("GEN_LCR", lhs, rhs, seed, descriptor)


def audit_separable(trials: int, master_seed: int = 0, dims=(2, 2, 2), workers: int = 1) -> list[ChainRuleCase]:
    def one(seed):
        rho, desc = random_instance("separable", dims, seed)
        return separable_case(rho, seed, desc)
    return _map_trials(one, trials, master_seed, workers)


def audit_general(trials: int, master_seed: int = 0, dims=(2, 2, 2), workers: int = 1) -> list[ChainRuleCase]:
    def one(seed):
        rho, desc = random_instance("entangled", dims, seed)
        return general_case(rho, seed, desc)
    return _map_trials(one, trials, master_seed, workers)


# -- protocol rules -------------------------------------------------------------------


class ProtocolEntropies:
    """Entropies of A0 given Bob's registers before and after one run."""

    def __init__(self, spec: proto.ProtocolSpec, rho: DensityOperator | None = None):
        a0 = spec.classical_input_label
        if a0 is None:
            raise NotClassicallyControlled(f"protocol {spec.name!r} has no classical input register")
        for rd in spec.rounds:
            for op in rd.alice_ops:
                if not op.controlled:
                    raise NotClassicallyControlled(f"round {rd.index}: Alice op={op.op} is not controlled by {a0}")
        self.spec = spec
        self.a0 = a0
        self.rho = spec.default_input() if rho is None else rho
        self.result = proto.run(spec, self.rho)
        self.stats = self.result.stats
        self.h_before = _h(self.rho, [a0], spec.bob_initial())
        self.h_after = _h(self.result.final, [a0], spec.bob_final())

    @property
    def drop(self) -> float:
        return self.h_before - self.h_after


def _descr(spec: proto.ProtocolSpec, stats: proto.CommStats, extra: str = "") -> str:
    s = f"protocol {spec.name} r={spec.r} m_a={stats.m_a:g} m_b={stats.m_b:g} dim={spec.input_layout.total_dim}"
    return s + (f" {extra}" if extra else "")


def audit_interactive(spec: proto.ProtocolSpec, rho: DensityOperator | None = None, seed: int = 0,
                      ent: ProtocolEntropies | None = None) -> ChainRuleCase:
    """Interactive leakage chain rule; Bob's final state is an interactive leakage of A0."""
    ent = ent or ProtocolEntropies(spec, rho)
    st = ent.stats
    bound = min(st.m_a + st.m_b, 2 * st.m_a)
    return ChainRuleCase("INTERACTIVE_LCR", ent.h_after, ent.h_before - bound, seed,
                         _descr(spec, st, "interactive-leakage"))


def audit_entangled(spec: proto.ProtocolSpec, m: int | None = None, rho: DensityOperator | None = None,
                    seed: int = 0, ent: ProtocolEntropies | None = None) -> ChainRuleCase:
    """Chain rule with ``m`` pre-shared EPR pairs; requires ``m_A <= m``."""
    m = spec.epr_pairs if m is None else m
    st = proto.comm_stats(spec)
    if st.m_a > m + 1e-12:
        raise HypothesisViolated(f"m_a={st.m_a:g} exceeds the {m} pre-shared EPR pairs")
    ent = ent or ProtocolEntropies(spec, rho)
    return ChainRuleCase("ENTANGLED_LCR", ent.h_after, ent.h_before - 2 * st.m_a, seed,
                         _descr(spec, st, f"epr={m}"))


def audit_comm_bounds(spec: proto.ProtocolSpec, rho: DensityOperator | None = None, seed: int = 0,
                      measured: bool = False, ent: ProtocolEntropies | None = None) -> list[ChainRuleCase]:
    """Communication bounds with ``p`` the optimal probability of guessing A0.

    By default ``p = 2^-H(A0|B_r)`` from Bob's whole final system; with
    ``measured`` it is the guessing probability from the declared output
    register alone.  The two-way bound is only claimed without pre-shared
    entanglement, so it is skipped when the protocol has EPR inputs.
    """
    ent = ent or ProtocolEntropies(spec, rho)
    st = ent.stats
    if measured:
        if spec.output is None:
            raise QleakError(f"protocol {spec.name!r} declares no output register")
        p = pguess_cq(ent.result.final, ent.a0, [spec.output])
        log_inv_p = -math.log2(p)
    else:
        log_inv_p = ent.h_after
    rhs = ent.h_before - log_inv_p
    tag = "measured" if measured else "optimal"
    cases = []
    if spec.epr_pairs == 0:
        cases.append(ChainRuleCase("COMM_TOTAL", st.m_a + st.m_b, rhs, seed, _descr(spec, st, f"p={tag}")))
    cases.append(ChainRuleCase("COMM_ONEWAY", 2 * st.m_a, rhs, seed, _descr(spec, st, f"p={tag}")))
    return cases


def round_structure(spec: proto.ProtocolSpec, rho: DensityOperator | None = None, seed: int = 0) -> list[ChainRuleCase]:
    """Entropy drop at each Alice send, charged at most two bits per qubit sent.

    Bob's operations and Bob's sends never lower H(A0|Bob), so only Alice's
    sends are charged; the cases use the ``INTERACTIVE_LCR`` rule tag.
    """
    a0 = spec.classical_input_label
    if a0 is None:
        raise NotClassicallyControlled(f"protocol {spec.name!r} has no classical input register")
    rho = spec.default_input() if rho is None else rho
    res = proto.run(spec, rho)
    cases = []
    bob = spec.bob_initial()
    prev = rho
    for state, step in zip(res.trace, res.steps):
        if step.kind == "send" and step.party == proto.ALICE and step.bob_labels != bob:
            sent = [lab for lab in step.bob_labels if lab not in bob]
            q = math.log2(spec.dim_of(sent))
            before = _h(prev, [a0], bob)
            after = _h(state, [a0], step.bob_labels)
            cases.append(ChainRuleCase("INTERACTIVE_LCR", after, before - 2 * q, seed,
                                       f"round {step.round} alice-send {','.join(sent)}"))
        bob = step.bob_labels
        prev = state
    return cases


# -- random instances -------------------------------------------------------------------

_GATES_1 = ("I", "X", "Y", "Z", "H", "S")
_GATES_2 = ("CNOT", "SWAP")


def _static_layout(dims) -> SystemLayout:
    if len(dims) != 3 or any(int(d) < 1 for d in dims):
        raise BadDims(f"expected three positive dimensions (A, X, B), got {dims}")
    if math.prod(dims) > STATIC_DIM_CAP:
        raise BadDims(f"total dimension {math.prod(dims)} exceeds {STATIC_DIM_CAP}")
    return SystemLayout.of(("A", int(dims[0])), ("X", int(dims[1])), ("B", int(dims[2])))


def random_instance(kind: str, dims=(2, 2, 2), seed: int = 0):
    """Seeded random instance.

    ``separable``/``entangled``/``cq`` return ``(DensityOperator on A,X,B, descriptor)``;
    ``protocol`` returns ``(ProtocolSpec, cq input, descriptor)`` and reads
    ``dims`` as ``(d_A0, n_rounds)`` with ``n_rounds = 0`` meaning random.
    """
    gen = ensembles.rng(seed)
    if kind == "separable":
        lay = _static_layout(dims)
        da, dx, db = lay.dims
        # product across the (A B) : X cut; a mixture of rho_AX (x) rho_B does not satisfy the bound
        k = int(gen.integers(1, 5))
        w = ensembles.dirichlet_weights(k, gen)
        m = sum(wi * np.kron(ensembles.ginibre_state(da * db, gen, int(gen.integers(1, da * db + 1))),
                             ensembles.ginibre_state(dx, gen, int(gen.integers(1, dx + 1))))
                for wi in w)
        rho = DensityOperator(SystemLayout.of(("A", da), ("B", db), ("X", dx)), m).reorder(lay.labels)
        return rho, f"separable dims={tuple(lay.dims)} k={k}"
    if kind == "entangled":
        lay = _static_layout(dims)
        rank = int(gen.integers(1, lay.total_dim + 1))
        return DensityOperator(lay, ensembles.ginibre_state(lay.total_dim, gen, rank)), \
            f"ginibre dims={tuple(lay.dims)} rank={rank}"
    if kind == "cq":
        lay = _static_layout(dims).replace("A", classical=True)
        da, dx, db = lay.dims
        w = ensembles.dirichlet_weights(da, gen)
        m = np.zeros((lay.total_dim, lay.total_dim), dtype=complex)
        blk = dx * db
        for a in range(da):
            m[a * blk:(a + 1) * blk, a * blk:(a + 1) * blk] = w[a] * ensembles.ginibre_state(blk, gen)
        return DensityOperator(lay, m), f"cq dims={tuple(lay.dims)}"
    if kind == "protocol":
        da, rounds = (tuple(dims) + (0,))[:2] if len(dims) else (0, 0)
        return random_protocol(seed, d_a0=da or None, rounds=rounds or None)
    raise BadDims(f"unknown instance kind {kind!r}")


def _pick_op(gen, held: list, party: str, d_ctl: int | None, unitary: bool) -> str | None:
    if not held:
        return None
    two = len(held) >= 2 and gen.random() < 0.4
    targets = list(gen.choice(held, size=2 if two else 1, replace=False))
    pool = _GATES_2 if two else _GATES_1

    def item():
        u = gen.random()
        if u < 0.35:
            return f"HAAR:{int(gen.integers(1 << 31))}"
        if not unitary and u < 0.5:
            return f"KRAUS:{int(gen.integers(1 << 31))}"
        return str(gen.choice(pool))

    # Alice's control on A0 is implicit
    ops = ",".join(item() for _ in range(d_ctl)) if d_ctl else item()
    return f"{party} op={ops} targets={','.join(targets)}"


def random_protocol(seed: int, *, epr: int = 0, d_a0: int | None = None, rounds: int | None = None,
                    unitary: bool = False, max_alice_qubits: int | None = None):
    """Random A0-controlled protocol with one-qubit messages and its cq input.

    Registers: classical A0 (Alice), quantum B0 correlated with A0 (Bob),
    message/work qubits M1, W1 (Alice) and ``epr`` shared pairs EA_i/EB_i.
    Total dimension stays within 64.
    """
    gen = ensembles.rng(seed)
    d_a0 = d_a0 or int(gen.choice([2, 4]))
    rounds = rounds or int(gen.integers(1, 4))
    systems = [("A0", d_a0, True, "alice"), ("M1", 2, False, "alice")]
    budget = int(math.log2(PROTOCOL_DIM_CAP // d_a0)) - 2 - 2 * epr
    if budget < 0:
        raise BadDims(f"d_A0={d_a0} with {epr} EPR pairs exceeds dimension {PROTOCOL_DIM_CAP}")
    if budget >= 1:
        systems.append(("W1", 2, False, "alice"))
    for i in range(1, epr + 1):
        systems += [(f"EA{i}", 2, False, "alice"), (f"EB{i}", 2, False, "bob")]
    systems.append(("B0", 2, False, "bob"))
    owner = {s[0]: s[3] for s in systems}
    cap = max_alice_qubits if max_alice_qubits is not None else (epr if epr else None)
    lines = [f"protocol rand{seed & 0xFFFF:04x}"]
    lines += [f"system {lab} dim={d}{' classical' if c else ''} owner={o}" for lab, d, c, o in systems]
    lines.append("input cq A0 uniform")
    lines += [f"input epr EA{i} EB{i}" for i in range(1, epr + 1)]
    sent_a = 0
    for i in range(1, rounds + 1):
        lines.append(f"round {i}")
        for _ in range(int(gen.integers(1, 3))):
            held = [lab for lab, o in owner.items() if o == "alice" and lab != "A0"]
            op = _pick_op(gen, held, "alice", d_a0, unitary)
            if op:
                lines.append(op)
        held = [lab for lab, o in owner.items() if o == "alice" and lab != "A0"]
        if held and gen.random() < 0.8 and (cap is None or sent_a < cap):
            lab = str(gen.choice(held))
            lines.append(f"alice send {lab}")
            owner[lab] = "bob"
            sent_a += 1
        for _ in range(int(gen.integers(1, 3))):
            held = [lab for lab, o in owner.items() if o == "bob"]
            op = _pick_op(gen, held, "bob", None, unitary)
            if op:
                lines.append(op)
        held = [lab for lab, o in owner.items() if o == "bob"]
        if i < rounds and held and gen.random() < 0.6:
            lab = str(gen.choice(held))
            lines.append(f"bob send {lab}")
            owner[lab] = "alice"
    spec = proto.parse("\n".join(lines) + "\n")
    rho = random_cq_input(spec, gen)
    return spec, rho, f"protocol seed={seed} d_a0={d_a0} r={rounds} epr={epr}"


def random_cq_input(spec: proto.ProtocolSpec, gen: np.random.Generator) -> DensityOperator:
    """Protocol input with ``rho_{A0 B0}`` a random cq state; EPR pairs and ``|0>`` elsewhere."""
    lay = spec.input_layout
    d_a0, d_b = lay["A0"].dim, lay["B0"].dim
    w = ensembles.dirichlet_weights(d_a0, gen)
    cq = np.zeros((d_a0 * d_b, d_a0 * d_b), dtype=complex)
    for a in range(d_a0):
        cq[a * d_b:(a + 1) * d_b, a * d_b:(a + 1) * d_b] = w[a] * ensembles.ginibre_state(
            d_b, gen, int(gen.integers(1, d_b + 1)))
    base = spec.default_input()
    rest = [lab for lab in lay.labels if lab not in ("A0", "B0")]
    m = np.kron(cq, np.asarray(base.reduced(rest).matrix)) if rest else cq
    return DensityOperator(lay.select(["A0", "B0"] + rest), m).reorder(lay.labels)


def yao_check(seed: int) -> tuple[int, int, float]:
    """Random unitary protocol: ``(term count, 2^(m_a+m_b), reconstruction distance)``.

    Distance is the trace distance between the Yao reconstruction and the
    runner's final state for the worst classical input symbol.
    """
    from .qstate import trace_distance

    spec, _, _ = random_protocol(seed, unitary=True)
    gen = ensembles.rng(ensembles.splitmix64(seed))
    lay = spec.input_layout
    bob = spec.bob_initial()
    zeta = PureState.normalized(lay.select(bob), ensembles.pure_vector(lay.dim_of(bob), gen))
    worst_terms, worst_dist = 0, 0.0
    for x in range(lay["A0"].dim):
        dec = proto.yao_decompose(spec, x, zeta)
        alice = [lab for lab in lay.labels if lab not in bob]
        ket = PureState.basis(lay.select(alice), [x] + [0] * (len(alice) - 1)).tensor(zeta)
        final = proto.run(spec, ket.density().reorder(lay.labels)).final
        worst_terms = max(worst_terms, dec.term_count)
        worst_dist = max(worst_dist, trace_distance(dec.reconstruct().density(), final))
    return worst_terms, dec.bound, worst_dist


# -- orchestration ------------------------------------------------------------------------


def _map_trials(fn: Callable[[int], object], trials: int, master_seed: int, workers: int) -> list:
    seeds = [ensembles.trial_seed(master_seed, i) for i in range(trials)]

    def wrapped(seed):
        try:
            return fn(seed)
        except QleakError as e:
            raise type(e)(f"trial seed {seed}: {e}") from e

    if workers <= 1:
        out = [wrapped(s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(wrapped, seeds))
    flat = []
    for item in out:
        flat.extend(item if isinstance(item, list) else [item])
    return flat


def _protocol_trial(rule: str, measured: bool) -> Callable[[int], list]:
    def one(seed):
        entangled = rule in ("ENTANGLED_LCR", "COMM_ONEWAY") and seed & 1
        spec, rho, _ = random_protocol(seed, epr=1 if (entangled or rule == "ENTANGLED_LCR") else 0)
        if measured:
            spec = _with_measured_output(spec)
            rho = _extend_input(spec, rho)
        ent = ProtocolEntropies(spec, rho)
        if rule == "INTERACTIVE_LCR":
            return [audit_interactive(spec, rho, seed, ent)]
        if rule == "ENTANGLED_LCR":
            return [audit_entangled(spec, rho=rho, seed=seed, ent=ent)]
        cases = audit_comm_bounds(spec, rho, seed, measured, ent)
        return [c for c in cases if c.rule == rule]
    return one


def _with_measured_output(spec: proto.ProtocolSpec) -> proto.ProtocolSpec:
    """Append a final Bob step copying B0's computational basis into a classical OUT register."""
    src = proto.format_protocol(spec).splitlines()
    d_out = 2
    i = next(k for k, ln in enumerate(src) if ln.startswith("input"))
    src.insert(i, f"system OUT dim={d_out} classical owner=bob")
    src.insert(i + 1, "output OUT")
    held = spec.bob_final()
    if held:
        src.append(f"bob op=CNOT targets={held[0]},OUT")
    return proto.parse("\n".join(src) + "\n", spec.base_dir)


def _extend_input(spec: proto.ProtocolSpec, rho: DensityOperator) -> DensityOperator:
    z = np.zeros((2, 2), dtype=complex)
    z[0, 0] = 1
    out = DensityOperator(rho.layout + SystemLayout((Subsystem("OUT", 2, True),)), np.kron(rho.matrix, z))
    return out.reorder(spec.input_layout.labels)


def run_audit(rule: str, trials: int, master_seed: int = 0, workers: int = 1, measured: bool = False,
              dims=(2, 2, 2)) -> AuditReport:
    """Randomized audit of one rule; the report is independent of ``workers``."""
    if rule not in RULES:
        raise KeyError(f"unknown rule {rule!r}; known: {', '.join(RULES)}")
    if rule == "SEP_LCR":
        cases = audit_separable(trials, master_seed, dims, workers)
    elif rule == "GEN_LCR":
        cases = audit_general(trials, master_seed, dims, workers)
    else:
        cases = _map_trials(_protocol_trial(rule, measured), trials, master_seed, workers)
    return AuditReport(rule, master_seed, cases)


# -- demos ------------------------------------------------------------------------------------


@dataclass
class DemoResult:
    name: str
    h_before: float
    h_after: float
    m_a: float
    m_b: float
    cases: list

    @property
    def drop(self) -> float:
        return self.h_before - self.h_after

    @property
    def tight(self) -> bool:
        return all(c.passed and abs(c.slack) <= 1e-6 for c in self.cases)

    def render(self) -> str:
        lines = [f"{self.name}: H_min(A0|B) before = {self.h_before:.6f} bits, after = {self.h_after:.6f} bits",
                 f"entropy drop = {self.drop:.6f} bits, m_a = {self.m_a:g}, m_b = {self.m_b:g}"]
        for c in self.cases:
            lines.append(f"  {c.rule}: lhs = {c.lhs_bits:.6f}, rhs = {c.rhs_bits:.6f}, slack = {c.slack:.2e}")
        lines.append("verdict: " + ("tight" if self.tight else "not tight"))
        return "\n".join(lines)


def bundled(name: str) -> proto.ProtocolSpec:
    from importlib.resources import as_file, files

    with as_file(files("qleak") / "data" / f"{name}.proto") as path:
        return proto.load(path)


def demo_superdense() -> DemoResult:
    spec = bundled("superdense")
    ent = ProtocolEntropies(spec)
    cases = [audit_entangled(spec, ent=ent)] + audit_comm_bounds(spec, ent=ent)
    return DemoResult("superdense coding", ent.h_before, ent.h_after, ent.stats.m_a, ent.stats.m_b, cases)


def demo_bitsend() -> DemoResult:
    spec = bundled("bitsend")
    ent = ProtocolEntropies(spec)
    cases = [audit_interactive(spec, ent=ent)] + [c for c in audit_comm_bounds(spec, ent=ent)
                                                   if c.rule == "COMM_TOTAL"]
    return DemoResult("classical bit send", ent.h_before, ent.h_after, ent.stats.m_a, ent.stats.m_b, cases)


@dataclass
class LoAttackResult:
    trials: int
    worst_excess: float     # max over pairs of achieved - sqrt(eps (2 - eps))
    worst_exact: float      # max achieved distance over eps = 0 pairs
    exact_pairs: int

    def render(self) -> str:
        return (f"Lo attack on {self.trials} random pure-state pairs: "
                f"max(achieved - sqrt(eps(2-eps))) = {self.worst_excess:.3e}; "
                f"{self.exact_pairs} pairs with equal marginals, max achieved distance = {self.worst_exact:.3e}")


def lo_attack_pair(seed: int, da: int = 2, db: int = 2, exact: bool = False):
    """Random pure pair on A (x) B; ``exact`` makes psi a B-rotation of phi (eps = 0)."""
    from .qstate import apply_local_unitary

    gen = ensembles.rng(seed)
    lay = SystemLayout.of(("A", da), ("B", db))
    phi = PureState.normalized(lay, ensembles.pure_vector(da * db, gen))
    if exact:
        psi = apply_local_unitary(phi, ensembles.haar_unitary(db, gen), ["B"])
    else:
        # perturb phi so marginals are close but not equal
        t = float(gen.uniform(0, 1))
        v = phi.amplitudes + t * ensembles.pure_vector(da * db, gen)
        psi = apply_local_unitary(PureState.normalized(lay, v), ensembles.haar_unitary(db, gen), ["B"])
    return phi, psi


def lo_attack_check(phi: PureState, psi: PureState, b_labels=("B",)) -> tuple[float, float]:
    """``(achieved distance, sqrt(eps (2 - eps)))`` for the constructed U_B."""
    from .qstate import apply_local_unitary, lo_attack_unitary, marginal_distance, pure_distance

    eps = marginal_distance(phi, psi, b_labels)
    u = lo_attack_unitary(phi, psi, b_labels)
    got = pure_distance(phi, apply_local_unitary(psi, u, b_labels))
    return got, math.sqrt(max(0.0, eps * (2 - eps)))


def demo_lo_attack(trials: int = 200, master_seed: int = 0) -> LoAttackResult:
    excess, exact_worst, n_exact = -math.inf, 0.0, 0
    for i in range(trials):
        seed = ensembles.trial_seed(master_seed, i)
        exact = i % 4 == 0
        dims = (2, 2) if i % 2 else (3, 4)
        phi, psi = lo_attack_pair(seed, *dims, exact=exact)
        got, bound = lo_attack_check(phi, psi)
        excess = max(excess, got - bound)
        if exact:
            n_exact += 1
            exact_worst = max(exact_worst, got)
    return LoAttackResult(trials, excess, exact_worst, n_exact)


__all__ = [
    "SLACK_TOL", "RULES", "ChainRuleCase", "AuditReport", "ProtocolEntropies",
    "separable_case", "general_case", "audit_separable", "audit_general",
    "audit_interactive", "audit_entangled", "audit_comm_bounds", "round_structure",
    "random_instance", "random_protocol", "random_cq_input", "yao_check", "run_audit",
    "demo_superdense", "demo_bitsend", "demo_lo_attack", "lo_attack_pair", "lo_attack_check",
    "bundled", "DemoResult", "LoAttackResult",
]
