"""Two-party (r, m_A, m_B) protocols: description language, runner, Yao decomposition.

The global state is one density operator over every declared register.
Sending a message does not move amplitudes; it only transfers ownership of
the register from one party to the other.  Each round is

    alice ops  ->  alice send (X_i)  ->  bob ops  ->  bob send (Y_i)

and Bob never sends in the last round.  An empty send is a one-dimensional
message and costs nothing.

Language (one statement per line, ``#`` starts a comment)::

    protocol <name>
    system <label> dim=<n> [classical] owner=alice|bob
    input cq <label> [uniform | p=<p0>,<p1>,...]
    input epr <alice_label> <bob_label>
    input file <path>
    output <label>
    round <i>
    alice op=<ops> targets=<labels> [control=<label>]
    alice send <labels>
    bob op=<ops> targets=<labels> [control=<label>]
    bob send <labels>

``<ops>`` is a gate name (``I X Y Z H S CNOT SWAP BELL_MEASURE
PAULI_ENCODE(a)``), ``HAAR:<seed>`` (a seeded random unitary on the
targets), ``KRAUS:<seed>`` (a seeded random two-Kraus channel), or a
path to a Kraus file.  With ``control=`` it is either one
item per control symbol (comma separated) or a single item ``G``, whose
branch ``a`` is ``G`` applied ``a`` times; a bare ``PAULI_ENCODE`` expands to
``PAULI_ENCODE(0..3)``.  Registers not mentioned by an ``input`` line start
in ``|0>``.  A register initialised by ``input cq`` and owned by Alice is the
classical input A0: every Alice operation is then controlled by it (plain
operations become constant-branch controlled ones) and it is never sent or
targeted.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import ensembles
from .errors import (
    BadRound,
    LayoutMismatch,
    NotUnitaryProtocol,
    ParseError,
    QleakError,
    ValidationError,
)
from .qchannel import (
    ControlledChannel,
    KrausChannel,
    apply,
    apply_controlled,
    load_kraus,
    standard_gates,
)
from .qstate import (
    DensityOperator,
    PureState,
    Subsystem,
    SystemLayout,
    load_state,
    partial_trace,
)

ALICE, BOB = "alice", "bob"
YAO_DROP_TOL = 1e-10
PRESERVE_TOL = 1e-9


@dataclass(frozen=True)
class SystemDecl:
    label: str
    dim: int
    classical: bool
    owner: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class InputDecl:
    kind: str
    args: tuple
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class OpDecl:
    party: str
    op: str
    targets: tuple
    control: str | None = None
    line: int = field(default=0, compare=False)
    channel: object = field(default=None, compare=False, repr=False)

    @property
    def controlled(self) -> bool:
        return isinstance(self.channel, ControlledChannel)


@dataclass(frozen=True)
class Round:
    index: int
    alice_ops: tuple = ()
    alice_send: tuple = ()
    bob_ops: tuple = ()
    bob_send: tuple = ()
    line: int = field(default=0, compare=False)
    send_lines: tuple = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    systems: tuple
    inputs: tuple
    rounds: tuple
    output: str | None = None
    base_dir: str = field(default=".", compare=False)
    output_line: int = field(default=0, compare=False)

    @property
    def r(self) -> int:
        return len(self.rounds)

    @property
    def input_layout(self) -> SystemLayout:
        return SystemLayout(tuple(Subsystem(s.label, s.dim, s.classical) for s in self.systems))

    @property
    def classical_input_label(self) -> str | None:
        owners = {s.label: s for s in self.systems}
        for inp in self.inputs:
            if inp.kind == "cq" and owners[inp.args[0]].owner == ALICE:
                return inp.args[0]
        return None

    @property
    def epr_pairs(self) -> int:
        return sum(1 for inp in self.inputs if inp.kind == "epr")

    @property
    def message_routes(self) -> list[tuple[tuple, tuple]]:
        """Per round ``(X_i labels, Y_i labels)``."""
        return [(rd.alice_send, rd.bob_send) for rd in self.rounds]

    def dim_of(self, labels: Sequence[str]) -> int:
        dims = {s.label: s.dim for s in self.systems}
        return math.prod(dims[lab] for lab in labels)

    def initial_owners(self) -> dict[str, str]:
        return {s.label: s.owner for s in self.systems}

    def owners_after(self, k: int, half: str = "B") -> dict[str, str]:
        """Register ownership after round ``k``'s A-half (Alice's send) or B-half."""
        own = self.initial_owners()
        for rd in self.rounds[:k]:
            for lab in rd.alice_send:
                own[lab] = BOB
            if half == "B" or rd.index < k:
                for lab in rd.bob_send:
                    own[lab] = ALICE
        return own

    def labels_of(self, party: str, owners: dict[str, str]) -> tuple[str, ...]:
        return tuple(s.label for s in self.systems if owners[s.label] == party)

    def bob_initial(self) -> tuple[str, ...]:
        return self.labels_of(BOB, self.initial_owners())

    def bob_final(self) -> tuple[str, ...]:
        return self.labels_of(BOB, self.owners_after(self.r, "B"))

    def default_input(self) -> DensityOperator:
        return build_input(self)


class CommStats(NamedTuple):
    m_a: float
    m_b: float
    per_round: tuple  # (round, qubits Alice->Bob, qubits Bob->Alice)

    @property
    def total(self) -> float:
        return self.m_a + self.m_b


class Step(NamedTuple):
    round: int
    party: str
    kind: str      # "op" or "send"
    detail: str
    bob_labels: tuple


class RunResult(NamedTuple):
    final: DensityOperator
    stats: CommStats
    trace: list
    steps: list


# -- parsing -------------------------------------------------------------------

_KV = re.compile(r"^([a-z_]+)=(.*)$")


def _split_labels(text: str) -> tuple[str, ...]:
    return tuple(t for t in re.split(r"[,\s]+", text.strip()) if t)


class _Parser:
    def __init__(self, src: str, base_dir: str):
        self.src = src
        self.base_dir = base_dir
        self.name = None
        self.systems: list[SystemDecl] = []
        self.inputs: list[InputDecl] = []
        self.rounds: list[dict] = []
        self.output = None
        self.output_line = 0

    def fail(self, msg, line, col=1, cls=ParseError):
        raise cls(msg, line, col)

    def parse(self) -> ProtocolSpec:
        for lineno, raw in enumerate(self.src.splitlines(), start=1):
            text = raw.split("#", 1)[0].rstrip()
            if not text.strip():
                continue
            col = len(text) - len(text.lstrip()) + 1
            toks = text.split()
            kw = toks[0]
            handler = getattr(self, f"_kw_{kw}", None)
            if handler is None:
                self.fail(f"unknown statement {kw!r}", lineno, col)
            handler(toks[1:], lineno, text)
        if self.name is None:
            self.fail("missing 'protocol <name>' line", 1)
        rounds = tuple(Round(rd["index"], tuple(rd["alice_ops"]), rd["alice_send"],
                             tuple(rd["bob_ops"]), rd["bob_send"], rd["line"],
                             (rd["send_lines"].get(ALICE, rd["line"]), rd["send_lines"].get(BOB, rd["line"])))
                       for rd in self.rounds)
        return ProtocolSpec(self.name, tuple(self.systems), tuple(self.inputs), rounds,
                            self.output, self.base_dir, self.output_line)

    def _col(self, text, token):
        i = text.find(token)
        return i + 1 if i >= 0 else 1

    def _kw_protocol(self, args, line, text):
        if self.name is not None:
            self.fail("duplicate 'protocol' line", line)
        if len(args) != 1:
            self.fail("expected 'protocol <name>'", line)
        self.name = args[0]

    def _kw_system(self, args, line, text):
        if not args:
            self.fail("expected 'system <label> dim=<n> [classical] owner=alice|bob'", line)
        label, dim, classical, owner = args[0], None, False, None
        for tok in args[1:]:
            m = _KV.match(tok)
            if tok == "classical":
                classical = True
            elif m and m.group(1) == "dim":
                try:
                    dim = int(m.group(2))
                except ValueError:
                    self.fail(f"bad dimension {m.group(2)!r}", line, self._col(text, tok))
                if dim < 1:
                    self.fail("dimension must be positive", line, self._col(text, tok))
            elif m and m.group(1) == "owner":
                owner = m.group(2)
                if owner not in (ALICE, BOB):
                    self.fail(f"owner must be alice or bob, got {owner!r}", line, self._col(text, tok))
            else:
                self.fail(f"unexpected token {tok!r}", line, self._col(text, tok))
        if dim is None:
            self.fail("missing dim=<n>", line)
        if owner is None:
            self.fail("missing owner=alice|bob", line)
        if self.rounds:
            self.fail("systems must be declared before the first round", line)
        if any(s.label == label for s in self.systems):
            self.fail(f"duplicate system {label!r}", line, self._col(text, label), ValidationError)
        try:
            Subsystem(label, dim, classical)
        except ValueError as e:
            self.fail(str(e), line, self._col(text, label))
        self.systems.append(SystemDecl(label, dim, classical, owner, line))

    def _kw_input(self, args, line, text):
        if not args or args[0] not in ("cq", "epr", "file"):
            self.fail("expected 'input cq|epr|file <args>'", line)
        kind = args[0]
        if kind == "cq":
            if len(args) not in (2, 3):
                self.fail("expected 'input cq <label> [uniform|p=...]'", line)
            dist = args[2] if len(args) == 3 else "uniform"
            if dist != "uniform" and not dist.startswith("p="):
                self.fail(f"bad distribution {dist!r}", line, self._col(text, dist))
            self.inputs.append(InputDecl(kind, (args[1], dist), line))
        elif kind == "epr":
            if len(args) != 3:
                self.fail("expected 'input epr <alice_label> <bob_label>'", line)
            self.inputs.append(InputDecl(kind, (args[1], args[2]), line))
        else:
            if len(args) != 2:
                self.fail("expected 'input file <path>'", line)
            self.inputs.append(InputDecl(kind, (args[1],), line))

    def _kw_output(self, args, line, text):
        if len(args) != 1:
            self.fail("expected 'output <label>'", line)
        self.output = args[0]
        self.output_line = line

    def _kw_round(self, args, line, text):
        if len(args) != 1:
            self.fail("expected 'round <i>'", line)
        try:
            idx = int(args[0])
        except ValueError:
            self.fail(f"bad round number {args[0]!r}", line, self._col(text, args[0]))
        if idx != len(self.rounds) + 1:
            self.fail(f"round {idx} out of sequence (expected {len(self.rounds) + 1})", line,
                      self._col(text, args[0]), ValidationError)
        self.rounds.append(dict(index=idx, alice_ops=[], alice_send=(), bob_ops=[], bob_send=(),
                                stage=0, line=line, send_lines={}))

    def _party(self, party, args, line, text):
        if not self.rounds:
            self.fail(f"'{party}' statement outside a round", line)
        rd = self.rounds[-1]
        # stages: 0 alice ops, 1 alice sent, 2 bob ops, 3 bob sent
        if not args:
            self.fail(f"expected '{party} op=...' or '{party} send ...'", line)
        if args[0] == "send":
            stage = 1 if party == ALICE else 3
            if rd["stage"] >= stage:
                self.fail(f"{party} statement out of order in round {rd['index']}", line,
                          cls=ValidationError)
            labels = _split_labels(" ".join(args[1:]))
            rd["alice_send" if party == ALICE else "bob_send"] = labels
            rd["send_lines"][party] = line
            rd["stage"] = stage
            return
        stage = 0 if party == ALICE else 2
        if rd["stage"] > stage:
            self.fail(f"{party} operation out of order in round {rd['index']}", line, cls=ValidationError)
        rd["stage"] = stage
        op, targets, control = None, None, None
        for tok in args:
            m = _KV.match(tok)
            if not m:
                self.fail(f"unexpected token {tok!r}", line, self._col(text, tok))
            key, val = m.groups()
            if key == "op":
                op = val
            elif key == "targets":
                targets = _split_labels(val)
            elif key == "control":
                control = val
            else:
                self.fail(f"unknown attribute {key!r}", line, self._col(text, tok))
        if not op:
            self.fail("missing op=", line)
        if not targets:
            self.fail("missing targets=", line)
        rd["alice_ops" if party == ALICE else "bob_ops"].append(OpDecl(party, op, targets, control, line))

    def _kw_alice(self, args, line, text):
        self._party(ALICE, args, line, text)

    def _kw_bob(self, args, line, text):
        self._party(BOB, args, line, text)


def _resolve_item(item: str, dims: tuple, base_dir: str, line: int) -> KrausChannel:
    d = math.prod(dims)
    if item.startswith("HAAR:"):
        try:
            seed = int(item[5:])
        except ValueError:
            raise ValidationError(f"bad HAAR seed in {item!r}", line) from None
        u = ensembles.haar_unitary_from_seed(d, seed)
        return KrausChannel((u,), item, dims, dims)
    if item.startswith("KRAUS:"):
        try:
            seed = int(item[6:])
        except ValueError:
            raise ValidationError(f"bad KRAUS seed in {item!r}", line) from None
        ks = ensembles.random_kraus(d, d, 2, ensembles.rng(seed))
        return KrausChannel(tuple(ks), item, dims, dims)
    if os.sep in item or "/" in item or item.endswith(".kraus"):
        path = item if os.path.isabs(item) else os.path.join(base_dir, item)
        try:
            return load_kraus(path, item)
        except OSError as e:
            raise ValidationError(f"cannot read Kraus file {item!r}: {e}", line) from None
    try:
        return standard_gates(item)
    except QleakError as e:
        raise ValidationError(str(e), line) from None


def _resolve_op(op: OpDecl, spec: ProtocolSpec, control_dim: int | None):
    sysd = {s.label: s for s in spec.systems}
    dims = tuple(sysd[t].dim for t in op.targets)
    items = [x for x in op.op.split(",") if x]
    if control_dim is None:
        if len(items) != 1:
            raise ValidationError("several branches given without control=", op.line)
        ch = _resolve_item(items[0], dims, spec.base_dir, op.line)
        _check_dims(ch, dims, op)
        return ch
    if len(items) == 1 and items[0] == "PAULI_ENCODE":
        items = [f"PAULI_ENCODE({a})" for a in range(4)]
        if control_dim != 4:
            raise ValidationError("PAULI_ENCODE needs a 4-symbol control", op.line)
    if len(items) == 1:
        base = _resolve_item(items[0], dims, spec.base_dir, op.line)
        _check_dims(base, dims, op)
        branches = tuple(base.power(a) for a in range(control_dim))
    elif len(items) == control_dim:
        branches = tuple(_resolve_item(it, dims, spec.base_dir, op.line) for it in items)
        for b in branches:
            _check_dims(b, dims, op)
    else:
        raise ValidationError(f"{len(items)} branches for a {control_dim}-symbol control", op.line)
    return ControlledChannel(branches, op.op)


def _check_dims(ch: KrausChannel, dims: tuple, op: OpDecl) -> None:
    if ch.input_dim != ch.output_dim:
        raise ValidationError(f"operation {op.op!r} changes dimension; registers are fixed", op.line)
    if math.prod(dims) != ch.input_dim:
        raise ValidationError(f"targets {list(op.targets)} have dimension {math.prod(dims)}, "
                              f"operation {op.op!r} acts on {ch.input_dim}", op.line)
    if len(ch.input_dims) == len(dims) and tuple(ch.input_dims) != dims:
        raise ValidationError(f"operation {op.op!r} expects factors {ch.input_dims}, targets have {dims}",
                              op.line)


def validate(spec: ProtocolSpec) -> ProtocolSpec:
    """Check the Def.-2 shape and resolve every operation; returns a resolved copy."""
    if spec.r < 1:
        raise ValidationError("a protocol needs at least one round", 1)
    sysd = {s.label: s for s in spec.systems}
    try:
        spec.input_layout
    except QleakError as e:
        raise ValidationError(str(e), 1) from None
    seen = set()
    for inp in spec.inputs:
        labs = inp.args[:1] if inp.kind == "cq" else inp.args if inp.kind == "epr" else ()
        for lab in labs:
            if lab not in sysd:
                raise ValidationError(f"input refers to unknown system {lab!r}", inp.line)
            if lab in seen:
                raise ValidationError(f"system {lab!r} initialised twice", inp.line)
            seen.add(lab)
        if inp.kind == "cq":
            s = sysd[inp.args[0]]
            if not s.classical:
                raise ValidationError(f"cq input {s.label!r} must be declared classical", inp.line)
            _parse_dist(inp.args[1], s.dim, inp.line)
        if inp.kind == "epr":
            a, b = (sysd[x] for x in inp.args)
            if a.dim != 2 or b.dim != 2 or a.classical or b.classical:
                raise ValidationError("EPR halves must be quantum qubits", inp.line)
            if a.owner != ALICE or b.owner != BOB:
                raise ValidationError("EPR pair must be shared as (alice, bob)", inp.line)
    a0 = spec.classical_input_label
    cq_inputs = [i for i in spec.inputs if i.kind == "cq"]
    if len(cq_inputs) > 1:
        raise ValidationError("at most one classical input register", cq_inputs[1].line)

    owners = spec.initial_owners()
    rounds = []
    for rd in spec.rounds:
        new_rd = {}
        for party, ops_key, send_key in ((ALICE, "alice_ops", "alice_send"), (BOB, "bob_ops", "bob_send")):
            resolved = []
            for op in getattr(rd, ops_key):
                for t in op.targets:
                    if t not in sysd:
                        raise ValidationError(f"unknown target {t!r}", op.line)
                    if owners[t] != party:
                        raise ValidationError(f"{party} cannot act on {t!r}: it is held by {owners[t]}",
                                              op.line)
                if len(set(op.targets)) != len(op.targets):
                    raise ValidationError("repeated target", op.line)
                control = op.control
                if party == ALICE and a0 is not None:
                    if a0 in op.targets:
                        raise ValidationError(f"classical input {a0!r} must not be a target", op.line)
                    if control is not None and control != a0:
                        raise ValidationError(f"Alice operations must be controlled by {a0!r}", op.line)
                    control = a0
                cdim = None
                if control is not None:
                    if control not in sysd:
                        raise ValidationError(f"unknown control {control!r}", op.line)
                    cs = sysd[control]
                    if not cs.classical:
                        raise ValidationError(f"control {control!r} is not classical", op.line)
                    if owners[control] != party:
                        raise ValidationError(f"{party} does not hold control {control!r}", op.line)
                    if control in op.targets:
                        raise ValidationError("control cannot also be a target", op.line)
                    cdim = cs.dim
                ch = _resolve_op(op, spec, cdim)
                resolved.append(OpDecl(op.party, op.op, op.targets, op.control, op.line, ch))
            new_rd[ops_key] = tuple(resolved)
            send = getattr(rd, send_key)
            sline = rd.send_lines[0 if party == ALICE else 1]
            for lab in send:
                if lab not in sysd:
                    raise ValidationError(f"cannot send unknown register {lab!r}", sline)
                if owners[lab] != party:
                    raise ValidationError(f"{party} cannot send {lab!r}: it is held by {owners[lab]}", sline)
                if lab == a0:
                    raise ValidationError(f"classical input {a0!r} cannot be sent", sline)
                owners[lab] = BOB if party == ALICE else ALICE
            if len(set(send)) != len(send):
                raise ValidationError("register sent twice in one message", sline)
            new_rd[send_key] = send
        if rd.index == spec.r and rd.bob_send:
            raise ValidationError(
                f"Bob sends in the last round {rd.index}; party A sends the first and the last "
                "messages (there is no Y_r)", rd.send_lines[1])
        rounds.append(Round(rd.index, new_rd["alice_ops"], new_rd["alice_send"],
                            new_rd["bob_ops"], new_rd["bob_send"], rd.line, rd.send_lines))
    if spec.output is not None:
        if spec.output not in sysd:
            raise ValidationError(f"unknown output register {spec.output!r}", spec.output_line)
        if owners[spec.output] != BOB:
            raise ValidationError(f"output register {spec.output!r} is not held by Bob at the end", spec.output_line)
    return ProtocolSpec(spec.name, spec.systems, spec.inputs, tuple(rounds), spec.output,
                        spec.base_dir, spec.output_line)


def parse(src: str, base_dir: str = ".") -> ProtocolSpec:
    """Parse and validate protocol source text."""
    spec = _Parser(src, base_dir).parse()
    return validate(spec)


def load(path) -> ProtocolSpec:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), os.path.dirname(os.path.abspath(path)))


def format_protocol(spec: ProtocolSpec) -> str:
    """Source text that parses back to ``spec``."""
    out = [f"protocol {spec.name}"]
    for s in spec.systems:
        out.append(f"system {s.label} dim={s.dim}{' classical' if s.classical else ''} owner={s.owner}")
    for inp in spec.inputs:
        out.append(f"input {inp.kind} {' '.join(inp.args)}")
    if spec.output:
        out.append(f"output {spec.output}")
    for rd in spec.rounds:
        out.append(f"round {rd.index}")
        for party, ops, send in ((ALICE, rd.alice_ops, rd.alice_send), (BOB, rd.bob_ops, rd.bob_send)):
            for op in ops:
                ctl = f" control={op.control}" if op.control else ""
                out.append(f"{party} op={op.op} targets={','.join(op.targets)}{ctl}")
            if send:
                out.append(f"{party} send {','.join(send)}")
    return "\n".join(out) + "\n"


# -- inputs ----------------------------------------------------------------------


def _parse_dist(text: str, dim: int, line: int) -> np.ndarray:
    if text == "uniform":
        return np.full(dim, 1.0 / dim)
    try:
        p = np.array([float(x) for x in text[2:].split(",")])
    except ValueError:
        raise ValidationError(f"bad distribution {text!r}", line) from None
    if p.size != dim or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
        raise ValidationError(f"distribution {text!r} is not a probability vector of length {dim}", line)
    return p


def build_input(spec: ProtocolSpec) -> DensityOperator:
    """Default input: ``input`` lines as product factors, ``|0>`` elsewhere."""
    lay = spec.input_layout
    pieces: list[tuple[list[str], np.ndarray]] = []
    covered = set()
    for inp in spec.inputs:
        if inp.kind == "cq":
            lab = inp.args[0]
            p = _parse_dist(inp.args[1], lay[lab].dim, inp.line)
            pieces.append(([lab], np.diag(p).astype(complex)))
            covered.add(lab)
        elif inp.kind == "epr":
            v = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)
            pieces.append((list(inp.args), np.outer(v, v.conj())))
            covered.update(inp.args)
        else:
            path = inp.args[0]
            path = path if os.path.isabs(path) else os.path.join(spec.base_dir, path)
            st = load_state(path)
            for s in st.layout.subsystems:
                if s.label not in lay or lay[s.label] != s:
                    raise ValidationError(f"state file subsystem {s.token()} does not match declarations",
                                          inp.line)
                if s.label in covered:
                    raise ValidationError(f"system {s.label!r} initialised twice", inp.line)
            pieces.append((list(st.layout.labels), np.asarray(st.matrix)))
            covered.update(st.layout.labels)
    for lab in lay.labels:
        if lab not in covered:
            z = np.zeros((lay[lab].dim, lay[lab].dim), dtype=complex)
            z[0, 0] = 1
            pieces.append(([lab], z))
    labels: list[str] = []
    m = np.ones((1, 1), dtype=complex)
    for labs, mat in pieces:
        labels += labs
        m = np.kron(m, mat)
    return DensityOperator(lay.select(labels), m).reorder(lay.labels)


# -- execution -------------------------------------------------------------------


def comm_stats(spec: ProtocolSpec) -> CommStats:
    per = []
    for rd in spec.rounds:
        qa = math.log2(spec.dim_of(rd.alice_send)) if rd.alice_send else 0.0
        qb = math.log2(spec.dim_of(rd.bob_send)) if rd.bob_send else 0.0
        per.append((rd.index, qa, qb))
    return CommStats(sum(p[1] for p in per), sum(p[2] for p in per), tuple(per))


def _check_input(spec: ProtocolSpec, rho: DensityOperator) -> None:
    if rho.layout != spec.input_layout:
        raise LayoutMismatch(f"input layout {rho.layout.header()!r} does not match protocol "
                             f"{spec.input_layout.header()!r}")


def _apply_op(op: OpDecl, rho: DensityOperator, spec: ProtocolSpec, rd: int) -> DensityOperator:
    try:
        if op.controlled:
            control = op.control or spec.classical_input_label
            return apply_controlled(op.channel, rho, control, op.targets)
        return apply(op.channel, rho, op.targets)
    except QleakError as e:
        if isinstance(e, ParseError):
            raise
        raise type(e)(f"round {rd}, {op.party} op={op.op}: {e}") from e


def _iter_steps(spec: ProtocolSpec):
    """Yield ``(round, party, kind, payload, half_done)`` in Fig.-1 order."""
    for rd in spec.rounds:
        for op in rd.alice_ops:
            yield rd.index, ALICE, "op", op
        yield rd.index, ALICE, "send", rd.alice_send
        for op in rd.bob_ops:
            yield rd.index, BOB, "op", op
        if rd.index < spec.r:
            yield rd.index, BOB, "send", rd.bob_send


def _execute(spec: ProtocolSpec, rho: DensityOperator, stop=None):
    _check_input(spec, rho)
    a0 = spec.classical_input_label
    a0_marg = partial_trace(rho, [a0]).matrix if a0 else None
    owners = spec.initial_owners()
    trace, steps = [], []
    for rd, party, kind, payload in _iter_steps(spec):
        if stop is not None and stop(rd, party, kind):
            break
        if kind == "op":
            rho = _apply_op(payload, rho, spec, rd)
            detail = f"op={payload.op} targets={','.join(payload.targets)}"
            if a0 is not None:
                drift = np.abs(partial_trace(rho, [a0]).matrix - a0_marg).max()
                if drift > PRESERVE_TOL:
                    raise QleakError(f"round {rd}: classical input marginal drifted by {drift:.3e}")
        else:
            for lab in payload:
                owners[lab] = BOB if party == ALICE else ALICE
            detail = "send " + ",".join(payload)
        trace.append(rho)
        steps.append(Step(rd, party, kind, detail, spec.labels_of(BOB, owners)))
    return rho, trace, steps


def run(spec: ProtocolSpec, rho: DensityOperator | None = None) -> RunResult:
    """Run the protocol; ``trace[k]`` is the state after ``steps[k]``."""
    if rho is None:
        rho = build_input(spec)
    final, trace, steps = _execute(spec, rho)
    return RunResult(final, comm_stats(spec), trace, steps)


def run_prefix(spec: ProtocolSpec, rho: DensityOperator, k: int, half: str) -> DensityOperator:
    """State after ``Phi_k`` (``half='A'``) or after ``Psi_k`` (``half='B'``)."""
    if not 1 <= k <= spec.r:
        raise BadRound(f"round {k} outside 1..{spec.r}")
    if half not in ("A", "B"):
        raise BadRound(f"half must be 'A' or 'B', got {half!r}")

    def stop(rd, party, kind):
        if rd > k:
            return True
        return half == "A" and rd == k and party == BOB

    final, _, _ = _execute(spec, rho, stop)
    return final


# -- Yao decomposition --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class YaoDecomposition:
    """Final pure state as ``sum_i lambda_i |x> (x) xi_i (x) zeta_i``."""

    coefficients: np.ndarray
    alice_vectors: list
    bob_vectors: list
    alice_labels: tuple
    bob_labels: tuple
    control_label: str
    x: int
    layout: SystemLayout
    bound: int

    @property
    def term_count(self) -> int:
        return len(self.coefficients)

    @property
    def terms(self):
        return list(zip(self.coefficients, self.alice_vectors, self.bob_vectors))

    def reconstruct(self) -> PureState:
        dc = self.layout[self.control_label].dim
        xv = np.zeros(dc, dtype=complex)
        xv[self.x] = 1.0
        v = sum(lam * np.kron(xv, np.kron(a, b)) for lam, a, b in self.terms)
        order = (self.control_label,) + self.alice_labels + self.bob_labels
        ps = PureState.normalized(self.layout.select(order), v)
        return ps.reorder(self.layout.labels)


def _apply_unitary_vec(v: np.ndarray, labels: list, dims: dict, u: np.ndarray, targets) -> np.ndarray:
    targets = list(targets)
    rest = [lab for lab in labels if lab not in targets]
    shape = [dims[lab] for lab in labels]
    perm = [labels.index(t) for t in targets] + [labels.index(r) for r in rest]
    t = v.reshape(shape).transpose(perm).reshape(u.shape[0], -1)
    t = (u @ t).reshape([dims[lab] for lab in targets + rest])
    inv = np.argsort(perm)
    return t.transpose(inv).reshape(-1)


def _split_vec(v: np.ndarray, labels: list, dims: dict, sent) -> tuple[list, list, list]:
    """Schmidt split of ``v`` into (kept part, sent part); returns coefficients and factor lists."""
    sent = list(sent)
    rest = [lab for lab in labels if lab not in sent]
    shape = [dims[lab] for lab in labels]
    perm = [labels.index(r) for r in rest] + [labels.index(s) for s in sent]
    d_rest = math.prod(dims[lab] for lab in rest)
    m = v.reshape(shape).transpose(perm).reshape(d_rest, -1)
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    keep = s > YAO_DROP_TOL
    return list(s[keep]), [u[:, j] for j in np.flatnonzero(keep)], [vh[j, :] for j in np.flatnonzero(keep)]


def yao_decompose(spec: ProtocolSpec, x: int, bob_init: PureState) -> YaoDecomposition:
    """Iterated Schmidt decomposition of a unitary protocol's final pure state.

    Alice starts in ``|x>|0...0>``; Bob starts in ``bob_init`` on his initial
    registers.  After every message each term is Schmidt-decomposed across the
    sender's boundary and indices are merged, so the number of terms never
    exceeds the product of all message dimensions.
    """
    a0 = spec.classical_input_label
    if a0 is None:
        raise NotUnitaryProtocol("Yao decomposition needs a classical input register")
    for rd in spec.rounds:
        for op in rd.alice_ops + rd.bob_ops:
            chans = op.channel.branches if op.controlled else (op.channel,)
            if not all(c.is_unitary for c in chans):
                raise NotUnitaryProtocol(f"round {rd.index}: {op.party} op={op.op} is not unitary; dilate first")
            if op.party == BOB and op.controlled:
                raise NotUnitaryProtocol("Bob operations must be plain unitaries")
    if not isinstance(bob_init, PureState):
        raise NotUnitaryProtocol("Bob's initial state must be pure")
    dims = {s.label: s.dim for s in spec.systems}
    alice = [lab for lab in spec.labels_of(ALICE, spec.initial_owners()) if lab != a0]
    bob = list(spec.bob_initial())
    if tuple(bob_init.layout.labels) != tuple(bob):
        raise LayoutMismatch(f"bob_init must be on {bob}, got {list(bob_init.layout.labels)}")
    if not 0 <= x < dims[a0]:
        raise ValueError(f"x={x} outside the classical input alphabet")

    a_init = np.zeros(math.prod(dims[lab] for lab in alice) if alice else 1, dtype=complex)
    a_init[0] = 1.0
    terms = [(1.0, a_init, np.asarray(bob_init.amplitudes, dtype=complex))]

    for rd, party, kind, payload in _iter_steps(spec):
        if kind == "op":
            op = payload
            u = (op.channel.branches[x] if op.controlled else op.channel).kraus[0]
            if party == ALICE:
                terms = [(c, _apply_unitary_vec(a, alice, dims, u, op.targets), b) for c, a, b in terms]
            else:
                terms = [(c, a, _apply_unitary_vec(b, bob, dims, u, op.targets)) for c, a, b in terms]
            continue
        sent = list(payload)
        if not sent:
            continue
        new = []
        for c, a, b in terms:
            if party == ALICE:
                coef, kept, moved = _split_vec(a, alice, dims, sent)
                new += [(c * s, k, np.kron(b, mv)) for s, k, mv in zip(coef, kept, moved)]
            else:
                coef, kept, moved = _split_vec(b, bob, dims, sent)
                new += [(c * s, np.kron(a, mv), k) for s, k, mv in zip(coef, kept, moved)]
        if party == ALICE:
            alice = [lab for lab in alice if lab not in sent]
            bob = bob + sent
        else:
            bob = [lab for lab in bob if lab not in sent]
            alice = alice + sent
        terms = [t for t in new if t[0] > YAO_DROP_TOL]

    bound = math.prod(spec.dim_of(rd.alice_send) * spec.dim_of(rd.bob_send) for rd in spec.rounds)
    return YaoDecomposition(
        np.array([t[0] for t in terms]), [t[1] for t in terms], [t[2] for t in terms],
        tuple(alice), tuple(bob), a0, int(x), spec.input_layout, bound)
