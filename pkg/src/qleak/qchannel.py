"""Quantum operations in Kraus form.

Measurements are ordinary CPTP maps that write their outcome into a classical
register (see ``BELL_MEASURE``), so protocols need no separate measurement
machinery.
"""

from __future__ import annotations

import io
import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from . import numkernel as nk
from .errors import (
    BlockLeakage,
    DimMismatch,
    NotClassicalControl,
    NotCPTP,
    UnknownGate,
)
from .qstate import DensityOperator, Subsystem, SystemLayout

CPTP_TOL = 1e-9
BLOCK_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class KrausChannel:
    """CPTP map ``rho -> sum_k E_k rho E_k^dag``.

    ``input_dims``/``output_dims`` optionally record the tensor factorization
    the channel expects (e.g. ``(2, 2)`` for CNOT); only the products are
    enforced by :func:`apply`.
    """

    kraus: tuple
    name: str = ""
    input_dims: tuple = ()
    output_dims: tuple = ()
    _checked: bool = field(default=True, repr=False)

    def __post_init__(self):
        ks = tuple(nk.as_matrix(k).copy() for k in self.kraus)
        if not ks:
            raise NotCPTP("channel needs at least one Kraus operator")
        shape = ks[0].shape
        for k in ks:
            if k.shape != shape:
                raise DimMismatch("Kraus operators have different shapes")
            k.setflags(write=False)
        object.__setattr__(self, "kraus", ks)
        if not self.input_dims:
            object.__setattr__(self, "input_dims", (shape[1],))
        if not self.output_dims:
            object.__setattr__(self, "output_dims", (shape[0],))
        if math.prod(self.input_dims) != shape[1] or math.prod(self.output_dims) != shape[0]:
            raise DimMismatch("declared factor dimensions do not match Kraus shape")
        if self._checked:
            err = self.cptp_error()
            if err > CPTP_TOL:
                raise NotCPTP(f"sum E^dag E deviates from identity by {err:.3e}")

    @property
    def input_dim(self) -> int:
        return self.kraus[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.kraus[0].shape[0]

    def cptp_error(self) -> float:
        s = sum(k.conj().T @ k for k in self.kraus)
        return float(np.linalg.norm(s - np.eye(self.input_dim), 2))

    @property
    def is_unitary(self) -> bool:
        return len(self.kraus) == 1 and self.input_dim == self.output_dim

    def compose(self, other: "KrausChannel") -> "KrausChannel":
        """``self`` after ``other``."""
        ks = [a @ b for a in self.kraus for b in other.kraus]
        return KrausChannel(tuple(ks), f"{self.name}*{other.name}", other.input_dims, self.output_dims)

    def power(self, n: int) -> "KrausChannel":
        out = identity_channel(self.input_dims)
        for _ in range(n):
            out = self.compose(out)
        if n == 0:
            return out
        return KrausChannel(out.kraus, f"{self.name}^{n}", self.input_dims, self.output_dims)

    def on_matrix(self, m: np.ndarray) -> np.ndarray:
        return sum(k @ m @ k.conj().T for k in self.kraus)


@dataclass(frozen=True, eq=False)
class ControlledChannel:
    """One CPTP branch per classical control symbol."""

    branches: tuple
    name: str = ""

    def __post_init__(self):
        br = tuple(self.branches)
        if not br:
            raise DimMismatch("controlled channel needs at least one branch")
        d_in, d_out = br[0].input_dim, br[0].output_dim
        for b in br:
            if not isinstance(b, KrausChannel):
                raise TypeError("branches must be KrausChannel instances")
            if b.input_dim != d_in or b.output_dim != d_out:
                raise DimMismatch("branches disagree on input/output dimensions")
        object.__setattr__(self, "branches", br)

    @property
    def control_dim(self) -> int:
        return len(self.branches)

    @property
    def input_dim(self) -> int:
        return self.branches[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.branches[0].output_dim

    @property
    def input_dims(self) -> tuple:
        return self.branches[0].input_dims

    @property
    def output_dims(self) -> tuple:
        return self.branches[0].output_dims


def identity_channel(dims) -> KrausChannel:
    dims = (dims,) if isinstance(dims, int) else tuple(dims)
    d = math.prod(dims)
    return KrausChannel((np.eye(d),), "I", dims, dims)


def unitary_channel(u, name: str = "U", dims=()) -> KrausChannel:
    u = nk.as_matrix(u)
    if not nk.is_unitary(u, 1e-9):
        raise NotCPTP(f"{name} is not unitary")
    return KrausChannel((u,), name, tuple(dims), tuple(dims))


# -- application ---------------------------------------------------------------


def _contract(kraus: Sequence[np.ndarray], t: np.ndarray, dt: int, dr: int) -> np.ndarray:
    """Apply Kraus ops to the first factor of a ``(dt*dr)`` square matrix."""
    m = t.reshape(dt, dr * dt * dr)
    out = None
    for k in kraus:
        x = (k @ m).reshape(k.shape[0], dr, dt, dr)
        y = np.tensordot(x, k.conj(), axes=([2], [1]))  # (dout, dr, dr, dout)
        y = y.transpose(0, 1, 3, 2)
        out = y if out is None else out + y
    do = kraus[0].shape[0]
    return out.reshape(do * dr, do * dr)


def _output_subsystems(ch, rho: DensityOperator, targets: Sequence[str], output) -> tuple:
    if output is not None:
        subs = tuple(s if isinstance(s, Subsystem) else Subsystem(*s) for s in output)
        if math.prod(s.dim for s in subs) != ch.output_dim:
            raise DimMismatch("output subsystems do not match channel output dimension")
        return subs
    if ch.output_dim != ch.input_dim:
        raise DimMismatch("channel changes dimension; pass the output subsystems explicitly")
    return tuple(rho.layout[lab] for lab in targets)


def _check_targets(ch, rho: DensityOperator, targets: Sequence[str]) -> list[str]:
    targets = list(targets)
    if len(set(targets)) != len(targets):
        raise DimMismatch(f"repeated target in {targets}")
    for lab in targets:
        rho.layout.index(lab)
    dt = rho.layout.dim_of(targets)
    if dt != ch.input_dim:
        raise DimMismatch(f"targets {targets} have dimension {dt}, channel expects {ch.input_dim}")
    return targets


def _finish(rho, targets, rest, out_subs, m) -> DensityOperator:
    lay = SystemLayout(out_subs) + rho.layout.select(rest)
    res = DensityOperator(lay, 0.5 * (m + m.conj().T))
    if [s.label for s in out_subs] == list(targets):
        return res.reorder(rho.layout.labels)
    # place new subsystems where the first target was
    first = min(rho.layout.index(t) for t in targets)
    before = [lab for lab in rho.layout.labels[:first] if lab in rest]
    after = [lab for lab in rest if lab not in before]
    return res.reorder(before + [s.label for s in out_subs] + after)


def apply(ch: KrausChannel, rho: DensityOperator, targets: Sequence[str], output=None) -> DensityOperator:
    """Apply ``ch`` to ``targets`` (in the given order), identity elsewhere."""
    targets = _check_targets(ch, rho, targets)
    out_subs = _output_subsystems(ch, rho, targets, output)
    rest = list(rho.layout.complement(targets))
    m = rho.reorder(targets + rest).matrix
    dt, dr = ch.input_dim, rho.dim // ch.input_dim
    return _finish(rho, targets, rest, out_subs, _contract(ch.kraus, m, dt, dr))


def control_leakage(rho: DensityOperator, control: str) -> float:
    """Off-diagonal mass of ``rho`` in the computational basis of ``control``."""
    rest = list(rho.layout.complement([control]))
    m = rho.reorder([control] + rest).matrix
    dc = rho.layout[control].dim
    blk = m.shape[0] // dc
    t = m.reshape(dc, blk, dc, blk)
    mass = 0.0
    for a in range(dc):
        for b in range(dc):
            if a != b:
                mass += float(np.abs(t[a, :, b, :]).sum())
    return mass


def apply_controlled(gamma: ControlledChannel, rho: DensityOperator, control: str,
                     targets: Sequence[str], output=None) -> DensityOperator:
    """Apply branch ``a`` to the block where ``control`` holds ``a``."""
    sub = rho.layout[control]
    if not sub.classical:
        raise NotClassicalControl(f"control {control!r} is not flagged classical")
    if sub.dim != gamma.control_dim:
        raise NotClassicalControl(f"control {control!r} has dimension {sub.dim}, "
                                  f"channel has {gamma.control_dim} branches")
    targets = list(targets)
    if control in targets:
        raise DimMismatch("control cannot also be a target")
    targets = _check_targets(gamma, rho, targets)
    out_subs = _output_subsystems(gamma, rho, targets, output)
    leak = control_leakage(rho, control)
    if leak > BLOCK_TOL:
        raise BlockLeakage(f"state is not block-diagonal in {control!r} (off-diagonal mass {leak:.3e})")
    rest = list(rho.layout.complement([control] + targets))
    m = rho.reorder([control] + targets + rest).matrix
    dc, dt = sub.dim, gamma.input_dim
    dr = rho.dim // (dc * dt)
    blk_in, do = dt * dr, gamma.output_dim
    blk_out = do * dr
    out = np.zeros((dc * blk_out, dc * blk_out), dtype=complex)
    for a, br in enumerate(gamma.branches):
        block = m[a * blk_in:(a + 1) * blk_in, a * blk_in:(a + 1) * blk_in]
        out[a * blk_out:(a + 1) * blk_out, a * blk_out:(a + 1) * blk_out] = _contract(br.kraus, block, dt, dr)
    lay = SystemLayout((sub,) + tuple(out_subs)) + rho.layout.select(rest)
    res = DensityOperator(lay, 0.5 * (out + out.conj().T))
    if [s.label for s in out_subs] == targets:
        return res.reorder(rho.layout.labels)
    new = [s.label for s in out_subs]
    first = min(rho.layout.index(t) for t in targets)
    keep = [control] + rest
    before = [lab for lab in rho.layout.labels[:first] if lab in keep]
    after = [lab for lab in rho.layout.labels if lab in keep and lab not in before]
    return res.reorder(before + new + after)


# -- dilation -------------------------------------------------------------------


def dilate(ch: KrausChannel) -> np.ndarray:
    """Unitary ``V`` on input (x) ancilla with ``tr_anc V(rho (x) |0><0|)V^dag = ch(rho)``.

    The ancilla dimension is the number of Kraus operators rounded up to a
    power of two.  The ancilla is the least significant factor.
    """
    err = ch.cptp_error()
    if err > CPTP_TOL:
        raise NotCPTP(f"channel is not CPTP (error {err:.3e})")
    if ch.input_dim != ch.output_dim:
        raise DimMismatch("dilation needs equal input and output dimensions")
    d, n = ch.input_dim, len(ch.kraus)
    na = 1 << max(0, (n - 1).bit_length())
    big = d * na
    v = np.zeros((big, big), dtype=complex)
    # column (j, 0) of V is sum_k E_k|j> (x) |k>
    iso = np.zeros((d, na, d), dtype=complex)
    for k, e in enumerate(ch.kraus):
        iso[:, k, :] = e
    iso = iso.reshape(big, d)
    cols0 = np.arange(d) * na
    v[:, cols0] = iso
    if big > d:
        comp = scipy.linalg.null_space(iso.conj().T)
        comp = nk._fix_phases(comp)
        other = np.setdiff1d(np.arange(big), cols0)
        v[:, other] = comp
    return v


def dilation_ancilla_dim(ch: KrausChannel) -> int:
    return 1 << max(0, (len(ch.kraus) - 1).bit_length())


def apply_dilated(v: np.ndarray, rho_matrix: np.ndarray, ancilla_dim: int) -> np.ndarray:
    """Run ``rho`` through a dilation and trace out the ancilla."""
    d = rho_matrix.shape[0]
    anc = np.zeros((ancilla_dim, ancilla_dim), dtype=complex)
    anc[0, 0] = 1.0
    big = v @ np.kron(rho_matrix, anc) @ v.conj().T
    return np.einsum("iaja->ij", big.reshape(d, ancilla_dim, d, ancilla_dim))


# -- standard gates ----------------------------------------------------------------

_I = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
_S = np.array([[1, 0], [0, 1j]], dtype=complex)
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
PAULI_ENCODINGS = (_I, _X, _Z, _X @ _Z)

_SINGLE = {"I": _I, "X": _X, "Y": _Y, "Z": _Z, "H": _H, "S": _S}
_DOUBLE = {"CNOT": _CNOT, "SWAP": _SWAP}
GATE_NAMES = tuple(_SINGLE) + tuple(_DOUBLE) + ("BELL_MEASURE", "PAULI_ENCODE(a)")

_PAULI_RE = re.compile(r"^PAULI_ENCODE\(([0-3])\)$")


def bell_states() -> np.ndarray:
    """Columns ``(P_k (x) I)|Phi+>`` for ``P_k`` in ``{I, X, Z, XZ}``."""
    phi = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)
    return np.stack([np.kron(p, _I) @ phi for p in PAULI_ENCODINGS], axis=1)


def _bell_measure() -> KrausChannel:
    # outcome register reset and overwritten with k; qubits left in Bell state k
    b = bell_states()
    ks = []
    for k in range(4):
        proj = np.outer(b[:, k], b[:, k].conj())
        for j in range(4):
            e = np.zeros((4, 4), dtype=complex)
            e[k, j] = 1.0
            ks.append(np.kron(proj, e))
    return KrausChannel(tuple(ks), "BELL_MEASURE", (2, 2, 4), (2, 2, 4))


def standard_gates(name: str) -> KrausChannel:
    """Channel for a named gate.

    ``BELL_MEASURE`` acts on (qubit, qubit, 4-dim classical outcome register).
    ``PAULI_ENCODE(a)`` applies ``{I, X, Z, XZ}[a]`` to one qubit.
    """
    if name in _SINGLE:
        return KrausChannel((_SINGLE[name],), name, (2,), (2,))
    if name in _DOUBLE:
        return KrausChannel((_DOUBLE[name],), name, (2, 2), (2, 2))
    if name == "BELL_MEASURE":
        return _bell_measure()
    m = _PAULI_RE.match(name)
    if m:
        a = int(m.group(1))
        return KrausChannel((PAULI_ENCODINGS[a],), name, (2,), (2,))
    raise UnknownGate(f"unknown gate {name!r}; known: {', '.join(GATE_NAMES)}")


def pauli_encode_controlled() -> ControlledChannel:
    return ControlledChannel(tuple(standard_gates(f"PAULI_ENCODE({a})") for a in range(4)),
                             "PAULI_ENCODE")


# -- Kraus file format ---------------------------------------------------------------


def format_kraus(ch: KrausChannel, comment: str | None = None) -> str:
    lines = [f"# {c}" for c in comment.splitlines()] if comment else []
    lines.append(f"{len(ch.kraus)} {ch.input_dim} {ch.output_dim}")
    return "\n".join(lines) + "\n" + "".join(nk.format_matrix(k) for k in ch.kraus)


def parse_kraus(text: str, name: str = "") -> KrausChannel:
    data = nk._data_lines(io.StringIO(text))
    try:
        lineno, header = next(data)
    except StopIteration:
        raise nk.MatrixFormatError("empty Kraus file") from None
    parts = header.split()
    if len(parts) != 3:
        raise nk.MatrixFormatError(f"line {lineno}: expected 'k in_dim out_dim'")
    try:
        k, din, dout = (int(p) for p in parts)
    except ValueError:
        raise nk.MatrixFormatError(f"line {lineno}: bad header {header!r}") from None
    mats = []
    for _ in range(k):
        m = nk.read_matrix_lines(data)
        if m.shape != (dout, din):
            raise DimMismatch(f"Kraus operator has shape {m.shape}, expected {(dout, din)}")
        mats.append(m)
    for lineno, extra in data:
        raise nk.MatrixFormatError(f"line {lineno}: trailing data {extra!r}")
    return KrausChannel(tuple(mats), name)


def load_kraus(path, name: str | None = None) -> KrausChannel:
    with open(path, encoding="utf-8") as fh:
        return parse_kraus(fh.read(), name if name is not None else str(path))


def save_kraus(path, ch: KrausChannel, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_kraus(ch, comment))

