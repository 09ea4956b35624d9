"""States over labelled composite systems.

A :class:`SystemLayout` is an ordered list of subsystems.  States are dense
matrices (or amplitude vectors) indexed in that order, first subsystem most
significant.  Classical registers live in the same dense matrix; their
diagonality is an invariant checked by :meth:`DensityOperator.validate`.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import numkernel as nk
from .errors import (
    BadCut,
    DimensionOverflow,
    InvalidState,
    LayoutMismatch,
    UnknownLabel,
    WeightMismatch,
)

STATE_TOL = 1e-9
RANK_TOL = 1e-9


@dataclass(frozen=True)
class Subsystem:
    label: str
    dim: int
    classical: bool = False

    def __post_init__(self):
        if not self.label or any(c.isspace() for c in self.label) or ":" in self.label:
            raise ValueError(f"bad subsystem label {self.label!r}")
        if int(self.dim) < 1:
            raise ValueError(f"subsystem {self.label} has dimension {self.dim}")

    def token(self) -> str:
        return f"{self.label}:{self.dim}:{'c' if self.classical else 'q'}"


@dataclass(frozen=True)
class SystemLayout:
    """Ordered subsystems; labels unique, total dimension at most 256.

    Dimension-1 subsystems are allowed (trivial environments, empty
    messages).
    """

    subsystems: tuple[Subsystem, ...]

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        labels = [s.label for s in self.subsystems]
        if len(set(labels)) != len(labels):
            raise LayoutMismatch(f"duplicate labels in layout {labels}")
        if self.total_dim > nk.MAX_DIM:
            raise DimensionOverflow(f"total dimension {self.total_dim} exceeds {nk.MAX_DIM}")

    @classmethod
    def of(cls, *specs) -> "SystemLayout":
        """Build from ``(label, dim)`` or ``(label, dim, classical)`` tuples."""
        return cls(tuple(s if isinstance(s, Subsystem) else Subsystem(*s) for s in specs))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.subsystems)

    @property
    def total_dim(self) -> int:
        return math.prod(s.dim for s in self.subsystems)

    def __len__(self) -> int:
        return len(self.subsystems)

    def __contains__(self, label) -> bool:
        return label in self.labels

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabel(f"unknown label {label!r}; layout has {list(self.labels)}") from None

    def __getitem__(self, label: str) -> Subsystem:
        return self.subsystems[self.index(label)]

    def dim_of(self, labels: Iterable[str]) -> int:
        return math.prod(self[lab].dim for lab in labels)

    def select(self, labels: Iterable[str]) -> "SystemLayout":
        """Sub-layout with the given labels, in the given order."""
        return SystemLayout(tuple(self[lab] for lab in labels))

    def in_order(self, labels: Iterable[str]) -> tuple[str, ...]:
        """The given labels sorted into layout order."""
        wanted = set(labels)
        for lab in wanted:
            self.index(lab)
        return tuple(lab for lab in self.labels if lab in wanted)

    def complement(self, labels: Iterable[str]) -> tuple[str, ...]:
        wanted = set(labels)
        for lab in wanted:
            self.index(lab)
        return tuple(lab for lab in self.labels if lab not in wanted)

    def __add__(self, other: "SystemLayout") -> "SystemLayout":
        return SystemLayout(self.subsystems + other.subsystems)

    def replace(self, label: str, **changes) -> "SystemLayout":
        i = self.index(label)
        subs = list(self.subsystems)
        s = subs[i]
        subs[i] = Subsystem(changes.get("label", s.label), changes.get("dim", s.dim),
                            changes.get("classical", s.classical))
        return SystemLayout(tuple(subs))

    def fresh_label(self, base: str) -> str:
        label, k = base, 1
        while label in self.labels:
            label = f"{base}{k}"
            k += 1
        return label

    def header(self) -> str:
        return "layout " + " ".join(s.token() for s in self.subsystems)

    @classmethod
    def parse_header(cls, line: str) -> "SystemLayout":
        parts = line.split()
        if not parts or parts[0] != "layout":
            raise InvalidState(f"expected 'layout label:dim:c|q ...', got {line!r}")
        subs = []
        for tok in parts[1:]:
            fields = tok.split(":")
            if len(fields) != 3 or fields[2] not in ("c", "q"):
                raise InvalidState(f"bad layout token {tok!r}")
            try:
                dim = int(fields[1])
            except ValueError:
                raise InvalidState(f"bad dimension in layout token {tok!r}") from None
            subs.append(Subsystem(fields[0], dim, fields[2] == "c"))
        return cls(tuple(subs))


# -- tensor helpers -----------------------------------------------------------


def permute_operator(m: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors: new factor ``k`` is old factor ``perm[k]``."""
    n = len(dims)
    if list(perm) == list(range(n)):
        return m
    t = m.reshape(tuple(dims) * 2)
    t = t.transpose(tuple(perm) + tuple(n + p for p in perm))
    d = m.shape[0]
    return t.reshape(d, d)


def permute_vector(v: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    if list(perm) == list(range(len(dims))):
        return v
    return v.reshape(tuple(dims)).transpose(tuple(perm)).reshape(-1)


def ptrace_matrix(m: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace keeping factor indices ``keep`` (ascending)."""
    n = len(dims)
    keep = list(keep)
    if keep == list(range(n)):
        return m
    t = m.reshape(tuple(dims) * 2)
    letters = "abcdefghijklmnopqrstuvwxyz"
    if n > 26:
        raise DimensionOverflow("too many subsystems")
    rows = list(letters[:n])
    cols = [rows[i] if i not in keep else letters[i].upper() for i in range(n)]
    out = "".join(rows[i] for i in keep) + "".join(cols[i] for i in keep)
    r = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    dk = math.prod(dims[i] for i in keep)
    return r.reshape(dk, dk)


# -- states -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DensityOperator:
    layout: SystemLayout
    matrix: np.ndarray

    def __post_init__(self):
        m = nk.as_matrix(self.matrix)
        d = self.layout.total_dim
        if m.shape != (d, d):
            raise LayoutMismatch(f"matrix shape {m.shape} does not match layout dimension {d}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    @property
    def labels(self) -> tuple[str, ...]:
        return self.layout.labels

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def validate(self, tol: float = STATE_TOL) -> "DensityOperator":
        """Check every state invariant; returns ``self`` or raises InvalidState."""
        m = self.matrix
        asym = np.linalg.norm(m - m.conj().T, 2)
        if asym > tol:
            raise InvalidState(f"not Hermitian: ||m - m^dag|| = {asym:.3e}")
        h = 0.5 * (m + m.conj().T)
        lo = float(np.linalg.eigvalsh(h)[0])
        if lo < -tol:
            raise InvalidState(f"not PSD: min eigenvalue {lo:.3e}")
        tr = self.trace()
        if abs(tr - 1.0) > tol:
            raise InvalidState(f"trace {tr!r} != 1")
        for s in self.layout.subsystems:
            if s.classical and s.dim > 1:
                red = partial_trace(self, [s.label]).matrix
                off = np.abs(red - np.diag(np.diag(red))).sum()
                if off > tol:
                    raise InvalidState(f"classical subsystem {s.label} has off-diagonal mass {off:.3e}")
        return self

    def reduced(self, keep: Iterable[str]) -> "DensityOperator":
        return partial_trace(self, keep)

    def reorder(self, labels: Sequence[str]) -> "DensityOperator":
        """Same state with subsystems listed in ``labels`` order (a permutation)."""
        labels = list(labels)
        if sorted(labels) != sorted(self.labels):
            raise LayoutMismatch(f"{labels} is not a permutation of {list(self.labels)}")
        perm = [self.layout.index(lab) for lab in labels]
        m = permute_operator(self.matrix, self.layout.dims, perm)
        return DensityOperator(self.layout.select(labels), m)

    def tensor(self, other: "DensityOperator") -> "DensityOperator":
        return DensityOperator(self.layout + other.layout, np.kron(self.matrix, other.matrix))

    def relabel(self, mapping: dict[str, str]) -> "DensityOperator":
        subs = tuple(Subsystem(mapping.get(s.label, s.label), s.dim, s.classical)
                     for s in self.layout.subsystems)
        return DensityOperator(SystemLayout(subs), self.matrix)

    def eigvals(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))[::-1]


@dataclass(frozen=True, eq=False)
class PureState:
    layout: SystemLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if v.size != self.layout.total_dim:
            raise LayoutMismatch(f"{v.size} amplitudes for layout dimension {self.layout.total_dim}")
        if not np.all(np.isfinite(v)):
            raise InvalidState("amplitudes contain NaN or Inf")
        norm = np.linalg.norm(v)
        if abs(norm - 1.0) > 1e-10:
            raise InvalidState(f"amplitude norm {norm!r} != 1")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "amplitudes", v)

    @classmethod
    def normalized(cls, layout: SystemLayout, amplitudes) -> "PureState":
        v = np.asarray(amplitudes, dtype=complex).reshape(-1)
        return cls(layout, v / np.linalg.norm(v))

    @classmethod
    def basis(cls, layout: SystemLayout, index: int | Sequence[int] = 0) -> "PureState":
        if not isinstance(index, int):
            index = int(np.ravel_multi_index(tuple(index), layout.dims)) if len(layout) else 0
        v = np.zeros(layout.total_dim, dtype=complex)
        v[index] = 1.0
        return cls(layout, v)

    def density(self) -> DensityOperator:
        v = self.amplitudes
        return DensityOperator(self.layout, np.outer(v, v.conj()))

    def reorder(self, labels: Sequence[str]) -> "PureState":
        labels = list(labels)
        if sorted(labels) != sorted(self.layout.labels):
            raise LayoutMismatch(f"{labels} is not a permutation of {list(self.layout.labels)}")
        perm = [self.layout.index(lab) for lab in labels]
        return PureState(self.layout.select(labels), permute_vector(self.amplitudes, self.layout.dims, perm))

    def tensor(self, other: "PureState") -> "PureState":
        return PureState(self.layout + other.layout, np.kron(self.amplitudes, other.amplitudes))

    def inner(self, other: "PureState") -> complex:
        if other.layout != self.layout:
            raise LayoutMismatch("inner product of states on different layouts")
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True, eq=False)
class SchmidtDecomposition:
    coefficients: np.ndarray
    left_vectors: np.ndarray   # columns, on the cut subsystems
    right_vectors: np.ndarray  # columns, on the complement
    rank: int
    left_layout: SystemLayout
    right_layout: SystemLayout

    def reconstruct(self) -> np.ndarray:
        """Amplitudes in (cut, complement) order."""
        k = self.coefficients.size
        return np.einsum("i,ai,bi->ab", self.coefficients, self.left_vectors[:, :k],
                         self.right_vectors[:, :k]).reshape(-1)


def maximally_mixed(layout: SystemLayout) -> DensityOperator:
    d = layout.total_dim
    return DensityOperator(layout, np.eye(d) / d)


def partial_trace(rho: DensityOperator, keep: Iterable[str]) -> DensityOperator:
    """Reduced state on ``keep`` (subsystems stay in their original order)."""
    keep = set(keep)
    if not keep:
        raise UnknownLabel("partial_trace needs at least one label to keep")
    ordered = rho.layout.in_order(keep)
    idx = [rho.layout.index(lab) for lab in ordered]
    m = ptrace_matrix(rho.matrix, rho.layout.dims, idx)
    return DensityOperator(rho.layout.select(ordered), m)


def make_cq(weights: Sequence[float], conditional_states: Sequence[DensityOperator],
            label: str = "A") -> DensityOperator:
    """``sum_a p_a |a><a| (x) rho^a`` with a classical register ``label`` first."""
    p = np.asarray(weights, dtype=float)
    if p.ndim != 1 or p.size == 0 or len(conditional_states) != p.size:
        raise WeightMismatch("need one conditional state per weight")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise WeightMismatch(f"weights must be a probability vector, sum={p.sum()!r}")
    lay = conditional_states[0].layout
    for st in conditional_states[1:]:
        if st.layout != lay:
            raise LayoutMismatch("conditional states do not share one layout")
    if label in lay:
        raise LayoutMismatch(f"classical label {label!r} already used by conditional states")
    na, db = p.size, lay.total_dim
    m = np.zeros((na * db, na * db), dtype=complex)
    for a, st in enumerate(conditional_states):
        m[a * db:(a + 1) * db, a * db:(a + 1) * db] = p[a] * st.matrix
    return DensityOperator(SystemLayout((Subsystem(label, na, True),)) + lay, m)


def epr_pairs(m: int) -> PureState:
    """``m`` maximally entangled qubit pairs, labelled A1 B1 A2 B2 ..."""
    if m < 1:
        raise ValueError("need at least one EPR pair")
    if 4 ** m > nk.MAX_DIM:
        raise DimensionOverflow(f"{m} EPR pairs exceed dimension {nk.MAX_DIM}")
    pair = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)
    v = np.ones(1, dtype=complex)
    subs = []
    for k in range(1, m + 1):
        v = np.kron(v, pair)
        subs += [Subsystem(f"A{k}", 2), Subsystem(f"B{k}", 2)]
    return PureState(SystemLayout(tuple(subs)), v)


def purify(rho: DensityOperator, env_label: str = "E") -> PureState:
    """Canonical purification ``sum_i sqrt(l_i) |v_i>|i>_E`` with dim E = rank."""
    w, v = nk.hermitian_eig(rho.matrix)
    r = max(1, int(np.sum(w > RANK_TOL)))
    amps = (v[:, :r] * np.sqrt(np.clip(w[:r], 0.0, None))).reshape(-1)
    env = Subsystem(rho.layout.fresh_label(env_label), r)
    return PureState.normalized(rho.layout + SystemLayout((env,)), amps)


def _split(psi: PureState, cut: Iterable[str]) -> tuple[np.ndarray, SystemLayout, SystemLayout]:
    cut = set(cut)
    if not cut or len(cut) >= len(psi.layout):
        raise BadCut("cut must be a nonempty proper subset of the subsystems")
    left = psi.layout.in_order(cut)
    right = psi.layout.complement(cut)
    ordered = psi.reorder(left + right)
    dl = psi.layout.dim_of(left)
    return ordered.amplitudes.reshape(dl, -1), psi.layout.select(left), psi.layout.select(right)


def schmidt(psi: PureState, cut: Iterable[str]) -> SchmidtDecomposition:
    """Schmidt decomposition across ``cut`` versus its complement."""
    mat, ll, rl = _split(psi, cut)
    u, s, v = nk.svd(mat)
    k = s.size
    rank = int(np.sum(s > RANK_TOL))
    # mat = sum_i s_i u_i conj(v_i)^T
    return SchmidtDecomposition(s.copy(), u[:, :k], np.conj(v[:, :k]), rank, ll, rl)


def trace_distance(rho: DensityOperator, sigma: DensityOperator) -> float:
    _same_layout(rho, sigma)
    return nk.trace_norm(rho.matrix - sigma.matrix)


def _same_layout(rho, sigma) -> None:
    if rho.layout != sigma.layout:
        raise LayoutMismatch("states live on different layouts")


def fidelity(rho: DensityOperator, sigma: DensityOperator) -> float:
    """Root fidelity ``tr sqrt(rho^1/2 sigma rho^1/2)``, in [0, 1]."""
    _same_layout(rho, sigma)
    a = nk.matrix_sqrt_psd(rho.matrix)
    b = nk.matrix_sqrt_psd(sigma.matrix)
    f = float(np.sum(np.linalg.svd(a @ b, compute_uv=False)))
    return min(max(f, 0.0), 1.0)


def purified_distance(rho: DensityOperator, sigma: DensityOperator) -> float:
    f = fidelity(rho, sigma)
    return min(1.0, math.sqrt(max(0.0, 1.0 - f * f)))


def _uhlmann_unitary(target: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Unitary ``U`` on the second factor maximising ``|<target|(1 (x) U)|source>|``.

    Both states are given as ``d_first x d_second`` amplitude matrices, so
    ``(1 (x) U)|source>`` has matrix ``source @ U.T`` and the overlap is
    ``tr(target^dag source U^T)``.  The optimum is the polar factor of the
    overlap matrix.
    """
    k = target.conj().T @ source
    w, _, v = nk.svd(k)
    return (v @ w.conj().T).T


def uhlmann_extension(rho_ab: DensityOperator, sigma_a: DensityOperator) -> DensityOperator:
    """Extension ``sigma_AB`` of ``sigma_A`` with ``F(rho_AB, sigma_AB) >= F(rho_A, sigma_A)``.

    Purifies ``rho_AB`` on ``ABR``, purifies ``sigma_A`` on the same ``BR``
    space, rotates the latter by the Uhlmann-optimal unitary on ``BR`` and
    traces out ``R``.
    """
    a_labels = sigma_a.layout.labels
    for lab in a_labels:
        if lab not in rho_ab.layout or rho_ab.layout[lab] != sigma_a.layout[lab]:
            raise LayoutMismatch(f"sigma_A subsystem {lab!r} does not match rho_AB")
    if rho_ab.layout.in_order(a_labels) != a_labels:
        raise LayoutMismatch("sigma_A subsystems must appear in the same order as in rho_AB")
    b_labels = rho_ab.layout.complement(a_labels)
    order = list(a_labels) + list(b_labels)
    rho = rho_ab.reorder(order).matrix
    da = sigma_a.dim
    db = rho.shape[0] // da

    w, v = nk.hermitian_eig(rho)
    r = max(1, int(np.sum(w > RANK_TOL)))
    mu, u = nk.hermitian_eig(sigma_a.matrix)
    s = max(1, int(np.sum(mu > RANK_TOL)))
    dr = max(r, -(-s // db))
    n = db * dr

    psi = np.zeros((da * db, dr), dtype=complex)
    psi[:, :r] = v[:, :r] * np.sqrt(np.clip(w[:r], 0.0, None))
    psi = psi.reshape(da, n)
    phi = np.zeros((da, n), dtype=complex)
    phi[:, :s] = u[:, :s] * np.sqrt(np.clip(mu[:s], 0.0, None))

    U = _uhlmann_unitary(psi, phi)
    rotated = (phi @ U.T).reshape(da * db, dr)
    sig = rotated @ rotated.conj().T
    sig = 0.5 * (sig + sig.conj().T)
    out = DensityOperator(rho_ab.layout.select(order), sig)
    return out.reorder(rho_ab.layout.labels)


def lo_attack_unitary(phi: PureState, psi: PureState, b_labels: Iterable[str]) -> np.ndarray:
    """Unitary on the ``b_labels`` part steering ``psi`` as close to ``phi`` as possible.

    The returned matrix acts on the B subsystems in layout order.  It aligns
    the Schmidt bases of the two states (polar factor of the B-side overlap),
    so the resulting trace distance is at most ``sqrt(eps (2 - eps))`` where
    ``eps`` is the trace distance of the A marginals.
    """
    if phi.layout != psi.layout:
        raise LayoutMismatch("phi and psi must share one layout")
    b = phi.layout.in_order(b_labels)
    a = phi.layout.complement(b)
    if not b or not a:
        raise BadCut("B part must be a nonempty proper subset of the subsystems")
    order = list(a) + list(b)
    da = phi.layout.dim_of(a)
    fm = phi.reorder(order).amplitudes.reshape(da, -1)
    sm = psi.reorder(order).amplitudes.reshape(da, -1)
    return _uhlmann_unitary(fm, sm)


def apply_local_unitary(psi: PureState, u: np.ndarray, labels: Sequence[str]) -> PureState:
    """``(1 (x) U)|psi>`` with ``U`` acting on ``labels`` (taken in layout order)."""
    tgt = psi.layout.in_order(labels)
    rest = psi.layout.complement(tgt)
    order = list(rest) + list(tgt)
    dr = psi.layout.dim_of(rest)
    mat = psi.reorder(order).amplitudes.reshape(dr, -1) @ np.asarray(u).T
    out = PureState.normalized(psi.layout.select(order), mat.reshape(-1))
    return out.reorder(psi.layout.labels)


def marginal_distance(phi: PureState, psi: PureState, b_labels: Iterable[str]) -> float:
    """Trace distance between the reductions of two pure states onto the non-B part."""
    a = phi.layout.complement(phi.layout.in_order(b_labels))
    return trace_distance(phi.density().reduced(a), psi.density().reduced(a))


def pure_distance(phi: PureState, psi: PureState) -> float:
    """Halved trace distance of the induced density operators: ``sqrt(1 - |<phi|psi>|^2)``.

    Evaluated as the norm of the part of ``psi`` orthogonal to ``phi``, which
    avoids the cancellation in ``1 - |<phi|psi>|^2`` near zero.
    """
    ov = phi.inner(psi)
    return min(1.0, float(np.linalg.norm(psi.amplitudes - ov * phi.amplitudes)))


# -- state file format ---------------------------------------------------------


def format_state(rho: DensityOperator, comment: str | None = None) -> str:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.append(rho.layout.header())
    return "\n".join(lines) + "\n" + nk.format_matrix(rho.matrix)


def parse_state(text: str, validate: bool = True) -> DensityOperator:
    data = nk._data_lines(io.StringIO(text))
    try:
        _, header = next(data)
    except StopIteration:
        raise InvalidState("empty state file") from None
    layout = SystemLayout.parse_header(header)
    m = nk.read_matrix_lines(data)
    for lineno, extra in data:
        raise nk.MatrixFormatError(f"line {lineno}: trailing data {extra!r}")
    rho = DensityOperator(layout, m)
    return rho.validate() if validate else rho


def load_state(path, validate: bool = True) -> DensityOperator:
    with open(path, encoding="utf-8") as fh:
        return parse_state(fh.read(), validate)


def save_state(path, rho: DensityOperator, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_state(rho, comment))
