"""Conditional min-entropy with primal/dual certificates.

``H_min(A|B) = -log2 min { tr(sigma) : 1_A (x) sigma >= rho_AB }``.

The definition quantifies over normalized ``sigma_B`` and a separate scale
``2**lambda``; absorbing the scale into ``sigma`` gives the single trace
minimisation above, which is what :func:`hmin` solves.  Its dual is
``max { tr(rho X) : X >= 0, tr_A X = 1_B }``, and for cq states the dual
optimum is the optimal guessing probability of A given B.

The solver is a primal log-barrier method on ``sigma``:

    minimise  t * tr(sigma) - log det(1 (x) sigma - rho)

with damped Newton centering and ``t`` multiplied by 10 after each centering.
At a central point ``X = S^-1 / t`` (``S`` the slack operator) is dual
feasible up to a congruence that is removed exactly, so every outer step
yields a certified interval ``[dual, primal]`` for ``2**-H_min``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from . import numkernel as nk
from .errors import BadDistribution, BadPartition, NotCQ, SolverDiverged
from .qchannel import control_leakage
from .qstate import DensityOperator

GAP_TOL = 1e-6          # bits; the contract
TARGET_GAP = 1e-9       # bits; what the solver aims for
MAX_ITER = 500          # total Newton steps
INIT_DELTA = 1e-3
DENSE_NEWTON_MAX = 1024  # d_B**2 above which Newton systems use CG


@dataclass(frozen=True, eq=False)
class EntropySolution:
    """Certified min-entropy.

    ``primal_sigma`` is unnormalised with trace ``2**-hmin`` and satisfies
    ``1_A (x) primal_sigma >= rho``; ``dual_X`` satisfies ``X >= 0`` and
    ``tr_A X = 1_B`` so that ``tr(rho X)`` lower-bounds ``2**-hmin``.
    """

    hmin: float
    primal_sigma: np.ndarray
    dual_X: np.ndarray
    gap: float
    iterations: int
    primal_bound: float
    dual_bound: float
    a_labels: tuple = ()
    b_labels: tuple = ()

    @property
    def pguess(self) -> float:
        return 2.0 ** (-self.hmin)

    @property
    def hmin_upper(self) -> float:
        """``-log2`` of the dual bound; the true value lies in ``[hmin, hmin_upper]``."""
        return -math.log2(self.dual_bound)


def _reduce_b(rho: np.ndarray, da: int, db: int) -> np.ndarray:
    return np.einsum("aiaj->ij", rho.reshape(da, db, da, db))


def _slack(rho: np.ndarray, sigma: np.ndarray, da: int) -> np.ndarray:
    s = np.kron(np.eye(da), sigma) - rho
    return 0.5 * (s + s.conj().T)


def certificate(rho: np.ndarray, da: int, sigma: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    """Primal and dual bounds on ``2**-H_min`` carried by a witness pair.

    Raises ``ValueError`` if either witness is infeasible beyond 1e-7.
    """
    db = sigma.shape[0]
    lo = np.linalg.eigvalsh(_slack(rho, sigma, da))[0]
    if lo < -1e-7:
        raise ValueError(f"primal witness infeasible: min eig of 1 (x) sigma - rho is {lo:.3e}")
    xs = 0.5 * (x + x.conj().T)
    if np.linalg.eigvalsh(xs)[0] < -1e-9:
        raise ValueError("dual witness is not PSD")
    if np.linalg.norm(_reduce_b(xs, da, db) - np.eye(db), 2) > 1e-7:
        raise ValueError("dual witness violates tr_A X = 1_B")
    return float(np.trace(sigma).real), float(np.trace(rho @ xs).real)


def _dual_from_slack(w: np.ndarray, t: float, da: int, db: int) -> np.ndarray:
    x = w / t
    tr_a = _reduce_b(x, da, db)
    ev, vec = np.linalg.eigh(0.5 * (tr_a + tr_a.conj().T))
    inv_root = (vec / np.sqrt(ev)) @ vec.conj().T
    c = np.kron(np.eye(da), inv_root)
    x = c @ x @ c
    return 0.5 * (x + x.conj().T)


def _hessian(w4: np.ndarray, db: int) -> np.ndarray:
    # H(D) = tr_A(W (1 (x) D) W) as a matrix on row-major vec(D)
    m = np.einsum("aibk,blaj->ijkl", w4, w4, optimize=True)
    return m.reshape(db * db, db * db)


def _newton_direction(w: np.ndarray, g: np.ndarray, da: int, db: int) -> np.ndarray:
    w4 = w.reshape(da, db, da, db)
    if db * db <= DENSE_NEWTON_MAX:
        h = _hessian(w4, db)
        h = 0.5 * (h + h.conj().T)
        try:
            cf = scipy.linalg.cho_factor(h, check_finite=False)
            d = scipy.linalg.cho_solve(cf, -g.reshape(-1), check_finite=False)
        except np.linalg.LinAlgError:
            d = np.linalg.solve(h, -g.reshape(-1))
    else:
        def mv(v):
            dd = v.reshape(db, db)
            return np.einsum("aibk,kl,blaj->ij", w4, dd, w4, optimize=True).reshape(-1)

        op = scipy.sparse.linalg.LinearOperator((db * db, db * db), matvec=mv, dtype=complex)
        d, _ = scipy.sparse.linalg.cg(op, -g.reshape(-1), rtol=1e-13, maxiter=20 * db * db)
    d = d.reshape(db, db)
    return 0.5 * (d + d.conj().T)


def _barrier(rho, sigma, da, t):
    s = _slack(rho, sigma, da)
    ev, vec = np.linalg.eigh(s)
    if ev[0] <= 0:
        return None
    return t * float(np.trace(sigma).real) - float(np.sum(np.log(ev))), ev, vec


def solve_hmin_matrix(rho: np.ndarray, da: int, *, gap_tol: float = GAP_TOL,
                      target_gap: float = TARGET_GAP, max_iter: int = MAX_ITER):
    """Solve the min-entropy SDP for a matrix ordered (A, B) with ``dim A = da``.

    Returns ``(sigma, X, primal, dual, gap_bits, iterations)``.
    """
    rho = 0.5 * (rho + rho.conj().T)
    n = rho.shape[0]
    db = n // da
    if da * db != n:
        raise BadPartition(f"dimension {n} is not divisible by d_A = {da}")
    eye_b = np.eye(db)

    rho_b = _reduce_b(rho, da, db)
    delta = INIT_DELTA
    while True:
        sigma = da * rho_b + delta * eye_b
        sigma = 0.5 * (sigma + sigma.conj().T)
        if np.linalg.eigvalsh(_slack(rho, sigma, da))[0] >= 0.5 * delta:
            break
        delta *= 10
        if delta > 1e3:
            raise SolverDiverged("could not find a strictly feasible starting point")

    t = 1.0
    iters = 0
    best = None
    center_tol = 1e-6
    while True:
        state = _barrier(rho, sigma, da, t)
        for _ in range(60):
            phi, ev, vec = state
            w = (vec / ev) @ vec.conj().T
            g = t * eye_b - _reduce_b(w, da, db)
            g = 0.5 * (g + g.conj().T)
            d = _newton_direction(w, g, da, db)
            lam2 = -float(np.real(np.vdot(g, d)))
            if lam2 < 0 or not math.isfinite(lam2):
                break
            if lam2 / 2 <= center_tol:
                break
            lam = math.sqrt(lam2)
            step = 1.0 if lam < 0.25 else 1.0 / (1.0 + lam)
            moved = False
            for _ in range(60):
                cand = sigma + step * d
                res = _barrier(rho, cand, da, t)
                if res is not None and res[0] <= phi - 0.01 * step * lam2:
                    sigma, state, moved = cand, res, True
                    break
                step *= 0.5
            iters += 1
            if not moved or iters >= max_iter:
                break
        _, ev, vec = state
        w = (vec / ev) @ vec.conj().T
        x = _dual_from_slack(w, t, da, db)
        primal = float(np.trace(sigma).real)
        dual = float(np.real(np.vdot(x, rho)))
        if dual > 0 and primal > 0:
            gap = max(0.0, math.log2(primal) - math.log2(dual))
            if best is None or gap < best[4]:
                best = (sigma.copy(), x, primal, dual, gap)
        if best is not None and best[4] <= target_gap:
            break
        if iters >= max_iter or t > 1e16:
            break
        t *= 10.0

    if best is None or best[4] > gap_tol:
        gap = float("inf") if best is None else best[4]
        raise SolverDiverged(f"duality gap {gap:.3e} bits not reached within {iters} Newton steps")
    sigma, x, primal, dual, gap = best
    return sigma, x, primal, dual, gap, iters


def _partition(rho: DensityOperator, a_labels, b_labels) -> tuple[tuple, tuple]:
    a = list(a_labels)
    b = list(b_labels)
    if not a:
        raise BadPartition("A must contain at least one subsystem")
    if set(a) & set(b):
        raise BadPartition(f"A and B overlap: {sorted(set(a) & set(b))}")
    if len(set(a)) != len(a) or len(set(b)) != len(b):
        raise BadPartition("repeated label in partition")
    if set(a) | set(b) != set(rho.labels):
        missing = set(rho.labels) - set(a) - set(b)
        extra = (set(a) | set(b)) - set(rho.labels)
        raise BadPartition(f"A and B must cover the layout exactly (missing {sorted(missing)}, "
                           f"unknown {sorted(extra)}); trace out other systems first")
    return rho.layout.in_order(a), rho.layout.in_order(b)


def hmin(rho: DensityOperator, a_labels: Iterable[str], b_labels: Iterable[str] = ()) -> EntropySolution:
    """``H_min(A|B)`` in bits with primal and dual witnesses.

    ``a_labels`` and ``b_labels`` must partition the layout; ``b_labels``
    may be empty (unconditional min-entropy).
    """
    a, b = _partition(rho, a_labels, b_labels)
    m = rho.reorder(list(a) + list(b)).matrix
    da = rho.layout.dim_of(a)
    sigma, x, primal, dual, gap, iters = solve_hmin_matrix(np.asarray(m), da)
    return EntropySolution(-math.log2(primal), sigma, x, gap, iters, primal, dual, a, b)


def hmin_smooth(rho: DensityOperator, a_labels, b_labels, eps: float) -> EntropySolution:
    """Smooth min-entropy; only ``eps == 0`` (the plain min-entropy) is supported."""
    if eps > 0:
        raise NotImplementedError("smooth min-entropy (eps > 0) is not implemented")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return hmin(rho, a_labels, b_labels)


def hmin_cc(p) -> float:
    """``-log2 sum_b max_a P(a, b)`` for a joint table indexed ``[a, b]``."""
    t = np.asarray(p, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if t.ndim != 2 or t.size == 0:
        raise BadDistribution("expected a 2-d probability table")
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise BadDistribution("probabilities must be finite and nonnegative")
    if abs(t.sum() - 1.0) > 1e-12:
        raise BadDistribution(f"probabilities sum to {t.sum()!r}, not 1")
    return -math.log2(float(t.max(axis=0).sum()))


def helstrom_pguess(p0: float, rho0: np.ndarray, p1: float, rho1: np.ndarray) -> float:
    """Optimal probability of telling ``rho0`` from ``rho1``: ``1/2 + ||p0 rho0 - p1 rho1||_tr``.

    Uses the halved trace norm, hence no extra factor 1/2.
    """
    return 0.5 + nk.trace_norm(p0 * np.asarray(rho0) - p1 * np.asarray(rho1))


def cq_blocks(rho: DensityOperator, a_label: str, b_labels: Sequence[str]) -> list[tuple[float, np.ndarray]]:
    """``(p_a, rho_B^a)`` pairs of a cq state (``rho_B^a`` zero when ``p_a = 0``)."""
    sub = rho.layout[a_label]
    if not sub.classical:
        raise NotCQ(f"{a_label!r} is not flagged classical")
    b = rho.layout.in_order(b_labels)
    red = rho.reduced([a_label, *b]) if b else rho.reduced([a_label])
    leak = control_leakage(red, a_label) if b else float(
        np.abs(red.matrix - np.diag(np.diag(red.matrix))).sum())
    if leak > 1e-9:
        raise NotCQ(f"state is not classical on {a_label!r} (off-diagonal mass {leak:.3e})")
    m = red.reorder([a_label, *b]).matrix
    da = sub.dim
    db = m.shape[0] // da
    out = []
    for a in range(da):
        blk = m[a * db:(a + 1) * db, a * db:(a + 1) * db]
        pa = float(np.trace(blk).real)
        out.append((pa, blk / pa if pa > 0 else np.zeros_like(blk)))
    return out


def pguess_cq(rho: DensityOperator, a_label: str, b_labels: Iterable[str] = ()) -> float:
    """Optimal probability of guessing classical ``a_label`` from ``b_labels``.

    Systems outside ``{a_label} | b_labels`` are traced out.  For binary A the
    value is cross-checked against the Helstrom formula.
    """
    b = rho.layout.in_order(b_labels)
    blocks = cq_blocks(rho, a_label, b)
    red = rho.reduced([a_label, *b])
    sol = hmin(red, [a_label], b)
    p = sol.pguess
    if len(blocks) == 2:
        (p0, r0), (p1, r1) = blocks
        hel = helstrom_pguess(p0, r0, p1, r1)
        if abs(hel - p) > 1e-6:
            raise SolverDiverged(f"guessing probability {p!r} disagrees with Helstrom value {hel!r}")
    return p
