"""Dense complex linear algebra over small Hilbert spaces.

Matrices are plain ``numpy.ndarray`` objects of dtype ``complex128``.
Decompositions are delegated to LAPACK (via numpy) and then brought into a
fixed ordering/phase convention so results are reproducible.

Note on norms: :func:`trace_norm` returns *half* the Schatten-1 norm, so the
distance between two density operators lies in ``[0, 1]``.  Most textbooks
use the unhalved norm.
"""

from __future__ import annotations

import io
from typing import NamedTuple, TextIO

import numpy as np

HERMITIAN_TOL = 1e-10
PSD_TOL = 1e-10
PHASE_TOL = 1e-8
MAX_DIM = 256


class LinalgError(ValueError):
    """Base class for kernel errors."""


class NotSquare(LinalgError):
    pass


class NotHermitian(LinalgError):
    pass


class NotPSD(LinalgError):
    pass


class NonFinite(LinalgError):
    pass


class MatrixFormatError(LinalgError):
    pass


class HermitianEig(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


class SVDResult(NamedTuple):
    left: np.ndarray
    singular: np.ndarray
    right: np.ndarray


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2:
        raise LinalgError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite("matrix has NaN or Inf entries")
    return a


def _require_square(a: np.ndarray) -> None:
    if a.shape[0] != a.shape[1]:
        raise NotSquare(f"matrix is {a.shape[0]}x{a.shape[1]}")


def dagger(m: np.ndarray) -> np.ndarray:
    return np.conj(m).T


def hermitize(m, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Return ``(m + m^dag)/2`` after checking ``||m - m^dag|| <= tol``."""
    a = as_matrix(m)
    _require_square(a)
    asym = np.linalg.norm(a - dagger(a), 2) if a.size else 0.0
    if asym > tol:
        raise NotHermitian(f"||m - m^dag|| = {asym:.3e} exceeds {tol:.1e}")
    return 0.5 * (a + dagger(a))


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    # first component with modulus > PHASE_TOL made real positive, per column
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        idx = np.flatnonzero(np.abs(col) > PHASE_TOL)
        if idx.size:
            z = col[idx[0]]
            out[:, j] = col * (np.conj(z) / abs(z))
    return out


def hermitian_eig(m) -> HermitianEig:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending."""
    h = hermitize(m)
    w, v = np.linalg.eigh(h)
    order = np.argsort(w)[::-1]
    return HermitianEig(w[order].copy(), _fix_phases(v[:, order]))


def svd(m) -> SVDResult:
    """Full SVD ``m = U diag(s) V^dag`` with descending singular values.

    Phases are fixed on the left singular vectors; the matching right vectors
    are rotated by the same phase so the product is unchanged.
    """
    a = as_matrix(m)
    u, s, vh = np.linalg.svd(a, full_matrices=True)
    v = dagger(vh)
    k = s.size
    for j in range(u.shape[1]):
        col = u[:, j]
        idx = np.flatnonzero(np.abs(col) > PHASE_TOL)
        if not idx.size:
            continue
        z = col[idx[0]]
        ph = np.conj(z) / abs(z)
        u[:, j] = col * ph
        if j < k:
            v[:, j] = v[:, j] * ph
    return SVDResult(u, s, v)


def matrix_sqrt_psd(m) -> np.ndarray:
    """Principal square root of a PSD matrix.

    Eigenvalues in ``[-PSD_TOL, 0)`` are clamped to zero.
    """
    w, v = hermitian_eig(m)
    if w.size and w[-1] < -PSD_TOL:
        raise NotPSD(f"minimum eigenvalue {w[-1]:.3e} < {-PSD_TOL:.1e}")
    root = np.sqrt(np.clip(w, 0.0, None))
    return (v * root) @ dagger(v)


def psd_power(m, p: float, cutoff: float = 0.0) -> np.ndarray:
    """``m**p`` on the support of ``m`` (eigenvalues <= cutoff mapped to 0)."""
    w, v = hermitian_eig(m)
    f = np.zeros_like(w)
    keep = w > cutoff
    f[keep] = w[keep] ** p
    return (v * f) @ dagger(v)


def kron(a, b) -> np.ndarray:
    return np.kron(as_matrix(a), as_matrix(b))


def kron_all(*ms) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in ms:
        out = np.kron(out, np.asarray(m, dtype=complex))
    return out


def trace_norm(m) -> float:
    """Half the sum of singular values (see module note)."""
    a = as_matrix(m)
    _require_square(a)
    if a.size == 0:
        return 0.0
    return 0.5 * float(np.sum(np.linalg.svd(a, compute_uv=False)))


def is_unitary(u, tol: float = 1e-9) -> bool:
    a = np.asarray(u, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    return bool(np.linalg.norm(dagger(a) @ a - np.eye(a.shape[0]), 2) <= tol)


def polar_unitary(m) -> np.ndarray:
    """Unitary factor ``W`` of the polar decomposition ``m = W |m|``."""
    u, _, v = svd(m)
    return u @ dagger(v)


# -- matrix text format ------------------------------------------------------


def _data_lines(stream: TextIO):
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def read_matrix_lines(lines) -> np.ndarray:
    """Parse one matrix from an iterator of ``(lineno, text)`` data lines."""
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise MatrixFormatError("missing 'rows cols' header") from None
    parts = header.split()
    if len(parts) != 2:
        raise MatrixFormatError(f"line {lineno}: expected 'rows cols', got {header!r}")
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError:
        raise MatrixFormatError(f"line {lineno}: bad dimensions {header!r}") from None
    if rows < 0 or cols < 0:
        raise MatrixFormatError(f"line {lineno}: negative dimension")
    entries = np.empty(rows * cols, dtype=complex)
    for k in range(rows * cols):
        try:
            lineno, text = next(lines)
        except StopIteration:
            raise MatrixFormatError(f"expected {rows * cols} entries, got {k}") from None
        fields = text.split()
        if len(fields) != 2:
            raise MatrixFormatError(f"line {lineno}: expected 're im', got {text!r}")
        try:
            # float() is locale-independent: dot decimal separator only
            entries[k] = complex(float(fields[0]), float(fields[1]))
        except ValueError:
            raise MatrixFormatError(f"line {lineno}: bad number in {text!r}") from None
    if not np.all(np.isfinite(entries)):
        raise MatrixFormatError("matrix has NaN or Inf entries")
    return entries.reshape(rows, cols)


def parse_matrix(text: str) -> np.ndarray:
    lines = _data_lines(io.StringIO(text))
    m = read_matrix_lines(lines)
    for lineno, extra in lines:
        raise MatrixFormatError(f"line {lineno}: trailing data {extra!r}")
    return m


def format_matrix(m, comment: str | None = None) -> str:
    a = np.asarray(m, dtype=complex)
    out = []
    if comment:
        out.extend(f"# {c}" for c in comment.splitlines())
    out.append(f"{a.shape[0]} {a.shape[1]}")
    for z in a.reshape(-1):
        out.append(f"{float(z.real)!r} {float(z.imag)!r}")
    return "\n".join(out) + "\n"


def load_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return parse_matrix(fh.read())


def save_matrix(path, m, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_matrix(m, comment))
