"""Seeded random ensembles: Ginibre states, Haar unitaries, Kraus channels."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (64-bit arithmetic)."""
    z = (x + GOLDEN_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def trial_seed(master_seed: int, index: int) -> int:
    """Per-trial seed, independent of the order in which trials execute."""
    return splitmix64((master_seed & _MASK64) ^ splitmix64(index & _MASK64))


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed & _MASK64)


def ginibre(d: int, gen: np.random.Generator, cols: int | None = None) -> np.ndarray:
    cols = d if cols is None else cols
    return (gen.standard_normal((d, cols)) + 1j * gen.standard_normal((d, cols))) / np.sqrt(2)


def ginibre_state(d: int, gen: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Density matrix ``G G^dag / tr`` for a Gaussian ``d x rank`` matrix ``G``."""
    g = ginibre(d, gen, rank)
    m = g @ g.conj().T
    m = 0.5 * (m + m.conj().T)
    return m / np.trace(m).real


def pure_vector(d: int, gen: np.random.Generator) -> np.ndarray:
    v = gen.standard_normal(d) + 1j * gen.standard_normal(d)
    return v / np.linalg.norm(v)


def haar_unitary(d: int, gen: np.random.Generator) -> np.ndarray:
    """QR of a Gaussian matrix with the phases of ``R``'s diagonal absorbed into ``Q``."""
    q, r = np.linalg.qr(ginibre(d, gen))
    diag = np.diag(r)
    ph = np.where(np.abs(diag) > 0, diag / np.abs(diag), 1.0)
    return q * ph


def haar_unitary_from_seed(d: int, seed: int) -> np.ndarray:
    return haar_unitary(d, rng(seed))


def random_kraus(d_in: int, d_out: int, n_kraus: int, gen: np.random.Generator) -> list[np.ndarray]:
    """Kraus operators of a random channel: blocks of a random isometry."""
    g = ginibre(d_out * n_kraus, gen, d_in)
    q, r = np.linalg.qr(g)
    diag = np.diag(r)
    q = q * np.where(np.abs(diag) > 0, diag / np.abs(diag), 1.0)
    return [q[k * d_out:(k + 1) * d_out, :] for k in range(n_kraus)]


def dirichlet_weights(k: int, gen: np.random.Generator) -> np.ndarray:
    return gen.dirichlet(np.ones(k))
