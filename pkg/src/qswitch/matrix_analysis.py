"""Dense linear algebra: Lyapunov solves, square roots, Hurwitz certificates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import IllConditioned, NotHurwitz, NotPositiveDefinite

PSD_REL_TOL = 1e-14


def _square(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"expected a nonempty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def spectral_abscissa(t) -> float:
    return float(np.max(np.linalg.eigvals(_square(t)).real))


def solve_lyapunov(t) -> np.ndarray:
    """Return the SPD solution ``G`` of ``G T + T^T G = -I``.

    Solved through the vectorized Kronecker system, which is fine for the
    matrix orders used here (a few dozen at most).
    """
    t = _square(t)
    if spectral_abscissa(t) >= 0:
        raise NotHurwitz("matrix has an eigenvalue with nonnegative real part")
    n = t.shape[0]
    eye = np.eye(n)
    # row-major vec: vec(G T) = (I kron T^T) vec(G), vec(T^T G) = (T^T kron I) vec(G)
    big = np.kron(eye, t.T) + np.kron(t.T, eye)
    cond = np.linalg.cond(big)
    if not np.isfinite(cond) or cond > 1e12:
        raise IllConditioned(f"Lyapunov system condition number {cond:.3e}")
    g = np.linalg.solve(big, -eye.reshape(-1)).reshape(n, n)
    return 0.5 * (g + g.T)


def lyapunov_residual(g, t) -> float:
    g, t = _square(g), _square(t)
    return float(np.max(np.abs(g @ t + t.T @ g + np.eye(t.shape[0])).sum(axis=1)))


def _spd_eig(g) -> tuple[np.ndarray, np.ndarray]:
    g = _square(g)
    if np.max(np.abs(g - g.T)) > 1e-10 * max(1.0, np.max(np.abs(g))):
        raise NotPositiveDefinite("matrix is not symmetric")
    w, v = np.linalg.eigh(0.5 * (g + g.T))
    if w[-1] <= 0 or w[0] <= PSD_REL_TOL * w[-1]:
        raise NotPositiveDefinite(f"smallest eigenvalue {w[0]:.3e} is not positive")
    return w, v


def symmetric_sqrt(g) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(G^{1/2}, G^{-1/2})`` from a symmetric eigendecomposition."""
    w, v = _spd_eig(g)
    root = np.sqrt(w)
    half = (v * root) @ v.T
    inv_half = (v / root) @ v.T
    return 0.5 * (half + half.T), 0.5 * (inv_half + inv_half.T)


def similarity_transform(t, g) -> np.ndarray:
    """``G^{1/2} T G^{-1/2}``."""
    t = _square(t)
    half, inv_half = symmetric_sqrt(g)
    return half @ t @ inv_half


@dataclass(frozen=True)
class HurwitzCertificate:
    is_strictly_diag_dominant: bool
    diagonals_negative: bool
    gerschgorin_max_real_bound: float
    max_real_eigenvalue: float
    dominance_margins: tuple

    @property
    def certified(self) -> bool:
        return self.is_strictly_diag_dominant and self.diagonals_negative


def hurwitz_certificate(t) -> HurwitzCertificate:
    t = _square(t)
    diag = np.diag(t)
    off = np.abs(t).sum(axis=1) - np.abs(diag)
    margins = np.abs(diag) - off
    return HurwitzCertificate(
        is_strictly_diag_dominant=bool(np.all(margins > 0)),
        diagonals_negative=bool(np.all(diag < 0)),
        gerschgorin_max_real_bound=float(np.max(diag + off)),
        max_real_eigenvalue=spectral_abscissa(t),
        dominance_margins=tuple(float(x) for x in margins),
    )


def matrix_exponential(t, s: float = 1.0) -> np.ndarray:
    """``exp(s T)`` by scaling and squaring with a degree-13 Pade approximant."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    return expm(s * _square(t))


def ltv_contraction_check(a_seq, p, p_seq, tol: float = 1e-10) -> bool:
    """True iff ``A_k^T P A_k <= p_k P`` in the Loewner order for every k."""
    p = _square(p)
    _spd_eig(p)
    a_seq = list(a_seq)
    p_seq = list(p_seq)
    if len(a_seq) != len(p_seq):
        raise ValueError("a_seq and p_seq must have the same length")
    for a, pk in zip(a_seq, p_seq):
        a = _square(a)
        gap = pk * p - a.T @ p @ a
        if np.linalg.eigvalsh(0.5 * (gap + gap.T))[0] < -tol:
            return False
    return True


def sym_extreme_eigs(m) -> tuple[float, float]:
    w = np.linalg.eigvalsh(0.5 * (m + np.asarray(m).T))
    return float(w[0]), float(w[-1])
