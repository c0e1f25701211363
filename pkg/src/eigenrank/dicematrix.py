"""Dice matrices of an ensemble's segmentations and their spectra.

A Dice matrix holds the pairwise overlap between ``t`` segmentations of the
same case. It is symmetric with unit diagonal and, being the Hadamard product
of a Gram matrix and a Cauchy matrix, positive semi-definite. Its largest
eigenvalue ranges from 1 (total disagreement, identity matrix) to ``t``
(total agreement, all-ones matrix).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np

from .masks import METRICS, BinaryMask, MaskShapeError

__all__ = [
    "DiceMatrix",
    "SpectralSummary",
    "EigenSolverError",
    "NotPSDError",
    "build_dice_matrix",
    "jacobi_eigh",
    "eigenvalues",
    "lambda_max",
    "von_neumann_entropy",
    "spectral_summary",
    "is_psd",
    "trio_feasibility",
    "dominance_ratio",
]

# Eigenvalues with magnitude below this are treated as exact zeros in
# entropy-like sums, so that 0 log 0 terms vanish instead of leaving noise.
ZERO_TOL = 1e-8
TRIO_TOL = 1e-9


class EigenSolverError(ArithmeticError):
    """Jacobi iteration did not converge within the sweep cap."""

    def __init__(self, residual: float, sweeps: int):
        super().__init__(
            f"Jacobi eigensolver did not converge after {sweeps} sweeps "
            f"(off-diagonal norm {residual:.3e})"
        )
        self.residual = residual
        self.sweeps = sweeps


class NotPSDError(ValueError):
    """A spectrum has an eigenvalue below ``-tolerance``."""


@dataclass(frozen=True, eq=False)
class DiceMatrix:
    """Symmetric ``t x t`` matrix of pairwise overlap scores with unit diagonal."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=float, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"Dice matrix must be square, got shape {m.shape}")
        if m.shape[0] < 2:
            raise ValueError("Dice matrix needs order t >= 2")
        if not np.array_equal(m, m.T):
            raise ValueError("Dice matrix must be symmetric")
        if not np.all(np.diag(m) == 1.0):
            raise ValueError("Dice matrix diagonal must be exactly 1")
        if m.min() < 0.0 or m.max() > 1.0:
            raise ValueError("Dice matrix entries must lie in [0, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def order(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, DiceMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())


@dataclass(frozen=True)
class SpectralSummary:
    eigenvalues: tuple[float, ...]
    lambda_max: float
    entropy_raw: float
    entropy_normalized: float


MatrixLike = Union[DiceMatrix, np.ndarray, Sequence[Sequence[float]]]


def build_dice_matrix(segmentations: Sequence[BinaryMask], metric: str = "dice") -> DiceMatrix:
    """Pairwise overlap matrix of ``t >= 2`` same-sized masks.

    ``metric`` is ``"dice"`` or ``"jaccard"``. Both give a PSD matrix.
    """
    try:
        score = METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; expected one of {sorted(METRICS)}") from None
    t = len(segmentations)
    if t < 2:
        raise ValueError(f"need at least 2 segmentations, got {t}")
    first = segmentations[0]
    for s in segmentations[1:]:
        if (s.width, s.height) != (first.width, first.height):
            raise MaskShapeError(
                f"mask sizes differ: {first.width}x{first.height} vs {s.width}x{s.height}"
            )
    m = np.eye(t)
    for p in range(t):
        for q in range(p + 1, t):
            m[p, q] = m[q, p] = score(segmentations[p], segmentations[q])
    return DiceMatrix(m)


@lru_cache(maxsize=None)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Tournament schedule: ``n - 1`` rounds of disjoint index pairs covering all pairs.

    Rotations within one round touch disjoint rows/columns, so they commute and
    can be applied together as one orthogonal matrix.
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < n and b < n]
        p = np.array([a for a, _ in pairs], dtype=int)
        q = np.array([b for _, b in pairs], dtype=int)
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def jacobi_eigh(
    matrix: MatrixLike,
    tol: Optional[float] = None,
    max_sweeps: int = 100,
    compute_vectors: bool = True,
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    matrix : array_like, shape (t, t)
        Symmetric matrix.
    tol : float, optional
        Stop once the off-diagonal Frobenius norm falls below ``tol``.
        Defaults to ``1e-12 * t``.
    max_sweeps : int
        Each sweep annihilates every off-diagonal pair once.

    Returns
    -------
    values : ndarray, shape (t,)
        Eigenvalues in solver order (not sorted).
    vectors : ndarray, shape (t, t), or None
        Orthonormal eigenvectors as columns, ``matrix @ vectors = vectors * values``.
        None when ``compute_vectors`` is false.
    """
    a = np.array(matrix, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    t = a.shape[0]
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, float(np.abs(a).max(initial=0)))):
        raise ValueError("Jacobi eigensolver requires a symmetric matrix")
    a = (a + a.T) / 2
    if tol is None:
        tol = 1e-12 * t
    v = np.eye(t) if compute_vectors else None
    if t == 1:
        return np.diag(a).copy(), v
    tiny = np.finfo(float).tiny
    residual = _off_norm(a)
    sweeps = 0
    while residual >= tol:
        if sweeps >= max_sweeps:
            raise EigenSolverError(residual, sweeps)
        for p, q in _round_robin(t):
            apq = a[p, q]
            active = np.abs(apq) > tiny
            if not active.any():
                continue
            app, aqq = a[p, p], a[q, q]
            safe = np.where(active, apq, 1.0)
            theta = (aqq - app) / (2.0 * safe)
            tan = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            tan = np.where(active, tan, 0.0)
            c = 1.0 / np.sqrt(tan * tan + 1.0)
            s = tan * c
            rot = np.eye(t)
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            a[p, q] = 0.0
            a[q, p] = 0.0
            if v is not None:
                v = v @ rot
        a = (a + a.T) / 2
        sweeps += 1
        residual = _off_norm(a)
    return np.diag(a).copy(), v


def eigenvalues(matrix: MatrixLike, **solver_kw) -> np.ndarray:
    """Full real spectrum, sorted descending (ties keep solver order)."""
    values, _ = jacobi_eigh(matrix, compute_vectors=False, **solver_kw)
    order = np.argsort(-values, kind="stable")
    return values[order]


def lambda_max(matrix: MatrixLike, **solver_kw) -> float:
    """Largest eigenvalue: ``t`` under full agreement, 1 for the identity."""
    return float(eigenvalues(matrix, **solver_kw)[0])


def _clamped(eigs: Sequence[float], tol: float) -> np.ndarray:
    lam = np.asarray(eigs, dtype=float)
    if lam.size and lam.min() < -tol:
        raise NotPSDError(
            f"eigenvalue {lam.min():.3e} below -{tol:g}; matrix is not positive semi-definite"
        )
    return np.where(np.abs(lam) <= tol, 0.0, lam)


def _xlogx(lam: np.ndarray) -> np.ndarray:
    out = np.zeros_like(lam)
    nz = lam > 0
    out[nz] = lam[nz] * np.log(lam[nz])
    return out


def von_neumann_entropy(eigs: Sequence[float], normalized: bool = False, tol: float = ZERO_TOL) -> float:
    """Entropy ``-sum(lam * log(lam))`` of a PSD spectrum, natural log.

    With ``normalized=True`` the spectrum is first divided by its sum (the
    trace, ``t`` for a Dice matrix) so it forms a probability vector. The raw
    form is negative whenever the top eigenvalue exceeds 1.
    """
    lam = _clamped(eigs, tol)
    if normalized:
        total = lam.sum()
        if total <= 0:
            raise ValueError("cannot normalize a spectrum with zero trace")
        lam = lam / total
    return float(-_xlogx(lam).sum())


def dominance_ratio(eigs: Sequence[float], tol: float = ZERO_TOL) -> Optional[float]:
    """Share of the top eigenvalue in ``sum(lam * log(lam))``.

    Returns None when the denominator vanishes (e.g. the identity spectrum).
    ``eigs`` must be sorted descending.
    """
    lam = _clamped(eigs, tol)
    terms = _xlogx(lam)
    denom = terms.sum()
    if abs(denom) < 1e-12:
        return None
    return float(terms[0] / denom)


def spectral_summary(matrix: MatrixLike, tol: float = ZERO_TOL) -> SpectralSummary:
    lam = eigenvalues(matrix)
    return SpectralSummary(
        eigenvalues=tuple(float(x) for x in lam),
        lambda_max=float(lam[0]),
        entropy_raw=von_neumann_entropy(lam, normalized=False, tol=tol),
        entropy_normalized=von_neumann_entropy(lam, normalized=True, tol=tol),
    )


def is_psd(matrix: MatrixLike, tolerance: float = 1e-8) -> bool:
    return bool(eigenvalues(matrix)[-1] >= -tolerance)


def trio_feasibility(d_pq: float, d_qr: float, d_rp: float, tolerance: float = TRIO_TOL) -> bool:
    """Whether three pairwise scores can come from one PSD unit-diagonal matrix.

    This is the non-negative determinant condition of the 3x3 principal minor,
    ``a^2 + b^2 + c^2 - 1 <= 2abc``; equality is allowed (identical masks).
    """
    for x in (d_pq, d_qr, d_rp):
        if not 0.0 <= x <= 1.0 or math.isnan(x):
            raise ValueError(f"scores must lie in [0, 1], got {x!r}")
    return d_pq**2 + d_qr**2 + d_rp**2 - 1.0 <= 2.0 * d_pq * d_qr * d_rp + tolerance
