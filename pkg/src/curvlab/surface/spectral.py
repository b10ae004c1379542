"""Spectral gap, Sobolev surrogate and the Poisson sup-norm constant."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import eigsh, ArpackNoConvergence

from ..errors import ConvergenceError, PreconditionError
from .hyperbolic import HyperbolicSurface

__all__ = [
    "SpectralGap",
    "GeometryConstants",
    "eigenpairs",
    "spectral_gap",
    "poisson_factor",
    "sobolev_surrogate",
    "w22_norm",
    "poisson_constant",
]

DENSE_LIMIT = 400
CLUSTER_RTOL = 1e-6


@dataclass(frozen=True)
class SpectralGap:
    """First nonzero eigenvalue with the leading nonconstant eigenpairs.

    ``eigenvectors`` are M-orthonormal, ordered by eigenvalue, each with its
    largest-magnitude entry positive.
    """

    value: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __float__(self):
        return self.value


def _normalize(vals, vecs, mass):
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    G = vecs.T @ (mass[:, None] * vecs)
    Lc = np.linalg.cholesky(0.5 * (G + G.T))
    vecs = scipy.linalg.solve_triangular(Lc, vecs.T, lower=True).T
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def eigenpairs(surface: HyperbolicSurface, k: int):
    """Smallest ``k`` nonzero eigenpairs of ``S x = lambda M x`` (memoised)."""
    n = surface.n_vertices
    if k < 1:
        raise PreconditionError("k must be >= 1")
    if k > n - 1:
        raise PreconditionError("requested %d eigenpairs but only %d nonconstant modes exist" % (k, n - 1))
    cache = surface._cache.setdefault("eig", {})
    have = max((j for j in cache), default=0)
    if have >= k:
        vals, vecs = cache[have]
        return vals[:k], vecs[:, :k]
    S, mu = surface.stiffness, surface.mass
    if n <= DENSE_LIMIT or k + 1 >= n // 2:
        vals, vecs = scipy.linalg.eigh(S.toarray(), np.diag(mu))
    else:
        v0 = np.random.default_rng(0).standard_normal(n)
        # shift slightly below zero so S - sigma M is positive definite
        sigma = -1e-2 * float(np.median(S.diagonal() / mu))
        try:
            vals, vecs = eigsh(S.tocsc(), k=k + 1, M=surface.mass_matrix, sigma=sigma, which="LM", v0=v0, tol=1e-13)
        except ArpackNoConvergence as exc:
            raise ConvergenceError("eigensolver did not converge", {"requested": k + 1,
                                                                   "converged": len(exc.eigenvalues)}) from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # drop the constant mode
    vals, vecs = vals[1:k + 1], vecs[:, 1:k + 1]
    vals, vecs = _normalize(vals, vecs, mu)
    cache[k] = (vals, vecs)
    return vals, vecs


def spectral_gap(surface: HyperbolicSurface, k: int = 1) -> SpectralGap:
    """Smallest nonzero generalized eigenvalue of (S, M) and the first ``k`` eigenpairs."""
    vals, vecs = eigenpairs(surface, k)
    return SpectralGap(float(vals[0]), vals.copy(), vecs.copy())


def poisson_factor(gap: float) -> float:
    """Bound factor ``sqrt(1 + 2/gap^2 + 1/gap^3)`` of the W^{2,2} estimate."""
    return math.sqrt(1.0 + 2.0 / gap ** 2 + 1.0 / gap ** 3)


def w22_norm(surface: HyperbolicSurface, x) -> float:
    """Discrete ``sqrt(|x|_2^2 + 2 |grad x|_2^2 + |Delta x|_2^2)`` (Bochner form of the W^{2,2} norm)."""
    x = np.asarray(x, dtype=float)
    lap = surface.laplacian(x)
    return math.sqrt(surface.l2(x) ** 2 + 2 * float(x @ (surface.stiffness @ x)) + surface.l2(lap) ** 2)


def _clusters(vals):
    groups = [[0]]
    for i in range(1, len(vals)):
        if vals[i] - vals[groups[-1][-1]] <= CLUSTER_RTOL * max(abs(vals[i]), 1.0):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def sobolev_surrogate(surface: HyperbolicSurface, m: int = 20) -> float:
    """Empirical ratio ``sup|phi| / |phi|_{W^{2,2}}`` maximised over the first ``m`` eigenfields.

    Within a degenerate eigenspace the basis returned by the eigensolver is
    arbitrary, so each eigenspace contributes its maximum over all unit
    fields, ``max_x sqrt(sum_j phi_j(x)^2) / (1 + lambda)``.  An eigenspace
    cut by index ``m`` is completed.
    """
    n = surface.n_vertices
    if m < 1:
        raise PreconditionError("m must be >= 1")
    if m > n - 1:
        raise PreconditionError("m = %d exceeds the %d available eigenpairs" % (m, n - 1))
    k = min(m + 8, n - 1)
    while True:
        vals, vecs = eigenpairs(surface, k)
        last = next(g for g in _clusters(vals) if m - 1 in g)
        if last[-1] < k - 1 or k == n - 1:
            return _surrogate_from(vals, vecs, m)
        k = min(2 * k, n - 1)


def _surrogate_from(vals, vecs, m):
    best = 0.0
    for grp in _clusters(vals):
        if grp[0] >= m:
            break
        lam = vals[grp].mean()
        best = max(best, np.sqrt(np.sum(vecs[:, grp] ** 2, axis=1)).max() / (1.0 + lam))
    return float(best)


@dataclass(frozen=True)
class GeometryConstants:
    """Constants consumed by the Poisson bound and the fixed-point criterion.

    ``C = c_sob * sqrt(1 + 2/gap^2 + 1/gap^3)``.  The ``*_source`` fields say
    whether a value was measured or supplied by the user.
    """

    systole: float
    spectral_gap: float
    volume: float
    c_sob: float
    systole_source: str = "estimate"
    gap_source: str = "measured"
    c_sob_mode: str = "empirical(20)"

    def __post_init__(self):
        for name in ("systole", "spectral_gap", "volume", "c_sob"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise PreconditionError("%s must be positive and finite, got %r" % (name, v))

    @property
    def C(self) -> float:
        return self.c_sob * poisson_factor(self.spectral_gap)

    def as_dict(self):
        return {
            "systole": self.systole, "systole_source": self.systole_source,
            "spectral_gap": self.spectral_gap, "gap_source": self.gap_source,
            "volume": self.volume, "c_sob": self.c_sob, "c_sob_mode": self.c_sob_mode,
            "C": self.C,
        }


def poisson_constant(surface: HyperbolicSurface, c_sob: Optional[float] = None, m: int = 20,
                     systole: Optional[float] = None, spectral_gap_value: Optional[float] = None,
                     systole_kwargs=None) -> GeometryConstants:
    """Assemble GeometryConstants for ``surface``.

    Parameters
    ----------
    c_sob : float, optional
        Fixed Sobolev constant; when omitted the empirical surrogate over ``m``
        eigenfields is used.
    systole, spectral_gap_value : float, optional
        User overrides; otherwise the systole estimate and measured gap are used.
    """
    from .topology import systole as systole_estimate

    if spectral_gap_value is None:
        gap, gap_src = spectral_gap(surface).value, "measured"
    else:
        gap, gap_src = float(spectral_gap_value), "user"
    if c_sob is None:
        cs, mode = sobolev_surrogate(surface, m), "empirical(%d)" % m
    else:
        cs, mode = float(c_sob), "fixed(%r)" % float(c_sob)
    est = systole_estimate(surface, override=systole, **(systole_kwargs or {}))
    return GeometryConstants(systole=est.value, spectral_gap=gap, volume=surface.volume, c_sob=cs,
                             systole_source=est.tag, gap_source=gap_src, c_sob_mode=mode)
