"""Synthetic section norms, balance ratios and cyclic covers.

A section of a line bundle of degree ``n`` with zeros ``z_i`` of
multiplicity ``m_i`` has, in the uniformizing Hermitian metric, a log-norm
``psi`` with

    Delta psi = 2 pi (sum_i m_i delta_{z_i} - n / Vol).

Point masses are lumped vertex loads ``2 pi m_i / mu_i``.  The discrete
norm ``f = s e^{2 psi}`` is positive everywhere; a "zero" is the deep
minimum at the marked vertex.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import dijkstra

from .elliptic import solve_poisson_zero_mean
from .errors import PreconditionError
from .ray import balance_ratio_values
from .surface.fields import ScalarField, field_values
from .surface.hyperbolic import HyperbolicSurface, conformal_edge_lengths, uniformize
from .surface.mesh import TriangleMesh
from .surface.spectral import spectral_gap
from .surface.topology import homology_cocycles, is_closed, periods, systole, tree_cotree

__all__ = [
    "balance_ratio",
    "SectionNormSpec",
    "build_section_norm",
    "check_fgbal_bounds",
    "CoverSpec",
    "cyclic_cover",
    "local_zero_factor",
    "build_balanced_family",
    "thread_count",
]


def balance_ratio(f, surface: Optional[HyperbolicSurface] = None) -> float:
    """``mean(f) / sup f`` for a nonnegative field."""
    if isinstance(f, ScalarField):
        surface, values = f.surface, f.values
    else:
        if surface is None:
            raise PreconditionError("a surface is needed for a bare array")
        values = field_values(surface, f, "f")
    if np.any(values < 0):
        raise PreconditionError("balance ratio needs a nonnegative field")
    return balance_ratio_values(surface, values)


@dataclass(frozen=True)
class SectionNormSpec:
    """Norm field of a synthetic section with prescribed zeros.

    ``psi`` is the zero-mean log-norm, ``f = scale * e^{2 psi}``.
    """

    surface: HyperbolicSurface
    zeros: tuple
    psi: ScalarField
    f: ScalarField
    scale: float
    scale_mode: str
    bal: float
    poisson_residual: float
    flux_error: float
    zero_model: str = "lumped vertex loads; f > 0 everywhere, zeros are marked minima"

    @property
    def degree(self) -> int:
        return int(sum(m for _, m in self.zeros))

    def summary(self):
        return {"zeros": [list(z) for z in self.zeros], "degree": self.degree, "bal": self.bal,
                "scale": self.scale, "scale_mode": self.scale_mode, "poisson_residual": self.poisson_residual,
                "flux_error": self.flux_error, "zero_model": self.zero_model}


def _normalize_zeros(surface, zeros):
    zs = []
    for z in zeros:
        if isinstance(z, (tuple, list)):
            v, m = int(z[0]), int(z[1])
        else:
            v, m = int(z), 1
        if not (0 <= v < surface.n_vertices):
            raise PreconditionError("zero at invalid vertex %d" % v)
        if m < 1:
            raise PreconditionError("multiplicity must be >= 1, got %d" % m)
        zs.append((v, m))
    if len({v for v, _ in zs}) != len(zs):
        raise PreconditionError("zero vertices must be distinct; use multiplicities instead")
    if not zs:
        raise PreconditionError("n >= 1 required: give at least one zero")
    return tuple(zs)


def point_loads(surface: HyperbolicSurface, zeros) -> np.ndarray:
    """``2 pi (sum m_i delta_{z_i} - n/Vol)`` with lumped deltas ``1/mu_i``."""
    mu = surface.mass
    rhs = np.full(surface.n_vertices, -2 * math.pi * sum(m for _, m in zeros) / surface.volume)
    for v, m in zeros:
        rhs[v] += 2 * math.pi * m / mu[v]
    return rhs


def _flux_error(surface, psi, zeros, rng, n_sets=16):
    # integrate Delta psi against indicators of graph balls and random vertex sets
    mu = surface.mass
    lap = surface.laplacian(psi)
    zmass = np.zeros(surface.n_vertices)
    for v, m in zeros:
        zmass[v] = m
    n = zmass.sum()
    masks = []
    dist = dijkstra(surface.mesh.vertex_adjacency(np.ones(surface.mesh.n_edges)), directed=False,
                    indices=[v for v, _ in zeros], unweighted=True).min(axis=0)
    for rad in range(int(dist.max()) + 1):
        masks.append(dist <= rad)
    for _ in range(n_sets):
        masks.append(rng.random(surface.n_vertices) < 0.5)
    err = 0.0
    for A in masks:
        lhs = float(np.sum(mu[A] * lap[A]))
        rhs = 2 * math.pi * (zmass[A].sum() - n * mu[A].sum() / surface.volume)
        err = max(err, abs(lhs - rhs))
    return float(err)


def build_section_norm(surface: HyperbolicSurface, zeros: Sequence, scale_mode: str = "sup",
                       seed: int = 0) -> SectionNormSpec:
    """Section norm ``f = s e^{2 psi}`` with zeros ``[(vertex, multiplicity), ...]``.

    ``scale_mode`` fixes ``s``: ``"sup"`` makes ``sup f = 1``, ``"l2"``
    makes ``|f|_{L^2} = 1``.  The distributional identity is checked by
    integrating ``Delta psi`` over graph balls around the zeros and random
    vertex sets drawn from ``seed``.
    """
    zs = _normalize_zeros(surface, zeros)
    rhs = point_loads(surface, zs)
    sol = solve_poisson_zero_mean(surface, rhs, project_mean=False)
    psi = sol.v.values
    g = np.exp(2 * (psi - psi.max()))
    if scale_mode == "sup":
        s = 1.0
    elif scale_mode == "l2":
        s = 1.0 / surface.l2(g)
    else:
        raise PreconditionError("unknown scale_mode %r" % scale_mode)
    f = s * g
    flux = _flux_error(surface, psi, zs, np.random.default_rng(seed))
    return SectionNormSpec(surface, zs, ScalarField(surface, psi), ScalarField(surface, f),
                           float(s * math.exp(-2 * psi.max())), scale_mode, balance_ratio_values(surface, f),
                           sol.residual_sup, flux)


def check_fgbal_bounds(spec: SectionNormSpec, r: float, systole_value: Optional[float] = None) -> dict:
    """Two-zone bounds of the sup-normalized norm around the zeros.

    The zone ``D`` is the set of vertices within path distance ``r`` of a
    zero in the conformal edge metric, a graph proxy for metric disks.
    Returns ``C1 = max(sup_{off D} f, 1/inf_{off D} f)`` and
    ``C2 = sup_D f``.
    """
    s = spec.surface
    delta = systole(s).value if systole_value is None else float(systole_value)
    if not r < delta / 2:
        raise PreconditionError("r = %.6g must be below half the systole %.6g" % (r, delta / 2))
    if not r > 0:
        raise PreconditionError("r must be positive")
    f = spec.f.values / spec.f.values.max()
    A = s.mesh.vertex_adjacency(conformal_edge_lengths(s))
    dist = dijkstra(A, directed=False, indices=[v for v, _ in spec.zeros]).min(axis=0)
    on = dist < r
    off = ~on
    if not off.any():
        raise PreconditionError("radius covers the whole surface")
    return {"r": r, "systole": delta, "C1": float(max(f[off].max(), 1.0 / f[off].min())),
            "C2": float(f[on].max()), "inf_off": float(f[off].min()), "n_on": int(on.sum()),
            "n_off": int(off.sum()), "zones": "path distance in the edge graph"}


@dataclass(frozen=True)
class CoverSpec:
    """Cyclic cover of degree ``k`` cut along an integral cocycle.

    Cover vertex ``v + j V`` lies over base vertex ``v`` in sheet ``j``.
    """

    base: HyperbolicSurface
    k: int
    cocycle: np.ndarray
    surface: HyperbolicSurface

    @property
    def genus(self):
        return self.surface.genus

    def base_vertex(self, idx):
        return np.asarray(idx) % self.base.n_vertices

    def lift(self, x):
        """Copy base values to every sheet."""
        vals = x.values if isinstance(x, ScalarField) else field_values(self.base, x, "field")
        return ScalarField(self.surface, np.tile(vals, self.k))


def _directed_cocycle(mesh, omega, a, b):
    e = mesh.edge_index(a, b)
    return np.where(a < b, omega[e], -omega[e])


def cyclic_cover(surface: HyperbolicSurface, cocycle=None, k: int = 2) -> CoverSpec:
    """Degree-``k`` cyclic cover along a primitive closed integral cocycle.

    Sheets are glued by shifting ``j -> j + omega(e) mod k`` across each
    edge.  Lengths and the conformal factor are copied verbatim, so the
    cover is again hyperbolic.  ``cocycle`` defaults to the first homology
    cocycle of the tree-cotree basis.
    """
    if int(k) != k or k < 2:
        raise PreconditionError("cover degree k must be an integer >= 2")
    k = int(k)
    mesh = surface.mesh
    tc = tree_cotree(mesh)
    omega = homology_cocycles(mesh, tc)[:, 0] if cocycle is None else np.asarray(cocycle, dtype=np.int64)
    if omega.shape != (mesh.n_edges,):
        raise PreconditionError("cocycle must have one integer per edge")
    if not is_closed(mesh, omega):
        raise PreconditionError("cocycle is not closed")
    per = periods(mesh, omega, tc)
    if np.gcd.reduce(np.abs(per)) != 1:
        raise PreconditionError("cocycle is not primitive: periods %s" % per.tolist())
    V = mesh.n_vertices
    F = mesh.faces
    a, b, c = F[:, 0], F[:, 1], F[:, 2]
    sab = _directed_cocycle(mesh, omega, a, b)
    sac = sab + _directed_cocycle(mesh, omega, b, c)
    faces, edges, lengths = [], [], []
    eu, ev = mesh.edges[:, 0], mesh.edges[:, 1]
    for j in range(k):
        faces.append(np.stack([a + j * V, b + ((j + sab) % k) * V, c + ((j + sac) % k) * V], axis=1))
        edges.append(np.stack([eu + j * V, ev + ((j + omega) % k) * V], axis=1))
        lengths.append(mesh.edge_lengths)
    edges = np.sort(np.concatenate(edges), axis=1)
    cover_mesh = TriangleMesh(np.concatenate(faces), edges, np.concatenate(lengths), n_vertices=k * V)
    cover = uniformize(cover_mesh, phi0=np.tile(surface.phi, k))
    return CoverSpec(surface, k, omega, cover)


def local_zero_factor(surface: HyperbolicSurface, vertex: int, d: int, radius: float) -> np.ndarray:
    """``min(1, dist/radius)^{2d}``: a zero of multiplicity ``d`` at ``vertex`` supported in a disk."""
    if d == 0:
        return np.ones(surface.n_vertices)
    A = surface.mesh.vertex_adjacency(conformal_edge_lengths(surface))
    dist = dijkstra(A, directed=False, indices=vertex)
    return np.minimum(1.0, dist / radius) ** (2 * d)


def thread_count() -> int:
    """Worker cap from ``CURVLAB_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("CURVLAB_THREADS", "1")))
    except ValueError:
        raise PreconditionError("CURVLAB_THREADS must be an integer")


def _family_member(base, cocycle, k, d, marked, radius):
    cov = cyclic_cover(base.surface, cocycle, k)
    s = cov.surface
    f = cov.lift(base.f).values * local_zero_factor(s, marked, d, radius)
    gap = spectral_gap(s).value
    sys_ = systole(s).value
    return {
        "k": k, "genus": s.genus, "n_vertices": s.n_vertices, "volume": s.volume,
        "systole": sys_, "systole_source": "upper_bound", "spectral_gap": gap,
        "bal": balance_ratio_values(s, f), "bal_lift": balance_ratio_values(s, cov.lift(base.f).values),
        "zero_count": k * base.degree + d, "degree_formula": base.degree * (s.genus - 1) + d,
        "_f": f, "_cover": cov,
    }


def build_balanced_family(base: SectionNormSpec, cocycle=None, k_list=(2, 3, 4), d: int = 1,
                          marked: int = 0, radius: Optional[float] = None) -> dict:
    """Covers of ``base.surface`` carrying lifted norms times a local zero of order ``d``.

    The extra zero sits at the sheet-0 lift of base vertex ``marked`` with
    the same disk ``radius`` in every cover (default a quarter of the base
    systole), so it is the same local factor for each k.  Reports systole
    estimates, spectral gaps and balance ratios with their infima.  Covers
    are built in parallel, capped by ``CURVLAB_THREADS``.
    """
    if d < 0:
        raise PreconditionError("d must be >= 0")
    if radius is None:
        radius = systole(base.surface).value / 4
    ks = [int(k) for k in k_list]
    if not ks:
        raise PreconditionError("empty k list")
    n = thread_count()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            members = list(ex.map(lambda k: _family_member(base, cocycle, k, d, marked, radius), ks))
    else:
        members = [_family_member(base, cocycle, k, d, marked, radius) for k in ks]
    return {
        "d": d, "radius": radius, "marked": marked, "base_bal": base.bal, "base_degree": base.degree,
        "members": members,
        "inf_systole": min(m["systole"] for m in members),
        "inf_spectral_gap": min(m["spectral_gap"] for m in members),
        "inf_bal": min(m["bal"] for m in members),
    }
