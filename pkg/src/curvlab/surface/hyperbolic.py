"""Cotangent operators and uniformization to constant curvature -1.

Discrete conventions
--------------------
* ``S`` is the P1 cotangent stiffness matrix, the Dirichlet form
  ``x . S x = int |grad x|^2``.  It depends only on edge lengths and is unchanged
  by a conformal change of metric.
* The metric ``e^{2 phi} g0`` has lumped vertex areas ``mu = a e^{2 phi}`` with
  ``a`` the barycentric vertex areas of the base mesh.
* The Laplacian is ``Delta x = -S x / mu`` (trace of the Hessian, nonpositive
  at a maximum).
* The discrete curvature is ``K = (Theta + S phi) / mu`` with ``Theta`` the angle
  defects, so ``sum(mu K) = 2 pi chi`` for every ``phi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..errors import ConvergenceError, GenusError
from .fields import ScalarField, field_values
from .mesh import TriangleMesh

__all__ = [
    "CotanOperators",
    "cotan_operators",
    "HyperbolicSurface",
    "uniformize",
    "laplacian",
    "conformal_edge_lengths",
    "flat_surface",
]


@dataclass(frozen=True)
class CotanOperators:
    stiffness: sp.csr_matrix
    base_mass: np.ndarray
    angle_defect: np.ndarray
    edge_weights: np.ndarray  # cotangent weight of each edge
    angles: np.ndarray  # (F, 3) corner angles


def _face_geometry(L):
    a, b, c = L[:, 0], L[:, 1], L[:, 2]
    # Kahan's stable Heron formula on sorted sides
    s = np.sort(L, axis=1)[:, ::-1]
    x, y, z = s[:, 0], s[:, 1], s[:, 2]
    area = 0.25 * np.sqrt(np.maximum((x + (y + z)) * (z - (x - y)) * (z + (x - y)) * (x + (y - z)), 0.0))
    cot = np.stack([b * b + c * c - a * a, c * c + a * a - b * b, a * a + b * b - c * c], axis=1) / (4.0 * area[:, None])
    cosines = np.stack(
        [(b * b + c * c - a * a) / (2 * b * c), (c * c + a * a - b * b) / (2 * c * a), (a * a + b * b - c * c) / (2 * a * b)],
        axis=1,
    )
    angles = np.arccos(np.clip(cosines, -1.0, 1.0))
    return area, cot, angles


def cotan_operators(mesh: TriangleMesh) -> CotanOperators:
    """Assemble stiffness, barycentric areas and angle defects of ``mesh``."""
    area, cot, angles = _face_geometry(mesh.face_lengths)
    nv, ne = mesh.n_vertices, mesh.n_edges
    w = np.zeros(ne)
    for c in range(3):
        np.add.at(w, mesh.face_edges[:, c], 0.5 * cot[:, c])
    e = mesh.edges
    diag = np.zeros(nv)
    np.add.at(diag, e[:, 0], w)
    np.add.at(diag, e[:, 1], w)
    rows = np.concatenate([e[:, 0], e[:, 1], np.arange(nv)])
    cols = np.concatenate([e[:, 1], e[:, 0], np.arange(nv)])
    vals = np.concatenate([-w, -w, diag])
    S = sp.csr_matrix((vals, (rows, cols)), shape=(nv, nv))
    S.sum_duplicates()
    S.sort_indices()
    mass = np.zeros(nv)
    np.add.at(mass, mesh.faces.ravel(), np.repeat(area / 3.0, 3))
    angle_sum = np.zeros(nv)
    np.add.at(angle_sum, mesh.faces.ravel(), angles.ravel())
    return CotanOperators(S, mass, 2 * math.pi - angle_sum, w, angles)


@dataclass(frozen=True, eq=False)
class HyperbolicSurface:
    """Triangulated closed surface carrying a conformal metric ``e^{2 phi} g0``.

    Instances are immutable; derived quantities (eigenpairs, factorizations)
    are memoised in a private cache.  ``curvature_residual`` is the sup-norm
    of ``K + 1`` recorded at construction.
    """

    mesh: TriangleMesh
    phi: np.ndarray
    stiffness: sp.csr_matrix
    base_mass: np.ndarray
    angle_defect: np.ndarray
    edge_weights: np.ndarray
    mass: np.ndarray
    curvature_residual: float
    iterations: int = 0
    update_norm: float = 0.0
    systole_override: Optional[float] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self):
        return self.mesh.n_vertices

    @property
    def genus(self):
        return self.mesh.genus

    @property
    def euler_characteristic(self):
        return self.mesh.euler_characteristic

    @property
    def volume(self):
        return float(self.mass.sum())

    @property
    def negative_weights(self):
        """Number of edges with a negative cotangent weight (maximum principle not guaranteed)."""
        return int(np.count_nonzero(self.edge_weights < 0))

    @property
    def mass_matrix(self):
        if "M" not in self._cache:
            self._cache["M"] = sp.diags(self.mass).tocsc()
        return self._cache["M"]

    def curvature(self):
        return (self.angle_defect + self.stiffness @ self.phi) / self.mass

    # functionals on raw arrays
    def mean(self, x):
        return float(np.dot(self.mass, x) / self.mass.sum())

    def l2(self, x):
        return float(math.sqrt(np.dot(self.mass, np.square(x))))

    def laplacian(self, x):
        return -(self.stiffness @ x) / self.mass

    def field(self, values):
        return ScalarField(self, values)

    def constant(self, c):
        return ScalarField(self, np.full(self.n_vertices, float(c)))

    def with_systole(self, delta):
        """Copy of the surface carrying a user systole value."""
        return HyperbolicSurface(
            self.mesh, self.phi, self.stiffness, self.base_mass, self.angle_defect, self.edge_weights,
            self.mass, self.curvature_residual, self.iterations, self.update_norm, float(delta))

    def __repr__(self):
        return "HyperbolicSurface(V=%d, genus=%d, Vol=%.10g, residual=%.2e)" % (
            self.n_vertices, self.genus, self.volume, self.curvature_residual)


def laplacian(surface: HyperbolicSurface, f) -> ScalarField:
    """Discrete Laplace-Beltrami operator ``-M^{-1} S f`` as a field on ``surface``."""
    return ScalarField(surface, surface.laplacian(field_values(surface, f)))


def _energy(S, theta, a, phi):
    return 0.5 * phi @ (S @ phi) + theta @ phi + 0.5 * np.sum(a * np.exp(2 * phi))


def uniformize(mesh, tol: float = 1e-8, max_iter: int = 60, phi0=None, systole=None) -> HyperbolicSurface:
    """Find the conformal factor giving discrete curvature -1 at every vertex.

    Damped Newton on ``G(phi) = S phi + Theta + a e^{2 phi} = 0``, the gradient
    of the strictly convex energy
    ``E = 1/2 phi.S phi + Theta.phi + 1/2 sum a e^{2 phi}``; the Jacobian
    ``S + 2 diag(a e^{2 phi})`` is positive definite.  Steps are halved until
    the energy decreases.

    Parameters
    ----------
    mesh : TriangleMesh or HyperbolicSurface
        A surface input is re-solved warm-started from its conformal factor.
    tol : float
        Target sup-norm of the curvature residual ``K + 1``.
    max_iter : int
        Newton iteration cap.
    phi0 : array_like, optional
        Initial conformal factor.  Defaults to the constant matching the
        Gauss-Bonnet volume.
    systole : float, optional
        User systole recorded on the returned surface.

    Returns
    -------
    HyperbolicSurface
        ``update_norm`` holds ``sup |phi - phi0|``.
    """
    if isinstance(mesh, HyperbolicSurface):
        if phi0 is None:
            phi0 = mesh.phi
        if systole is None:
            systole = mesh.systole_override
        mesh = mesh.mesh
    if mesh.genus < 2:
        raise GenusError("uniformization to curvature -1 needs genus >= 2 (mesh has genus %d)" % mesh.genus)
    ops = cotan_operators(mesh)
    S, a, theta = ops.stiffness, ops.base_mass, ops.angle_defect
    target_volume = -2 * math.pi * mesh.euler_characteristic
    if phi0 is None:
        phi = np.full(mesh.n_vertices, 0.5 * math.log(target_volume / a.sum()))
    else:
        phi = np.array(phi0, dtype=float)
    start = phi.copy()
    it = 0
    while True:
        mu = a * np.exp(2 * phi)
        G = S @ phi + theta + mu
        res = float(np.max(np.abs(G / mu)))
        if res <= tol:
            break
        if it >= max_iter:
            raise ConvergenceError(
                "uniformization did not converge in %d iterations" % max_iter,
                {"residual": res, "iterations": it})
        J = (S + sp.diags(2 * mu)).tocsc()
        step = -splu(J).solve(G)
        e0 = _energy(S, theta, a, phi)
        s = 1.0
        for _ in range(60):
            trial = phi + s * step
            if _energy(S, theta, a, trial) <= e0 + 1e-14 * abs(e0):
                break
            s *= 0.5
        phi = trial
        it += 1
    return HyperbolicSurface(
        mesh=mesh, phi=phi, stiffness=S, base_mass=a, angle_defect=theta, edge_weights=ops.edge_weights,
        mass=mu, curvature_residual=res, iterations=it, update_norm=float(np.max(np.abs(phi - start))),
        systole_override=None if systole is None else float(systole))


def flat_surface(mesh: TriangleMesh) -> HyperbolicSurface:
    """Surface carrying the mesh metric itself (``phi = 0``), any genus.

    Meant for operator tests such as the flat torus; ``curvature_residual``
    is NaN since no curvature target is imposed.
    """
    ops = cotan_operators(mesh)
    return HyperbolicSurface(mesh=mesh, phi=np.zeros(mesh.n_vertices), stiffness=ops.stiffness,
                             base_mass=ops.base_mass, angle_defect=ops.angle_defect, edge_weights=ops.edge_weights,
                             mass=ops.base_mass.copy(), curvature_residual=math.nan)


def conformal_edge_lengths(surface: HyperbolicSurface) -> np.ndarray:
    """Edge lengths in the metric ``e^{2 phi} g0`` with ``phi`` linear along each edge.

    ``l * (e^{phi_v} - e^{phi_u}) / (phi_v - phi_u)``, the exact integral of
    ``e^{phi}`` along the edge.
    """
    e = surface.mesh.edges
    pu, pv = surface.phi[e[:, 0]], surface.phi[e[:, 1]]
    d = pv - pu
    small = np.abs(d) < 1e-8
    safe = np.where(small, 1.0, d)
    factor = np.where(small, np.exp(0.5 * (pu + pv)) * (1 + d * d / 24), (np.exp(pv) - np.exp(pu)) / safe)
    return surface.mesh.edge_lengths * factor
