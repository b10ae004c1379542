"""Semilinear Gauss equation and zero-mean Poisson equation on a hyperbolic surface.

The Gauss equation is

    Delta u = a e^{2u} - 1 + e^{-4u} g,        g = t f >= 0,

with ``a = 2`` for immersions into the complex hyperbolic plane and ``a = 1``
for the superminimal H^4 setting.  For ``a = 2`` and
``0 <= g <= eta/(2+eta)^3`` the constants ``-ln(2+eta)/2`` and ``-ln2/2`` are
a sub/supersolution pair and the solution lies between them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, splu

from .errors import ConvergenceError, PreconditionError
from .surface.fields import ScalarField, field_values
from .surface.hyperbolic import HyperbolicSurface, laplacian
from .surface.spectral import GeometryConstants, poisson_factor, spectral_gap

__all__ = [
    "SUPERSOLUTION",
    "MONOTONE_SHIFT",
    "ADMISSIBILITY_TOL",
    "gauss_bracket",
    "admissible_bound",
    "gauss_nonlinearity",
    "gauss_residual",
    "check_admissible",
    "GaussSolution",
    "solve_semilinear",
    "solve_gauss",
    "StabilityReport",
    "gauss_stability_probe",
    "PoissonSolution",
    "solve_poisson_zero_mean",
    "poisson_norm_chain",
]

SUPERSOLUTION = -0.5 * math.log(2.0)
MONOTONE_SHIFT = 4.0 * (1.0 + 1e-2)
ADMISSIBILITY_TOL = 1e-12


def gauss_bracket(eta: float):
    """(lower, upper) constant sub/supersolution pair."""
    return -0.5 * math.log(2.0 + eta), SUPERSOLUTION


def admissible_bound(eta: float) -> float:
    """Largest admissible data value ``eta/(2+eta)^3``."""
    return eta / (2.0 + eta) ** 3


def _check_eta(eta, upper=1.0):
    if not (0.0 < eta < upper):
        raise PreconditionError("eta must lie in (0, %g), got %r" % (upper, eta))


def gauss_nonlinearity(u, g, a=2.0):
    return a * np.exp(2 * u) - 1.0 + np.exp(-4 * u) * g


def gauss_residual(surface: HyperbolicSurface, u, g, a=2.0) -> np.ndarray:
    """Pointwise ``Delta u - (a e^{2u} - 1 + e^{-4u} g)`` using the surface Laplacian."""
    u = field_values(surface, u, "u")
    g = field_values(surface, g, "g")
    return laplacian(surface, u).values - gauss_nonlinearity(u, g, a)


def check_admissible(surface, f, eta, t=1.0):
    """Raise PreconditionError unless ``0 <= t f <= eta/(2+eta)^3`` (tolerance 1e-12)."""
    f = field_values(surface, f, "f")
    g = t * f
    if np.any(g < -ADMISSIBILITY_TOL):
        i = int(np.argmin(g))
        raise PreconditionError("data must be nonnegative: t*f = %.6g at vertex %d" % (g[i], i))
    bound = admissible_bound(eta)
    if np.any(g > bound + ADMISSIBILITY_TOL):
        i = int(np.argmax(g))
        raise PreconditionError(
            "data not admissible: t*f = %.17g > eta/(2+eta)^3 = %.17g at vertex %d" % (g[i], bound, i))
    return g


@dataclass(frozen=True)
class GaussSolution:
    """Solution of the Gauss equation with its certificate.

    ``residual_sup`` is recomputed from the returned ``u`` with the surface
    Laplacian, independently of the solver's Jacobian.
    """

    u: ScalarField
    f: ScalarField
    t: float
    eta: float
    residual_sup: float
    bracket_ok: bool
    laplacian_bound_ok: bool
    af_bound: float
    iterations: int
    method: str
    clamped: int = 0

    @property
    def surface(self):
        return self.u.surface

    def summary(self):
        return {
            "eta": self.eta, "t": self.t, "residual_sup": self.residual_sup,
            "bracket_ok": self.bracket_ok, "laplacian_bound_ok": self.laplacian_bound_ok,
            "af_bound": self.af_bound, "iterations": self.iterations, "method": self.method,
            "u_min": self.u.inf(), "u_max": self.u.sup(),
        }


def solve_semilinear(surface: HyperbolicSurface, g, a=2.0, u0=None, lower=-np.inf, upper=np.inf,
                     tol=1e-10, max_iter=100, monotone_iter=5000):
    """Solve ``Delta u = a e^{2u} - 1 + e^{-4u} g`` for nonnegative data ``g``.

    Newton from ``u0`` (a supersolution by default) with iterates clamped to
    ``[lower, upper]`` and step halving on the residual.  If Newton stalls,
    the monotone scheme ``(S + lam M) u_{k+1} = M (lam u_k - N(u_k))`` takes
    over from the current supersolution.

    Returns
    -------
    u : ndarray
    info : dict
        ``iterations``, ``residual`` (solver measure), ``method``, ``clamped``.
    """
    S, mu = surface.stiffness, surface.mass
    g = np.asarray(g, dtype=float)
    if u0 is None:
        u0 = -0.5 * math.log(a)
    u = np.array(np.broadcast_to(u0, (surface.n_vertices,)), dtype=float)
    u = np.clip(u, lower, upper)

    def resid(x):
        return (S @ x) / mu + gauss_nonlinearity(x, g, a)

    r = resid(u)
    res = float(np.max(np.abs(r)))
    it = 0
    clamped = 0
    stalled = False
    floor = False
    while res > tol and it < max_iter:
        e2 = np.exp(2 * u)
        em4g = np.exp(-4 * u) * g
        dN = 2 * a * e2 - 4 * em4g
        J = (S + sp.diags(mu * dN)).tocsc()
        try:
            step = -splu(J).solve(mu * r)
        except RuntimeError:
            stalled = True
            break
        if np.max(np.abs(step)) <= 8 * np.finfo(float).eps * max(1.0, np.max(np.abs(u))):
            # round-off floor: the residual cannot be reduced further
            floor = True
            break
        s = 1.0
        accepted = False
        for _ in range(30):
            trial = u + s * step
            tc = np.clip(trial, lower, upper)
            if np.any(tc != trial):
                clamped += 1
            rt = resid(tc)
            rn = float(np.max(np.abs(rt)))
            if rn < res or rn <= tol:
                accepted = True
                break
            s *= 0.5
        it += 1
        if not accepted:
            if res <= max(1e3 * tol, 1e-9):
                floor = True
            else:
                stalled = True
            break
        u, r, res = tc, rt, rn
    method = "newton"
    if res > tol and floor and res <= max(1e3 * tol, 1e-9):
        method = "newton (round-off floor)"
    elif res > tol:
        if not stalled and it >= max_iter:
            raise ConvergenceError("Gauss Newton iteration hit the cap of %d" % max_iter,
                                   {"residual": res, "iterations": it})
        # monotone fallback from the supersolution side
        method = "monotone"
        u = np.minimum(u, upper) if np.isfinite(upper) else u
        lam = MONOTONE_SHIFT * max(1.0, a / 2.0)
        lu = splu((S + sp.diags(lam * mu)).tocsc())
        for k in range(monotone_iter):
            u = lu.solve(mu * (lam * u - gauss_nonlinearity(u, g, a)))
            if not np.all(np.isfinite(u)) or u.min() < -20.0:
                raise ConvergenceError("Gauss monotone iteration diverged (no solution for this data)",
                                       {"iterations": it, "u_min": float(np.nanmin(u))})
            r = resid(u)
            res = float(np.max(np.abs(r)))
            it += 1
            if res <= tol:
                break
        else:
            raise ConvergenceError("Gauss monotone iteration did not converge",
                                   {"residual": res, "iterations": it})
    return u, {"iterations": it, "residual": res, "method": method, "clamped": clamped}


def solve_gauss(surface: HyperbolicSurface, f, eta: float, tol: float = 1e-10, t: float = 1.0,
                u0=None, max_iter: int = 100, check: bool = True) -> GaussSolution:
    """Solve ``Delta u = 2e^{2u} - 1 + e^{-4u} t f`` between the constant brackets.

    Parameters
    ----------
    surface : HyperbolicSurface
    f : ScalarField, array or float
        Nonnegative data with ``t f <= eta/(2+eta)^3``.
    eta : float
        Almost-Fuchsian parameter in (0, 1).
    tol : float
        Sup-norm residual target.
    t : float
        Ray parameter multiplying ``f``.
    u0 : array, optional
        Warm start; should be a supersolution (e.g. the solution for smaller data).
    check : bool
        Enforce the admissibility precondition.  With ``check=False`` the
        bracket is not imposed, which is used by exploratory continuation.
    """
    _check_eta(eta)
    fv = field_values(surface, f, "f")
    if check:
        g = check_admissible(surface, fv, eta, t)
        lower, upper = gauss_bracket(eta)
    else:
        g = t * fv
        lower, upper = -np.inf, SUPERSOLUTION
    u, info = solve_semilinear(surface, g, 2.0, SUPERSOLUTION if u0 is None else u0,
                               lower, upper, tol, max_iter)
    return _certify(surface, u, fv, g, t, eta, info)


def _certify(surface, u, fv, g, t, eta, info):
    lower, upper = gauss_bracket(eta)
    lap = laplacian(surface, u).values
    res = float(np.max(np.abs(lap - gauss_nonlinearity(u, g, 2.0))))
    bracket_ok = bool(np.all(u >= lower - 1e-12) and np.all(u <= upper + 1e-12))
    lap_ok = bool(np.max(np.abs(lap)) <= eta / (2 + eta) + res + 1e-12)
    af = float(np.max(np.exp(-6 * u) * g))
    return GaussSolution(ScalarField(surface, u), ScalarField(surface, fv), float(t), float(eta), res,
                         bracket_ok, lap_ok, af, info["iterations"], info["method"], info["clamped"])


@dataclass(frozen=True)
class StabilityReport:
    eps: float
    differences: np.ndarray
    ratios: np.ndarray

    @property
    def max_difference(self):
        return float(self.differences.max()) if len(self.differences) else 0.0

    @property
    def max_ratio(self):
        return float(self.ratios.max()) if len(self.ratios) else 0.0


def gauss_stability_probe(surface, f, eta, eps, n_samples=8, seed=0, directions=None, tol=1e-12):
    """Sup-norm change of the Gauss solution under data perturbations of size ``eps``.

    Perturbations are ``eps * d`` for directions ``d`` with ``sup|d| <= 1``,
    uniform random per vertex unless ``directions`` is given.  Both ``f`` and
    every perturbed datum must be admissible.
    """
    fv = field_values(surface, f, "f")
    if directions is None:
        rng = np.random.default_rng(seed)
        directions = rng.uniform(-1.0, 1.0, size=(n_samples, surface.n_vertices))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    if np.any(np.abs(directions) > 1.0 + 1e-15):
        raise PreconditionError("perturbation directions must satisfy sup|d| <= 1")
    base = solve_gauss(surface, fv, eta, tol=tol)
    diffs, ratios = [], []
    for d in directions:
        pert = fv + eps * d
        try:
            check_admissible(surface, pert, eta)
        except PreconditionError as exc:
            raise PreconditionError("perturbed data not admissible: %s" % exc) from exc
        sol = solve_gauss(surface, pert, eta, tol=tol)
        dd = float(np.max(np.abs(sol.u.values - base.u.values)))
        diffs.append(dd)
        ratios.append(dd / eps if eps > 0 else 0.0)
    return StabilityReport(float(eps), np.array(diffs), np.array(ratios))


# ---------------------------------------------------------------------------
# Poisson


def _bordered_lu(surface):
    c = surface._cache
    if "poisson_lu" not in c:
        n = surface.n_vertices
        mu = surface.mass[:, None]
        K = sp.bmat([[surface.stiffness, sp.csr_matrix(mu)], [sp.csr_matrix(mu.T), None]], format="csc")
        c["poisson_lu"] = splu(K)
    return c["poisson_lu"]


@dataclass(frozen=True)
class PoissonSolution:
    """Zero-mean solution of ``Delta v = rhs`` with norms and the sup-norm bound comparison."""

    v: ScalarField
    rhs: ScalarField
    residual_sup: float
    norms: dict
    bound_report: Optional[dict] = None
    projected: bool = False

    @property
    def surface(self):
        return self.v.surface


def solve_poisson_zero_mean(surface: HyperbolicSurface, rhs, tol: float = 1e-10, project_mean: bool = False,
                            constants: Optional[GeometryConstants] = None, method: str = "direct",
                            x0=None, tol_mean: float = 1e-10) -> PoissonSolution:
    """Unique zero-mean ``v`` with ``Delta v = rhs``.

    The constant kernel is removed by deflation: the direct method solves the
    bordered system ``[[S, mu], [mu^T, 0]]`` and the iterative method runs
    conjugate gradients on ``S + mu mu^T / Vol``, whose solutions for
    zero-mean data are automatically zero-mean.

    Parameters
    ----------
    rhs : ScalarField, array or float
        Must have zero mean (``|mean| <= tol_mean * L2(rhs)``) unless
        ``project_mean`` is set, in which case the mean is subtracted.
    constants : GeometryConstants, optional
        When given, ``bound_report`` compares ``sup|v|`` with ``C * L2(rhs)``.
    method : {"direct", "cg"}
    x0 : array, optional
        Initial guess for the CG method.
    """
    r = field_values(surface, rhs, "rhs").copy()
    m = surface.mean(r)
    l2 = surface.l2(r)
    projected = False
    if abs(m) > tol_mean * l2:
        if not project_mean:
            raise PreconditionError(
                "solvability condition violated: mean(rhs) = %.6g is not zero" % m)
        r = r - m
        projected = True
    mu = surface.mass
    b = -mu * r
    if method == "direct":
        sol = _bordered_lu(surface).solve(np.append(b, 0.0))
        v = sol[:-1]
    elif method == "cg":
        vol = mu.sum()
        S = surface.stiffness
        op = LinearOperator(S.shape, matvec=lambda x: S @ x + mu * (mu @ x) / vol, dtype=float)
        diag = S.diagonal() + mu * mu / vol
        pre = LinearOperator(S.shape, matvec=lambda x: x / diag, dtype=float)
        v, info = cg(op, b, x0=x0, rtol=1e-14, atol=0.0, maxiter=20 * surface.n_vertices, M=pre)
        if info != 0:
            raise ConvergenceError("CG did not converge for the Poisson solve", {"info": info})
    else:
        raise PreconditionError("unknown Poisson method %r" % method)
    v = v - surface.mean(v)
    lap = laplacian(surface, v).values
    res = float(np.max(np.abs(lap - r)))
    scale = max(1.0, float(np.max(np.abs(r))))
    if res > 1e-6 * scale:
        raise ConvergenceError("Poisson solve residual too large", {"residual": res})
    grad2 = float(v @ (surface.stiffness @ v))
    norms = {
        "sup": float(np.max(np.abs(v))),
        "l2": surface.l2(v),
        "grad_l2": math.sqrt(max(grad2, 0.0)),
        "rhs_l2": surface.l2(r),
        "mean": surface.mean(v),
    }
    report = None
    if constants is not None:
        bound = constants.C * norms["rhs_l2"]
        report = {
            "C": constants.C, "bound": bound, "sup_v": norms["sup"],
            "ok": bool(norms["sup"] <= bound * (1 + 1e-12)),
            "ratio": norms["sup"] / bound if bound > 0 else 0.0,
        }
    return PoissonSolution(ScalarField(surface, v), ScalarField(surface, r), res, norms, report, projected)


def _link(lhs, rhs, rel=1e-8):
    return {"lhs": float(lhs), "rhs": float(rhs), "ok": bool(lhs <= rhs * (1 + rel) + 1e-300),
            "slack": float(rhs / lhs) if lhs > 0 else math.inf}


def poisson_norm_chain(surface: HyperbolicSurface, sol: PoissonSolution, gap: Optional[float] = None,
                       rel: float = 1e-8) -> dict:
    """Evaluate the norm inequalities leading to the sup-norm bound of a Poisson solution.

    ``stated`` holds the chain with the factors ``1/gap``, ``1/gap^2`` and
    ``sqrt(1 + 2/gap^2 + 1/gap^3)``.  ``sharp`` holds the version that follows
    from ``|grad v|^2 = -<v, rhs>``: ``1/gap``, ``1/gap`` and ``1 + 1/gap``;
    it is valid for every rhs, while the stated gradient and W^{2,2} links can
    fail when ``gap > 1`` and rhs concentrates on low modes.
    """
    lam = spectral_gap(surface).value if gap is None else float(gap)
    v = sol.v.values
    L = sol.norms["rhs_l2"]
    lv = surface.l2(v)
    g2 = float(v @ (surface.stiffness @ v))
    lap = laplacian(surface, v).values
    w22 = math.sqrt(lv ** 2 + 2 * g2 + surface.l2(lap) ** 2)
    stated = {
        "poincare": _link(lv, L / lam, rel),
        "gradient": _link(g2, L ** 2 / lam ** 2, rel),
        "w22": _link(w22, poisson_factor(lam) * L, rel),
    }
    sharp = {
        "poincare": _link(lv, L / lam, rel),
        "gradient": _link(g2, L ** 2 / lam, rel),
        "w22": _link(w22, (1 + 1 / lam) * L, rel),
    }
    return {
        "gap": lam,
        "stated": stated,
        "sharp": sharp,
        "stated_ok": all(x["ok"] for x in stated.values()),
        "sharp_ok": all(x["ok"] for x in sharp.values()),
        "first_link_ratio": lv / L if L > 0 else 0.0,
    }
