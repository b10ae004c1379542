"""The ray of Gauss solutions ``u_t`` and the volume-prescribed Gauss problem.

Along the ray ``Delta u_t = 2e^{2u_t} - 1 + e^{-4u_t} t f`` the normalized volume
``F(t) = mean(e^{2u_t})`` starts at 1/2, is nonincreasing and concave, and
satisfies ``F(t) <= 1/2 - 2 t mean(f)``.  The volume solve inverts ``F``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .elliptic import (
    admissible_bound, gauss_bracket, gauss_residual, solve_gauss, solve_semilinear, _check_eta,
)
from .errors import ConvergenceError, PreconditionError
from .surface.fields import ScalarField, field_values
from .surface.hyperbolic import HyperbolicSurface, laplacian

__all__ = [
    "chebyshev_grid",
    "max_admissible_t",
    "balance_ratio_values",
    "required_balance",
    "RayProfile",
    "solve_ray",
    "ray_derivatives",
    "check_slope_inequality",
    "VolumeSolve",
    "prescribed_volume",
    "solve_gauss_with_volume",
    "volume_scan",
]

GAUSS_TOL = 1e-12
VOLUME_TOL = 1e-11


def chebyshev_grid(t_max: float, n: int = 33) -> np.ndarray:
    """Chebyshev-Lobatto points on [0, t_max], endpoints exact."""
    i = np.arange(n)
    t = 0.5 * t_max * (1.0 - np.cos(np.pi * i / (n - 1)))
    t[0], t[-1] = 0.0, t_max
    return t


def max_admissible_t(f, eta: float) -> float:
    """Largest t with ``sup(t f) <= eta/(2+eta)^3``."""
    s = float(np.max(f))
    return math.inf if s <= 0 else admissible_bound(eta) / s


def balance_ratio_values(surface, f) -> float:
    fv = field_values(surface, f, "f")
    s = float(fv.max())
    if s <= 0:
        raise PreconditionError("balance ratio undefined for a field that is identically zero")
    return surface.mean(fv) / s


def required_balance(eta: float, R: float) -> float:
    """Balance needed by the volume solve: ``(2+eta)^3 R / (2 eta)``."""
    return (2 + eta) ** 3 * R / (2 * eta)


@dataclass(frozen=True)
class RayProfile:
    """Solutions along a t grid with the volume curve and optional t-derivatives.

    ``concavity_defect[i]`` (interior points) is the linear interpolation of
    the neighbours minus ``F[i]``; concavity means it is <= 0.
    """

    surface: HyperbolicSurface
    f: np.ndarray
    eta: float
    t: np.ndarray
    u: np.ndarray
    F: np.ndarray
    residuals: np.ndarray
    udot: Optional[np.ndarray] = None
    uddot: Optional[np.ndarray] = None
    derivative_residuals: Optional[np.ndarray] = None

    @property
    def concavity_defect(self):
        t, F = self.t, self.F
        w = (t[1:-1] - t[:-2]) / (t[2:] - t[:-2])
        return F[:-2] + w * (F[2:] - F[:-2]) - F[1:-1]

    @property
    def second_divided_difference(self):
        t, F = self.t, self.F
        d1 = np.diff(F) / np.diff(t)
        return 2 * np.diff(d1) / (t[2:] - t[:-2])

    @property
    def Fdot(self):
        """F'(t) = mean(2 e^{2u} udot) from the linearized solves."""
        if self.udot is None:
            return None
        return np.array([self.surface.mean(2 * np.exp(2 * u) * ud) for u, ud in zip(self.u, self.udot)])

    @property
    def Fddot(self):
        if self.uddot is None:
            return None
        return np.array([self.surface.mean(2 * np.exp(2 * u) * (udd + 2 * ud * ud))
                         for u, ud, udd in zip(self.u, self.udot, self.uddot)])

    def structure(self, tol=1e-8):
        """Monotonicity, concavity and sign controls as booleans with worst values."""
        out = {
            "F0": float(self.F[0]),
            "F0_exact": bool(abs(self.F[0] - 0.5) <= 1e-12),
            "max_increase": float(np.max(np.diff(self.F))) if len(self.F) > 1 else 0.0,
            "max_concavity_defect": float(np.max(self.concavity_defect)) if len(self.F) > 2 else 0.0,
        }
        out["nonincreasing"] = out["max_increase"] <= tol
        out["concave"] = out["max_concavity_defect"] <= tol
        if self.udot is not None:
            s = self.udot
            out["max_udot"] = float(s.max())
            if self.uddot is not None:
                out["max_uddot"] = float(self.uddot.max())
                out["max_uddot_plus_2udot2"] = float((self.uddot + 2 * s * s).max())
        return out


def solve_ray(surface: HyperbolicSurface, f, eta: float, t_grid=None, tol: float = GAUSS_TOL,
              n_points: int = 33, check: bool = True) -> RayProfile:
    """Solve the Gauss equation along a t grid by continuation.

    The default grid is ``n_points`` Chebyshev points on ``[0, t_max]`` with
    ``t_max = eta / ((2+eta)^3 sup f)``.  Each solve is warm-started from the
    previous one, which is a supersolution because ``u_t`` decreases in t.
    """
    _check_eta(eta)
    fv = field_values(surface, f, "f").copy()
    if np.any(fv < 0):
        raise PreconditionError("f must be nonnegative")
    tmax = max_admissible_t(fv, eta)
    if t_grid is None:
        if not math.isfinite(tmax):
            tmax = 1.0
        t_grid = chebyshev_grid(tmax, n_points)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise PreconditionError("t grid must start at 0 and increase strictly")
    if check and t_grid[-1] > tmax * (1 + 1e-12):
        raise PreconditionError("t = %.17g exceeds the maximal admissible t = %.17g" % (t_grid[-1], tmax))
    U, F, res = [], [], []
    u_prev = None
    for t in t_grid:
        sol = solve_gauss(surface, fv, eta, tol=tol, t=float(min(t, tmax)) if check else float(t),
                          u0=u_prev, check=check)
        u_prev = sol.u.values
        U.append(u_prev)
        F.append(surface.mean(np.exp(2 * u_prev)))
        res.append(sol.residual_sup)
    return RayProfile(surface, fv, float(eta), t_grid, np.array(U), np.array(F), np.array(res))


def ray_derivatives(surface: HyperbolicSurface, profile: RayProfile) -> RayProfile:
    """First and second t-derivatives of ``u_t`` from the linearized equations.

    With ``c = 4 e^{2u} - 4 e^{-4u} t f`` (positive while ``e^{-6u} t f < 1``):

        Delta udot  = c udot  + e^{-4u} f
        Delta uddot = c uddot + (8 e^{2u} + 16 e^{-4u} t f) udot^2 - 8 e^{-4u} f udot
    """
    if profile.surface is not surface:
        raise PreconditionError("profile belongs to a different surface")
    S, mu = surface.stiffness, surface.mass
    f = profile.f
    UD, UDD, RES = [], [], []
    for t, u in zip(profile.t, profile.u):
        e2 = np.exp(2 * u)
        em4 = np.exp(-4 * u)
        af = float(np.max(np.exp(-6 * u) * t * f))
        if af >= 1.0:
            raise PreconditionError(
                "linearized operator may be singular: sup e^{-6u} t f = %.6g >= 1 at t = %.6g" % (af, t))
        c = 4 * e2 - 4 * em4 * t * f
        lu = splu((S + sp.diags(mu * c)).tocsc())
        ud = lu.solve(-mu * em4 * f)
        src = (8 * e2 + 16 * em4 * t * f) * ud * ud - 8 * em4 * f * ud
        udd = lu.solve(-mu * src)
        lap = laplacian(surface, ud).values, laplacian(surface, udd).values
        r1 = np.max(np.abs(lap[0] - c * ud - em4 * f))
        r2 = np.max(np.abs(lap[1] - c * udd - src))
        UD.append(ud)
        UDD.append(udd)
        RES.append(max(r1, r2))
    return replace(profile, udot=np.array(UD), uddot=np.array(UDD), derivative_residuals=np.array(RES))


def check_slope_inequality(profile: RayProfile, h: float = 1e-3, tol: float = 1e-8) -> dict:
    """Check ``F(t) <= 1/2 - 2 t mean(f)`` on the grid and the slope ``F'(0) = -2 mean(f)``.

    ``h`` is relative to the last grid point; ``F'(0)`` is estimated by the
    one-sided second-order difference ``(-3F(0) + 4F(h) - F(2h)) / (2h)``.
    """
    surf = profile.surface
    mf = surf.mean(profile.f)
    bound = 0.5 - 2 * profile.t * mf
    gap = bound - profile.F
    hh = h * profile.t[-1]
    u1 = solve_gauss(surf, profile.f, profile.eta, tol=GAUSS_TOL, t=hh).u.values
    u2 = solve_gauss(surf, profile.f, profile.eta, tol=GAUSS_TOL, t=2 * hh, u0=u1).u.values
    F1, F2 = surf.mean(np.exp(2 * u1)), surf.mean(np.exp(2 * u2))
    fd = (-3 * 0.5 + 4 * F1 - F2) / (2 * hh)
    exact = -2 * mf
    rel = abs(fd - exact) / abs(exact) if exact != 0 else abs(fd)
    out = {
        "mean_f": mf,
        "slope_exact": exact,
        "slope_fd": fd,
        "slope_rel_error": rel,
        "slope_ok": bool(rel <= 1e-4) if exact != 0 else bool(abs(fd) <= 1e-10),
        "gap": gap,
        "min_gap": float(gap.min()),
        "inequality_ok": bool(np.all(profile.F <= bound + tol)),
    }
    if profile.udot is not None:
        out["slope_linearized"] = float(surf.mean(2 * np.exp(2 * profile.u[0]) * profile.udot[0]))
    pos = profile.t > 0
    # second-order Taylor coefficient (F - F0 - t F'(0)) / t^2
    out["taylor_coefficient"] = ((profile.F[pos] - 0.5 - profile.t[pos] * exact) / profile.t[pos] ** 2)
    return out


@dataclass(frozen=True)
class VolumeSolve:
    """Gauss solution with prescribed normalized volume ``mean(e^{2u}) = 1/2 - R``."""

    u: ScalarField
    t: float
    R: float
    eta: float
    achieved: float
    bal: float
    required_bal: float
    t_max: float
    af_bound: float
    residual_sup: float
    evaluations: int
    exploratory: bool = False

    @property
    def target(self):
        return 0.5 - self.R

    def summary(self):
        return {
            "t": self.t, "R": self.R, "eta": self.eta, "target": self.target, "achieved": self.achieved,
            "bal": self.bal, "required_bal": self.required_bal, "t_max": self.t_max,
            "af_bound": self.af_bound, "residual_sup": self.residual_sup,
            "evaluations": self.evaluations, "exploratory": self.exploratory,
        }


def prescribed_volume(surface: HyperbolicSurface, fv: np.ndarray, a: float, target: float, tmax: float,
                      bracket, tol: float = VOLUME_TOL, gauss_tol: float = GAUSS_TOL,
                      exploratory: bool = False, max_evaluations: int = 200) -> dict:
    """Root of ``t -> mean(e^{2u_t}) - target`` for ``Delta u = a e^{2u} - 1 + e^{-4u} t f``.

    ``u_0`` is the constant ``-ln(a)/2`` with volume fraction 1/a above the
    target.  Illinois regula falsi with periodic bisection brackets the root
    in ``[0, tmax]``; every solve is warm-started from the largest solved t
    below the root, a supersolution since ``u_t`` decreases in t.  Inside
    ``[0, tmax]`` iterates are clamped to ``bracket``.

    With ``exploratory`` set and the target not reached at ``tmax``, t is
    pushed further in growing steps, backtracking whenever the Gauss equation
    stops being solvable, until the target is crossed or the end of the
    solution branch is located.
    """
    u_top = -0.5 * math.log(a)
    evals = [0]
    below = {"t": 0.0, "u": np.full(surface.n_vertices, u_top)}

    def F(t):
        evals[0] += 1
        if evals[0] > max_evaluations:
            raise ConvergenceError("volume solve exceeded %d evaluations" % max_evaluations,
                                   {"t": t, "evaluations": evals[0]})
        inside = t <= tmax * (1 + 1e-14)
        lower, upper = bracket if inside else (-np.inf, u_top)
        u, _ = solve_semilinear(surface, t * fv, a, below["u"], lower, upper, gauss_tol)
        val = surface.mean(np.exp(2 * u))
        if val > target and t > below["t"]:
            below["t"], below["u"] = t, u
        return val, u, float(np.max(np.exp(-6 * u) * t * fv))

    lo, Glo = 0.0, 1.0 / a - target
    hi = tmax
    Fhi, u_hi, af_hi = F(hi)
    Ghi = Fhi - target
    if Ghi > tol:
        if not exploratory:
            raise PreconditionError(
                "target volume %.17g not reached on [0, t_max]: F ranges over [%.17g, %.17g]"
                % (target, Fhi, 1.0 / a))
        lo, Glo = hi, Ghi
        step, fail = 0.25 * tmax, math.inf
        while True:
            cand = lo + step
            if cand >= fail:
                cand = 0.5 * (lo + fail)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    Fc, uc, afc = F(cand)
                ok = afc < 1.0
            except ConvergenceError:
                ok = False
            if not ok:
                fail = cand
                if fail - lo <= 1e-10 * fail:
                    raise ConvergenceError(
                        "exploratory continuation cannot reach the target volume: the ray ends near t = %.10g "
                        "with F = %.17g > %.17g" % (lo, Glo + target, target),
                        {"t_end": lo, "F_end": Glo + target, "target": target})
                continue
            Gc = Fc - target
            if Gc <= tol:
                hi, Ghi, u_hi, af_hi = cand, Gc, uc, afc
                break
            lo, Glo = cand, Gc
            step *= 2
    if abs(Ghi) <= tol:
        t_root, u_root, af_root = hi, u_hi, af_hi
    else:
        last = 0
        k = 0
        width_ref = hi - lo
        while True:
            k += 1
            if k % 4 == 0 and hi - lo > 0.5 * width_ref:
                t = 0.5 * (lo + hi)
            else:
                t = hi - Ghi * (hi - lo) / (Ghi - Glo)
                if not lo < t < hi:
                    t = 0.5 * (lo + hi)
            if k % 4 == 0:
                width_ref = hi - lo
            Ft, ut, aft = F(t)
            G = Ft - target
            if abs(G) <= tol or hi - lo <= 4 * np.finfo(float).eps * max(hi, 1.0):
                t_root, u_root, af_root = t, ut, aft
                break
            # Illinois: halve the stale endpoint value when one side repeats
            if G > 0:
                lo, Glo = t, G
                if last == 1:
                    Ghi *= 0.5
                last = 1
            else:
                hi, Ghi = t, G
                if last == -1:
                    Glo *= 0.5
                last = -1
    return {"u": u_root, "t": float(t_root), "achieved": surface.mean(np.exp(2 * u_root)),
            "af_bound": af_root, "evaluations": evals[0], "beyond_tmax": bool(t_root > tmax * (1 + 1e-14))}


def solve_gauss_with_volume(surface: HyperbolicSurface, f, eta: float, R: float, tol: float = VOLUME_TOL,
                            gauss_tol: float = GAUSS_TOL, exploratory: bool = False,
                            max_evaluations: int = 200) -> VolumeSolve:
    """Find t and u_t with ``mean(e^{2u_t}) = 1/2 - R``.

    When ``bal(f) >= (2+eta)^3 R / (2 eta)`` the slope inequality places the
    target between ``t = 0`` and ``t_max = eta/((2+eta)^3 sup f)``.

    Parameters
    ----------
    f : ScalarField, array or float
        Nonnegative, not identically zero.
    R : float
        Volume defect in (0, 1/2).
    tol : float
        Absolute tolerance on ``mean(e^{2u})``.
    exploratory : bool
        Waive the balance requirement and allow t beyond ``t_max`` while the
        equation stays solvable with ``sup e^{-6u} t f < 1``.
    """
    _check_eta(eta)
    if not (0 < R < 0.5):
        raise PreconditionError("R must lie in (0, 1/2), got %r" % R)
    fv = field_values(surface, f, "f").copy()
    if np.any(fv < -1e-12):
        raise PreconditionError("f must be nonnegative")
    fv = np.maximum(fv, 0.0)
    bal = balance_ratio_values(surface, fv)
    need = required_balance(eta, R)
    if bal < need - 1e-12 and not exploratory:
        raise PreconditionError("balance hypothesis fails: bal(f) = %.17g < required %.17g" % (bal, need))
    tmax = max_admissible_t(fv, eta)
    assert float(np.max(tmax * fv)) <= admissible_bound(eta) * (1 + 1e-14)
    out = prescribed_volume(surface, fv, 2.0, 0.5 - R, tmax, gauss_bracket(eta), tol, gauss_tol,
                            exploratory, max_evaluations)
    u = out["u"]
    res = float(np.max(np.abs(gauss_residual(surface, u, out["t"] * fv))))
    return VolumeSolve(ScalarField(surface, u), out["t"], float(R), float(eta), out["achieved"], bal, need,
                       tmax, out["af_bound"], res, out["evaluations"],
                       bool(out["beyond_tmax"] or bal < need - 1e-12))


def volume_scan(surface: HyperbolicSurface, f, eta: float, R: float, n: int = 401) -> float:
    """Independent estimate of the volume-solve t from a dense uniform t grid.

    Solves the ray on ``n`` equispaced points of ``[0, t_max]``, interpolates
    ``F`` by a cubic spline and finds the root of ``F - (1/2 - R)`` with
    Brent's method.
    """
    fv = field_values(surface, f, "f")
    tmax = max_admissible_t(fv, eta)
    grid = np.linspace(0.0, tmax, n)
    prof = solve_ray(surface, fv, eta, t_grid=grid)
    spline = CubicSpline(grid, prof.F)
    target = 0.5 - R
    G = prof.F - target
    k = int(np.argmax(G <= 0))
    if G[k] > 0:
        raise PreconditionError("target volume not reached on the scan grid")
    if k == 0:
        return 0.0
    return float(brentq(lambda s: spline(s) - target, grid[k - 1], grid[k], xtol=1e-15, rtol=1e-15))
