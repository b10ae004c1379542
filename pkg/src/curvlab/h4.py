"""Superminimal surfaces in real hyperbolic 4-space.

The coupled system for the pair ``(u, w)`` reads

    Delta u = e^{2u} - 1 + e^{-4u} e^{2w} t f
    Delta w = R - 1 + e^{2u},      mean(w) = 0,

and ``v = w - u`` recovers the normal-bundle form

    Delta u = e^{2u} - 1 + e^{-2u} e^{2v} t f
    Delta v = R - e^{-2u} e^{2v} t f.

The Gauss step is the complex hyperbolic one after rescaling
``u = u~ + ln2/2``, ``R~ = R/2``, ``eta~ = eta/2``, ``f~ = f/4``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .elliptic import gauss_residual, solve_poisson_zero_mean
from .errors import CurvlabError, PreconditionError
from .fixed_point import BAL_RTOL, SystemForm, picard
from .ray import VOLUME_TOL, GAUSS_TOL, balance_ratio_values, prescribed_volume, solve_gauss_with_volume
from .surface.fields import ScalarField, field_values
from .surface.hyperbolic import HyperbolicSurface, laplacian
from .surface.spectral import GeometryConstants

__all__ = [
    "H4",
    "H4Solution",
    "h4_required_balance",
    "h4_hypothesis_values",
    "solve_gauss_h4",
    "H4Certificate",
    "run_fixed_point_h4",
]

log = logging.getLogger(__name__)

LN2_HALF = 0.5 * math.log(2.0)


def h4_required_balance(eta, R):
    """``(8+eta)^3 R / (16 eta)``."""
    return (8 + eta) ** 3 * R / (16 * eta)


def h4_hypothesis_values(A, C, eta, vol, R):
    """(lhs, rhs) of ``A exp(-4 C sqrt(Vol) eta / (4+eta)) >= (8+eta)^3 R / (16 eta)``."""
    return A * math.exp(-4 * C * math.sqrt(vol) * eta / (4 + eta)), h4_required_balance(eta, R)


def _check_eta_h4(eta):
    if not (0 < eta < 0.5):
        raise PreconditionError("eta must lie in (0, 1/2), got %r" % eta)


class _H4(SystemForm):
    name = "H4"
    a = 1.0
    eta_max = 0.5

    def __init__(self, path="rescaled"):
        self.path = path

    def target(self, R):
        return 1.0 - R

    def tmax(self, eta, sup_f):
        return 16 * eta / ((4 + eta) ** 3 * sup_f)

    def u_bracket(self, eta):
        return 0.5 * math.log(4 / (4 + eta)), 0.0

    def poisson_rhs(self, u, R):
        return R - 1 + np.exp(2 * u)

    def rhs_bound(self, eta):
        return eta / (4 + eta)

    def required_bal(self, eta, R):
        return h4_required_balance(eta, R)

    def volume_solve(self, surface, fv, eta, R, exploratory=False, tol=VOLUME_TOL):
        sol = solve_gauss_h4(surface, fv, eta, R, path=self.path, exploratory=exploratory, tol=tol, check=False)
        return {"u": sol.u, "t": sol.t, "t_max": sol.t_max, "beyond_tmax": sol.beyond_tmax}


H4 = _H4()


@dataclass(frozen=True)
class H4Solution:
    u: np.ndarray
    t: float
    t_max: float
    achieved: float
    af_bound: float
    residual_sup: float
    path: str
    beyond_tmax: bool

    def summary(self):
        return {"t": self.t, "t_max": self.t_max, "achieved_volume": self.achieved, "af_bound": self.af_bound,
                "residual_sup": self.residual_sup, "path": self.path, "beyond_tmax": self.beyond_tmax}


def solve_gauss_h4(surface: HyperbolicSurface, f, eta: float, R: float, path: str = "rescaled",
                   exploratory: bool = False, tol: float = VOLUME_TOL, gauss_tol: float = GAUSS_TOL,
                   check: bool = True) -> H4Solution:
    """Solve ``Delta u = e^{2u} - 1 + e^{-4u} t f`` with ``mean(e^{2u}) = 1 - R``.

    ``path="rescaled"`` runs the complex hyperbolic volume solve on
    ``(f/4, eta/2, R/2)`` and shifts by ``ln2/2``; ``path="direct"`` solves
    the ``a = 1`` equation on ``4/(4+eta) <= e^{2u} <= 1`` directly.  The two
    are independent routes to the same solution.
    """
    _check_eta_h4(eta)
    fv = field_values(surface, f, "f")
    if np.any(fv < 0):
        raise PreconditionError("f must be nonnegative")
    if not (0 <= R < 1):
        raise PreconditionError("R must lie in [0, 1)")
    if float(fv.max(initial=0.0)) <= 0 or R == 0:
        if R != 0:
            raise PreconditionError("f vanishes identically; only R = 0 is reachable")
        u = np.zeros(surface.n_vertices)
        return H4Solution(u, 0.0, math.inf, 1.0, 0.0, float(np.max(np.abs(gauss_residual(surface, u, fv, 1.0)))),
                          path, False)
    if check:
        bal = balance_ratio_values(surface, fv)
        need = h4_required_balance(eta, R)
        if bal < need - 1e-12 and not exploratory:
            raise PreconditionError("balance hypothesis fails: bal = %.17g < %.17g" % (bal, need))
    if path == "rescaled":
        sol = solve_gauss_with_volume(surface, fv / 4, eta / 2, R / 2, tol=tol / 2, gauss_tol=gauss_tol,
                                      exploratory=exploratory)
        u, t, tmax = sol.u.values + LN2_HALF, sol.t, sol.t_max
        beyond = sol.t > sol.t_max
    elif path == "direct":
        tmax = H4.tmax(eta, float(fv.max()))
        out = prescribed_volume(surface, fv, 1.0, 1.0 - R, tmax, H4.u_bracket(eta), tol=tol, gauss_tol=gauss_tol,
                                exploratory=exploratory)
        u, t, beyond = out["u"], out["t"], out["beyond_tmax"]
    else:
        raise PreconditionError("unknown path %r" % path)
    res = float(np.max(np.abs(gauss_residual(surface, u, t * fv, 1.0))))
    af = float(np.max(np.exp(-6 * u) * t * fv))
    return H4Solution(u, t, tmax, surface.mean(np.exp(2 * u)), af, res, path, bool(beyond))


@dataclass(frozen=True)
class H4Certificate:
    u: ScalarField
    w: ScalarField
    v: ScalarField
    t: float
    fhat: ScalarField
    f: ScalarField
    eta: float
    R: float
    iterations: int
    converged: bool
    drift: tuple
    residual_u: float
    residual_w: float
    residual_uv: float
    residual_v: float
    af_bound: float
    af_bound_uv: float
    identity_error: float
    U_memberships: bool
    hypothesis: dict
    override_used: bool
    radius: float
    history: tuple = field(default=(), repr=False)

    @property
    def af_ok(self):
        return self.af_bound <= self.eta < 1

    def summary(self):
        return {
            "eta": self.eta, "R": self.R, "t": self.t, "iterations": self.iterations, "converged": self.converged,
            "final_drift": self.drift[-1] if self.drift else None,
            "residual_u": self.residual_u, "residual_w": self.residual_w,
            "residual_u_normal_form": self.residual_uv, "residual_v": self.residual_v,
            "af_bound": self.af_bound, "af_bound_normal_form": self.af_bound_uv, "af_ok": self.af_ok,
            "identity_error": self.identity_error, "memberships": self.U_memberships,
            "hypothesis": self.hypothesis, "override_used": self.override_used, "w_radius": self.radius,
            "HYPOTHESIS_OVERRIDDEN": self.override_used,
        }


def run_fixed_point_h4(surface: HyperbolicSurface, f, eta: float, R: float, A: float = 1.0,
                       constants: Optional[GeometryConstants] = None, override: bool = False,
                       max_iter: int = 200, drift_tol: float = 1e-8, damping: float = 1.0,
                       path: str = "rescaled") -> H4Certificate:
    """Picard loop ``f^ -> u -> w -> e^{2w} f`` for the H^4 system.

    ``constants`` default to the measured ones of ``surface``.  The
    hypothesis ``bal(f) >= A`` and ``A exp(-4 C sqrt(Vol) eta/(4+eta)) >=
    (8+eta)^3 R/(16 eta)`` is checked first; ``override`` runs anyway and
    stamps the certificate.
    """
    from .surface.spectral import poisson_constant

    _check_eta_h4(eta)
    if not (0 < R < 1):
        raise PreconditionError("R must lie in (0, 1)")
    fv = field_values(surface, f, "f")
    K = poisson_constant(surface) if constants is None else constants
    bal = balance_ratio_values(surface, fv)
    lhs, rhs = h4_hypothesis_values(A, K.C, eta, K.volume, R)
    hyp = {"bal": bal, "A": A, "bal_ok": bool(bal >= A * (1 - BAL_RTOL)), "exp_ok": bool(lhs >= rhs), "lhs": lhs, "rhs": rhs}
    hyp["ok"] = hyp["bal_ok"] and hyp["exp_ok"]
    if not hyp["ok"] and not override:
        raise PreconditionError("H4 fixed-point hypothesis fails (bal_ok=%s, lhs=%.6g, rhs=%.6g); rerun with the "
                                "override flag" % (hyp["bal_ok"], lhs, rhs))
    used = not hyp["ok"]
    if used:
        log.warning("H4 fixed-point hypothesis fails; running with override")
    form = H4 if path == "rescaled" else _H4(path)
    radius = form.radius(K.C, eta, K.volume)
    res = picard(form, surface, fv, eta, R, radius, max_iter, drift_tol, damping, exploratory=override)
    u, w, t = res.u, res.v, res.t
    v = w - u
    data = t * fv
    ru = float(np.max(np.abs(gauss_residual(surface, u, np.exp(2 * w) * data, 1.0))))
    rw = float(np.max(np.abs(laplacian(surface, w).values - (R - 1 + np.exp(2 * u)))))
    q = np.exp(-2 * u) * np.exp(2 * v) * data
    ruv = float(np.max(np.abs(laplacian(surface, u).values - (np.exp(2 * u) - 1 + q))))
    rv = float(np.max(np.abs(laplacian(surface, v).values - (R - q))))
    af_w = np.exp(-6 * u) * np.exp(2 * w) * data
    af_v = np.exp(-4 * u) * np.exp(2 * v) * data
    ident = float(np.max(np.abs(af_w - af_v) / np.maximum(np.abs(af_w), np.finfo(float).tiny)))
    mem = all(h["U1_in"] and h["U2"] and h["U3"] and h["rhs_link"] for h in res.history)
    return H4Certificate(
        u=ScalarField(surface, u), w=ScalarField(surface, w), v=ScalarField(surface, v), t=t,
        fhat=ScalarField(surface, res.fhat), f=ScalarField(surface, fv), eta=eta, R=R,
        iterations=res.iterations, converged=res.converged, drift=tuple(res.drift),
        residual_u=ru, residual_w=rw, residual_uv=ruv, residual_v=rv,
        af_bound=float(af_w.max()), af_bound_uv=float(af_v.max()), identity_error=ident,
        U_memberships=mem, hypothesis=hyp, override_used=used, radius=radius, history=tuple(res.history))
