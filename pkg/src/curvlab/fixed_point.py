"""Picard iteration of the composed map f -> (u, t) -> v -> e^{2v} f.

For the complex hyperbolic plane the coupled system is

    Delta u = 2 e^{2u} - 1 + e^{-4u} e^{2v} t f
    Delta v = 3/2 - 3R - 3 e^{2u},      mean(v) = 0,

solved by iterating three maps on nonnegative data ``fhat``:

* phi1: the volume-prescribed Gauss solve, ``mean(e^{2u}) = 1/2 - R``;
* phi2: the zero-mean Poisson solve for ``v``;
* phi3: ``fhat = e^{2v} f``.

If ``bal(f) >= A`` and ``A exp(-4 r) >= (2+eta)^3 R / (2 eta)`` with
``r = 3 C eta sqrt(Vol) / (2 (2+eta))`` the radius bounding ``|v|``, every
iterate stays admissible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .elliptic import gauss_bracket, gauss_residual, solve_poisson_zero_mean, _check_eta
from .errors import ConvergenceError, CurvlabError, PreconditionError
from .ray import (
    VOLUME_TOL, balance_ratio_values, max_admissible_t, prescribed_volume, required_balance,
)
from .surface.fields import ScalarField, field_values
from .surface.hyperbolic import HyperbolicSurface, laplacian
from .surface.spectral import GeometryConstants

__all__ = [
    "SystemForm",
    "PU21",
    "FixedPointProblem",
    "HypothesisCheck",
    "hypothesis_values",
    "exponential_identity",
    "check_hypothesis",
    "phi1",
    "phi2",
    "phi3",
    "FixedPointCertificate",
    "run_fixed_point",
    "af_certificate",
]

log = logging.getLogger(__name__)

# bal(f) of constant data can round to 1 - ulp
BAL_RTOL = 1e-12


class SystemForm:
    """Coefficients of one coupled Gauss-Poisson system.

    Subclasses give the Gauss coefficient ``a``, the volume target, the
    admissible data bound, the Poisson right-hand side and the radii that
    make the fixed-point sets invariant.
    """

    name = "abstract"
    a = 2.0
    eta_max = 1.0

    def target(self, R):
        raise NotImplementedError

    def tmax(self, eta, sup_f):
        raise NotImplementedError

    def u_bracket(self, eta):
        raise NotImplementedError

    def poisson_rhs(self, u, R):
        raise NotImplementedError

    def rhs_bound(self, eta):
        raise NotImplementedError

    def required_bal(self, eta, R):
        raise NotImplementedError

    def radius(self, C, eta, vol):
        """Sup-norm bound for the Poisson solution: ``C sqrt(Vol) rhs_bound``."""
        return C * math.sqrt(vol) * self.rhs_bound(eta)

    def e2u_bracket(self, eta):
        lo, hi = self.u_bracket(eta)
        return math.exp(2 * lo), math.exp(2 * hi)

    def volume_solve(self, surface, fv, eta, R, exploratory=False, tol=VOLUME_TOL):
        tmax = self.tmax(eta, float(fv.max()))
        out = prescribed_volume(surface, fv, self.a, self.target(R), tmax, self.u_bracket(eta),
                                tol=tol, exploratory=exploratory)
        out["t_max"] = tmax
        return out

    def gauss_residual(self, surface, u, data):
        return gauss_residual(surface, u, data, self.a)


class _PU21(SystemForm):
    name = "PU(2,1)"
    a = 2.0

    def target(self, R):
        return 0.5 - R

    def tmax(self, eta, sup_f):
        return max_admissible_t(np.array([sup_f]), eta)

    def u_bracket(self, eta):
        return gauss_bracket(eta)

    def poisson_rhs(self, u, R):
        return 1.5 - 3 * R - 3 * np.exp(2 * u)

    def rhs_bound(self, eta):
        return 3 * eta / (2 * (2 + eta))

    def required_bal(self, eta, R):
        return required_balance(eta, R)


PU21 = _PU21()


def hypothesis_values(A, C, eta, vol, R):
    """(lhs, rhs) of ``A exp(-12 C eta sqrt(Vol) / (2(2+eta))) >= (2+eta)^3 R / (2 eta)``."""
    lhs = A * math.exp(-12 * C * eta * math.sqrt(vol) / (2 * (2 + eta)))
    rhs = (2 + eta) ** 3 * R / (2 * eta)
    return lhs, rhs


def exponential_identity(C, eta, vol):
    """``exp(-4 r)`` with the Poisson radius ``r`` next to the hypothesis factor.

    The two agree because ``4 * 3 C eta sqrt(Vol) / (2(2+eta))`` is the
    hypothesis exponent; the pair is returned for reporting.
    """
    r = PU21.radius(C, eta, vol)
    return math.exp(-4 * r), math.exp(-12 * C * eta * math.sqrt(vol) / (2 * (2 + eta)))


@dataclass(frozen=True)
class FixedPointProblem:
    """Data of the fixed-point theorem: surface, section norm f, eta, R, balance constant A."""

    surface: HyperbolicSurface
    f: np.ndarray
    eta: float
    R: float
    A: float
    constants: GeometryConstants

    def __post_init__(self):
        object.__setattr__(self, "f", field_values(self.surface, self.f, "f").copy())
        if not (self.A > 0):
            raise PreconditionError("A must be positive")
        if not (0 < self.R < 0.5):
            raise PreconditionError("R must lie in (0, 1/2)")

    @property
    def C(self):
        return self.constants.C

    @property
    def volume(self):
        return self.constants.volume


@dataclass(frozen=True)
class HypothesisCheck:
    bal: float
    A: float
    bal_ok: bool
    exp_ok: bool
    lhs: float
    rhs: float

    @property
    def ok(self):
        return self.bal_ok and self.exp_ok

    def as_dict(self):
        return {"bal": self.bal, "A": self.A, "bal_ok": self.bal_ok, "exp_ok": self.exp_ok,
                "lhs": self.lhs, "rhs": self.rhs, "ok": self.ok}


def check_hypothesis(problem: FixedPointProblem) -> HypothesisCheck:
    """Evaluate ``bal(f) >= A`` and the exponential inequality as displayed."""
    bal = balance_ratio_values(problem.surface, problem.f)
    lhs, rhs = hypothesis_values(problem.A, problem.C, problem.eta, problem.volume, problem.R)
    return HypothesisCheck(bal, problem.A, bool(bal >= problem.A * (1 - BAL_RTOL)), bool(lhs >= rhs), lhs, rhs)


def phi1(surface, fhat, eta, R, exploratory=False):
    """Volume-prescribed Gauss solve; returns ``(u, t)``."""
    _check_eta(eta)
    fv = field_values(surface, fhat, "fhat")
    if float(fv.max(initial=0.0)) <= 0:
        raise PreconditionError("fhat must not vanish identically")
    bal = balance_ratio_values(surface, fv)
    need = PU21.required_bal(eta, R)
    if bal < need - 1e-12 and not exploratory:
        raise PreconditionError("fhat outside U1: bal = %.17g < %.17g" % (bal, need))
    out = PU21.volume_solve(surface, fv, eta, R, exploratory)
    return ScalarField(surface, out["u"]), out["t"]


def phi2(surface, u, R, tol_mean=1e-9):
    """Zero-mean solution of ``Delta v = 3/2 - 3R - 3 e^{2u}``."""
    uv = field_values(surface, u, "u")
    rhs = PU21.poisson_rhs(uv, R)
    m = surface.mean(rhs)
    if abs(m) > tol_mean:
        raise PreconditionError("Poisson right-hand side has mean %.3g: u is not in U2" % m)
    return solve_poisson_zero_mean(surface, rhs, project_mean=True).v


def phi3(v, f, radius=None):
    """``fhat = e^{2v} f``, checking ``bal(fhat) >= e^{-4|v|} bal(f)``."""
    surface = v.surface
    fv = field_values(surface, f, "f")
    vv = v.values
    sup_v = float(np.max(np.abs(vv)))
    if radius is not None and sup_v > radius * (1 + 1e-12):
        raise PreconditionError("v outside U3: sup|v| = %.6g > %.6g" % (sup_v, radius))
    fhat = np.exp(2 * vv) * fv
    lhs = balance_ratio_values(surface, fhat)
    rhs = math.exp(-4 * sup_v) * balance_ratio_values(surface, fv)
    if lhs < rhs * (1 - 1e-14):
        raise CurvlabError("balance estimate violated: %.17g < %.17g" % (lhs, rhs))
    return ScalarField(surface, fhat)


@dataclass
class PicardResult:
    u: np.ndarray
    v: np.ndarray
    t: float
    fhat: np.ndarray
    iterations: int
    converged: bool
    drift: list
    theta: list
    history: list
    exploratory_used: bool
    t_max: float


def picard(form: SystemForm, surface, f, eta, R, radius, max_iter=200, drift_tol=1e-8, damping=1.0,
           exploratory=False, volume_tol=VOLUME_TOL):
    """Damped Picard iteration ``fhat <- (1-theta) fhat + theta e^{2v} f``.

    ``theta`` starts at ``damping`` and is halved whenever the relative drift
    ``sup|e^{2v} f - fhat| / sup fhat`` grows.  Memberships of every iterate
    are recorded in ``history``.
    """
    f = np.asarray(f, dtype=float)
    fhat = f.copy()
    theta = float(damping)
    drift_hist, theta_hist, history = [], [], []
    lo2, hi2 = form.e2u_bracket(eta)
    rb = form.rhs_bound(eta)
    u = v = None
    t = 0.0
    converged = False
    explored = False
    tmax = math.nan
    it = 0
    for it in range(1, max_iter + 1):
        bal_in = balance_ratio_values(surface, fhat)
        need = form.required_bal(eta, R)
        try:
            out = form.volume_solve(surface, fhat, eta, R, exploratory, volume_tol)
        except CurvlabError as exc:
            raise type(exc)("iteration %d, Gauss volume solve: %s" % (it, exc)) from exc
        u, t, tmax = out["u"], out["t"], out["t_max"]
        explored = explored or out["beyond_tmax"]
        rhs = form.poisson_rhs(u, R)
        rhs_mean = surface.mean(rhs)
        try:
            ps = solve_poisson_zero_mean(surface, rhs, project_mean=True)
        except CurvlabError as exc:
            raise type(exc)("iteration %d, Poisson solve: %s" % (it, exc)) from exc
        v = ps.v.values
        new = np.exp(2 * v) * f
        e2u = np.exp(2 * u)
        sup_v = float(np.max(np.abs(v)))
        bal_new = balance_ratio_values(surface, new)
        rec = {
            "iteration": it,
            "t": t,
            "U1_in": bool(np.all(fhat >= 0) and bal_in >= need - 1e-12),
            "U2": bool(abs(surface.mean(e2u) - form.target(R)) <= 10 * volume_tol
                       and e2u.min() >= lo2 * (1 - 1e-12) and e2u.max() <= hi2 * (1 + 1e-12)),
            "rhs_link": bool(np.max(np.abs(rhs)) <= rb * (1 + 1e-12)),
            "rhs_mean": rhs_mean,
            "U3": bool(abs(surface.mean(v)) <= 1e-12 * (1 + sup_v) and sup_v <= radius * (1 + 1e-12)),
            "sup_v": sup_v,
            "balance_estimate": bool(bal_new >= math.exp(-4 * sup_v) * balance_ratio_values(surface, f) * (1 - 1e-14)),
            "U1_out": bool(bal_new >= need - 1e-12),
            "bal": bal_new,
        }
        drift = float(np.max(np.abs(new - fhat)) / np.max(np.abs(fhat)))
        rec["drift"] = drift
        if drift_hist and drift > drift_hist[-1]:
            theta = max(0.5 * theta, 1.0 / 1024)
        rec["theta"] = theta
        drift_hist.append(drift)
        theta_hist.append(theta)
        history.append(rec)
        if drift <= drift_tol:
            converged = True
            break
        fhat = (1 - theta) * fhat + theta * new
    return PicardResult(u, v, t, fhat, it, converged, drift_hist, theta_hist, history, explored, tmax)


@dataclass(frozen=True)
class FixedPointCertificate:
    """Result of the fixed-point iteration with all membership checks.

    ``fhat`` is the data fed to the last Gauss solve; ``u``, ``v``, ``t``
    solve the coupled system with ``e^{2v} f`` up to the final drift.
    """

    u: ScalarField
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
    residual_v: float
    U1: bool
    U2: bool
    U3: bool
    af_bound: float
    hypothesis: HypothesisCheck
    override_used: bool
    exploratory: bool
    radius: float
    well_defined: bool
    history: tuple = field(default=(), repr=False)
    constants: Optional[dict] = None

    @property
    def af_ok(self):
        return self.af_bound <= self.eta < 1

    @property
    def fixed_point_error(self):
        e = np.exp(2 * self.v.values) * self.f.values
        return float(np.max(np.abs(self.fhat.values - e)) / np.max(np.abs(self.fhat.values)))

    def summary(self):
        return {
            "eta": self.eta, "R": self.R, "t": self.t, "iterations": self.iterations,
            "converged": self.converged, "final_drift": self.drift[-1] if self.drift else None,
            "residual_u": self.residual_u, "residual_v": self.residual_v,
            "U1": self.U1, "U2": self.U2, "U3": self.U3, "af_bound": self.af_bound, "af_ok": self.af_ok,
            "hypothesis": self.hypothesis.as_dict(), "override_used": self.override_used,
            "exploratory": self.exploratory, "U3_radius": self.radius, "well_defined": self.well_defined,
            "fixed_point_error": self.fixed_point_error,
            "HYPOTHESIS_OVERRIDDEN": self.override_used,
        }


def run_fixed_point(problem: FixedPointProblem, max_iter: int = 200, drift_tol: float = 1e-8,
                    override: bool = False, damping: float = 1.0) -> FixedPointCertificate:
    """Iterate the composed map from ``fhat_0 = f`` until the relative drift is below ``drift_tol``.

    Raises PreconditionError when the hypothesis fails and ``override`` is
    not set.  With ``override`` the volume solve runs in exploratory mode and
    the certificate is stamped ``override_used``.  Non-convergence within
    ``max_iter`` returns an unconverged certificate.
    """
    s = problem.surface
    _check_eta(problem.eta)
    hyp = check_hypothesis(problem)
    if not hyp.ok and not override:
        raise PreconditionError(
            "fixed-point hypothesis fails (bal_ok=%s, lhs=%.6g, rhs=%.6g); rerun with the override flag"
            % (hyp.bal_ok, hyp.lhs, hyp.rhs))
    used = not hyp.ok
    if used:
        log.warning("fixed-point hypothesis fails; running with override")
    radius = PU21.radius(problem.C, problem.eta, problem.volume)
    res = picard(PU21, s, problem.f, problem.eta, problem.R, radius, max_iter, drift_tol, damping,
                 exploratory=override)
    e2vf = np.exp(2 * res.v) * problem.f
    ru = float(np.max(np.abs(gauss_residual(s, res.u, res.t * e2vf))))
    rv = float(np.max(np.abs(laplacian(s, res.v).values - PU21.poisson_rhs(res.u, problem.R))))
    last = res.history[-1]
    well = all(h["U1_in"] and h["U2"] and h["U3"] and h["rhs_link"] and h["U1_out"] and h["balance_estimate"]
               for h in res.history)
    if hyp.ok and not well:
        log.warning("a set membership failed although the hypothesis holds; check the constants")
    return FixedPointCertificate(
        u=ScalarField(s, res.u), v=ScalarField(s, res.v), t=res.t, fhat=ScalarField(s, res.fhat),
        f=ScalarField(s, problem.f), eta=problem.eta, R=problem.R, iterations=res.iterations,
        converged=res.converged, drift=tuple(res.drift), residual_u=ru, residual_v=rv,
        U1=last["U1_in"] and last["U1_out"], U2=last["U2"], U3=last["U3"],
        af_bound=float(np.max(np.exp(-6 * res.u) * res.t * e2vf)), hypothesis=hyp, override_used=used,
        exploratory=res.exploratory_used, radius=radius, well_defined=well, history=tuple(res.history),
        constants=problem.constants.as_dict())


def af_certificate(surface, u, v, t, f, eta, R=None, tol=1e-6) -> dict:
    """Evaluate the almost-Fuchsian bound and both curvature-equation residuals.

    ``R`` defaults to ``1/2 - mean(e^{2u})``, the only value for which the
    second equation is solvable.  PASS iff ``sup e^{-6u} e^{2v} t f <= eta < 1``
    and both residuals are at most ``tol``.
    """
    uv = field_values(surface, u, "u")
    vv = field_values(surface, v, "v")
    fv = field_values(surface, f, "f")
    if R is None:
        R = 0.5 - surface.mean(np.exp(2 * uv))
    data = t * np.exp(2 * vv) * fv
    af = float(np.max(np.exp(-6 * uv) * data))
    ru = float(np.max(np.abs(gauss_residual(surface, uv, data))))
    lam = 1.5 - 3 * R
    rv = float(np.max(np.abs(laplacian(surface, vv).values - (lam - 3 * np.exp(2 * uv)))))
    ok = bool(af <= eta < 1 and ru <= tol and rv <= tol)
    return {"af_bound": af, "eta": eta, "margin": eta - af, "residual_u": ru, "residual_v": rv,
            "lambda": lam, "R": R, "pass": ok}
