"""Toledo invariants, degree windows and genus-threshold criterion scans.

All Toledo arithmetic is exact (``fractions.Fraction``).  The two criterion
forms share one evaluator parameterized by the exponent coefficient, the
right-hand coefficient and the volume-defect formula ``R(g, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .errors import PreconditionError

__all__ = [
    "ToledoRecord",
    "toledo",
    "af_window_table",
    "SCHEDULES",
    "eta_schedule",
    "CriterionForm",
    "PU21_CRITERION",
    "H4_CRITERION",
    "CRITERIA",
    "CriterionScan",
    "criterion_scan",
    "asymptotic_genus",
    "h4_degree_report",
]


@dataclass(frozen=True)
class ToledoRecord:
    """Toledo invariant ``2 - 2g + 2d/3`` and the flags derived from it."""

    g: int
    d: int
    tol: Fraction
    deg_L: int
    liftable: bool
    in_af_window: bool
    stable: bool
    below_window_bound: bool
    milnor_wood: bool

    def as_dict(self):
        return {"g": self.g, "d": self.d, "tol": str(self.tol), "tol_float": float(self.tol),
                "deg_L": self.deg_L, "liftable": self.liftable, "in_af_window": self.in_af_window,
                "stable": self.stable, "milnor_wood": self.milnor_wood, "provenance": "exact"}


def _check_gd(g, d):
    if int(g) != g or g < 2:
        raise PreconditionError("genus must be an integer >= 2, got %r" % g)
    if int(d) != d or d < 0:
        raise PreconditionError("d must be a nonnegative integer, got %r" % d)
    return int(g), int(d)


def toledo(g: int, d: int) -> ToledoRecord:
    """Exact Toledo record of the degree-``d`` construction on genus ``g``.

    ``in_af_window`` combines the strict bound ``Tol < (4-4g)/3`` with
    stability ``0 < deg L < 3g-3``; it is checked against ``0 < d < g-1``.
    """
    g, d = _check_gd(g, d)
    tol = Fraction(2 - 2 * g) + Fraction(2 * d, 3)
    deg_L = 3 * g - 3 - d
    assert tol == Fraction(-2, 3) * deg_L
    assert (3 * tol).denominator == 1
    below = tol < Fraction(4 - 4 * g, 3)
    stable = 0 < deg_L < 3 * g - 3
    window = below and stable
    assert window == (0 < d < g - 1)
    mw = 2 - 2 * g <= tol <= 2 * g - 2
    return ToledoRecord(g, d, tol, deg_L, tol.denominator == 1, window, stable, below, mw)


def af_window_table(g_range) -> list:
    """For each genus, the integers ``d`` in the window and their Toledo values."""
    rows = []
    for g in g_range:
        g, _ = _check_gd(g, 0)
        ds = [d for d in range(0, 6 * g - 5) if toledo(g, d).in_af_window]
        rows.append({"g": g, "d": ds, "tol": [toledo(g, d).tol for d in ds]})
    return rows


# exponent p of eta_g = g^-p; both gη -> inf and sqrt(g)η -> 0 need 1/2 < p < 1
SCHEDULES = {"g^-3/4": 0.75, "g^-2/3": 2.0 / 3.0, "g^-5/6": 5.0 / 6.0}
DEFAULT_SCHEDULE = "g^-3/4"


def eta_schedule(name, g, cap: float = 0.99):
    """``min(cap, g^-p)`` for a named schedule; vectorized in ``g``."""
    if name not in SCHEDULES:
        raise PreconditionError("unknown schedule %r; choose from %s" % (name, sorted(SCHEDULES)))
    g = np.asarray(g, dtype=float)
    if np.any(g < 2):
        raise PreconditionError("genus must be >= 2")
    out = np.minimum(cap, g ** -SCHEDULES[name])
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CriterionForm:
    """``A exp(-a C eta sqrt(Vol) / den(eta)) >= coef(eta) R(g, d)``."""

    name: str
    exp_coef: float
    exp_den: Callable
    rhs_coef: Callable
    R: Callable
    eta_cap: float
    display: str

    def lhs(self, A, C, eta, vol):
        return A * np.exp(-self.exp_coef * C * eta * np.sqrt(vol) / self.exp_den(eta))

    def rhs(self, eta, R):
        return self.rhs_coef(eta) * R


PU21_CRITERION = CriterionForm(
    "PU21", 12.0, lambda e: 2 * (2 + e), lambda e: (2 + e) ** 3 / (2 * e),
    lambda g, d: d / (6 * g - 6), 0.99,
    "A*exp(-12*C*eta*sqrt(Vol)/(2*(2+eta))) >= (2+eta)^3*R/(2*eta), R = d/(6g-6)")
H4_CRITERION = CriterionForm(
    "H4", 4.0, lambda e: 4 + e, lambda e: (8 + e) ** 3 / (16 * e),
    lambda g, d: d / (2 * g - 2), 0.49,
    "A*exp(-4*C*sqrt(Vol)*eta/(4+eta)) >= ((8+eta)^3/(16*eta))*R, R = d/(2g-2)")
CRITERIA = {"PU21": PU21_CRITERION, "H4": H4_CRITERION}


def _form(target):
    if isinstance(target, CriterionForm):
        return target
    try:
        return CRITERIA[str(target).upper().replace("(", "").replace(")", "").replace(",", "")]
    except KeyError:
        raise PreconditionError("unknown criterion target %r" % target)


@dataclass(frozen=True)
class CriterionScan:
    target: str
    A: float
    C: float
    d: int
    schedule: str
    eta_cap: float
    g: np.ndarray
    volume: np.ndarray
    R: np.ndarray
    eta: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    passed: np.ndarray
    g0: Optional[int]
    overrides: dict = field(default_factory=dict)

    @property
    def g_max(self):
        return int(self.g[-1])

    @property
    def lhs_ratio_at_gmax(self):
        return float(self.lhs[-1] / self.A)

    @property
    def rhs_at_gmax(self):
        return float(self.rhs[-1])

    def summary(self):
        return {"target": self.target, "A": self.A, "C": self.C, "d": self.d, "schedule": self.schedule,
                "eta_cap": self.eta_cap, "g_min": int(self.g[0]), "g_max": self.g_max,
                "g0": self.g0, "g0_note": ("verified up to g_max" if self.g0 is not None else "none in range"),
                "lhs_over_A_at_gmax": self.lhs_ratio_at_gmax, "rhs_at_gmax": self.rhs_at_gmax,
                "n_pass": int(self.passed.sum()), "overrides": dict(self.overrides)}

    def rows(self):
        for i in range(len(self.g)):
            yield {"g": int(self.g[i]), "Vol": float(self.volume[i]), "R": float(self.R[i]),
                   "eta": float(self.eta[i]), "lhs": float(self.lhs[i]), "rhs": float(self.rhs[i]),
                   "pass": bool(self.passed[i]), "liftable": toledo(int(self.g[i]), self.d).liftable}


def criterion_scan(target, A: float, C: float, d: int, schedule: str = DEFAULT_SCHEDULE, g_min: int = 2,
                   g_max: int = 1000, eta_cap: Optional[float] = None, overrides: Optional[dict] = None) -> CriterionScan:
    """Evaluate the criterion for every genus in ``[g_min, g_max]``.

    ``g0`` is the least g such that every tested genus from g to ``g_max``
    passes, or None.  The scan cannot certify genera beyond ``g_max``.
    """
    form = _form(target)
    if not (A > 0 and C > 0):
        raise PreconditionError("A and C must be positive")
    if int(d) != d or d < 1:
        raise PreconditionError("d must be an integer >= 1")
    if g_min < 2 or g_max < g_min:
        raise PreconditionError("empty genus range [%r, %r]" % (g_min, g_max))
    cap = form.eta_cap if eta_cap is None else float(eta_cap)
    g = np.arange(int(g_min), int(g_max) + 1, dtype=np.int64)
    gf = g.astype(float)
    vol = 2 * math.pi * (2 * gf - 2)
    eta = eta_schedule(schedule, gf, cap)
    eta = np.atleast_1d(eta)
    R = form.R(gf, d)
    lhs = form.lhs(A, C, eta, vol)
    rhs = form.rhs(eta, R)
    ok = lhs >= rhs
    fail = np.flatnonzero(~ok)
    if len(fail) == 0:
        g0 = int(g[0])
    elif fail[-1] == len(g) - 1:
        g0 = None
    else:
        g0 = int(g[fail[-1] + 1])
    return CriterionScan(form.name, float(A), float(C), int(d), schedule, cap, g, vol, R, eta, lhs, rhs, ok,
                         g0, dict(overrides or {}))


def asymptotic_genus(target, A: float, C: float, d: int, schedule: str = DEFAULT_SCHEDULE,
                     lhs_fraction: float = 0.99, rhs_tol: float = 1e-2, g_cap: int = 10 ** 6) -> dict:
    """Least genus (up to ``g_cap``) with ``lhs/A >= lhs_fraction`` and ``rhs <= rhs_tol``.

    Both quantities are monotone in g on the standard schedules, so a
    doubling search followed by bisection suffices.  When the targets are
    not met by ``g_cap`` the cap is returned with ``met = False``.
    """
    form = _form(target)

    def good(g):
        gf = float(g)
        eta = eta_schedule(schedule, gf, form.eta_cap)
        vol = 2 * math.pi * (2 * gf - 2)
        return (form.lhs(A, C, eta, vol) / A >= lhs_fraction) and (form.rhs(eta, form.R(gf, d)) <= rhs_tol)

    hi = 2
    while not good(hi) and hi < g_cap:
        hi = min(2 * hi, g_cap)
    if not good(hi):
        gf = float(g_cap)
        eta = eta_schedule(schedule, gf, form.eta_cap)
        vol = 2 * math.pi * (2 * gf - 2)
        return {"g_max": int(g_cap), "met": False, "lhs_over_A": float(form.lhs(A, C, eta, vol) / A),
                "rhs": float(form.rhs(eta, form.R(gf, d)))}
    lo = hi // 2 if hi > 2 else 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if good(mid):
            hi = mid
        else:
            lo = mid
    gf = float(hi)
    eta = eta_schedule(schedule, gf, form.eta_cap)
    vol = 2 * math.pi * (2 * gf - 2)
    return {"g_max": int(hi), "met": True, "lhs_over_A": float(form.lhs(A, C, eta, vol) / A),
            "rhs": float(form.rhs(eta, form.R(gf, d)))}


def h4_degree_report(g: int, d: int) -> dict:
    """Degree bookkeeping of the H^4 disc-bundle construction."""
    g, d = _check_gd(g, d)
    if d < 1:
        raise PreconditionError("d must be >= 1")
    c = Fraction(d, 2 * g - 2)
    R = Fraction(d, 2 * g - 2)
    assert c == R and c * (2 * g - 2) == d
    return {"g": g, "d": d, "c": c, "section_degree": 4 * g - 4 - d, "R": R, "provenance": "exact"}
