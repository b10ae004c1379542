import math

import numpy as np
import pytest

from curvlab.errors import PreconditionError
from curvlab.h4 import (
    H4, LN2_HALF, h4_hypothesis_values, h4_required_balance, run_fixed_point_h4, solve_gauss_h4,
)
from curvlab.invariants import H4_CRITERION
from curvlab.surface import GeometryConstants

ETA = 0.3


def favorable(surface):
    return GeometryConstants(systole=1.0, spectral_gap=1.0, volume=surface.volume, c_sob=1e-3)


def smooth_datum(surface):
    return 1.0 + 0.1 * np.cos(0.01 * np.arange(surface.n_vertices))


def test_required_balance_and_display():
    assert h4_required_balance(0.3, 0.01) == pytest.approx(8.3 ** 3 * 0.01 / 4.8, rel=1e-15)
    lhs, rhs = h4_hypothesis_values(1.0, 2.0, ETA, 10.0, 0.01)
    assert lhs == pytest.approx(H4_CRITERION.lhs(1.0, 2.0, ETA, 10.0), rel=1e-15)
    assert rhs == pytest.approx(H4_CRITERION.rhs(ETA, 0.01), rel=1e-15)
    assert "(8+eta)^3/(16*eta)" in H4_CRITERION.display


def test_form_constants():
    lo, hi = H4.u_bracket(ETA)
    assert math.exp(2 * lo) == pytest.approx(4 / (4 + ETA), rel=1e-15) and hi == 0.0
    assert H4.rhs_bound(ETA) == ETA / (4 + ETA)
    assert H4.target(0.1) == 0.9


def test_two_paths_agree(oct6):
    f = smooth_datum(oct6)
    a = solve_gauss_h4(oct6, f, ETA, 0.004, path="rescaled")
    b = solve_gauss_h4(oct6, f, ETA, 0.004, path="direct")
    assert abs(a.t - b.t) <= 1e-10 * max(1.0, a.t)
    assert np.max(np.abs(a.u - b.u)) <= 1e-10
    assert a.residual_sup <= 1e-10 and b.residual_sup <= 1e-10
    assert a.t_max == pytest.approx(b.t_max, rel=1e-14)


def test_constant_gauss(oct6):
    c, R = 0.05, 0.004
    sol = solve_gauss_h4(oct6, c, ETA, R)
    assert np.max(np.abs(sol.u - 0.5 * math.log(1 - R))) <= 1e-9
    assert sol.t == pytest.approx(R * (1 - R) ** 2 / c, abs=1e-9)


def test_zero_cases(oct6):
    sol = solve_gauss_h4(oct6, 0.0, ETA, 0.0)
    assert np.all(sol.u == 0.0) and sol.t == 0.0
    with pytest.raises(PreconditionError):
        solve_gauss_h4(oct6, 0.0, ETA, 0.1)
    with pytest.raises(PreconditionError):
        solve_gauss_h4(oct6, 1.0, 0.6, 0.01)
    with pytest.raises(PreconditionError):
        solve_gauss_h4(oct6, 1.0, ETA, 0.01, path="sideways")


def test_balance_window_refused(oct6):
    # bal = 1 but (8+eta)^3 R/(16 eta) > 1 at R = 0.05
    assert h4_required_balance(ETA, 0.05) > 1
    with pytest.raises(PreconditionError):
        solve_gauss_h4(oct6, 0.05, ETA, 0.05)
    sol = solve_gauss_h4(oct6, 0.05, ETA, 0.05, exploratory=True)
    assert abs(sol.achieved - 0.95) <= 1e-10


def test_constant_fixed_point(oct6):
    c, R = 0.05, 0.004
    cert = run_fixed_point_h4(oct6, c, ETA, R, A=1.0, constants=favorable(oct6))
    assert cert.converged and not cert.override_used
    u0 = 0.5 * math.log(1 - R)
    assert np.max(np.abs(cert.u.values - u0)) <= 1e-8
    assert np.max(np.abs(cert.w.values)) <= 1e-8
    assert np.max(np.abs(cert.v.values + u0)) <= 1e-8
    assert abs(cert.t - R * (1 - R) ** 2 / c) <= 1e-8
    assert abs(cert.af_bound - R / (1 - R)) <= 1e-8
    assert cert.identity_error <= 1e-15
    assert cert.U_memberships


def test_generic_fixed_point(oct6):
    f = smooth_datum(oct6)
    A = oct6.mean(f) / f.max()
    cert = run_fixed_point_h4(oct6, f, ETA, 0.004, A=A, constants=favorable(oct6))
    assert cert.converged
    for r in (cert.residual_u, cert.residual_w, cert.residual_uv, cert.residual_v):
        assert r <= 1e-6
    assert cert.identity_error <= 1e-14
    assert cert.af_ok
    d = run_fixed_point_h4(oct6, f, ETA, 0.004, A=A, constants=favorable(oct6), path="direct")
    assert np.max(np.abs(cert.u.values - d.u.values)) <= 1e-8


def test_hypothesis_refused_then_override(oct6):
    with pytest.raises(PreconditionError):
        run_fixed_point_h4(oct6, 0.05, ETA, 0.05, A=1.0, constants=favorable(oct6))
    cert = run_fixed_point_h4(oct6, 0.05, ETA, 0.05, A=1.0, constants=favorable(oct6), override=True)
    assert cert.override_used and cert.summary()["HYPOTHESIS_OVERRIDDEN"]


def test_rescaling_shift():
    assert LN2_HALF == 0.5 * math.log(2.0)
