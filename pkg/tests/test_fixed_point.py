import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvlab.errors import PreconditionError
from curvlab.fixed_point import (
    PU21, FixedPointProblem, af_certificate, check_hypothesis, exponential_identity, hypothesis_values, phi1, phi2,
    phi3, run_fixed_point,
)
from curvlab.sections import build_section_norm
from curvlab.surface import GeometryConstants, ScalarField, poisson_constant


def favorable(surface, c_sob=1e-3):
    return GeometryConstants(systole=1.0, spectral_gap=1.0, volume=surface.volume, c_sob=c_sob)


@pytest.fixture(scope="module")
def section_f(oct6):
    return build_section_norm(oct6, [0]).f.values


# hypothesis arithmetic

def test_hypothesis_values_example():
    lhs, rhs = hypothesis_values(1.0, 1.0, 0.1, 4 * math.pi, 0.01)
    # frozen from 40-digit evaluation of the two sides
    assert lhs == pytest.approx(0.36318941661842403, rel=1e-14)
    assert rhs == pytest.approx(0.46305, rel=1e-14)
    assert lhs < rhs


def test_hypothesis_monotone_in_A_and_R():
    a = hypothesis_values(0.5, 1.0, 0.3, 10.0, 0.01)
    b = hypothesis_values(1.0, 1.0, 0.3, 10.0, 0.01)
    c = hypothesis_values(1.0, 1.0, 0.3, 10.0, 0.02)
    assert b[0] == 2 * a[0] and b[1] == a[1]
    assert c[1] == pytest.approx(2 * b[1], rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 10.0), st.floats(1e-3, 0.999), st.floats(1.0, 1e4))
def test_exponential_identity(C, eta, vol):
    a, b = exponential_identity(C, eta, vol)
    E = 12 * C * eta * math.sqrt(vol) / (2 * (2 + eta))
    assert a == b or abs(a - b) <= 4 * np.finfo(float).eps * max(1.0, E) * b


def test_radius_formula():
    assert PU21.radius(1.0, 0.5, 4.0) == pytest.approx(3 * 0.5 * 2.0 / (2 * 2.5), rel=1e-15)


def test_problem_validation(oct6):
    K = favorable(oct6)
    with pytest.raises(PreconditionError):
        FixedPointProblem(oct6, 1.0, 0.5, 0.6, 1.0, K)
    with pytest.raises(PreconditionError):
        FixedPointProblem(oct6, 1.0, 0.5, 0.01, 0.0, K)


# the three maps

def test_phi_maps_constant(oct6):
    R, c = 0.05, 0.02
    u, t = phi1(oct6, c, 0.5, R)
    assert np.max(np.abs(u.values - 0.5 * math.log(0.5 - R))) <= 1e-9
    assert t == pytest.approx(2 * R * (0.5 - R) ** 2 / c, abs=1e-8)
    v = phi2(oct6, u, R)
    assert np.max(np.abs(v.values)) <= 1e-9
    fhat = phi3(v, np.full(oct6.n_vertices, c))
    assert np.max(np.abs(fhat.values - c)) <= 1e-9


def test_phi1_refuses_outside_U1(oct6):
    f = np.zeros(oct6.n_vertices)
    f[0] = 1.0
    with pytest.raises(PreconditionError):
        phi1(oct6, f, 0.5, 0.05)
    with pytest.raises(PreconditionError):
        phi1(oct6, 0.0, 0.5, 0.05)


def test_phi2_refuses_wrong_volume(oct6):
    with pytest.raises(PreconditionError):
        phi2(oct6, np.full(oct6.n_vertices, -0.4), 0.05)


def test_phi3_balance_estimate(oct6, rng):
    for _ in range(5):
        v = rng.standard_normal(oct6.n_vertices) * 0.3
        v -= oct6.mean(v)
        f = rng.uniform(0.1, 1.0, oct6.n_vertices)
        fhat = phi3(ScalarField(oct6, v), f)
        assert np.all(fhat.values > 0)
    v = ScalarField(oct6, np.full(oct6.n_vertices, 0.2))
    with pytest.raises(PreconditionError):
        phi3(v, np.ones(oct6.n_vertices), radius=0.1)


# full iteration

def test_constant_case_fixed_point(oct6):
    c, R, eta = 0.02, 0.05, 0.5
    prob = FixedPointProblem(oct6, c, eta, R, 1.0, favorable(oct6))
    cert = run_fixed_point(prob)
    assert cert.converged and cert.iterations <= 2
    assert np.max(np.abs(cert.u.values - 0.5 * math.log(0.5 - R))) <= 1e-8
    assert np.max(np.abs(cert.v.values)) <= 1e-8
    assert abs(cert.t - 2 * R * (0.5 - R) ** 2 / c) <= 1e-8
    assert abs(cert.af_bound - 2 * R / (0.5 - R)) <= 1e-8
    assert cert.U1 and cert.U2 and cert.U3 and cert.well_defined
    assert not cert.override_used


@pytest.mark.parametrize("R,below", [(0.09, True), (0.11, False)])
def test_constant_case_af_crossing(oct6, R, below):
    # 2R/(1/2-R) = eta exactly at R = eta/(2(2+eta)) = 0.1
    eta = 0.5
    prob = FixedPointProblem(oct6, 0.02, eta, R, 1.0, favorable(oct6))
    with pytest.raises(PreconditionError):
        run_fixed_point(prob)
    cert = run_fixed_point(prob, override=True)
    assert cert.override_used and cert.summary()["HYPOTHESIS_OVERRIDDEN"]
    assert abs(cert.af_bound - 2 * R / (0.5 - R)) <= 1e-8
    assert cert.af_ok is below


def test_section_norm_fixed_point(oct6, section_f):
    K = poisson_constant(oct6)
    f = section_f
    A = oct6.mean(f) / f.max()
    prob = FixedPointProblem(oct6, f, 0.5, 0.005, A, K)
    hyp = check_hypothesis(prob)
    cert = run_fixed_point(prob, override=not hyp.ok)
    assert cert.converged
    assert cert.residual_u <= 1e-6 and cert.residual_v <= 1e-6
    assert cert.U1 and cert.U2 and cert.U3
    assert cert.af_ok
    assert cert.fixed_point_error <= 1e-7
    rep = af_certificate(oct6, cert.u, cert.v, cert.t, f, 0.5)
    assert rep["pass"]
    assert rep["R"] == pytest.approx(0.005, abs=1e-9)


def test_damping_reaches_same_fixed_point(oct6, section_f):
    K = favorable(oct6)
    A = oct6.mean(section_f) / section_f.max()
    prob = FixedPointProblem(oct6, section_f, 0.5, 0.005, A, K)
    a = run_fixed_point(prob)
    b = run_fixed_point(prob, damping=0.5)
    assert np.max(np.abs(a.u.values - b.u.values)) <= 1e-6
    assert b.iterations >= a.iterations


def test_af_certificate_zero_data(oct6):
    u = np.full(oct6.n_vertices, -0.5 * math.log(2))
    rep = af_certificate(oct6, u, 0.0, 0.0, 0.0, 0.5)
    assert rep["pass"] and rep["af_bound"] == 0.0
    assert rep["R"] == pytest.approx(0.0, abs=1e-15)
    assert rep["residual_u"] <= 1e-12 and rep["residual_v"] <= 1e-12


def test_af_certificate_rejects_large_eta(oct6):
    u = np.full(oct6.n_vertices, -0.5 * math.log(2))
    assert not af_certificate(oct6, u, 0.0, 0.0, 0.0, 1.0)["pass"]
