import math
import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvlab.errors import PreconditionError
from curvlab.fixed_point import hypothesis_values
from curvlab.h4 import h4_hypothesis_values
from curvlab.invariants import (
    CRITERIA, H4_CRITERION, PU21_CRITERION, af_window_table, asymptotic_genus, criterion_scan, eta_schedule,
    h4_degree_report, toledo,
)


def test_toledo_examples():
    a = toledo(2, 1)
    assert a.tol == Fraction(-4, 3) and not a.liftable
    b = toledo(3, 3)
    assert b.tol == Fraction(-2) and b.liftable
    assert a.as_dict()["tol"] == "-4/3"


def test_window_table_independent():
    # below-window: 2 - 2g + 2d/3 < (4 - 4g)/3  <=>  d < g - 1
    # stability: 0 < 3g - 3 - d < 3g - 3     <=>  0 < d < 3g - 3
    for row in af_window_table(range(2, 11)):
        g = row["g"]
        expect = [d for d in range(0, 6 * g) if d < g - 1 and 0 < d < 3 * g - 3]
        assert row["d"] == expect
    row5 = af_window_table([5])[0]
    assert row5["tol"] == [Fraction(-22, 3), Fraction(-20, 3), Fraction(-6)]


@settings(max_examples=1000, deadline=None)
@given(st.integers(2, 10 ** 6), st.integers(0, 6 * 10 ** 6))
def test_toledo_identity(g, d):
    r = toledo(g, d)
    assert r.tol == Fraction(-2, 3) * (3 * g - 3 - d)
    assert r.liftable == (d % 3 == 0)


def test_toledo_validation():
    for g, d in ((1, 0), (2.5, 1), (3, -1)):
        with pytest.raises(PreconditionError):
            toledo(g, d)


def test_milnor_wood_flag():
    assert toledo(2, 0).milnor_wood
    assert not toledo(2, 13).milnor_wood


def test_schedules():
    assert eta_schedule("g^-3/4", 16) == pytest.approx(0.125, rel=1e-15)
    assert eta_schedule("g^-3/4", 2) == pytest.approx(2 ** -0.75)
    assert np.all(np.diff(eta_schedule("g^-2/3", np.arange(2, 100))) < 0)
    with pytest.raises(PreconditionError):
        eta_schedule("g^-1", 4)
    with pytest.raises(PreconditionError):
        eta_schedule("g^-3/4", 1)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.01, 3.0), st.floats(0.01, 0.98), st.floats(1.0, 1e5), st.floats(1e-5, 0.4))
def test_criterion_forms_match_hypotheses(A, C, eta, vol, R):
    lhs, rhs = hypothesis_values(A, C, eta, vol, R)
    assert PU21_CRITERION.lhs(A, C, eta, vol) == pytest.approx(lhs, rel=1e-13)
    assert PU21_CRITERION.rhs(eta, R) == pytest.approx(rhs, rel=1e-13)
    e4 = min(eta, 0.49)
    lhs4, rhs4 = h4_hypothesis_values(A, C, e4, vol, R)
    assert H4_CRITERION.lhs(A, C, e4, vol) == pytest.approx(lhs4, rel=1e-13)
    assert H4_CRITERION.rhs(e4, R) == pytest.approx(rhs4, rel=1e-13)


def test_display_strings():
    assert "(2+eta)^3*R/(2*eta)" in PU21_CRITERION.display
    assert "(8+eta)^3/(16*eta)" in H4_CRITERION.display
    assert set(CRITERIA) == {"PU21", "H4"}


def test_scan_g0_and_rows():
    sc = criterion_scan("PU21", 1.0, 1.0, 1, g_max=2000)
    assert sc.g0 == 726
    assert sc.passed[sc.g0 - 2:].all() and not sc.passed[sc.g0 - 3]
    rows = list(sc.rows())
    assert rows[0]["g"] == 2 and len(rows) == 1999
    assert sc.summary()["g0_note"] == "verified up to g_max"
    assert criterion_scan("PU21", 1.0, 1.0, 1, g_max=500).g0 is None


def test_scan_g0_nondecreasing_in_d():
    g0 = [criterion_scan("PU21", 1.0, 1.0, d, g_max=20000).g0 for d in range(1, 6)]
    assert g0 == [726, 1940, 3729, 6173, 9364]


def test_scan_monotone_in_A():
    a = criterion_scan("PU21", 1.0, 1.0, 1, g_max=5000).g0
    b = criterion_scan("PU21", 2.0, 1.0, 1, g_max=5000).g0
    assert b <= a


def test_scan_target_aliases_and_validation():
    assert criterion_scan("pu(2,1)", 1.0, 1.0, 1, g_max=10).target == "PU21"
    for kw in ({"A": 0.0}, {"d": 0}, {"g_max": 1}):
        args = {"A": 1.0, "C": 1.0, "d": 1, "g_max": 10}
        args.update(kw)
        with pytest.raises(PreconditionError):
            criterion_scan("PU21", **args)
    with pytest.raises(PreconditionError):
        criterion_scan("SO(4,1)", 1.0, 1.0, 1)


def test_h4_scan():
    sc = criterion_scan("H4", 1.0, 1.0, 1, g_max=200000)
    assert sc.g0 == 136984
    i = 1000
    eta, R = sc.eta[i], sc.R[i]
    assert sc.rhs[i] == pytest.approx((8 + eta) ** 3 / (16 * eta) * R, rel=1e-15)
    assert R == pytest.approx(1 / (2 * sc.g[i] - 2), rel=1e-15)


def test_asymptotic_genus():
    t0 = time.perf_counter()
    rep = asymptotic_genus("PU21", 1.0, 1.0, 1, g_cap=10 ** 6)
    assert time.perf_counter() - t0 < 5
    assert not rep["met"] and rep["g_max"] == 10 ** 6
    far = asymptotic_genus("PU21", 1.0, 1.0, 1, g_cap=10 ** 13)
    assert far["met"]
    assert far["lhs_over_A"] >= 0.99 and far["rhs"] <= 1e-2
    assert 1e12 < far["g_max"] < 2e12


def test_h4_degree_report():
    rep = h4_degree_report(5, 3)
    assert rep["c"] == Fraction(3, 8) == rep["R"]
    assert rep["section_degree"] == 13
    with pytest.raises(PreconditionError):
        h4_degree_report(5, 0)
