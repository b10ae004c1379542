import io
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from curvlab.errors import GenusError, MeshError, MeshFormatError, PreconditionError, SurfaceMismatchError
from curvlab.surface import (
    GeometryConstants, ScalarField, TriangleMesh, cotan_operators, eigenpairs, flat_surface, generate,
    homology_cocycles, is_closed, laplacian, load_mesh, periods, poisson_constant, poisson_factor, save_mesh,
    sobolev_surrogate, spectral_gap, systole, tree_cotree, uniformize, w22_norm,
)
from curvlab.surface.spectral import _surrogate_from

# 2 arccosh(1 + sqrt 2): systole of the regular octagon surface
BOLZA_SYSTOLE = 2 * math.acosh(1 + math.sqrt(2))

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


# meshes and I/O

def test_generators_topology():
    m = generate("regular-octagon-genus2", 3)
    assert m.genus == 2 and m.euler_characteristic == -2
    assert m.n_vertices == 8 * 9 - 2
    t = generate("flat-torus", 5)
    assert t.genus == 1 and t.euler_characteristic == 0


def test_load_generator_string():
    m = load_mesh("regular-octagon-genus2(2)")
    assert m.genus == 2


def test_non_manifold_edge_rejected():
    faces = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4], [2, 3, 4]])
    with pytest.raises(MeshError, match="non-manifold"):
        TriangleMesh.from_coords(np.random.default_rng(0).random((5, 3)), faces)


def test_triangle_inequality_rejected(torus):
    lengths = torus.edge_lengths.copy()
    lengths[0] = 10.0
    with pytest.raises(MeshError):
        TriangleMesh(torus.faces, torus.edges, lengths)


def test_parse_failure():
    with pytest.raises(MeshFormatError):
        load_mesh("INTRINSIC\n3 1 x\n")


def octahedron():
    x = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    f = [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]
    return TriangleMesh.from_coords(x, f)


@pytest.mark.parametrize("make,fmt", [(lambda: generate("regular-octagon-genus2", 3), "intrinsic"),
                                      (lambda: generate("flat-torus", 3), "intrinsic"), (octahedron, "off")])
def test_mesh_roundtrip(make, fmt):
    m = make()
    text = save_mesh(m, format=fmt)
    back = load_mesh(io.StringIO(text))
    assert back.n_vertices == m.n_vertices
    np.testing.assert_array_equal(back.faces, m.faces)
    np.testing.assert_allclose(back.edge_lengths, m.edge_lengths, rtol=1e-15)


# uniformization

def test_uniformize_gauss_bonnet(oct6):
    assert abs(oct6.volume - 4 * math.pi) / (4 * math.pi) <= 1e-3
    assert abs(oct6.volume + 2 * math.pi * oct6.euler_characteristic) <= 1e-11 * 2
    assert np.max(np.abs(oct6.curvature() + 1)) <= 1e-11


def test_uniformize_torus_refused(torus):
    with pytest.raises(GenusError):
        uniformize(torus)


def test_uniformize_rerun_is_fixed_point(oct6):
    again = uniformize(oct6, tol=1e-11)
    assert again.iterations == 0
    assert again.update_norm <= 1e-11


def test_stiffness_conformally_invariant(oct6):
    S0 = cotan_operators(oct6.mesh).stiffness
    assert (S0 != oct6.stiffness).nnz == 0


def test_stiffness_symmetric_kernel(oct6, rng):
    S = oct6.stiffness
    assert abs(S - S.T).max() == 0
    assert np.max(np.abs(S @ np.ones(oct6.n_vertices))) <= 1e-12
    x = rng.standard_normal((oct6.n_vertices, 20))
    assert np.all(np.einsum("ij,ij->j", x, S @ x) >= -1e-12)


# Laplacian

def test_laplacian_constant_zero(oct6):
    assert laplacian(oct6, 3.7).sup_abs() <= 1e-13


def test_laplacian_mean_zero(oct6, rng):
    x = rng.standard_normal(oct6.n_vertices)
    assert abs(oct6.mean(oct6.laplacian(x))) <= 1e-13 * np.abs(x).max()


def test_laplacian_eigenfield(oct6):
    gap = spectral_gap(oct6, k=3)
    for lam, phi in zip(gap.eigenvalues, gap.eigenvectors.T):
        assert np.max(np.abs(oct6.laplacian(phi) + lam * phi)) <= 1e-9 * lam * np.abs(phi).max()


def test_laplacian_flat_torus_sine():
    errs = []
    for n in (8, 16, 32):
        m = generate("flat-torus", n)
        s = flat_surface(m)
        x = m.coords[:, 0]
        f = np.sin(2 * math.pi * x)
        errs.append(np.max(np.abs(s.laplacian(f) + (2 * math.pi) ** 2 * f)))
    # O(h^2) on the structured torus
    assert errs[1] < errs[0] / 3 and errs[2] < errs[1] / 3


def test_laplacian_surface_mismatch(oct6, oct12):
    with pytest.raises(SurfaceMismatchError):
        laplacian(oct6, ScalarField(oct12, np.zeros(oct12.n_vertices)))
    with pytest.raises(PreconditionError):
        laplacian(oct6, np.zeros(oct6.n_vertices + 1))


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_laplacian_self_adjoint(oct6, data):
    a = data.draw(arrays(float, oct6.n_vertices, elements=finite))
    b = data.draw(arrays(float, oct6.n_vertices, elements=finite))
    mu = oct6.mass
    lhs = np.dot(mu * a, oct6.laplacian(b))
    rhs = np.dot(mu * b, oct6.laplacian(a))
    scale = 1 + np.abs(mu * a).sum() * np.abs(oct6.laplacian(b)).max()
    assert abs(lhs - rhs) <= 1e-12 * scale


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_energy_identity(oct6, data):
    v = data.draw(arrays(float, oct6.n_vertices, elements=finite))
    lhs = np.dot(oct6.mass * v, oct6.laplacian(v))
    rhs = -v @ (oct6.stiffness @ v)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(rhs) + np.abs(v).max() ** 2 * oct6.volume)


# spectrum

def test_flat_torus_gap_converges():
    vals = [spectral_gap(flat_surface(generate("flat-torus", n))).value for n in (8, 16, 32)]
    errs = [abs(v - (2 * math.pi) ** 2) for v in vals]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] / (2 * math.pi) ** 2 < 5e-3


def test_poincare_random_fields(oct6, rng):
    lam = spectral_gap(oct6).value
    for _ in range(100):
        v = rng.standard_normal(oct6.n_vertices)
        v -= oct6.mean(v)
        assert oct6.l2(v) ** 2 <= (v @ (oct6.stiffness @ v)) / lam * (1 + 1e-10)


def test_gap_eigsh_matches_dense(oct12):
    # V > 400 uses shift-invert Lanczos; compare with a dense generalized solve
    k = 6
    vals, vecs = eigenpairs(oct12, k)
    dense = scipy.linalg.eigh(oct12.stiffness.toarray(), np.diag(oct12.mass), eigvals_only=True)
    np.testing.assert_allclose(vals, dense[1:k + 1], rtol=1e-10)
    G = vecs.T @ (oct12.mass[:, None] * vecs)
    np.testing.assert_allclose(G, np.eye(k), atol=1e-10)


def test_gap_refinement_converges(oct6, oct12, oct25):
    # frozen regression values; the multiplicity-3 first eigenvalue settles near 3.838
    g6, g12, g25 = (spectral_gap(s).value for s in (oct6, oct12, oct25))
    assert abs(g12 - g25) < abs(g6 - g25)
    assert abs(g25 - 3.83801) < 1e-4
    vals = spectral_gap(oct25, k=3).eigenvalues
    assert np.ptp(vals) < 1e-6 * vals[0]


def test_sobolev_surrogate_basis_invariant(oct6, rng):
    vals, vecs = eigenpairs(oct6, 28)
    base = _surrogate_from(vals, vecs, 20)
    # rotate inside the first (triply degenerate) eigenspace
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    rot = vecs.copy()
    rot[:, :3] = vecs[:, :3] @ Q
    assert abs(_surrogate_from(vals, rot, 20) - base) <= 1e-12 * base


def test_sobolev_surrogate_bounds_eigenfield_ratio(oct6):
    c = sobolev_surrogate(oct6, 20)
    vals, vecs = eigenpairs(oct6, 20)
    for phi in vecs.T:
        assert np.abs(phi).max() / w22_norm(oct6, phi) <= c * (1 + 1e-8)


def test_sobolev_surrogate_refinement_stable(oct6, oct12):
    a, b = sobolev_surrogate(oct6), sobolev_surrogate(oct12)
    assert abs(a - b) / b <= 0.2


def test_surrogate_m_too_large(oct6):
    with pytest.raises(PreconditionError):
        sobolev_surrogate(oct6, oct6.n_vertices)


def test_poisson_constant_formula():
    assert poisson_factor(1.0) == 2.0
    K = GeometryConstants(1.0, 1.0, 4 * math.pi, 1.0)
    assert K.C == 2.0
    assert abs(GeometryConstants(1.0, 1e8, 1.0, 1.0).C - 1.0) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0.01, 10), st.floats(0.01, 10))
def test_poisson_constant_monotone(l1, l2, c1, c2):
    lo, hi = sorted((l1, l2))
    a, b = sorted((c1, c2))
    assert GeometryConstants(1, hi, 1, a).C <= GeometryConstants(1, lo, 1, a).C * (1 + 1e-15)
    assert GeometryConstants(1, lo, 1, a).C <= GeometryConstants(1, lo, 1, b).C * (1 + 1e-15)


def test_constants_positive():
    with pytest.raises(PreconditionError):
        GeometryConstants(0.0, 1.0, 1.0, 1.0)


def test_poisson_constant_modes(oct6):
    K = poisson_constant(oct6, c_sob=1.0)
    assert K.c_sob_mode.startswith("fixed") and K.C == pytest.approx(poisson_factor(K.spectral_gap))
    K = poisson_constant(oct6)
    assert K.c_sob_mode == "empirical(20)" and K.C > 0
    K = poisson_constant(oct6, systole=0.7)
    assert K.systole == 0.7 and K.systole_source == "user"


# topology and systole

def test_tree_cotree_counts(oct6):
    tc = tree_cotree(oct6.mesh)
    m = oct6.mesh
    assert tc.in_tree.sum() == m.n_vertices - 1
    assert tc.in_cotree.sum() == m.n_faces - 1
    assert len(tc.generators) == 2 * m.genus


def test_cocycles_closed_and_dual(oct6):
    tc = tree_cotree(oct6.mesh)
    omega = homology_cocycles(oct6.mesh, tc)
    assert is_closed(oct6.mesh, omega)
    P = periods(oct6.mesh, omega, tc)
    np.testing.assert_array_equal(P, np.eye(4, dtype=np.int64))


def test_systole_override():
    s = uniformize(generate("regular-octagon-genus2", 2))
    est = systole(s, override=0.7)
    assert est.value == 0.7 and est.tag == "user"


def test_systole_above_shortest_edge(oct6):
    from curvlab.surface import conformal_edge_lengths
    est = systole(oct6)
    assert est.tag == "upper_bound"
    assert est.value >= conformal_edge_lengths(oct6).min()


def test_systole_refinement_converges(oct6, oct12):
    # the octagon side geodesics lie in the edge graph, so the estimate tends
    # to the true systole; the conformal-factor error approaches from below
    coarse = uniformize(generate("regular-octagon-genus2", 3))
    errs = [abs(systole(s).value - BOLZA_SYSTOLE) for s in (coarse, oct6, oct12)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 5e-3
