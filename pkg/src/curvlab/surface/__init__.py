"""Discretized closed surfaces: meshes, uniformization, spectra and topology."""

from .mesh import TriangleMesh, load_mesh, save_mesh, generate, regular_octagon_genus2, flat_torus
from .fields import ScalarField, field_values
from .hyperbolic import (
    HyperbolicSurface, uniformize, laplacian, cotan_operators, conformal_edge_lengths, flat_surface,
)
from .spectral import (
    SpectralGap, GeometryConstants, eigenpairs, spectral_gap, poisson_factor, sobolev_surrogate,
    w22_norm, poisson_constant,
)
from .topology import (
    TreeCotree, tree_cotree, homology_cocycles, is_closed, periods, SystoleEstimate,
    shortest_nontrivial_loop, systole,
)
