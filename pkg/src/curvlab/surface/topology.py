"""Tree-cotree decomposition, integral homology cocycles and a systole estimate.

Edge values are oriented from ``edges[e, 0]`` to ``edges[e, 1]`` (smaller to
larger vertex id); traversing an edge backwards negates its value.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, dijkstra

from ..errors import PreconditionError
from .hyperbolic import HyperbolicSurface, conformal_edge_lengths
from .mesh import TriangleMesh

__all__ = [
    "TreeCotree",
    "tree_cotree",
    "homology_cocycles",
    "is_closed",
    "periods",
    "SystoleEstimate",
    "shortest_nontrivial_loop",
    "systole",
]


@dataclass(frozen=True)
class TreeCotree:
    """Spanning tree, dual spanning tree and the 2g leftover generator edges."""

    tree_parent: np.ndarray      # parent vertex in the primal tree, -1 at the root
    tree_parent_edge: np.ndarray  # edge to the parent, -1 at the root
    tree_order: np.ndarray       # vertices in BFS order
    in_tree: np.ndarray          # edge mask
    in_cotree: np.ndarray        # edge mask (dual tree)
    face_order: np.ndarray       # faces in dual BFS order
    face_parent_edge: np.ndarray  # dual-tree edge to the parent face, -1 at the root
    generators: np.ndarray       # leftover edges, 2g of them


def tree_cotree(mesh: TriangleMesh) -> TreeCotree:
    nv, ne = mesh.n_vertices, mesh.n_edges
    adj = mesh.vertex_adjacency(np.ones(ne))
    order, pred = breadth_first_order(adj, 0, directed=False, return_predecessors=True)
    parent = np.where(pred < 0, -1, pred).astype(np.int64)
    parent_edge = np.full(nv, -1, dtype=np.int64)
    child = np.arange(nv)[parent >= 0]
    parent_edge[child] = mesh.edge_index(parent[child], child)
    in_tree = np.zeros(ne, dtype=bool)
    in_tree[parent_edge[child]] = True

    ef = mesh.edge_faces
    fe = mesh.face_edges
    nf = mesh.n_faces
    seen = np.zeros(nf, dtype=bool)
    face_parent_edge = np.full(nf, -1, dtype=np.int64)
    face_order = []
    in_cotree = np.zeros(ne, dtype=bool)
    queue = deque([0])
    seen[0] = True
    while queue:
        f = queue.popleft()
        face_order.append(f)
        for e in fe[f]:
            if in_tree[e] or in_cotree[e]:
                continue
            g = ef[e, 0] if ef[e, 1] == f else ef[e, 1]
            if not seen[g]:
                seen[g] = True
                in_cotree[e] = True
                face_parent_edge[g] = e
                queue.append(g)
    generators = np.flatnonzero(~in_tree & ~in_cotree)
    if len(generators) != 2 * mesh.genus:
        raise PreconditionError("tree-cotree left %d edges for genus %d" % (len(generators), mesh.genus))
    return TreeCotree(parent, parent_edge, order.astype(np.int64), in_tree, in_cotree,
                      np.array(face_order, dtype=np.int64), face_parent_edge, generators)


def homology_cocycles(mesh: TriangleMesh, tc: Optional[TreeCotree] = None) -> np.ndarray:
    """Integer closed cocycles dual to the tree-cotree generators.

    Column j is zero on the primal tree, equals delta_jk on generator k and is
    extended through the dual tree by peeling leaf faces, so the oriented sum
    around every face vanishes.  Returns an (E, 2g) int64 array.
    """
    tc = tree_cotree(mesh) if tc is None else tc
    ne = mesh.n_edges
    ng = len(tc.generators)
    omega = np.zeros((ne, ng), dtype=np.int64)
    omega[tc.generators, np.arange(ng)] = 1
    fe, sg = mesh.face_edges, mesh.face_edge_sign
    for f in tc.face_order[::-1]:
        pe = tc.face_parent_edge[f]
        if pe < 0:
            continue
        total = np.zeros(ng, dtype=np.int64)
        sp = 0
        for c in range(3):
            e = fe[f, c]
            if e == pe:
                sp = sg[f, c]
            else:
                total += sg[f, c] * omega[e]
        omega[pe] = -sp * total
    return omega


def is_closed(mesh: TriangleMesh, omega) -> bool:
    """True when the oriented sum of ``omega`` around every face is zero."""
    omega = np.asarray(omega)
    if omega.ndim == 1:
        omega = omega[:, None]
    tot = np.einsum("fc,fck->fk", mesh.face_edge_sign, omega[mesh.face_edges])
    return bool(np.all(tot == 0))


def periods(mesh: TriangleMesh, omega, tc: Optional[TreeCotree] = None) -> np.ndarray:
    """Values of a closed cocycle on the 2g fundamental cycles of the tree-cotree generators."""
    tc = tree_cotree(mesh) if tc is None else tc
    omega = np.asarray(omega)
    pot = np.zeros((mesh.n_vertices,) + omega.shape[1:], dtype=omega.dtype)
    e = mesh.edges
    for x in tc.tree_order[1:]:
        pe = tc.tree_parent_edge[x]
        sgn = 1 if e[pe, 1] == x else -1
        pot[x] = pot[tc.tree_parent[x]] + sgn * omega[pe]
    g = tc.generators
    return pot[e[g, 0]] + omega[g] - pot[e[g, 1]]


@dataclass(frozen=True)
class SystoleEstimate:
    """Systole value with its provenance tag: ``"user"`` or ``"upper_bound"``."""

    value: float
    tag: str
    roots_used: int = 0
    loop_root: int = -1
    loop_edge: int = -1

    def __float__(self):
        return self.value


def shortest_nontrivial_loop(mesh: TriangleMesh, lengths=None, roots=None, chunk: int = 64):
    """Shortest homologically nontrivial edge loop through the given roots.

    For each root a shortest-path tree is grown; every edge ``(u, v)`` closes
    a loop ``root -> u -> v -> root`` whose integral homology class is read
    off the cocycle basis.  Over all roots this yields the shortest edge loop
    that is nontrivial in H_1(surface; Z).  Returns (length, root, edge).
    """
    lengths = mesh.edge_lengths if lengths is None else np.asarray(lengths, dtype=float)
    nv = mesh.n_vertices
    omega = homology_cocycles(mesh)
    A = mesh.vertex_adjacency(lengths)
    roots = np.arange(nv) if roots is None else np.asarray(roots, dtype=np.int64)
    eu, ev = mesh.edges[:, 0], mesh.edges[:, 1]
    best = (math.inf, -1, -1)
    for start in range(0, len(roots), chunk):
        rs = roots[start:start + chunk]
        D, P = dijkstra(A, directed=False, indices=rs, return_predecessors=True)
        k = len(rs)
        P = P.astype(np.int64)
        anc = np.where(P < 0, rs[:, None], P)
        child = np.broadcast_to(np.arange(nv), (k, nv))
        isroot = P < 0
        # edge ids for (parent, child) pairs; roots keep a zero value
        pairs_u = np.where(isroot, 0, anc)
        pairs_v = np.where(isroot, 0, child)
        H = np.zeros((k, nv, omega.shape[1]), dtype=np.int64)
        nz = ~isroot
        pe = mesh.edge_index(pairs_u[nz], pairs_v[nz])
        sgn = np.where(pairs_u[nz] < pairs_v[nz], 1, -1)
        H[nz] = sgn[:, None] * omega[pe]
        # pointer jumping: H[x] accumulates values from x up to anc[x]
        rows = np.arange(k)[:, None]
        while True:
            done = np.all(anc == rs[:, None])
            if done:
                break
            H = H + H[rows, anc]
            anc = anc[rows, anc]
        cls = H[:, eu, :] + omega[None, :, :] - H[:, ev, :]
        nontrivial = np.any(cls != 0, axis=2)
        cand = np.where(nontrivial, D[:, eu] + lengths[None, :] + D[:, ev], np.inf)
        i, j = np.unravel_index(np.argmin(cand), cand.shape)
        if cand[i, j] < best[0]:
            best = (float(cand[i, j]), int(rs[i]), int(j))
    return best


def systole(surface: HyperbolicSurface, override: Optional[float] = None, max_roots: Optional[int] = 512) -> SystoleEstimate:
    """Systole of ``surface``: the user value when given, else an edge-loop upper bound.

    The estimate is the length, in the conformal metric, of the shortest
    homologically nontrivial loop in the edge graph.  Such a loop is
    noncontractible, so the value bounds the shortest noncontractible edge
    loop from above.  With more than ``max_roots`` vertices an evenly spaced
    subset of roots is used, which can only raise the value.
    """
    if override is None:
        override = surface.systole_override
    if override is not None:
        if not override > 0:
            raise PreconditionError("systole override must be positive")
        return SystoleEstimate(float(override), "user")
    cache = surface._cache.setdefault("systole", {})
    if max_roots in cache:
        return cache[max_roots]
    nv = surface.n_vertices
    if max_roots is None or nv <= max_roots:
        roots = np.arange(nv)
    else:
        roots = np.unique(np.linspace(0, nv - 1, max_roots).round().astype(np.int64))
    val, r, e = shortest_nontrivial_loop(surface.mesh, conformal_edge_lengths(surface), roots)
    est = SystoleEstimate(val, "upper_bound", len(roots), r, e)
    cache[max_roots] = est
    return est
