"""Intrinsic triangle meshes of closed oriented surfaces.

A mesh is a list of oriented triangles over ``n_vertices`` vertices plus one
positive length per edge.  Edges are identified by their vertex pair, so the
mesh must be a simplicial surface (no two edges share both endpoints).
Embedding coordinates are optional and only used for file output and for
building test fields on the flat torus.
"""

from __future__ import annotations

import io
import math
import os
import re
from collections import deque

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..errors import MeshError, MeshFormatError

__all__ = [
    "TriangleMesh",
    "load_mesh",
    "save_mesh",
    "generate",
    "regular_octagon_genus2",
    "flat_torus",
]


class TriangleMesh:
    """Closed oriented triangle mesh with intrinsic edge lengths.

    Parameters
    ----------
    faces : array_like of int, shape (F, 3)
        Vertex triples, consistently oriented.
    edges : array_like of int, shape (E, 2)
        Vertex pairs carrying a length, in any order and orientation.
    lengths : array_like of float, shape (E,)
        Length of each entry of ``edges``.
    n_vertices : int, optional
        Defaults to ``faces.max() + 1``.
    coords : array_like, optional
        Embedding coordinates, kept for output only.
    validate : bool
        Run the manifold, orientation and triangle inequality checks.

    Attributes
    ----------
    edges : ndarray, shape (E, 2)
        Sorted vertex pairs ``u < v``; an edge value is oriented from u to v.
    edge_lengths : ndarray, shape (E,)
    face_edges : ndarray, shape (F, 3)
        ``face_edges[f, c]`` is the edge opposite corner ``c``.
    face_edge_sign : ndarray, shape (F, 3)
        +1 when the face boundary traverses that edge from u to v.
    edge_faces : ndarray, shape (E, 2)
        The two faces adjacent to each edge.
    """

    def __init__(self, faces, edges, lengths, n_vertices=None, coords=None, validate=True):
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        if faces.ndim != 2 or faces.shape[1] != 3 or faces.shape[0] == 0:
            raise MeshError("faces must be a non-empty (F, 3) integer array")
        if faces.min() < 0:
            raise MeshError("negative vertex index in faces")
        if n_vertices is None:
            n_vertices = int(faces.max()) + 1
        if faces.max() >= n_vertices:
            raise MeshError("face references vertex %d >= n_vertices" % faces.max())
        if np.any(faces[:, 0] == faces[:, 1]) or np.any(faces[:, 1] == faces[:, 2]) or np.any(
            faces[:, 0] == faces[:, 2]
        ):
            raise MeshError("face with repeated vertex")
        self.n_vertices = int(n_vertices)
        self.faces = faces
        self.coords = None if coords is None else np.asarray(coords, dtype=float)
        self._build_connectivity()
        self.edge_lengths = self._match_lengths(edges, lengths)
        if validate:
            self.validate()

    # construction helpers
    @classmethod
    def from_coords(cls, coords, faces, validate=True):
        """Mesh whose edge lengths are Euclidean distances between ``coords``."""
        coords = np.asarray(coords, dtype=float)
        faces = np.asarray(faces, dtype=np.int64)
        e = _undirected_edges(faces, len(coords))
        lengths = np.linalg.norm(coords[e[:, 0]] - coords[e[:, 1]], axis=1)
        return cls(faces, e, lengths, n_vertices=len(coords), coords=coords, validate=validate)

    @classmethod
    def from_face_lengths(cls, faces, face_lengths, n_vertices=None, coords=None, validate=True, rtol=1e-9):
        """Mesh from per-corner opposite lengths, checked for consistency across faces."""
        faces = np.asarray(faces, dtype=np.int64)
        face_lengths = np.asarray(face_lengths, dtype=float)
        edges = []
        lengths = []
        for c in range(3):
            edges.append(np.stack([faces[:, (c + 1) % 3], faces[:, (c + 2) % 3]], axis=1))
            lengths.append(face_lengths[:, c])
        edges = np.concatenate(edges)
        lengths = np.concatenate(lengths)
        nv = int(faces.max()) + 1 if n_vertices is None else n_vertices
        key = np.minimum(edges[:, 0], edges[:, 1]) * nv + np.maximum(edges[:, 0], edges[:, 1])
        order = np.argsort(key, kind="stable")
        key_s, len_s = key[order], lengths[order]
        first = np.r_[True, key_s[1:] != key_s[:-1]]
        grp = np.cumsum(first) - 1
        ref = len_s[first][grp]
        if np.any(np.abs(len_s - ref) > rtol * np.abs(ref)):
            raise MeshError("inconsistent lengths for a shared edge")
        return cls(faces, edges[order][first], len_s[first], n_vertices=nv, coords=coords, validate=validate)

    def _build_connectivity(self):
        F, nv = self.faces, self.n_vertices
        tail = np.concatenate([F[:, 1], F[:, 2], F[:, 0]])
        head = np.concatenate([F[:, 2], F[:, 0], F[:, 1]])
        lo = np.minimum(tail, head)
        hi = np.maximum(tail, head)
        key = lo * nv + hi
        uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            bad = uniq[np.argmax(counts > 2)]
            raise MeshError(
                "non-manifold edge (%d, %d) borders %d triangles"
                % (bad // nv, bad % nv, counts.max())
            )
        if np.any(counts < 2):
            bad = uniq[np.argmax(counts < 2)]
            raise MeshError("boundary edge (%d, %d): mesh is not closed" % (bad // nv, bad % nv))
        directed = tail * nv + head
        if np.unique(directed).size != directed.size:
            raise MeshError("inconsistent face orientation (directed edge used twice)")
        nf = F.shape[0]
        self.edges = np.stack([uniq // nv, uniq % nv], axis=1)
        self.face_edges = inverse.reshape(3, nf).T.copy()
        self.face_edge_sign = np.where(tail < head, 1, -1).reshape(3, nf).T.copy()
        ef = np.full((len(uniq), 2), -1, dtype=np.int64)
        fidx = np.tile(np.arange(nf), 3)
        plus = (tail < head)
        ef[inverse[plus], 0] = fidx[plus]
        ef[inverse[~plus], 1] = fidx[~plus]
        self.edge_faces = ef
        self._edge_keys = uniq

    def _match_lengths(self, edges, lengths):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        lengths = np.asarray(lengths, dtype=float).reshape(-1)
        if len(edges) != len(lengths):
            raise MeshError("edges and lengths differ in size")
        nv = self.n_vertices
        key = np.minimum(edges[:, 0], edges[:, 1]) * nv + np.maximum(edges[:, 0], edges[:, 1])
        pos = np.searchsorted(self._edge_keys, key)
        pos = np.clip(pos, 0, len(self._edge_keys) - 1)
        if np.any(self._edge_keys[pos] != key):
            raise MeshError("length given for an edge not in the mesh")
        out = np.full(len(self._edge_keys), np.nan)
        out[pos] = lengths
        if np.any(np.isnan(out)):
            missing = int(np.argmax(np.isnan(out)))
            raise MeshError("missing length for edge (%d, %d)" % tuple(self.edges[missing]))
        return out

    # queries
    @property
    def n_faces(self):
        return self.faces.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def genus(self):
        return (2 - self.euler_characteristic) // 2

    @property
    def face_lengths(self):
        """(F, 3) lengths, column c opposite corner c."""
        return self.edge_lengths[self.face_edges]

    def edge_index(self, u, v):
        """Indices of the edges joining vertex arrays ``u`` and ``v``."""
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        key = np.minimum(u, v) * self.n_vertices + np.maximum(u, v)
        pos = np.searchsorted(self._edge_keys, key)
        pos = np.clip(pos, 0, len(self._edge_keys) - 1)
        if np.any(self._edge_keys[pos] != key):
            raise MeshError("vertex pair is not an edge")
        return pos

    def vertex_adjacency(self, weights=None):
        """Symmetric sparse adjacency with edge lengths (or ``weights``) as entries."""
        w = self.edge_lengths if weights is None else np.asarray(weights, dtype=float)
        e = self.edges
        nv = self.n_vertices
        A = coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
            shape=(nv, nv),
        )
        return A.tocsr()

    def validate(self):
        """Check closedness, single-cycle vertex links, connectivity and triangle inequalities."""
        nv, F = self.n_vertices, self.faces
        used = np.zeros(nv, dtype=bool)
        used[F.ravel()] = True
        if not used.all():
            raise MeshError("vertex %d belongs to no face" % int(np.argmin(used)))
        # corner (f, c) at vertex a with link edge b -> c continues into the face
        # holding the directed edge a -> c, i.e. the twin of c -> a in face f.
        nf = F.shape[0]
        directed_key = np.concatenate([F[:, 1] * nv + F[:, 2], F[:, 2] * nv + F[:, 0], F[:, 0] * nv + F[:, 1]])
        order = np.argsort(directed_key)
        sorted_keys = directed_key[order]
        # half-edge h = c*nf + f runs opposite corner c; corner c of f leaves a = F[f,c]
        nxt = np.empty(3 * nf, dtype=np.int64)
        for c in range(3):
            a = F[:, c]
            cc = F[:, (c + 2) % 3]
            want = a * nv + cc
            pos = order[np.searchsorted(sorted_keys, want)]
            f2 = pos % nf
            c2 = pos // nf  # edge a->cc is opposite corner c2 in face f2, so a is at corner (c2+1)%3
            nxt[c * nf + np.arange(nf)] = ((c2 + 1) % 3) * nf + f2
        corner_vertex = F.T.ravel()
        if np.any(corner_vertex[nxt] != corner_vertex):
            raise MeshError("corner walk left its vertex: inconsistent orientation")
        g = coo_matrix((np.ones(3 * nf), (np.arange(3 * nf), nxt)), shape=(3 * nf, 3 * nf))
        ncyc, _ = connected_components(g, directed=False)
        if ncyc != nv:
            raise MeshError("vertex link is not a single cycle (%d link cycles for %d vertices)" % (ncyc, nv))
        ncomp, _ = connected_components(self.vertex_adjacency(np.ones(self.n_edges)), directed=False)
        if ncomp != 1:
            raise MeshError("mesh has %d connected components" % ncomp)
        L = self.face_lengths
        if not np.all(np.isfinite(L)) or np.any(L <= 0):
            raise MeshError("edge lengths must be positive and finite")
        a, b, c = L[:, 0], L[:, 1], L[:, 2]
        slack = np.minimum(np.minimum(b + c - a, a + c - b), a + b - c)
        if np.any(slack <= 0):
            f = int(np.argmin(slack))
            raise MeshError("triangle inequality fails on face %d" % f)
        if self.euler_characteristic % 2:
            raise MeshError("odd Euler characteristic")

    def __repr__(self):
        return "TriangleMesh(V=%d, E=%d, F=%d, genus=%d)" % (
            self.n_vertices, self.n_edges, self.n_faces, self.genus)


def _undirected_edges(faces, nv):
    tail = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0]])
    head = np.concatenate([faces[:, 2], faces[:, 0], faces[:, 1]])
    key = np.unique(np.minimum(tail, head) * nv + np.maximum(tail, head))
    return np.stack([key // nv, key % nv], axis=1)


# ---------------------------------------------------------------------------
# generators


def flat_torus(n: int) -> TriangleMesh:
    """n x n periodic grid on the unit square, each cell split along its diagonal."""
    if n < 3:
        raise MeshError("flat_torus needs n >= 3")
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00 = i + n * j
    v10 = (i + 1) % n + n * j
    v01 = i + n * ((j + 1) % n)
    v11 = (i + 1) % n + n * ((j + 1) % n)
    faces = np.concatenate([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)])
    h = 1.0 / n
    e = _undirected_edges(faces, n * n)
    du = np.abs(e[:, 0] % n - e[:, 1] % n)
    dv = np.abs(e[:, 0] // n - e[:, 1] // n)
    diag = (np.minimum(du, n - du) == 1) & (np.minimum(dv, n - dv) == 1)
    lengths = np.where(diag, h * math.sqrt(2.0), h)
    coords = np.stack([i * h, j * h], axis=1)
    return TriangleMesh(faces, e, lengths, n_vertices=n * n, coords=coords)


def _hyperboloid(r, th):
    return np.array([math.cosh(r), math.sinh(r) * math.cos(th), math.sinh(r) * math.sin(th)])


def _minkowski(x, y):
    return -x[..., 0] * y[..., 0] + x[..., 1] * y[..., 1] + x[..., 2] * y[..., 2]


def regular_octagon_genus2(n: int) -> TriangleMesh:
    """Genus-2 surface from the regular hyperbolic octagon with opposite sides glued.

    The octagon with interior angles pi/4 is cut into 16 equilateral hyperbolic
    triangles (all angles pi/4): 8 around the centre and 8 around the corners,
    whose apexes are the side midpoints.  Each triangle is refined n times by
    hyperboloid-barycentric subdivision, and all edge lengths are exact
    hyperbolic distances.  The glued surface has V = 8n^2 - 2 vertices.
    """
    if n < 2:
        raise MeshError("regular_octagon_genus2 needs n >= 2 (n = 1 has multi-edges)")
    t8 = math.tan(math.pi / 8)
    r_corner = math.acosh((1.0 / t8) ** 2)
    r_mid = math.acosh(1.0 / t8)
    X = {("O",): _hyperboloid(0.0, 0.0)}
    for k in range(8):
        X[("M", k)] = _hyperboloid(r_mid, 2 * math.pi * k / 8 + math.pi / 8)
        X[("C", k)] = _hyperboloid(r_corner, 2 * math.pi * k / 8)
    coarse = []
    for k in range(8):
        coarse.append([("O",), ("M", k), ("M", (k + 1) % 8)])
        coarse.append([("M", k), ("C", (k + 1) % 8), ("M", (k + 1) % 8)])

    # Side k of the octagon runs C_k -> M_k -> C_{k+1}; it is glued to side k+4
    # with reversed direction, so position p on side k matches 2n - p on side k+4.
    def vclass(lab):
        if lab[0] == "O":
            return ("O",)
        if lab[0] == "C":
            return ("C",)
        return ("M", lab[1] % 4)

    def side_key(side, p):
        if side >= 4:
            side, p = side - 4, 2 * n - p
        if p == 0 or p == 2 * n:
            return ("C",)
        if p == n:
            return ("M", side)
        return ("s", side, p)

    def point_key(t, labels, w):
        nz = [(lab, x) for lab, x in zip(labels, w) if x > 0]
        if len(nz) == 1:
            return vclass(nz[0][0])
        if len(nz) == 3:
            return ("i", t) + tuple(w)
        d = dict(nz)
        cs = [lab for lab in d if lab[0] == "C"]
        ms = [lab for lab in d if lab[0] == "M"]
        if cs and ms:
            c, m = cs[0], ms[0]
            if c[1] == (m[1] + 1) % 8:
                return side_key(m[1], n + d[c])
            return side_key(m[1], d[m])
        a, b = sorted(lab for lab, _ in nz)
        return ("e", a, b, d[a])

    ids = {}
    faces = []
    pts = []
    for t, labels in enumerate(coarse):
        X0, X1, X2 = (X[lab] for lab in labels)

        def vertex(w):
            k = point_key(t, labels, w)
            if k not in ids:
                ids[k] = len(ids)
            p = w[0] * X0 + w[1] * X1 + w[2] * X2
            return ids[k], p / math.sqrt(-_minkowski(p, p))

        for i in range(n):
            for j in range(i + 1):
                tri = [(n - i, i - j, j), (n - i - 1, i + 1 - j, j), (n - i - 1, i - j, j + 1)]
                q = [vertex(w) for w in tri]
                faces.append([x[0] for x in q])
                pts.append([x[1] for x in q])
                if j < i:
                    tri = [(n - i, i - j, j), (n - i - 1, i - j, j + 1), (n - i, i - j - 1, j + 1)]
                    q = [vertex(w) for w in tri]
                    faces.append([x[0] for x in q])
                    pts.append([x[1] for x in q])
    faces = np.array(faces, dtype=np.int64)
    P = np.array(pts)

    def dist(x, y):
        return np.arccosh(np.maximum(-_minkowski(x, y), 1.0))

    L = np.stack([dist(P[:, 1], P[:, 2]), dist(P[:, 2], P[:, 0]), dist(P[:, 0], P[:, 1])], axis=1)
    return TriangleMesh.from_face_lengths(faces, L, n_vertices=len(ids))


GENERATORS = {
    "regular-octagon-genus2": regular_octagon_genus2,
    "flat-torus": flat_torus,
}


def generate(name: str, n: int) -> TriangleMesh:
    """Build a mesh from a named generator."""
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise MeshError("unknown mesh generator %r (known: %s)" % (name, ", ".join(sorted(GENERATORS))))
    return gen(int(n))


# ---------------------------------------------------------------------------
# text formats
#
# OFF-like:                       intrinsic:
#   OFF                             INTRINSIC
#   V F E                           V F E
#   x y [z]      (V lines)          i j k        (F lines)
#   3 i j k      (F lines)          u v length   (E lines)


_GEN_RE = re.compile(r"^\s*([a-z0-9-]+)\((\d+)\)\s*$")


def _tokens(text):
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(line.split())
    return out


def _parse_off(lines):
    if lines and lines[0][0].upper() == "OFF":
        head = lines[0][1:] or None
        body = lines[1:]
        if head is None:
            head, body = body[0], body[1:]
    else:
        head, body = lines[0], lines[1:]
    nv, nf = int(head[0]), int(head[1])
    if len(body) < nv + nf:
        raise MeshFormatError("OFF: expected %d vertex and %d face lines" % (nv, nf))
    coords = np.array([[float(x) for x in row] for row in body[:nv]])
    faces = []
    for row in body[nv:nv + nf]:
        if int(row[0]) != 3 or len(row) < 4:
            raise MeshFormatError("OFF: only triangles are supported")
        faces.append([int(x) for x in row[1:4]])
    return TriangleMesh.from_coords(coords, np.array(faces))


def _parse_intrinsic(lines):
    head = lines[1]
    nv, nf, ne = int(head[0]), int(head[1]), int(head[2])
    body = lines[2:]
    if len(body) < nf + ne:
        raise MeshFormatError("INTRINSIC: expected %d face and %d edge lines" % (nf, ne))
    faces = np.array([[int(x) for x in row[:3]] for row in body[:nf]])
    rows = body[nf:nf + ne]
    edges = np.array([[int(r[0]), int(r[1])] for r in rows])
    lengths = np.array([float(r[2]) for r in rows])
    return TriangleMesh(faces, edges, lengths, n_vertices=nv)


def load_mesh(source, format=None) -> TriangleMesh:
    """Load a mesh from a file path, an open text stream, a text string or a generator spec.

    Parameters
    ----------
    source : str, os.PathLike or file-like
        A path, mesh text, or a generator descriptor like ``"regular-octagon-genus2(8)"``.
    format : {"off", "intrinsic", None}
        Detected from the header when omitted.
    """
    if isinstance(source, str):
        m = _GEN_RE.match(source)
        if m and m.group(1) in GENERATORS:
            return generate(m.group(1), int(m.group(2)))
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, (str, os.PathLike)) and "\n" not in str(source):
        try:
            with open(source, "r") as fh:
                text = fh.read()
        except OSError as exc:
            raise MeshFormatError("cannot read mesh file %s: %s" % (source, exc)) from exc
    else:
        text = str(source)
    lines = _tokens(text)
    if not lines:
        raise MeshFormatError("empty mesh description")
    if format is None:
        format = "intrinsic" if lines[0][0].upper() == "INTRINSIC" else "off"
    try:
        if format == "intrinsic":
            return _parse_intrinsic(lines)
        if format == "off":
            return _parse_off(lines)
    except (ValueError, IndexError) as exc:
        raise MeshFormatError("cannot parse %s mesh: %s" % (format, exc)) from exc
    raise MeshFormatError("unknown mesh format %r" % format)


def save_mesh(mesh: TriangleMesh, dest=None, format="intrinsic"):
    """Write ``mesh`` as text; returns the text when ``dest`` is None."""
    buf = io.StringIO()
    if format == "intrinsic":
        buf.write("INTRINSIC\n%d %d %d\n" % (mesh.n_vertices, mesh.n_faces, mesh.n_edges))
        for f in mesh.faces:
            buf.write("%d %d %d\n" % tuple(f))
        for (u, v), ell in zip(mesh.edges, mesh.edge_lengths):
            buf.write("%d %d %.17g\n" % (u, v, ell))
    elif format == "off":
        if mesh.coords is None:
            raise MeshFormatError("OFF output needs embedding coordinates")
        buf.write("OFF\n%d %d %d\n" % (mesh.n_vertices, mesh.n_faces, mesh.n_edges))
        for x in mesh.coords:
            buf.write(" ".join("%.17g" % c for c in x) + "\n")
        for f in mesh.faces:
            buf.write("3 %d %d %d\n" % tuple(f))
    else:
        raise MeshFormatError("unknown mesh format %r" % format)
    text = buf.getvalue()
    if dest is None:
        return text
    try:
        with open(dest, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise MeshFormatError("cannot write %s: %s" % (dest, exc)) from exc
    return text
