"""Triangulated unit 2-sphere and its P1 finite element operators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

MAX_LEVEL = 8


class MeshCapacityError(ValueError):
    pass


class MeshAssemblyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SphereMesh:
    """Icosphere domain with cotangent stiffness and lumped mass.

    ``faces`` are counterclockwise when seen from outside.  The mesh is
    immutable; derived sparse factorizations are memoized in ``_cache``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    subdivision_level: int
    vertex_areas: np.ndarray | None = None
    stiffness: sp.csr_matrix | None = None
    mass: sp.csr_matrix | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def edges(self) -> np.ndarray:
        if "edges" not in self._cache:
            self._cache["edges"] = _unique_edges(self.faces)
        return self._cache["edges"]

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_faces

    @property
    def face_areas(self) -> np.ndarray:
        if "face_areas" not in self._cache:
            p = self.vertices[self.faces]
            n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            self._cache["face_areas"] = 0.5 * np.linalg.norm(n, axis=1)
        return self._cache["face_areas"]

    @property
    def face_gradients(self) -> np.ndarray:
        """(F, 3, 3) array: gradient in R^3 of each barycentric hat function on its face."""
        if "face_gradients" not in self._cache:
            self._cache["face_gradients"] = _hat_gradients(self.vertices, self.faces)
        return self._cache["face_gradients"]

    @property
    def face_frames(self) -> np.ndarray:
        """(F, 2, 3) orthonormal in-plane frame (e1, e2) with e1 x e2 along the outward normal."""
        if "face_frames" not in self._cache:
            p = self.vertices[self.faces]
            e1 = p[:, 1] - p[:, 0]
            e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
            n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            e2 = np.cross(n, e1)
            self._cache["face_frames"] = np.stack([e1, e2], axis=1)
        return self._cache["face_frames"]

    @property
    def mean_edge_length(self) -> float:
        e = self.edges
        return float(np.mean(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    @property
    def kdtree(self) -> cKDTree:
        if "kdtree" not in self._cache:
            self._cache["kdtree"] = cKDTree(self.vertices)
        return self._cache["kdtree"]

    def apply_stiffness(self, f: np.ndarray) -> np.ndarray:
        """``S f`` with constants mapped to exactly zero (rows of S sum to zero only up to rounding)."""
        f = np.asarray(f, dtype=float)
        return self.stiffness @ (f - f[0])

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        """Discrete Laplace-Beltrami, ``-M^{-1} S f`` (so coordinate functions map to ``-2 f``)."""
        sf = self.apply_stiffness(f)
        if sf.ndim == 1:
            return -sf / self.vertex_areas
        return -sf / self.vertex_areas[:, None]

    def biharmonic(self) -> sp.csr_matrix:
        """``S^T M^{-1} S``, the mixed discretization of ``f -> int |Delta f|^2``."""
        if "biharmonic" not in self._cache:
            minv = sp.diags(1.0 / self.vertex_areas)
            self._cache["biharmonic"] = (self.stiffness.T @ minv @ self.stiffness).tocsr()
        return self._cache["biharmonic"]


def _unique_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def _hat_gradients(vertices, faces):
    p = vertices[faces]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    dbl = np.linalg.norm(n, axis=1)
    n_hat = n / dbl[:, None]
    grads = np.empty((len(faces), 3, 3))
    for i in range(3):
        # edge opposite vertex i, oriented counterclockwise
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grads[:, i] = np.cross(n_hat, e) / dbl[:, None]
    return grads


def _icosahedron():
    # pole-aligned: vertices at +-e3 so latitude constructions are symmetric
    z = 1.0 / np.sqrt(5.0)
    r = 2.0 / np.sqrt(5.0)
    upper = [(r * np.cos(2 * np.pi * k / 5), r * np.sin(2 * np.pi * k / 5), z) for k in range(5)]
    lower = [(r * np.cos(2 * np.pi * (k + 0.5) / 5), r * np.sin(2 * np.pi * (k + 0.5) / 5), -z) for k in range(5)]
    verts = np.array([(0.0, 0.0, 1.0), *upper, *lower, (0.0, 0.0, -1.0)])
    faces = []
    for k in range(5):
        u0, u1 = 1 + k, 1 + (k + 1) % 5
        l0, l1 = 6 + k, 6 + (k + 1) % 5
        faces += [(0, u0, u1), (u0, l0, u1), (u1, l0, l1), (11, l1, l0)]
    faces = np.array(faces, dtype=np.int64)
    return verts, _orient_outward(verts, faces)


def _orient_outward(verts, faces):
    p = verts[faces]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", n, p.sum(axis=1)) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def _subdivide(verts, faces):
    nv = len(verts)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    es = np.sort(e, axis=1)
    uniq, inv = np.unique(es, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mid = verts[uniq[:, 0]] + verts[uniq[:, 1]]
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    nf = len(faces)
    m01, m12, m20 = (nv + inv[:nf], nv + inv[nf:2 * nf], nv + inv[2 * nf:])
    a, b, c = faces.T
    new_faces = np.concatenate([
        np.stack([a, m01, m20], axis=1),
        np.stack([m01, b, m12], axis=1),
        np.stack([m20, m12, c], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ])
    return np.vstack([verts, mid]), new_faces


def build_icosphere(subdivision_level: int) -> SphereMesh:
    """Subdivided icosahedron reprojected to the unit sphere, with operators assembled.

    Level ``k`` has ``10 * 4**k + 2`` vertices and ``20 * 4**k`` faces.
    """
    level = int(subdivision_level)
    if level < 0:
        raise ValueError("subdivision_level must be nonnegative")
    if level > MAX_LEVEL:
        raise MeshCapacityError(f"subdivision_level {level} exceeds the memory guard ({MAX_LEVEL})")
    verts, faces = _icosahedron()
    for _ in range(level):
        verts, faces = _subdivide(verts, faces)
    verts = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    verts.setflags(write=False)
    faces.setflags(write=False)
    return assemble_operators(SphereMesh(verts, faces, level))


def assemble_operators(mesh: SphereMesh) -> SphereMesh:
    """Return a copy of ``mesh`` with cotangent stiffness and lumped mass filled in.

    ``f @ S @ g`` approximates ``int <grad f, grad g>``; the Laplacian is
    ``-M^{-1} S``.
    """
    verts, faces = mesh.vertices, mesh.faces
    p = verts[faces]
    dbl = np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    bad = np.flatnonzero(dbl <= 1e-14)
    if bad.size:
        i = int(bad[0])
        raise MeshAssemblyError(f"degenerate face {i} with vertices {tuple(int(v) for v in faces[i])}")
    nv = len(verts)
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j, o = (k + 1) % 3, (k + 2) % 3, k
        # cot of the angle at vertex o, opposite edge (i, j)
        u = p[:, i] - p[:, o]
        v = p[:, j] - p[:, o]
        cot = np.einsum("ij,ij->i", u, v) / dbl
        w = 0.5 * cot
        rows += [faces[:, i], faces[:, j], faces[:, i], faces[:, j]]
        cols += [faces[:, j], faces[:, i], faces[:, i], faces[:, j]]
        vals += [-w, -w, w, w]
    stiffness = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nv, nv)
    ).tocsr()
    stiffness.sum_duplicates()
    # exact symmetry: average with the transpose (entries already agree to roundoff)
    stiffness = ((stiffness + stiffness.T) * 0.5).tocsr()
    face_areas = 0.5 * dbl
    vertex_areas = np.bincount(faces.ravel(), weights=np.repeat(face_areas / 3.0, 3), minlength=nv)
    mass = sp.diags(vertex_areas).tocsr()
    vertex_areas.setflags(write=False)
    return SphereMesh(verts, faces, mesh.subdivision_level, vertex_areas, stiffness, mass)


def geodesic_distance(mesh: SphereMesh, center) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    return np.arccos(np.clip(mesh.vertices @ c, -1.0, 1.0))


def local_ball_indices(mesh: SphereMesh, center, radius: float) -> np.ndarray:
    """Indices of vertices within geodesic distance ``radius`` of ``center`` (sorted)."""
    if not 0.0 < radius < np.pi:
        raise ValueError("radius must lie in (0, pi)")
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    chord = 2.0 * np.sin(0.5 * radius)
    idx = np.asarray(mesh.kdtree.query_ball_point(c, chord * (1 + 1e-12) + 1e-15), dtype=np.int64)
    idx.sort()
    d = np.arccos(np.clip(mesh.vertices[idx] @ c, -1.0, 1.0))
    out = idx[d <= radius]
    if out.size == 0:
        # radius below the mesh resolution: the nearest vertex, if it is the center itself
        _, j = mesh.kdtree.query(c)
        if np.isclose(mesh.vertices[j] @ c, 1.0, atol=1e-14, rtol=0):
            out = np.array([j], dtype=np.int64)
    return out


def face_gradient(mesh: SphereMesh, values: np.ndarray) -> np.ndarray:
    """Per-face gradient of a P1 field; ``values`` (V, N) -> (F, N, 3)."""
    g = mesh.face_gradients
    return np.einsum("fkd,fkn->fnd", g, values[mesh.faces])


def dirichlet_density(mesh: SphereMesh, values: np.ndarray) -> np.ndarray:
    """Per-face ``|grad u|^2`` of a P1 field with (V,) or (V, N) values."""
    v = values if values.ndim == 2 else values[:, None]
    return np.sum(face_gradient(mesh, v) ** 2, axis=(1, 2))


def face_to_vertex(mesh: SphereMesh, face_values: np.ndarray) -> np.ndarray:
    """Area-weighted average of a per-face scalar onto vertices."""
    w = np.repeat(mesh.face_areas * face_values / 3.0, 3)
    return np.bincount(mesh.faces.ravel(), weights=w, minlength=mesh.n_vertices) / mesh.vertex_areas


def locate(mesh: SphereMesh, points: np.ndarray, candidates: int = 12):
    """Radially project unit vectors onto the polyhedral mesh.

    Returns ``(face_index, barycentric)`` for each point.
    """
    pts = np.atleast_2d(points)
    if "face_tree" not in mesh._cache:
        cen = mesh.vertices[mesh.faces].mean(axis=1)
        mesh._cache["face_tree"] = cKDTree(cen / np.linalg.norm(cen, axis=1, keepdims=True))
    tree = mesh._cache["face_tree"]
    k = min(candidates, mesh.n_faces)
    _, cand = tree.query(pts, k=k)
    cand = np.atleast_2d(cand)
    p = mesh.vertices[mesh.faces[cand]]  # (P, k, 3, 3)
    # solve x = a l0 + b l1 + c l2 (up to scale) for the ray through the point
    mats = np.swapaxes(p, -1, -2)
    coef = np.linalg.solve(mats, np.broadcast_to(pts[:, None, :], cand.shape + (3,))[..., None])[..., 0]
    s = coef.sum(axis=-1)
    bary = coef / s[..., None]
    score = np.where(s > 0, bary.min(axis=-1), -np.inf)
    best = np.argmax(score, axis=1)
    rows = np.arange(len(pts))
    return cand[rows, best], np.clip(bary[rows, best], 0.0, 1.0)


def interpolate(mesh: SphereMesh, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate the P1 field ``values`` at unit vectors ``points`` via radial projection."""
    f, b = locate(mesh, points)
    b = b / b.sum(axis=1, keepdims=True)
    return np.einsum("pk,pkn->pn", b, values[mesh.faces[f]])
