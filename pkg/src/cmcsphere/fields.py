"""Standard test maps S^2 -> S^3 and random perturbations."""

from __future__ import annotations

import numpy as np
from scipy.stats import special_ortho_group

from .energy import MapField, tangent_project
from .metric import RoundS3


def _wrap(mesh, values, metric):
    return MapField(mesh, values, metric or RoundS3())


def constant_map(mesh, point=(0.0, 0.0, 0.0, 1.0), metric=None) -> MapField:
    p = np.asarray(point, float)
    p = p / np.linalg.norm(p)
    return _wrap(mesh, np.tile(p, (mesh.n_vertices, 1)), metric)


def latitude_map(mesh, c: float, metric=None) -> MapField:
    """``x -> (sqrt(1 - c^2) x, c)``; the equator at c = 0, a pole at c = +-1."""
    s = np.sqrt(max(0.0, 1.0 - c * c))
    v = np.hstack([s * mesh.vertices, np.full((mesh.n_vertices, 1), float(c))])
    return _wrap(mesh, v / np.linalg.norm(v, axis=1, keepdims=True), metric)


def equatorial_map(mesh, metric=None) -> MapField:
    return latitude_map(mesh, 0.0, metric)


def geodesic_sphere(mesh, r: float, metric=None) -> MapField:
    """Distance sphere of radius ``r`` about e4: ``x -> (sin r x, cos r)``."""
    return latitude_map(mesh, np.cos(r), metric)


def stereographic(points, pole=(0.0, 0.0, 1.0)):
    """Complex coordinate of S^2 with ``pole`` at 0, projecting from ``-pole``."""
    pole = np.asarray(pole, float)
    pole = pole / np.linalg.norm(pole)
    e1 = np.cross(pole, [1.0, 0.0, 0.0])
    if np.linalg.norm(e1) < 0.5:
        e1 = np.cross(pole, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(pole, e1)
    x = np.asarray(points, float)
    h = x @ pole
    with np.errstate(divide="ignore", invalid="ignore"):
        return ((x @ e1) + 1j * (x @ e2)) / (1.0 + h), (e1, e2, pole)


def inverse_stereographic(z, frame):
    e1, e2, pole = frame
    a = np.abs(z) ** 2
    inf = ~np.isfinite(z)
    z = np.where(inf, 0.0, z)
    x = (2 * z.real[:, None] * e1 + 2 * z.imag[:, None] * e2 + (1 - a)[:, None] * pole) / (1 + a)[:, None]
    x[inf] = -pole
    return x


def mobius_dilation(points, factor: float, pole=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Conformal diffeomorphism of S^2 acting as ``z -> factor z`` in the chart centred at ``pole``.

    For factor > 1 the neighbourhood of ``pole`` is blown up over most of the sphere.
    """
    z, frame = stereographic(points, pole)
    return inverse_stereographic(factor * z, frame)


def bubble_map(mesh, factor: float = 50.0, pole=(0.0, 0.0, 1.0), metric=None) -> MapField:
    """Equator precomposed with a Mobius dilation: energy ``4 pi`` concentrating at ``pole``."""
    x = mobius_dilation(mesh.vertices, factor, pole)
    return _wrap(mesh, np.hstack([x, np.zeros((mesh.n_vertices, 1))]), metric)


def anisotropic_map(mesh, scales=(1.0, 0.5, 0.25), metric=None) -> MapField:
    """Stretched (non-conformal) embedding of S^2 in the equatorial S^2."""
    x = mesh.vertices * np.asarray(scales, float)
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    return _wrap(mesh, np.hstack([x, np.zeros((mesh.n_vertices, 1))]), metric)


def random_rotation(rng) -> np.ndarray:
    return special_ortho_group.rvs(4, random_state=rng)


def rotate(u: MapField, R: np.ndarray) -> MapField:
    return MapField(u.mesh, u.metric.project(u.values @ np.asarray(R).T), u.metric)


def smooth_field(mesh, rng, degree: int = 3, dim: int = 4) -> np.ndarray:
    """Random polynomial field of low degree in the vertex coordinates, shape (V, dim)."""
    x = mesh.vertices
    cols = [np.ones(len(x))]
    for d in range(1, degree + 1):
        for i in range(3):
            cols.append(x[:, i] ** d)
        if d >= 2:
            cols.extend([x[:, 0] * x[:, 1], x[:, 1] * x[:, 2], x[:, 0] * x[:, 2]])
    B = np.stack(cols, axis=1)
    return B @ rng.standard_normal((B.shape[1], dim)) / np.sqrt(B.shape[1])


def random_tangent(u: MapField, rng, smooth: bool = True, scale: float = 1.0) -> np.ndarray:
    v = smooth_field(u.mesh, rng) if smooth else rng.standard_normal(u.values.shape)
    t = tangent_project(u, v)
    return scale * t / max(np.sqrt(np.mean(np.sum(t * t, axis=1))), 1e-300)


def random_map(mesh, rng, amplitude: float = 0.5, base: MapField | None = None, metric=None) -> MapField:
    """Smooth random perturbation of ``base`` (default: a random rotation of the equator)."""
    if base is None:
        base = rotate(equatorial_map(mesh, metric), random_rotation(rng))
    return base.moved(amplitude * random_tangent(base, rng))
