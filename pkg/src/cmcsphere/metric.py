"""Target 3-spheres: the round unit sphere in R^4 and conformal deformations of it.

Orientation convention: ``Vol_y(X, Y, Z) = det[y X Y Z]``, the boundary
orientation of S^3 = dB^4 (outward normal first).  The cross product ``Q`` is
fixed by ``Vol_y(X, Y, Z) = g(Q_y(X, Y), Z)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss


class OutsideNeighborhoodError(ValueError):
    pass


def det4(a, b, c, d) -> np.ndarray:
    """Determinant of the 4x4 matrix with columns a, b, c, d (broadcast over leading axes)."""
    return np.einsum("...i,...i->...", a, cross4(b, c, d))


def cross4(b, c, d) -> np.ndarray:
    """Vector ``n`` with ``det[x b c d] = x . n`` for every x in R^4."""
    b, c, d = np.broadcast_arrays(np.asarray(b, float), np.asarray(c, float), np.asarray(d, float))
    out = np.empty(b.shape)
    rows = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]
    for i, (p, q, r) in enumerate(rows):
        m = (
            b[..., p] * (c[..., q] * d[..., r] - c[..., r] * d[..., q])
            - c[..., p] * (b[..., q] * d[..., r] - b[..., r] * d[..., q])
            + d[..., p] * (b[..., q] * c[..., r] - b[..., r] * c[..., q])
        )
        out[..., i] = m if i % 2 == 0 else -m
    return out


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


class RoundS3:
    """Unit sphere S^3 in R^4 with the standard metric."""

    name = "round"
    ambient_dim = 4
    is_round = True

    def __init__(self, neighborhood_radius: float = 0.1):
        self.neighborhood_radius = float(neighborhood_radius)

    def __repr__(self):
        return f"{type(self).__name__}(neighborhood_radius={self.neighborhood_radius})"

    @property
    def total_volume(self) -> float:
        return 2.0 * np.pi ** 2

    # -- embedding ---------------------------------------------------------
    def project(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.any(r <= self.neighborhood_radius):
            raise OutsideNeighborhoodError(
                f"point outside tubular neighborhood (|v| <= {self.neighborhood_radius})"
            )
        return v / r

    def tangent_projector(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        yh = y / np.linalg.norm(y, axis=-1, keepdims=True)
        return np.eye(4) - yh[..., :, None] * yh[..., None, :]

    def tangent_part(self, y, v) -> np.ndarray:
        """``P_y v`` without forming the matrix; ``y`` must be on the sphere."""
        return v - _dot(y, v)[..., None] * y

    def second_fundamental(self, y, X, Y) -> np.ndarray:
        return -_dot(X, Y)[..., None] * np.asarray(y, float)

    def christoffel(self, y, X, Y) -> np.ndarray:
        """Intrinsic correction added to ``P(Delta u)`` in the tension field (zero here)."""
        return np.zeros(np.broadcast_shapes(np.shape(X), np.shape(Y)))

    # -- metric quantities -------------------------------------------------
    def conformal_factor(self, y) -> np.ndarray:
        """``phi`` with ``g = e^{2 phi} g_round``."""
        return np.zeros(np.shape(y)[:-1])

    def inner(self, y, X, Y) -> np.ndarray:
        return np.exp(2 * self.conformal_factor(y)) * _dot(X, Y)

    def volume_weight(self, y) -> np.ndarray:
        """Density of ``Vol_g`` relative to the round volume form."""
        return np.exp(3 * self.conformal_factor(y))

    def volume_form(self, y, X, Y, Z) -> np.ndarray:
        return self.volume_weight(y) * det4(y, X, Y, Z)

    def cross(self, y, X, Y) -> np.ndarray:
        # det[y X Y Z] = -det[Z y X Y] = -Z . cross4(y, X, Y)
        q0 = -cross4(y, X, Y)
        return np.exp(self.conformal_factor(y))[..., None] * q0

    def curvature(self, y, X, Y, Z, W) -> np.ndarray:
        """``R(X, Y, Z, W) = <X,W><Y,Z> - <X,Z><Y,W>`` (sectional curvature +1)."""
        return _dot(X, W) * _dot(Y, Z) - _dot(X, Z) * _dot(Y, W)

    def ricci(self, y, X) -> np.ndarray:
        return 2.0 * _dot(X, X)

    def integrate(self, f: Callable, n: int = 48) -> float:
        """Integrate ``f(y)`` against the round volume form by product quadrature."""
        y, w = _s3_quadrature(n)
        return float(np.sum(w * f(y)))


def _s3_quadrature(n):
    # hyperspherical coordinates: chi, theta in Gauss-Legendre, azimuth uniform
    x, wx = leggauss(n)
    chi = 0.5 * np.pi * (x + 1)
    wchi = 0.5 * np.pi * wx * np.sin(chi) ** 2
    th = chi.copy()
    wth = 0.5 * np.pi * wx * np.sin(th)
    m = 2 * n
    ph = 2 * np.pi * np.arange(m) / m
    wph = np.full(m, 2 * np.pi / m)
    C, T, P = np.meshgrid(chi, th, ph, indexing="ij")
    W = wchi[:, None, None] * wth[None, :, None] * wph[None, None, :]
    y = np.stack([
        np.sin(C) * np.sin(T) * np.cos(P),
        np.sin(C) * np.sin(T) * np.sin(P),
        np.sin(C) * np.cos(T),
        np.cos(C),
    ], axis=-1)
    return y.reshape(-1, 4), W.ravel()


@dataclass(frozen=True)
class ConformalFactor:
    """Scalar function on R^4 with ambient gradient and Hessian."""

    value: Callable
    gradient: Callable
    hessian: Callable

    @classmethod
    def constant(cls, c: float) -> "ConformalFactor":
        return cls(
            lambda y: np.full(np.shape(y)[:-1], float(c)),
            lambda y: np.zeros(np.shape(y)),
            lambda y: np.zeros(np.shape(y)[:-1] + (4, 4)),
        )

    @classmethod
    def linear(cls, a) -> "ConformalFactor":
        a = np.asarray(a, dtype=float)
        return cls(
            lambda y: np.asarray(y) @ a,
            lambda y: np.broadcast_to(a, np.shape(y)).copy(),
            lambda y: np.zeros(np.shape(y)[:-1] + (4, 4)),
        )


class ConformalRoundS3(RoundS3):
    """``(S^3, e^{2 phi} g_round)`` represented intrinsically on the unit sphere.

    Tangent vectors are still elements of ``T_y S^3 \\subset R^4``; only the
    inner product, volume form, cross product and curvature change.
    """

    name = "conformal_round"
    is_round = False

    def __init__(self, phi: ConformalFactor, neighborhood_radius: float = 0.1, quadrature_order: int = 48):
        super().__init__(neighborhood_radius)
        self.phi = phi
        self._total = super().integrate(lambda y: np.exp(3 * phi.value(y)), quadrature_order)

    @property
    def total_volume(self) -> float:
        return self._total

    def conformal_factor(self, y) -> np.ndarray:
        return np.asarray(self.phi.value(np.asarray(y, float)), dtype=float)

    def _intrinsic_grad(self, y):
        y = np.asarray(y, float)
        return self.tangent_part(y, self.phi.gradient(y))

    def christoffel(self, y, X, Y) -> np.ndarray:
        # Levi-Civita difference tensor of e^{2 phi} g: X dphi(Y) + Y dphi(X) - <X,Y> grad phi
        gp = self._intrinsic_grad(y)
        return (
            np.asarray(X) * _dot(gp, Y)[..., None]
            + np.asarray(Y) * _dot(gp, X)[..., None]
            - _dot(X, Y)[..., None] * gp
        )

    def curvature(self, y, X, Y, Z, W) -> np.ndarray:
        raise NotImplementedError("full curvature tensor is only needed for the round model")

    def ricci(self, y, X) -> np.ndarray:
        y = np.asarray(y, float)
        X = np.asarray(X, float)
        gamb = self.phi.gradient(y)
        hamb = self.phi.hessian(y)
        radial = _dot(gamb, y)
        gp = self.tangent_part(y, gamb)
        # intrinsic Hessian on the unit sphere: D^2 phi(X, X) - <X, X> dphi(y)
        hess_xx = np.einsum("...i,...ij,...j->...", X, hamb, X) - _dot(X, X) * radial
        P = self.tangent_projector(y)
        lap = np.einsum("...ij,...ji->...", P, hamb) - 3.0 * radial
        xx = _dot(X, X)
        return 2.0 * xx - (hess_xx - _dot(gp, X) ** 2) - (lap + _dot(gp, gp)) * xx


def round_s3(neighborhood_radius: float = 0.1) -> RoundS3:
    return RoundS3(neighborhood_radius)


def conformal_round(phi: ConformalFactor, neighborhood_radius: float = 0.1) -> ConformalRoundS3:
    return ConformalRoundS3(phi, neighborhood_radius)


def metric_from_spec(spec: dict):
    """Build a metric from a flat config mapping (``metric``, ``metric_phi_linear``)."""
    name = spec.get("metric", "round")
    radius = float(spec.get("neighborhood_radius", 0.1))
    if name == "round":
        return round_s3(radius)
    if name == "conformal_round":
        a = spec.get("metric_phi_linear")
        if a is None:
            raise KeyError("metric_phi_linear")
        return conformal_round(ConformalFactor.linear(a), radius)
    raise KeyError(f"unknown metric {name!r}")
