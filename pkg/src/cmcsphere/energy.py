"""Discrete perturbed energy ``E = D_eps(u) + H V`` and its variations.

Maps are per-vertex points of S^3 in R^4, interpolated linearly on each face
and then radially projected, so every discrete map is a genuine continuous
map S^2 -> S^3.  The enclosed volume is the integral of the pulled-back form
``det[w, dw, dw, dw] / |w|^4`` (which equals ``Pi^* Vol``) over straight
homotopies of the unprojected interpolants; it is only ever tracked as a
running sum of increments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import mesh as _mesh
from .metric import RoundS3, cross4, det4
from .quadrature import gauss_unit_interval, triangle_rule

DELTA0 = 0.5


class LocalityError(ValueError):
    """Two maps are too far apart for the straight homotopy volume to be defined."""


class NonCriticalWarning(UserWarning):
    pass


class UnsupportedMetricError(NotImplementedError):
    pass


@dataclass(frozen=True, eq=False)
class MapField:
    mesh: _mesh.SphereMesh
    values: np.ndarray
    metric: RoundS3 = field(default_factory=RoundS3)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_vertices, self.metric.ambient_dim):
            raise ValueError(f"values have shape {v.shape}, expected ({self.mesh.n_vertices}, 4)")
        dev = np.max(np.abs(np.linalg.norm(v, axis=1) - 1.0))
        if dev > 1e-10:
            raise ValueError(f"map leaves the target sphere (max ||u|-1| = {dev:.2e})")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_ambient(cls, mesh, values, metric=None) -> "MapField":
        """Project arbitrary ambient values onto the target and wrap them."""
        metric = metric or RoundS3()
        return cls(mesh, metric.project(values), metric)

    def moved(self, step: np.ndarray) -> "MapField":
        """``Pi(u + step)``."""
        return MapField(self.mesh, self.metric.project(self.values + step), self.metric)

    @property
    def is_constant(self) -> bool:
        return bool(np.ptp(self.values, axis=0).max() < 1e-14)


@dataclass(frozen=True, eq=False)
class TangentField:
    mesh: _mesh.SphereMesh
    vectors: np.ndarray
    noncritical: bool = False

    def check_tangent(self, base: MapField, tol: float = 1e-10) -> bool:
        n = np.einsum("ij,ij->i", self.vectors, base.values)
        scale = max(1.0, float(np.max(np.linalg.norm(self.vectors, axis=1))))
        return bool(np.max(np.abs(n)) <= tol * scale)


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    biharmonic_part: float
    d_eps: float
    tracked_volume: float
    total: float
    H: float
    eps: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _require_round(u: MapField, what: str):
    if not u.metric.is_round:
        raise UnsupportedMetricError(f"{what} is implemented for the round target only")


def tangent_project(u: MapField, v: np.ndarray) -> np.ndarray:
    return v - np.einsum("ij,ij->i", v, u.values)[:, None] * u.values


# -- Dirichlet part ------------------------------------------------------

def stiffness_operator(mesh, eps: float) -> sp.csr_matrix:
    """``S + eps^2 S M^{-1} S``, the Hessian of ``D_eps`` on ambient values."""
    key = ("K", float(eps))
    if key not in mesh._cache:
        K = mesh.stiffness if eps == 0 else mesh.stiffness + eps ** 2 * mesh.biharmonic()
        mesh._cache[key] = K.tocsr()
    return mesh._cache[key]


def dirichlet(u: MapField) -> float:
    """``D(u) = 1/2 int |grad u|^2`` of the linear interpolant."""
    v = u.values - u.values[0]
    return 0.5 * float(np.sum(v * (u.mesh.stiffness @ v)))


def biharmonic_part(u: MapField, eps: float) -> float:
    if eps == 0:
        return 0.0
    su = u.mesh.apply_stiffness(u.values)
    return 0.5 * eps ** 2 * float(np.sum(su * su / u.mesh.vertex_areas[:, None]))


def perturbed_energy(u: MapField, eps: float) -> float:
    """``D_eps(u) = D(u) + 1/2 eps^2 int |Delta u|^2`` with the mixed Laplacian."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return dirichlet(u) + biharmonic_part(u, eps)


# -- volume --------------------------------------------------------------

def _face_values(mesh, values):
    f = values[mesh.faces]
    return f[:, 0], f[:, 1], f[:, 2]


def _volume_density(metric, a, b, c, disp, lam, wts):
    """``sum_q w_q det[w_q, X_q, B, C] rho / |w_q|^4`` per face, for displacement field X."""
    B, C = b - a, c - a
    out = 0.0
    for l, wq in zip(lam, wts):
        w = l[0] * a + l[1] * b + l[2] * c
        x = l[0] * disp[0] + l[1] * disp[1] + l[2] * disp[2]
        r2 = np.einsum("ij,ij->i", w, w)
        d = det4(w, x, B, C) / (r2 * r2)
        if not metric.is_round:
            d = d * metric.volume_weight(w / np.sqrt(r2)[:, None])
        out = out + wq * d
    return 0.5 * out


def volume_increment(u0: MapField, u1: MapField, s_points: int = 4, delta0: float = DELTA0,
                     rule: str = "degree5") -> float:
    """Signed volume swept by ``s -> Pi((1 - s) u0 + s u1)``.

    Raises ``LocalityError`` when some vertex moves by ``delta0`` or more.
    """
    if u0.mesh is not u1.mesh:
        raise ValueError("maps live on different meshes")
    x0, x1 = u0.values, u1.values
    step = np.max(np.linalg.norm(x1 - x0, axis=1))
    if step >= delta0:
        raise LocalityError(f"maps differ by {step:.3f} >= delta0 = {delta0}; subdivide the step")
    if step == 0.0:
        return 0.0
    mesh = u0.mesh
    lam, wts = triangle_rule(rule)
    s, ws = gauss_unit_interval(s_points)
    disp = _face_values(mesh, x1 - x0)
    total = 0.0
    for sk, wk in zip(s, ws):
        a, b, c = _face_values(mesh, (1 - sk) * x0 + sk * x1)
        total += wk * float(np.sum(_volume_density(u0.metric, a, b, c, disp, lam, wts)))
    return total


def volume_along(path, **kw) -> float:
    """Accumulate increments along a list of maps, subdividing long steps."""
    total = 0.0
    for u0, u1 in zip(path[:-1], path[1:]):
        total += volume_increment_subdivided(u0, u1, **kw)
    return total


def volume_increment_subdivided(u0: MapField, u1: MapField, delta0: float = DELTA0, **kw) -> float:
    step = np.max(np.linalg.norm(u1.values - u0.values, axis=1))
    n = max(1, int(np.ceil(step / (0.5 * delta0))))
    if n == 1:
        return volume_increment(u0, u1, delta0=delta0, **kw)
    pts = [u0]
    for k in range(1, n):
        t = k / n
        pts.append(MapField(u0.mesh, u0.metric.project((1 - t) * u0.values + t * u1.values), u0.metric))
    pts.append(u1)
    return sum(volume_increment(p, q, delta0=delta0, **kw) for p, q in zip(pts[:-1], pts[1:]))


def volume_cofield(u: MapField, rule: str = "degree5") -> np.ndarray:
    """Ambient cofield ``g`` with ``g . psi = d/dt V(Pi(u + t psi))`` at t = 0.

    Divided by vertex areas and projected, it is the discrete ``*(u^* Q)``.
    """
    mesh = u.mesh
    lam, wts = triangle_rule(rule)
    a, b, c = _face_values(mesh, u.values)
    B, C = b - a, c - a
    cof = np.zeros((mesh.n_faces, 3, 4))
    for l, wq in zip(lam, wts):
        w = l[0] * a + l[1] * b + l[2] * c
        r2 = np.einsum("ij,ij->i", w, w)
        # det[w, X, B, C] = -X . cross4(w, B, C)
        n = -cross4(w, B, C) / (r2 * r2)[:, None]
        if not u.metric.is_round:
            n *= u.metric.volume_weight(w / np.sqrt(r2)[:, None])[:, None]
        cof += 0.5 * wq * l[None, :, None] * n[:, None, :]
    out = np.zeros((mesh.n_vertices, 4))
    np.add.at(out, mesh.faces, cof)
    return out


def _volume_face_hessian(u: MapField, rule: str = "degree5") -> np.ndarray:
    """Per-face second derivative blocks of the volume, shape (F, 3, 4, 3, 4), symmetrized."""
    mesh = u.mesh
    lam, wts = triangle_rule(rule)
    a, b, c = _face_values(mesh, u.values)
    B, C = b - a, c - a
    F = mesh.n_faces
    eye = np.eye(4)
    dB = np.array([-1.0, 1.0, 0.0])
    dC = np.array([-1.0, 0.0, 1.0])
    T1 = np.stack([cross4(eye[k], B, C) for k in range(4)], axis=1)  # (F, k, 4)
    J = np.zeros((F, 3, 4, 3, 4))
    for l, wq in zip(lam, wts):
        w = l[0] * a + l[1] * b + l[2] * c
        r2 = np.einsum("ij,ij->i", w, w)
        r4 = (r2 * r2)[:, None, None]
        n0 = cross4(w, B, C)
        T2 = np.stack([cross4(w, eye[k], C) for k in range(4)], axis=1)
        T3 = np.stack([cross4(w, B, eye[k]) for k in range(4)], axis=1)
        # dn[j, k] for a unit perturbation of vertex j, component k; n = -cross4(w,B,C)/|w|^4
        radial = 4.0 * w[:, :, None] * n0[:, None, :] / (r2 * r2 * r2)[:, None, None]  # (F, k, 4)
        dn = np.empty((F, 3, 4, 4))
        for j in range(3):
            dn[:, j] = -(l[j] * T1 + dB[j] * T2 + dC[j] * T3) / r4 + l[j] * radial
        # J[f, i, c, j, k] = 1/2 w_q lam_i dn[f, j, k, c]
        J += 0.5 * wq * l[None, :, None, None, None] * np.transpose(dn, (0, 3, 1, 2))[:, None]
    return 0.5 * (J + J.transpose(0, 3, 4, 1, 2))


# -- tracked energy and variations ---------------------------------------

def tracked_energy(u: MapField, tracked_volume: float, H: float, eps: float) -> EnergyBreakdown:
    d = dirichlet(u)
    bh = biharmonic_part(u, eps)
    de = d + bh
    return EnergyBreakdown(d, bh, de, float(tracked_volume), de + H * float(tracked_volume), float(H), float(eps))


@dataclass(frozen=True, eq=False)
class Gradient:
    ambient: np.ndarray
    tangent: TangentField

    @property
    def l2_norm(self) -> float:
        """Mass-weighted L^2 norm of the pointwise gradient ``P(G) / m``."""
        t = self.tangent.vectors
        return float(np.sqrt(np.sum(t * t / self.tangent.mesh.vertex_areas[:, None])))


def gradient(u: MapField, H: float, eps: float) -> Gradient:
    """Discrete first variation.

    ``ambient`` is the cofield ``(S + eps^2 S M^-1 S) u + H g_V``; ``tangent`` is
    its projection ``P_u``, i.e. the functional ``delta E(u) o P_u``.
    """
    _require_round(u, "gradient")
    K = stiffness_operator(u.mesh, eps)
    g = K @ (u.values - u.values[0])
    if H != 0:
        g = g + H * volume_cofield(u)
    return Gradient(g, TangentField(u.mesh, tangent_project(u, g)))


class HessianOperator:
    """Second variation at ``u`` acting on tangent fields.

    For tangent ``psi, xi``::

        h(psi, xi) = psi.(K + H J) xi - sum_i (psi_i . xi_i)(u_i . G_i)

    with ``J`` the symmetrized second derivative of the discrete volume and ``G``
    the ambient gradient.  The last term is the curvature correction of the
    sphere constraint; for the round target it is the discrete form of
    ``-R(psi, grad u, grad u, xi)`` plus the ``Delta u . Delta A(psi, xi)`` term.
    """

    def __init__(self, u: MapField, H: float, eps: float, grad_tol: float = 5e-2):
        _require_round(u, "hessian")
        self.u, self.H, self.eps = u, float(H), float(eps)
        self.K = stiffness_operator(u.mesh, eps)
        g = gradient(u, H, eps)
        self.gradient = g
        self.normal_load = np.einsum("ij,ij->i", u.values, g.ambient)
        self.noncritical = g.l2_norm > grad_tol
        self._J = _volume_face_hessian(u) if self.H != 0 else None

    def apply_ambient(self, psi: np.ndarray) -> np.ndarray:
        out = self.K @ psi - self.normal_load[:, None] * psi
        if self._J is not None:
            faces = self.u.mesh.faces
            local = np.einsum("fickl,fkl->fic", self._J, psi[faces])
            vol = np.zeros_like(psi)
            np.add.at(vol, faces, local)
            out = out + self.H * vol
        return out

    def __call__(self, psi) -> TangentField:
        v = psi.vectors if isinstance(psi, TangentField) else np.asarray(psi, float)
        v = tangent_project(self.u, v)
        return TangentField(self.u.mesh, tangent_project(self.u, self.apply_ambient(v)), self.noncritical)

    def form(self, psi, xi) -> float:
        a = psi.vectors if isinstance(psi, TangentField) else psi
        b = xi.vectors if isinstance(xi, TangentField) else xi
        return float(np.sum(self(a).vectors * tangent_project(self.u, b)))

    def ambient_matrix(self) -> sp.csr_matrix:
        """Sparse (4V, 4V) matrix ``A`` with ``h(psi, xi) = psi^T A xi`` on tangent fields."""
        nv = self.u.mesh.n_vertices
        A = sp.kron(self.K, sp.identity(4), format="csr") - sp.diags(np.repeat(self.normal_load, 4))
        if self._J is not None:
            faces = self.u.mesh.faces
            rows = (4 * faces[:, :, None] + np.arange(4)[None, None, :]).reshape(-1, 12)
            R = np.broadcast_to(rows[:, :, None], (len(faces), 12, 12))
            C = np.broadcast_to(rows[:, None, :], (len(faces), 12, 12))
            vals = self._J.reshape(-1, 12, 12)
            V = sp.coo_matrix((vals.ravel(), (R.ravel(), C.ravel())), shape=(4 * nv, 4 * nv)).tocsr()
            A = A + self.H * V
        return A.tocsr()


def hessian_apply(u: MapField, psi, H: float, eps: float, grad_tol: float = 5e-2) -> TangentField:
    """Apply the second variation to a tangent field.

    The form is meaningful only at critical points; if the tangent gradient
    exceeds ``grad_tol`` the result carries ``noncritical=True`` and a
    ``NonCriticalWarning`` is emitted.
    """
    op = HessianOperator(u, H, eps, grad_tol)
    if op.noncritical:
        warnings.warn(f"hessian evaluated away from a critical point (|grad| = {op.gradient.l2_norm:.2e})",
                      NonCriticalWarning, stacklevel=2)
    return op(psi)


# -- residuals -----------------------------------------------------------

def hodge_cross(u: MapField) -> np.ndarray:
    """Pointwise discrete ``*(u^* Q)``: projected volume cofield over vertex areas."""
    return tangent_project(u, volume_cofield(u)) / u.mesh.vertex_areas[:, None]


def tension(u: MapField) -> np.ndarray:
    """``Delta u - A(u)(grad u, grad u)``, computed as ``P_u(Delta_h u)``."""
    _require_round(u, "tension")
    return tangent_project(u, u.mesh.laplacian(u.values))


def _mass_norm(mesh, field_):
    return float(np.sqrt(np.sum(mesh.vertex_areas[:, None] * field_ ** 2)))


def cmc_residual(u: MapField, H: float):
    """Pointwise residual of ``Delta u - A(u)(grad u, grad u) = H *(u^* Q)`` and its L^2 norm."""
    r = tension(u) - H * hodge_cross(u)
    return r, _mass_norm(u.mesh, r)


def residual_minimizing_H(u: MapField) -> float:
    """Least-squares ``H`` for the CMC equation at fixed ``u``."""
    t = tension(u)
    q = hodge_cross(u)
    m = u.mesh.vertex_areas[:, None]
    qq = float(np.sum(m * q * q))
    if qq == 0:
        return 0.0
    return float(np.sum(m * t * q)) / qq


def hopf_density(u: MapField) -> np.ndarray:
    """Per-face modulus of ``1/4(|u_1|^2 - |u_2|^2) - i/2 <u_1, u_2>`` in an orthonormal face frame."""
    g = _mesh.face_gradient(u.mesh, u.values)
    fr = u.mesh.face_frames
    u1 = np.einsum("fnd,fd->fn", g, fr[:, 0])
    u2 = np.einsum("fnd,fd->fn", g, fr[:, 1])
    re = 0.25 * (np.sum(u1 * u1, axis=1) - np.sum(u2 * u2, axis=1))
    im = 0.5 * np.sum(u1 * u2, axis=1)
    return np.hypot(re, im)


def hopf_residual(u: MapField):
    """Conformality defect: ``||phi||_{L^2} / D(u)``.  Returns ``(value, degenerate)``."""
    d = dirichlet(u)
    if d < 1e-12:
        return 0.0, True
    phi = hopf_density(u)
    return float(np.sqrt(np.sum(u.mesh.face_areas * phi ** 2))) / d, False
