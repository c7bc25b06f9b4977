"""Certificates for critical points: concentration scan, blow-up, Morse index, energy bound."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, splu

from . import mesh as _mesh
from .energy import HessianOperator, MapField, dirichlet, gradient
from .metric import cross4
from .quadrature import gauss_unit_interval

log = logging.getLogger(__name__)

ETA0 = 0.3
NULL_TOL = 0.1


class PreconditionError(ValueError):
    pass


class NoConcentrationError(ValueError):
    pass


class EigenSolveError(RuntimeError):
    pass


# -- concentration ---------------------------------------------------------

@dataclass
class ConcentrationReport:
    radius: float
    eta0: float
    centers: np.ndarray
    local_energy: np.ndarray
    flagged: np.ndarray
    max_local_energy: float

    def as_dict(self) -> dict:
        return {"radius": self.radius, "eta0": self.eta0, "flagged": self.flagged.tolist(),
                "max_local_energy": self.max_local_energy, "n_centers": int(len(self.centers))}


def energy_density(u: MapField, eps: float) -> np.ndarray:
    """Per-vertex ``|grad u|^2 + eps^2 |Delta u|^2``; its mass-weighted sum is ``2 D_eps``."""
    mesh = u.mesh
    d = _mesh.face_to_vertex(mesh, _mesh.dirichlet_density(mesh, u.values))
    if eps > 0:
        lap = mesh.laplacian(u.values)
        d = d + eps ** 2 * np.sum(lap * lap, axis=1)
    return d


def concentration_scan(u: MapField, eps: float, r: float, eta0: float = ETA0) -> ConcentrationReport:
    """Energy of every vertex-centred ball of geodesic radius ``4 r``; flag those above ``eta0``."""
    if eps > r:
        raise PreconditionError(f"eps = {eps} exceeds the scan radius r = {r}")
    mesh = u.mesh
    rad = min(4.0 * r, np.pi - 1e-12)
    chord = 2.0 * np.sin(0.5 * rad)
    w = mesh.vertex_areas * energy_density(u, eps)
    pairs = mesh.kdtree.query_pairs(chord, output_type="ndarray")
    local = w.copy()
    if len(pairs):
        np.add.at(local, pairs[:, 0], w[pairs[:, 1]])
        np.add.at(local, pairs[:, 1], w[pairs[:, 0]])
    centers = np.arange(mesh.n_vertices)
    flagged = centers[local > eta0]
    return ConcentrationReport(float(r), float(eta0), centers, local, flagged, float(local.max()))


def _exp_chart(center, t, y):
    """``exp_p(t y)`` for planar points ``y`` (shape (..., 2)) in an orthonormal frame at ``p``."""
    p = np.asarray(center, float)
    p = p / np.linalg.norm(p)
    e1 = np.cross(p, [1.0, 0.0, 0.0])
    if np.linalg.norm(e1) < 0.5:
        e1 = np.cross(p, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(p, e1)
    rho = t * np.linalg.norm(y, axis=-1)
    dirn = y[..., 0:1] * e1 + y[..., 1:2] * e2
    nrm = np.linalg.norm(y, axis=-1, keepdims=True)
    dirn = np.divide(dirn, nrm, out=np.zeros_like(dirn), where=nrm > 0)
    return np.cos(rho)[..., None] * p + np.sin(rho)[..., None] * dirn


def _resolve_center(mesh, center):
    c = np.asarray(center)
    if c.ndim == 0:
        return mesh.vertices[int(c)]
    return c / np.linalg.norm(c)


def _pointwise_density(u, eps, pts):
    """Energy density of the projected map ``Pi(w)`` (``w`` the P1 interpolant) at unit vectors ``pts``."""
    mesh = u.mesh
    f, b = _mesh.locate(mesh, pts)
    b = b / b.sum(axis=1, keepdims=True)
    w = np.einsum("pk,pkn->pn", b, u.values[mesh.faces[f]])
    r = np.linalg.norm(w, axis=1)
    wh = w / r[:, None]
    G = _mesh.face_gradient(mesh, u.values)[f]  # (P, N, 3)
    PG = (G - wh[:, :, None] * np.einsum("pn,pnd->pd", wh, G)[:, None, :]) / r[:, None, None]
    dens = np.sum(PG ** 2, axis=(1, 2))
    if eps > 0:
        lap = mesh.laplacian(u.values)
        L = np.einsum("pk,pkn->pn", b, lap[mesh.faces[f]])
        dens = dens + eps ** 2 * np.sum(L * L, axis=1)
    return dens


def ball_energy(u: MapField, eps: float, center, t: float, n_radial: int = 96, n_angular: int = 192) -> float:
    """``int_{B_t(center)} |grad u|^2 + eps^2 |Delta u|^2`` by polar quadrature in the exponential chart.

    The map is the radially projected P1 interpolant, the continuous map a
    ``MapField`` represents; ``Delta u`` is the interpolated vertex Laplacian.
    """
    c = _resolve_center(u.mesh, center)
    s, ws = gauss_unit_interval(n_radial)
    th = 2 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
    y = np.stack([np.outer(s, np.cos(th)), np.outer(s, np.sin(th))], axis=-1).reshape(-1, 2)
    pts = _exp_chart(c, t, y)
    dens = _pointwise_density(u, eps, pts).reshape(n_radial, n_angular)
    jac = t * np.sin(t * s) * ws * (2 * np.pi / n_angular)
    return float(np.sum(jac[:, None] * dens))


@dataclass
class BlowupResult:
    center: np.ndarray
    t_scale: float
    rescaled_eps: float
    grid: np.ndarray
    patch: np.ndarray
    weights: np.ndarray
    target_energy: float
    patch_energy: float
    hopf_residual: float
    cmc_residual: float

    def as_dict(self) -> dict:
        return {"center": self.center.tolist(), "t_scale": self.t_scale, "rescaled_eps": self.rescaled_eps,
                "target_energy": self.target_energy, "patch_energy": self.patch_energy,
                "hopf_residual": self.hopf_residual, "cmc_residual": self.cmc_residual}


def find_blowup_scale(u: MapField, center, eps: float, eta0: float = ETA0, t_max: float = 0.08,
                      rtol: float = 1e-6) -> float:
    """Bisection for ``t`` with ``ball_energy(t) = eta0 / 3``."""
    target = eta0 / 3.0
    q_hi = ball_energy(u, eps, center, t_max)
    if q_hi < target:
        raise NoConcentrationError(
            f"ball energy at t_max = {t_max} is {q_hi:.4g} < eta0/3 = {target:.4g}: no concentration here")
    lo, hi = 0.0, t_max
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if ball_energy(u, eps, center, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def blowup_rescale(u: MapField, center, t_scale: float | None, eps: float, H: float = 0.0,
                   eta0: float = ETA0, n_grid: int = 401, t_max: float = 0.08) -> BlowupResult:
    """Resample ``y -> u(exp_center(t y))`` on the unit disk of a planar grid.

    With ``t_scale=None`` the scale is found by bisection so that the ball
    energy equals ``eta0 / 3``.  The rescaled regularization is ``eps / t``.
    """
    mesh = u.mesh
    c = _resolve_center(mesh, center)
    t = find_blowup_scale(u, c, eps, eta0, t_max) if t_scale is None else float(t_scale)
    h = 2.0 / (n_grid - 1)
    g = np.linspace(-1.0, 1.0, n_grid)
    Y = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    pts = _exp_chart(c, t, Y.reshape(-1, 2))
    patch = _mesh.interpolate(mesh, u.values, pts).reshape(n_grid, n_grid, -1)
    patch = patch / np.linalg.norm(patch, axis=-1, keepdims=True)
    rad = np.linalg.norm(Y, axis=-1)
    wts = np.clip((1.0 - rad) / h + 0.5, 0.0, 1.0)
    du = np.stack(np.gradient(patch, h, axis=(0, 1)), axis=0)  # (2, n, n, N)
    grad2 = np.sum(du ** 2, axis=(0, 3))
    e_eps = eps / t
    energy = np.sum(wts * grad2) * h * h
    if eps > 0:
        lap = _mesh.interpolate(mesh, mesh.laplacian(u.values), pts).reshape(n_grid, n_grid, -1) * t * t
        energy += e_eps ** 2 * np.sum(wts * np.sum(lap ** 2, axis=-1)) * h * h
    u1, u2 = du[0], du[1]
    re = 0.25 * (np.sum(u1 * u1, -1) - np.sum(u2 * u2, -1))
    im = 0.5 * np.sum(u1 * u2, -1)
    d_patch = 0.5 * np.sum(wts * grad2) * h * h
    hopf = float(np.sqrt(np.sum(wts * (re ** 2 + im ** 2)) * h * h) / d_patch) if d_patch > 0 else 0.0
    cmc = _patch_cmc_residual(patch, h, rad, H)
    return BlowupResult(c, t, e_eps, Y, patch, wts, eta0 / 3.0, float(energy), hopf, cmc)


def _patch_cmc_residual(v, h, rad, H):
    d1, d2 = np.gradient(v, h, axis=(0, 1))
    lap = np.gradient(d1, h, axis=0) + np.gradient(d2, h, axis=1)
    grad2 = np.sum(d1 * d1 + d2 * d2, axis=-1)
    tension = lap + grad2[..., None] * v
    r = tension + H * cross4(v, d1, d2)
    inner = rad < 1.0 - 3 * h
    return float(np.sqrt(np.sum(np.sum(r[inner] ** 2, axis=-1)) * h * h))


# -- spectra -------------------------------------------------------------

@dataclass
class IndexReport:
    form: str
    index: int
    nullity: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    null_tol: float = NULL_TOL
    saturated: bool = False
    noncritical: bool = False

    def as_dict(self) -> dict:
        return {"form": self.form, "index": self.index, "nullity": self.nullity,
                "eigenvalues": self.eigenvalues.tolist(), "max_residual": float(np.max(self.residuals)),
                "null_tol": self.null_tol, "saturated": self.saturated, "noncritical": self.noncritical}


def tangent_basis(u: MapField) -> np.ndarray:
    """Orthonormal bases of ``u_i^perp``, shape (V, 4, 3)."""
    _, _, vt = np.linalg.svd(u.values[:, None, :])
    return np.swapaxes(vt[:, 1:, :], 1, 2)


def _reduction(u: MapField) -> sp.csr_matrix:
    T = tangent_basis(u)
    nv = u.mesh.n_vertices
    rows = (4 * np.arange(nv)[:, None, None] + np.arange(4)[None, :, None]).repeat(3, axis=2)
    cols = (3 * np.arange(nv)[:, None, None] + np.arange(3)[None, None, :]).repeat(4, axis=1)
    return sp.csr_matrix((T.ravel(), (rows.ravel(), cols.ravel())), shape=(4 * nv, 3 * nv))


def _is_positive_definite(A: sp.spmatrix) -> bool:
    try:
        lu = splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
    except RuntimeError:
        return False
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return False
    return bool(np.all(lu.U.diagonal() > 0))


def smallest_eigenpairs(A: sp.spmatrix, mass: np.ndarray, k: int, dense_max: int = 600, seed: int = 0):
    """The ``k`` smallest eigenpairs of ``A x = lam diag(mass) x`` with mass-orthonormal vectors."""
    n = A.shape[0]
    k = min(k, n)
    A = sp.csr_matrix(A)
    if n <= dense_max:
        lam, X = la.eigh(A.toarray(), np.diag(mass))
        lam, X = lam[:k], X[:, :k]
    else:
        B = sp.diags(mass)
        sigma = -1.0
        for _ in range(40):
            if _is_positive_definite(A - sigma * B):
                break
            sigma *= 4.0
        else:
            raise EigenSolveError("could not find a shift below the spectrum")
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            lam, X = eigsh(A, k=k, M=B, sigma=sigma, which="LM", v0=v0, tol=0)
        except Exception as exc:  # ArpackNoConvergence and friends
            raise EigenSolveError(f"shift-invert Lanczos failed: {exc}") from exc
        order = np.argsort(lam)
        lam, X = lam[order], X[:, order]
    X = X / np.sqrt(np.sum(mass[:, None] * X * X, axis=0))
    res = np.linalg.norm(A @ X - mass[:, None] * X * lam, axis=0)
    return lam, X, res


def bh_operator(u: MapField, H: float):
    """Scalar form ``int |grad f|^2 - |grad u|^2/2 (H^2/2 + Ric(n, n)) f^2`` as (matrix, mass)."""
    mesh = u.mesh
    fg = _mesh.face_gradient(mesh, u.values)
    gu2 = _mesh.face_to_vertex(mesh, np.sum(fg ** 2, axis=(1, 2)))
    fr = mesh.face_frames
    u1 = np.einsum("fnd,fd->fn", fg, fr[:, 0])
    u2 = np.einsum("fnd,fd->fn", fg, fr[:, 1])
    yf = u.metric.project(u.values[mesh.faces].mean(axis=1))
    nf = u.metric.cross(yf, u1, u2)
    nv = np.zeros((mesh.n_vertices, 4))
    np.add.at(nv, mesh.faces, (mesh.face_areas[:, None] * nf)[:, None, :].repeat(3, axis=1))
    nv = u.metric.tangent_part(u.values, nv)
    nn = u.metric.inner(u.values, nv, nv)
    ric = np.where(nn > 0, u.metric.ricci(u.values, nv) / np.where(nn > 0, nn, 1.0), 0.0)
    if u.metric.is_round:
        ric = np.full(mesh.n_vertices, 2.0)
    weight = 0.5 * gu2 * (0.5 * H * H + ric)
    weight[gu2 < 1e-8 * max(float(np.mean(gu2)), 1e-300)] = 0.0
    A = mesh.stiffness - sp.diags(mesh.vertex_areas * weight)
    return A.tocsr(), mesh.vertex_areas.copy()


def morse_index(u: MapField, H: float, eps: float, k: int = 10, which: str = "hessian",
                null_tol: float = NULL_TOL, grad_tol: float = 5e-2) -> IndexReport:
    """Index and nullity from the ``k`` smallest eigenvalues against the L^2 pairing.

    ``which="hessian"`` uses the second variation on tangent fields (reduced to
    an orthonormal tangent basis per vertex); ``which="bh"`` the scalar form.
    """
    if which == "hessian":
        op = HessianOperator(u, H, eps, grad_tol)
        R = _reduction(u)
        A = (R.T @ op.ambient_matrix() @ R).tocsr()
        A = 0.5 * (A + A.T)
        mass = np.repeat(u.mesh.vertex_areas, 3)
        lam, X, res = smallest_eigenpairs(A, mass, k)
        vecs = (R @ X).reshape(u.mesh.n_vertices, 4, -1)
        noncritical = op.noncritical
    elif which == "bh":
        A, mass = bh_operator(u, H)
        lam, X, res = smallest_eigenpairs(A, mass, k)
        vecs, noncritical = X, False
    else:
        raise ValueError(f"unknown form {which!r}")
    index = int(np.sum(lam < -null_tol))
    nullity = int(np.sum(np.abs(lam) <= null_tol))
    saturated = index + nullity >= len(lam)
    if saturated:
        log.warning("all %d computed eigenvalues are <= null_tol; index/nullity are lower bounds", len(lam))
    return IndexReport(which, index, nullity, lam, vecs, res, null_tol, saturated, noncritical)


def index_comparison_check(u: MapField, H: float, k: int = 12):
    """``index(B_H) <= index(delta^2 E_H)`` at eps = 0; failures are logged, not raised."""
    bh = morse_index(u, H, 0.0, k, "bh")
    hs = morse_index(u, H, 0.0, k, "hessian")
    ok = bh.index <= hs.index
    if not ok:
        log.warning("index comparison failed: B_H index %d > hessian index %d", bh.index, hs.index)
    return ok, bh.index, hs.index


def energy_bound_check(u: MapField, H: float, c0: float | None = None):
    """``D(u) <= 8 pi / c0``; returns (passed, margin, ratio D / bound)."""
    if c0 is None:
        if not u.metric.is_round:
            raise ValueError("c0 must be given for non-round metrics")
        c0 = 2.0 + 0.5 * H * H
    if c0 <= 0:
        raise ValueError("c0 must be positive")
    bound = 8.0 * np.pi / c0
    D = dirichlet(u)
    return bool(D <= bound), float(bound - D), float(D / bound)


def gradient_norm(u: MapField, H: float, eps: float) -> float:
    return gradient(u, H, eps).l2_norm
