"""Sweepouts, the min-max value and a string-method mountain pass."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .energy import (
    DELTA0,
    MapField,
    gradient,
    perturbed_energy,
    tangent_project,
    volume_increment_subdivided,
)
from .fields import latitude_map
from .flow import FlowConfig, climb_direction, descend, preconditioner
from .metric import RoundS3

log = logging.getLogger(__name__)


class DegreeChangeError(RuntimeError):
    """The sweepout degree changed, which the volume ledger forbids."""


class MonotonicityWarning(UserWarning):
    pass


class Sweepout:
    """Ordered slices from a constant map to a constant map with tracked volumes ``V_0 = 0``."""

    def __init__(self, slices, tracked_volumes=None, delta0: float = DELTA0):
        slices = list(slices)
        if len(slices) < 3:
            raise ValueError("a sweepout needs at least three slices")
        if not (slices[0].is_constant and slices[-1].is_constant):
            raise ValueError("sweepout endpoints must be constant maps")
        self.slices = _refine_gaps(slices, delta0)
        self.delta0 = delta0
        if tracked_volumes is None or len(self.slices) != len(slices):
            tracked_volumes = accumulate_volumes(self.slices, delta0)
        self.tracked_volumes = np.asarray(tracked_volumes, dtype=float)

    def __len__(self):
        return len(self.slices)

    @property
    def mesh(self):
        return self.slices[0].mesh

    @property
    def metric(self):
        return self.slices[0].metric

    @property
    def degree(self) -> int:
        return int(round(self.tracked_volumes[-1] / self.metric.total_volume))

    def energies(self, H: float, eps: float) -> np.ndarray:
        return np.array([perturbed_energy(u, eps) for u in self.slices]) + H * self.tracked_volumes

    def d_eps(self, eps: float) -> np.ndarray:
        return np.array([perturbed_energy(u, eps) for u in self.slices])


def _refine_gaps(slices, delta0):
    out = [slices[0]]
    for u1 in slices[1:]:
        u0 = out[-1]
        gap = float(np.max(np.linalg.norm(u1.values - u0.values, axis=1)))
        n = int(np.ceil(gap / (0.5 * delta0)))
        for k in range(1, n):
            t = k / n
            out.append(MapField(u0.mesh, u0.metric.project((1 - t) * u0.values + t * u1.values), u0.metric))
        out.append(u1)
    return out


def accumulate_volumes(slices, delta0: float = DELTA0) -> np.ndarray:
    V = np.zeros(len(slices))
    for k in range(1, len(slices)):
        V[k] = V[k - 1] + volume_increment_subdivided(slices[k - 1], slices[k], delta0=delta0)
    return V


def latitude_sweepout(mesh, metric=None, S: int = 64) -> Sweepout:
    """Slices ``x -> (sqrt(1 - c^2) x, c)`` with ``c = 2k/(S-1) - 1``, pole to pole."""
    if S < 3:
        raise ValueError("S must be at least 3")
    metric = metric or RoundS3()
    cs = 2.0 * np.arange(S) / (S - 1) - 1.0
    return Sweepout([latitude_map(mesh, c, metric) for c in cs])


def sweepout_max(sw: Sweepout, H: float, eps: float):
    """``(index, value)`` of the most energetic slice; lowest index on ties."""
    e = sw.energies(H, eps)
    i = int(np.argmax(e))
    return i, float(e[i])


@dataclass(frozen=True)
class MinMaxConfig:
    outer_iters: int = 60
    descent_steps: int = 1
    grad_tol: float = 1e-4
    climb: bool = True
    redistribute: bool = True
    volume_every: int = 10
    flow: FlowConfig = field(default_factory=FlowConfig)

    def __post_init__(self):
        if self.outer_iters < 0 or self.descent_steps < 0:
            raise ValueError("iteration counts must be nonnegative")
        if self.grad_tol <= 0 or self.volume_every < 1:
            raise ValueError("grad_tol and volume_every must be positive")


@dataclass
class MinMaxRecord:
    H: float
    eps: float
    omega: float
    argmax: int
    d_eps_at_argmax: float
    grad_norm_at_argmax: float
    history: list
    status: str
    degree: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def path_tangent(sw_slices, k):
    """Tangent of the path at slice ``k`` (central difference, projected)."""
    u = sw_slices[k]
    t = sw_slices[min(k + 1, len(sw_slices) - 1)].values - sw_slices[max(k - 1, 0)].values
    return tangent_project(u, t)


def _slice_step(u, V, H, eps, pre, cfg: FlowConfig, mode=None):
    """One preconditioned step on a single slice; returns (u, V, grad_norm_before)."""
    g = gradient(u, H, eps).tangent.vectors
    d = pre.solve(g)
    gn = float(np.sqrt(max(np.sum(g * d), 0.0)))
    if gn == 0:
        return u, V, gn
    if mode is not None:
        d = climb_direction(u, d, mode, pre, H, eps)
    dmax = float(np.max(np.linalg.norm(d, axis=1)))
    tau = min(cfg.step, cfg.max_displacement / max(dmax, 1e-300))
    E = perturbed_energy(u, eps) + H * V
    slope = float(np.sum(g * d))
    for _ in range(cfg.max_backtracks + 1):
        trial = u.moved(-tau * d)
        dV = volume_increment_subdivided(u, trial) if H != 0 else 0.0
        if mode is not None or cfg.step_rule == "fixed":
            return trial, V + dV, gn
        if perturbed_energy(trial, eps) + H * (V + dV) <= E - cfg.c1 * tau * slope:
            return trial, V + dV, gn
        tau *= cfg.shrink
    return u, V, gn


def _redistribute(slices, pinned):
    """Equal mass-metric arclength spacing on each segment between pinned indices."""
    m = slices[0].mesh.vertex_areas[:, None]
    out = list(slices)
    for a, b in zip(pinned[:-1], pinned[1:]):
        seg = slices[a:b + 1]
        if len(seg) <= 2:
            continue
        dist = np.array([np.sqrt(np.sum(m * (q.values - p.values) ** 2)) for p, q in zip(seg[:-1], seg[1:])])
        s = np.concatenate([[0.0], np.cumsum(dist)])
        if s[-1] == 0:
            continue
        targets = np.linspace(0.0, s[-1], len(seg))
        for i in range(1, len(seg) - 1):
            j = int(np.clip(np.searchsorted(s, targets[i], side="right") - 1, 0, len(seg) - 2))
            h = s[j + 1] - s[j]
            al = 0.0 if h == 0 else (targets[i] - s[j]) / h
            p, q = seg[j], seg[j + 1]
            out[a + i] = MapField(p.mesh, p.metric.project((1 - al) * p.values + al * q.values), p.metric)
    return out


def mountain_pass(sw0: Sweepout, H: float, eps: float, cfg: MinMaxConfig | None = None):
    """String method: descend interior slices, climb the top slice, redistribute, repeat.

    Returns the final sweepout and a ``MinMaxRecord`` whose ``omega`` is the
    final maximal energy, an upper bound for the min-max value.
    """
    cfg = cfg or MinMaxConfig()
    if sw0.degree != 1:
        raise ValueError(f"sweepout is not admissible (degree {sw0.degree})")
    mesh = sw0.mesh
    pre = preconditioner(mesh, eps, cfg.flow.preconditioner)
    slices = list(sw0.slices)
    V = sw0.tracked_volumes.copy()
    S = len(slices)
    k, omega = sweepout_max(sw0, H, eps)
    history = [omega]
    gk = float("nan")
    status = "max-iter"
    steps = cfg.descent_steps if cfg.outer_iters > 0 else 0
    if steps == 0:
        return sw0, _mm_record(sw0, H, eps, k, omega, _grad_norm(slices[k], H, eps, pre), history, "unchanged")
    for it in range(cfg.outer_iters):
        k = int(np.argmax(_energies(slices, V, H, eps)))
        for _ in range(steps):
            for i in range(1, S - 1):
                mode = None
                if cfg.climb and i == k:
                    mode = path_tangent(slices, i)
                slices[i], V[i], gn = _slice_step(slices[i], V[i], H, eps, pre, cfg.flow, mode)
                if i == k:
                    gk = gn
        if cfg.redistribute:
            pinned = [0, k, S - 1] if (cfg.climb and 0 < k < S - 1) else [0, S - 1]
            slices = _redistribute(slices, pinned)
        if cfg.redistribute and (H != 0 or (it + 1) % cfg.volume_every == 0):
            V = accumulate_volumes(slices, sw0.delta0)
            _check_degree(V, sw0)
        e = _energies(slices, V, H, eps)
        k = int(np.argmax(e))
        history.append(float(e[k]))
        if history[-1] > history[-2] + 1e-6 * max(1.0, abs(history[-2])):
            log.info("max energy rose from %.6g to %.6g (reparametrization)", history[-2], history[-1])
        gk = _grad_norm(slices[k], H, eps, pre)
        if gk <= cfg.grad_tol:
            status = "converged"
            break
    V = accumulate_volumes(slices, sw0.delta0)
    _check_degree(V, sw0)
    sw = Sweepout(slices, V, sw0.delta0)
    k, omega = sweepout_max(sw, H, eps)
    return sw, _mm_record(sw, H, eps, k, omega, _grad_norm(slices[k], H, eps, pre), history, status)


def _energies(slices, V, H, eps):
    return np.array([perturbed_energy(u, eps) for u in slices]) + H * np.asarray(V)


def _grad_norm(u, H, eps, pre):
    g = gradient(u, H, eps).tangent.vectors
    return float(np.sqrt(max(np.sum(g * pre.solve(g)), 0.0)))


def _check_degree(V, sw0):
    deg = int(round(V[-1] / sw0.metric.total_volume))
    if deg != sw0.degree:
        raise DegreeChangeError(f"sweepout degree changed from {sw0.degree} to {deg} (V_end = {V[-1]:.6g})")


def _mm_record(sw, H, eps, k, omega, gk, history, status):
    return MinMaxRecord(float(H), float(eps), float(omega), int(k), float(perturbed_energy(sw.slices[k], eps)),
                        float(gk), list(history), status, sw.degree)


def extract_critical_point(sw: Sweepout, record: MinMaxRecord, cfg: FlowConfig | None = None):
    """Polish the top slice with min-mode climbing along the path tangent."""
    k = record.argmax
    mode = path_tangent(sw.slices, k)
    return descend(sw.slices[k], sw.tracked_volumes[k], record.H, record.eps, cfg, climb=mode)


def omega_over_h_scan(H_grid, eps: float, base: Sweepout, cfg: MinMaxConfig | None = None):
    """Rows ``(H, omega, omega/H, -d/dH(omega/H))``; ordering violations are warned about."""
    H_grid = [float(h) for h in H_grid]
    if any(h <= 0 for h in H_grid) or any(b <= a for a, b in zip(H_grid[:-1], H_grid[1:])):
        raise ValueError("H grid must be positive and strictly increasing")
    rows = []
    for H in H_grid:
        _, rec = mountain_pass(base, H, eps, cfg)
        rows.append({"H": H, "omega": rec.omega, "omega_over_H": rec.omega / H, "neg_deriv": None,
                     "record": rec})
    for a, b in zip(rows[:-1], rows[1:]):
        b["neg_deriv"] = -(b["omega_over_H"] - a["omega_over_H"]) / (b["H"] - a["H"])
        if b["omega_over_H"] > a["omega_over_H"]:
            warnings.warn(f"omega/H increased between H={a['H']} and H={b['H']}", MonotonicityWarning)
    return rows


def good_slice_extract(sw: Sweepout, H: float, eps: float, alpha: float, C: float, omega: float | None = None):
    """Interior slices with ``E >= omega - alpha``, annotated with ``D_eps`` and ``D_eps <= C``."""
    e = sw.energies(H, eps)
    de = sw.d_eps(eps)
    if omega is None:
        omega = float(np.max(e))
    out = []
    for i in range(1, len(sw) - 1):
        if e[i] >= omega - alpha:
            out.append({"index": i, "E": float(e[i]), "D_eps": float(de[i]), "bounded": bool(de[i] <= C)})
    return out
