"""Preconditioned projected gradient descent for ``E = D_eps + H V``."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .energy import (
    EnergyBreakdown,
    HessianOperator,
    MapField,
    cmc_residual,
    dirichlet,
    gradient,
    hopf_residual,
    perturbed_energy,
    stiffness_operator,
    tracked_energy,
    volume_increment_subdivided,
)

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max-iter"
COLLAPSED = "collapsed-to-constant"


@dataclass(frozen=True)
class FlowConfig:
    step_rule: str = "armijo"          # "armijo" | "fixed"
    step: float = 1.0
    c1: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    preconditioner: str = "h2"         # "h2" | "mass"
    grad_tol: float = 1e-6
    max_iter: int = 500
    max_displacement: float = 0.2
    beta_collapse: float = 1e-3

    def __post_init__(self):
        if self.step_rule not in ("armijo", "fixed"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.preconditioner not in ("h2", "mass"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        for name in ("step", "c1", "grad_tol", "max_displacement", "beta_collapse"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")


class Preconditioner:
    """Factorized ``eps^2 S M^-1 S + S + M`` (or the lumped mass alone), applied per component."""

    def __init__(self, mesh, eps: float, kind: str = "h2"):
        self.kind = kind
        self.mass = mesh.vertex_areas
        if kind == "mass":
            self.matrix = sp.diags(mesh.vertex_areas).tocsr()
            self._lu = None
        else:
            self.matrix = (stiffness_operator(mesh, eps) + sp.diags(mesh.vertex_areas)).tocsr()
            self._lu = splu(self.matrix.tocsc())

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def solve(self, g: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return g / self.mass.reshape((-1,) + (1,) * (g.ndim - 1))
        shape = g.shape
        return self._lu.solve(np.ascontiguousarray(g.reshape(shape[0], -1))).reshape(shape)


def preconditioner(mesh, eps: float, kind: str = "h2") -> Preconditioner:
    key = ("pre", kind, float(eps))
    if key not in mesh._cache:
        mesh._cache[key] = Preconditioner(mesh, eps, kind)
    return mesh._cache[key]


@dataclass(eq=False)
class CriticalPointRecord:
    map: MapField
    H: float
    eps: float
    energy: EnergyBreakdown
    grad_norm: float
    iterations: int
    cmc_residual: float
    hopf_residual: float
    status: str
    trace: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {
            "H": self.H, "eps": self.eps, "status": self.status, "iterations": self.iterations,
            "grad_norm": self.grad_norm, "cmc_residual": self.cmc_residual,
            "hopf_residual": self.hopf_residual, **{f"energy_{k}": v for k, v in self.energy.as_dict().items()
                                                    if k not in ("H", "eps")},
        }


def _energy(u, V, H, eps):
    return perturbed_energy(u, eps) + H * V


def _direction(u, H, eps, pre):
    g = gradient(u, H, eps).tangent.vectors
    d = pre.solve(g)
    return g, d, float(np.sqrt(max(np.sum(g * d), 0.0)))


def descend(u0: MapField, tracked_volume0: float, H: float, eps: float,
            cfg: FlowConfig | None = None, climb=None) -> CriticalPointRecord:
    """Flow ``u0`` to a critical point of ``E_{H,eps}``.

    ``climb`` (optional ambient field, or callable ``u -> field``) turns the
    iteration into min-mode climbing: along that mode the step ascends (see
    ``climb_direction``).  This converges to index-one saddles; the energy is
    then not monotone, so steps are accepted without the Armijo test.
    """
    cfg = cfg or FlowConfig()
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    mesh = u0.mesh
    pre = preconditioner(mesh, eps, cfg.preconditioner)
    u, V = u0, float(tracked_volume0)
    E = _energy(u, V, H, eps)
    g, d, gn = _direction(u, H, eps, pre)
    trace = [_row(0, u, V, H, eps, gn, 0.0, 0.0)]
    status = MAX_ITER
    tau = cfg.step
    it = 0
    while True:
        if gn <= cfg.grad_tol:
            status = CONVERGED
            break
        if perturbed_energy(u, eps) < cfg.beta_collapse and climb is None:
            status = COLLAPSED
            break
        if it >= cfg.max_iter:
            break
        if climb is not None:
            d = climb_direction(u, d, climb(u) if callable(climb) else climb, pre, H, eps)
        dmax = float(np.max(np.linalg.norm(d, axis=1)))
        tau = min(cfg.step, 2.0 * tau, cfg.max_displacement / max(dmax, 1e-300))
        slope = float(np.sum(g * d))
        accepted = False
        for _ in range(cfg.max_backtracks + 1):
            trial = u.moved(-tau * d)
            dV = volume_increment_subdivided(u, trial) if H != 0 else 0.0
            E_trial = _energy(trial, V + dV, H, eps)
            if cfg.step_rule == "fixed" or climb is not None or E_trial <= E - cfg.c1 * tau * slope:
                accepted = True
                break
            tau *= cfg.shrink
        if not accepted:
            log.warning("Armijo backtracking failed at iteration %d (grad %.3e)", it, gn)
            break
        it += 1
        u, V, E = trial, V + dV, E_trial
        g, d, gn = _direction(u, H, eps, pre)
        trace.append(_row(it, u, V, H, eps, gn, tau, dV))
    return _record(u, V, H, eps, gn, it, status, trace)


def climb_direction(u, d, mode, pre, H, eps):
    """Replace the component of ``d`` along ``mode`` by a Newton step on that mode.

    ``mode`` is normalized in the preconditioner inner product; with curvature
    ``lam = h(m, m)`` the mode coefficient ``a`` of the step becomes ``a / lam``
    when ``lam < 0`` (ascent to the saddle), otherwise it is simply reversed.
    """
    m = mode - np.einsum("ij,ij->i", mode, u.values)[:, None] * u.values
    pm = pre.apply(m)
    n2 = float(np.sum(m * pm))
    if n2 <= 0:
        return d
    m, pm = m / np.sqrt(n2), pm / np.sqrt(n2)
    a = float(np.sum(d * pm))
    lam = HessianOperator(u, H, eps).form(m, m)
    coef = a / lam if lam < 0 else -a
    return d + (coef - a) * m


def _row(it, u, V, H, eps, gn, tau, dV):
    D = dirichlet(u)
    De = perturbed_energy(u, eps)
    return {"iteration": it, "D": D, "D_eps": De, "V": V, "E": De + H * V, "grad_norm": gn,
            "step": tau, "dV": dV}


def _record(u, V, H, eps, gn, it, status, trace) -> CriticalPointRecord:
    _, r = cmc_residual(u, H)
    hopf, _ = hopf_residual(u)
    return CriticalPointRecord(u, float(H), float(eps), tracked_energy(u, V, H, eps), gn, it, r, hopf,
                               status, trace)


def energy_trace(record: CriticalPointRecord) -> str:
    """CSV text with columns iteration, D, D_eps, V, E, grad_norm."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["iteration", "D", "D_eps", "V", "E", "grad_norm"]
    w.writerow(cols)
    for row in record.trace:
        w.writerow([row["iteration"]] + [repr(float(row[c])) for c in cols[1:]])
    return buf.getvalue()
