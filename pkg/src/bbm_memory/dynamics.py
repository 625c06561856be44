"""Time stepping for the coupled velocity/history system and its energy audits.

The discrete system in coefficient space reads

    (1 + lam) u' = f - D u - N(u) - lam * int mu eta ds,
    eta_t = -eta_s + u,

with ``D`` the Galerkin derivative matrix and ``N`` the dealiased ``u u_x``.
The default ``imex2`` scheme treats the memory coupling by the trapezoidal
rule (the history is advanced exactly for ``u`` linear across the step, so
the coupling is an affine function of the new velocity and the implicit
solve is diagonal) and ``f - u_x - u u_x`` by Heun's method.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import ConfigError, DivergenceError, UnsupportedQuery
from .memory import MarkovianHistory, QuadratureHistory, make_history
from .spectral import Domain, ForceData

BLOWUP = 1e12
SCHEMES = ("imex2", "rk4_explicit")


@dataclass
class State:
    """Point ``z = (u, eta)`` of the phase space at time ``t``."""

    u: np.ndarray
    eta: QuadratureHistory | MarkovianHistory
    t: float = 0.0

    @classmethod
    def zero(cls, domain: Domain, kernel, dt: float, backend: str = "quadrature", substeps: int = 1):
        return cls(domain.zeros(), make_history(kernel, domain.eigenvalues, dt, backend, substeps), 0.0)

    @classmethod
    def from_velocity(cls, u, domain: Domain, kernel, dt: float, backend: str = "quadrature", substeps: int = 1):
        """Velocity ``u`` with zero past history."""
        z = cls.zero(domain, kernel, dt, backend, substeps)
        z.u = np.array(u, dtype=float)
        return z

    def copy(self) -> "State":
        return State(self.u.copy(), self.eta.copy(), self.t)

    def energy(self) -> float:
        """``E = |||u|||_1^2 + ||eta||_M^2``."""
        lam = self.eta.eigenvalues
        return float(np.sum((1.0 + lam) * self.u * self.u)) + self.eta.norm_sq(0.0)

    def h_norm(self) -> float:
        return math.sqrt(max(self.energy(), 0.0))

    def h1_norm(self) -> float:
        """``(|||u|||_2^2 + ||eta||_{M^1}^2)^{1/2}``."""
        lam = self.eta.eigenvalues
        return math.sqrt(float(np.sum(lam * (1.0 + lam) * self.u * self.u)) + self.eta.norm_sq(1.0))

    def distance(self, other: "State") -> float:
        """``||z1 - z2||_H`` (quadrature backend only)."""
        lam = self.eta.eigenvalues
        du = self.u - other.u
        return math.sqrt(float(np.sum((1.0 + lam) * du * du)) + self.eta.difference_norm_sq(other.eta, 0.0))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u))) and self.eta.is_finite()


@dataclass(frozen=True)
class StepperConfig:
    dt: float = 1e-2
    scheme: str = "imex2"
    T_final: float = 1.0
    record_stride: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"integrator.dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"integrator.scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.T_final >= 0:
            raise ConfigError("integrator.T_final must be nonnegative")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ConfigError("integrator.record_stride must be a positive integer")

    @property
    def n_steps(self) -> int:
        n = self.T_final / self.dt
        m = int(round(n))
        if abs(n - m) > 1e-9 * max(1.0, n):
            raise ConfigError(f"T_final={self.T_final} is not a multiple of dt={self.dt}")
        return m


# ---------------------------------------------------------------------------
# right-hand side


def explicit_source(u: np.ndarray, force: ForceData, nonlinear: bool = True, transport: bool = True):
    """``f - P u_x - P(u u_x)`` in coefficient space."""
    dom = force.domain
    out = force.f.copy()
    if transport:
        out -= dom.ddx_projected(u)
    if nonlinear:
        out -= dom.nonlinear_term(u)
    return out


def _check(state: State, t: float):
    if not state.is_finite():
        raise DivergenceError("nonfinite state", t)
    if float(np.max(np.abs(state.u))) > BLOWUP or state.energy() > BLOWUP**2:
        raise DivergenceError(f"norm exceeded {BLOWUP:g}", t)


def imex2_prepare(state: State, dt: float):
    """Parts of the trapezoidal memory step that do not depend on the explicit source:
    ``u1 = (rhs + dt * Xbar) / lhs``."""
    lam = state.eta.eigenvalues
    b = 1.0 + lam
    base, alpha, beta = state.eta.plan(dt)
    rhs = b * state.u - 0.5 * dt * lam * (state.eta.mean() + base + alpha * state.u)
    return rhs, b + 0.5 * dt * beta * lam


def imex2_stages(state: State, dt: float, source: Callable):
    """Heun stages: returns ``(u1, Xbar)`` with ``Xbar = (X(u0) + X(u*)) / 2``."""
    rhs, lhs = imex2_prepare(state, dt)
    X0 = source(state.u)
    u_star = (rhs + dt * X0) / lhs
    Xbar = 0.5 * (X0 + source(u_star))
    return (rhs + dt * Xbar) / lhs, Xbar


def _imex2(state: State, dt: float, force: ForceData, source: Callable):
    u1, _ = imex2_stages(state, dt, source)
    return u1, state.eta.advance(state.u, u1, dt)


def _rk4_markovian(state: State, dt: float, force: ForceData, source: Callable):
    h = state.eta
    if not isinstance(h, MarkovianHistory):
        raise UnsupportedQuery("rk4_explicit needs the markovian history backend")
    lam = h.eigenvalues
    a, d = h._a, h._d
    c = a / d

    def rhs(u, psi, q):
        du = (source(u) - lam * np.sum(c * psi, axis=0)) / (1.0 + lam)
        return du, -d * psi + u, -d * q + (2.0 / d) * u * psi

    y0 = (state.u, h.psi, h.q)
    k1 = rhs(*y0)
    k2 = rhs(*(y + 0.5 * dt * k for y, k in zip(y0, k1)))
    k3 = rhs(*(y + 0.5 * dt * k for y, k in zip(y0, k2)))
    k4 = rhs(*(y + dt * k for y, k in zip(y0, k3)))
    new = [y + dt / 6.0 * (p + 2 * q + 2 * r + s) for y, p, q, r, s in zip(y0, k1, k2, k3, k4)]
    return new[0], MarkovianHistory(h.kernel, lam, new[1], new[2])


def step(state: State, cfg: StepperConfig, force: ForceData, nonlinear: bool = True,
         transport: bool = True) -> State:
    """Advance ``state`` by one step of size ``cfg.dt``.

    ``nonlinear=False`` drops ``u u_x``; ``transport=False`` drops ``u_x``.
    """
    def source(u):
        return explicit_source(u, force, nonlinear, transport)

    if cfg.scheme == "imex2":
        u1, eta1 = _imex2(state, cfg.dt, force, source)
    else:
        u1, eta1 = _rk4_markovian(state, cfg.dt, force, source)
    new = State(u1, eta1, state.t + cfg.dt)
    _check(new, new.t)
    return new


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    E: np.ndarray
    Gamma: np.ndarray
    work: np.ndarray
    norm_u_triple1: np.ndarray
    norm_eta_M: np.ndarray
    extra: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def to_csv(self, path) -> None:
        """Columns ``t, E, Gamma, work, norm_u_triple1, norm_eta_M, residual``."""
        res = energy_identity_residual(self)["residual"] if len(self) >= 3 else np.full(len(self), np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "E", "Gamma", "work", "norm_u_triple1", "norm_eta_M", "residual"])
            for row in zip(self.times, self.E, self.Gamma, self.work, self.norm_u_triple1, self.norm_eta_M, res):
                w.writerow([f"{v:.17g}" for v in row])


def _observe(z: State, force: ForceData):
    lam = z.eta.eigenvalues
    nu = float(np.sum((1.0 + lam) * z.u * z.u))
    ne = z.eta.norm_sq(0.0)
    return z.t, nu + ne, z.eta.gamma(0.0), force.work(z.u), math.sqrt(nu), math.sqrt(max(ne, 0.0))


def evolve(z: State, cfg: StepperConfig, force: ForceData, observers: dict | None = None,
           nonlinear: bool = True, transport: bool = True, keep_states: bool = False,
           return_state: bool = False):
    """Run ``cfg.T_final / cfg.dt`` steps from ``z``, observing every ``record_stride`` steps.

    ``observers`` maps names to callables ``state -> float`` recorded in
    ``record.extra``. Returns the record (and the final state when
    ``return_state``).
    """
    observers = observers or {}
    rows = [_observe(z, force)]
    extra = {k: [fn(z)] for k, fn in observers.items()}
    snaps = [z.copy()] if keep_states else []
    cur = z
    for n in range(1, cfg.n_steps + 1):
        cur = step(cur, cfg, force, nonlinear, transport)
        if n % cfg.record_stride == 0:
            rows.append(_observe(cur, force))
            for k, fn in observers.items():
                extra[k].append(fn(cur))
            if keep_states:
                snaps.append(cur.copy())
    cols = [np.array(c) for c in zip(*rows)]
    rec = TrajectoryRecord(*cols, extra={k: np.array(v) for k, v in extra.items()}, snapshots=snaps)
    return (rec, cur) if return_state else rec


def energy_identity_residual(rec: TrajectoryRecord) -> dict:
    """``dE/dt + Gamma - 2<f,u>`` with ``dE/dt`` by centered differences.

    End points use second-order one-sided differences; ``max_abs`` is taken
    over interior samples only.
    """
    if len(rec) < 3:
        raise ValueError("energy identity audit needs at least 3 samples")
    dE = np.gradient(rec.E, rec.times, edge_order=2)
    res = dE + rec.Gamma - rec.work
    return {"residual": res, "max_abs": float(np.max(np.abs(res[1:-1])))}


def integrated_identity(rec: TrajectoryRecord) -> dict:
    """``E(T) - E(0) + int Gamma - int 2<f,u>`` (Simpson's rule on the samples)."""
    if len(rec) < 3:
        raise ValueError("integrated identity needs at least 3 samples")
    dissipated = integrate.simpson(rec.Gamma, x=rec.times)
    supplied = integrate.simpson(rec.work, x=rec.times)
    defect = rec.E[-1] - rec.E[0] + dissipated - supplied
    return {"defect": float(defect), "relative": float(abs(defect) / rec.E[0]) if rec.E[0] > 0 else float(abs(defect)),
            "dissipated": float(dissipated), "supplied": float(supplied)}


def continuous_dependence_probe(z1: State, z2: State, T: float, cfg: StepperConfig, force: ForceData,
                                nonlinear: bool = True) -> dict:
    """Ratios ``||S(t)z1 - S(t)z2||_H / ||z1 - z2||_H`` sampled every ``record_stride`` steps."""
    d0 = z1.distance(z2)
    if not d0 > 0.0:
        raise ValueError("continuous dependence probe needs distinct initial states")
    run = StepperConfig(cfg.dt, cfg.scheme, T, cfg.record_stride)
    times, ratios = [z1.t], [1.0]
    a, b = z1, z2
    for n in range(1, run.n_steps + 1):
        a = step(a, run, force, nonlinear)
        b = step(b, run, force, nonlinear)
        if n % run.record_stride == 0:
            times.append(a.t)
            ratios.append(a.distance(b) / d0)
    ratios = np.array(ratios)
    return {"times": np.array(times), "ratios": ratios, "Q": float(np.max(ratios))}
