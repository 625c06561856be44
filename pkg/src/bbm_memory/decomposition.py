"""Splitting a trajectory into a decaying linear part and a regular forced part.

``(u, eta) = (v, xi) + (w, zeta)`` where ``(v, xi)`` solves the homogeneous
linear system started from ``z`` and ``(w, zeta)`` the linear system with
source ``f - u_x - u u_x`` (evaluated on the full solution ``u``) started
from zero. All three systems are advanced with the same trapezoidal memory
step, and the forced part receives exactly the full system's Heun source, so
the sum reproduces the full solution up to rounding.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import State, StepperConfig, _check, explicit_source, imex2_prepare, imex2_stages
from .errors import ConfigError
from .spectral import ForceData

# rounding-level tolerance of the split, relative to the size of the data
SPLIT_TOL = 1e-12


@dataclass
class SplitState:
    full: State
    linear: State
    forced: State

    @classmethod
    def start(cls, z: State) -> "SplitState":
        zero = State(np.zeros_like(z.u), z.eta.scaled(0.0), z.t)
        return cls(z.copy(), z.copy(), zero)

    @property
    def t(self) -> float:
        return self.full.t

    def residual(self) -> float:
        """``||u - (v + w)||_H + ||eta - (xi + zeta)||_M``."""
        lam = self.full.eta.eigenvalues
        du = self.full.u - self.linear.u - self.forced.u
        diff = self.full.eta.combine(self.linear.eta, 1.0, -1.0).combine(self.forced.eta, 1.0, -1.0)
        return math.sqrt(float(np.sum((1.0 + lam) * du * du))) + math.sqrt(max(diff.norm_sq(0.0), 0.0))


def step_split(s: SplitState, cfg: StepperConfig, force: ForceData) -> SplitState:
    """One step of all three systems with the shared explicit source."""
    if cfg.scheme != "imex2":
        raise ConfigError("the split is implemented for the imex2 scheme")
    dt = cfg.dt
    u1, Xbar = imex2_stages(s.full, dt, lambda u: explicit_source(u, force))
    rhs_v, lhs_v = imex2_prepare(s.linear, dt)
    v1 = rhs_v / lhs_v
    rhs_w, lhs_w = imex2_prepare(s.forced, dt)
    w1 = (rhs_w + dt * Xbar) / lhs_w
    t = s.full.t + dt
    out = SplitState(
        State(u1, s.full.eta.advance(s.full.u, u1, dt), t),
        State(v1, s.linear.eta.advance(s.linear.u, v1, dt), t),
        State(w1, s.forced.eta.advance(s.forced.u, w1, dt), t),
    )
    for part in (out.full, out.linear, out.forced):
        _check(part, t)
    return out


# ---------------------------------------------------------------------------
# functionals


def auxiliary_functionals(s: SplitState, nu: float) -> dict:
    """``Phi, Theta_nu`` for the linear part and ``Psi, Upsilon_nu`` for the forced part.

    ``sandwich_ok`` reports ``X/2 <= Theta_nu <= 2X`` (and the analogue for
    ``Upsilon_nu``), which the decay and regularity estimates need.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    lam = s.full.eta.eigenvalues
    b = 1.0 + lam
    v, xi = s.linear.u, s.linear.eta
    w, zeta = s.forced.u, s.forced.eta
    phi = -float(np.sum(b * v * xi.mean()))
    X = float(np.sum(b * v * v)) + xi.norm_sq(0.0)
    theta = X + nu * phi
    psi = -float(np.sum(lam * b * w * zeta.mean()))
    Y = float(np.sum(lam * b * w * w)) + zeta.norm_sq(1.0)
    ups = Y + nu * psi
    tolX, tolY = 1e-14 * max(X, 1e-300), 1e-14 * max(Y, 1e-300)
    ok_theta = 0.5 * X - tolX <= theta <= 2.0 * X + tolX
    ok_ups = 0.5 * Y - tolY <= ups <= 2.0 * Y + tolY
    out = {"Phi": phi, "Theta": theta, "Psi": psi, "Upsilon": ups, "base_linear": X, "base_forced": Y,
           "sandwich_ok": bool(ok_theta and ok_ups)}
    if not out["sandwich_ok"]:
        out["message"] = f"nu = {nu} is too large for this state"
    return out


def choose_nu(s: SplitState, nu: float = 0.05, min_nu: float = 1e-8) -> float:
    """Halve ``nu`` until both sandwich bounds hold for ``s``."""
    while nu >= min_nu:
        if auxiliary_functionals(s, nu)["sandwich_ok"]:
            return nu
        nu *= 0.5
    raise ValueError("no admissible nu found")


def fit_decay_rate(times, values) -> tuple[float, float]:
    """``(beta, rms)``: negated least-squares slope of ``log(values)`` and the RMS log residual."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < 10 or y.size != t.size:
        raise ValueError("decay fit needs at least 10 samples")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("decay fit needs positive finite values")
    ly = np.log(y)
    slope, icpt = np.polyfit(t, ly, 1)
    rms = float(np.sqrt(np.mean((ly - (slope * t + icpt)) ** 2)))
    return float(-slope), rms


# ---------------------------------------------------------------------------
# reports


@dataclass
class DecayReport:
    times: np.ndarray
    linear_energy: np.ndarray
    beta: float
    fit_rms: float
    prefactor: float


@dataclass
class RegularityReport:
    Q: float
    sup_ds_zeta_M1: float
    pointwise_ok: bool
    k_eps_member: bool
    final_quarter_growth: float
    split_residual_max: float
    split_tolerance: float
    nu: float
    series: dict = field(default_factory=dict)

    @property
    def stabilized(self) -> bool:
        return self.final_quarter_growth < 0.01

    @property
    def split_ok(self) -> bool:
        return self.split_residual_max <= 10.0 * self.split_tolerance


def run_decomposition(z: State, T: float, cfg: StepperConfig, force: ForceData, nu: float = 0.05,
                      csv_path=None) -> tuple[DecayReport, RegularityReport]:
    """Advance the split to ``T`` and audit decay, regularity and ``K_eps`` membership.

    Every step is inspected (suprema are over all steps, not only recorded
    ones); ``cfg.record_stride`` controls the series kept for output. The
    decay rate is fitted on ``||(v, xi)||_H`` over ``[T/4, T]``.
    """
    if not hasattr(z.eta, "grid"):
        raise ConfigError("the decomposition needs the quadrature history backend (pointwise and d_s queries)")
    run = StepperConfig(cfg.dt, cfg.scheme, T, cfg.record_stride)
    n_steps = run.n_steps
    s = SplitState.start(z)
    nu = choose_nu(s, nu)
    lam = z.eta.eigenvalues
    lam1 = float(lam[0])
    kappa = z.eta.kernel.kappa
    tol = SPLIT_TOL * max(1.0, z.h_norm(), z.h1_norm())
    rows = []
    t_all, h1_all, ds_all, pt_all, res_all = [], [], [], [], []
    s_nodes = z.eta.grid.s

    def inspect(st: SplitState, record: bool):
        fw = st.forced
        h1 = fw.h1_norm()
        ds = math.sqrt(max(fw.eta.ds_norm_sq(1.0), 0.0))
        _, pw = fw.eta.pointwise_norm_sq(0.0)
        # sup_s ||zeta(s)||_1^2 lambda_1 / s^2, the constant in h(s) = Q^2 s^2 / lambda_1
        ratio = float(np.max(pw[1:] * lam1 / s_nodes[1:] ** 2))
        res = st.residual()
        t_all.append(st.t)
        h1_all.append(h1)
        ds_all.append(ds)
        pt_all.append(ratio)
        res_all.append(res)
        if record:
            aux = auxiliary_functionals(st, nu)
            rows.append((st.t, st.linear.energy(), h1, res, aux["Theta"], aux["Upsilon"]))

    inspect(s, True)
    for n in range(1, n_steps + 1):
        s = step_split(s, run, force)
        inspect(s, n % run.record_stride == 0)

    t_all = np.array(t_all)
    h1_all = np.array(h1_all)
    Q = float(np.max(h1_all))
    sup_ds = float(np.max(ds_all))
    pointwise_ok = bool(np.max(pt_all) <= Q * Q * (1 + 1e-10) + 1e-300)
    bound = Q * (math.sqrt(kappa) + 1.0)
    k_member = bool(pointwise_ok and np.all(h1_all + np.array(ds_all) <= bound * (1 + 1e-10) + 1e-300))
    early = h1_all[t_all <= 0.75 * T + 1e-12]
    sup_early = float(np.max(early)) if early.size else 0.0
    growth = (Q - sup_early) / sup_early if sup_early > 0 else 0.0

    rec = np.array(rows)
    times, E_lin = rec[:, 0], rec[:, 1]
    window = (times >= 0.25 * T) & (E_lin > 0)
    if window.sum() >= 10:
        beta, rms = fit_decay_rate(times[window], np.sqrt(E_lin[window]))
        prefactor = float(np.max(np.sqrt(E_lin) * np.exp(beta * times)))
    else:
        beta, rms, prefactor = float("nan"), float("nan"), float("nan")

    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "E_linear", "E_forced_H1", "residual_split", "Theta_nu", "Upsilon_nu"])
            for row in rows:
                wr.writerow([f"{v:.17g}" for v in row])

    decay = DecayReport(times, E_lin, beta, rms, prefactor)
    reg = RegularityReport(
        Q=Q, sup_ds_zeta_M1=sup_ds, pointwise_ok=pointwise_ok, k_eps_member=k_member,
        final_quarter_growth=float(growth), split_residual_max=float(np.max(res_all)), split_tolerance=tol,
        nu=nu, series={"t": rec[:, 0], "E_linear": rec[:, 1], "E_forced_H1": rec[:, 2],
                       "residual_split": rec[:, 3], "Theta_nu": rec[:, 4], "Upsilon_nu": rec[:, 5]},
    )
    return decay, reg
