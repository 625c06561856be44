"""Ensembles of trajectories as empirical evidence for the global attractor.

Clouds are finite lists of states sampled at a common time; distances are
the phase-space norm ``||z1 - z2||_H`` (history differences need the
quadrature backend).
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import State, StepperConfig, step
from .errors import ConfigError, InadmissibleForce, ValidationError
from .functionals import admissibility, d_eps_contains, eps_for_bounded_set
from .memory import make_history
from .spectral import Domain, ForceData


@dataclass
class PointCloud:
    states: list

    def __post_init__(self):
        if not self.states:
            raise ValidationError("a point cloud needs at least one state")
        ref = self.states[0]
        for z in self.states[1:]:
            if z.u.shape != ref.u.shape or z.eta.backend != ref.eta.backend:
                raise ValidationError("point cloud states use different discretizations")
            if getattr(z.eta, "grid", None) != getattr(ref.eta, "grid", None):
                raise ValidationError("point cloud states use different s-grids")

    def __len__(self):
        return len(self.states)

    def diameter(self) -> float:
        return float(np.max(distance_matrix(self, self)))

    def max_h1(self) -> float:
        return max(z.h1_norm() for z in self.states)

    def max_norm(self) -> float:
        return max(z.h_norm() for z in self.states)


def _as_cloud(c) -> PointCloud:
    return c if isinstance(c, PointCloud) else PointCloud(list(c))


def distance_matrix(c1, c2) -> np.ndarray:
    c1, c2 = _as_cloud(c1), _as_cloud(c2)
    PointCloud(c1.states[:1] + c2.states[:1])  # discretization check
    return np.array([[a.distance(b) for b in c2.states] for a in c1.states])


def semidistance(c1, c2) -> float:
    """``sup_{z1 in c1} inf_{z2 in c2} ||z1 - z2||_H`` (not symmetric)."""
    return float(np.max(np.min(distance_matrix(c1, c2), axis=1)))


def hausdorff(c1, c2) -> float:
    D = distance_matrix(c1, c2)
    return float(max(np.max(np.min(D, axis=1)), np.max(np.min(D, axis=0))))


def sample_velocity(domain: Domain, rng: np.random.Generator, target: float) -> np.ndarray:
    """``coeffs[k] ~ xi_k / k^2`` with ``xi_k`` uniform on ``[-1, 1]``, scaled to ``|||u|||_1 = target``."""
    u = rng.uniform(-1.0, 1.0, domain.N) / domain.k**2
    return u * (target / domain.triple_norm(u, 1.0))


def _run_member(args):
    z, cfg, force, checkpoints = args
    out = []
    cur = z
    n_done = 0
    for n_target in checkpoints:
        while n_done < n_target:
            cur = step(cur, cfg, force)
            n_done += 1
        out.append(cur.copy())
    return out


def attractor_ensemble(domain: Domain, kernel, force: ForceData, constants, M: int, T: float, dt: float,
                       radii=(40.0, 120.0), checkpoints=None, seed: int = 0, backend: str = "quadrature",
                       workers: int = 1) -> dict:
    """Evolve ``M`` members split evenly over the sublevel sets ``D_eps`` of the given radii.

    Member ``i`` of level ``R`` starts from zero history with velocity norm
    drawn uniformly in ``[R/2, R]``. Returns cloud diameters at every
    checkpoint, ``delta(cloud_T, cloud_{T/2})``, the cross-level Hausdorff
    distance at ``T``, the largest final H^1 norm and the largest final
    norm (collapse check for ``f = 0``).
    """
    if M < 2:
        raise ValidationError("an ensemble needs M >= 2 members")
    if backend != "quadrature":
        raise ConfigError("ensemble distances need the quadrature history backend")
    report = admissibility(constants, force)
    if not report.admissible:
        raise InadmissibleForce(report)
    cfg = StepperConfig(dt, "imex2", T, 1)
    n_total = cfg.n_steps
    if checkpoints is None:
        checkpoints = [0.0, 0.25 * T, 0.5 * T, 0.75 * T, T]
    checkpoints = sorted(set(float(c) for c in checkpoints) | {0.0, 0.5 * T, T})
    steps = [int(round(c / dt)) for c in checkpoints]
    if any(abs(n * dt - c) > 1e-9 * max(1.0, c) for n, c in zip(steps, checkpoints)) or steps[-1] != n_total:
        raise ConfigError("ensemble checkpoints must be multiples of dt within [0, T]")

    rng = np.random.default_rng(seed)
    radii = tuple(float(r) for r in radii)
    levels, members, eps_levels = [], [], []
    for i, R in enumerate(radii):
        eps = eps_for_bounded_set(R, report, kernel.kappa)
        eps_levels.append(eps)
        for _ in range(M // len(radii) + (1 if i < M % len(radii) else 0)):
            u = sample_velocity(domain, rng, R * rng.uniform(0.5, 1.0))
            z = State(u, make_history(kernel, domain.eigenvalues, dt, backend), 0.0)
            if not d_eps_contains(z, eps, report, force):
                raise ValidationError(f"sampled state outside D_eps for radius {R}")
            members.append(z)
            levels.append(i)

    jobs = [(z, cfg, force, steps) for z in members]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_member, jobs))
    else:
        results = [_run_member(j) for j in jobs]

    clouds = [PointCloud([r[k] for r in results]) for k in range(len(steps))]
    diam = [c.diameter() for c in clouds]
    half = checkpoints.index(0.5 * T)
    final = clouds[-1]
    levels = np.array(levels)
    by_level = [PointCloud([z for z, l in zip(final.states, levels) if l == i]) for i in range(len(radii))]
    cross = max((hausdorff(by_level[i], by_level[j]) for i in range(len(radii)) for j in range(i + 1, len(radii))),
                default=0.0)
    return {
        "M": M,
        "T": T,
        "dt": dt,
        "radii": list(radii),
        "eps_levels": eps_levels,
        "admissibility": report.to_dict(),
        "checkpoints": checkpoints,
        "diameter": diam,
        "diameter_ratio": diam[-1] / diam[0] if diam[0] > 0 else 0.0,
        "attraction": semidistance(final, clouds[half]),
        "cross_level": cross,
        "cross_level_ratio": cross / diam[0] if diam[0] > 0 else 0.0,
        "max_h1_final": final.max_h1(),
        "max_norm_final": final.max_norm(),
        "final_cloud": final,
    }
