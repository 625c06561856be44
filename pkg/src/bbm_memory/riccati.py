"""Scalar Riccati comparison machinery for ``L' + 2bL <= c + aL^2``.

With ``y = sqrt(a/c) L`` and ``tau = sqrt(ac) t`` the extremal equation
becomes ``y' = 1 - 2 rho y + y^2``, ``rho = b / sqrt(ac)``, so every
verification runs on the normalized form with a fixed step and is mapped
back afterwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

BLOWUP_FACTOR = 1e8
TAU_STEP = 1e-3
TOL = 1e-9
BLOWUP_CHECK = 8  # steps between blow-up scans (time resolution of the estimate)


def t_rho(rho: float) -> float:
    """Contraction time (normalized units) for ``rho > 1``."""
    if not rho > 1.0:
        raise ValidationError(f"need rho > 1, got {rho}")
    r = rho + math.sqrt(rho * rho - 1.0)
    num = r + 1.0 - 2.0 * rho
    return math.log(num / (4.0 * rho * r * (rho - 1.0) + num)) / (2.0 * rho - 1.0 - r)


def t_rho_residual(rho: float, t: float | None = None) -> float:
    """Residual of ``(2rho-1-1/r) e^{(2rho-1-r)t} = 1/(2rho-1) - 1/r``."""
    t = t_rho(rho) if t is None else t
    r = rho + math.sqrt(rho * rho - 1.0)
    return (2 * rho - 1 - 1 / r) * math.exp((2 * rho - 1 - r) * t) - (1 / (2 * rho - 1) - 1 / r)


@dataclass(frozen=True)
class RiccatiParams:
    a: float
    b: float
    c: float
    rho: float
    lambda_minus: float
    lambda_plus: float
    r: float
    t_rho: float

    @property
    def scale(self) -> float:
        """``sqrt(c/a)``: the L-value of ``y = 1``."""
        return math.sqrt(self.c / self.a)

    @property
    def rate(self) -> float:
        """``sqrt(ac)``: time is ``tau / rate``."""
        return math.sqrt(self.a * self.c)

    @property
    def deadline(self) -> float:
        """``t_rho / sqrt(ac)`` in original time."""
        return self.t_rho / self.rate

    def horizon(self) -> float:
        return max(10.0 * self.deadline, 100.0 / self.b)

    def rhs(self, L):
        return self.c - 2.0 * self.b * L + self.a * L * L


def derive(a: float, b: float, c: float) -> RiccatiParams:
    if not (a > 0 and b > 0 and c > 0):
        raise ValidationError("Riccati parameters must be positive")
    rho = b / math.sqrt(a * c)
    if not rho > 1.0:
        raise ValidationError(f"constraint rho = b/sqrt(ac) > 1 violated (rho = {rho})")
    root = math.sqrt(rho * rho - 1.0)
    s = math.sqrt(c / a)
    # the small root in the cancellation-free form c / (a lambda_plus)
    lam_plus = s * (rho + root)
    lam_minus = s / (rho + root)
    t = t_rho(rho)
    if not t > 0 or abs(t_rho_residual(rho, t)) > 1e-10:
        raise ValidationError(f"t_rho failed its defining equation for rho = {rho}")
    return RiccatiParams(a, b, c, rho, lam_minus, lam_plus, rho + root, t)


# ---------------------------------------------------------------------------
# normalized batch oracle


def _rk4(rho, y0, n_steps, h, y_plus, keep_every=1, deadline=None):
    """Classical RK4 for ``y' = 1 - 2 rho y + y^2`` on arrays.

    Keeps every ``keep_every``-th sample plus running suprema (overall and
    after ``deadline``). Blown-up entries are frozen at ``+inf``.
    """
    rho = np.asarray(rho, dtype=float)
    y = np.array(y0, dtype=float)
    two_rho = 2.0 * rho
    cap = BLOWUP_FACTOR * y_plus
    deadline = np.full(y.shape, np.inf) if deadline is None else np.asarray(deadline, dtype=float)
    kept = [y.copy()]
    sup = y.copy()
    late = deadline <= 0.0
    sup_late = np.where(late, y, -np.inf)
    # steps at which some entry passes its deadline
    switch = set(np.ceil(deadline[np.isfinite(deadline)] / h).astype(int).tolist())
    blow_step = np.full(y.shape, -1)
    half, sixth = 0.5 * h, h / 6.0
    with np.errstate(invalid="ignore", over="ignore"):
        for n in range(1, n_steps + 1):
            k1 = 1.0 - y * (two_rho - y)
            t = y + half * k1
            k2 = 1.0 - t * (two_rho - t)
            t = y + half * k2
            k3 = 1.0 - t * (two_rho - t)
            t = y + h * k3
            k4 = 1.0 - t * (two_rho - t)
            y = y + sixth * (k1 + 2.0 * (k2 + k3) + k4)
            np.maximum(sup, y, out=sup)
            if n in switch or n - 1 in switch:
                late = n * h >= deadline
            np.maximum(sup_late, y, out=sup_late, where=late)
            if n % BLOWUP_CHECK == 0 or n == n_steps:
                bad = ~(y <= cap)
                if bad.any():
                    blow_step[bad & (blow_step < 0)] = n
                    y[bad] = np.inf
                    sup[bad] = np.inf
            if n % keep_every == 0:
                kept.append(y.copy())
    return np.array(kept), sup, sup_late, blow_step


def worst_case_batch(rho, y0, tau_final: float, h: float = TAU_STEP, rtol: float = 1e-10,
                     max_halvings: int = 4, deadline=None, keep_every: int = 2):
    """Normalized extremal trajectories with step-halving acceptance.

    A run at step ``h`` is accepted when its kept samples agree to ``rtol``
    (relative, floor 1) with a run at ``2h``; otherwise ``h`` is halved and
    the test repeated. Returns a dict with ``tau`` and ``Y`` (kept samples),
    ``sup``, ``sup_late`` (after ``deadline``), ``blow_tau`` (NaN for bounded
    trajectories), the accepted step ``h`` and the acceptance error.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    y0 = np.broadcast_to(np.asarray(y0, dtype=float), rho.shape)
    y_plus = rho + np.sqrt(rho * rho - 1.0)
    keep_every += keep_every % 2
    n = max(2, 2 * int(math.ceil(tau_final / (2 * h))))
    h = tau_final / n
    coarse = _rk4(rho, y0, n // 2, 2 * h, y_plus, keep_every // 2, deadline)
    fine = coarse
    for attempt in range(max_halvings + 1):
        if attempt:
            coarse, n, h, keep_every = fine, 2 * n, 0.5 * h, 2 * keep_every
        fine = _rk4(rho, y0, n, h, y_plus, keep_every, deadline)
        # compare only trajectories that stay bounded in both runs
        bounded = (coarse[3] < 0) & (fine[3] < 0)
        a, b = coarse[0][:, bounded], fine[0][:, bounded]
        err = float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if b.size else 0.0
        if err <= rtol:
            break
    Y, sup, sup_late, blow = fine
    tau = h * keep_every * np.arange(Y.shape[0])
    return {"tau": tau, "Y": Y, "sup": sup, "sup_late": sup_late,
            "blow_tau": np.where(blow >= 0, blow * h, np.nan), "h": h, "acceptance_error": err}


@dataclass
class WorstCase:
    times: np.ndarray
    L: np.ndarray
    blew_up: bool
    blowup_time: float | None


def integrate_worst_case(p: RiccatiParams, L0: float, T: float | None = None, dt: float | None = None) -> WorstCase:
    """Solve ``L' = c - 2bL + aL^2`` from ``L0`` (the comparison solution)."""
    T = p.horizon() if T is None else T
    h = TAU_STEP if dt is None else min(TAU_STEP, dt * p.rate)
    if dt is not None and not dt > 0:
        raise ValidationError("dt must be positive")
    out = worst_case_batch([p.rho], [L0 / p.scale], T * p.rate, h)
    bt = out["blow_tau"][0]
    blew = bool(np.isfinite(bt))
    return WorstCase(out["tau"] / p.rate, out["Y"][:, 0] * p.scale, blew, float(bt / p.rate) if blew else None)


def verify_barrier(p: RiccatiParams, lam: float, L0: float, T: float | None = None) -> dict:
    """Barrier lemma: ``L(0) <= lam`` with ``lam`` in ``(lambda_-, lambda_+)`` keeps ``L <= lam``."""
    if not (p.lambda_minus < lam < p.lambda_plus):
        raise ValidationError(f"lam = {lam} must lie in ({p.lambda_minus}, {p.lambda_plus})")
    if L0 > lam:
        raise ValidationError("need L0 <= lam")
    wc = integrate_worst_case(p, L0, T)
    sup = float(np.max(wc.L))
    return {"passed": bool(not wc.blew_up and sup <= lam + TOL), "sup": sup, "lam": lam}


def verify_contraction(p: RiccatiParams, T: float | None = None) -> dict:
    """Contraction lemma: from ``sqrt(c/a)(2rho-1)`` the solution is below
    ``sqrt(c/a)/(2rho-1)`` for all ``t >= t_rho/sqrt(ac)``."""
    L0 = p.scale * (2 * p.rho - 1)
    thr = p.scale / (2 * p.rho - 1)
    wc = integrate_worst_case(p, L0, T)
    late = wc.times >= p.deadline
    sup_late = float(np.max(wc.L[late])) if late.any() else float("nan")
    return {"passed": bool(not wc.blew_up and sup_late <= thr + TOL), "sup_after_deadline": sup_late,
            "threshold": thr, "deadline": p.deadline}


def random_params(rng: np.random.Generator, n: int, rho_range=(1.01, 5.0)):
    """Random admissible ``(a, b, c)``: log-uniform ``a, c`` and ``rho`` in ``rho_range``."""
    a = np.exp(rng.uniform(math.log(0.1), math.log(10.0), n))
    c = np.exp(rng.uniform(math.log(0.1), math.log(10.0), n))
    rho = rng.uniform(*rho_range, n)
    return a, rho * np.sqrt(a * c), c


def lemma_sweep(rng: np.random.Generator, n: int = 200) -> dict:
    """Barrier and contraction lemmas on ``n`` random draws each.

    Barrier draws take ``lam`` uniformly inside ``(lambda_-, lambda_+)`` and
    ``L0`` uniformly in ``[0, lam]``; contraction draws start from
    ``sqrt(c/a)(2 rho - 1)``. All ``2n`` extremal solutions are integrated
    as one vectorized batch in normalized variables.
    """
    pb = [derive(*t) for t in zip(*random_params(rng, n))]
    pc = [derive(*t) for t in zip(*random_params(rng, n))]
    rb = np.array([p.rho for p in pb])
    rc = np.array([p.rho for p in pc])
    ym = np.array([p.lambda_minus / p.scale for p in pb])
    yp = np.array([p.lambda_plus / p.scale for p in pb])
    lam_y = ym + rng.uniform(0.01, 0.99, n) * (yp - ym)
    y0_b = lam_y * rng.uniform(0.0, 1.0, n)
    y0_c = 2 * rc - 1
    ps = pb + pc
    tau_final = max(max(10 * p.t_rho, 100 / p.rho) for p in ps)
    deadline = np.concatenate([np.full(n, np.inf), [p.t_rho for p in pc]])
    out = worst_case_batch(np.concatenate([rb, rc]), np.concatenate([y0_b, y0_c]), tau_final,
                           deadline=deadline, keep_every=1000)
    tol_y = TOL / np.array([p.scale for p in ps])
    bounded = np.isnan(out["blow_tau"])
    ok_b = bounded[:n] & (out["sup"][:n] <= lam_y + tol_y[:n])
    ok_c = bounded[n:] & (out["sup_late"][n:] <= 1 / (2 * rc - 1) + tol_y[n:])
    return {
        "n": n,
        "barrier_passed": int(ok_b.sum()),
        "contraction_passed": int(ok_c.sum()),
        "all_passed": bool(ok_b.all() and ok_c.all()),
    }
