"""Memory kernels and the history variable eta^t(s).

Two history backends are provided:

``QuadratureHistory``
    eta and its s-derivative stored on a uniform s-grid whose spacing divides
    the time step, so that transport ``eta_t = -eta_s + u`` is an exact shift.
    Between nodes eta is reconstructed by cubic Hermite interpolation, which
    is exact for the piecewise-quadratic histories produced by a
    piecewise-linear input ``u``.

``MarkovianHistory``
    Prony kernels only. Keeps the first moments ``psi_i = d_i int e^{-d_i s}
    eta ds`` (so that ``psi_i' = -d_i psi_i + u``) and the diagonal second
    moments ``q_i = int e^{-d_i s} eta(s)^2 ds``, which is enough to evaluate
    every weighted norm and the dissipation exactly.

Both backends advance exactly under the assumption that ``u`` is linear in
time across a step; the only difference between them is s-quadrature.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigError, UnsupportedQuery, ValidationError

TAIL_MASS = 1e-12
BACKENDS = ("quadrature", "markovian")
_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)
_GL_T = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class Kernel:
    """Memory kernel normalized to ``int s mu(s) ds = 1``.

    ``prony``: ``mu(s) = sum_i weights[i] exp(-rates[i] s)``.
    ``truncated_linear``: ``mu(s) = m0 (1 - s/s0)^+``.
    """

    family: str
    weights: tuple = ()
    rates: tuple = ()
    m0: float = 0.0
    s0: float = 0.0
    delta: float = 0.0

    @property
    def kappa(self) -> float:
        if self.family == "prony":
            return float(sum(a / d for a, d in zip(self.weights, self.rates)))
        return 0.5 * self.m0 * self.s0

    @property
    def mu0(self) -> float:
        if self.family == "prony":
            return float(sum(self.weights))
        return self.m0

    @property
    def max_delta(self) -> float:
        if self.family == "prony":
            return float(min(self.rates))
        return 1.0 / self.s0

    @property
    def breakpoints(self) -> tuple:
        return (self.s0,) if self.family == "truncated_linear" else ()

    def mu(self, s):
        s = np.asarray(s, dtype=float)
        if self.family == "prony":
            out = np.zeros_like(s)
            for a, d in zip(self.weights, self.rates):
                out = out + a * np.exp(-d * s)
            return out
        return self.m0 * np.clip(1.0 - s / self.s0, 0.0, None)

    def dmu(self, s):
        """Analytic derivative ``mu'(s)``."""
        s = np.asarray(s, dtype=float)
        if self.family == "prony":
            out = np.zeros_like(s)
            for a, d in zip(self.weights, self.rates):
                out = out - a * d * np.exp(-d * s)
            return out
        return np.where(s < self.s0, -self.m0 / self.s0, 0.0)

    def tail_mass(self, S: float) -> float:
        """``int_S^inf mu``."""
        if self.family == "prony":
            return float(sum(a / d * math.exp(-d * S) for a, d in zip(self.weights, self.rates)))
        if S >= self.s0:
            return 0.0
        return 0.5 * self.m0 / self.s0 * (self.s0 - S) ** 2

    def cutoff(self, tol: float = TAIL_MASS) -> float:
        """Smallest ``S`` with tail mass below ``tol``."""
        if self.family == "truncated_linear":
            return self.s0
        if self.tail_mass(0.0) <= tol:
            return 0.0
        hi = 1.0
        while self.tail_mass(hi) > tol:
            hi *= 2.0
        return float(optimize.brentq(lambda S: self.tail_mass(S) - tol, 0.0, hi, xtol=1e-12))

    def to_dict(self) -> dict:
        if self.family == "prony":
            return {
                "family": "prony",
                "modes": [{"weight": a, "rate": d} for a, d in zip(self.weights, self.rates)],
                "delta": self.delta,
            }
        return {"family": "truncated_linear", "s0": self.s0, "delta": self.delta}

    @cached_property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def make_kernel(family: str, params: dict | None = None, delta_target: float | None = None) -> Kernel:
    """Build a normalized kernel and validate (M1)/(M2).

    ``prony`` params: ``{"modes": [{"rate": d, "weight": a}, ...]}`` (weights
    default to 1 and are rescaled so the first moment is 1).
    ``truncated_linear`` params: ``{"s0": s0}``.
    ``delta_target`` defaults to the largest admissible delta.
    """
    params = dict(params or {})
    if family == "prony":
        modes = params.pop("modes", None)
        if not modes:
            raise ValidationError("prony kernel needs at least one mode")
        rates, weights = [], []
        for i, m in enumerate(modes):
            extra = set(m) - {"rate", "weight"}
            if extra:
                raise ConfigError(f"kernel.modes[{i}]: unknown keys {sorted(extra)}")
            d = float(m["rate"])
            a = float(m.get("weight", 1.0))
            if not (d > 0.0 and a > 0.0 and math.isfinite(d) and math.isfinite(a)):
                raise ValidationError(f"kernel.modes[{i}]: rate and weight must be positive")
            rates.append(d)
            weights.append(a)
        moment = sum(a / d**2 for a, d in zip(weights, rates))
        weights = [a / moment for a in weights]
        k = Kernel("prony", weights=tuple(weights), rates=tuple(rates))
    elif family == "truncated_linear":
        s0 = float(params.pop("s0", 1.0))
        if not (s0 > 0.0 and math.isfinite(s0)):
            raise ValidationError("truncated_linear: s0 must be positive")
        k = Kernel("truncated_linear", m0=6.0 / s0**2, s0=s0)
    else:
        raise ConfigError(f"unknown kernel family {family!r}")
    if params:
        raise ConfigError(f"kernel: unknown keys {sorted(params)}")

    dmax = k.max_delta
    if delta_target is None:
        delta = dmax
    else:
        delta = float(delta_target)
        if not delta > 0.0:
            raise ValidationError("kernel: delta must be positive")
        if delta > dmax * (1.0 + 1e-14):
            raise ValidationError(
                f"kernel: requested delta={delta} exceeds the maximal admissible {dmax}"
            )
    return Kernel(k.family, k.weights, k.rates, k.m0, k.s0, delta)


def kernel_from_config(block: dict) -> Kernel:
    block = dict(block)
    family = block.pop("family", "prony")
    delta = block.pop("delta", None)
    return make_kernel(family, block, delta)


def kernel_audit(k: Kernel) -> dict:
    """Moments of ``mu`` by adaptive quadrature, independent of the closed forms."""
    upper = k.s0 if k.family == "truncated_linear" else np.inf
    opts = dict(epsabs=1e-14, epsrel=1e-13, limit=200)
    kappa = integrate.quad(lambda s: float(k.mu(s)), 0.0, upper, **opts)[0]
    first = integrate.quad(lambda s: s * float(k.mu(s)), 0.0, upper, **opts)[0]
    # (M2) on a probe grid, with mu' analytic
    probe = np.linspace(0.0, 20.0 / k.max_delta, 4001)[1:]
    dafermos = float(np.max(k.dmu(probe) + k.delta * k.mu(probe)))
    return {
        "kappa": kappa,
        "first_moment": first,
        "mu0": float(k.mu(0.0)),
        "delta": k.delta,
        "dafermos_max": dafermos,
    }


# ---------------------------------------------------------------------------
# quadrature backend

# cubic Hermite basis on [0, 1]: values at (eta_j, h r_j, eta_{j+1}, h r_{j+1})
def _hermite(t):
    t2, t3 = t * t, t * t * t
    return np.stack([2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t, -2 * t3 + 3 * t2, t3 - t2])


def _hermite_dt(t):
    t2 = t * t
    return np.stack([6 * t2 - 6 * t, 3 * t2 - 4 * t + 1, -6 * t2 + 6 * t, 3 * t2 - 2 * t])


@dataclass(frozen=True)
class SGrid:
    """Uniform s-grid ``s_j = j h``, ``j = 0..J``, with precomputed product weights."""

    kernel: Kernel
    h: float
    J: int

    @classmethod
    def for_step(cls, kernel: Kernel, dt: float, substeps: int = 1) -> "SGrid":
        h = dt / substeps
        S = kernel.cutoff()
        J = max(int(math.ceil(S / h - 1e-9)), substeps + 1)
        return cls(kernel, h, J)

    @cached_property
    def s(self) -> np.ndarray:
        return self.h * np.arange(self.J + 1)

    def _interval_rule(self):
        """Flat quadrature nodes: (interval index, local t, weight)."""
        J, h = self.J, self.h
        jj = np.repeat(np.arange(J), _GL_T.size)
        tt = np.tile(_GL_T, J)
        ww = np.tile(_GL_W, J) * h
        for bp in self.kernel.breakpoints:
            j = int(bp // h)
            if j >= J:
                continue
            tb = bp / h - j
            if tb <= 1e-12 or tb >= 1 - 1e-12:
                continue
            keep = jj != j
            jj, tt, ww = jj[keep], tt[keep], ww[keep]
            for lo, hi in ((0.0, tb), (tb, 1.0)):
                jj = np.concatenate([jj, np.full(_GL_T.size, j)])
                tt = np.concatenate([tt, lo + (hi - lo) * _GL_T])
                ww = np.concatenate([ww, (hi - lo) * _GL_W * h])
        return jj, tt, ww

    def _gram(self, weight_fn, derivative: bool = False):
        jj, tt, ww = self._interval_rule()
        s = (jj + tt) * self.h
        w = ww * weight_fn(s)
        phi = _hermite_dt(tt) / self.h if derivative else _hermite(tt)
        scale = np.array([1.0, self.h, 1.0, self.h])
        phi = phi * scale[:, None]
        G = np.zeros((self.J, 4, 4))
        for a in range(4):
            for b in range(a, 4):
                v = np.bincount(jj, weights=w * phi[a] * phi[b], minlength=self.J)
                G[:, a, b] = v
                G[:, b, a] = v
        g = np.zeros((self.J, 4))
        for a in range(4):
            g[:, a] = np.bincount(jj, weights=w * phi[a], minlength=self.J)
        return G, g

    @cached_property
    def mass(self):
        """(Gram, linear) weights of ``mu``."""
        return self._gram(self.kernel.mu)

    @cached_property
    def dissipation(self):
        return self._gram(lambda s: -self.kernel.dmu(s))

    @cached_property
    def slope(self):
        return self._gram(self.kernel.mu, derivative=True)

    @cached_property
    def tail(self) -> float:
        return self.kernel.tail_mass(self.s[-1])

    def _node_weights(self, g, tail):
        P = np.zeros(self.J + 1)
        Rr = np.zeros(self.J + 1)
        Rl = np.zeros(self.J + 1)
        P[:-1] += g[:, 0]
        Rr[:-1] += g[:, 1]
        P[1:] += g[:, 2]
        Rl[1:] += g[:, 3]
        P[-1] += tail
        return P, Rr, Rl

    @cached_property
    def node_weights(self):
        """``(P, Rr, Rl)`` with ``int mu eta = sum_j P_j eta_j + Rr_j r+_j + Rl_j r-_j``."""
        return self._node_weights(self.mass[1], self.tail)

    @cached_property
    def dissipation_node_weights(self):
        """Same as ``node_weights`` for the weight ``-mu'``."""
        return self._node_weights(self.dissipation[1], float(self.kernel.mu(self.s[-1])))


def _rowdot(X, Y, wvec):
    return np.einsum("jk,jk->j", X * wvec, Y)


def _quadratic_form(G, eta, right, left, wvec, tail_coef):
    """``sum_j sum_ab G_jab <X_a, X_b>_w`` with interval blocks
    ``X = (eta_j, right_j, eta_{j+1}, left_{j+1})``."""
    e0, e1 = eta[:-1], eta[1:]
    r0, l1 = right[:-1], left[1:]
    ee = _rowdot(eta, eta, wvec)
    total = (
        G[:, 0, 0] @ ee[:-1]
        + G[:, 2, 2] @ ee[1:]
        + G[:, 1, 1] @ _rowdot(r0, r0, wvec)
        + G[:, 3, 3] @ _rowdot(l1, l1, wvec)
        + 2 * G[:, 0, 1] @ _rowdot(e0, r0, wvec)
        + 2 * G[:, 2, 3] @ _rowdot(e1, l1, wvec)
        + 2 * G[:, 0, 2] @ _rowdot(e0, e1, wvec)
        + 2 * G[:, 0, 3] @ _rowdot(e0, l1, wvec)
        + 2 * G[:, 1, 2] @ _rowdot(r0, e1, wvec)
        + 2 * G[:, 1, 3] @ _rowdot(r0, l1, wvec)
    )
    return float(total + tail_coef * ee[-1])


class QuadratureHistory:
    """History on a uniform s-grid.

    ``eta``, ``right`` and ``left`` have shape ``(J+1, N)``: node values and the
    one-sided s-derivatives. They differ only at the node where the
    generated history meets the initial one (``s = t``).
    """

    backend = "quadrature"

    def __init__(self, grid: SGrid, eigenvalues, eta, right, left):
        self.grid = grid
        self.eigenvalues = eigenvalues
        self.eta = eta
        self.right = right
        self.left = left

    @classmethod
    def zeros(cls, kernel, eigenvalues, dt, substeps=1):
        grid = SGrid.for_step(kernel, dt, substeps)
        z = np.zeros((grid.J + 1, len(eigenvalues)))
        return cls(grid, np.asarray(eigenvalues, dtype=float), z, z.copy(), z.copy())

    @classmethod
    def from_function(cls, kernel, eigenvalues, dt, eta_fn, rate_fn=None, substeps=1):
        """History sampled from ``eta_fn(s) -> (len(s), N)``.

        ``rate_fn`` gives ``d eta/ds``; when omitted it is estimated from the
        node values by second-order differences.
        """
        grid = SGrid.for_step(kernel, dt, substeps)
        s = grid.s
        eta = np.array(eta_fn(s), dtype=float)
        if rate_fn is not None:
            rate = np.array(rate_fn(s), dtype=float)
        else:
            rate = np.gradient(eta, grid.h, axis=0, edge_order=2)
        eta[0] = 0.0
        return cls(grid, np.asarray(eigenvalues, dtype=float), eta, rate, rate.copy())

    @property
    def kernel(self) -> Kernel:
        return self.grid.kernel

    @property
    def N(self) -> int:
        return self.eta.shape[1]

    def copy(self) -> "QuadratureHistory":
        return QuadratureHistory(self.grid, self.eigenvalues, self.eta.copy(), self.right.copy(), self.left.copy())

    def resample(self, dt: float, substeps: int = 1) -> "QuadratureHistory":
        """Same history on the grid for step ``dt`` (Hermite interpolation between old nodes)."""
        grid = SGrid.for_step(self.kernel, dt, substeps)
        if grid == self.grid:
            return self.copy()
        s = grid.s
        h = self.grid.h
        pos = s / h
        j = np.minimum(np.floor(pos + 1e-9).astype(int), self.grid.J)
        t = np.clip(pos - j, 0.0, None)
        on_node = np.abs(pos - np.round(pos)) <= 1e-9
        j = np.where(on_node, np.round(pos).astype(int), j)
        t = np.where(on_node, 0.0, t)
        inside = j < self.grid.J
        jj = np.minimum(j, self.grid.J - 1)
        tt = np.where(inside, t, 1.0)
        X = (self.eta[jj], h * self.right[jj], self.eta[jj + 1], h * self.left[jj + 1])
        H, Hd = _hermite(tt), _hermite_dt(tt) / h
        eta = sum(H[a][:, None] * X[a] for a in range(4))
        rate = sum(Hd[a][:, None] * X[a] for a in range(4))
        right, left = rate.copy(), rate.copy()
        # old nodes keep their one-sided slopes; beyond the old grid extend by a constant
        node = on_node & (j <= self.grid.J)
        right[node] = self.right[j[node]]
        left[node] = self.left[j[node]]
        past = pos > self.grid.J + 1e-9
        eta[past] = self.eta[-1]
        right[past] = 0.0
        left[past] = 0.0
        return QuadratureHistory(grid, self.eigenvalues, eta, right, left)

    def _q(self, which, r):
        G, _ = getattr(self.grid, which)
        return G, self.eigenvalues ** (r + 1.0)

    def mean(self) -> np.ndarray:
        """``int mu(s) eta(s) ds``."""
        P, Rr, Rl = self.grid.node_weights
        return P @ self.eta + Rr @ self.right + Rl @ self.left

    def force(self) -> np.ndarray:
        """Memory force ``int mu A eta ds``."""
        return self.eigenvalues * self.mean()

    def dissipation_mean(self) -> np.ndarray:
        """``int -mu'(s) eta(s) ds`` (so that ``d/dt int mu eta = kappa u - this``)."""
        P, Rr, Rl = self.grid.dissipation_node_weights
        return P @ self.eta + Rr @ self.right + Rl @ self.left

    def norm_sq(self, r: float = 0.0) -> float:
        """``||eta||_{M^r}^2 = int mu ||eta(s)||_{r+1}^2``."""
        G, w = self._q("mass", r)
        return _quadratic_form(G, self.eta, self.right, self.left, w, self.grid.tail)

    def gamma(self, r: float = 0.0) -> float:
        """``-int mu'(s) ||eta(s)||_{r+1}^2`` (``r = 1`` gives ``Gamma[A^{1/2} eta]``)."""
        G, w = self._q("dissipation", r)
        tail = float(self.kernel.mu(self.grid.s[-1]))
        return _quadratic_form(G, self.eta, self.right, self.left, w, tail)

    def ds_norm_sq(self, r: float = 0.0) -> float:
        """``||d_s eta||_{M^r}^2``."""
        G, w = self._q("slope", r)
        return _quadratic_form(G, self.eta, self.right, self.left, w, 0.0)

    def pointwise_norm_sq(self, r: float = 0.0):
        """Nodes ``s_j`` and ``||eta(s_j)||_{r+1}^2``."""
        return self.grid.s, _rowdot(self.eta, self.eta, self.eigenvalues ** (r + 1.0))

    def _substeps(self, dt):
        m = int(round(dt / self.grid.h))
        if m < 1 or abs(m * self.grid.h - dt) > 1e-9 * dt:
            raise ConfigError(f"dt={dt} is not an integer multiple of the s-spacing {self.grid.h}")
        return m

    def plan(self, dt: float):
        """Affine map ``(u0, u1) -> mean after one step`` as ``(base, alpha, beta)``."""
        m = self._substeps(dt)
        P, Rr, Rl = self.grid.node_weights
        # node m joins the new segment (left slope u0) to the shifted node 0
        base = P[m:] @ self.eta[:-m] + Rr[m:] @ self.right[:-m] + Rl[m + 1:] @ self.left[1:-m]
        sm = self.grid.s[:m]
        Pm = P[m:].sum()
        alpha = 0.5 * dt * Pm + float(np.sum(P[:m] * sm * sm / (2 * dt) + (Rr[:m] + Rl[:m]) * sm / dt)) + Rl[m]
        beta = 0.5 * dt * Pm + float(np.sum(P[:m] * (sm - sm * sm / (2 * dt)) + (Rr[:m] + Rl[:m]) * (1 - sm / dt)))
        return base, alpha, beta

    def advance(self, u0, u1, dt: float) -> "QuadratureHistory":
        """Exact transport for ``u`` linear in time between ``u0`` and ``u1``."""
        m = self._substeps(dt)
        u0 = np.asarray(u0, dtype=float)
        u1 = np.asarray(u1, dtype=float)
        eta = np.empty_like(self.eta)
        right = np.empty_like(self.right)
        left = np.empty_like(self.left)
        eta[m:] = self.eta[:-m] + (0.5 * dt) * (u0 + u1)
        right[m:] = self.right[:-m]
        left[m + 1:] = self.left[1:-m]
        left[m] = u0
        sm = self.grid.s[:m, None]
        du = u1 - u0
        eta[:m] = sm * u1 - (sm * sm / (2 * dt)) * du
        right[:m] = u1 - (sm / dt) * du
        left[:m] = right[:m]
        return QuadratureHistory(self.grid, self.eigenvalues, eta, right, left)

    def combine(self, other, a: float = 1.0, b: float = 1.0) -> "QuadratureHistory":
        """``a * self + b * other`` (same grid)."""
        if other.grid != self.grid:
            raise ConfigError("histories live on different s-grids")
        return QuadratureHistory(
            self.grid, self.eigenvalues,
            a * self.eta + b * other.eta, a * self.right + b * other.right, a * self.left + b * other.left,
        )

    def scaled(self, c: float) -> "QuadratureHistory":
        return self.combine(self, c, 0.0)

    def difference_norm_sq(self, other, r: float = 0.0) -> float:
        return self.combine(other, 1.0, -1.0).norm_sq(r)

    def arrays(self) -> dict:
        return {"eta": self.eta, "right": self.right, "left": self.left}

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.eta).all() and np.isfinite(self.right).all() and np.isfinite(self.left).all())


# ---------------------------------------------------------------------------
# markovian backend


def _phi(d, tau):
    """``phi1 = int_0^tau e^{-d(tau-s)} ds``, ``phi2 = int_0^tau e^{-d(tau-s)} s ds``."""
    em = np.expm1(-d * tau)
    phi1 = -em / d
    phi2 = (tau + em / d) / d
    return phi1, phi2


class MarkovianHistory:
    """Exact moment representation for Prony kernels.

    ``psi[i]`` and ``q[i]`` have shape ``(N,)`` for each kernel mode ``i``.
    """

    backend = "markovian"

    def __init__(self, kernel: Kernel, eigenvalues: np.ndarray, psi: np.ndarray, q: np.ndarray):
        if kernel.family != "prony":
            raise ConfigError("the markovian backend needs a prony kernel")
        self.kernel = kernel
        self.eigenvalues = eigenvalues
        self.psi = psi
        self.q = q
        self._a = np.array(kernel.weights)[:, None]
        self._d = np.array(kernel.rates)[:, None]

    @classmethod
    def zeros(cls, kernel, eigenvalues, dt=None, substeps=1):
        n = len(kernel.rates)
        N = len(eigenvalues)
        return cls(kernel, np.asarray(eigenvalues, dtype=float), np.zeros((n, N)), np.zeros((n, N)))

    @classmethod
    def from_quadrature(cls, h: QuadratureHistory) -> "MarkovianHistory":
        """Moments of a gridded history, integrated with the grid's Hermite rule."""
        k = h.kernel
        one = np.ones(1)
        psi, q = [], []
        for d in k.rates:
            g = SGrid(Kernel("prony", weights=(1.0,), rates=(d,), delta=d), h.grid.h, h.grid.J)
            P, Rr, Rl = g.node_weights
            psi.append(d * (P @ h.eta + Rr @ h.right + Rl @ h.left))
            G, _ = g.mass
            q.append([
                _quadratic_form(G, h.eta[:, [i]], h.right[:, [i]], h.left[:, [i]], one, g.tail)
                for i in range(h.N)
            ])
        return cls(k, h.eigenvalues, np.array(psi), np.array(q))

    @property
    def N(self) -> int:
        return self.psi.shape[1]

    def copy(self):
        return MarkovianHistory(self.kernel, self.eigenvalues, self.psi.copy(), self.q.copy())

    def mean(self) -> np.ndarray:
        return np.sum(self._a / self._d * self.psi, axis=0)

    def force(self) -> np.ndarray:
        return self.eigenvalues * self.mean()

    def dissipation_mean(self) -> np.ndarray:
        return np.sum(self._a * self.psi, axis=0)

    def norm_sq(self, r: float = 0.0) -> float:
        return float(np.sum(self._a * self.q * self.eigenvalues ** (r + 1.0)))

    def gamma(self, r: float = 0.0) -> float:
        return float(np.sum(self._a * self._d * self.q * self.eigenvalues ** (r + 1.0)))

    def ds_norm_sq(self, r: float = 0.0) -> float:
        raise UnsupportedQuery("markovian history stores moments only; d_s eta is not available")

    def pointwise_norm_sq(self, r: float = 0.0):
        raise UnsupportedQuery("markovian history stores moments only; eta(s) is not available")

    def plan(self, dt: float):
        E = np.exp(-self._d * dt)
        phi1, phi2 = _phi(self._d, dt)
        c = self._a / self._d
        base = np.sum(c * E * self.psi, axis=0)
        alpha = float(np.sum(c * (phi1 - phi2 / dt)))
        beta = float(np.sum(c * phi2 / dt))
        return base, alpha, beta

    def advance(self, u0, u1, dt: float) -> "MarkovianHistory":
        u0 = np.asarray(u0, dtype=float)
        u1 = np.asarray(u1, dtype=float)
        d = self._d
        du = (u1 - u0) / dt

        def psi_at(tau):
            phi1, phi2 = _phi(d, tau)
            return np.exp(-d * tau) * self.psi + phi1 * u0 + phi2 * du

        # q' = -d q + (2/d) u psi, integrated with Gauss-Legendre against the exact psi(tau)
        q = np.exp(-d * dt) * self.q
        for t, w in zip(_GL_T, _GL_W):
            tau = t * dt
            u = u0 + du * tau
            q = q + (w * dt) * np.exp(-d * (dt - tau)) * (2.0 / d) * u * psi_at(tau)
        return MarkovianHistory(self.kernel, self.eigenvalues, psi_at(dt), q)

    def scaled(self, c: float) -> "MarkovianHistory":
        return MarkovianHistory(self.kernel, self.eigenvalues, c * self.psi, c * c * self.q)

    def combine(self, other, a: float = 1.0, b: float = 1.0):
        raise UnsupportedQuery("second moments of a sum need the cross moments; use the quadrature backend")

    def difference_norm_sq(self, other, r: float = 0.0) -> float:
        raise UnsupportedQuery("markovian histories cannot form differences; use the quadrature backend")

    def resample(self, dt: float, substeps: int = 1) -> "MarkovianHistory":
        return self.copy()

    def arrays(self) -> dict:
        return {"psi": self.psi, "q": self.q}

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.psi)) and np.all(np.isfinite(self.q)))


def make_history(kernel: Kernel, eigenvalues, dt: float, backend: str = "quadrature", substeps: int = 1):
    """Zero history for the requested backend."""
    if backend == "quadrature":
        return QuadratureHistory.zeros(kernel, eigenvalues, dt, substeps)
    if backend == "markovian":
        return MarkovianHistory.zeros(kernel, eigenvalues, dt)
    raise ConfigError(f"unknown history backend {backend!r}")
