"""Dirichlet sine-basis discretization of an interval.

Fields are plain coefficient vectors ``c`` in the orthonormal basis

    e_k(x) = sqrt(2/L) sin(k pi (x - a) / L),   k = 1..N,   L = b - a,

so that every L2-type inner product is a dot product of coefficients and the
operators ``A = -d^2/dx^2`` and ``B = I + A`` are diagonal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft

from .errors import ConfigError


@dataclass(frozen=True)
class Domain:
    """Interval ``(a, b)`` with ``N`` retained sine modes.

    ``Ngrid`` interior points are used for pseudospectral products; the
    default ``ceil(3N/2)`` is the smallest grid on which the quadratic term
    is alias free.
    """

    a: float = 0.0
    b: float = math.pi
    N: int = 32
    Ngrid: int | None = None

    def __post_init__(self):
        if not (self.b > self.a):
            raise ConfigError(f"domain: need b > a, got a={self.a}, b={self.b}")
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"domain: N must be a positive integer, got {self.N}")
        min_grid = math.ceil(1.5 * self.N)
        if self.Ngrid is None:
            object.__setattr__(self, "Ngrid", min_grid)
        elif self.Ngrid < min_grid:
            raise ConfigError(f"domain: Ngrid={self.Ngrid} < ceil(3N/2)={min_grid}")

    @property
    def length(self) -> float:
        return self.b - self.a

    @cached_property
    def k(self) -> np.ndarray:
        return np.arange(1, self.N + 1, dtype=float)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues ``(k pi / L)^2`` of ``A``."""
        return (self.k * math.pi / self.length) ** 2

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def omega(self) -> float:
        """Norm-equivalence constant ``sqrt((1 + lambda1) / lambda1)``."""
        return math.sqrt((1.0 + self.lambda1) / self.lambda1)

    @cached_property
    def x(self) -> np.ndarray:
        """Interior physical grid (``Ngrid`` points, endpoints excluded)."""
        j = np.arange(1, self.Ngrid + 1)
        return self.a + j * self.length / (self.Ngrid + 1)

    @cached_property
    def x_closed(self) -> np.ndarray:
        j = np.arange(0, self.Ngrid + 2)
        return self.a + j * self.length / (self.Ngrid + 1)

    @cached_property
    def ddx_matrix(self) -> np.ndarray:
        """Galerkin matrix ``D[j, k] = <e_j, e_k'>``; exactly skew-symmetric."""
        j = self.k[:, None]
        k = self.k[None, :]
        odd = ((j + k) % 2 == 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            D = np.where(odd, 4.0 * j * k / (self.length * (j * j - k * k)), 0.0)
        return D

    def zeros(self) -> np.ndarray:
        return np.zeros(self.N)

    def basis(self, k: int) -> np.ndarray:
        """Coefficient vector of ``e_k`` (1-based)."""
        c = self.zeros()
        c[k - 1] = 1.0
        return c

    # -- transforms -------------------------------------------------------

    def _check(self, c, n, what):
        c = np.asarray(c, dtype=float)
        if c.shape[-1] != n:
            raise ConfigError(f"{what}: expected length {n}, got {c.shape[-1]}")
        return c

    def to_grid(self, coeffs) -> np.ndarray:
        """Synthesis: sine coefficients -> samples on the interior grid."""
        c = self._check(coeffs, self.N, "to_grid")
        pad = np.zeros(c.shape[:-1] + (self.Ngrid,))
        pad[..., : self.N] = c
        return math.sqrt(2.0 / self.length) * 0.5 * fft.dst(pad, type=1, axis=-1)

    def from_grid(self, samples) -> np.ndarray:
        """Analysis: interior-grid samples -> first ``N`` sine coefficients."""
        s = self._check(samples, self.Ngrid, "from_grid")
        full = fft.dst(s, type=1, axis=-1) * (0.5 * math.sqrt(2.0 * self.length) / (self.Ngrid + 1))
        return full[..., : self.N]

    def transform(self, data, direction: str) -> np.ndarray:
        """``forward``: grid -> coefficients; ``inverse``: coefficients -> grid."""
        if direction == "forward":
            return self.from_grid(data)
        if direction == "inverse":
            return self.to_grid(data)
        raise ConfigError(f"transform: unknown direction {direction!r}")

    def derivative_on_grid(self, coeffs, closed: bool = False) -> np.ndarray:
        """Samples of ``u_x`` (a cosine series) on the interior grid.

        With ``closed=True`` the two endpoints are included.
        """
        c = self._check(coeffs, self.N, "derivative_on_grid")
        M = self.Ngrid
        x = np.zeros(c.shape[:-1] + (M + 2,))
        x[..., 1 : self.N + 1] = c * (self.k * math.pi / self.length)
        vals = math.sqrt(2.0 / self.length) * 0.5 * fft.dct(x, type=1, axis=-1)
        return vals if closed else vals[..., 1 : M + 1]

    # -- norms ------------------------------------------------------------

    def norm(self, coeffs, r: float = 0.0) -> float:
        """``||u||_r = ||A^{r/2} u||``."""
        c = np.asarray(coeffs, dtype=float)
        return float(math.sqrt(np.sum(self.eigenvalues**r * c * c)))

    def triple_norm(self, coeffs, r: float = 1.0) -> float:
        """``|||u|||_r^2 = ||u||_{r-1}^2 + ||u||_r^2``."""
        c = np.asarray(coeffs, dtype=float)
        lam = self.eigenvalues
        return float(math.sqrt(np.sum(lam ** (r - 1.0) * (1.0 + lam) * c * c)))

    def inner(self, u, v, r: float = 0.0) -> float:
        return float(np.sum(self.eigenvalues**r * np.asarray(u) * np.asarray(v)))

    def triple_inner(self, u, v, r: float = 1.0) -> float:
        """``(u, v)_r = <A^{(r-1)/2} B^{1/2} u, A^{(r-1)/2} B^{1/2} v>``."""
        lam = self.eigenvalues
        return float(np.sum(lam ** (r - 1.0) * (1.0 + lam) * np.asarray(u) * np.asarray(v)))

    def grid_l2(self, samples, closed: bool = False) -> float:
        """Trapezoidal L2 norm of grid samples (endpoint values zero unless ``closed``)."""
        s = np.asarray(samples, dtype=float)
        h = self.length / (self.Ngrid + 1)
        if closed:
            return float(math.sqrt(h * (np.sum(s * s) - 0.5 * (s[0] ** 2 + s[-1] ** 2))))
        return float(math.sqrt(h * np.sum(s * s)))

    # -- operators --------------------------------------------------------

    def apply(self, coeffs, which: str):
        """Apply ``A``, ``B``, ``B_inverse`` (coefficients) or ``ddx`` (grid samples)."""
        c = np.asarray(coeffs, dtype=float)
        lam = self.eigenvalues
        if which == "A":
            return lam * c
        if which == "B":
            return (1.0 + lam) * c
        if which == "B_inverse":
            return c / (1.0 + lam)
        if which == "ddx":
            return self.derivative_on_grid(c)
        raise ConfigError(f"apply: unknown operator {which!r}")

    def ddx_projected(self, coeffs) -> np.ndarray:
        """Sine-space projection of ``u_x``."""
        return self.ddx_matrix @ np.asarray(coeffs, dtype=float)

    def nonlinear_term(self, coeffs) -> np.ndarray:
        """Projection of ``u u_x`` computed on the dealiased grid."""
        c = np.asarray(coeffs, dtype=float)
        u = self.to_grid(c)
        ux = self.derivative_on_grid(c)
        return self.from_grid(u * ux)

    # -- forcing ----------------------------------------------------------

    def primitive_force(self, f) -> "ForceData":
        return ForceData.from_coeffs(self, f)


@dataclass(frozen=True)
class ForceData:
    """External force ``f`` together with its primitive ``F(x) = int_a^x f``.

    ``F`` does not vanish at ``b`` so it is never expanded in the sine basis;
    it is kept as samples on the closed grid, and pairings ``<F, v_x>`` with
    sine-space ``v`` are evaluated as ``-<f, v>``.
    """

    domain: Domain
    f: np.ndarray
    F_grid: np.ndarray
    normF: float

    @classmethod
    def from_coeffs(cls, domain: Domain, f) -> "ForceData":
        f = np.array(f, dtype=float)
        if f.shape != (domain.N,):
            raise ConfigError(f"force: expected {domain.N} coefficients, got {f.shape}")
        L = domain.length
        k = domain.k
        # int_a^x e_k = sqrt(2/L) L/(k pi) (1 - cos(k pi (x-a)/L)), exact on the grid
        theta = math.pi * (domain.x_closed - domain.a) / L
        amp = f * math.sqrt(2.0 / L) * L / (k * math.pi)
        F_grid = (1.0 - np.cos(np.outer(theta, k))) @ amp
        F_grid[0] = 0.0
        g = f / k
        normF_sq = 2.0 * L * L / math.pi**2 * (np.sum(g) ** 2 + 0.5 * np.sum(g * g))
        return cls(domain, f, F_grid, float(math.sqrt(max(normF_sq, 0.0))))

    @classmethod
    def zero(cls, domain: Domain) -> "ForceData":
        return cls.from_coeffs(domain, domain.zeros())

    @classmethod
    def scaled_to(cls, domain: Domain, shape, normF: float) -> "ForceData":
        """Force proportional to ``shape`` with ``||F|| = normF``."""
        base = cls.from_coeffs(domain, shape)
        if base.normF == 0.0:
            if normF == 0.0:
                return base
            raise ConfigError("force: cannot rescale a shape with zero primitive")
        return cls.from_coeffs(domain, np.asarray(shape, dtype=float) * (normF / base.normF))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.f)

    def work(self, u) -> float:
        """``2 <f, u>``."""
        return 2.0 * float(np.dot(self.f, u))

    def pair_with_derivative(self, u) -> float:
        """``<F, u_x>`` by trapezoidal quadrature on the closed grid (diagnostic)."""
        ux = self.domain.derivative_on_grid(u, closed=True)
        prod = self.F_grid * ux
        h = self.domain.length / (self.domain.Ngrid + 1)
        return float(h * (np.sum(prod) - 0.5 * (prod[0] + prod[-1])))
