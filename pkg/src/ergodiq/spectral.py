"""Laplacian eigenbases, low-mode projectors and Galerkin nonlinearities.

Two equation kinds are supported:

* ``"ns"``: 2D Navier-Stokes on the unit torus, written in a real orthonormal
  basis of divergence-free Fourier modes.  For each wavevector ``k`` in the
  upper half-plane there are two real directions, the cosine and sine parts of
  ``e_k = i (k_perp/|k|) exp(2 pi i k.x)`` scaled by ``sqrt(2)``.  The Stokes
  eigenvalue is ``4 pi^2 |k|^2``.  The advection term is evaluated
  pseudo-spectrally on an ``n x n`` grid under the 2/3 rule, which makes the
  Galerkin projection exact.
* ``"cgl"``: 1D complex Ginzburg-Landau on (0, 1) with Dirichlet conditions,
  basis ``sqrt(2) sin(n pi x)``, eigenvalue ``n^2 pi^2``, complex
  coefficients.  Nonlinear terms are projected with an oversampled sine
  quadrature that is exact for polynomial nonlinearities of the supported
  degree.

Every array-valued routine accepts a leading batch dimension.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

NS = "ns"
CGL = "cgl"
TWO_PI = 2.0 * np.pi


class BasisMismatch(ValueError):
    """Raised when a field is passed to an operation for the other equation."""


class SubcriticalityError(ValueError):
    """Raised for CGL exponents outside the L2-subcritical range (sigma < 2)."""


@dataclass(frozen=True, eq=False)
class GalerkinBasis:
    """Eigenbasis of the Dirichlet/periodic Laplacian on a Galerkin truncation.

    Use :meth:`ns_torus` or :meth:`cgl_dirichlet` rather than the raw
    constructor.
    """

    kind: str
    mu: np.ndarray              # eigenvalue per coefficient, nondecreasing
    levels: np.ndarray          # distinct eigenvalues in increasing order
    level_of: np.ndarray        # level index of each coefficient
    grid: int                   # NS: points per side; CGL: quadrature J
    wavevectors: np.ndarray | None = None   # NS: (modes, 2) in the half-plane
    sigma_max: float = 1.0      # CGL: largest exponent the quadrature is exact for

    # ------------------------------------------------------------------ build
    @classmethod
    def ns_torus(cls, n: int = 16) -> "GalerkinBasis":
        if n < 4:
            raise ValueError("NS grid needs at least 4 points per side")
        kmax = (n - 1) // 3
        ks = [(k1, k2) for k1 in range(-kmax, kmax + 1) for k2 in range(-kmax, kmax + 1)
              if k1 > 0 or (k1 == 0 and k2 > 0)]
        ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
        ks = np.array(ks, dtype=np.int64)
        ksq = (ks ** 2).sum(axis=1)
        mu = np.repeat(4.0 * np.pi ** 2 * ksq, 2)
        levels, level_of = np.unique(mu, return_inverse=True)
        return cls(NS, mu, levels, level_of, n, wavevectors=ks)

    @classmethod
    def cgl_dirichlet(cls, modes: int = 64, sigma_max: float = 1.0) -> "GalerkinBasis":
        if modes < 1:
            raise ValueError("need at least one mode")
        if not 0 < sigma_max < 2:
            raise SubcriticalityError(f"sigma={sigma_max} violates sigma*d < 2 with d=1")
        n = np.arange(1, modes + 1)
        mu = (n * np.pi) ** 2
        # Trapezoid on x_j=j/J integrates sin products exactly up to total
        # frequency 2J-1; the degree-(2s+2) integrand needs (2s+2)M < 2J.
        J = (int(np.ceil(sigma_max)) + 1) * modes + 2
        return cls(CGL, mu, mu.copy(), np.arange(modes), J, sigma_max=float(sigma_max))

    # ------------------------------------------------------------- structure
    @property
    def size(self) -> int:
        """Number of coefficients (real for NS, complex for CGL)."""
        return self.mu.size

    @property
    def real_dim(self) -> int:
        """Number of real degrees of freedom, which equals the noise dimension."""
        return self.size if self.kind == NS else 2 * self.size

    @property
    def dtype(self):
        return np.float64 if self.kind == NS else np.complex128

    def low_count(self, N: int) -> int:
        """Number of coefficients spanned by the first ``N`` eigenvalue levels."""
        if not 0 <= N <= self.levels.size:
            raise ValueError(f"N={N} outside [0, {self.levels.size}]")
        return int(np.searchsorted(self.level_of, N))

    def low_real_dim(self, N: int) -> int:
        m = self.low_count(N)
        return m if self.kind == NS else 2 * m

    def gap_eigenvalue(self, N: int) -> float:
        """First eigenvalue not covered by P_N (mu_{N+1})."""
        return float(self.levels[N]) if N < self.levels.size else np.inf

    @property
    def mu_real(self) -> np.ndarray:
        """Eigenvalue attached to each real noise direction."""
        return self.mu if self.kind == NS else np.repeat(self.mu, 2)

    # ---------------------------------------------------------- real view
    def to_real(self, coef: np.ndarray) -> np.ndarray:
        """Real coordinates of a state; CGL interleaves (Re c_n, Im c_n)."""
        if self.kind == NS:
            return np.asarray(coef, dtype=np.float64)
        coef = np.asarray(coef)
        out = np.empty(coef.shape[:-1] + (2 * coef.shape[-1],))
        out[..., 0::2] = coef.real
        out[..., 1::2] = coef.imag
        return out

    def from_real(self, x: np.ndarray) -> np.ndarray:
        if self.kind == NS:
            return np.asarray(x, dtype=np.float64)
        return x[..., 0::2] + 1j * x[..., 1::2]

    def zeros(self, batch=()) -> np.ndarray:
        return np.zeros(_shape(batch, self.size), self.dtype)

    def random(self, rng: np.random.Generator, batch=(), decay: float = 1.0,
               scale: float = 1.0) -> np.ndarray:
        """Random field with coefficient amplitude ``scale*(mu_1/mu)^(decay/2)``."""
        amp = scale * (self.mu[0] / self.mu) ** (0.5 * decay)
        shape = _shape(batch, self.size)
        if self.kind == NS:
            return amp * rng.standard_normal(shape)
        z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return amp * z / np.sqrt(2.0)

    # -------------------------------------------------------------- NS grid
    @cached_property
    def _ns_tables(self):
        n = self.grid
        ks = self.wavevectors
        k1, k2 = ks[:, 0], ks[:, 1]
        flip = k2 < 0
        # storage slot in the rfft2 half spectrum of the value at k (or of
        # its conjugate at -k when k2 < 0)
        rows = np.where(flip, -k1, k1) % n
        cols = np.where(flip, -k2, k2)
        axis = np.flatnonzero(k2 == 0)   # k2=0 column needs the mirrored entry
        kn = np.sqrt((ks ** 2).sum(axis=1).astype(float))
        return dict(rows=rows, cols=cols, flip=flip, axis=axis,
                    mrows=(-k1[axis]) % n, k1=k1.astype(float), k2=k2.astype(float), kn=kn)

    def ns_complex(self, coef: np.ndarray) -> np.ndarray:
        """Complex amplitudes a_k = (c - i s)/sqrt(2) on half-plane modes."""
        return (coef[..., 0::2] - 1j * coef[..., 1::2]) / np.sqrt(2.0)

    def ns_real(self, ahat: np.ndarray) -> np.ndarray:
        out = np.empty(ahat.shape[:-1] + (2 * ahat.shape[-1],))
        out[..., 0::2] = np.sqrt(2.0) * ahat.real
        out[..., 1::2] = -np.sqrt(2.0) * ahat.imag
        return out

    def ns_scatter(self, vals: np.ndarray) -> np.ndarray:
        """Place Fourier coefficients of a real field into an rfft2 half spectrum."""
        t = self._ns_tables
        n = self.grid
        spec = np.zeros(vals.shape[:-1] + (n, n // 2 + 1), dtype=np.complex128)
        spec[..., t["rows"], t["cols"]] = np.where(t["flip"], np.conj(vals), vals)
        spec[..., t["mrows"], 0] = np.conj(vals[..., t["axis"]])
        return spec

    def ns_gather(self, spec: np.ndarray) -> np.ndarray:
        t = self._ns_tables
        v = spec[..., t["rows"], t["cols"]]
        return np.where(t["flip"], np.conj(v), v)

    def ns_synth(self, vals: np.ndarray) -> np.ndarray:
        """Grid values of the real field with Fourier coefficients ``vals``."""
        n = self.grid
        return sfft.irfft2(self.ns_scatter(vals), s=(n, n)) * (n * n)

    def ns_analyse(self, f: np.ndarray) -> np.ndarray:
        n = self.grid
        return self.ns_gather(sfft.rfft2(f)) / (n * n)

    def ns_velocity(self, coef: np.ndarray) -> np.ndarray:
        """Velocity field on the grid, shape ``batch + (2, n, n)``."""
        t = self._ns_tables
        a = self.ns_complex(coef)
        u1 = self.ns_synth(1j * a * (-t["k2"]) / t["kn"])
        u2 = self.ns_synth(1j * a * t["k1"] / t["kn"])
        return np.stack([u1, u2], axis=-3)

    def ns_vorticity(self, coef: np.ndarray) -> np.ndarray:
        t = self._ns_tables
        return self.ns_synth(-TWO_PI * t["kn"] * self.ns_complex(coef))

    # ------------------------------------------------------------- CGL grid
    @cached_property
    def cgl_nodes(self) -> np.ndarray:
        return np.arange(1, self.grid) / self.grid

    def cgl_synth(self, coef: np.ndarray) -> np.ndarray:
        """Values at the interior nodes x_j = j/J."""
        pad = np.zeros(coef.shape[:-1] + (self.grid - 1,), dtype=np.complex128)
        pad[..., : self.size] = coef
        return (np.sqrt(2.0) / 2.0) * sfft.dst(pad, type=1, axis=-1)

    def cgl_project(self, vals: np.ndarray) -> np.ndarray:
        """Trapezoid-rule coefficients (f, e_n) from interior nodal values."""
        c = sfft.dst(np.asarray(vals, dtype=np.complex128), type=1, axis=-1)
        return c[..., : self.size] * (np.sqrt(2.0) / (2.0 * self.grid))


def _shape(batch, m):
    if batch is None or batch == ():
        return (m,)
    return tuple(np.atleast_1d(batch)) + (m,)


# ----------------------------------------------------------------- fields
@dataclass(frozen=True, eq=False)
class SpectralField:
    """A coefficient vector (or batch of vectors) tied to its basis."""

    basis: GalerkinBasis
    coef: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coef, dtype=self.basis.dtype)
        if c.shape[-1] != self.basis.size:
            raise ValueError(f"expected {self.basis.size} coefficients, got {c.shape[-1]}")
        object.__setattr__(self, "coef", c)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.basis, self.coef - other.coef)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.basis, self.coef + other.coef)


@dataclass(frozen=True)
class Projector:
    """Orthogonal projection P_N onto the first ``N`` eigenvalue levels."""

    basis: GalerkinBasis
    N: int

    @property
    def m(self) -> int:
        return self.basis.low_count(self.N)

    def P(self, coef: np.ndarray) -> np.ndarray:
        out = np.zeros_like(coef)
        out[..., : self.m] = coef[..., : self.m]
        return out

    def Q(self, coef: np.ndarray) -> np.ndarray:
        out = np.array(coef, copy=True)
        out[..., : self.m] = 0
        return out


# --------------------------------------------------------------- operators
def l2sq(coef: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(coef) ** 2, axis=-1)


def h1sq(basis: GalerkinBasis, coef: np.ndarray) -> np.ndarray:
    return np.sum(basis.mu * np.abs(coef) ** 2, axis=-1)


def inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Real L2 inner product (Re of the Hermitian product for CGL)."""
    return np.real(np.sum(np.conj(a) * b, axis=-1))


def lp_power(basis: GalerkinBasis, coef: np.ndarray, p: float) -> np.ndarray:
    """|u|_p^p by grid quadrature."""
    if basis.kind == NS:
        vel = basis.ns_velocity(coef)
        mag = np.sqrt((vel ** 2).sum(axis=-3))
        return np.mean(mag ** p, axis=(-2, -1))
    vals = np.abs(basis.cgl_synth(coef))
    return np.sum(vals ** p, axis=-1) / basis.grid


def norms(u: SpectralField, p: float | None = None) -> dict:
    """L2 norm, H1 seminorm and L^p norm (default p=4) of a field."""
    p = 4.0 if p is None else float(p)
    return {
        "l2": np.sqrt(l2sq(u.coef)),
        "h1": np.sqrt(h1sq(u.basis, u.coef)),
        "lp": lp_power(u.basis, u.coef, p) ** (1.0 / p),
    }


def grid_l2sq(basis: GalerkinBasis, coef: np.ndarray) -> np.ndarray:
    """|u|^2 recomputed from grid values (the Parseval cross-check)."""
    return lp_power(basis, coef, 2.0)


def ns_advection(basis: GalerkinBasis, coef: np.ndarray) -> np.ndarray:
    """Coefficients of B(u) = Pi((u.grad)u) for a batch of NS states."""
    if basis.kind != NS:
        raise BasisMismatch("ns_advection needs an NS basis")
    t = basis._ns_tables
    a = basis.ns_complex(coef)
    w = -TWO_PI * t["kn"] * a
    ik = 1j * np.stack([-t["k2"] * a / t["kn"], t["k1"] * a / t["kn"],
                        TWO_PI * t["k1"] * w, TWO_PI * t["k2"] * w])
    g = basis.ns_synth(ik)                 # u1, u2, d1 w, d2 w on the grid
    nl = g[0] * g[2] + g[1] * g[3]         # u . grad w = curl((u.grad)u)
    return basis.ns_real(-basis.ns_analyse(nl) / (TWO_PI * t["kn"]))


def cgl_power_term(basis: GalerkinBasis, coef: np.ndarray, sigma: float) -> np.ndarray:
    """Galerkin projection of |u|^{2 sigma} u (without the eta + i lambda factor)."""
    if basis.kind != CGL:
        raise BasisMismatch("cgl_power_term needs a CGL basis")
    check_subcritical(sigma)
    if sigma > basis.sigma_max:
        raise ValueError(f"quadrature built for sigma <= {basis.sigma_max}")
    v = basis.cgl_synth(coef)
    return basis.cgl_project(np.abs(v) ** (2 * sigma) * v)


def check_subcritical(sigma: float, d: int = 1) -> None:
    if not (sigma > 0 and sigma * d < 2):
        raise SubcriticalityError(f"sigma*d = {sigma * d} is not in (0, 2)")


def ns_nonlinearity(u: SpectralField) -> SpectralField:
    return SpectralField(u.basis, ns_advection(u.basis, u.coef))


def cgl_nonlinearity(u: SpectralField, sigma: float = 1.0, eta: float = 1.0,
                     lam: float = 1.0) -> SpectralField:
    return SpectralField(u.basis, (eta + 1j * lam) * cgl_power_term(u.basis, u.coef, sigma))
