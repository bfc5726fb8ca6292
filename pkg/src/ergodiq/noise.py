"""State-dependent covariance phi(u), its low-mode right inverse g(u), and
Wiener increments.

Noise vectors live in the real view of the state space: entry ``j`` drives
real direction ``j`` of :meth:`GalerkinBasis.to_real`.  The first ``m``
directions (the span of P_N) form the additive block U2 with gains ``b``; the
rest form U1 with gains ``f(u) c``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import CGL, GalerkinBasis, SpectralField, l2sq

ADDITIVE = "additive"
PERTURBED = "perturbed"


class H1Violation(ValueError):
    """Raised when the low-mode block of phi is not invertible."""


@dataclass(frozen=True)
class Modulation:
    """Scalar factor f(u) multiplying the high-mode noise, as a function of |u|^2.

    kind:
        ``"constant"``  f = value
        ``"inverse"``   f = 1/(1+|u|^2), globally Lipschitz in |u|
        ``"saturated"`` f = fmax*tanh((1+|u|^{2 sigma})/fmax), locally Lipschitz
    """

    kind: str = "inverse"
    value: float = 1.0
    fmax: float = 2.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "inverse", "saturated"):
            raise ValueError(f"unknown modulation {self.kind!r}")

    def __call__(self, sq: np.ndarray) -> np.ndarray:
        sq = np.asarray(sq, dtype=float)
        if self.kind == "constant":
            return np.full_like(sq, self.value)
        if self.kind == "inverse":
            return 1.0 / (1.0 + sq)
        return self.fmax * np.tanh((1.0 + sq ** self.sigma) / self.fmax)

    @property
    def sup(self) -> float:
        return {"constant": abs(self.value), "inverse": 1.0, "saturated": self.fmax}[self.kind]

    @property
    def inf(self) -> float:
        if self.kind == "constant":
            return abs(self.value)
        if self.kind == "inverse":
            return 0.0
        return self.fmax * np.tanh(1.0 / self.fmax)

    @property
    def lipschitz(self) -> float | None:
        """Global Lipschitz constant of |u| -> f, or None when only local."""
        return {"constant": 0.0, "inverse": 3.0 * np.sqrt(3.0) / 8.0}.get(self.kind)


@dataclass(frozen=True)
class WienerIncrement:
    """Increment sqrt(dt)*xi of a truncated cylindrical Wiener process."""

    dt: float
    xi: np.ndarray

    @property
    def dW(self) -> np.ndarray:
        return np.sqrt(self.dt) * self.xi

    @classmethod
    def sample(cls, rng: np.random.Generator, dt: float, dim: int, batch=()) -> "WienerIncrement":
        shape = (dim,) if batch == () else tuple(np.atleast_1d(batch)) + (dim,)
        return cls(dt, rng.standard_normal(shape))


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """phi(u) = diag(b) on U2 (plus eps*f(u)*S when perturbed) and f(u)*diag(c) on U1."""

    basis: GalerkinBasis
    N: int
    b: np.ndarray
    c: np.ndarray
    modulation: Modulation = field(default_factory=Modulation)
    variant: str = ADDITIVE
    eps: float = 0.0
    S: np.ndarray | None = None
    c_law: tuple = (0.0, 1.0)       # (c0, decay power) used for tail diagnostics

    def __post_init__(self):
        m, D = self.low_dim, self.basis.real_dim
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if b.shape != (m,) or c.shape != (D - m,):
            raise ValueError(f"need {m} low gains and {D - m} high gains, "
                             f"got {b.shape} and {c.shape}")
        if np.any(b == 0):
            raise H1Violation("a low-mode gain is zero, so g(u) does not exist")
        if self.variant not in (ADDITIVE, PERTURBED):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == PERTURBED:
            if self.S is None or self.S.shape != (m, m):
                raise ValueError("perturbed variant needs an m x m matrix S")
            if self.eps * self.modulation.sup >= np.min(np.abs(b)) * np.linalg.norm(self.S, 2):
                raise H1Violation("perturbation too large for a guaranteed inverse")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    # ------------------------------------------------------------ factories
    @classmethod
    def default(cls, basis: GalerkinBasis, N: int, b0: float = 1.0, c0: float = 0.5,
                decay: float = 1.0, modulation: Modulation | None = None) -> "CovarianceModel":
        """Constant low gains ``b0`` and high gains ``c0*(mu_1/mu_j)^decay``."""
        m = basis.low_real_dim(N)
        mu = basis.mu_real
        c = c0 * (mu[0] / mu[m:]) ** decay
        return cls(basis, N, np.full(m, b0), c, modulation or Modulation(),
                   c_law=(c0, decay))

    @classmethod
    def perturbed(cls, basis: GalerkinBasis, N: int, eps: float, seed: int = 0,
                  b0: float = 1.0, c0: float = 0.5, decay: float = 1.0,
                  modulation: Modulation | None = None) -> "CovarianceModel":
        """Low block diag(b) + eps*f(u)*S with a fixed random S of unit spectral norm."""
        m = basis.low_real_dim(N)
        S = np.random.default_rng(seed).standard_normal((m, m))
        S /= np.linalg.norm(S, 2)
        base = cls.default(basis, N, b0, c0, decay, modulation)
        return cls(basis, N, base.b, base.c, base.modulation, PERTURBED, eps, S, base.c_law)

    # ----------------------------------------------------------- structure
    @property
    def low_dim(self) -> int:
        return self.basis.low_real_dim(self.N)

    @property
    def dim(self) -> int:
        return self.basis.real_dim

    def f(self, coef: np.ndarray) -> np.ndarray:
        return self.modulation(l2sq(coef))

    def low_block(self, coef: np.ndarray) -> np.ndarray:
        fu = np.asarray(self.f(coef))
        base = np.diag(self.b)
        if self.variant == ADDITIVE:
            return np.broadcast_to(base, fu.shape + base.shape)
        return base + self.eps * fu[..., None, None] * self.S

    # ---------------------------------------------------------- operators
    def phi_real(self, coef: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """phi(u) xi in real coordinates (no sqrt(dt) factor)."""
        m = self.low_dim
        fu = self.f(coef)[..., None]
        out = np.empty(np.broadcast_shapes(xi.shape, fu.shape[:-1] + (self.dim,)))
        lo = xi[..., :m]
        out[..., :m] = self.b * lo
        if self.variant == PERTURBED:
            out[..., :m] += self.eps * fu * (lo @ self.S.T)
        out[..., m:] = fu * self.c * xi[..., m:]
        return out

    def noise_coef(self, coef: np.ndarray, dW: np.ndarray) -> np.ndarray:
        """phi(u) dW mapped back to state coefficients."""
        return self.basis.from_real(self.phi_real(coef, dW))

    def g_real(self, coef: np.ndarray, v_real: np.ndarray) -> np.ndarray:
        """g(u) v: zero on U1, inverse of the low block applied to P_N v on U2."""
        m = self.low_dim
        out = np.zeros(np.broadcast_shapes(v_real.shape, np.shape(coef)[:-1] + (self.dim,)))
        if self.variant == ADDITIVE:
            out[..., :m] = v_real[..., :m] / self.b
        else:
            A = self.low_block(coef)
            rhs = np.broadcast_to(v_real[..., :m], out.shape[:-1] + (m,))
            out[..., :m] = np.linalg.solve(A, rhs[..., None])[..., 0]
        return out

    def g_norm(self) -> float:
        """Operator norm bound of g(u), uniform in u."""
        if self.variant == ADDITIVE:
            return float(np.max(1.0 / np.abs(self.b)))
        gap = np.min(np.abs(self.b)) - self.eps * self.modulation.sup * np.linalg.norm(self.S, 2)
        return float(1.0 / gap)

    def hs_sq(self, coef: np.ndarray) -> np.ndarray:
        """Squared Hilbert-Schmidt norm of phi(u)."""
        fu = self.f(coef)
        high = fu ** 2 * np.sum(self.c ** 2)
        if self.variant == ADDITIVE:
            return np.sum(self.b ** 2) + high
        return np.sum(self.low_block(coef) ** 2, axis=(-2, -1)) + high

    @property
    def B0(self) -> float:
        """sup_u of the squared Hilbert-Schmidt norm."""
        c2 = np.sum(self.c ** 2)
        if self.variant == ADDITIVE:
            return float(self.modulation.sup ** 2 * c2 + np.sum(self.b ** 2))
        # convex in f, so the sup sits at an end of the range of f
        vals = [np.sum((np.diag(self.b) + self.eps * fv * self.S) ** 2) + fv ** 2 * c2
                for fv in (self.modulation.inf, self.modulation.sup)]
        return float(max(vals))

    def lipschitz_bound(self) -> float | None:
        """Analytic L with ||phi(u2)-phi(u1)||_HS^2 <= L |u2-u1|^2, if f is globally Lipschitz."""
        lf = self.modulation.lipschitz
        if lf is None:
            return None
        extra = self.eps ** 2 * np.sum(self.S ** 2) if self.variant == PERTURBED else 0.0
        return float(lf ** 2 * (np.sum(self.c ** 2) + extra))

    def hs_diff_sq(self, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
        df = self.f(c2) - self.f(c1)
        extra = self.eps ** 2 * np.sum(self.S ** 2) if self.variant == PERTURBED else 0.0
        return df ** 2 * (np.sum(self.c ** 2) + extra)

    def tail_hs_mass(self, reach: int = 200) -> float:
        """HS mass of the gain law on directions beyond the resolved ones."""
        c0, p = self.c_law
        if c0 == 0.0:
            return 0.0
        if self.basis.kind == CGL:
            M = self.basis.size
            n = np.arange(M + 1, M * reach + 1, dtype=float)
            return float(2 * c0 ** 2 * np.sum((1.0 / n ** 2) ** (2 * p)))
        kmax = int(np.max(np.abs(self.basis.wavevectors)))
        r = np.arange(-kmax * reach, kmax * reach + 1, dtype=float)
        k1, k2 = np.meshgrid(r, r, indexing="ij")
        ksq = k1 ** 2 + k2 ** 2
        out = (np.maximum(np.abs(k1), np.abs(k2)) > kmax)
        return float(c0 ** 2 * np.sum((1.0 / ksq[out]) ** (2 * p)))


# ------------------------------------------------------------ functional API
def apply_phi(model: CovarianceModel, u: SpectralField, inc: WienerIncrement) -> SpectralField:
    """sqrt(dt) * phi(u) xi as a field."""
    if inc.xi.shape[-1] != model.dim:
        raise ValueError(f"increment has {inc.xi.shape[-1]} directions, model has {model.dim}")
    return SpectralField(u.basis, model.noise_coef(u.coef, inc.dW))


def pseudo_inverse_apply(model: CovarianceModel, u: SpectralField, v: SpectralField) -> np.ndarray:
    """g(u) v as a noise-space vector."""
    return model.g_real(u.coef, model.basis.to_real(v.coef))


def lipschitz_witness(model: CovarianceModel, pairs, sigma: float | None = None) -> float:
    """Largest observed ratio ||phi(u2)-phi(u1)||_HS^2 / denominator.

    The denominator is |u2-u1|^2 for NS and
    |u2-u1|^2 (1 + |u1|^{2s} + |u2|^{2s}) for CGL.  Coincident pairs contribute 0.
    """
    u1, u2 = (np.asarray(x) for x in pairs)
    if u1.ndim == 1:
        u1, u2 = u1[None], u2[None]
    num = model.hs_diff_sq(u1, u2)
    den = l2sq(u2 - u1)
    if model.basis.kind == CGL:
        s = model.modulation.sigma if sigma is None else sigma
        den = den * (1.0 + l2sq(u1) ** s + l2sq(u2) ** s)
    ratio = np.divide(num, den, out=np.zeros_like(num, dtype=float), where=den > 0)
    return float(np.max(ratio))


def witness_pairs(basis: GalerkinBasis, rng: np.random.Generator, count: int = 400,
                  scales=(0.1, 0.3, 1.0, 3.0)) -> tuple[np.ndarray, np.ndarray]:
    """Random pairs at several amplitudes and separations for the Lipschitz witness."""
    per = -(-count // len(scales))
    a, b = [], []
    for s in scales:
        u = basis.random(rng, per, scale=s)
        for h in (1.0, 1e-3):
            a.append(u)
            b.append(u + h * basis.random(rng, per, scale=s))
    return np.concatenate(a), np.concatenate(b)
