"""Maximal couplings of discrete laws and of shifted Gaussian increments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability vector on {0, ..., n-1}."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probability vector must be one-dimensional and nonempty")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.p.size


def total_variation(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    if a.n != b.n:
        raise ValueError("measures live on supports of different sizes")
    return 0.5 * float(np.abs(a.p - b.p).sum())


def _draw(rng, probs, size):
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), probs.size - 1)


def maximal_coupling_discrete(a: DiscreteMeasure, b: DiscreteMeasure,
                              rng: np.random.Generator, size: int | None = None):
    """Draw (Z1, Z2) with Z1 ~ a, Z2 ~ b and P(Z1 != Z2) = TV(a, b).

    The overlap min(p, q) is sampled jointly; the residuals (p - q)^+ and
    (q - p)^+ are sampled independently of each other.
    """
    if a.n != b.n:
        raise ValueError("measures live on supports of different sizes")
    scalar = size is None
    size = 1 if scalar else int(size)
    common = np.minimum(a.p, b.p)
    w = common.sum()
    if (a.p - common).sum() <= 1e-15:
        w = 1.0
    same = rng.random(size) < w
    z1 = np.empty(size, dtype=np.int64)
    z2 = np.empty(size, dtype=np.int64)
    k = int(same.sum())
    if k:
        z1[same] = z2[same] = _draw(rng, common, k)
    if size - k:
        z1[~same] = _draw(rng, a.p - common, size - k)
        z2[~same] = _draw(rng, b.p - common, size - k)
    return (int(z1[0]), int(z2[0])) if scalar else (z1, z2)


def reflection_coupling(m1, m2, dt: float, xi: np.ndarray, log_u: np.ndarray):
    """Reflection-maximal coupling of N(m1, dt I) and N(m2, dt I) from given draws.

    ``xi`` is a standard normal vector (the X draw is ``m1 + sqrt(dt) xi``)
    and ``log_u`` the log of a uniform.  Returns ``(X, Y, met)``.  The meet
    test compares the N(m2) and N(m1) densities at X.  On rejection Y reflects
    the draw across the hyperplane bisecting the two means.
    """
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    s = np.sqrt(dt)
    a = (m1 - m2) / s
    x = m1 + s * xi
    log_ratio = -np.sum(a * xi, axis=-1) - 0.5 * np.sum(a * a, axis=-1)
    met = log_u <= log_ratio
    na = np.sqrt(np.sum(a * a, axis=-1, keepdims=True))
    e = np.divide(a, na, out=np.zeros_like(a), where=na > 0)
    refl = xi - 2.0 * np.sum(e * xi, axis=-1, keepdims=True) * e
    y = np.where(met[..., None] if np.ndim(met) else met, x, m2 + s * refl)
    return x, y, met


def maximal_coupling_gaussian_step(m1, m2, dt: float, rng: np.random.Generator,
                                   var2: float | None = None, size: int | None = None):
    """Draw (dW1, dW2) maximally coupled with means m1, m2 and common variance dt."""
    if var2 is not None and var2 != dt:
        raise ValueError("reflection coupling needs a shared isotropic variance")
    m1 = np.atleast_1d(np.asarray(m1, dtype=float))
    m2 = np.atleast_1d(np.asarray(m2, dtype=float))
    if m1.shape != m2.shape:
        raise ValueError("mean vectors differ in shape")
    shape = m1.shape if size is None else (int(size),) + m1.shape
    xi = rng.standard_normal(shape)
    log_u = np.log(rng.random(shape[:-1]))
    x, y, met = reflection_coupling(m1, m2, dt, xi, log_u)
    return x, y, met


def gaussian_meet_probability(m1, m2, dt: float) -> float:
    """2 Phi(-|m1 - m2| / (2 sqrt(dt)))."""
    d = np.linalg.norm(np.atleast_1d(np.asarray(m1, float) - np.asarray(m2, float)))
    return float(2.0 * np.exp(log_ndtr(-d / (2.0 * np.sqrt(dt)))))


def density_ratio_tv_bound(second_moment: float) -> float:
    """TV <= 1/2 sqrt(int (dL1/dL2)^2 dL2 - 1)."""
    return 0.5 * float(np.sqrt(max(second_moment - 1.0, 0.0)))


def overlap_lower_bound(a: DiscreteMeasure, b: DiscreteMeasure, event,
                        p: float) -> tuple[float, float, bool]:
    """Both sides of (a ^ b)(A) >= (1 - 1/p) (a(A)^p / (p I_p))^{1/(p-1)}.

    I_p is the integral over A of (da/db)^p with respect to a.  The third
    value reports whether p I_p >= a(A).  That always holds for A equal to
    the whole space, and outside it the bound can fail: one atom with
    a = 0.1, b = 0.9, p = 2 gives 0.1 on the left and about 2 on the right.
    """
    mask = np.zeros(a.n, bool)
    mask[np.asarray(event, dtype=np.int64)] = True
    if np.any((a.p > 0) != (b.p > 0)):
        raise ValueError("the measures are not equivalent")
    sel = mask & (a.p > 0)
    I_p = float(np.sum(a.p[sel] * (a.p[sel] / b.p[sel]) ** p))
    lhs = float(np.minimum(a.p, b.p)[mask].sum())
    aA = float(a.p[mask].sum())
    rhs = (1.0 - 1.0 / p) * (aA ** p / (p * I_p)) ** (1.0 / (p - 1.0))
    return lhs, rhs, p * I_p >= aA
