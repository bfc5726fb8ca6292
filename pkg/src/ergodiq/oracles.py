"""Slow reference implementations used to validate the fast spectral code.

None of these share code paths with the FFT/DST routines they check.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .spectral import CGL, NS, GalerkinBasis


def ns_convolution(basis: GalerkinBasis, coef: np.ndarray) -> np.ndarray:
    """B(u) by the direct triadic sum over the retained lattice, O(M^2)."""
    if basis.kind != NS:
        raise ValueError("needs an NS basis")
    coef = np.asarray(coef, float)
    ks = basis.wavevectors
    a_half = (coef[0::2] - 1j * coef[1::2]) / np.sqrt(2.0)
    amp = {}
    for (k1, k2), a in zip(ks, a_half):
        amp[(k1, k2)] = a
        amp[(-k1, -k2)] = np.conj(a)

    def vel(k, a):
        n = np.hypot(*k)
        return 1j * a * np.array([-k[1], k[0]]) / n

    def vort(k, a):
        return -2.0 * np.pi * np.hypot(*k) * a

    out = np.empty(ks.shape[0], dtype=complex)
    for i, (k1, k2) in enumerate(ks):
        s = 0.0j
        for p, ap in amp.items():
            q = (k1 - p[0], k2 - p[1])
            aq = amp.get(q)
            if aq is None:
                continue
            s += np.dot(vel(p, ap), 2j * np.pi * np.array(q)) * vort(q, aq)
        out[i] = -s / (2.0 * np.pi * np.hypot(k1, k2))
    res = np.empty(coef.size)
    res[0::2] = np.sqrt(2.0) * out.real
    res[1::2] = -np.sqrt(2.0) * out.imag
    return res


def _sine_matrix(modes: int, x: np.ndarray) -> np.ndarray:
    return np.sqrt(2.0) * np.sin(np.pi * np.outer(np.arange(1, modes + 1), x))


def gauss_nodes(points: int):
    """Composite Gauss-Legendre rule on (0, 1) with ``points`` panels of 8 nodes."""
    g, w = np.polynomial.legendre.leggauss(8)
    edges = np.linspace(0.0, 1.0, points + 1)
    h = np.diff(edges)
    x = (edges[:-1, None] + 0.5 * h[:, None] * (g + 1.0)).ravel()
    wt = (0.5 * h[:, None] * w).ravel()
    return x, wt


def cgl_power_quadrature(coef: np.ndarray, sigma: float, panels: int = 256) -> np.ndarray:
    """Projection of |u|^{2 sigma} u on the sine basis by fine Gauss quadrature."""
    coef = np.asarray(coef, complex)
    x, w = gauss_nodes(panels)
    E = _sine_matrix(coef.size, x)
    v = coef @ E
    return (E * w) @ (np.abs(v) ** (2 * sigma) * v)


def lp_quadrature(coef: np.ndarray, p: float, panels: int = 256) -> float:
    x, w = gauss_nodes(panels)
    v = np.asarray(coef, complex) @ _sine_matrix(len(coef), x)
    return float(np.sum(w * np.abs(v) ** p))


def cgl_reference(c0: np.ndarray, t_end: float, eps: float = 1.0, eta: float = 1.0,
                  lam: float = 1.0, sigma: float = 1.0, rtol: float = 1e-10,
                  panels: int = 64) -> np.ndarray:
    """Noise-free Galerkin CGL flow by an adaptive implicit integrator."""
    c0 = np.asarray(c0, complex)
    M = c0.size
    mu = (np.arange(1, M + 1) * np.pi) ** 2
    x, w = gauss_nodes(panels)
    E = _sine_matrix(M, x)
    Ew = E * w

    def rhs(_, y):
        c = y[:M] + 1j * y[M:]
        v = c @ E
        F = Ew @ (np.abs(v) ** (2 * sigma) * v)
        d = -(eps + 1j) * mu * c - (eta + 1j * lam) * F
        return np.concatenate([d.real, d.imag])

    sol = solve_ivp(rhs, (0.0, t_end), np.concatenate([c0.real, c0.imag]), method="Radau",
                    rtol=rtol, atol=rtol * 1e-2)
    y = sol.y[:, -1]
    return y[:M] + 1j * y[M:]


def scalar_implicit_euler(c0, mu: np.ndarray, rate: float, dt: float, steps: int):
    """u_n <- u_n / (1 + dt * rate * mu_n) applied ``steps`` times."""
    return np.asarray(c0) / (1.0 + dt * rate * np.asarray(mu)) ** steps


def is_cgl(basis: GalerkinBasis) -> bool:
    return basis.kind == CGL
