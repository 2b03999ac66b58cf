"""Closed-form reference solutions and decay-rate fitting.

Barenblatt profiles of the porous medium equation rho_t = Laplace(rho^m):
    rho(x, t) = t^{-d beta} (C - k |x|^2 t^{-2 beta})_+^{1/(m-1)},
    beta = 1/(d(m-1) + 2),  k = beta (m-1) / (2m),
with C normalizing the total mass.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import beta as beta_fn


@dataclass(frozen=True)
class Barenblatt:
    m: float
    d: int
    mass: float
    C: float
    beta: float
    k: float

    def density(self, x, t):
        x = np.asarray(x, dtype=float)
        if self.d == 1:
            r2 = x ** 2
        else:
            r2 = np.sum(x ** 2, axis=-1)
        core = self.C - self.k * r2 * t ** (-2 * self.beta)
        return t ** (-self.d * self.beta) * np.maximum(core, 0.0) ** (1.0 / (self.m - 1))

    def support_radius(self, t):
        return float(np.sqrt(self.C / self.k) * t ** self.beta)

    @property
    def alpha(self):
        """1D decay exponent 1/(m+1); equals d*beta for d=1."""
        return self.d * self.beta


def barenblatt1d(m, mass=1.0):
    if m <= 1:
        raise ValueError("porous-medium exponent must exceed 1")
    beta = 1.0 / (m + 1.0)
    k = beta * (m - 1.0) / (2.0 * m)
    # mass = C^{(m+1)/(2(m-1))} k^{-1/2} B(1/2, m/(m-1))
    B = beta_fn(0.5, m / (m - 1.0))
    C = (mass * np.sqrt(k) / B) ** (2.0 * (m - 1.0) / (m + 1.0))
    return Barenblatt(m=m, d=1, mass=mass, C=C, beta=beta, k=k)


def barenblatt2d(m, mass=1.0):
    if m <= 1:
        raise ValueError("porous-medium exponent must exceed 1")
    beta = 1.0 / (2.0 * (m - 1.0) + 2.0)
    k = beta * (m - 1.0) / (2.0 * m)
    # mass = pi * C^{m/(m-1)} * (m-1)/(k m)
    C = (mass * k * m / (np.pi * (m - 1.0))) ** ((m - 1.0) / m)
    return Barenblatt(m=m, d=2, mass=mass, C=C, beta=beta, k=k)


def fit_decay_slope(times, values):
    """Least-squares slope of log(values) against log(times); returns
    (slope, residual norm of the fit)."""
    t = np.log(np.asarray(times, dtype=float))
    v = np.log(np.asarray(values, dtype=float))
    A = np.column_stack((t, np.ones_like(t)))
    coef, res, _, _ = np.linalg.lstsq(A, v, rcond=None)
    resid = float(np.sqrt(res[0])) if res.size else 0.0
    return float(coef[0]), resid
