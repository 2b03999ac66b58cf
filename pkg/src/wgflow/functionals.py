"""Discrete free energies on 1D Lagrangian states.

The transformed entropy acts on the local stretches s_k = (x_k - x_{k-1})/delta_k
through hsharp(s) = s*h(1/s); the potential is evaluated at cell midpoints and
the interaction at averaged midpoint displacements.  All gradients and Hessians
are analytic.
"""

from dataclasses import dataclass

import numpy as np

from .core import StateError


class DegenerateCellError(ValueError):
    pass


@dataclass(frozen=True)
class EntropySpec:
    """Entropy density h with derivatives; induced mobility phi with
    phi'(r) = r h''(r), phi(0) = 0, i.e. phi(r) = r h'(r) - h(r)."""

    h: callable
    h_prime: callable
    h_second: callable
    mccann: bool = False
    name: str = "custom"

    def phi(self, r):
        return r * self.h_prime(r) - self.h(r)

    def validate(self, probe=None):
        s = np.linspace(0.05, 5.0, 60) if probe is None else np.asarray(probe)
        hh = self.h(s)
        if np.any(hh[:-2] - 2 * hh[1:-1] + hh[2:] < -1e-10):
            raise ValueError("entropy density is not convex on the probed range")
        if self.mccann:
            if abs(self.h(np.array([1e-12]))[0] if np.ndim(self.h(1e-12)) else self.h(1e-12)) > 1e-6:
                raise ValueError("McCann condition requires h(0)=0")
            hs = s * self.h(1.0 / s)
            if np.any(hs[:-2] - 2 * hs[1:-1] + hs[2:] < -1e-10):
                raise ValueError("s*h(1/s) is not convex: McCann condition fails")
            if np.any(np.diff(hs) > 1e-10 * (1 + np.abs(hs[:-1]))):
                raise ValueError("s*h(1/s) is not non-increasing: McCann condition fails")
        return self


def xlogx_entropy():
    """h(r) = r log r (linear diffusion)."""
    spec = EntropySpec(
        h=lambda r: np.where(r > 0, r * np.log(np.where(r > 0, r, 1.0)), 0.0),
        h_prime=lambda r: np.log(r) + 1.0,
        h_second=lambda r: 1.0 / r,
        mccann=True,
        name="xlogx",
    )
    return spec.validate()


def power_entropy(m):
    """h(r) = r^m/(m-1), the porous-medium pair with phi(r) = r^m (m > 1)."""
    if m <= 1:
        raise ValueError("power entropy requires m > 1")
    spec = EntropySpec(
        h=lambda r: r ** m / (m - 1.0),
        h_prime=lambda r: m * r ** (m - 1.0) / (m - 1.0),
        h_second=lambda r: m * r ** (m - 2.0),
        mccann=True,
        name=f"power{m}",
    )
    return spec.validate()


@dataclass(frozen=True)
class PotentialSpec:
    V: callable
    grad_V: callable
    hess_V: callable = None
    lam: float = 0.0

    def validate(self, probe=None):
        x = np.linspace(-1.5, 1.5, 11) if probe is None else np.asarray(probe)
        eps = 1e-6
        fd = (self.V(x + eps) - self.V(x - eps)) / (2 * eps)
        g = self.grad_V(x)
        scale = np.maximum(np.abs(g), 1.0)
        if np.any(np.abs(fd - g) / scale > 1e-6):
            raise ValueError("grad_V does not match finite differences of V")
        return self


def quadratic_potential(a=0.5):
    """V(x) = a x^2, convexity modulus 2a."""
    return PotentialSpec(
        V=lambda x: a * x ** 2,
        grad_V=lambda x: 2.0 * a * x,
        hess_V=lambda x: 2.0 * a * np.ones_like(np.asarray(x, dtype=float)),
        lam=2.0 * a,
    ).validate()


def polynomial_potential(coeffs):
    """V(x) = sum_j coeffs[j] x^j."""
    p = np.polynomial.Polynomial(coeffs)
    dp = p.deriv()
    ddp = dp.deriv()
    return PotentialSpec(V=p, grad_V=dp, hess_V=ddp, lam=0.0).validate()


@dataclass(frozen=True)
class InteractionSpec:
    W: callable
    grad_W: callable
    hess_W: callable = None
    even: bool = True

    def validate(self, probe=None):
        z = np.linspace(0.1, 2.0, 7) if probe is None else np.asarray(probe)
        if self.even:
            if np.any(np.abs(self.W(z) - self.W(-z)) > 1e-12 * (1 + np.abs(self.W(z)))):
                raise ValueError("W flagged even but W(z) != W(-z)")
            if np.any(np.abs(self.grad_W(z) + self.grad_W(-z)) > 1e-10):
                raise ValueError("grad_W is not odd")
        return self


def quadratic_interaction(c=1.0):
    """W(z) = c z^2 / 2."""
    return InteractionSpec(
        W=lambda z: 0.5 * c * z ** 2,
        grad_W=lambda z: c * z,
        hess_W=lambda z: c * np.ones_like(np.asarray(z, dtype=float)),
        even=True,
    ).validate()


@dataclass(frozen=True)
class ProblemSpec:
    entropy: EntropySpec = None
    potential: PotentialSpec = None
    interaction: InteractionSpec = None

    def __post_init__(self):
        if self.entropy is None and self.potential is None and self.interaction is None:
            raise ValueError("problem needs at least one energy component")


def hsharp(entropy, s):
    """Transformed entropy density: value, first and second derivative of
    s -> s*h(1/s) at s > 0."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise DegenerateCellError("hsharp requires positive stretch")
    r = 1.0 / s
    v = s * entropy.h(r)
    d1 = entropy.h(r) - r * entropy.h_prime(r)
    d2 = r ** 3 * entropy.h_second(r)
    return v, d1, d2


def _stretches(state, grid):
    dx = np.diff(state.positions)
    if np.any(dx <= 0):
        raise StateError("state is not strictly monotone")
    return dx / grid.cell_masses


def _midpoints(state):
    x = state.positions
    return 0.5 * (x[1:] + x[:-1])


def discrete_energy(state, grid, problem):
    """Discrete relative entropy on the Lagrangian state:
    sum_k delta_k [hsharp(s_k) + V(mid_k)] + sum_{k,l} delta_k delta_l W((mid_k - mid_l))."""
    delta = grid.cell_masses
    s = _stretches(state, grid)
    total = 0.0
    if problem.entropy is not None:
        total += float(delta @ hsharp(problem.entropy, s)[0])
    if problem.potential is not None:
        total += float(delta @ problem.potential.V(_midpoints(state)))
    if problem.interaction is not None:
        mid = _midpoints(state)
        u = mid[:, None] - mid[None, :]
        total += float(delta @ problem.interaction.W(u) @ delta)
    return total


def _interaction_midforce(state, grid, problem):
    """T_k = delta_k * (row - col) sums of delta-weighted W'(u); the gradient
    of the interaction energy with respect to the midpoints."""
    delta = grid.cell_masses
    mid = _midpoints(state)
    u = mid[:, None] - mid[None, :]
    Wp = problem.interaction.grad_W(u)
    R = Wp @ delta
    C = delta @ Wp
    return delta * (R - C)


def raw_gradient(state, grid, problem):
    """Analytic partial derivatives of discrete_energy with respect to the
    node positions."""
    delta = grid.cell_masses
    s = _stretches(state, grid)
    raw = np.zeros(state.K + 1)
    if problem.entropy is not None:
        c = hsharp(problem.entropy, s)[1]
        raw[1:] += c
        raw[:-1] -= c
    if problem.potential is not None:
        t = 0.5 * delta * problem.potential.grad_V(_midpoints(state))
        raw[1:] += t
        raw[:-1] += t
    if problem.interaction is not None:
        t = 0.5 * _interaction_midforce(state, grid, problem)
        raw[1:] += t
        raw[:-1] += t
    return raw


def discrete_gradient(state, grid, problem, metric):
    """Raw partials and the metric gradient solving A_xi g = raw partials.
    In pinned mode the endpoint components are projected out on both sides of
    the solve, so the gradient lives in the constraint tangent space."""
    raw = raw_gradient(state, grid, problem)
    g = _project(state, metric.solve(_project(state, raw)))
    return raw, g


def _fd_hess_V(potential, x):
    if potential.hess_V is not None:
        return potential.hess_V(x)
    eps = 1e-5
    return (potential.grad_V(x + eps) - potential.grad_V(x - eps)) / (2 * eps)


def _fd_hess_W(interaction, z):
    if interaction.hess_W is not None:
        return interaction.hess_W(z)
    eps = 1e-5
    return (interaction.grad_W(z + eps) - interaction.grad_W(z - eps)) / (2 * eps)


def hessian_banded(state, grid, problem):
    """Tridiagonal Hessian (diag, off) of the entropy + potential terms.
    Only valid when the problem has no interaction."""
    if problem.interaction is not None:
        raise ValueError("banded Hessian requires an interaction-free problem")
    delta = grid.cell_masses
    s = _stretches(state, grid)
    K = state.K
    diag = np.zeros(K + 1)
    off = np.zeros(K)
    if problem.entropy is not None:
        b = hsharp(problem.entropy, s)[2] / delta
        diag[1:] += b
        diag[:-1] += b
        off -= b
    if problem.potential is not None:
        q = 0.25 * delta * _fd_hess_V(problem.potential, _midpoints(state))
        diag[1:] += q
        diag[:-1] += q
        off += q
    return diag, off


def discrete_hessian(state, grid, problem):
    """Dense symmetric matrix of second partials of discrete_energy;
    tridiagonal when the interaction is absent."""
    K = state.K
    if problem.interaction is None:
        diag, off = hessian_banded(state, grid, problem)
        return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    noW = ProblemSpec(problem.entropy, problem.potential, None) \
        if (problem.entropy is not None or problem.potential is not None) else None
    H = np.zeros((K + 1, K + 1))
    if noW is not None:
        diag, off = hessian_banded(state, grid, noW)
        H += np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    delta = grid.cell_masses
    mid = _midpoints(state)
    u = mid[:, None] - mid[None, :]
    M = np.outer(delta, delta) * _fd_hess_W(problem.interaction, u)
    Q = np.diag(M.sum(axis=1)) + np.diag(M.sum(axis=0)) - M - M.T
    # midpoint-to-node chain: d mid_k / d x_p = (1{p=k-1} + 1{p=k})/2
    P = np.zeros((K, K + 1))
    idx = np.arange(K)
    P[idx, idx] = 0.5
    P[idx, idx + 1] = 0.5
    H += P.T @ Q @ P
    return H


# ------------------------------------------------------- entropy surrogates

def discrete_h1(state, grid):
    """Discrete Boltzmann entropy H1 = -sum_k delta_k log s_k and its raw gradient."""
    delta = grid.cell_masses
    s = _stretches(state, grid)
    val = float(-delta @ np.log(s))
    grad = np.zeros(state.K + 1)
    grad[1:] -= 1.0 / s
    grad[:-1] += 1.0 / s
    return val, grad


def discrete_h2(state, grid):
    """Discrete quadratic entropy H2 = sum_k delta_k / s_k and its raw gradient."""
    delta = grid.cell_masses
    s = _stretches(state, grid)
    val = float(delta @ (1.0 / s))
    grad = np.zeros(state.K + 1)
    grad[1:] -= 1.0 / s ** 2
    grad[:-1] += 1.0 / s ** 2
    return val, grad


def _h1_hess(state, grid):
    delta = grid.cell_masses
    s = _stretches(state, grid)
    b = 1.0 / (delta * s ** 2)
    return b


def _h2_hess(state, grid):
    delta = grid.cell_masses
    s = _stretches(state, grid)
    return 2.0 / (delta * s ** 3)


def _banded_matvec(b, v):
    """Tridiagonal matvec for a Hessian with cell coefficients b: diag
    contributions (b_p + b_{p+1}), off-diagonal -b_{p+1}."""
    out = np.zeros_like(v)
    d = b * (v[1:] - v[:-1])
    out[1:] += d
    out[:-1] -= d
    return out


def _metric_grad(state, grid, metric, which):
    raw = (discrete_h1 if which == "h1" else discrete_h2)(state, grid)[1]
    return _project(state, metric.solve(_project(state, raw)))


def fisher_surrogate(state, grid, metric):
    """Discrete Fisher information <grad H1, grad H1>_{L2_xi}."""
    g1 = _metric_grad(state, grid, metric, "h1")
    return metric.inner(g1, g1)


def dirichlet_surrogate(state, grid, metric):
    """Discrete Dirichlet energy <grad H1, grad H2>_{L2_xi}."""
    g1 = _metric_grad(state, grid, metric, "h1")
    g2 = _metric_grad(state, grid, metric, "h2")
    return metric.inner(g1, g2)


def _project(state, v):
    if state.mode == "pinned":
        v = v.copy()
        v[0] = 0.0
        v[-1] = 0.0
    return v


def surrogate_gradient(which, state, grid, metric):
    """Analytic gradient of the fisher/dirichlet surrogate, differentiating
    through the metric solve via its adjoint."""
    g1 = _metric_grad(state, grid, metric, "h1")
    b1 = _h1_hess(state, grid)

    def pull_back(g):
        # adjoint of raw -> P A^{-1} P raw applied to the metric image of g
        return _project(state, metric.solve(_project(state, metric.matvec(g))))

    if which == "fisher":
        return 2.0 * _banded_matvec(b1, pull_back(g1))
    if which == "dirichlet":
        g2 = _metric_grad(state, grid, metric, "h2")
        b2 = _h2_hess(state, grid)
        return _banded_matvec(b1, pull_back(g2)) + _banded_matvec(b2, pull_back(g1))
    raise ValueError(f"unknown surrogate {which!r}")
