"""Deterministic particle (blob) method for aggregation-diffusion equations.

Diffusion is handled by mollifying the empirical measure with a Gaussian
kernel: the regularized internal energy sum_i m_i F(psi_i) with
psi_i = sum_j m_j phi_eps(x_i - x_j) is differentiated exactly, so the
particle system is a finite-dimensional gradient flow of the regularized
energy.  All pairwise sums are direct O(N^2) with fixed reduction order.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels


class BlobError(ValueError):
    pass


@dataclass(frozen=True)
class ParticleEnsemble:
    """Particle positions (N, d) with fixed nonnegative masses (N,)."""

    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        m = np.asarray(self.masses, dtype=float)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "masses", m)
        pos.setflags(write=False)
        m.setflags(write=False)
        if pos.ndim != 2 or pos.shape[1] not in (1, 2):
            raise BlobError("positions must be (N, d) with d in {1, 2}")
        if m.shape != (pos.shape[0],):
            raise BlobError("need one mass per particle")
        if np.any(m < 0):
            raise BlobError("masses must be nonnegative")

    @property
    def N(self):
        return self.positions.shape[0]

    @property
    def dimension(self):
        return self.positions.shape[1]

    @property
    def total_mass(self):
        return float(self.masses.sum())

    def with_positions(self, pos):
        return ParticleEnsemble(np.asarray(pos, dtype=float), self.masses)


@dataclass(frozen=True)
class MollifierSpec:
    """Gaussian mollifier phi_eps(x) = (2 pi eps^2)^{-d/2} exp(-|x|^2/2eps^2)."""

    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise BlobError("mollifier width must be positive")

    def value(self, x, d):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(np.atleast_2d(x) ** 2, axis=-1)
        return (2 * np.pi * self.eps ** 2) ** (-0.5 * d) * np.exp(-r2 / (2 * self.eps ** 2))


def default_mollifier(ensemble, factor=2.0):
    """Width tied to the initial resolution: factor times the nearest-neighbor
    spacing of the ensemble."""
    return MollifierSpec(factor * kernels.min_pairwise_distance(ensemble.positions))


@dataclass(frozen=True)
class BlobInteraction:
    """Pairwise potential W with gradient; kind 'newtonian' marks the 2D
    logarithmic kernel W(z) = log|z|/(2 pi) handled by the fast path."""

    W: callable
    grad_W: callable
    kind: str = "custom"
    coef: float = 0.0


def newtonian_interaction(chi=1.0):
    """Attractive 2D Newtonian kernel chi * log|z| / (2 pi)."""
    c = chi / (2 * np.pi)

    def W(z):
        r2 = np.sum(np.asarray(z, dtype=float) ** 2, axis=-1)
        return 0.5 * c * np.log(r2)

    def grad_W(z):
        z = np.asarray(z, dtype=float)
        r2 = np.sum(z ** 2, axis=-1, keepdims=True)
        return c * z / r2

    return BlobInteraction(W=W, grad_W=grad_W, kind="newtonian", coef=c)


def quadratic_blob_interaction(c=1.0):
    return BlobInteraction(
        W=lambda z: 0.5 * c * np.sum(np.asarray(z, dtype=float) ** 2, axis=-1),
        grad_W=lambda z: c * np.asarray(z, dtype=float),
        kind="quadratic")


@dataclass(frozen=True)
class BlobPotential:
    V: callable        # (N, d) -> (N,)
    grad_V: callable   # (N, d) -> (N, d)


def radial_quadratic_potential(a=0.5):
    return BlobPotential(
        V=lambda x: a * np.sum(np.asarray(x, dtype=float) ** 2, axis=-1),
        grad_V=lambda x: 2.0 * a * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class BlobProblem:
    """F is the internal density function: energy density F(phi_eps * rho)
    integrated against rho.  F and F_prime must be finite on (0, inf)."""

    F: callable = None
    F_prime: callable = None
    potential: BlobPotential = None
    interaction: BlobInteraction = None
    mollifier: MollifierSpec = MollifierSpec(0.1)


def log_diffusion(mollifier):
    """Linear diffusion: F(r) = log r."""
    return BlobProblem(F=np.log, F_prime=lambda r: 1.0 / r, mollifier=mollifier)


def power_diffusion(m, mollifier):
    """Porous-medium diffusion of exponent m > 1: F(r) = r^{m-1}/(m-1)."""
    if m <= 1:
        raise BlobError("porous-medium exponent must exceed 1")
    return BlobProblem(F=lambda r: r ** (m - 1.0) / (m - 1.0),
                       F_prime=lambda r: r ** (m - 2.0),
                       mollifier=mollifier)


def mollified_density(ensemble, problem):
    """psi_i = sum_j m_j phi_eps(x_i - x_j), self term included."""
    return kernels.mollify(ensemble.positions, ensemble.masses, problem.mollifier.eps)


def regularized_internal_energy(ensemble, problem):
    """sum_i m_i F(psi_i); raises on an F value that is not finite."""
    if problem.F is None:
        return 0.0
    psi = mollified_density(ensemble, problem)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        vals = problem.F(psi)
    bad = np.nonzero(~np.isfinite(vals))[0]
    if bad.size:
        raise BlobError(f"diffusion energy undefined at particle {bad[0]} "
                        f"(mollified density {psi[bad[0]]})")
    return float(ensemble.masses @ vals)


def _interaction_energy(ensemble, problem):
    inter = problem.interaction
    if inter is None:
        return 0.0
    pos, m = ensemble.positions, ensemble.masses
    if inter.kind == "newtonian":
        return float(kernels.newtonian_energy(pos, m, inter.coef))
    diff = pos[:, None, :] - pos[None, :, :]
    w = inter.W(diff)
    np.fill_diagonal(w, 0.0)
    return float(0.5 * m @ w @ m)


def blob_energy(ensemble, problem):
    """Full regularized energy: diffusion + potential + interaction parts."""
    total = regularized_internal_energy(ensemble, problem)
    if problem.potential is not None:
        total += float(ensemble.masses @ problem.potential.V(ensemble.positions))
    total += _interaction_energy(ensemble, problem)
    return total


def blob_rhs(ensemble, problem):
    """Particle velocities: minus the mass-weighted gradient of blob_energy.

    v_i = -grad V(x_i) - sum_{j!=i} grad W(x_i-x_j) m_j
          - sum_j m_j F'(psi_j) grad phi_eps(x_i-x_j) - F'(psi_i) sum_j m_j grad phi_eps(x_i-x_j)
    """
    pos, m = ensemble.positions, ensemble.masses
    v = np.zeros_like(pos)
    if problem.F is not None:
        eps = problem.mollifier.eps
        psi = kernels.mollify(pos, m, eps)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            coef = problem.F_prime(psi)
        bad = np.nonzero(~np.isfinite(coef))[0]
        if bad.size:
            raise BlobError(f"diffusion velocity undefined at particle {bad[0]}")
        s0, s1 = kernels.mollify_weighted_grads(pos, m, eps, coef)
        v -= s1 + coef[:, None] * s0
    if problem.potential is not None:
        v -= problem.potential.grad_V(pos)
    inter = problem.interaction
    if inter is not None:
        if inter.kind == "newtonian":
            if kernels.min_pairwise_distance(pos) == 0.0:
                raise BlobError("coincident particles with singular interaction")
            v -= kernels.newtonian_force(pos, m, inter.coef)
        else:
            diff = pos[:, None, :] - pos[None, :, :]
            g = inter.grad_W(diff)
            idx = np.arange(ensemble.N)
            g[idx, idx, :] = 0.0
            v -= np.einsum("ijk,j->ik", g, m)
    return v


@dataclass
class BlobTrajectory:
    times: list
    snapshots: list           # ParticleEnsemble at record times
    energies: list
    dissipations: list        # -sum_i m_i |v_i|^2 at record times
    blown_up: bool = False
    halt_time: float = None


def integrate(ensemble, problem, T, dt, integrator="rk4", record_every=1,
              blowup_factor=1e-3, max_halvings=8):
    """March the particle ODE system to time T.

    RK4 (default) or explicit Euler; the step is halved (up to max_halvings,
    then restored after two successes) whenever the regularized energy
    increases.  Integration halts with the blow-up flag once the minimum
    pairwise distance falls below blowup_factor * eps.
    """
    if dt <= 0 or T <= 0:
        raise BlobError("dt and T must be positive")

    def rhs(pos):
        return blob_rhs(ensemble.with_positions(pos), problem)

    def step(pos, h):
        if integrator == "euler":
            return pos + h * rhs(pos)
        if integrator == "rk4":
            k1 = rhs(pos)
            k2 = rhs(pos + 0.5 * h * k1)
            k3 = rhs(pos + 0.5 * h * k2)
            k4 = rhs(pos + h * k3)
            return pos + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        raise BlobError(f"unknown integrator {integrator!r}")

    threshold = blowup_factor * problem.mollifier.eps
    traj = BlobTrajectory([], [], [], [], False, None)

    def record(t, ens):
        v = blob_rhs(ens, problem)
        traj.times.append(t)
        traj.snapshots.append(ens)
        traj.energies.append(blob_energy(ens, problem))
        traj.dissipations.append(float(-ens.masses @ np.sum(v * v, axis=1)))

    t = 0.0
    record(t, ensemble)
    e_cur = traj.energies[0]
    dt_cur = dt
    successes = 0
    n = 0
    while t < T - 1e-12 * T:
        h = min(dt_cur, T - t)
        pos_new = step(ensemble.positions, h)
        if not np.all(np.isfinite(pos_new)):
            traj.blown_up = True
            traj.halt_time = t
            break
        cand = ensemble.with_positions(pos_new)
        if kernels.min_pairwise_distance(pos_new) < threshold:
            traj.blown_up = True
            traj.halt_time = t + h
            record(t + h, cand)
            break
        e_new = blob_energy(cand, problem)
        if e_new > e_cur + 1e-10 * (1 + abs(e_cur)):
            if dt_cur > dt / 2 ** max_halvings:
                dt_cur *= 0.5
                successes = 0
                continue
            # step cannot be refined further; accept and let diagnostics show it
        ensemble = cand
        t += h
        e_cur = e_new
        n += 1
        successes += 1
        if successes >= 2 and dt_cur < dt:
            dt_cur = min(2 * dt_cur, dt)
            successes = 0
        if n % record_every == 0:
            record(t, ensemble)
    if traj.times[-1] < t:
        record(t, ensemble)
    return traj


def concentration_metrics(ensemble, radius=0.1):
    """Second moment about the mass center, min pairwise distance, and the
    mass within `radius` of the mass center."""
    pos, m = ensemble.positions, ensemble.masses
    center = (m @ pos) / m.sum()
    d2 = np.sum((pos - center) ** 2, axis=1)
    return {
        "second_moment": float(m @ d2),
        "min_distance": (kernels.min_pairwise_distance(pos)
                         if ensemble.N > 1 else float("inf")),
        "mass_within_radius": float(m[d2 <= radius ** 2].sum()),
    }


def particles_to_csv(ensemble, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y", "mass"])
        for i in range(ensemble.N):
            p = ensemble.positions[i]
            y = p[1] if ensemble.dimension == 2 else ""
            w.writerow([i, repr(float(p[0])), repr(float(y)) if y != "" else "",
                        repr(float(ensemble.masses[i]))])


def metrics_to_csv(traj, path, radius=0.1):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "energy", "dissipation", "second_moment", "min_distance"])
        for t, ens, e, dis in zip(traj.times, traj.snapshots, traj.energies,
                                  traj.dissipations):
            met = concentration_metrics(ens, radius)
            w.writerow([t, e, dis, met["second_moment"], met["min_distance"]])
