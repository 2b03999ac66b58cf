"""Implicit-Euler minimizing-movement stepping for 1D Lagrangian flows.

Each step solves the stationarity system A_xi (x - x_prev)/dt + dE(x) = 0 on
the free node coordinates by damped Newton with a cell-monotonicity safeguard,
and enforces the minimizing-movement decrease
E(x) + |x - x_prev|^2_{L2_xi} / (2 dt) <= E(x_prev) as a postcondition.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from . import functionals
from .core import LagrangianState, density_from_state, l2_metric, wasserstein1d
from .functionals import DegenerateCellError


class StepRejectedError(RuntimeError):
    """Newton failed to converge; the caller may halve dt and retry."""


@dataclass(frozen=True)
class NewtonConfig:
    damping: float = 1.0
    eps_residual: float = 1e-10
    eps_step: float = 1e-12
    max_iter: int = 50
    safeguard: float = 0.1

    def __post_init__(self):
        if not (0 < self.damping <= 1):
            raise ValueError("damping must lie in (0, 1]")
        if self.eps_residual <= 0 or self.eps_step <= 0 or self.max_iter <= 0:
            raise ValueError("tolerances and iteration budget must be positive")
        if not (0 < self.safeguard < 1):
            raise ValueError("safeguard fraction must lie in (0, 1)")


@dataclass
class FlowTrajectory:
    grid: object
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    min_density: list = field(default_factory=list)
    max_density: list = field(default_factory=list)

    def record(self, t, state, energy, iters, residual):
        if self.times and t <= self.times[-1]:
            raise ValueError("timestamps must be strictly increasing")
        rho = density_from_state(state, self.grid)
        self.times.append(t)
        self.states.append(state)
        self.energies.append(energy)
        self.newton_iters.append(iters)
        self.residuals.append(residual)
        self.min_density.append(float(rho.values.min()))
        self.max_density.append(float(rho.values.max()))


class ProblemEnergy:
    """Energy adapter for a ProblemSpec: analytic value/gradient/Hessian."""

    def __init__(self, problem, grid):
        self.problem = problem
        self.grid = grid

    def value(self, state):
        return functionals.discrete_energy(state, self.grid, self.problem)

    def gradient(self, state):
        return functionals.raw_gradient(state, self.grid, self.problem)

    def hessian_banded(self, state):
        if self.problem.interaction is not None:
            return None
        return functionals.hessian_banded(state, self.grid, self.problem)

    def hessian(self, state):
        return functionals.discrete_hessian(state, self.grid, self.problem)


class SurrogateEnergy:
    """Energy adapter for the fisher/dirichlet fourth-order surrogates.

    The gradient is the analytic adjoint formula; the Hessian is assembled by
    central finite differences of that gradient (dense).
    """

    def __init__(self, which, grid, metric, fd_step=1e-6):
        if which not in ("fisher", "dirichlet"):
            raise ValueError(f"unknown surrogate {which!r}")
        self.which = which
        self.grid = grid
        self.metric = metric
        self.fd_step = fd_step

    def value(self, state):
        fn = functionals.fisher_surrogate if self.which == "fisher" \
            else functionals.dirichlet_surrogate
        return fn(state, self.grid, self.metric)

    def gradient(self, state):
        return functionals.surrogate_gradient(self.which, state, self.grid, self.metric)

    def hessian_banded(self, state):
        return None

    def hessian(self, state):
        x = state.positions
        n = x.size
        H = np.zeros((n, n))
        h = self.fd_step
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            gp = self.gradient(state.with_positions(x + e))
            gm = self.gradient(state.with_positions(x - e))
            H[:, i] = (gp - gm) / (2 * h)
        return 0.5 * (H + H.T)


def _dual_norm(r, lumped_diag, free):
    return float(np.sqrt(np.sum(r[free] ** 2 / lumped_diag[free])))


def _solve_newton_system(metric, dt, energy, state, rhs, free):
    """Solve (A/dt + Hess E) d = rhs on the contiguous free index range."""
    lo = np.argmax(free)
    hi = free.size - np.argmax(free[::-1])
    hb = energy.hessian_banded(state)
    if hb is not None:
        diag, off = hb
        diag = diag + metric.diag / dt
        if metric.form == "full":
            off = off + metric.off / dt
        d, o = diag[lo:hi], off[lo:hi - 1]
        n = d.size
        ab = np.zeros((3, n))
        ab[0, 1:] = o
        ab[1] = d
        ab[2, :-1] = o
        sol = solve_banded((1, 1), ab, rhs[lo:hi])
    else:
        M = energy.hessian(state) + metric.dense() / dt
        sol = np.linalg.solve(M[lo:hi, lo:hi], rhs[lo:hi])
    out = np.zeros(free.size)
    out[lo:hi] = sol
    return out


def jko_step(prev, dt, energy, grid, metric, config=NewtonConfig(), return_info=False):
    """One implicit-Euler minimizing-movement step.

    Raises StepRejectedError when Newton does not converge within the
    iteration budget and DegenerateCellError when the monotonicity safeguard
    cannot find an admissible step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    lumped = l2_metric(grid, "lumped").diag
    xprev = prev.positions
    free = np.ones(xprev.size, dtype=bool)
    if prev.mode == "pinned":
        free[0] = free[-1] = False

    def residual(state):
        return metric.matvec(state.positions - xprev) / dt + energy.gradient(state)

    state = prev
    r = residual(state)
    rnorm = _dual_norm(r, lumped, free)
    iters = 0
    e_prev = energy.value(prev)
    while rnorm > config.eps_residual:
        if iters >= config.max_iter:
            raise StepRejectedError(
                f"Newton stalled at residual {rnorm:.3e} after {iters} iterations")
        d = _solve_newton_system(metric, dt, energy, state, -r, free)
        s_cur = np.diff(state.positions)
        t = config.damping
        while True:
            x_new = state.positions + t * d
            dx_new = np.diff(x_new)
            if np.all(dx_new >= config.safeguard * s_cur):
                break
            t *= 0.5
            if t < 1e-14:
                raise DegenerateCellError(
                    "monotonicity safeguard exhausted: a cell is collapsing")
        state = state.with_positions(x_new)
        iters += 1
        r = residual(state)
        rnorm = _dual_norm(r, lumped, free)
        if t * float(np.max(np.abs(d))) <= config.eps_step:
            break
    # minimizing-movement decrease postcondition
    move = state.positions - xprev
    penalty = metric.inner(move, move) / (2 * dt)
    e_new = energy.value(state)
    if e_new + penalty > e_prev + 1e-9 * (1 + abs(e_prev)):
        raise StepRejectedError(
            f"minimizing-movement decrease violated: {e_new + penalty:.6e} > {e_prev:.6e}")
    if return_info:
        return state, {"iterations": iters, "residual": rnorm, "energy": e_new}
    return state


def run_flow(initial, grid, energy, dt, n_steps, config=NewtonConfig(),
             metric=None, dt_min_factor=16.0, retry_budget=8):
    """Run n_steps accepted implicit-Euler steps with automatic dt halving on
    rejection (bounded below by dt/dt_min_factor) and doubling back toward the
    nominal dt after two consecutive successes."""
    if metric is None:
        metric = l2_metric(grid, "lumped")
    traj = FlowTrajectory(grid=grid)
    traj.record(0.0, initial, energy.value(initial), 0, 0.0)
    state = initial
    t = 0.0
    dt_cur = dt
    successes = 0
    for _ in range(n_steps):
        retries = 0
        while True:
            try:
                state_new, info = jko_step(state, dt_cur, energy, grid, metric,
                                           config, return_info=True)
                break
            except (StepRejectedError, DegenerateCellError):
                retries += 1
                if retries > retry_budget or dt_cur <= dt / dt_min_factor:
                    raise
                dt_cur = max(dt_cur / 2, dt / dt_min_factor)
                successes = 0
        t += dt_cur
        state = state_new
        traj.record(t, state, info["energy"], info["iterations"], info["residual"])
        successes += 1
        if successes >= 2 and dt_cur < dt:
            dt_cur = min(2 * dt_cur, dt)
            successes = 0
        # structural mass check
        assert abs(density_from_state(state, grid).total_mass() - 1.0) < 1e-12
    return traj


def contraction_check(traj_a, traj_b, lam, dt):
    """Per-step Wasserstein contraction ratios against (1 + lam dt)^{-1}."""
    if traj_a.grid is not traj_b.grid and not np.array_equal(
            traj_a.grid.nodes, traj_b.grid.nodes):
        raise ValueError("trajectories use different grids")
    n = min(len(traj_a.states), len(traj_b.states))
    dists = [wasserstein1d(density_from_state(traj_a.states[i], traj_a.grid),
                           density_from_state(traj_b.states[i], traj_b.grid))
             for i in range(n)]
    ratios = []
    ok = True
    bound = (1.0 + 1e-8) / (1.0 + lam * dt)
    for i in range(1, n):
        if dists[i - 1] == 0.0:
            ratios.append(0.0)
            continue
        r = dists[i] / dists[i - 1]
        ratios.append(r)
        if r > bound:
            ok = False
    return {"distances": dists, "ratios": ratios, "bound": bound, "satisfied": ok}


def trajectory_to_csv(traj, path, reference=None):
    """Per-step CSV: time, energy, W2 distance to an optional reference
    density, min/max density, Newton iterations."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "energy", "w2_to_reference", "min_density",
                    "max_density", "newton_iterations"])
        for i, t in enumerate(traj.times):
            if reference is not None:
                d = wasserstein1d(density_from_state(traj.states[i], traj.grid), reference)
            else:
                d = ""
            w.writerow([t, traj.energies[i], d, traj.min_density[i],
                        traj.max_density[i], traj.newton_iters[i]])
