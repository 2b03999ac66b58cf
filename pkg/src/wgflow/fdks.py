"""Implicit finite-difference scheme for the modified Keller-Segel model in
self-similar variables, written in Lagrangian (pseudo-inverse) form.

Node i of the state vector X carries mass Delta m = 1/N; the implicit Euler
residual combines the diffusive flux differences 1/(X_{i+1}-X_i), the
confinement term X_i and the chi-weighted singular interaction sum.  The flow
contracts to the unique centered steady state at the chi-independent rate
(1 + 2 dt)^{-n} in the Euclidean norm, which contraction_report verifies.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import kernels
from .jko1d import NewtonConfig, StepRejectedError


class KSError(ValueError):
    pass


@dataclass(frozen=True)
class KSFDConfig:
    N: int
    chi: float = 0.0
    dt: float = 0.1
    chi_critical: float = 1.0
    newton: NewtonConfig = field(default_factory=lambda: NewtonConfig(eps_residual=1e-10))

    def __post_init__(self):
        if self.N < 2:
            raise KSError("need at least 2 intervals")
        if self.chi < 0:
            raise KSError("interaction strength must be nonnegative")
        if self.dt <= 0:
            raise KSError("dt must be positive")

    @property
    def delta_m(self):
        return 1.0 / self.N


def _check_monotone(X):
    X = np.asarray(X, dtype=float)
    if np.any(np.diff(X) <= 0):
        raise KSError("node positions must be strictly increasing")
    return X


@dataclass(frozen=True)
class KSState:
    X: np.ndarray

    def __post_init__(self):
        X = _check_monotone(self.X)
        object.__setattr__(self, "X", X)
        X.setflags(write=False)
        if abs(X.sum()) > 1e-10:
            raise KSError(f"state not centered: sum {X.sum():.3e}")


@dataclass(frozen=True)
class SteadyState:
    U: np.ndarray

    def __post_init__(self):
        U = _check_monotone(self.U)
        object.__setattr__(self, "U", U)
        U.setflags(write=False)


def _stationary_terms(X, config):
    """Flux differences + confinement + interaction of the scheme, without
    the time-derivative term."""
    inv_gap = 1.0 / np.diff(X)
    out = X.copy()
    out[:-1] += inv_gap     # right flux, dropped at i = N
    out[1:] -= inv_gap      # left flux, dropped at i = 0
    if config.chi > 0:
        out += (config.chi / np.pi) * config.delta_m * kernels.reciprocal_gap_sum(X)
    return out


def fdks_residual(X, X_prev, config):
    """Implicit-Euler residual; component i is
    (X_i - X_prev_i)/dt + 1/(X_{i+1}-X_i) - 1/(X_i-X_{i-1}) + X_i
    + (chi/pi) sum_{j != i} dm/(X_i - X_j)."""
    Xa = _check_monotone(X.X if isinstance(X, KSState) else X)
    Xp = np.asarray(X_prev.X if isinstance(X_prev, KSState) else X_prev, dtype=float)
    return (Xa - Xp) / config.dt + _stationary_terms(Xa, config)


def _jacobian(X, config, with_time=True):
    n = X.size
    J = np.zeros((n, n))
    if config.chi > 0:
        diff = X[:, None] - X[None, :]
        np.fill_diagonal(diff, 1.0)
        inv2 = 1.0 / diff ** 2
        np.fill_diagonal(inv2, 0.0)
        c = (config.chi / np.pi) * config.delta_m
        J += c * inv2
        J[np.diag_indices(n)] -= c * inv2.sum(axis=1)
    g2 = 1.0 / np.diff(X) ** 2
    idx = np.arange(n - 1)
    J[idx, idx] += g2           # d/dX_i of right flux
    J[idx, idx + 1] -= g2
    J[idx + 1, idx + 1] += g2   # d/dX_i of left flux
    J[idx + 1, idx] -= g2
    J[np.diag_indices(n)] += 1.0
    if with_time:
        J[np.diag_indices(n)] += 1.0 / config.dt
    return J


def _newton(X0, config, residual_fn, jacobian_fn):
    cfg = config.newton
    X = X0.copy()
    r = residual_fn(X)
    for _ in range(cfg.max_iter):
        if np.linalg.norm(r) <= cfg.eps_residual:
            return X
        d = np.linalg.solve(jacobian_fn(X), -r)
        gaps = np.diff(X)
        t = cfg.damping
        while np.any(np.diff(X + t * d) < cfg.safeguard * gaps):
            t *= 0.5
            if t < 1e-14:
                raise StepRejectedError("monotonicity safeguard exhausted")
        X = X + t * d
        r = residual_fn(X)
    if np.linalg.norm(r) <= cfg.eps_residual:
        return X
    raise StepRejectedError(f"Newton stalled at residual {np.linalg.norm(r):.3e}")


def fdks_step(X_prev, config, max_halvings=8):
    """One implicit-Euler step by Newton with analytic Jacobian; the result
    is re-centered.  On Newton failure the step is retried with halved dt."""
    Xp = X_prev.X if isinstance(X_prev, KSState) else _check_monotone(X_prev)
    cfg = config
    for _ in range(max_halvings + 1):
        try:
            X = _newton(Xp.copy(), cfg,
                        lambda X: (X - Xp) / cfg.dt + _stationary_terms(X, cfg),
                        lambda X: _jacobian(X, cfg, with_time=True))
            return KSState(X - X.mean())
        except StepRejectedError:
            cfg = KSFDConfig(N=cfg.N, chi=cfg.chi, dt=cfg.dt / 2,
                             chi_critical=cfg.chi_critical, newton=cfg.newton)
    raise StepRejectedError("fdks step failed after dt-halving retry budget")


def steady_state(config, initial=None, cross_check=True):
    """Damped Newton on the stationary system from Gaussian-quantile initial
    data; the converged profile is centered and verified against the summed
    (product) form of the equilibrium conditions."""
    N = config.N
    if initial is None:
        p = (np.arange(N + 1) + 0.5) / (N + 1)
        initial = norm.ppf(p)
        initial = initial - initial.mean()
    X0 = np.asarray(initial, dtype=float)
    try:
        U = _newton(X0.copy(), config,
                    lambda X: _stationary_terms(X, config),
                    lambda X: _jacobian(X, config, with_time=False))
    except StepRejectedError as exc:
        raise KSError(
            f"steady-state Newton diverged (chi={config.chi} may exceed the "
            f"critical threshold for N={N})") from exc
    U = U - U.mean()
    resid = np.linalg.norm(_stationary_terms(U, config))
    if resid > config.newton.eps_residual * 10:
        raise KSError(f"steady-state residual {resid:.3e} too large")
    if cross_check:
        defect = equilibrium_product_defect(U, config)
        if np.max(np.abs(defect)) > 1e-8:
            raise KSError("equilibrium product identity violated: "
                          f"max defect {np.max(np.abs(defect)):.3e}")
    return SteadyState(U)


def equilibrium_product_defect(U, config):
    """Defect of the summed equilibrium form: for every k,
    (U_{k+1}-U_k) * { (chi/pi) dm sum_{i<=k, j>k} 1/(U_j-U_i) - sum_{i<=k} U_i } - 1."""
    U = np.asarray(U, dtype=float)
    N = U.size - 1
    out = np.empty(N)
    csum = np.cumsum(U)
    for k in range(N):
        inter = 0.0
        if config.chi > 0:
            inter = (config.chi / np.pi) * config.delta_m * np.sum(
                1.0 / (U[k + 1:][None, :] - U[:k + 1][:, None]))
        out[k] = (U[k + 1] - U[k]) * (inter - csum[k]) - 1.0
    return out


def run_fdks(X0, config, n_steps):
    """March n_steps implicit-Euler steps; returns the list of states."""
    state = X0 if isinstance(X0, KSState) else KSState(np.asarray(X0, dtype=float))
    states = [state]
    for _ in range(n_steps):
        state = fdks_step(state, config)
        states.append(state)
    return states


def contraction_report(trajectory, U, dt):
    """Check the per-step dissipation inequality
    |X^{n+1}-U|^2 - |X^n-U|^2 <= -2 dt |X^{n+1}-U|^2
    and the cumulative bound |X^n-U|^2 <= (1+2dt)^{-n} |X^0-U|^2."""
    Uv = U.U if isinstance(U, SteadyState) else np.asarray(U, dtype=float)
    d2 = [float(np.sum((s.X - Uv) ** 2)) for s in trajectory]
    per_step_ok = all(
        d2[n + 1] - d2[n] <= -2 * dt * d2[n + 1] * (1 - 1e-10) + 1e-14
        for n in range(len(d2) - 1))
    bounds = [d2[0] / (1 + 2 * dt) ** n for n in range(len(d2))]
    cumulative_ok = all(d2[n] <= bounds[n] * (1 + 1e-8) + 1e-14
                        for n in range(len(d2)))
    return {"distances_sq": d2, "bounds": bounds,
            "per_step_ok": per_step_ok, "cumulative_ok": cumulative_ok}


def gamma(lam):
    """gamma(lambda) = 2 - lambda - 1/lambda; nonpositive, zero only at 1."""
    lam = np.asarray(lam, dtype=float)
    return 2.0 - lam - 1.0 / lam


def report_to_csv(report, trajectory, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "dist_sq", "bound", "min_gap"])
        for n, (d, b, s) in enumerate(zip(report["distances_sq"],
                                          report["bounds"], trajectory)):
            w.writerow([n, d, b, float(np.diff(s.X).min())])
