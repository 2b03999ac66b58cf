"""Mass grids, Lagrangian states, piecewise-constant densities and the
exact 1D quadratic Wasserstein distance via inverse distribution functions.

All types are immutable value objects; every operation is a pure function.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

MASS_TOL = 1e-12


class GridError(ValueError):
    pass


class StateError(ValueError):
    pass


class DensityError(ValueError):
    pass


@dataclass(frozen=True)
class MassGrid:
    """Partition 0 = xi_0 < ... < xi_K = 1 of the reference interval,
    carrying the particle masses delta_k = xi_k - xi_{k-1}."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        nodes.setflags(write=False)
        if nodes.ndim != 1 or nodes.size < 2:
            raise GridError("grid needs at least two nodes")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise GridError("grid endpoints must be 0 and 1")
        if np.any(np.diff(nodes) <= 0):
            raise GridError("grid nodes must be strictly increasing")
        if abs(np.sum(np.diff(nodes)) - 1.0) > 1e-14:
            raise GridError("cell masses must sum to 1")

    @property
    def K(self):
        return self.nodes.size - 1

    @property
    def cell_masses(self):
        return np.diff(self.nodes)


@dataclass(frozen=True)
class LagrangianState:
    """Monotone node positions x_0 < ... < x_K; the discrete Lagrangian map.

    mode 'pinned' keeps the endpoint positions fixed under every operation,
    mode 'free' lets all nodes move.
    """

    positions: np.ndarray
    mode: str = "pinned"

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", pos)
        pos.setflags(write=False)
        if pos.ndim != 1 or pos.size < 2:
            raise StateError("state needs at least two positions")
        if np.any(np.diff(pos) <= 0):
            raise StateError("positions must be strictly increasing")
        if self.mode not in ("pinned", "free"):
            raise StateError(f"unknown mode {self.mode!r}")

    @property
    def K(self):
        return self.positions.size - 1

    def with_positions(self, pos):
        return LagrangianState(np.asarray(pos, dtype=float), self.mode)


@dataclass(frozen=True)
class PiecewiseConstantDensity:
    """Density that is constant on each cell (breakpoints[k-1], breakpoints[k])."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        bp.setflags(write=False)
        vals.setflags(write=False)
        if bp.ndim != 1 or vals.ndim != 1 or vals.size != bp.size - 1:
            raise DensityError("need K+1 breakpoints and K values")
        if np.any(np.diff(bp) <= 0):
            raise DensityError("breakpoints must be strictly increasing")
        if np.any(vals < 0):
            raise DensityError("density values must be nonnegative")
        if abs(self.total_mass() - 1.0) > MASS_TOL:
            raise DensityError(f"total mass {self.total_mass()} != 1")

    def total_mass(self):
        return float(np.sum(self.values * np.diff(self.breakpoints)))

    def cumulative_masses(self):
        """CDF values at the breakpoints."""
        return np.concatenate(([0.0], np.cumsum(self.values * np.diff(self.breakpoints))))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1, 0, self.values.size - 1)
        out = self.values[idx]
        return np.where((x < self.breakpoints[0]) | (x > self.breakpoints[-1]), 0.0, out)


@dataclass(frozen=True)
class MetricMatrix:
    """Hat-function overlap matrix A_xi on a mass grid, either the full
    tridiagonal form or its lumped (row-sum) diagonal approximation."""

    form: str            # "full" | "lumped"
    diag: np.ndarray     # main diagonal, length K+1
    off: np.ndarray = field(default=None)  # sub/super diagonal, length K (full only)

    def __post_init__(self):
        if self.form not in ("full", "lumped"):
            raise ValueError(f"unknown metric form {self.form!r}")
        d = np.asarray(self.diag, dtype=float)
        object.__setattr__(self, "diag", d)
        if self.form == "full":
            o = np.asarray(self.off, dtype=float)
            object.__setattr__(self, "off", o)

    def matvec(self, v):
        if self.form == "lumped":
            return self.diag * v
        out = self.diag * v
        out[:-1] += self.off * v[1:]
        out[1:] += self.off * v[:-1]
        return out

    def solve(self, rhs):
        if self.form == "lumped":
            return rhs / self.diag
        from scipy.linalg import solve_banded
        n = self.diag.size
        ab = np.zeros((3, n))
        ab[0, 1:] = self.off
        ab[1] = self.diag
        ab[2, :-1] = self.off
        return solve_banded((1, 1), ab, rhs)

    def inner(self, u, v):
        return float(u @ self.matvec(v))

    def norm(self, v):
        return float(np.sqrt(max(self.inner(v, v), 0.0)))

    def dense(self):
        n = self.diag.size
        a = np.diag(self.diag)
        if self.form == "full":
            a += np.diag(self.off, 1) + np.diag(self.off, -1)
        return a


def build_mass_grid(K, weights=None):
    """Uniform partition of [0,1] into K cells, or the cumulative-sum grid of
    the given positive cell weights (which must sum to 1)."""
    if K < 1:
        raise GridError("K must be >= 1")
    if weights is None:
        return MassGrid(np.linspace(0.0, 1.0, K + 1))
    weights = np.asarray(weights, dtype=float)
    if weights.size != K:
        raise GridError(f"expected {K} weights, got {weights.size}")
    bad = np.nonzero(weights <= 0)[0]
    if bad.size:
        raise GridError(f"nonpositive weight at index {bad[0]}")
    if abs(weights.sum() - 1.0) > 1e-12:
        raise GridError(f"weights sum to {weights.sum()}, not 1")
    nodes = np.concatenate(([0.0], np.cumsum(weights)))
    nodes[-1] = 1.0
    return MassGrid(nodes)


def idf_from_density(density, grid, support=None, mode="pinned"):
    """Sample the inverse distribution function of `density` at the grid
    nodes: X(xi_k) = inf{x : F(x) >= xi_k}.

    `density` is a PiecewiseConstantDensity or a callable density function,
    in which case `support=(a, b)` must be supplied and the density must
    have unit mass on it.
    """
    xi = grid.nodes
    if isinstance(density, PiecewiseConstantDensity):
        F = density.cumulative_masses()
        bp = density.breakpoints
        vals = density.values
        pos = np.empty(xi.size)
        pos[0] = bp[0]
        pos[-1] = bp[-1]
        for idx, t in enumerate(xi[1:-1], start=1):
            i = int(np.searchsorted(F, t, side="left"))
            i = min(max(i, 1), vals.size)
            if t == F[i] and i < vals.size and vals[i] == 0.0:
                raise DensityError(
                    f"grid node xi={t} falls in a zero-density gap; the inverse CDF jumps there")
            if vals[i - 1] > 0.0:
                pos[idx] = bp[i - 1] + (t - F[i - 1]) / vals[i - 1]
            else:
                pos[idx] = bp[i - 1]
        state = LagrangianState(pos, mode)
        return state
    if support is None:
        raise DensityError("callable density requires an explicit support interval")
    a, b = float(support[0]), float(support[1])
    total, _ = integrate.quad(density, a, b, limit=200)
    if total <= 0:
        raise DensityError("density has zero mass on its support")
    if abs(total - 1.0) > 1e-8:
        raise DensityError(f"density mass on support is {total}, not 1")

    def cdf(x):
        v, _ = integrate.quad(density, a, x, limit=200)
        return v

    pos = np.empty(xi.size)
    pos[0] = a
    pos[-1] = b
    for idx, t in enumerate(xi[1:-1], start=1):
        pos[idx] = optimize.brentq(lambda x: cdf(x) - t, a, b, xtol=1e-14)
    return LagrangianState(pos, mode)


def density_from_state(state, grid):
    """Push-forward of the reference masses: rho_k = delta_k / (x_k - x_{k-1})."""
    dx = np.diff(state.positions)
    if np.any(dx <= 0):
        raise StateError("state is not strictly monotone")
    return PiecewiseConstantDensity(state.positions, grid.cell_masses / dx)


def _idf_graph(rho):
    """Breakpoints of the piecewise-linear inverse CDF: (xi values, x values)."""
    return rho.cumulative_masses(), rho.breakpoints


def _idf_eval(F, X, t):
    """Evaluate the piecewise-linear inverse CDF with knots (F, X) at points t."""
    i = np.clip(np.searchsorted(F, t, side="right") - 1, 0, F.size - 2)
    span = F[i + 1] - F[i]
    frac = np.where(span > 0, (t - F[i]) / np.where(span > 0, span, 1.0), 0.0)
    return X[i] + frac * (X[i + 1] - X[i])


def wasserstein1d(rho, eta):
    """Exact quadratic Wasserstein distance between two piecewise-constant
    probability densities: the L^2([0,1]) distance of their inverse CDFs,
    integrated cell-by-cell over the merged breakpoint set (closed-form
    quadratic on each subinterval)."""
    Fa, Xa = _idf_graph(rho)
    Fb, Xb = _idf_graph(eta)
    ts = np.unique(np.concatenate((Fa, Fb)))
    ya = _idf_eval(Fa, Xa, ts)
    yb = _idf_eval(Fb, Xb, ts)
    d = ya - yb
    h = np.diff(ts)
    d0, d1 = d[:-1], d[1:]
    total = np.sum(h * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0)
    return float(np.sqrt(max(total, 0.0)))


def l2_metric(grid, form="lumped"):
    """Hat-function overlap metric on the grid.

    full: tridiagonal with diag (delta_k + delta_{k+1})/3 and off-diagonal
    delta_{k+1}/6; lumped: the row-sum diagonal.
    """
    delta = grid.cell_masses
    dpad = np.concatenate(([0.0], delta, [0.0]))
    diag_full = (dpad[:-1] + dpad[1:]) / 3.0
    off = delta / 6.0
    if form == "full":
        return MetricMatrix("full", diag_full, off)
    if form == "lumped":
        lumped = diag_full.copy()
        lumped[:-1] += off
        lumped[1:] += off
        return MetricMatrix("lumped", lumped)
    raise ValueError(f"unknown metric form {form!r}")


# ------------------------------------------------------------- serialization

def density_to_csv(rho, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["breakpoint", "value"])
        for i, b in enumerate(rho.breakpoints):
            w.writerow([repr(float(b)), repr(float(rho.values[i])) if i < rho.values.size else ""])


def density_from_csv(path):
    bp, vals = [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            bp.append(float(row[0]))
            if len(row) > 1 and row[1] != "":
                vals.append(float(row[1]))
    return PiecewiseConstantDensity(np.array(bp), np.array(vals))


def state_to_csv(state, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "value"])
        for p in state.positions:
            w.writerow([repr(float(p)), ""])


def state_to_json(state, grid):
    return json.dumps({"grid": grid.nodes.tolist(), "positions": state.positions.tolist()})


def state_from_json(text, mode="pinned"):
    obj = json.loads(text)
    grid = MassGrid(np.asarray(obj["grid"], dtype=float))
    state = LagrangianState(np.asarray(obj["positions"], dtype=float), mode)
    return state, grid
