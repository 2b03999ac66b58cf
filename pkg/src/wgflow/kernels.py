"""Hot numeric kernels: O(N^2) pairwise sums used by the particle and
finite-difference schemes.

Every kernel has two implementations, a numba @njit version and a pure
numpy version.  The numpy path is selected by setting the environment
variable WGFLOW_NO_NUMBA=1 before import; otherwise numba is used when
importable.  Results of the two paths agree to roundoff (fixed summation
order in the numba loops, vectorized reductions in numpy).
"""

import os

import numpy as np

_disable = os.environ.get("WGFLOW_NO_NUMBA", "0") not in ("", "0", "false", "False")

if not _disable:
    try:
        from numba import njit
        USING_NUMBA = True
    except ImportError:  # pragma: no cover
        USING_NUMBA = False
else:
    USING_NUMBA = False


# ---------------------------------------------------------------- numpy path

def _mollify_numpy(pos, masses, eps):
    n, d = pos.shape
    norm = (2.0 * np.pi * eps * eps) ** (-0.5 * d)
    diff = pos[:, None, :] - pos[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    ker = norm * np.exp(-r2 / (2.0 * eps * eps))
    return ker @ masses


def _mollify_weighted_grads_numpy(pos, masses, eps, coef):
    n, d = pos.shape
    norm = (2.0 * np.pi * eps * eps) ** (-0.5 * d)
    diff = pos[:, None, :] - pos[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    ker = norm * np.exp(-r2 / (2.0 * eps * eps))
    # grad phi_eps(x_i - x_j) = -(x_i - x_j)/eps^2 * phi_eps
    g = -diff / (eps * eps) * ker[:, :, None]
    s0 = np.einsum("ijk,j->ik", g, masses)
    s1 = np.einsum("ijk,j->ik", g, masses * coef)
    return s0, s1


def _newtonian_force_numpy(pos, masses, coef):
    diff = pos[:, None, :] - pos[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(r2, 1.0)
    w = coef * masses[None, :] / r2
    np.fill_diagonal(w, 0.0)
    return np.einsum("ijk,ij->ik", diff, w)


def _newtonian_energy_numpy(pos, masses, coef):
    diff = pos[:, None, :] - pos[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(r2, 1.0)
    lg = 0.5 * np.log(r2)
    np.fill_diagonal(lg, 0.0)
    return 0.5 * coef * masses @ lg @ masses


def _min_pairwise_distance_numpy(pos):
    diff = pos[:, None, :] - pos[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(r2, np.inf)
    return float(np.sqrt(r2.min()))


def _reciprocal_gap_sum_numpy(x):
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    inv = 1.0 / diff
    np.fill_diagonal(inv, 0.0)
    return inv.sum(axis=1)


# ---------------------------------------------------------------- numba path

if USING_NUMBA:

    @njit(cache=True)
    def _mollify_numba(pos, masses, eps):
        n, d = pos.shape
        norm = (2.0 * np.pi * eps * eps) ** (-0.5 * d)
        inv2e2 = 1.0 / (2.0 * eps * eps)
        out = np.zeros(n)
        for i in range(n):
            acc = 0.0
            for j in range(n):
                r2 = 0.0
                for k in range(d):
                    dx = pos[i, k] - pos[j, k]
                    r2 += dx * dx
                acc += masses[j] * np.exp(-r2 * inv2e2)
            out[i] = norm * acc
        return out

    @njit(cache=True)
    def _mollify_weighted_grads_numba(pos, masses, eps, coef):
        n, d = pos.shape
        norm = (2.0 * np.pi * eps * eps) ** (-0.5 * d)
        inv2e2 = 1.0 / (2.0 * eps * eps)
        inve2 = 1.0 / (eps * eps)
        s0 = np.zeros((n, d))
        s1 = np.zeros((n, d))
        for i in range(n):
            for j in range(n):
                r2 = 0.0
                for k in range(d):
                    dx = pos[i, k] - pos[j, k]
                    r2 += dx * dx
                ker = norm * np.exp(-r2 * inv2e2)
                for k in range(d):
                    g = -(pos[i, k] - pos[j, k]) * inve2 * ker
                    s0[i, k] += masses[j] * g
                    s1[i, k] += masses[j] * coef[j] * g
        return s0, s1

    @njit(cache=True)
    def _newtonian_force_numba(pos, masses, coef):
        n, d = pos.shape
        out = np.zeros((n, d))
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                r2 = 0.0
                for k in range(d):
                    dx = pos[i, k] - pos[j, k]
                    r2 += dx * dx
                w = coef * masses[j] / r2
                for k in range(d):
                    out[i, k] += w * (pos[i, k] - pos[j, k])
        return out

    @njit(cache=True)
    def _newtonian_energy_numba(pos, masses, coef):
        n, d = pos.shape
        acc = 0.0
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                r2 = 0.0
                for k in range(d):
                    dx = pos[i, k] - pos[j, k]
                    r2 += dx * dx
                acc += masses[i] * masses[j] * 0.5 * np.log(r2)
        return 0.5 * coef * acc

    @njit(cache=True)
    def _min_pairwise_distance_numba(pos):
        n, d = pos.shape
        best = np.inf
        for i in range(n):
            for j in range(i + 1, n):
                r2 = 0.0
                for k in range(d):
                    dx = pos[i, k] - pos[j, k]
                    r2 += dx * dx
                if r2 < best:
                    best = r2
        return np.sqrt(best)

    @njit(cache=True)
    def _reciprocal_gap_sum_numba(x):
        n = x.shape[0]
        out = np.zeros(n)
        for i in range(n):
            acc = 0.0
            for j in range(n):
                if j != i:
                    acc += 1.0 / (x[i] - x[j])
            out[i] = acc
        return out


# ---------------------------------------------------------------- dispatch

if USING_NUMBA:
    mollify = _mollify_numba
    mollify_weighted_grads = _mollify_weighted_grads_numba
    newtonian_force = _newtonian_force_numba
    newtonian_energy = _newtonian_energy_numba
    min_pairwise_distance = _min_pairwise_distance_numba
    reciprocal_gap_sum = _reciprocal_gap_sum_numba
else:
    mollify = _mollify_numpy
    mollify_weighted_grads = _mollify_weighted_grads_numpy
    newtonian_force = _newtonian_force_numpy
    newtonian_energy = _newtonian_energy_numpy
    min_pairwise_distance = _min_pairwise_distance_numpy
    reciprocal_gap_sum = _reciprocal_gap_sum_numpy
