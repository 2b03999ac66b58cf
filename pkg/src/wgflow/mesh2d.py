"""Moving-triangle-mesh Lagrangian scheme on the unit square.

The Lagrangian map is piecewise linear over a structured triangulation of the
reference square; the image density is piecewise constant, ratio of reference
to image triangle area.  Corners stay fixed, edge vertices slide along their
boundary edge, interior vertices are free.  The entropic part of the energy
gradient collapses, via the 2D cofactor identity cof M = J M J^T with J the
quarter-turn rotation, to mobility-weighted opposite-edge vectors.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.optimize import brentq

from .functionals import hsharp
from .jko1d import NewtonConfig, StepRejectedError


class MeshError(ValueError):
    pass


ROT = np.array([[0.0, -1.0], [1.0, 0.0]])  # quarter-turn J


@dataclass(frozen=True)
class MeshPotential:
    """External potential on the plane: V maps (M, 2) points to (M,) values,
    grad_V to (M, 2), hess_V (optional) to (M, 2, 2)."""

    V: callable
    grad_V: callable
    hess_V: callable = None


def radial_quadratic_mesh_potential(a=0.5):
    def hess(x):
        n = np.asarray(x).shape[0]
        return np.broadcast_to(2.0 * a * np.eye(2), (n, 2, 2))

    return MeshPotential(
        V=lambda x: a * np.sum(np.asarray(x, dtype=float) ** 2, axis=-1),
        grad_V=lambda x: 2.0 * a * np.asarray(x, dtype=float),
        hess_V=hess)


def linear_mesh_potential(gx=1.0, gy=0.0):
    g = np.array([gx, gy])
    return MeshPotential(
        V=lambda x: np.asarray(x, dtype=float) @ g,
        grad_V=lambda x: np.broadcast_to(g, np.asarray(x).shape),
        hess_V=lambda x: np.zeros((np.asarray(x).shape[0], 2, 2)))


@dataclass(frozen=True)
class ReferenceMesh:
    """Structured triangulation of [0,1]^2.

    free_dof[v] is the per-coordinate mobility mask: interior (1,1), edge
    vertices tangential only, corners (0,0).
    """

    vertices: np.ndarray      # (Nv, 2)
    triangles: np.ndarray     # (Nt, 3) int, positively oriented
    ref_areas: np.ndarray     # (Nt,)
    free_dof: np.ndarray      # (Nv, 2) bool

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]


def build_reference_mesh(n):
    """n x n grid of squares, each split into two positively oriented
    triangles: 2 n^2 triangles on (n+1)^2 vertices."""
    if n < 1:
        raise MeshError("need at least one subdivision per side")
    side = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(side, side, indexing="xy")
    verts = np.column_stack((xx.ravel(), yy.ravel()))

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    tris = np.array(tris, dtype=np.int64)
    areas = _triangle_areas(verts, tris)
    if np.any(areas <= 0):
        raise MeshError("reference triangulation has nonpositive areas")
    free = np.ones((verts.shape[0], 2), dtype=bool)
    on_x = (verts[:, 0] == 0.0) | (verts[:, 0] == 1.0)
    on_y = (verts[:, 1] == 0.0) | (verts[:, 1] == 1.0)
    free[on_x, 0] = False   # left/right edges: no horizontal motion
    free[on_y, 1] = False   # bottom/top edges: no vertical motion
    return ReferenceMesh(verts, tris, areas, free)


def _triangle_dets(positions, triangles):
    a = positions[triangles[:, 0]]
    b = positions[triangles[:, 1]]
    c = positions[triangles[:, 2]]
    e1 = b - a
    e2 = c - a
    return e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]


def _triangle_areas(positions, triangles):
    return 0.5 * _triangle_dets(positions, triangles)


def triangle_densities(mesh, positions):
    """rho_T = reference area / image area per triangle."""
    img = _triangle_areas(positions, mesh.triangles)
    bad = np.nonzero(img <= 0)[0]
    if bad.size:
        raise MeshError(f"inverted or degenerate image triangle {bad[0]}")
    return mesh.ref_areas / img


def _centroids(positions, triangles):
    return positions[triangles].mean(axis=1)


def energy2d(mesh, positions, entropy, potential=None):
    """sum_T |ref T| [ hsharp(|img T|/|ref T|) + V(centroid of img T) ]."""
    rho = triangle_densities(mesh, positions)
    total = float(mesh.ref_areas @ hsharp(entropy, 1.0 / rho)[0])
    if potential is not None:
        cent = _centroids(positions, mesh.triangles)
        total += float(mesh.ref_areas @ potential.V(cent))
    return total


def raw_gradient2d(mesh, positions, entropy, potential=None):
    """Per-vertex partials of energy2d: each incident triangle contributes
    (1/2) Phi(rho_T) J (x_l - x_m) + (|ref T|/3) grad V(centroid), with (l, m)
    the positively oriented opposite edge of the vertex."""
    rho = triangle_densities(mesh, positions)
    phi = entropy.phi(rho)
    tris = mesh.triangles
    grad = np.zeros_like(positions)
    if potential is not None:
        cent = _centroids(positions, tris)
        pot = (mesh.ref_areas / 3.0)[:, None] * potential.grad_V(cent)
    for c in range(3):
        k = tris[:, c]
        l = tris[:, (c + 1) % 3]
        m = tris[:, (c + 2) % 3]
        edge = positions[l] - positions[m]
        contrib = 0.5 * phi[:, None] * (edge @ ROT.T)
        if potential is not None:
            contrib = contrib + pot
        np.add.at(grad, k, contrib)
    return grad


def gradient2d(mesh, positions, entropy, potential=None, metric=None, lumped=True):
    """Raw partials plus the boundary-projected metric gradient."""
    raw = raw_gradient2d(mesh, positions, entropy, potential)
    if metric is None:
        metric = mesh_metric(mesh, lumped=lumped)
    g = np.zeros_like(raw)
    for c in range(2):
        mask = mesh.free_dof[:, c]
        rhs = np.where(mask, raw[:, c], 0.0)
        if lumped or not sparse.issparse(metric):
            g[:, c] = np.where(mask, rhs / metric, 0.0)
        else:
            sub = metric[mask][:, mask]
            g[mask, c] = spsolve(sub.tocsc(), rhs[mask])
    return raw, g


def mesh_metric(mesh, lumped=True):
    """P1 hat-overlap mass matrix on the reference mesh; lumped gives the
    row-sum diagonal as a vector."""
    tris = mesh.triangles
    nv = mesh.n_vertices
    if lumped:
        diag = np.zeros(nv)
        np.add.at(diag, tris.ravel(), np.repeat(mesh.ref_areas / 3.0, 3))
        return diag
    rows, cols, vals = [], [], []
    for a in range(3):
        for b in range(3):
            rows.append(tris[:, a])
            cols.append(tris[:, b])
            w = 2.0 if a == b else 1.0
            vals.append(w * mesh.ref_areas / 12.0)
    return sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nv, nv)).tocsr()


def _hessian2d(mesh, positions, entropy, potential=None):
    """Sparse (2 Nv x 2 Nv) Hessian of energy2d, coordinates interleaved
    (vertex v owns rows 2v, 2v+1)."""
    tris = mesh.triangles
    nv = mesh.n_vertices
    rho = triangle_densities(mesh, positions)
    s = 1.0 / rho
    _, d1, d2 = hsharp(entropy, s)
    a = mesh.ref_areas
    # E_T = a h#(D/2a): dE = (1/2) h#'(s) D_u, d2E = D_v D_u h#''(s)/(4a) + (1/2) h#'(s) D_uv
    Dgrad = np.zeros((tris.shape[0], 3, 2))
    for c in range(3):
        l = tris[:, (c + 1) % 3]
        m = tris[:, (c + 2) % 3]
        Dgrad[:, c, :] = -(positions[l] - positions[m]) @ ROT.T
    if potential is not None and potential.hess_V is not None:
        hv = np.asarray(potential.hess_V(_centroids(positions, tris)))
    else:
        hv = None
    rows, cols, vals = [], [], []
    for ca in range(3):
        for cb in range(3):
            # rank-one part from the determinant chain rule
            blocks = (d2 / (4.0 * a))[:, None, None] * \
                np.einsum("ti,tj->tij", Dgrad[:, ca], Dgrad[:, cb])
            # constant second derivative of D: 0 on the diagonal, -J when cb
            # is the cyclic successor of ca, +J when predecessor
            if (ca + 1) % 3 == cb:
                blocks = blocks + 0.5 * d1[:, None, None] * (-ROT)
            elif (ca + 2) % 3 == cb:
                blocks = blocks + 0.5 * d1[:, None, None] * ROT
            if hv is not None:
                # centroid chain rule: each vertex carries weight 1/3
                blocks = blocks + (a / 9.0)[:, None, None] * hv
            va = tris[:, ca]
            vb = tris[:, cb]
            for i in range(2):
                for j in range(2):
                    rows.append(2 * va + i)
                    cols.append(2 * vb + j)
                    vals.append(blocks[:, i, j])
    H = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * nv, 2 * nv)).tocsr()
    return H


def jko_step2d(mesh, positions_prev, dt, entropy, potential=None,
               config=NewtonConfig(), tau_det=0.1, return_info=False):
    """One implicit step: damped Newton (with Levenberg shift when the system
    is indefinite) on the minimizing-movement objective
    |x - x_prev|^2_metric/(2 dt) + energy2d(x), under the inversion guard
    det_new >= tau_det * det_current and exact boundary constraints."""
    lumped = mesh_metric(mesh, lumped=True)
    xprev = positions_prev
    free = mesh.free_dof.ravel()  # interleaved (x0,y0,x1,y1,...)
    W = np.repeat(lumped, 2)      # lumped metric on interleaved dofs

    def objective(pos):
        move = (pos - xprev).ravel()
        return float(move @ (W * move)) / (2 * dt) + \
            energy2d(mesh, pos, entropy, potential)

    def grad_obj(pos):
        g = (W * (pos - xprev).ravel()) / dt + \
            raw_gradient2d(mesh, pos, entropy, potential).ravel()
        return np.where(free, g, 0.0)

    pos = xprev.copy()
    f_cur = objective(pos)
    f_prev_state = f_cur
    r = grad_obj(pos)
    rnorm = np.linalg.norm(r)
    iters = 0
    shift = 0.0
    nfree = int(free.sum())
    idx_free = np.nonzero(free)[0]
    while rnorm > config.eps_residual and iters < config.max_iter:
        H = _hessian2d(mesh, pos, entropy, potential)
        M = H + sparse.diags(W / dt)
        Msub = M[idx_free][:, idx_free]
        step_found = False
        for _ in range(8):
            try:
                A = Msub + shift * sparse.eye(nfree) if shift > 0 else Msub
                d_free = spsolve(A.tocsc(), -r[idx_free])
            except Exception:
                d_free = None
            if d_free is not None and np.all(np.isfinite(d_free)) and \
                    float(r[idx_free] @ d_free) < 0:
                d = np.zeros(free.size)
                d[idx_free] = d_free
                d = d.reshape(-1, 2)
                dets_cur = _triangle_dets(pos, mesh.triangles)
                t = config.damping
                slope = float(r[idx_free] @ d_free)
                while t > 1e-12:
                    cand = pos + t * d
                    dets = _triangle_dets(cand, mesh.triangles)
                    if np.all(dets >= tau_det * dets_cur):
                        f_new = objective(cand)
                        if f_new <= f_cur + 1e-4 * t * slope:
                            pos = cand
                            f_cur = f_new
                            step_found = True
                            break
                    t *= 0.5
                if step_found:
                    break
            # indefinite or no admissible decrease: escalate the shift
            shift = max(10.0 * shift, 1e-6 * max(1.0, rnorm))
        if not step_found:
            worst = int(np.argmin(_triangle_dets(pos, mesh.triangles)))
            raise StepRejectedError(
                f"no decreasing step found (worst triangle {worst})")
        shift = 0.0
        iters += 1
        r = grad_obj(pos)
        rnorm = np.linalg.norm(r)
    if f_cur > f_prev_state + 1e-10 * (1 + abs(f_prev_state)):
        raise StepRejectedError("objective increased")
    if return_info:
        return pos, {"iterations": iters, "residual": rnorm,
                     "energy": energy2d(mesh, pos, entropy, potential)}
    return pos


def run_flow2d(mesh, positions0, dt, n_steps, entropy, potential=None,
               config=NewtonConfig(eps_residual=1e-8), tau_det=0.1,
               dt_min_factor=16.0, retry_budget=8):
    """March n_steps accepted implicit steps with dt halving on rejection.
    Returns (list of position arrays, energies, min determinant series)."""
    states = [positions0]
    energies = [energy2d(mesh, positions0, entropy, potential)]
    min_dets = [float(_triangle_dets(positions0, mesh.triangles).min())]
    pos = positions0
    dt_cur = dt
    successes = 0
    for _ in range(n_steps):
        retries = 0
        while True:
            try:
                pos_new, info = jko_step2d(mesh, pos, dt_cur, entropy, potential,
                                           config, tau_det, return_info=True)
                break
            except StepRejectedError:
                retries += 1
                if retries > retry_budget or dt_cur <= dt / dt_min_factor:
                    raise
                dt_cur = max(dt_cur / 2, dt / dt_min_factor)
                successes = 0
        pos = pos_new
        states.append(pos)
        energies.append(info["energy"])
        min_dets.append(float(_triangle_dets(pos, mesh.triangles).min()))
        successes += 1
        if successes >= 2 and dt_cur < dt:
            dt_cur = min(2 * dt_cur, dt)
            successes = 0
    return states, energies, min_dets


# -------------------------------------------------- Barenblatt initialization

def quarter_barenblatt_positions(mesh, t0, mass_full=4.0, floor=1e-3):
    """Knothe-Rosenblatt map from the reference square to the quarter of a 2D
    Barenblatt profile (m=3) centered at the origin (unit mass on the quadrant
    when mass_full=4), blended with a uniform floor on the box:

        rho0 = (1 - floor) * barenblatt + floor * uniform.

    The floor keeps the triangular map a bijection of the square, so the
    boundary constraints (corners fixed, edges tangential) stay consistent;
    it moves the initial profile by at most 2*floor in L1.  The m=3 profile
    rho = t^{-1/3} (C - b r^2)^{1/2} has closed-form marginal and conditional
    (circular-segment) CDFs, so the map needs only scalar root finding.
    """
    from .analytic import barenblatt2d

    prof = barenblatt2d(3.0, mass=mass_full)
    C = prof.C
    b = prof.k * t0 ** (-2 * prof.beta)
    R = np.sqrt(C / b)
    if R >= 1.0:
        raise MeshError(f"support radius {R:.3f} at t0 exceeds the unit box")
    c0 = t0 ** (-2 * prof.beta) * np.sqrt(b)  # t^{-1/3} sqrt(b) for m=3
    w = 1.0 - floor

    def seg(y, A):
        # integral of sqrt(A^2 - s^2) over [0, min(y, A)]
        y = min(y, A)
        if A <= 0.0:
            return 0.0
        return 0.5 * (y * np.sqrt(max(A * A - y * y, 0.0)) + A * A * np.arcsin(y / A))

    def quarter_marg_cdf(x):
        x = min(x, R)
        return (C * x - b * x ** 3 / 3.0) / (C * R - b * R ** 3 / 3.0)

    def marg_cdf(x):
        return w * quarter_marg_cdf(x) + floor * x

    xi = mesh.vertices
    pos = np.empty_like(xi)
    xs = {}
    for v in range(mesh.n_vertices):
        x1, x2 = xi[v]
        if x1 not in xs:
            if x1 <= 0.0:
                xs[x1] = 0.0
            elif x1 >= 1.0:
                xs[x1] = 1.0
            else:
                xs[x1] = brentq(lambda x: marg_cdf(x) - x1, 0.0, 1.0, xtol=1e-13)
        X = xs[x1]
        A = np.sqrt(max(C - b * X * X, 0.0) / b)
        if x2 <= 0.0:
            Y = 0.0
        elif x2 >= 1.0:
            Y = 1.0
        else:
            denom = w * c0 * seg(1.0, A) + floor
            Y = brentq(lambda y: (w * c0 * seg(y, A) + floor * y) / denom - x2,
                       0.0, 1.0, xtol=1e-13)
        pos[v] = (X, Y)
    return pos


def l1_error_mesh(mesh, positions, density_fn, subdiv=2):
    """L1 distance between the piecewise-constant mesh density and an exact
    density on the plane: midpoint-refined quadrature over image triangles
    plus the exact mass missed outside the image (total exact mass 1)."""
    rho = triangle_densities(mesh, positions)
    tris = mesh.triangles
    total = 0.0
    covered = 0.0
    for _ in range(1):
        a = positions[tris[:, 0]]
        bpt = positions[tris[:, 1]]
        c = positions[tris[:, 2]]
        areas = _triangle_areas(positions, tris)
        # 4-point refinement: centroid of each midpoint subtriangle
        pts = [(a + bpt + c) / 3.0,
               (4 * a + bpt + c) / 6.0, (a + 4 * bpt + c) / 6.0, (a + bpt + 4 * c) / 6.0]
        w = [0.25, 0.25, 0.25, 0.25]
        ex = np.zeros_like(rho)
        diff = np.zeros_like(rho)
        for p, wi in zip(pts, w):
            vals = density_fn(p)
            ex += wi * vals
            diff += wi * np.abs(rho - vals)
        total += float(areas @ diff)
        covered += float(areas @ ex)
    return total + max(1.0 - covered, 0.0)


def mesh_snapshot(mesh, positions, prefix):
    """Write node (id, x, y) and element (k, l, m, rho) CSV files."""
    rho = triangle_densities(mesh, positions)
    with open(f"{prefix}_nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        for i, p in enumerate(positions):
            w.writerow([i, repr(float(p[0])), repr(float(p[1]))])
    with open(f"{prefix}_elements.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "l", "m", "rho"])
        for t, r in zip(mesh.triangles, rho):
            w.writerow([int(t[0]), int(t[1]), int(t[2]), repr(float(r))])
