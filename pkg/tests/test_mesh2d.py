import numpy as np
import pytest

from wgflow.functionals import power_entropy, xlogx_entropy
from wgflow.jko1d import NewtonConfig
from wgflow.mesh2d import (
    MeshError,
    _hessian2d,
    _triangle_dets,
    build_reference_mesh,
    energy2d,
    gradient2d,
    jko_step2d,
    l1_error_mesh,
    linear_mesh_potential,
    mesh_metric,
    mesh_snapshot,
    quarter_barenblatt_positions,
    radial_quadratic_mesh_potential,
    raw_gradient2d,
    run_flow2d,
    triangle_densities,
)

RNG = np.random.default_rng(53)


def perturbed_positions(mesh, rng, scale=0.1):
    n_side = int(round(np.sqrt(mesh.n_vertices))) - 1
    h = 1.0 / n_side
    pos = mesh.vertices.copy()
    pos += scale * h * rng.uniform(-1, 1, pos.shape) * mesh.free_dof
    assert np.all(_triangle_dets(pos, mesh.triangles) > 0)
    return pos


class TestReferenceMesh:
    def test_n1(self):
        m = build_reference_mesh(1)
        assert m.n_triangles == 2
        assert abs(m.ref_areas.sum() - 1.0) < 1e-15

    def test_n4_counts(self):
        m = build_reference_mesh(4)
        assert m.n_triangles == 32
        assert m.n_vertices == 25
        on_boundary = ~m.free_dof.all(axis=1)
        corners = ~m.free_dof.any(axis=1)
        assert on_boundary.sum() == 16
        assert corners.sum() == 4

    def test_positive_orientation(self):
        m = build_reference_mesh(5)
        assert np.all(_triangle_dets(m.vertices, m.triangles) > 0)

    def test_metric_lumped_sums_to_one(self):
        m = build_reference_mesh(3)
        assert abs(mesh_metric(m, lumped=True).sum() - 1.0) < 1e-14
        full = mesh_metric(m, lumped=False)
        assert abs(full.sum() - 1.0) < 1e-14
        np.testing.assert_allclose(np.asarray(full.sum(axis=1)).ravel(),
                                   mesh_metric(m, lumped=True), atol=1e-15)


class TestDensities:
    def test_identity(self):
        m = build_reference_mesh(3)
        np.testing.assert_allclose(triangle_densities(m, m.vertices), 1.0, atol=1e-14)

    def test_uniform_shrink(self):
        m = build_reference_mesh(2)
        np.testing.assert_allclose(triangle_densities(m, m.vertices / 2), 4.0, atol=1e-12)

    def test_mass_conserved(self):
        m = build_reference_mesh(4)
        pos = perturbed_positions(m, RNG)
        rho = triangle_densities(m, pos)
        img = _triangle_dets(pos, m.triangles) / 2
        assert abs(rho @ img - 1.0) < 1e-12

    def test_inverted_rejected(self):
        m = build_reference_mesh(1)
        pos = m.vertices.copy()
        pos[3] = [-2.0, -2.0]  # fold the far corner over
        with pytest.raises(MeshError, match="triangle"):
            triangle_densities(m, pos)


class TestEnergy:
    def test_identity_entropy_zero(self):
        m = build_reference_mesh(3)
        assert abs(energy2d(m, m.vertices, xlogx_entropy())) < 1e-14

    def test_linear_potential(self):
        m = build_reference_mesh(4)
        e = energy2d(m, m.vertices, power_entropy(2), linear_mesh_potential(1.0, 0.0))
        # entropy part is h#(1) = 1 times area 1 for h = r^2, so subtract it
        entropy_part = energy2d(m, m.vertices, power_entropy(2))
        assert abs((e - entropy_part) - 0.5) < 1e-12

    def test_refined_quadrature_oracle(self):
        # centroid quadrature of V against subdivided quadrature; the
        # potential part of the energy is first-order accurate
        m = build_reference_mesh(6)
        pos = perturbed_positions(m, RNG)
        pot = radial_quadratic_mesh_potential(0.5)
        e_pot = energy2d(m, pos, xlogx_entropy(), pot) - energy2d(m, pos, xlogx_entropy())
        rho = triangle_densities(m, pos)
        exact = 0.0
        for t, r in zip(m.triangles, rho):
            a, b, c = pos[t]
            for lam in [(4, 1, 1), (1, 4, 1), (1, 1, 4), (2, 2, 2)]:
                p = (lam[0] * a + lam[1] * b + lam[2] * c) / 6.0
                e1, e2 = b - a, c - a
                area = abs(e1[0] * e2[1] - e1[1] * e2[0]) / 8.0
                exact += r * pot.V(p[None, :])[0] * area
        assert abs(e_pot - exact) < 2e-3


class TestGradient:
    def test_identity_interior_zero(self):
        m = build_reference_mesh(4)
        raw = raw_gradient2d(m, m.vertices, xlogx_entropy())
        interior = m.free_dof.all(axis=1)
        np.testing.assert_allclose(raw[interior], 0.0, atol=1e-13)

    def test_projected_gradient_zero_at_identity(self):
        m = build_reference_mesh(4)
        _, g = gradient2d(m, m.vertices, xlogx_entropy())
        np.testing.assert_allclose(g, 0.0, atol=1e-12)

    @pytest.mark.parametrize("entropy", [xlogx_entropy(), power_entropy(3)])
    def test_matches_fd(self, entropy):
        m = build_reference_mesh(4)
        pot = radial_quadratic_mesh_potential(0.5)
        for _ in range(5):
            pos = perturbed_positions(m, RNG)
            raw = raw_gradient2d(m, pos, entropy, pot)
            h = 1e-7
            for v in RNG.choice(m.n_vertices, 6, replace=False):
                for c in range(2):
                    pp, pm = pos.copy(), pos.copy()
                    pp[v, c] += h
                    pm[v, c] -= h
                    fd = (energy2d(m, pp, entropy, pot)
                          - energy2d(m, pm, entropy, pot)) / (2 * h)
                    assert abs(raw[v, c] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_hessian_matches_fd(self):
        m = build_reference_mesh(3)
        pot = radial_quadratic_mesh_potential(0.5)
        pos = perturbed_positions(m, RNG)
        H = _hessian2d(m, pos, xlogx_entropy(), pot).toarray()
        np.testing.assert_allclose(H, H.T, atol=1e-12)
        h = 1e-6
        for v in RNG.choice(m.n_vertices, 5, replace=False):
            for c in range(2):
                pp, pm = pos.copy(), pos.copy()
                pp[v, c] += h
                pm[v, c] -= h
                fd = (raw_gradient2d(m, pp, xlogx_entropy(), pot)
                      - raw_gradient2d(m, pm, xlogx_entropy(), pot)).ravel() / (2 * h)
                np.testing.assert_allclose(H[:, 2 * v + c], fd, rtol=1e-5, atol=1e-5)


class TestStep:
    def test_critical_point_unchanged(self):
        m = build_reference_mesh(4)
        out = jko_step2d(m, m.vertices, 1e-3, xlogx_entropy(),
                         config=NewtonConfig(eps_residual=1e-12))
        np.testing.assert_allclose(out, m.vertices, atol=1e-10)

    def test_heat_step_decreases_entropy(self):
        m = build_reference_mesh(6)
        pos = perturbed_positions(m, np.random.default_rng(1), scale=0.25)
        e0 = energy2d(m, pos, xlogx_entropy())
        out = jko_step2d(m, pos, 1e-3, xlogx_entropy(),
                         config=NewtonConfig(eps_residual=1e-9))
        assert energy2d(m, out, xlogx_entropy()) < e0
        assert np.all(_triangle_dets(out, m.triangles) > 0)
        # constraints exact
        assert np.all(out[~m.free_dof] == m.vertices[~m.free_dof])

    def test_flow_energy_monotone(self):
        m = build_reference_mesh(6)
        pos = perturbed_positions(m, np.random.default_rng(4), scale=0.25)
        states, energies, min_dets = run_flow2d(
            m, pos, 2e-3, 15, xlogx_entropy(),
            config=NewtonConfig(eps_residual=1e-8))
        assert np.all(np.diff(energies) <= 1e-10)
        assert min(min_dets) > 0


class TestBarenblattInit:
    def test_valid_mesh_and_profile(self):
        from wgflow.analytic import barenblatt2d
        m = build_reference_mesh(16)
        pos = quarter_barenblatt_positions(m, t0=0.01)
        assert np.all(_triangle_dets(pos, m.triangles) > 0)
        # boundary vertices remain on the box boundary
        assert np.all(pos[~m.free_dof[:, 0], 0] == m.vertices[~m.free_dof[:, 0], 0])
        assert np.all(pos[~m.free_dof[:, 1], 1] == m.vertices[~m.free_dof[:, 1], 1])
        prof = barenblatt2d(3.0, mass=4.0)
        err16 = l1_error_mesh(m, pos, lambda p: prof.density(p, 0.01))
        assert err16 < 0.2
        m32 = build_reference_mesh(32)
        pos32 = quarter_barenblatt_positions(m32, t0=0.01)
        err32 = l1_error_mesh(m32, pos32, lambda p: prof.density(p, 0.01))
        assert err32 < err16  # representation error shrinks under refinement

    def test_too_late_time_rejected(self):
        m = build_reference_mesh(4)
        with pytest.raises(MeshError, match="support radius"):
            quarter_barenblatt_positions(m, t0=1.0)


class TestL1AndIO:
    def test_identity_uniform_zero(self):
        m = build_reference_mesh(4)
        err = l1_error_mesh(m, m.vertices, lambda p: np.ones(p.shape[0]))
        assert err < 1e-12

    def test_snapshot_files(self, tmp_path):
        m = build_reference_mesh(2)
        mesh_snapshot(m, m.vertices, str(tmp_path / "snap"))
        nodes = (tmp_path / "snap_nodes.csv").read_text().strip().splitlines()
        elems = (tmp_path / "snap_elements.csv").read_text().strip().splitlines()
        assert len(nodes) == 10 and nodes[0] == "id,x,y"
        assert len(elems) == 9 and elems[0] == "k,l,m,rho"
