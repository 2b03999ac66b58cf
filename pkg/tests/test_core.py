import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wgflow.core import (
    DensityError,
    GridError,
    LagrangianState,
    MassGrid,
    PiecewiseConstantDensity,
    StateError,
    build_mass_grid,
    density_from_csv,
    density_from_state,
    density_to_csv,
    idf_from_density,
    l2_metric,
    state_from_json,
    state_to_json,
    wasserstein1d,
)

RNG = np.random.default_rng(7)


def random_density(rng, max_cells=8):
    k = rng.integers(2, max_cells + 1)
    bp = np.sort(rng.uniform(-3, 3, size=k + 1))
    bp += np.arange(k + 1) * 1e-3  # enforce strict increase
    vals = rng.uniform(0.1, 2.0, size=k)
    mass = np.sum(vals * np.diff(bp))
    return PiecewiseConstantDensity(bp, vals / mass)


def uniform_density(a, b):
    return PiecewiseConstantDensity(np.array([a, b]), np.array([1.0 / (b - a)]))


class TestBuildMassGrid:
    def test_uniform(self):
        g = build_mass_grid(4)
        np.testing.assert_array_equal(g.nodes, [0, 0.25, 0.5, 0.75, 1])

    def test_weights(self):
        g = build_mass_grid(2, [0.3, 0.7])
        np.testing.assert_allclose(g.nodes, [0, 0.3, 1], atol=1e-15)

    def test_bad_sum(self):
        with pytest.raises(GridError):
            build_mass_grid(2, [0.3, 0.6])

    def test_nonpositive_weight_named_index(self):
        with pytest.raises(GridError, match="index 1"):
            build_mass_grid(3, [0.5, -0.1, 0.6])


class TestIdf:
    def test_identity(self):
        s = idf_from_density(uniform_density(0, 1), build_mass_grid(4))
        np.testing.assert_allclose(s.positions, [0, 0.25, 0.5, 0.75, 1], atol=1e-14)

    def test_linear_density(self):
        # rho(x) = 2x on [0,1]: F(x) = x^2, so X(xi) = sqrt(xi)
        grid = build_mass_grid(5)
        bp = np.linspace(0, 1, 2001)
        mids = 0.5 * (bp[1:] + bp[:-1])
        rho = PiecewiseConstantDensity(bp, 2 * mids / np.sum(2 * mids * np.diff(bp)))
        s = idf_from_density(rho, grid)
        np.testing.assert_allclose(s.positions, np.sqrt(grid.nodes), atol=1e-3)

    def test_linear_density_callable(self):
        grid = build_mass_grid(5)
        s = idf_from_density(lambda x: 2 * x, grid, support=(0, 1))
        np.testing.assert_allclose(s.positions, np.sqrt(grid.nodes), atol=1e-10)

    def test_half_support(self):
        rho = PiecewiseConstantDensity(np.array([0, 0.5]), np.array([2.0]))
        s = idf_from_density(rho, build_mass_grid(4))
        np.testing.assert_allclose(s.positions, build_mass_grid(4).nodes / 2, atol=1e-14)

    def test_zero_gap_rejected(self):
        rho = PiecewiseConstantDensity(
            np.array([0, 0.25, 0.75, 1.0]), np.array([2.0, 0.0, 2.0]))
        with pytest.raises(DensityError, match="gap"):
            idf_from_density(rho, build_mass_grid(2))

    def test_callable_needs_support(self):
        with pytest.raises(DensityError):
            idf_from_density(lambda x: 2 * x, build_mass_grid(4))


class TestDensityFromState:
    def test_identity(self):
        rho = density_from_state(LagrangianState(np.linspace(0, 1, 5)), build_mass_grid(4))
        np.testing.assert_allclose(rho.values, 1.0, atol=1e-14)

    def test_example(self):
        rho = density_from_state(LagrangianState(np.array([0, 0.25, 1.0])), build_mass_grid(2))
        np.testing.assert_allclose(rho.values, [2.0, 2.0 / 3.0], atol=1e-14)
        assert abs(rho.total_mass() - 1) < 1e-14

    def test_non_monotone_rejected(self):
        with pytest.raises(StateError):
            LagrangianState(np.array([0, 0.5, 0.25]))

    def test_round_trip(self):
        # exact when the density breakpoints are the state positions
        grid = build_mass_grid(6, RNG.dirichlet(np.ones(6) * 5))
        state = LagrangianState(np.sort(RNG.uniform(-2, 2, 7)), mode="free")
        rho = density_from_state(state, grid)
        back = density_from_state(idf_from_density(rho, grid, mode="free"), grid)
        np.testing.assert_allclose(back.breakpoints, rho.breakpoints, atol=1e-12)
        np.testing.assert_allclose(back.values, rho.values, atol=1e-12)


class TestWasserstein:
    def test_identical(self):
        rho = random_density(RNG)
        assert wasserstein1d(rho, rho) == 0.0

    def test_uniform_dilation(self):
        d = wasserstein1d(uniform_density(0, 1), uniform_density(0, 2))
        assert abs(d - 1 / np.sqrt(3)) < 1e-14

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.integers(0, 2 ** 31 - 1))
    def test_translation(self, c, seed):
        rho = random_density(np.random.default_rng(seed))
        eta = PiecewiseConstantDensity(rho.breakpoints + c, rho.values)
        assert abs(wasserstein1d(rho, eta) - abs(c)) < 1e-12

    def test_metric_axioms(self):
        ds = [random_density(RNG) for _ in range(6)]
        for a in ds:
            for b in ds:
                dab, dba = wasserstein1d(a, b), wasserstein1d(b, a)
                assert abs(dab - dba) < 1e-12
                for c in ds:
                    assert dab <= wasserstein1d(a, c) + wasserstein1d(c, b) + 1e-12


class TestMetricMatrix:
    def test_lumped_example(self):
        m = l2_metric(build_mass_grid(2), "lumped")
        np.testing.assert_allclose(m.diag, [0.25, 0.5, 0.25], atol=1e-15)

    def test_full_example(self):
        m = l2_metric(build_mass_grid(2), "full")
        np.testing.assert_allclose(m.diag, [1 / 6, 1 / 3, 1 / 6], atol=1e-15)
        np.testing.assert_allclose(m.off, [1 / 12, 1 / 12], atol=1e-15)

    def test_lumped_sums_to_one(self):
        g = build_mass_grid(5, np.array([0.1, 0.3, 0.2, 0.15, 0.25]))
        assert abs(l2_metric(g, "lumped").diag.sum() - 1) < 1e-14

    def test_spd_and_rowsums(self):
        g = build_mass_grid(7, RNG.dirichlet(np.ones(7)))
        full = l2_metric(g, "full")
        lump = l2_metric(g, "lumped")
        for _ in range(100):
            x = RNG.standard_normal(8)
            assert full.inner(x, x) > 0
            assert lump.inner(x, x) > 0
        ones = np.ones(8)
        np.testing.assert_allclose(full.matvec(ones), lump.matvec(ones), atol=1e-15)

    def test_solve_matches_dense(self):
        g = build_mass_grid(6, RNG.dirichlet(np.ones(6)))
        full = l2_metric(g, "full")
        rhs = RNG.standard_normal(7)
        np.testing.assert_allclose(full.solve(rhs), np.linalg.solve(full.dense(), rhs), atol=1e-12)


class TestSerialization:
    def test_density_csv_round_trip(self, tmp_path):
        rho = random_density(RNG)
        p = tmp_path / "rho.csv"
        density_to_csv(rho, p)
        back = density_from_csv(p)
        np.testing.assert_array_equal(back.breakpoints, rho.breakpoints)
        np.testing.assert_array_equal(back.values, rho.values)

    def test_state_json_round_trip(self):
        grid = build_mass_grid(3)
        state = LagrangianState(np.array([0, 0.1, 0.6, 1.0]))
        s2, g2 = state_from_json(state_to_json(state, grid))
        np.testing.assert_array_equal(s2.positions, state.positions)
        np.testing.assert_array_equal(g2.nodes, grid.nodes)
        obj = json.loads(state_to_json(state, grid))
        assert set(obj) == {"grid", "positions"}
