import numpy as np
import pytest

from wgflow.analytic import barenblatt1d, barenblatt2d, fit_decay_slope


class TestBarenblatt1d:
    @pytest.mark.parametrize("m,mass", [(2.0, 1.0), (4.0, 2.0), (3.0, 0.5)])
    def test_mass_normalized(self, m, mass):
        prof = barenblatt1d(m, mass=mass)
        for t in (1e-3, 0.1, 1.0):
            r = prof.support_radius(t)
            x = np.linspace(-r, r, 200001)
            assert abs(np.trapezoid(prof.density(x, t), x) - mass) < 1e-6 * mass

    def test_support(self):
        prof = barenblatt1d(2.0)
        r = prof.support_radius(0.5)
        assert prof.density(np.array([1.001 * r, -1.5 * r]), 0.5).max() == 0.0
        assert prof.density(np.array([0.0, 0.9 * r]), 0.5).min() > 0.0

    def test_peak_scaling(self):
        prof = barenblatt1d(2.0)
        assert prof.alpha == pytest.approx(1.0 / 3.0)
        for t in (0.01, 0.2):
            peak = prof.density(np.array([0.0]), t)[0]
            assert peak == pytest.approx(prof.C ** (1.0) * t ** (-prof.alpha))

    def test_invalid_exponent(self):
        with pytest.raises(ValueError):
            barenblatt1d(1.0)

    def test_pde_residual(self):
        # rho_t = (rho^m)_xx in the interior of the support
        prof = barenblatt1d(2.0)
        t, h = 0.3, 1e-5
        x = np.linspace(-0.3, 0.3, 9)
        lhs = (prof.density(x, t + h) - prof.density(x, t - h)) / (2 * h)
        pm = lambda y: prof.density(y, t) ** 2.0
        rhs = (pm(x + h) - 2 * pm(x) + pm(x - h)) / h ** 2
        np.testing.assert_allclose(lhs, rhs, rtol=1e-4, atol=1e-6)


class TestBarenblatt2d:
    @pytest.mark.parametrize("m,mass", [(3.0, 4.0), (2.0, 1.0)])
    def test_mass_normalized(self, m, mass):
        prof = barenblatt2d(m, mass=mass)
        for t in (0.01, 1.0):
            r = prof.support_radius(t)
            # radial quadrature: mass = 2 pi int_0^r rho(s) s ds
            s = np.linspace(0.0, r, 200001)
            pts = np.column_stack((s, np.zeros_like(s)))
            vals = prof.density(pts, t)
            assert abs(2 * np.pi * np.trapezoid(vals * s, s) - mass) < 1e-6 * mass

    def test_m3_exponent(self):
        assert barenblatt2d(3.0).beta == pytest.approx(1.0 / 6.0)


class TestDecayFit:
    def test_exact_power_law(self):
        t = np.geomspace(5e-3, 2e-2, 40)
        slope, resid = fit_decay_slope(t, 3.7 * t ** (-0.25))
        assert abs(slope + 0.25) < 1e-12
        assert resid < 1e-12

    @pytest.mark.parametrize("m", [2.0, 4.0])
    def test_entropy_decay_exponent(self, m):
        # internal energy of the exact profile decays like t^{-alpha (m-1)}
        prof = barenblatt1d(m)
        times = np.geomspace(5e-3, 2e-2, 12)
        vals = []
        for t in times:
            r = prof.support_radius(t)
            x = np.linspace(-r, r, 400001)
            vals.append(np.trapezoid(prof.density(x, t) ** m / (m - 1.0), x))
        slope, _ = fit_decay_slope(times, vals)
        assert abs(slope + prof.alpha * (m - 1.0)) < 1e-3
