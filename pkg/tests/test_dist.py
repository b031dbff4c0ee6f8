"""Distribution and grid-convolution unit tests."""

import numpy as np
import pytest

from htqlab.dist import (
    GriddedPdf,
    SpatialDistribution,
    convolve,
    from_config,
    n_fold_convolve,
    node_index,
    scale_workload,
    unit_atom,
)
from htqlab.errors import ConfigError, NumericError


def triangular() -> SpatialDistribution:
    """Density z on [0,1], 2-z on [1,2]; mean exactly 1."""
    return SpatialDistribution.from_density(lambda z: z if z <= 1 else 2 - z, 2.0, 0.005)


class TestSampling:
    def test_dirac_is_constant(self):
        d = SpatialDistribution.dirac(1.0)
        rng = np.random.default_rng(0)
        assert d.sample(rng) == 1.0
        assert np.all(d.sample(rng, size=100) == 1.0)

    def test_uniform_mean(self):
        d = SpatialDistribution.uniform(0, 1)
        rng = np.random.default_rng(1)
        s = d.sample(rng, size=1_000_000)
        assert abs(s.mean() - 0.5) < 3e-3
        assert s.min() >= 0 and s.max() <= 1

    def test_triangular_grid_mean(self):
        d = triangular()
        rng = np.random.default_rng(2)
        s = d.sample(rng, size=1_000_000)
        assert abs(s.mean() - 1.0) < 5e-3

    def test_sampling_matches_grid_cdf(self):
        # Kolmogorov distance between empirical and lattice CDF.
        d = triangular()
        rng = np.random.default_rng(3)
        s = np.sort(d.sample(rng, size=100_000))
        emp_hi = np.arange(1, len(s) + 1) / len(s)
        emp_lo = np.arange(len(s)) / len(s)
        c = d.grid.cdf(s)
        ks = max(np.abs(emp_hi - c).max(), np.abs(emp_lo - c).max())
        assert ks < 0.01

    def test_seeded_stream_is_deterministic(self):
        d = SpatialDistribution.uniform(0, 1)
        a = d.sample(np.random.default_rng(7), size=50)
        b = d.sample(np.random.default_rng(7), size=50)
        assert np.array_equal(a, b)


class TestToGrid:
    def test_dirac_becomes_exact_atom(self):
        g = SpatialDistribution.dirac(1.0).to_grid(0.01, 2.0)
        assert g.atom_nodes() == [(100, 1.0)]
        assert g.atoms == [(1.0, 1.0)]
        assert g.grid_mass == 0.0

    def test_uniform_constant_density(self):
        g = SpatialDistribution.uniform(0, 1).to_grid(0.01, 2.0)
        assert abs(g.mass - 1.0) <= 1e-9
        interior = g.values[1:100]
        assert np.allclose(interior, 1.0, atol=1e-9)

    def test_offgrid_atom_ties_to_lower_index(self):
        g = SpatialDistribution.dirac(1.005).to_grid(0.01, 2.0)
        assert g.atom_nodes() == [(100, 1.0)]
        g = SpatialDistribution.dirac(1.0051).to_grid(0.01, 2.0)
        assert g.atom_nodes() == [(101, 1.0)]

    def test_support_truncated_error(self):
        with pytest.raises(NumericError, match="support truncated"):
            SpatialDistribution.uniform(0, 1).to_grid(0.01, 0.5)

    def test_node_index_rule(self):
        assert node_index(1.005, 0.01) == 100
        assert node_index(0.994, 0.01) == 99
        assert node_index(0.996, 0.01) == 100


class TestConvolution:
    def test_deterministic_three_fold_is_exact_atom(self):
        g = SpatialDistribution.dirac(0.6).to_grid(0.01, 2.0)
        g3 = n_fold_convolve(g, 3)
        assert len(g3.atoms) == 1
        t, m = g3.atoms[0]
        assert abs(t - 1.8) < 1e-14 and m == 1.0

    def test_zero_fold_is_unit_atom(self):
        g = SpatialDistribution.uniform(0, 1).to_grid(0.0025, 3.0)
        g0 = n_fold_convolve(g, 0)
        assert g0.atoms == [(0.0, 1.0)]
        assert g0.mass == 1.0

    def test_one_fold_is_identity(self):
        g = SpatialDistribution.uniform(0, 1).to_grid(0.0025, 3.0)
        assert n_fold_convolve(g, 1) is g

    def test_uniform_two_fold_triangular_peak(self):
        g = SpatialDistribution.uniform(0, 1).to_grid(0.0025, 2.5)
        g2 = n_fold_convolve(g, 2)
        peak = g2.values[node_index(1.0, g2.step)]
        assert abs(peak - 1.0) < 0.02

    def test_mass_multiplicative_and_loss_small(self):
        g = SpatialDistribution.uniform(0, 1).to_grid(0.0025, 6.5)
        for n in range(2, 7):
            gn = n_fold_convolve(g, n)
            assert abs(gn.mass - 1.0) <= 1e-9
            assert gn.trunc_loss <= 1e-6

    def test_overflow_reports_required_horizon(self):
        g = SpatialDistribution.uniform(0, 1).to_grid(0.0025, 2.0)
        with pytest.raises(NumericError, match="t_max >= 3"):
            n_fold_convolve(g, 3)

    def test_atom_beyond_cap_stays_symbolic(self):
        a = SpatialDistribution.dirac(1.5).to_grid(0.01, 2.0)
        c = convolve(a, a, t_cap=2.0, allow_truncation=True)
        assert c.atoms == [(3.0, 1.0)]

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    @pytest.mark.parametrize("law", ["uniform", "triangular"])
    def test_size_biased_convolution_identity(self, law, n):
        # int_0^t z f(z) f_{n-1}(t-z) dz == (t/n) f_n(t) on the lattice.
        if law == "uniform":
            d = SpatialDistribution.uniform(0, 1)
            g = d.to_grid(0.0025, 6.5)
        else:
            g = triangular().to_grid(0.005, 13.0)
        h = g.step
        g_prev = n_fold_convolve(g, n - 1)
        g_n = n_fold_convolve(g, n)
        zs = np.arange(len(g.values)) * h
        lhs = np.convolve(zs * g.values, g_prev.values) * h
        k = min(len(lhs), len(g_n.values))
        rhs = (np.arange(k) * h / n) * g_n.values[:k]
        sel = g_n.values[:k] > 1e-3
        rel = np.abs(lhs[:k][sel] - rhs[sel]) / rhs[sel]
        assert rel.max() <= 1e-4

    def test_unit_atom_neutral_element(self):
        g = SpatialDistribution.uniform(0, 1).to_grid(0.0025, 2.5)
        e = unit_atom(g.step)
        c = convolve(g, e, t_cap=g.t_hi, allow_truncation=True)
        assert np.allclose(c.values[: len(g.values)], g.values)
        assert abs(c.mass - g.mass) < 1e-12


class TestScaling:
    def test_dirac_scaling(self):
        d = scale_workload(SpatialDistribution.dirac(1.0), 0.25)
        assert d.kind == "dirac" and d.point == 4.0

    def test_uniform_scaling(self):
        d = scale_workload(SpatialDistribution.uniform(0, 2), 2.0)
        assert (d.lo, d.hi) == (0.0, 1.0)
        assert d.mean == 0.5

    def test_nonpositive_rate_rejected(self):
        with pytest.raises(ValueError):
            scale_workload(SpatialDistribution.dirac(1.0), 0.0)

    def test_mean_scales_for_random_laws(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            lo = rng.uniform(0, 1)
            hi = lo + rng.uniform(0.1, 2)
            p = rng.uniform(0.2, 5)
            d = SpatialDistribution.uniform(lo, hi)
            scaled = scale_workload(d, p)
            assert abs(scaled.mean - d.mean / p) < 1e-12
            assert abs(scaled.support_hi - d.support_hi / p) < 1e-12
            # cross-check against direct sampling
            s = scaled.sample(np.random.default_rng(99), size=20_000)
            assert abs(s.mean() - d.mean / p) < 0.02 * d.mean / p + 1e-3

    def test_grid_scaling_preserves_mass(self):
        g = triangular()
        s = g.scaled(4.0)
        assert abs(s.mean - 0.25) < 1e-9
        assert abs(s.grid.mass - 1.0) <= 1e-9


class TestConfig:
    def test_round_trip(self):
        for d in [
            SpatialDistribution.dirac(1.5),
            SpatialDistribution.uniform(0.5, 2.0),
            triangular(),
        ]:
            d2 = from_config(d.to_config())
            assert d2.kind == d.kind
            assert abs(d2.mean - d.mean) < 1e-12

    def test_bad_kind_reports_path(self):
        with pytest.raises(ConfigError, match="psi.kind"):
            from_config({"kind": "cauchy"}, path="psi")

    def test_missing_field_reports_path(self):
        with pytest.raises(ConfigError, match="psi.point"):
            from_config({"kind": "dirac"}, path="psi")

    def test_density_bound_values(self):
        assert SpatialDistribution.dirac(1.0).density_bound is None
        assert SpatialDistribution.uniform(0, 2).density_bound == 0.5
        tri = triangular()
        assert abs(tri.density_bound - 1.0) < 0.01
