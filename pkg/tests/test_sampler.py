import math

import numpy as np
import pytest
from scipy import stats

from conftest import sample_cov_stderr
from cllb.covariance import CovMatrix, TimeGrid, build_cov_matrix, var_yn
from cllb.errors import NumericalError, ParameterError
from cllb.params import t_seq
from cllb.sampler import (
    FbmSpec,
    build_fbm_cov_matrix,
    factorize,
    sample,
    sample_fbm,
    sample_sup_abs,
)


class TestFactorize:
    def test_singleton(self, heat_consts):
        m = build_cov_matrix(TimeGrid(np.array([1.0])), heat_consts)
        f = factorize(m)
        assert f.lower[0, 0] == pytest.approx(math.sqrt(heat_consts.c21), rel=1e-14)
        assert f.jitter == 0.0 and f.attempts == 1

    def test_two_point_reproduction(self, heat_consts):
        m = build_cov_matrix(TimeGrid(np.array([1.0, 2.0])), heat_consts)
        f = factorize(m)
        np.testing.assert_allclose(f.lower @ f.lower.T, m.entries, rtol=1e-12)

    def test_frobenius_reproduction(self, heat_consts):
        m = build_cov_matrix(TimeGrid.uniform(0.02, 1.0, 200), heat_consts)
        f = factorize(m)
        err = np.linalg.norm(f.lower @ f.lower.T - m.entries) / np.linalg.norm(m.entries)
        assert err < 1e-9 + f.jitter

    def test_degenerate_covariance_takes_jitter_path(self, heat_consts):
        # Holder-theta covariances survive near-duplicate times (increment
        # variance ~ gap^(2 theta) keeps conditional variances large), so the
        # engineered degeneracy is the exact rank-deficient matrix a
        # duplicated time would produce
        v = heat_consts.c21
        m = CovMatrix(
            grid=TimeGrid(np.array([1.0, 2.0])),
            entries=np.array([[v, v], [v, v]]),
            provenance="closed-form",
        )
        f = factorize(m)
        assert f.jitter > 0.0
        assert f.attempts > 1
        np.testing.assert_allclose(f.lower @ f.lower.T, m.entries, rtol=1e-9)

    def test_indefinite_matrix_fails_with_eigen_range(self):
        bad = CovMatrix(
            grid=TimeGrid(np.array([1.0, 2.0])),
            entries=np.array([[1.0, 2.0], [2.0, 1.0]]),
            provenance="closed-form",
        )
        with pytest.raises(NumericalError, match="eigenvalue range"):
            factorize(bad)


class TestSampleContracts:
    def test_determinism_bitwise(self, heat_consts):
        m = build_cov_matrix(TimeGrid.uniform(0.1, 1.0, 12), heat_consts)
        a = sample(m, 500, seed=9)
        b = sample(m, 500, seed=9)
        assert np.array_equal(a.paths, b.paths)

    def test_seed_changes_output(self, heat_consts):
        m = build_cov_matrix(TimeGrid.uniform(0.1, 1.0, 12), heat_consts)
        assert not np.array_equal(sample(m, 100, 1).paths, sample(m, 100, 2).paths)

    def test_worker_count_does_not_change_output(self, heat_consts):
        m = build_cov_matrix(TimeGrid.uniform(0.1, 1.0, 12), heat_consts)
        a = sample(m, 700, seed=5, workers=1, batch=128)
        b = sample(m, 700, seed=5, workers=3, batch=64)
        assert np.array_equal(a.paths, b.paths)

    def test_path_prefix_stable_under_count(self, heat_consts):
        # per-path keyed streams: path i is the same in any ensemble size
        m = build_cov_matrix(TimeGrid.uniform(0.1, 1.0, 8), heat_consts)
        small = sample(m, 50, seed=3)
        large = sample(m, 200, seed=3)
        assert np.array_equal(small.paths, large.paths[:50])

    def test_count_must_be_positive(self, heat_consts):
        m = build_cov_matrix(TimeGrid(np.array([1.0])), heat_consts)
        with pytest.raises(ParameterError):
            sample(m, 0, seed=1)

    def test_seed_range_enforced(self, heat_consts):
        m = build_cov_matrix(TimeGrid(np.array([1.0])), heat_consts)
        with pytest.raises(ParameterError):
            sample(m, 1, seed=-1)

    def test_sup_abs_matches_sample(self, heat_consts):
        m = build_cov_matrix(TimeGrid.uniform(0.1, 1.0, 16), heat_consts)
        ens = sample(m, 300, seed=21)
        sups = sample_sup_abs(m, 300, seed=21)
        assert np.array_equal(sups, np.max(np.abs(ens.paths), axis=1))

    def test_jitter_recorded_in_ensemble(self, heat_consts):
        v = heat_consts.c21
        degenerate = CovMatrix(
            grid=TimeGrid(np.array([1.0, 2.0])),
            entries=np.array([[v, v], [v, v]]),
            provenance="closed-form",
        )
        ens = sample(degenerate, 10, seed=1)
        assert ens.jitter > 0.0
        clean = sample(
            build_cov_matrix(TimeGrid(np.array([1.0, 2.0])), heat_consts), 10, seed=1
        )
        assert clean.jitter == 0.0


class TestSampleStatistics:
    COUNT = 30_000

    @pytest.fixture(scope="class")
    def ensemble(self, heat_consts):
        m = build_cov_matrix(TimeGrid.uniform(1.0 / 8, 1.0, 8), heat_consts)
        return m, sample(m, self.COUNT, seed=2026)

    def test_mean_within_four_stderr(self, ensemble):
        m, ens = ensemble
        se = np.sqrt(np.diag(m.entries) / self.COUNT)
        assert np.all(np.abs(ens.paths.mean(axis=0)) <= 4.0 * se)

    def test_covariance_within_three_stderr(self, ensemble):
        m, ens = ensemble
        emp = np.cov(ens.paths, rowvar=False, ddof=1)
        se = sample_cov_stderr(m.entries, self.COUNT)
        assert np.all(np.abs(emp - m.entries) <= 3.0 * se)

    def test_gaussianity_skew_kurtosis(self, ensemble):
        _, ens = ensemble
        n = self.COUNT
        skew = stats.skew(ens.paths, axis=0)
        kurt = stats.kurtosis(ens.paths, axis=0)
        assert np.all(np.abs(skew) <= 5.0 * math.sqrt(6.0 / n))
        assert np.all(np.abs(kurt) <= 5.0 * math.sqrt(24.0 / n))


class TestFbm:
    def test_spec_validation(self):
        with pytest.raises(ParameterError):
            FbmSpec(hurst_index=1.2, grid=TimeGrid(np.array([1.0])))

    def test_bm_variance_at_one(self):
        spec = FbmSpec(hurst_index=0.5, grid=TimeGrid(np.array([1.0])))
        ens = sample_fbm(spec, 100_000, seed=4)
        v = ens.paths.var(ddof=1)
        se = math.sqrt(2.0 / 100_000)  # Var(chi^2 mean) = 2 sigma^4 / n
        assert abs(v - 1.0) <= 3.0 * se

    def test_bm_increments_uncorrelated(self):
        m = 64
        spec = FbmSpec(hurst_index=0.5, grid=TimeGrid(np.arange(1, m + 1) / m))
        ens = sample_fbm(spec, 20_000, seed=14)
        inc = np.diff(ens.paths, axis=1, prepend=0.0)
        corr = np.corrcoef(inc, rowvar=False)
        off = corr[~np.eye(m, dtype=bool)]
        assert np.max(np.abs(off)) <= 5.0 / math.sqrt(20_000)

    def test_rough_fbm_structure_function(self):
        # E[(X_t - X_s)^2] = |t - s|^(2h) for h = 0.25
        m = 32
        count = 50_000
        spec = FbmSpec(hurst_index=0.25, grid=TimeGrid(np.arange(1, m + 1) / m))
        ens = sample_fbm(spec, count, seed=8)
        for i, j in [(0, 31), (3, 17), (10, 11)]:
            d = ens.paths[:, j] - ens.paths[:, i]
            target = abs(spec.grid.points[j] - spec.grid.points[i]) ** 0.5
            v = d.var(ddof=1)
            se = target * math.sqrt(2.0 / count)
            assert abs(v - target) <= 3.0 * se

    def test_cov_matrix_values(self):
        g = TimeGrid(np.array([0.5, 1.0]))
        m = build_fbm_cov_matrix(FbmSpec(hurst_index=0.5, grid=g))
        np.testing.assert_allclose(m.entries, [[0.5, 0.5], [0.5, 1.0]], rtol=1e-14)


class TestSlabReconstruction:
    def test_slab_plus_remainder_variance(self, heat_consts):
        # u_slab + independent remainder noise reproduces Var u(t) = c21 t^(1/2)
        count = 40_000
        a, b = t_seq(2, 1.0), t_seq(1, 1.0)
        g = TimeGrid.geometric(a * (1 + 1e-9), b, 24)
        slab_cov = build_cov_matrix(g, heat_consts, slab_start=a, check_psd=False)
        ens = sample(slab_cov, count, seed=77)
        rng = np.random.Generator(np.random.Philox(key=1234))
        sd = np.sqrt([var_yn(t, a, heat_consts) for t in g.points])
        total = ens.paths + rng.standard_normal((count, len(g))) * sd
        v = total.var(axis=0, ddof=1)
        target = heat_consts.c21 * g.points ** heat_consts.two_theta
        se = target * math.sqrt(2.0 / count)
        assert np.all(np.abs(v - target) <= 4.0 * se)


class TestScaleInvarianceKS:
    def test_normalized_sup_distribution_is_scale_free(self, heat_consts):
        # max |u| / eps^theta on the grid eps*(0,1] has an eps-free law;
        # two-sample KS between eps = 1 and eps = e^-5 (independent seeds)
        m, count = 256, 10_000
        base = np.arange(1, m + 1) / m
        sups = {}
        for eps, seed in ((1.0, 501), (math.exp(-5.0), 502)):
            cov = build_cov_matrix(TimeGrid(eps * base), heat_consts, check_psd=False)
            sups[eps] = sample_sup_abs(cov, count, seed) / eps ** heat_consts.theta
        result = stats.ks_2samp(sups[1.0], sups[math.exp(-5.0)])
        assert result.pvalue > 0.01
