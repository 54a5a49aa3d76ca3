import math

import mpmath
import numpy as np
import pytest
from scipy.special import gammaln

from h2axdose import kernels
from h2axdose.errors import BoundaryError, DomainError
from h2axdose.model import (
    CalibrationDataset,
    ComponentParams,
    FociRecord,
    MixtureParams,
    Parametrization,
    PriorSpec,
    check_bounds,
    free_log_posterior,
    lambda_surface,
    log_likelihood,
    log_perks,
    log_posterior_kernel,
    log_prior,
    sample_synthetic,
)


def small_dataset():
    return CalibrationDataset([0.0, 1.0, 2.0, 0.5, 3.0], [0.5, 1.0, 4.0, 24.0, 2.0], [1, 5, 9, 0, 14])


class TestRecords:
    def test_record_validation(self):
        FociRecord(0.0, 1.0, 0)
        with pytest.raises(DomainError):
            FociRecord(-1.0, 1.0, 0)
        with pytest.raises(DomainError):
            FociRecord(1.0, 0.0, 0)
        with pytest.raises(DomainError):
            FociRecord(1.0, 1.0, 1.5)

    def test_dataset_needs_two_doses_and_times(self):
        with pytest.raises(DomainError):
            CalibrationDataset([1.0, 1.0], [1.0, 2.0], [0, 1])
        with pytest.raises(DomainError):
            CalibrationDataset([], [], [])

    def test_count_ceiling(self):
        with pytest.raises(DomainError, match="ceiling"):
            CalibrationDataset([0.0, 1.0], [1.0, 2.0], [3, 500])
        assert len(CalibrationDataset([0.0, 1.0], [1.0, 2.0], [3, 500], max_count=None)) == 2

    def test_aggregation_preserves_weights(self):
        data = CalibrationDataset([0, 0, 1, 1, 1], [1, 1, 2, 2, 2], [3, 3, 4, 4, 5])
        d, t, y, n, lf = data.aggregated
        assert n.sum() == 5
        np.testing.assert_allclose(lf, gammaln(y + 1))

    def test_digest_and_records(self):
        data = small_dataset()
        assert data.digest() == small_dataset().digest()
        assert data.digest().startswith("sha256:")
        assert CalibrationDataset.from_records(data.records).digest() == data.digest()
        with pytest.raises(ValueError):
            data.dose[0] = 5.0


class TestParams:
    def test_simplex(self):
        comp = ComponentParams(1.0, 1.0, 0.0)
        with pytest.raises(DomainError):
            MixtureParams((0.5, 0.6), (comp, comp), 0.0)
        with pytest.raises(DomainError):
            MixtureParams((0.5, 0.5 + 1e-11), (comp, comp), 0.0)
        with pytest.raises(DomainError):
            MixtureParams((0.5, 0.5), (comp, comp), None)

    def test_canonical_sorts_by_a(self):
        p = MixtureParams.from_arrays([0.3, 0.7], [5.0, 2.0], [1.0, 1.0], [0.1], [0.0, -0.2])
        q = p.canonical()
        assert q.components[0].a == 2.0 and q.weights[0] == pytest.approx(0.7)


class TestLambdaSurface:
    @pytest.mark.parametrize(
        "a,c,v,u,d,t,expected",
        [
            (1.0, 0.5, -0.5, -0.3, 0.0, 1.0, 0.5),
            (2.0, 1.0, 0.0, 0.0, 3.0, 7.0, 7.0),
        ],
    )
    def test_examples(self, a, c, v, u, d, t, expected):
        assert lambda_surface(ComponentParams(a, c, v), u, d, t) == pytest.approx(expected, abs=1e-15)

    def test_high_precision(self):
        with mpmath.workdps(30):
            ref = mpmath.mpf("0.8") * mpmath.mpf(4) ** mpmath.mpf("-0.2") + mpmath.mpf("1.5") * mpmath.mpf(4) ** mpmath.mpf("-0.4") * 2
        val = lambda_surface(ComponentParams(1.5, 0.8, -0.4), -0.2, 2.0, 4.0)
        assert val == pytest.approx(float(ref), rel=1e-14)
        assert round(val, 4) == 2.3293

    def test_rejects_bad_time(self):
        with pytest.raises(DomainError):
            lambda_surface(ComponentParams(1, 1, 0), 0.0, 1.0, 0.0)


class TestLikelihood:
    def test_single_record_unit_rate(self):
        one = np.ones(1)
        ll, _ = kernels.mixture_loglik(np.zeros(1), one, np.zeros(1), one, np.zeros(1), np.zeros(1),
                                       np.array([3.0]), np.ones(1), np.zeros(1), np.zeros(1), False)
        assert ll == pytest.approx(-1.0, abs=1e-15)

    def test_identical_components_collapse(self):
        data = small_dataset()
        one = MixtureParams.from_arrays([1.0], [2.0], [1.5], [-0.2], [-0.3])
        two = MixtureParams.from_arrays([0.5, 0.5], [2.0, 2.0], [1.5, 1.5], [-0.2], [-0.3, -0.3])
        assert log_likelihood(two, data) == pytest.approx(log_likelihood(one, data), rel=1e-13)

    def test_bruteforce_high_precision(self):
        data = small_dataset()
        params = MixtureParams.from_arrays([0.3, 0.7], [1.2, 4.0], [0.7, 2.0], [-0.1], [-0.5, -0.2])
        w, a, c, u, v = params.arrays()
        total = mpmath.mpf(0)
        with mpmath.workdps(40):
            for d, t, y in zip(data.dose, data.time, data.count):
                s = mpmath.mpf(0)
                for k in range(2):
                    lam = mpmath.mpf(c[k]) * mpmath.mpf(t) ** mpmath.mpf(u[k]) + mpmath.mpf(a[k]) * mpmath.mpf(t) ** mpmath.mpf(v[k]) * mpmath.mpf(d)
                    s += mpmath.mpf(w[k]) * mpmath.exp(-lam) * lam ** int(y) / mpmath.factorial(int(y))
                total += mpmath.log(s)
        assert log_likelihood(params, data) == pytest.approx(float(total), rel=1e-12)

    def test_python_and_compiled_kernels_agree(self):
        from h2axdose import _pykernels

        data = sample_synthetic(MixtureParams.from_arrays([0.4, 0.6], [3.0, 8.0], [1.0, 2.0], [0.1], [-0.4, -0.2]),
                                [(d, t, 50) for d in (0, 1, 2) for t in (0.5, 4, 24)], seed=1)
        d, t, y, n, lf = data.aggregated
        args = (d, t, y, n, lf, np.log([0.4, 0.6]), np.array([3.0, 8.0]), np.array([1.0, 2.0]),
                np.array([0.1, 0.1]), np.array([-0.4, -0.2]), True)
        ll_py, g_py = _pykernels.mixture_loglik(*args)
        ll, g = kernels.mixture_loglik(*args)
        assert ll == pytest.approx(ll_py, rel=1e-13)
        np.testing.assert_allclose(g, g_py, rtol=1e-10, atol=1e-10)


class TestPrior:
    def test_perks_k4(self):
        expected = math.log(64.0) - 4 * math.lgamma(0.25)
        assert log_perks([0.25] * 4) == pytest.approx(expected, rel=1e-14)
        assert log_perks([0.25] * 4) == pytest.approx(-0.9932, abs=1e-4)

    def test_perks_k2(self):
        assert log_perks([0.5, 0.5]) == pytest.approx(math.log(2 / math.pi), rel=1e-14)

    def test_out_of_box(self):
        spec = PriorSpec(1)
        bad = MixtureParams.from_arrays([1.0], [200.0], [1.0], [0.0], [0.0])
        with pytest.raises(BoundaryError):
            log_prior(bad, spec)
        assert log_posterior_kernel(bad, small_dataset(), spec) == -np.inf
        with pytest.raises(BoundaryError):
            check_bounds(MixtureParams.from_arrays([1.0], [1.0], [1.0], [6.0], [0.0]), spec)

    def test_flat_prior_equals_likelihood(self):
        data = small_dataset()
        params = MixtureParams.from_arrays([0.3, 0.7], [1.2, 4.0], [0.7, 2.0], [-0.1], [-0.5, -0.2])
        spec = PriorSpec(2, use_perks=False)
        assert log_posterior_kernel(params, data, spec) == log_likelihood(params, data)

    def test_kernel_composition_k4(self):
        data = small_dataset()
        params = MixtureParams.from_arrays([0.25] * 4, [1.0, 2.0, 3.0, 4.0], [1.0] * 4, [0.0], [0.0] * 4)
        got = log_posterior_kernel(params, data, PriorSpec(4))
        assert got == pytest.approx(log_likelihood(params, data) + log_perks([0.25] * 4), rel=1e-14)


class TestParametrization:
    @pytest.mark.parametrize("K,shared,p", [(1, True, 4), (2, True, 8), (4, True, 16), (4, False, 19)])
    def test_size(self, K, shared, p):
        assert Parametrization(K, shared).size == p

    def test_roundtrip(self):
        param = Parametrization(3, False)
        params = MixtureParams(
            (0.2, 0.3, 0.5),
            tuple(ComponentParams(a, c, v, u) for a, c, v, u in [(1, 2, 0.1, -0.1), (3, 1, -0.2, 0.3), (5, 0.5, 0.0, 0.2)]),
            None,
            False,
        )
        back = param.to_params(param.to_free(params))
        np.testing.assert_allclose(back.arrays()[0], params.arrays()[0], rtol=1e-14)
        for x, y in zip(back.arrays(), params.arrays()):
            np.testing.assert_allclose(x, y, rtol=1e-13)

    def test_gradient_matches_finite_difference(self):
        data = small_dataset()
        param = Parametrization(2, True)
        spec = PriorSpec(2)
        x = param.to_free(MixtureParams.from_arrays([0.3, 0.7], [1.2, 4.0], [0.7, 2.0], [-0.1], [-0.5, -0.2]))
        f, g = free_log_posterior(x, data, spec, param)
        h = 1e-6
        fd = np.array([(free_log_posterior(x + h * e, data, spec, param, want_grad=False)
                        - free_log_posterior(x - h * e, data, spec, param, want_grad=False)) / (2 * h)
                       for e in np.eye(param.size)])
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6)


class TestSynthetic:
    def test_poisson_mean(self):
        # slope at the lower box bound so the rate is 5 everywhere
        params = MixtureParams.from_arrays([1.0], [1e-12], [5.0], [0.0], [0.0])
        data = sample_synthetic(params, [(0.0, 1.0, 50_000), (1.0, 2.0, 50_000)], seed=3)
        assert abs(data.count.mean() - 5.0) < 3 * math.sqrt(5.0 / 1e5)

    def test_mixture_variance(self):
        params = MixtureParams.from_arrays([0.5, 0.5], [1e-12, 1e-12], [1.0, 9.0], [0.0], [0.0, 0.0])
        data = sample_synthetic(params, [(0.0, 1.0, 50_000), (1.0, 2.0, 50_000)], seed=4)
        assert data.count.var(ddof=1) == pytest.approx(21.0, rel=0.02)

    def test_determinism_and_zero_cells(self):
        params = MixtureParams.from_arrays([1.0], [1.0], [2.0], [0.0], [0.0])
        design = [(0.0, 1.0, 10), (1.0, 2.0, 10), (2.0, 3.0, 0)]
        a = sample_synthetic(params, design, seed=9)
        b = sample_synthetic(params, design, seed=9)
        assert a.digest() == b.digest()
        assert len(a) == 20
