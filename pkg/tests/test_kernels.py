import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.special import gammaln

from h2axdose import _pykernels, kernels


def random_problem(rng, n=200, K=3):
    dose = rng.uniform(0, 4, n)
    time = rng.uniform(0.3, 30, n)
    count = rng.poisson(8, n).astype(float)
    weight = rng.integers(1, 5, n).astype(float)
    log_w = np.log(rng.dirichlet(np.ones(K)))
    a = rng.uniform(1, 10, K)
    c = rng.uniform(0.5, 3, K)
    u = rng.uniform(-0.5, 0.1, K)
    v = rng.uniform(-1, 0.1, K)
    return (dose, time, count, weight, gammaln(count + 1)), (log_w, a, c, u, v)


class TestBackend:
    def test_backend_name(self):
        assert kernels.BACKEND in ("cython", "python")

    def test_env_forces_python(self):
        env = dict(os.environ, H2AXDOSE_PURE_PYTHON="1")
        out = subprocess.run([sys.executable, "-c", "import h2axdose.kernels as k; print(k.BACKEND)"],
                             capture_output=True, text=True, env=env, check=True).stdout
        assert out.strip() == "python"


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")
class TestCythonAgreement:
    def test_loglik_and_grad(self, rng):
        from h2axdose import _ckernels

        for _ in range(5):
            data, params = random_problem(rng)
            ll_c, g_c = _ckernels.mixture_loglik(*data, *params)
            ll_p, g_p = _pykernels.mixture_loglik(*data, *params)
            assert ll_c == pytest.approx(ll_p, rel=1e-12)
            np.testing.assert_allclose(g_c, g_p, rtol=1e-10, atol=1e-9)

    def test_no_grad(self, rng):
        from h2axdose import _ckernels

        data, params = random_problem(rng, K=1)
        ll, g = _ckernels.mixture_loglik(*data, *params, want_grad=False)
        assert g is None
        assert ll == pytest.approx(_pykernels.mixture_loglik(*data, *params)[0], rel=1e-12)


class TestPythonKernel:
    def test_gradient_fd(self, rng):
        data, params = random_problem(rng, n=50, K=2)
        _, grad = _pykernels.mixture_loglik(*data, *params)
        log_w, a, c, u, v = params
        h = 1e-6
        transforms = [("log_w", lambda p, d: p + d), ("a", lambda p, d: p * np.exp(d)),
                      ("c", lambda p, d: p * np.exp(d)), ("u", lambda p, d: p + d), ("v", lambda p, d: p + d)]
        for row, (name, step) in enumerate(transforms):
            for k in range(2):
                vals = []
                for sign in (1, -1):
                    p = dict(log_w=log_w.copy(), a=a.copy(), c=c.copy(), u=u.copy(), v=v.copy())
                    delta = np.zeros(2)
                    delta[k] = sign * h
                    p[name] = step(p[name], delta)
                    vals.append(_pykernels.mixture_loglik(*data, *p.values(), want_grad=False)[0])
                assert grad[row, k] == pytest.approx((vals[0] - vals[1]) / (2 * h), rel=1e-5, abs=1e-5)

    def test_row_loglik_sums(self, rng):
        data, params = random_problem(rng)
        dose, time, count, weight, lcf = data
        rows = _pykernels.row_loglik(dose, time, count, lcf, *params)
        assert np.dot(weight, rows) == pytest.approx(_pykernels.mixture_loglik(*data, *params)[0], rel=1e-13)
