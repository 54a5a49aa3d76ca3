# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled mixture log-likelihood kernel; mirrors ``_pykernels.mixture_loglik``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def mixture_loglik(const double[::1] dose, const double[::1] time,
                   const double[::1] count, const double[::1] weight,
                   const double[::1] log_count_fact,
                   const double[::1] log_w, const double[::1] a,
                   const double[::1] c, const double[::1] u,
                   const double[::1] v, bint want_grad=True):
    cdef Py_ssize_t n = dose.shape[0]
    cdef Py_ssize_t K = log_w.shape[0]
    cdef Py_ssize_t i, k
    cdef double logt, y, m, tot, ll = 0.0, r, dl, wi
    cdef double[::1] lam_c = np.empty(K)
    cdef double[::1] lam_a = np.empty(K)
    cdef double[::1] s = np.empty(K)
    grad_arr = np.zeros((5, K))
    cdef double[:, ::1] g = grad_arr

    for i in range(n):
        logt = log(time[i])
        y = count[i]
        wi = weight[i]
        m = -1e308
        for k in range(K):
            lam_c[k] = c[k] * exp(logt * u[k])
            lam_a[k] = a[k] * exp(logt * v[k]) * dose[i]
            s[k] = log_w[k] + y * log(lam_c[k] + lam_a[k]) - (lam_c[k] + lam_a[k]) - log_count_fact[i]
            if s[k] > m:
                m = s[k]
        tot = 0.0
        for k in range(K):
            s[k] = exp(s[k] - m)
            tot += s[k]
        ll += wi * (m + log(tot))
        if want_grad:
            for k in range(K):
                r = wi * s[k] / tot
                dl = r * (y / (lam_c[k] + lam_a[k]) - 1.0)
                g[0, k] += r
                g[1, k] += dl * lam_a[k]
                g[2, k] += dl * lam_c[k]
                g[3, k] += dl * lam_c[k] * logt
                g[4, k] += dl * lam_a[k] * logt
    if want_grad:
        return ll, grad_arr
    return ll, None
