# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled ADMM inner loop.

Runs n_iter operator-splitting iterations on the scaled problem, calling BLAS
directly for the two triangular solves and the constraint matvecs so that no
Python dispatch happens inside the loop. Arrays are C-contiguous float64; the
BLAS calls exploit that a C-order matrix viewed column-major is its
transpose.
"""

from scipy.linalg.cython_blas cimport dgemv, dtrsv


def admm_chunk(double[:, ::1] chol_l,
               double[:, ::1] a_mat,
               double[::1] rho,
               double[::1] inv_rho,
               double sigma,
               double relax,
               double[::1] f,
               double[::1] lo,
               double[::1] hi,
               double[::1] x,
               double[::1] z,
               double[::1] y,
               double[::1] dx,
               double[::1] dy,
               double[::1] wm,
               double[::1] wr,
               int n_iter):
    cdef int m = x.shape[0]
    cdef int r = z.shape[0]
    cdef int it, i
    cdef int inc = 1
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef double xt, v, znew, ynew
    cdef char uplo = b'U'
    cdef char trans_t = b'T'
    cdef char trans_n = b'N'
    cdef char diag = b'N'
    with nogil:
        for it in range(n_iter):
            # wm = sigma*x - f + A^T (rho*z - y)
            for i in range(m):
                wm[i] = sigma * x[i] - f[i]
            if r > 0:
                for i in range(r):
                    wr[i] = rho[i] * z[i] - y[i]
                # A is (r, m) C-order: memory seen column-major is A^T, so
                # trans='N' computes A^T @ wr.
                dgemv(&trans_n, &m, &r, &one, &a_mat[0, 0], &m,
                      &wr[0], &inc, &one, &wm[0], &inc)
            # Solve (L L^T) xt = wm in place; L C-order reads as U = L^T.
            dtrsv(&uplo, &trans_t, &diag, &m, &chol_l[0, 0], &m, &wm[0], &inc)
            dtrsv(&uplo, &trans_n, &diag, &m, &chol_l[0, 0], &m, &wm[0], &inc)
            if r > 0:
                # wr = A @ xt
                dgemv(&trans_t, &m, &r, &one, &a_mat[0, 0], &m,
                      &wm[0], &inc, &zero, &wr[0], &inc)
            for i in range(m):
                xt = relax * wm[i] + (1.0 - relax) * x[i]
                dx[i] = xt - x[i]
                x[i] = xt
            for i in range(r):
                v = relax * wr[i] + (1.0 - relax) * z[i] + inv_rho[i] * y[i]
                if v < lo[i]:
                    znew = lo[i]
                elif v > hi[i]:
                    znew = hi[i]
                else:
                    znew = v
                ynew = rho[i] * (v - znew)
                dy[i] = ynew - y[i]
                y[i] = ynew
                z[i] = znew
    return 0
