"""Pure NumPy ADMM inner loop, the fallback for the compiled kernel.

Semantics are identical to ddpc._admm_cy.admm_chunk: run n_iter iterations of
the operator-splitting recursion in the scaled problem space, updating x, z,
y in place and leaving the last iteration's increments in dx, dy.
"""

import numpy as np
from scipy.linalg import solve_triangular


def admm_chunk(chol_l, a_mat, rho, inv_rho, sigma, relax, f, lo, hi, x, z, y, dx, dy, wm, wr, n_iter):
    has_rows = a_mat.shape[0] > 0
    for _ in range(n_iter):
        rhs = sigma * x - f
        if has_rows:
            np.multiply(rho, z, out=wr)
            wr -= y
            rhs += a_mat.T @ wr
        xt = solve_triangular(chol_l, rhs, lower=True, check_finite=False, overwrite_b=True)
        xt = solve_triangular(chol_l, xt, lower=True, trans="T", check_finite=False, overwrite_b=True)
        if has_rows:
            np.dot(a_mat, xt, out=wr)
        np.multiply(relax, xt, out=wm)
        wm += (1.0 - relax) * x
        np.subtract(wm, x, out=dx)
        x[:] = wm
        if has_rows:
            v = relax * wr + (1.0 - relax) * z + inv_rho * y
            z_new = np.clip(v, lo, hi)
            y_new = rho * (v - z_new)
            np.subtract(y_new, y, out=dy)
            y[:] = y_new
            z[:] = z_new
    return 0
