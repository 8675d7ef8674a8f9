"""Shared test oracles, independent of the library's own numerics."""

import numpy as np


def refine_eigenvalue(a, shift, iters=5):
    """Polish one eigenvalue of symmetric ``a`` near ``shift``.

    Shifted inverse iteration with a Rayleigh-quotient update, using LU
    solves (numpy.linalg.solve) only -- a code path disjoint from the
    library's Jacobi sweeps.  Starting from a shift close to an eigenvalue
    the iteration converges to that eigenvalue at machine precision, so it
    serves as an independent check on eigenvalues produced elsewhere.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    eye = np.eye(n)
    x = 1.0 + 0.01 * np.arange(n)
    x /= np.linalg.norm(x)
    lam = float(shift)
    for _ in range(iters):
        try:
            y = np.linalg.solve(a - lam * eye, x)
        except np.linalg.LinAlgError:
            # exactly singular shift: nudge off the eigenvalue
            y = np.linalg.solve(a - (lam + 1e-12 * (1.0 + abs(lam))) * eye, x)
        nrm = np.linalg.norm(y)
        if not np.isfinite(nrm) or nrm == 0.0:
            break
        x = y / nrm
        lam = float(x @ a @ x)
    return lam


def rand_sym(rng, n, scale=1.0):
    """Random symmetric matrix with entries O(scale)."""
    g = rng.normal(0.0, scale, (n, n))
    return (g + g.T) / 2.0


def rand_psd(rng, n, scale=1.0):
    """Random positive semidefinite matrix."""
    g = rng.normal(0.0, scale, (n, n))
    return g @ g.T


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at 1-D ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g
