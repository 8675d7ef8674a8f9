"""Dense symmetric matrix utilities.

Everything downstream (certificate assembly, the perturbation solver) works
with small dense symmetric matrices, so this module provides exactly that:
a symmetric eigensolver built on cyclic Jacobi rotations, a minimum-eigenvalue
helper, and a block-grid assembler.  Matrices are plain float64
``numpy.ndarray`` objects; there is no wrapper class.

The Jacobi sweep kernel is written as scalar loops and compiled with numba
when available.  The fallback executes the identical statements in pure
Python, so results are bit-for-bit the same either way.
"""

from typing import NamedTuple

import numpy as np

from .errors import ContractError

__all__ = [
    "MAX_DIM",
    "SYM_ATOL",
    "SymEigResult",
    "as_symmetric",
    "sym_eig",
    "min_eig",
    "is_psd",
    "frob_block_assemble",
]

# Contract bounds: desk-scale matrices only.
MAX_DIM = 512
# Absolute tolerance on |A - A'| for accepting a matrix as symmetric.
SYM_ATOL = 1e-12


class SymEigResult(NamedTuple):
    """Eigendecomposition of a symmetric matrix.

    Attributes
    ----------
    values : numpy.ndarray
        Eigenvalues in ascending order, shape (n,).
    vectors : numpy.ndarray
        Orthonormal eigenvectors as columns, shape (n, n); column j pairs
        with ``values[j]``.
    """

    values: np.ndarray
    vectors: np.ndarray


def as_symmetric(a, atol=SYM_ATOL):
    """Validate ``a`` as a square symmetric matrix and return (A + A')/2.

    Parameters
    ----------
    a : array_like
        Square matrix with finite entries.  The asymmetry ``max|A - A'|``
        must not exceed ``atol`` (absolute).
    atol : float
        Absolute asymmetry tolerance.

    Returns
    -------
    numpy.ndarray
        Symmetrized float64 copy.

    Raises
    ------
    ContractError
        If ``a`` is not square, empty, larger than ``MAX_DIM``, has
        non-finite entries, or is asymmetric beyond ``atol``.
    """
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if n == 0:
        raise ContractError("empty matrix")
    if n > MAX_DIM:
        raise ContractError(f"dimension {n} exceeds supported maximum {MAX_DIM}")
    if not np.all(np.isfinite(m)):
        raise ContractError("matrix has non-finite entries")
    asym = np.max(np.abs(m - m.T)) if n > 1 else 0.0
    if asym > atol:
        raise ContractError(
            f"matrix asymmetry {asym:.3e} exceeds tolerance {atol:.3e}"
        )
    return (m + m.T) / 2.0


def _jacobi_kernel(a, v, off_tol, max_sweeps):
    # Cyclic-by-rows Jacobi sweeps, in place.  a must be symmetric; v starts
    # as the identity and accumulates the rotations.  Returns sweeps used, or
    # -1 if the off-diagonal norm never dropped below off_tol.
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        if (2.0 * off) ** 0.5 <= off_tol:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + (1.0 + theta * theta) ** 0.5)
                else:
                    t = -1.0 / (-theta + (1.0 + theta * theta) ** 0.5)
                c = 1.0 / (1.0 + t * t) ** 0.5
                s = t * c
                tau = s / (1.0 + c)
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(n):
                    if i != p and i != q:
                        aip = a[i, p]
                        aiq = a[i, q]
                        a[i, p] = aip - s * (aiq + tau * aip)
                        a[p, i] = a[i, p]
                        a[i, q] = aiq + s * (aip - tau * aiq)
                        a[q, i] = a[i, q]
                for i in range(n):
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = vip - s * (viq + tau * vip)
                    v[i, q] = viq + s * (vip - tau * viq)
    off = 0.0
    for p in range(n - 1):
        for q in range(p + 1, n):
            off += a[p, q] * a[p, q]
    if (2.0 * off) ** 0.5 <= off_tol:
        return max_sweeps
    return -1


try:  # compiled kernel when numba is present; identical semantics without it
    from numba import njit as _njit

    _jacobi_kernel = _njit(cache=True)(_jacobi_kernel)
except ImportError:  # pragma: no cover
    pass


def sym_eig(a, atol=SYM_ATOL):
    """Full eigendecomposition of a symmetric matrix via cyclic Jacobi.

    Parameters
    ----------
    a : array_like
        Square symmetric matrix (asymmetry up to ``atol`` is symmetrized
        away), dimension at most ``MAX_DIM``.
    atol : float
        Asymmetry tolerance forwarded to :func:`as_symmetric`.

    Returns
    -------
    SymEigResult
        Ascending eigenvalues and orthonormal eigenvectors satisfying
        ``a ~= vectors @ diag(values) @ vectors.T``.

    Notes
    -----
    Cyclic-by-rows sweeps with the standard stable rotation update.  The
    iteration stops when the off-diagonal Frobenius norm falls below
    1e-14 * max(1, ||A||_F); convergence is quadratic, so a generous sweep
    cap never binds in practice.
    """
    m = as_symmetric(a, atol=atol)
    n = m.shape[0]
    if n == 1:
        return SymEigResult(m[0].copy(), np.ones((1, 1)))
    scale = np.linalg.norm(m)
    off_tol = 1e-14 * max(1.0, scale)
    work = m.copy()
    vecs = np.eye(n)
    swept = _jacobi_kernel(work, vecs, off_tol, 64)
    if swept < 0:
        raise ContractError("Jacobi iteration failed to converge in 64 sweeps")
    values = np.diag(work).copy()
    order = np.argsort(values, kind="stable")
    return SymEigResult(values[order], np.ascontiguousarray(vecs[:, order]))


def min_eig(a, atol=SYM_ATOL):
    """Smallest eigenvalue of a symmetric matrix.

    Parameters
    ----------
    a : array_like
        Square symmetric matrix.

    Returns
    -------
    float
    """
    return float(sym_eig(a, atol=atol).values[0])


def is_psd(a, tol=1e-9, atol=SYM_ATOL):
    """Whether a symmetric matrix is positive semidefinite at tolerance.

    ``True`` iff ``min_eig(a) >= -tol``.
    """
    if tol < 0:
        raise ContractError("tolerance must be nonnegative")
    return min_eig(a, atol=atol) >= -tol


def frob_block_assemble(grid):
    """Assemble a dense matrix from a 2-D grid of blocks.

    Parameters
    ----------
    grid : sequence of sequences
        ``grid[i][j]`` is the (i, j) block as an array, or ``None`` for a
        zero block.  Row heights and column widths must be consistent
        across the grid, and every row (column) needs at least one
        non-``None`` block to fix its height (width).

    Returns
    -------
    numpy.ndarray
        The assembled float64 matrix.

    Raises
    ------
    ContractError
        On ragged grids, inconsistent block shapes, or rows/columns whose
        size cannot be inferred.
    """
    if not grid or not all(len(row) == len(grid[0]) for row in grid):
        raise ContractError("grid must be a non-empty rectangular nesting")
    nrows = len(grid)
    ncols = len(grid[0])
    if ncols == 0:
        raise ContractError("grid must be a non-empty rectangular nesting")
    blocks = [
        [None if b is None else np.asarray(b, dtype=np.float64) for b in row]
        for row in grid
    ]
    heights = [None] * nrows
    widths = [None] * ncols
    for i in range(nrows):
        for j in range(ncols):
            b = blocks[i][j]
            if b is None:
                continue
            if b.ndim != 2:
                raise ContractError(f"block ({i},{j}) is not 2-D")
            if heights[i] is None:
                heights[i] = b.shape[0]
            elif heights[i] != b.shape[0]:
                raise ContractError(f"row {i} has inconsistent block heights")
            if widths[j] is None:
                widths[j] = b.shape[1]
            elif widths[j] != b.shape[1]:
                raise ContractError(f"column {j} has inconsistent block widths")
    if any(h is None for h in heights) or any(w is None for w in widths):
        raise ContractError("every row and column needs one non-None block")
    row_off = np.concatenate([[0], np.cumsum(heights)])
    col_off = np.concatenate([[0], np.cumsum(widths)])
    out = np.zeros((row_off[-1], col_off[-1]))
    for i in range(nrows):
        for j in range(ncols):
            b = blocks[i][j]
            if b is not None:
                out[row_off[i]:row_off[i + 1], col_off[j]:col_off[j + 1]] = b
    return out
