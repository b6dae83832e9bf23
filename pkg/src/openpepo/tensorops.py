"""Dense complex tensor kernels with deterministic conventions.

Everything downstream (rule-table assembly, PEPO contraction, simple-update
truncation, boundary environments) is built on the five primitives in this
module.  All kernels are pure functions of their inputs and use fixed sign
conventions so that repeated runs produce bit-identical results.

Conventions
-----------
* entries are stored row-major (C order), axes are addressed by position;
* ``contract`` returns the unpaired axes of the first operand followed by
  the unpaired axes of the second, each in their original order;
* singular vectors are phase-fixed: the largest-magnitude entry of every
  column of U is rotated to the positive real axis;
* QR factors are phase-fixed so that diag(R) is real and non-negative.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "contract",
    "matricize",
    "BackMap",
    "truncated_svd",
    "qr_split",
    "pseudo_inverse",
]


def contract(a: np.ndarray, b: np.ndarray, pairs) -> np.ndarray:
    """Contract tensor ``a`` with tensor ``b`` over the given axis pairs.

    Parameters
    ----------
    a, b:
        Complex arrays of arbitrary rank.
    pairs:
        Iterable of ``(axis_of_a, axis_of_b)`` tuples.  Paired axes must
        have equal sizes.

    Returns
    -------
    The contracted tensor whose axes are the unpaired axes of ``a`` (in
    original order) followed by the unpaired axes of ``b``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    pairs = list(pairs)
    ax_a = [p[0] for p in pairs]
    ax_b = [p[1] for p in pairs]
    for i, j in pairs:
        if a.shape[i] != b.shape[j]:
            raise ValueError(
                f"axis size mismatch: a.shape[{i}]={a.shape[i]} vs b.shape[{j}]={b.shape[j]}"
            )
    if not pairs:
        return np.multiply.outer(a, b)
    return np.tensordot(a, b, axes=(ax_a, ax_b))


@dataclass(frozen=True)
class BackMap:
    """Inverse of a :func:`matricize` call.

    Stores the original shape and the row/column axis orders so the matrix
    (or any matrix with the same row structure) can be folded back.
    """

    shape: tuple
    row_axes: tuple
    col_axes: tuple

    def unfold(self, matrix: np.ndarray) -> np.ndarray:
        """Fold a matrix produced by the paired ``matricize`` back to a tensor."""
        row_shape = tuple(self.shape[i] for i in self.row_axes)
        col_shape = tuple(self.shape[i] for i in self.col_axes)
        t = matrix.reshape(row_shape + col_shape)
        # invert the permutation row_axes + col_axes
        perm = list(self.row_axes) + list(self.col_axes)
        inv = np.argsort(perm)
        return t.transpose(inv)


def matricize(t: np.ndarray, row_axes) -> tuple[np.ndarray, BackMap]:
    """Fuse ``row_axes`` into matrix rows and the remaining axes into columns.

    Returns the matrix together with a :class:`BackMap` that inverts the
    fusion exactly.
    """
    t = np.asarray(t)
    row_axes = tuple(int(i) for i in row_axes)
    if len(set(row_axes)) != len(row_axes):
        raise ValueError(f"duplicate axes in {row_axes}")
    for i in row_axes:
        if not 0 <= i < t.ndim:
            raise ValueError(f"axis {i} out of range for rank-{t.ndim} tensor")
    col_axes = tuple(i for i in range(t.ndim) if i not in row_axes)
    perm = row_axes + col_axes
    nrow = int(np.prod([t.shape[i] for i in row_axes], dtype=np.int64)) if row_axes else 1
    ncol = int(np.prod([t.shape[i] for i in col_axes], dtype=np.int64)) if col_axes else 1
    matrix = t.transpose(perm).reshape(nrow, ncol)
    return matrix, BackMap(shape=t.shape, row_axes=row_axes, col_axes=col_axes)


def _fix_svd_phases(u: np.ndarray, vh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotate each column of U so its largest-magnitude entry is real positive."""
    if u.shape[1] == 0:
        return u, vh
    idx = np.argmax(np.abs(u), axis=0)
    piv = u[idx, np.arange(u.shape[1])]
    mag = np.abs(piv)
    phase = np.where(mag > 0, piv / np.where(mag > 0, mag, 1.0), 1.0)
    return u / phase[None, :], vh * phase[:, None]


def truncated_svd(
    m: np.ndarray,
    max_rank: int,
    rel_cutoff: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Truncated SVD with deterministic phases.

    The kept rank is the smallest of ``max_rank``, the number of singular
    values at or above ``rel_cutoff * sigma_1``, and the numerical rank of
    the matrix.

    Returns ``(U, sigma, Vh, discarded_weight)`` with ``sigma`` descending
    and ``discarded_weight = sqrt(sum of dropped sigma**2)``.
    """
    m = np.asarray(m)
    if m.size == 0:
        raise ValueError("cannot decompose an empty matrix")
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    u, s, vh = np.linalg.svd(m, full_matrices=False)
    if s[0] > 0:
        numerical_rank = int(np.sum(s > max(m.shape) * np.finfo(float).eps * s[0]))
        above = int(np.sum(s >= rel_cutoff * s[0]))
    else:
        numerical_rank = 0
        above = 0
    keep = max(1, min(int(max_rank), above, numerical_rank)) if numerical_rank else 1
    discarded = float(np.sqrt(np.sum(s[keep:] ** 2)))
    u, vh = u[:, :keep], vh[:keep, :]
    u, vh = _fix_svd_phases(u, vh)
    return u, s[:keep].copy(), vh, discarded


def qr_split(t: np.ndarray, row_axes) -> tuple[np.ndarray, np.ndarray]:
    """QR-split a tensor across the given row axes.

    ``Q`` has the row axes' original shapes plus a trailing inner axis and
    satisfies Q^dagger Q = 1 on that axis; ``R`` carries the inner axis first
    followed by the remaining axes.  ``contract(Q, R)`` over the inner axis
    reproduces the input.  Phases are fixed so diag(R) is real non-negative.
    """
    t = np.asarray(t)
    matrix, back = matricize(t, row_axes)
    if not np.any(matrix):
        warnings.warn("qr_split of a zero tensor: R = 0, Q is an arbitrary isometry")
    q, r = np.linalg.qr(matrix)
    d = np.diagonal(r).copy()
    mag = np.abs(d)
    phase = np.where(mag > 0, d / np.where(mag > 0, mag, 1.0), 1.0)
    q = q * phase[None, :]
    r = r * np.conj(phase)[:, None]
    k = q.shape[1]
    row_shape = tuple(t.shape[i] for i in back.row_axes)
    col_shape = tuple(t.shape[i] for i in back.col_axes)
    return q.reshape(row_shape + (k,)), r.reshape((k,) + col_shape)


def pseudo_inverse(m: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with a relative singular-value cutoff.

    Singular values below ``rel_tol * sigma_1`` are treated as exact zeros.
    A zero matrix maps to a zero matrix.
    """
    m = np.atleast_2d(np.asarray(m))
    if not np.any(m):
        return np.zeros((m.shape[1], m.shape[0]), dtype=m.dtype)
    return np.linalg.pinv(m, rcond=rel_tol)
