"""Implicit-form regression matrix, candidate reduction and null-space solver.

Clearing the normalising denominator of the dynamics gives, for every agent,

    sum_j phi(|x_j - x_i|) (xdot_i - (x_j - x_i)) = 0            (first order)
    sum_j phi(|x_j - x_i|) (m_i xddot_i - (v_j - v_i)) = 0        (second order)

which is linear in the basis coefficients of ``phi``. Rows of the matrix are
ordered by ``(m, l, i, coordinate)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import TrajectoryDataset, pairwise_distances
from .kernels import BasisFamily


@dataclass(frozen=True, eq=False)
class RegressionMatrix:
    matrix: np.ndarray
    basis: BasisFamily
    shape_mld: tuple  # (M, L, N, d)

    @property
    def K(self) -> int:
        return self.matrix.shape[1]

    def nonzero_columns(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.matrix != 0, axis=0))

    def row_index(self) -> np.ndarray:
        """``[rows, 4]`` array of ``(m, l, i, coord)`` for each row."""
        M, L, N, d = self.shape_mld
        return np.stack(np.unravel_index(np.arange(M * L * N * d), (M, L, N, d)), axis=1)

    def gram(self) -> np.ndarray:
        M, L, N, _ = self.shape_mld
        g = self.matrix.T @ self.matrix / (N * M * L)
        return 0.5 * (g + g.T)

    def to_csv(self, path) -> None:
        idx = self.row_index()
        header = "m,l,i,coord," + ",".join(f"k{k + 1}" for k in range(self.K))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(header + "\n")
            for r, row in zip(idx, self.matrix):
                fh.write(",".join(map(str, r)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    Phi: np.ndarray
    b: np.ndarray
    k_star: int  # one-based

    def embed(self, w: np.ndarray) -> np.ndarray:
        """Full coefficient vector ``e_{k*} + w`` with ``w`` placed around ``k*``."""
        w = np.asarray(w, dtype=float)
        return np.insert(w, self.k_star - 1, 1.0)


def _block(dist_idx: np.ndarray, vec: np.ndarray, K: int, include_self: bool) -> np.ndarray:
    """Sum ``vec[i, j]`` into ``out[i, :, cell(i, j)]`` for one snapshot."""
    N, _, d = vec.shape
    mask = dist_idx >= 0
    if not include_self:
        np.fill_diagonal(mask, False)
    ii, jj = np.nonzero(mask)
    flat = ii * K + dist_idx[ii, jj]
    out = np.empty((N, d, K))
    for c in range(d):
        out[:, c, :] = np.bincount(flat, weights=vec[ii, jj, c], minlength=N * K).reshape(N, K)
    return out.reshape(N * d, K)


def _assemble(dataset: TrajectoryDataset, basis: BasisFamily, second_order: bool) -> RegressionMatrix:
    M, L, N, d = dataset.positions.shape
    K = basis.cell_count
    for arr in (dataset.positions, dataset.velocities):
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite dataset entries")
    masses = dataset.mass_vector()
    rows = []
    outside = 0
    for m in range(M):
        for l in range(L):
            x = dataset.positions[m, l]
            r = pairwise_distances(x)
            idx = basis.cell_index(r)
            outside += int(np.count_nonzero(idx < 0))
            if second_order:
                v = dataset.velocities[m, l]
                lhs = masses[:, None] * dataset.accelerations[m, l]
                vec = lhs[:, None, :] - (v[None, :, :] - v[:, None, :])
            else:
                xdot = dataset.velocities[m, l]
                vec = xdot[:, None, :] - (x[None, :, :] - x[:, None, :])
            rows.append(_block(idx, vec, K, dataset.include_self))
    if outside:
        warnings.warn(
            f"{outside} pairwise distances fall outside the basis domain [0, {basis.domain_max}]",
            stacklevel=3,
        )
    return RegressionMatrix(np.vstack(rows), basis, (M, L, N, d))


def assemble_first_order(dataset: TrajectoryDataset, basis: BasisFamily) -> RegressionMatrix:
    if dataset.order != 1:
        raise ValueError("first-order assembly needs an order-1 dataset")
    return _assemble(dataset, basis, second_order=False)


def assemble_second_order(dataset: TrajectoryDataset, basis: BasisFamily) -> RegressionMatrix:
    if dataset.order != 2 or dataset.accelerations is None:
        raise ValueError("second-order assembly needs an order-2 dataset with accelerations")
    return _assemble(dataset, basis, second_order=True)


def assemble(dataset: TrajectoryDataset, basis: BasisFamily) -> RegressionMatrix:
    if dataset.order == 1:
        return assemble_first_order(dataset, basis)
    return assemble_second_order(dataset, basis)


def _as_array(A) -> np.ndarray:
    return A.matrix if isinstance(A, RegressionMatrix) else np.asarray(A, dtype=float)


def reduce_for_candidate(A, k_star: int) -> ReducedSystem:
    """Pin coefficient ``k_star`` (one-based) to 1: ``Phi w = b`` with ``b = -A[:, k*]``."""
    mat = _as_array(A)
    K = mat.shape[1]
    if not 1 <= k_star <= K:
        raise IndexError(f"candidate {k_star} outside 1..{K}")
    col = k_star - 1
    return ReducedSystem(np.delete(mat, col, axis=1), -mat[:, col].copy(), k_star)


def candidate_admissible(A, k_star: int, zero_tol: float = 1e-12) -> bool:
    """False when strictly more than half the column entries are (numerically) zero."""
    mat = _as_array(A)
    scale = np.abs(mat).max() if mat.size else 0.0
    col = mat[:, k_star - 1]
    small = np.count_nonzero(np.abs(col) < zero_tol * scale) if scale > 0 else col.size
    return not 2 * small > col.size


@dataclass(frozen=True)
class NullSpaceEstimate:
    coefficients: np.ndarray
    singular_values: np.ndarray

    @property
    def gap_ratio(self) -> float:
        """Smallest over second-smallest singular value (nan if undefined)."""
        s = self.singular_values
        if s.size < 2 or s[-2] == 0:
            return float("nan")
        return float(s[-1] / s[-2])

    def identifiable(self, ratio: float = 1e-2) -> bool:
        g = self.gap_ratio
        return bool(np.isfinite(g) and g <= ratio)


def null_space_estimate(A) -> NullSpaceEstimate:
    mat = _as_array(A)
    if mat.size == 0:
        raise ValueError("empty matrix")
    if not np.all(np.isfinite(mat)):
        raise np.linalg.LinAlgError("SVD of a matrix with non-finite entries")
    K = mat.shape[1]
    _, s, vt = np.linalg.svd(mat, full_matrices=mat.shape[0] < K)
    sv = np.zeros(K)
    sv[: s.size] = s
    c = vt[-1].copy()
    c /= np.linalg.norm(c)
    j = int(np.argmax(np.abs(c)))
    if c[j] < 0:
        c = -c
    return NullSpaceEstimate(c, sv)
