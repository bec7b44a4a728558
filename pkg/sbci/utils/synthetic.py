"""
Synthetic CI-like matrices: a diagonal that grows with the index plus sparse
off-diagonal couplings whose magnitude decays with |i - j|, so the diagonal
preconditioner behaves the way it does on determinant Hamiltonians.

Usage:
    from sbci.utils.synthetic import gen_synthetic_ci_matrix
    op = gen_synthetic_ci_matrix(200, seed=1, density=0.02)
"""

import math
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from loguru import logger

from sbci.core.errors import ContractError
from sbci.core.linalg import SymmetricLinearOperator


DIAGONAL_NOISE = 0.3
DECAY_FRACTION = 0.1
DENSE_ORACLE_LIMIT = 2000
MIXING_ANGLE = 0.3


def _lowest_eigenvalue(matrix: scipy.sparse.csr_matrix) -> float:
    if matrix.shape[0] <= DENSE_ORACLE_LIMIT:
        return float(scipy.linalg.eigh(matrix.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])
    values = scipy.sparse.linalg.eigsh(matrix, k=1, which="SA", return_eigenvectors=False)
    return float(values[0])


def _coupled_matrix(n: int, rng: np.random.Generator, density: float, gap: float,
                    coupling: float) -> scipy.sparse.csr_matrix:
    index = np.arange(n, dtype=float)
    diagonal = gap * (index + DIAGONAL_NOISE * rng.standard_normal(n))

    couplings = scipy.sparse.random(n, n, density=density, format="coo",
                                    random_state=rng, data_rvs=rng.standard_normal)
    lower = scipy.sparse.tril(couplings, k=-1).tocoo()
    decay = np.exp(-np.abs(lower.row - lower.col) / (DECAY_FRACTION * n))
    lower = scipy.sparse.coo_matrix((coupling * lower.data * decay, (lower.row, lower.col)), shape=(n, n))

    # exact symmetry: upper triangle is the transpose of the stored lower one
    return (scipy.sparse.diags(diagonal) + lower + lower.T).tocsr()


def _force_split(matrix: scipy.sparse.csr_matrix, split: float) -> scipy.sparse.csr_matrix:
    """
    Replace index 0 by an isolated level at lambda_0 + split, where lambda_0 is
    the lowest eigenvalue of the remaining block, then hide the decoupling with a
    Givens rotation against the lowest-diagonal index of that block.
    """
    n = matrix.shape[0]
    rest = matrix[1:, 1:].tocsr()
    lam0 = _lowest_eigenvalue(rest)
    block = scipy.sparse.block_diag([scipy.sparse.csr_matrix([[lam0 + split]]), rest], format="csr")

    partner = 1 + int(np.argmin(rest.diagonal()))
    cos, sin = math.cos(MIXING_ANGLE), math.sin(MIXING_ANGLE)
    rotation = scipy.sparse.identity(n, format="lil")
    rotation[0, 0] = cos
    rotation[partner, partner] = cos
    rotation[0, partner] = -sin
    rotation[partner, 0] = sin
    rotation = rotation.tocsr()

    mixed = (rotation.T @ block @ rotation).tocsr()
    logger.debug(f"Forced split {split:g} above lambda_0={lam0:.12f}, mixed 0 with {partner}")
    return ((mixed + mixed.T) * 0.5).tocsr()


def gen_synthetic_ci_matrix(n: int, seed: int = 0, density: float = 0.02, gap: float = 0.1,
                            coupling: float = 0.05,
                            degeneracy_split: Optional[float] = None) -> SymmetricLinearOperator:
    if n < 4:
        raise ContractError(f"synthetic matrix needs n >= 4, got {n}")
    if not 0.0 <= density <= 1.0:
        raise ContractError(f"density must lie in [0, 1], got {density}")
    if degeneracy_split is not None and degeneracy_split < 0:
        raise ContractError(f"degeneracy_split must be non-negative, got {degeneracy_split}")

    rng = np.random.default_rng(int(seed))
    matrix = _coupled_matrix(n, rng, density, gap, coupling)
    if degeneracy_split is not None:
        matrix = _force_split(matrix, degeneracy_split)

    logger.debug(f"Synthetic matrix n={n} seed={seed} density={density} nnz={matrix.nnz}")
    return SymmetricLinearOperator.from_sparse(matrix, name=f"synthetic-n{n}-s{seed}")
