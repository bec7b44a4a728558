"""
Linear Algebra Module

Vector/operator substrate shared by every solver: an instrumented symmetric
operator, inner products, the small dense eigensolver used for subspace
problems, Gram-Schmidt coefficient triangles, canonical orthogonalization
and subspace-matrix projection.

Usage:
    from sbci.core.linalg import SymmetricLinearOperator, small_symmetric_eig
    op = SymmetricLinearOperator.from_sparse(matrix)
    hx = op.apply(x)
"""

import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse
from loguru import logger

from sbci.core.errors import (
    ContractError, DimensionError, EmptyBasisError, RankDeficiencyError,
)


SMALL_EIG_MAX_DIM = 6
SYMMETRY_TOL = 1e-12


class SymmetricLinearOperator:
    """Matrix-free handle for a real symmetric H with an exact application counter."""

    def __init__(self, dim: int, matvec: Callable[[np.ndarray], np.ndarray],
                 diagonal: np.ndarray, name: str = "operator", matrix=None):
        if dim < 1:
            raise ContractError(f"operator dimension must be positive, got {dim}")
        diagonal = np.asarray(diagonal, dtype=float)
        if diagonal.shape != (dim,):
            raise DimensionError(f"diagonal has shape {diagonal.shape}, expected ({dim},)")
        self.dim = dim
        self.name = name
        self.diagonal = diagonal
        self.matrix = matrix
        self._matvec = matvec
        self._lock = threading.Lock()
        self._apply_count = 0

    @classmethod
    def from_dense(cls, matrix: np.ndarray, name: str = "dense") -> "SymmetricLinearOperator":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {matrix.shape}")
        return cls(matrix.shape[0], lambda v: matrix @ v, np.diag(matrix).copy(), name, matrix)

    @classmethod
    def from_sparse(cls, matrix, name: str = "sparse") -> "SymmetricLinearOperator":
        matrix = scipy.sparse.csr_matrix(matrix, dtype=float)
        if matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {matrix.shape}")
        return cls(matrix.shape[0], lambda v: matrix @ v, matrix.diagonal().copy(), name, matrix)

    @property
    def apply_count(self) -> int:
        return self._apply_count

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise DimensionError(f"{self.name}: vector has shape {v.shape}, expected ({self.dim},)")
        with self._lock:
            self._apply_count += 1
        return np.asarray(self._matvec(v), dtype=float).reshape(self.dim)

    def to_dense(self) -> np.ndarray:
        """Dense copy for oracle checks. Does not touch the application counter."""
        if self.matrix is not None:
            return self.matrix.toarray() if scipy.sparse.issparse(self.matrix) else np.array(self.matrix)
        columns = [np.asarray(self._matvec(e), dtype=float) for e in np.eye(self.dim)]
        return np.column_stack(columns)

    def __repr__(self) -> str:
        return f"SymmetricLinearOperator(name={self.name!r}, dim={self.dim}, apply_count={self._apply_count})"


@dataclass
class SmallEigResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass
class OrthoTransform:
    """Columns of ``P`` express orthonormal basis vectors in terms of the inputs."""
    P: np.ndarray
    dropped_inputs: List[int] = field(default_factory=list)
    dropped_modes: List[int] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.P.shape[1]


def dot(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionError(f"cannot take dot of shapes {x.shape} and {y.shape}")
    return float(np.dot(x, y))


def norm(x: np.ndarray) -> float:
    return float(np.sqrt(dot(x, x)))


def combine(vectors: Sequence[np.ndarray], coefficients: Sequence[float]) -> np.ndarray:
    result = np.zeros_like(np.asarray(vectors[0], dtype=float))
    for vector, coefficient in zip(vectors, coefficients):
        if coefficient != 0.0:
            result += coefficient * vector
    return result


def rayleigh_residual(x: np.ndarray, hx: np.ndarray) -> Tuple[float, np.ndarray]:
    """Rayleigh quotient E and residual z' = (Hx - E x) / (x.x)."""
    nxx = dot(x, x)
    if nxx == 0.0:
        raise ContractError("Rayleigh quotient of a zero vector")
    energy = dot(x, hx) / nxx
    return energy, (hx - energy * x) / nxx


def small_symmetric_eig(matrix: np.ndarray) -> SmallEigResult:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ContractError(f"subspace matrix must be square, got shape {matrix.shape}")
    m = matrix.shape[0]
    if not 1 <= m <= SMALL_EIG_MAX_DIM:
        raise ContractError(f"subspace dimension {m} outside 1..{SMALL_EIG_MAX_DIM}")
    asymmetry = float(np.max(np.abs(matrix - matrix.T)))
    scale = max(1.0, float(np.max(np.abs(matrix))))
    if asymmetry > SYMMETRY_TOL * scale:
        raise ContractError(f"subspace matrix asymmetric by {asymmetry:.3e}")
    values, vectors = scipy.linalg.eigh(0.5 * (matrix + matrix.T))
    return SmallEigResult(eigenvalues=values, eigenvectors=vectors)


def _projected_norm2(n_new: float, removed: float, lindep: float, index: int) -> float:
    remaining = n_new - removed
    if not remaining > lindep * n_new:
        raise RankDeficiencyError(index)
    return remaining


def gram_schmidt_coeffs(x: np.ndarray, y: Optional[np.ndarray], z: np.ndarray,
                        lindep: float = 1e-14) -> OrthoTransform:
    """
    Lower-triangular coefficients turning (x, [y,] z) into an orthonormal set.

    Only pairwise inner products are evaluated. With y absent the result is 2x2
    over (x, z); otherwise 3x3 over (x, y, z). Raises RankDeficiencyError with
    the index of the first input whose projected squared norm falls to
    lindep times its own squared norm or below.
    """
    nxx = dot(x, x)
    if nxx == 0.0:
        raise RankDeficiencyError(0, "x must be nonzero")
    nzz = dot(z, z)
    nxz = dot(x, z)
    a_x = 1.0 / np.sqrt(nxx)

    if y is None:
        rest = _projected_norm2(nzz, nxz * nxz / nxx, lindep, 1)
        b_z = 1.0 / np.sqrt(rest)
        b_x = -(nxz / nxx) * b_z
        return OrthoTransform(P=np.array([[a_x, b_x],
                                          [0.0, b_z]]))

    nyy = dot(y, y)
    nxy = dot(x, y)
    nyz = dot(y, z)

    rest_y = _projected_norm2(nyy, nxy * nxy / nxx, lindep, 1)
    b_y = 1.0 / np.sqrt(rest_y)
    b_x = -(nxy / nxx) * b_y

    p = b_x * nxz + b_y * nyz
    rest_z = _projected_norm2(nzz, nxz * nxz / nxx + p * p, lindep, 2)
    c_z = 1.0 / np.sqrt(rest_z)
    c_y = -p * b_y * c_z
    c_x = -(nxz / nxx + p * b_x) * c_z

    return OrthoTransform(P=np.array([[a_x, b_x, c_x],
                                      [0.0, b_y, c_y],
                                      [0.0, 0.0, c_z]]))


def overlap_matrix(vectors: Sequence[np.ndarray]) -> np.ndarray:
    k = len(vectors)
    s = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            s[i, j] = s[j, i] = dot(vectors[i], vectors[j])
    return s


def canonical_orthogonalize(vectors: Sequence[np.ndarray], cutoff: float = 1e-14) -> OrthoTransform:
    """
    P = U s^(-1/2) over the overlap of the unit-scaled inputs, mapped back to the
    original scaling. Zero inputs and modes with eigenvalue below cutoff are dropped.
    """
    k = len(vectors)
    if k < 1:
        raise ContractError("canonical orthogonalization needs at least one vector")
    norms = np.array([norm(v) for v in vectors])
    live = [i for i in range(k) if norms[i] > 0.0]
    if not live:
        raise EmptyBasisError("all input vectors are zero")

    scaled = [vectors[i] / norms[i] for i in live]
    s_values, u = scipy.linalg.eigh(overlap_matrix(scaled))
    keep = s_values >= cutoff
    if not np.any(keep):
        raise EmptyBasisError(f"all {k} overlap modes fell below cutoff {cutoff:g}")

    p_live = u[:, keep] / np.sqrt(s_values[keep])
    p = np.zeros((k, p_live.shape[1]))
    p[live, :] = p_live / norms[live, None]

    dropped_modes = [int(i) for i in np.flatnonzero(~keep)]
    dropped_inputs = [i for i in range(k) if i not in live]
    if dropped_modes or dropped_inputs:
        logger.debug(f"canonical orthogonalization kept {p.shape[1]} of {k} directions")
    return OrthoTransform(P=p, dropped_inputs=dropped_inputs, dropped_modes=dropped_modes)


def build_subspace_matrix(vectors: Sequence[np.ndarray], images: Sequence[np.ndarray],
                          transform: OrthoTransform) -> np.ndarray:
    if len(vectors) != len(images) or len(vectors) != transform.P.shape[0]:
        raise DimensionError(f"{len(vectors)} vectors, {len(images)} images, "
                             f"transform over {transform.P.shape[0]} inputs")
    k = len(vectors)
    g = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            g[i, j] = dot(vectors[i], images[j])
    g = 0.5 * (g + g.T)
    projected = transform.P.T @ g @ transform.P
    return 0.5 * (projected + projected.T)


def symmetry_defect(op: SymmetricLinearOperator, seed: int = 0, probes: int = 3) -> float:
    """Largest relative |u.Hv - Hu.v| over random vector pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    scale = max(1.0, float(np.max(np.abs(op.diagonal))))
    for _ in range(probes):
        u = rng.standard_normal(op.dim)
        v = rng.standard_normal(op.dim)
        defect = abs(dot(u, op.apply(v)) - dot(op.apply(u), v))
        worst = max(worst, defect / (norm(u) * norm(v) * scale))
    return worst
