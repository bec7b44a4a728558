"""
FCI Module

Determinant full-CI backend in a fixed S_z sector. Determinants are pairs of
alpha/beta occupation bitmasks, indexed alpha-major (i_alpha * n_beta_strings
+ i_beta). The sigma vector uses the spin-summed excitation operators E_pq:

    H = sum_pq k_pq E_pq + 1/2 sum_pqrs (pq|rs) E_pq E_rs + e_core
    k_pq = h_pq - 1/2 sum_r (pr|rq)

with E_pq tabulated per spin as sparse single-excitation matrices.

Usage:
    from sbci.core.fci import as_operator, enumerate_basis
    op = as_operator(problem)
    energies = solve_n_states_sbci1(op, 3, cfg).energies
"""

from dataclasses import dataclass, replace
from itertools import combinations
from math import comb
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse
from loguru import logger

from sbci.config import FCI_CONFIG
from sbci.core.errors import ContractError, DimensionError, SizeGuardError
from sbci.core.linalg import SymmetricLinearOperator, dot


@dataclass(frozen=True, eq=False)
class FciProblem:
    norb: int
    nelec: int
    ms2: int
    e_core: float
    h1: np.ndarray
    eri: np.ndarray

    @property
    def n_alpha(self) -> int:
        return self._spin_counts()[0]

    @property
    def n_beta(self) -> int:
        return self._spin_counts()[1]

    def _spin_counts(self) -> Tuple[int, int]:
        if (self.nelec + self.ms2) % 2 != 0:
            raise ContractError(f"NELEC={self.nelec} and MS2={self.ms2} have different parity")
        n_alpha = (self.nelec + self.ms2) // 2
        n_beta = (self.nelec - self.ms2) // 2
        if not (0 <= n_beta <= self.norb and 0 <= n_alpha <= self.norb):
            raise ContractError(f"{n_alpha} alpha / {n_beta} beta electrons do not fit in {self.norb} orbitals")
        return n_alpha, n_beta

    def with_ms2(self, ms2: int) -> "FciProblem":
        return replace(self, ms2=ms2)


def _popcount(value: int) -> int:
    return bin(value).count("1")


def _occupied(string: int, norb: int) -> List[int]:
    return [i for i in range(norb) if string >> i & 1]


def make_strings(norb: int, n: int) -> List[int]:
    return sorted(sum(1 << i for i in occ) for occ in combinations(range(norb), n))


def count_determinants(norb: int, n_alpha: int, n_beta: int) -> int:
    return comb(norb, n_alpha) * comb(norb, n_beta)


@dataclass(frozen=True, eq=False)
class DeterminantBasis:
    norb: int
    n_alpha: int
    n_beta: int
    alpha_strings: Tuple[int, ...]
    beta_strings: Tuple[int, ...]

    @property
    def n_det(self) -> int:
        return len(self.alpha_strings) * len(self.beta_strings)

    @property
    def shape(self) -> Tuple[int, int]:
        return len(self.alpha_strings), len(self.beta_strings)

    def index(self, i_alpha: int, i_beta: int) -> int:
        return i_alpha * len(self.beta_strings) + i_beta

    def occupations(self, strings: Tuple[int, ...]) -> np.ndarray:
        return np.array([[s >> i & 1 for i in range(self.norb)] for s in strings], dtype=float)


def enumerate_basis(norb: int, n_alpha: int, n_beta: int) -> DeterminantBasis:
    if not (0 <= n_alpha <= norb and 0 <= n_beta <= norb):
        raise ContractError(f"cannot place {n_alpha}/{n_beta} electrons in {norb} orbitals")
    return DeterminantBasis(norb, n_alpha, n_beta,
                            tuple(make_strings(norb, n_alpha)), tuple(make_strings(norb, n_beta)))


def _excitation_tables(strings: Tuple[int, ...], norb: int):
    """
    Sparse stacks of <I|a+_p a_q|J> over all (p, q): a vertical stack
    (block pq in rows) and a horizontal stack (block pq in columns).
    """
    n = len(strings)
    index = {s: i for i, s in enumerate(strings)}
    blocks, targets, sources, signs = [], [], [], []
    for j, string in enumerate(strings):
        for q in _occupied(string, norb):
            removed = string ^ (1 << q)
            parity_q = _popcount(string & ((1 << q) - 1))
            for p in range(norb):
                if removed >> p & 1:
                    continue
                parity_p = _popcount(removed & ((1 << p) - 1))
                blocks.append(p * norb + q)
                targets.append(index[removed | (1 << p)])
                sources.append(j)
                signs.append(-1.0 if (parity_q + parity_p) % 2 else 1.0)
    blocks = np.array(blocks, dtype=np.int64)
    targets = np.array(targets, dtype=np.int64)
    sources = np.array(sources, dtype=np.int64)
    values = np.array(signs, dtype=float)
    n2 = norb * norb
    vertical = scipy.sparse.csr_matrix((values, (blocks * n + targets, sources)), shape=(n2 * n, n))
    horizontal = scipy.sparse.csr_matrix((values, (targets, blocks * n + sources)), shape=(n, n2 * n))
    return vertical, horizontal


class FciSigma:
    """Callable sigma builder holding the excitation tables for one problem/basis pair."""

    def __init__(self, problem: FciProblem, basis: DeterminantBasis):
        if basis.norb != problem.norb:
            raise DimensionError(f"basis has {basis.norb} orbitals, problem has {problem.norb}")
        self.problem = problem
        self.basis = basis
        norb = problem.norb
        self.n2 = norb * norb
        self.ea_v, self.ea_h = _excitation_tables(basis.alpha_strings, norb)
        self.eb_v, self.eb_h = _excitation_tables(basis.beta_strings, norb)
        self.eri2 = problem.eri.reshape(self.n2, self.n2)
        self.k = (problem.h1 - 0.5 * np.einsum("prrq->pq", problem.eri)).reshape(self.n2)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        n_a, n_b = self.basis.shape
        x = np.asarray(x, dtype=float)
        if x.shape != (n_a * n_b,):
            raise DimensionError(f"CI vector has shape {x.shape}, basis has {n_a * n_b} determinants")
        c = x.reshape(n_a, n_b)
        n2 = self.n2

        d = np.asarray(self.ea_v @ c).reshape(n2, n_a, n_b)
        d += np.asarray(self.eb_v @ c.T).reshape(n2, n_b, n_a).transpose(0, 2, 1)
        w = 0.5 * (self.eri2 @ d.reshape(n2, -1)).reshape(n2, n_a, n_b)
        w += self.k[:, None, None] * c[None, :, :]

        sigma = np.asarray(self.ea_h @ w.reshape(n2 * n_a, n_b))
        sigma += np.asarray(self.eb_h @ w.transpose(0, 2, 1).reshape(n2 * n_b, n_a)).T
        sigma += self.problem.e_core * c
        return sigma.reshape(-1)


def sigma_apply(problem: FciProblem, basis: DeterminantBasis, x: np.ndarray) -> np.ndarray:
    return FciSigma(problem, basis)(x)


def hamiltonian_diagonal(problem: FciProblem, basis: DeterminantBasis) -> np.ndarray:
    occ_a = basis.occupations(basis.alpha_strings)
    occ_b = basis.occupations(basis.beta_strings)
    idx = np.arange(problem.norb)
    h_diag = problem.h1[idx, idx]
    coulomb = problem.eri[idx[:, None], idx[:, None], idx[None, :], idx[None, :]]
    exchange = problem.eri[idx[:, None], idx[None, :], idx[None, :], idx[:, None]]
    same_spin = coulomb - exchange

    diag_a = occ_a @ h_diag + 0.5 * np.einsum("ai,ij,aj->a", occ_a, same_spin, occ_a)
    diag_b = occ_b @ h_diag + 0.5 * np.einsum("bi,ij,bj->b", occ_b, same_spin, occ_b)
    opposite = occ_a @ coulomb @ occ_b.T
    return (problem.e_core + diag_a[:, None] + diag_b[None, :] + opposite).reshape(-1)


def _spin_raise_maps(strings: Tuple[int, ...], targets: Dict[int, int], orbital: int,
                     occupied: bool) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    sources, dests, signs = [], [], []
    bit = 1 << orbital
    for i, string in enumerate(strings):
        if bool(string & bit) != occupied:
            continue
        sources.append(i)
        dests.append(targets[string ^ bit])
        signs.append(-1.0 if _popcount(string & (bit - 1)) % 2 else 1.0)
    return np.array(sources, dtype=np.int64), np.array(dests, dtype=np.int64), np.array(signs)


def spin_squared(basis: DeterminantBasis, x: np.ndarray) -> float:
    """<S^2> = |S+ x|^2 / |x|^2 + Sz (Sz + 1), with S+ = sum_p a+_{p alpha} a_{p beta}."""
    x = np.asarray(x, dtype=float)
    nrm2 = dot(x, x)
    if nrm2 == 0.0:
        raise ContractError("spin expectation of a zero vector")
    sz = 0.5 * (basis.n_alpha - basis.n_beta)
    if basis.n_beta == 0 or basis.n_alpha == basis.norb:
        return sz * (sz + 1.0)

    c = x.reshape(basis.shape)
    raised_alpha = make_strings(basis.norb, basis.n_alpha + 1)
    lowered_beta = make_strings(basis.norb, basis.n_beta - 1)
    alpha_index = {s: i for i, s in enumerate(raised_alpha)}
    beta_index = {s: i for i, s in enumerate(lowered_beta)}
    raised = np.zeros((len(raised_alpha), len(lowered_beta)))

    for p in range(basis.norb):
        src_a, dst_a, sign_a = _spin_raise_maps(basis.alpha_strings, alpha_index, p, occupied=False)
        src_b, dst_b, sign_b = _spin_raise_maps(basis.beta_strings, beta_index, p, occupied=True)
        if src_a.size == 0 or src_b.size == 0:
            continue
        block = c[np.ix_(src_a, src_b)] * sign_a[:, None] * sign_b[None, :]
        raised[np.ix_(dst_a, dst_b)] += block

    return float(np.sum(raised * raised) / nrm2 + sz * (sz + 1.0))


def as_operator(problem: FciProblem, basis: Optional[DeterminantBasis] = None,
                max_det: int = FCI_CONFIG.max_det, allow_large: bool = False) -> SymmetricLinearOperator:
    n_alpha, n_beta = problem.n_alpha, problem.n_beta
    n_det = count_determinants(problem.norb, n_alpha, n_beta)
    if n_det > max_det and not allow_large:
        raise SizeGuardError(n_det, max_det)
    if basis is None:
        basis = enumerate_basis(problem.norb, n_alpha, n_beta)
    logger.info(f"FCI space: {problem.norb} orbitals, {n_alpha} alpha / {n_beta} beta, {n_det:,} determinants")
    sigma = FciSigma(problem, basis)
    return SymmetricLinearOperator(basis.n_det, sigma, hamiltonian_diagonal(problem, basis), name="fci")
