"""
Davidson Module

Block Davidson baseline sharing the preconditioner and the convergence test
of the SBCI solvers. All unconverged roots add a preconditioned residual per
iteration; the space collapses onto the current Ritz vectors at max_space.

Usage:
    from sbci.core.davidson import davidson_solve
    result = davidson_solve(op, pre, 4, DavidsonConfig(nroots=4))
"""

import math
from typing import List, Optional

import numpy as np
import scipy.linalg
from loguru import logger

from sbci.config import DavidsonConfig
from sbci.core.diagnostics import TraceRecord, TraceWriter, record_trace
from sbci.core.errors import ContractError, NonConvergenceError
from sbci.core.linalg import SymmetricLinearOperator, combine, dot, overlap_matrix
from sbci.core.preconditioner import GroundShiftPreconditioner, update_shift
from sbci.core.results import ConvergedEigenpair, SolveResult
from sbci.core.sbci1 import init_guess_from_diagonal


class DavidsonSolver:
    method = "davidson"

    def __init__(self, op: SymmetricLinearOperator, pre: GroundShiftPreconditioner,
                 cfg: DavidsonConfig, sink: Optional[TraceWriter] = None):
        if cfg.nroots > op.dim:
            raise ContractError(f"cannot find {cfg.nroots} roots in dimension {op.dim}")
        self.op = op
        self.pre = pre
        self.cfg = cfg
        self.sink = sink
        self.trace: List[TraceRecord] = []
        self.collapses = 0
        self.max_basis = 0
        self.max_orthonormality_defect = 0.0

    def _orthonormalize_into(self, basis: List[np.ndarray], t: np.ndarray) -> Optional[np.ndarray]:
        before = dot(t, t)
        if before == 0.0:
            return None
        for _ in range(2):
            for b in basis:
                t = t - dot(b, t) * b
        after = dot(t, t)
        if not after > self.cfg.lindep * before:
            return None
        return t / math.sqrt(after)

    def _check_orthonormality(self, basis: List[np.ndarray]) -> None:
        defect = float(np.max(np.abs(overlap_matrix(basis) - np.eye(len(basis)))))
        self.max_orthonormality_defect = max(self.max_orthonormality_defect, defect)

    def solve(self) -> SolveResult:
        nroots = self.cfg.nroots
        start = self.op.apply_count
        guess = init_guess_from_diagonal(self.op, nroots, self.cfg.lindep)
        result = SolveResult(method=self.method, eigenpairs=[], init_matvecs=self.op.apply_count - start)

        basis = list(guess.vectors)
        images = list(guess.images)
        previous = np.array(guess.energies[:nroots], dtype=float)
        residual_norms = np.full(nroots, math.inf)
        iteration = 0

        for iteration in range(1, self.cfg.max_iter + 1):
            m = len(basis)
            self.max_basis = max(self.max_basis, m)
            g = np.array([[dot(basis[i], images[j]) for j in range(m)] for i in range(m)])
            theta, s = scipy.linalg.eigh(0.5 * (g + g.T))
            self.pre = update_shift(self.pre, theta[0])

            ritz = [combine(basis, s[:, k]) for k in range(nroots)]
            ritz_images = [combine(images, s[:, k]) for k in range(nroots)]
            residuals = [ritz_images[k] - theta[k] * ritz[k] for k in range(nroots)]
            residual_norms = np.array([math.sqrt(dot(r, r)) for r in residuals])
            d_energy = np.abs(theta[:nroots] - previous)
            converged = (d_energy < self.cfg.eps0) & (residual_norms < self.cfg.r0)
            previous = theta[:nroots].copy()

            for k in range(nroots):
                record = TraceRecord(
                    method=self.method, state=k, t=iteration - 1, segment=self.collapses,
                    status="converged" if converged[k] else "continue",
                    E=float(theta[k]), dE=float(d_energy[k]), res_norm=float(residual_norms[k]),
                    x_norm=1.0, matvecs=self.op.apply_count,
                )
                self.trace.append(record)
                record_trace(self.sink, record)
            logger.debug(f"[davidson] iter={iteration} space={m} E={np.round(theta[:nroots], 10).tolist()} "
                         f"max|r|={residual_norms.max():.2e}")

            if converged.all():
                for k in range(nroots):
                    result.eigenpairs.append(ConvergedEigenpair(
                        state=k, energy=float(theta[k]), vector=ritz[k], iterations=iteration,
                        restarts=self.collapses, residual_norm=float(residual_norms[k]),
                        image=ritz_images[k],
                    ))
                result.trace = self.trace
                result.peak_vectors = 2 * self.max_basis + nroots
                logger.info(f"Davidson converged {nroots} roots in {iteration} iterations "
                            f"({self.collapses} collapses)")
                return result

            pending = [k for k in range(nroots) if not converged[k]]
            if m + len(pending) > self.cfg.max_space:
                basis, images = list(ritz), list(ritz_images)
                self.collapses += 1
                logger.debug(f"[davidson] collapsed space from {m} to {nroots}")

            added = 0
            for k in pending:
                t = self._orthonormalize_into(basis, self.pre.apply(residuals[k]))
                if t is None:
                    continue
                basis.append(t)
                images.append(self.op.apply(t))
                added += 1
            if self.cfg.check_orthonormality:
                self._check_orthonormality(basis)
            if added == 0 and not (residual_norms[pending] < self.cfg.r0).all():
                logger.error("Davidson expansion produced no new direction")
                break

        result.trace = self.trace
        worst = int(np.argmax(residual_norms))
        raise NonConvergenceError(state=worst, energy=float(previous[worst]),
                                  residual=float(residual_norms[worst]), iterations=iteration,
                                  residuals=residual_norms.tolist(), method=self.method)


def davidson_solve(op: SymmetricLinearOperator, pre: GroundShiftPreconditioner, nroots: int,
                   cfg: DavidsonConfig, sink: Optional[TraceWriter] = None) -> SolveResult:
    if cfg.nroots != nroots:
        raise ContractError(f"config is set up for {cfg.nroots} roots, asked for {nroots}")
    return DavidsonSolver(op, pre, cfg, sink).solve()
