"""
SBCI1 Module

Single-state solver. Each iteration spends one operator application on the
preconditioned residual z, solves a 3x3 Rayleigh-Ritz problem over {x, y, z}
and moves the momentum y and position x so that x lands on k times the lowest
Ritz vector. All images Hx, Hy are kept by linear recombination.

States are solved from 0 upward; converged vectors enter the deflation set and
the next state starts from the lowest Ritz vector over the second Ritz vector
of the final subspace and the deflated initial guesses.

Usage:
    from sbci.core.sbci1 import solve_n_states_sbci1
    result = solve_n_states_sbci1(op, 4, solver_config("tight"))
    print(result.energies)
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg
from loguru import logger

from sbci.config import SolverConfig
from sbci.core.diagnostics import TraceRecord, TraceWriter, record_trace
from sbci.core.errors import ContractError, NonConvergenceError, RankDeficiencyError
from sbci.core.linalg import (
    SymmetricLinearOperator, build_subspace_matrix, canonical_orthogonalize, combine, dot,
    gram_schmidt_coeffs, norm, rayleigh_residual, small_symmetric_eig,
)
from sbci.core.preconditioner import (
    DeflationSet, GroundShiftPreconditioner, precondition_and_deflate, update_shift,
)
from sbci.core.results import (
    ConvergedEigenpair, RestartReason, Seed, SolveResult, StepOutcome, SubspaceSnapshot,
    sorted_pairs,
)


DENOMINATOR_GUARD = 1e-14
SBCI1_VECTORS = 7
SEED_OVERLAP_CUTOFF = 1e-10


@dataclass
class InitialGuess:
    indices: List[int]
    vectors: List[np.ndarray]
    images: List[np.ndarray]
    energies: np.ndarray

    def seed(self, k: int) -> Seed:
        return Seed(self.vectors[k], self.images[k], float(self.energies[k]))

    def seeds_from(self, k: int) -> List[Seed]:
        order = list(range(k, len(self.vectors))) + list(range(k))
        return [self.seed(i) for i in order]


@dataclass
class Sbci1State:
    alpha: int
    x: np.ndarray
    hx: np.ndarray
    zres: np.ndarray
    energy: float
    y: Optional[np.ndarray] = None
    hy: Optional[np.ndarray] = None
    t: int = 0
    b_prev: float = 1.0
    c_prev: float = 0.0
    k: float = 1.0
    restart_count: int = 0
    d_energy: float = 0.0
    res_norm: float = math.inf
    kinetic: Optional[float] = None
    subspace: Optional[SubspaceSnapshot] = None

    @property
    def x_norm(self) -> float:
        return norm(self.x)


@dataclass
class StateSolution:
    eigenpair: ConvergedEigenpair
    next_seed: Optional[Seed] = None
    trace: List[TraceRecord] = field(default_factory=list)


def init_guess_from_diagonal(op: SymmetricLinearOperator, n: int, lindep: float = 1e-14) -> InitialGuess:
    """Unit vectors at the n smallest diagonal entries, rotated by Rayleigh-Ritz in their span."""
    if n < 1 or n > op.dim:
        raise ContractError(f"cannot seed {n} states in a space of dimension {op.dim}")

    indices = [int(i) for i in np.argsort(op.diagonal, kind="stable")[:n]]
    basis: List[np.ndarray] = []
    kept: List[int] = []
    for i in indices:
        e_i = np.zeros(op.dim)
        e_i[i] = 1.0
        for b in basis:
            e_i -= dot(b, e_i) * b
        if dot(e_i, e_i) <= lindep:
            logger.debug(f"seed determinant {i} excluded as linearly dependent")
            continue
        basis.append(e_i / norm(e_i))
        kept.append(i)

    images = [op.apply(v) for v in basis]
    m = len(basis)
    g = np.array([[dot(basis[i], images[j]) for j in range(m)] for i in range(m)])
    energies, u = scipy.linalg.eigh(0.5 * (g + g.T))

    vectors = [sum(u[i, a] * basis[i] for i in range(m)) for a in range(m)]
    rotated_images = [sum(u[i, a] * images[i] for i in range(m)) for a in range(m)]
    logger.debug(f"Initial guess from determinants {kept}: energies {np.round(energies, 8).tolist()}")
    return InitialGuess(indices=kept, vectors=vectors, images=rotated_images, energies=energies)


def deflated_seed(candidates: Sequence[Optional[Seed]], defl: DeflationSet, lindep: float) -> Seed:
    """First candidate that survives projection against the deflation set, normalized."""
    for candidate in candidates:
        if candidate is None:
            continue
        before = dot(candidate.vector, candidate.vector)
        vector, image = defl.project_with_image(candidate.vector, candidate.image)
        after = dot(vector, vector)
        if not after > lindep * before:
            logger.warning("Seed collapsed against the converged states, trying the next one")
            continue
        scale = 1.0 / math.sqrt(after)
        vector, image = vector * scale, image * scale
        return Seed(vector, image, dot(vector, image))
    raise ContractError("every seed candidate is linearly dependent on the converged states")


def ritz_seed(candidates: Sequence[Optional[Seed]], defl: DeflationSet, lindep: float) -> Seed:
    """
    Lowest Ritz vector over the candidates after projection against the deflation set.

    Candidates whose projected squared norm falls to lindep times their own are
    skipped; the survivors are mixed through their cached images, so no operator
    application is spent. Raises ContractError when nothing survives.
    """
    vectors: List[np.ndarray] = []
    images: List[np.ndarray] = []
    for position, candidate in enumerate(candidates):
        if candidate is None:
            continue
        before = dot(candidate.vector, candidate.vector)
        vector, image = defl.project_with_image(candidate.vector, candidate.image)
        after = dot(vector, vector)
        if not after > lindep * before:
            if position == 0:
                logger.warning("Ritz seed collapsed against the converged states, mixing the initial guesses")
            continue
        scale = 1.0 / math.sqrt(after)
        vectors.append(vector * scale)
        images.append(image * scale)
    if not vectors:
        raise ContractError("every seed candidate is linearly dependent on the converged states")

    transform = canonical_orthogonalize(vectors, max(lindep, SEED_OVERLAP_CUTOFF))
    energies, u = scipy.linalg.eigh(build_subspace_matrix(vectors, images, transform))
    coefficients = transform.P @ u[:, 0]
    vector, image = combine(vectors, coefficients), combine(images, coefficients)
    scale = 1.0 / norm(vector)
    logger.debug(f"Next seed mixed from {len(vectors)} candidates: E={energies[0]:.10f}")
    return Seed(vector * scale, image * scale, float(energies[0]))


def check_restart_sbci1(state: Sbci1State, cfg: SolverConfig, d_energy: float,
                        res_norm: float) -> Optional[RestartReason]:
    if state.alpha > 0 and abs(state.b_prev) < cfg.b_th and d_energy < cfg.eps1:
        return RestartReason.STALL_SMALL_B
    x_norm = state.x_norm
    if x_norm < cfg.x_th1 or x_norm > cfg.x_th2:
        return RestartReason.NORM_OUT_OF_RANGE
    if res_norm > cfg.r1 and state.t > 0:
        return RestartReason.RESIDUAL_BLOWUP
    if state.t + 1 >= cfg.max_cycle:
        return RestartReason.MAX_CYCLE
    return None


class Sbci1Solver:
    method = "sbci1"

    def __init__(self, op: SymmetricLinearOperator, cfg: SolverConfig,
                 pre: GroundShiftPreconditioner, defl: DeflationSet, alpha: int = 0,
                 sink: Optional[TraceWriter] = None, follow_shift: Optional[bool] = None):
        self.op = op
        self.cfg = cfg
        self.pre = pre
        self.defl = defl
        self.alpha = alpha
        self.sink = sink
        self.follow_shift = alpha == 0 if follow_shift is None else follow_shift
        self.trace: List[TraceRecord] = []
        self.refresh_matvecs = 0

    def initial_state(self, seed: Seed) -> Sbci1State:
        x, hx = self.defl.project_with_image(seed.vector, seed.image)
        x_norm = norm(x)
        if x_norm == 0.0:
            raise ContractError(f"state {self.alpha}: seed vector vanishes after deflation")
        x, hx = x / x_norm, hx / x_norm
        energy, zres = rayleigh_residual(x, hx)
        return Sbci1State(alpha=self.alpha, x=x, hx=hx, zres=zres, energy=energy,
                          res_norm=norm(zres))

    def first_step(self, state: Sbci1State) -> StepOutcome:
        """Two-dimensional step over {x, z} with y = 0 and b = 1."""
        z = precondition_and_deflate(state.zres, self.pre, self.defl)
        if norm(z) < self.cfg.lindep * state.x_norm:
            return self._vanishing_residual(state)
        hz = self.op.apply(z)
        return self._two_vector_update(state, z, hz)

    def step(self, state: Sbci1State) -> StepOutcome:
        if state.y is None:
            return self.first_step(state)

        z = precondition_and_deflate(state.zres, self.pre, self.defl)
        if norm(z) < self.cfg.lindep * state.x_norm:
            return self._vanishing_residual(state)
        hz = self.op.apply(z)

        x, y = state.x, state.y
        try:
            transform = gram_schmidt_coeffs(x, y, z, self.cfg.lindep)
        except RankDeficiencyError as e:
            if e.index == 1:
                logger.debug(f"state {state.alpha}: momentum dependent on x, taking the 2-D step")
                return self._two_vector_update(state, z, hz)
            return self._stall(state)

        vectors, images = [x, y, z], [state.hx, state.hy, hz]
        eig = small_symmetric_eig(build_subspace_matrix(vectors, images, transform))
        coefficients = transform.P @ eig.eigenvectors
        w_x, w_y, w_z = coefficients[:, 0]
        if abs(w_x) * state.x_norm < DENOMINATOR_GUARD or abs(w_y) * norm(y) < DENOMINATOR_GUARD:
            return self._stall(state)

        k = 1.0 / w_x
        b = w_y / w_x
        c = -w_z / w_y
        y_new = y - c * z
        hy_new = state.hy - c * hz
        x_new = x + b * y_new
        hx_new = state.hx + b * hy_new
        snapshot = SubspaceSnapshot(vectors, images, coefficients, eig.eigenvalues)
        return self._accept(state, x_new, hx_new, y_new, hy_new, k, b, c, snapshot)

    def _two_vector_update(self, state: Sbci1State, z: np.ndarray, hz: np.ndarray) -> StepOutcome:
        x = state.x
        try:
            transform = gram_schmidt_coeffs(x, None, z, self.cfg.lindep)
        except RankDeficiencyError:
            return self._stall(state)

        vectors, images = [x, z], [state.hx, hz]
        eig = small_symmetric_eig(build_subspace_matrix(vectors, images, transform))
        coefficients = transform.P @ eig.eigenvectors
        w_x, w_z = coefficients[:, 0]
        if abs(w_x) * state.x_norm < DENOMINATOR_GUARD:
            return self._stall(state)

        k = 1.0 / w_x
        c = -w_z / w_x
        y_new = -c * z
        hy_new = -c * hz
        x_new = x + y_new
        hx_new = state.hx + hy_new
        snapshot = SubspaceSnapshot(vectors, images, coefficients, eig.eigenvalues)
        return self._accept(state, x_new, hx_new, y_new, hy_new, k, 1.0, c, snapshot)

    def _accept(self, state: Sbci1State, x_new, hx_new, y_new, hy_new,
                k: float, b: float, c: float, snapshot: SubspaceSnapshot) -> StepOutcome:
        energy = float(snapshot.values[0])
        zres = (hx_new - energy * x_new) / k
        d_energy = abs(energy - state.energy)
        res_norm = norm(zres)

        state.x, state.hx, state.y, state.hy, state.zres = x_new, hx_new, y_new, hy_new, zres
        state.energy = energy
        state.k, state.b_prev, state.c_prev = k, b, c
        state.d_energy, state.res_norm = d_energy, res_norm
        state.kinetic = self.pre.kinetic(y_new)
        state.subspace = snapshot

        if d_energy < self.cfg.eps0 and res_norm < self.cfg.r0:
            x_norm = norm(x_new)
            return StepOutcome.converged(energy, x_new / x_norm, hx_new / x_norm)
        reason = check_restart_sbci1(state, self.cfg, d_energy, res_norm)
        return StepOutcome.restart(reason) if reason else StepOutcome.proceed()

    def _vanishing_residual(self, state: Sbci1State) -> StepOutcome:
        state.d_energy, state.res_norm, state.kinetic = 0.0, norm(state.zres), None
        x_norm = state.x_norm
        return StepOutcome.converged(state.energy, state.x / x_norm, state.hx / x_norm)

    def _stall(self, state: Sbci1State) -> StepOutcome:
        state.d_energy, state.res_norm, state.kinetic = 0.0, norm(state.zres), None
        return StepOutcome.restart(RestartReason.STALL_SMALL_B)

    def _restart(self, state: Sbci1State) -> None:
        x_norm = state.x_norm
        sign = math.copysign(1.0, state.k)
        state.x = state.x / x_norm
        state.hx = state.hx / x_norm
        state.zres = sign * state.zres
        state.restart_count += 1
        if state.restart_count % self.cfg.refresh_every == 0:
            state.hx = self.op.apply(state.x)
            state.zres = state.hx - state.energy * state.x
            self.refresh_matvecs += 1
        state.y = state.hy = None
        state.t = 0
        state.k, state.b_prev, state.c_prev = 1.0, 1.0, 0.0

    def _emit(self, state: Sbci1State, outcome: StepOutcome, t: int, segment: int) -> None:
        updated = state.kinetic is not None
        record = TraceRecord(
            method=self.method, state=state.alpha, t=t, segment=segment,
            status=outcome.status.value,
            E=state.energy, dE=state.d_energy, res_norm=state.res_norm,
            b=state.b_prev if updated else None,
            c=state.c_prev if updated else None,
            x_norm=state.x_norm, kinetic=state.kinetic, matvecs=self.op.apply_count,
            restart_reason=outcome.reason.value if outcome.reason else None,
        )
        self.trace.append(record)
        record_trace(self.sink, record)

    def solve_state(self, seed: Seed) -> StateSolution:
        state = self.initial_state(seed)
        best_energy, best_residual = state.energy, state.res_norm

        for iteration in range(1, self.cfg.t_max + 1):
            if self.follow_shift:
                self.pre = update_shift(self.pre, state.energy)
            t, segment = state.t, state.restart_count
            outcome = self.step(state)
            self._emit(state, outcome, t, segment)
            logger.debug(f"[sbci1 {state.alpha}] t={t} E={state.energy:.12f} "
                         f"dE={state.d_energy:.2e} |z'|={state.res_norm:.2e}")
            if state.res_norm < best_residual:
                best_energy, best_residual = state.energy, state.res_norm

            if outcome.is_converged:
                pair = ConvergedEigenpair(state=state.alpha, energy=outcome.energy, vector=outcome.vector,
                                          iterations=iteration, restarts=state.restart_count,
                                          residual_norm=state.res_norm, image=outcome.image)
                logger.info(f"State {state.alpha} converged: E={pair.energy:.12f} "
                            f"({iteration} iterations, {state.restart_count} restarts)")
                return StateSolution(pair, self._next_seed(state), self.trace)

            if outcome.is_restart:
                logger.info(f"[sbci1 {state.alpha}] restart at t={t}: {outcome.reason.value}")
                self._restart(state)
            else:
                state.t += 1

        logger.error(f"State {state.alpha} did not converge within {self.cfg.t_max} iterations")
        raise NonConvergenceError(state=state.alpha, energy=best_energy, residual=best_residual,
                                  iterations=self.cfg.t_max, method=self.method)

    @staticmethod
    def _next_seed(state: Sbci1State) -> Optional[Seed]:
        snapshot = state.subspace
        if snapshot is None or snapshot.size < 2:
            return None
        return Seed(snapshot.ritz_vector(1), snapshot.ritz_image(1), float(snapshot.values[1]))


def solve_n_states_sbci1(op: SymmetricLinearOperator, n: int, cfg: SolverConfig,
                         sink: Optional[TraceWriter] = None) -> SolveResult:
    cfg.validate()
    start = op.apply_count
    guess = init_guess_from_diagonal(op, n, cfg.lindep)
    init_matvecs = op.apply_count - start

    pre = GroundShiftPreconditioner(op.diagonal, float(guess.energies[0]), cfg.clamp_delta)
    defl = DeflationSet()
    result = SolveResult(method="sbci1", eigenpairs=[], init_matvecs=init_matvecs)
    seed = guess.seed(0)

    for alpha in range(n):
        solver = Sbci1Solver(op, cfg, pre, defl, alpha=alpha, sink=sink)
        try:
            solution = solver.solve_state(seed)
        finally:
            result.trace.extend(solver.trace)
            result.refresh_matvecs += solver.refresh_matvecs
        pair = solution.eigenpair
        result.eigenpairs.append(pair)
        result.peak_vectors = max(result.peak_vectors, SBCI1_VECTORS + len(defl))

        if alpha == 0:
            pre = update_shift(solver.pre, pair.energy)
        defl = defl.extended(pair.vector, pair.energy, pair.image)
        if alpha + 1 < n:
            seed = ritz_seed([solution.next_seed] + guess.seeds_from(alpha + 1), defl, cfg.lindep)

    result.eigenpairs = sorted_pairs(result.eigenpairs)
    return result
