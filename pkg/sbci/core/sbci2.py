"""
SBCI2 Module

Pair-state solver: states alpha and alpha+1 move together through a shared
Rayleigh-Ritz problem over {xA, xB, yA, yB, zA, zB}. Only the lower state is
tested for convergence; the upper one is carried into the next pair as its
lower seed. The last state of a ladder is finished with SBCI1.

Usage:
    from sbci.core.sbci2 import solve_n_states_sbci2
    result = solve_n_states_sbci2(op, 4, solver_config("tight"))
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger

from sbci.config import SolverConfig
from sbci.core.diagnostics import TraceRecord, TraceWriter, record_trace
from sbci.core.errors import ContractError, EmptyBasisError, NonConvergenceError
from sbci.core.linalg import (
    SymmetricLinearOperator, build_subspace_matrix, canonical_orthogonalize, dot, norm,
    rayleigh_residual, small_symmetric_eig,
)
from sbci.core.preconditioner import (
    DeflationSet, GroundShiftPreconditioner, precondition_and_deflate, update_shift,
)
from sbci.core.results import (
    ConvergedEigenpair, RestartReason, Seed, SolveResult, StepOutcome, SubspaceSnapshot,
    sorted_pairs,
)
from sbci.core.sbci1 import (
    DENOMINATOR_GUARD, SBCI1_VECTORS, Sbci1Solver, deflated_seed, init_guess_from_diagonal,
    ritz_seed, solve_n_states_sbci1,
)


SBCI2_VECTORS = 14


@dataclass
class PairCoefficients:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @classmethod
    def identity(cls) -> "PairCoefficients":
        return cls(A=np.zeros((2, 2)), B=np.eye(2), C=np.zeros((2, 2)))


@dataclass
class Sbci2State:
    alpha: int
    xa: np.ndarray
    xb: np.ndarray
    hxa: np.ndarray
    hxb: np.ndarray
    zres_a: np.ndarray
    zres_b: np.ndarray
    ea: float
    eb: float
    ya: Optional[np.ndarray] = None
    yb: Optional[np.ndarray] = None
    hya: Optional[np.ndarray] = None
    hyb: Optional[np.ndarray] = None
    t: int = 0
    coeffs: PairCoefficients = field(default_factory=PairCoefficients.identity)
    k0: float = 1.0
    k1: float = 1.0
    restart_count: int = 0
    d_energy: float = 0.0
    res_norm: float = math.inf
    kinetic: Optional[float] = None
    subspace: Optional[SubspaceSnapshot] = None

    @property
    def xa_norm(self) -> float:
        return norm(self.xa)

    @property
    def xb_norm(self) -> float:
        return norm(self.xb)


@dataclass
class PairSolution:
    eigenpair: ConvergedEigenpair
    carry: Seed
    trace: List[TraceRecord] = field(default_factory=list)


def init_pair(defl: DeflationSet, seed_a: Seed, seed_b: Seed, lindep: float,
              fallbacks: Sequence[Seed] = (), alpha: int = 0) -> Sbci2State:
    lower = deflated_seed([seed_a], defl, lindep)
    a, ha = lower.vector, lower.image

    for candidate in [seed_b, *fallbacks]:
        before = dot(candidate.vector, candidate.vector)
        v, hv = defl.project_with_image(candidate.vector, candidate.image)
        for _ in range(2):
            overlap = dot(a, v)
            v, hv = v - overlap * a, hv - overlap * ha
        after = dot(v, v)
        if not after > lindep * before:
            logger.warning(f"pair {alpha}: upper seed collapsed onto the lower one, trying the next guess")
            continue
        scale = 1.0 / math.sqrt(after)
        b, hb = v * scale, hv * scale
        ea, zres_a = rayleigh_residual(a, ha)
        eb, zres_b = rayleigh_residual(b, hb)
        return Sbci2State(alpha=alpha, xa=a, xb=b, hxa=ha, hxb=hb,
                          zres_a=zres_a, zres_b=zres_b, ea=ea, eb=eb, res_norm=norm(zres_a))

    raise ContractError(f"pair {alpha}: no upper seed survives orthogonalization")


def check_restart_sbci2(state: Sbci2State, cfg: SolverConfig, d_energy: float,
                        res_norm: float) -> Optional[RestartReason]:
    b = state.coeffs.B
    if (abs(b[0, 0]) < cfg.b_th or abs(b[1, 1]) < cfg.b_th) and d_energy < cfg.eps1:
        return RestartReason.STALL_SMALL_B
    for x_norm in (state.xa_norm, state.xb_norm):
        if x_norm < cfg.x_th1 or x_norm > cfg.x_th2:
            return RestartReason.NORM_OUT_OF_RANGE
    if res_norm > cfg.r1 and state.t > 0:
        return RestartReason.RESIDUAL_BLOWUP
    if state.t + 1 >= cfg.max_cycle_pair:
        return RestartReason.MAX_CYCLE
    return None


class Sbci2Solver:
    method = "sbci2"

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

    def _residual_directions(self, state: Sbci2State):
        za = precondition_and_deflate(state.zres_a, self.pre, self.defl)
        zb = precondition_and_deflate(state.zres_b, self.pre, self.defl)
        return za, zb, self.op.apply(za), self.op.apply(zb)

    def _ritz(self, vectors, images):
        try:
            transform = canonical_orthogonalize(vectors, self.cfg.lindep)
        except EmptyBasisError:
            return None
        if transform.rank < 2:
            return None
        eig = small_symmetric_eig(build_subspace_matrix(vectors, images, transform))
        return SubspaceSnapshot(list(vectors), list(images), transform.P @ eig.eigenvectors,
                                eig.eigenvalues)

    def first_step(self, state: Sbci2State) -> StepOutcome:
        """Four-vector step over {xA, xB, zA, zB} with y = 0 and B = I."""
        za, zb, hza, hzb = self._residual_directions(state)
        vectors = [state.xa, state.xb, za, zb]
        images = [state.hxa, state.hxb, hza, hzb]
        snapshot = self._ritz(vectors, images)
        if snapshot is None:
            return self._stall(state)

        vp = snapshot.coefficients
        if abs(vp[0, 0]) < DENOMINATOR_GUARD or abs(vp[1, 1]) < DENOMINATOR_GUARD:
            return self._stall(state)

        k0 = 1.0 / vp[0, 0]
        k1 = 1.0 / vp[1, 1]
        a = np.array([[0.0, vp[1, 0] * k0],
                      [vp[0, 1] * k1, 0.0]])
        c = -np.array([[vp[2, 0] * k0, vp[3, 0] * k0],
                       [vp[2, 1] * k1, vp[3, 1] * k1]])

        ya = -c[0, 0] * za - c[0, 1] * zb + a[0, 1] * state.xb
        yb = -c[1, 0] * za - c[1, 1] * zb + a[1, 0] * state.xa
        hya = -c[0, 0] * hza - c[0, 1] * hzb + a[0, 1] * state.hxb
        hyb = -c[1, 0] * hza - c[1, 1] * hzb + a[1, 0] * state.hxa

        coeffs = PairCoefficients(A=a, B=np.eye(2), C=c)
        return self._accept(state, state.xa + ya, state.xb + yb, state.hxa + hya, state.hxb + hyb,
                            ya, yb, hya, hyb, k0, k1, coeffs, snapshot)

    def step(self, state: Sbci2State) -> StepOutcome:
        if state.ya is None:
            return self.first_step(state)

        za, zb, hza, hzb = self._residual_directions(state)
        vectors = [state.xa, state.xb, state.ya, state.yb, za, zb]
        images = [state.hxa, state.hxb, state.hya, state.hyb, hza, hzb]
        snapshot = self._ritz(vectors, images)
        if snapshot is None:
            return self._stall(state)

        vp = snapshot.coefficients
        if abs(vp[2, 0]) * norm(state.ya) < DENOMINATOR_GUARD or \
                abs(vp[3, 1]) * norm(state.yb) < DENOMINATOR_GUARD:
            return self._stall(state)
        a_ab = vp[1, 0] / vp[2, 0]
        a_ba = vp[0, 1] / vp[3, 1]

        d0 = vp[0, 0] - vp[3, 0] * a_ba
        d1 = vp[1, 1] - vp[2, 1] * a_ab
        if abs(d0) * state.xa_norm < DENOMINATOR_GUARD or abs(d1) * state.xb_norm < DENOMINATOR_GUARD:
            return self._stall(state)
        k0, k1 = 1.0 / d0, 1.0 / d1

        w = np.array([[vp[2, 0], vp[3, 0]],
                      [vp[2, 1], vp[3, 1]]])
        r = np.array([[vp[4, 0], vp[5, 0]],
                      [vp[4, 1], vp[5, 1]]])
        det = w[0, 0] * w[1, 1] - w[0, 1] * w[1, 0]
        if abs(det) < DENOMINATOR_GUARD * float(np.sum(w * w)):
            return self._stall(state)
        w_inv = np.array([[w[1, 1], -w[0, 1]],
                          [-w[1, 0], w[0, 0]]]) / det

        a = np.array([[0.0, a_ab], [a_ba, 0.0]])
        b = np.array([[k0 * w[0, 0], k0 * w[0, 1]],
                      [k1 * w[1, 0], k1 * w[1, 1]]])
        c = -w_inv @ r

        ya = state.ya - c[0, 0] * za - c[0, 1] * zb + a_ab * state.xb
        yb = state.yb - c[1, 0] * za - c[1, 1] * zb + a_ba * state.xa
        hya = state.hya - c[0, 0] * hza - c[0, 1] * hzb + a_ab * state.hxb
        hyb = state.hyb - c[1, 0] * hza - c[1, 1] * hzb + a_ba * state.hxa

        xa = state.xa + b[0, 0] * ya + b[0, 1] * yb
        xb = state.xb + b[1, 0] * ya + b[1, 1] * yb
        hxa = state.hxa + b[0, 0] * hya + b[0, 1] * hyb
        hxb = state.hxb + b[1, 0] * hya + b[1, 1] * hyb

        coeffs = PairCoefficients(A=a, B=b, C=c)
        return self._accept(state, xa, xb, hxa, hxb, ya, yb, hya, hyb, k0, k1, coeffs, snapshot)

    def _accept(self, state: Sbci2State, xa, xb, hxa, hxb, ya, yb, hya, hyb,
                k0: float, k1: float, coeffs: PairCoefficients,
                snapshot: SubspaceSnapshot) -> StepOutcome:
        ea, eb = float(snapshot.values[0]), float(snapshot.values[1])
        zres_a = (hxa - ea * xa) / k0
        zres_b = (hxb - eb * xb) / k1
        d_energy = abs(ea - state.ea)
        res_norm = norm(zres_a)

        state.xa, state.xb, state.hxa, state.hxb = xa, xb, hxa, hxb
        state.ya, state.yb, state.hya, state.hyb = ya, yb, hya, hyb
        state.zres_a, state.zres_b = zres_a, zres_b
        state.ea, state.eb = ea, eb
        state.k0, state.k1, state.coeffs = k0, k1, coeffs
        state.d_energy, state.res_norm = d_energy, res_norm
        state.kinetic = self.pre.kinetic(ya)
        state.subspace = snapshot

        if d_energy < self.cfg.eps0 and res_norm < self.cfg.r0:
            xa_norm = norm(xa)
            return StepOutcome.converged(ea, xa / xa_norm, hxa / xa_norm)
        reason = check_restart_sbci2(state, self.cfg, d_energy, res_norm)
        return StepOutcome.restart(reason) if reason else StepOutcome.proceed()

    def _stall(self, state: Sbci2State) -> StepOutcome:
        state.d_energy, state.res_norm, state.kinetic = 0.0, norm(state.zres_a), None
        return StepOutcome.restart(RestartReason.STALL_SMALL_B)

    def _restart(self, state: Sbci2State) -> None:
        na, nb = state.xa_norm, state.xb_norm
        state.xa, state.hxa = state.xa / na, state.hxa / na
        state.xb, state.hxb = state.xb / nb, state.hxb / nb
        state.zres_a = math.copysign(1.0, state.k0) * state.zres_a
        state.zres_b = math.copysign(1.0, state.k1) * state.zres_b
        state.restart_count += 1
        if state.restart_count % self.cfg.refresh_every == 0:
            state.hxa = self.op.apply(state.xa)
            state.hxb = self.op.apply(state.xb)
            state.zres_a = state.hxa - state.ea * state.xa
            state.zres_b = state.hxb - state.eb * state.xb
            self.refresh_matvecs += 2
        state.ya = state.yb = state.hya = state.hyb = None
        state.t = 0
        state.k0 = state.k1 = 1.0
        state.coeffs = PairCoefficients.identity()

    def _emit(self, state: Sbci2State, outcome: StepOutcome, t: int, segment: int) -> None:
        a, b, c = state.coeffs.A, state.coeffs.B, state.coeffs.C
        record = TraceRecord(
            method=self.method, state=state.alpha, pair_partner=state.alpha + 1,
            t=t, segment=segment, status=outcome.status.value,
            E=state.ea, dE=state.d_energy, res_norm=state.res_norm,
            b=b[0, 0], c=c[0, 0], b_ab=b[0, 1], b_ba=b[1, 0], b_bb=b[1, 1],
            c_ab=c[0, 1], c_ba=c[1, 0], c_bb=c[1, 1], a_ab=a[0, 1], a_ba=a[1, 0],
            x_norm=state.xa_norm, E_partner=state.eb, x_norm_partner=state.xb_norm,
            kinetic=state.kinetic, matvecs=self.op.apply_count,
            restart_reason=outcome.reason.value if outcome.reason else None,
        )
        self.trace.append(record)
        record_trace(self.sink, record)

    def solve_pair(self, state: Sbci2State) -> PairSolution:
        best_energy, best_residual = state.ea, state.res_norm

        for iteration in range(1, self.cfg.t_max + 1):
            if self.follow_shift:
                self.pre = update_shift(self.pre, state.ea)
            t, segment = state.t, state.restart_count
            outcome = self.step(state)
            self._emit(state, outcome, t, segment)
            logger.debug(f"[sbci2 {state.alpha},{state.alpha + 1}] t={t} EA={state.ea:.12f} "
                         f"EB={state.eb:.12f} dE={state.d_energy:.2e} |z'|={state.res_norm:.2e}")
            if state.res_norm < best_residual:
                best_energy, best_residual = state.ea, state.res_norm

            if outcome.is_converged:
                pair = ConvergedEigenpair(state=state.alpha, energy=outcome.energy, vector=outcome.vector,
                                          iterations=iteration, restarts=state.restart_count,
                                          residual_norm=state.res_norm, image=outcome.image)
                nb = state.xb_norm
                carry = Seed(state.xb / nb, state.hxb / nb, state.eb)
                logger.info(f"State {state.alpha} converged in pair: E={pair.energy:.12f} "
                            f"({iteration} iterations, {state.restart_count} restarts)")
                return PairSolution(pair, carry, self.trace)

            if outcome.is_restart:
                logger.info(f"[sbci2 {state.alpha}] restart at t={t}: {outcome.reason.value}")
                self._restart(state)
            else:
                state.t += 1

        logger.error(f"Pair ({state.alpha}, {state.alpha + 1}) did not converge within {self.cfg.t_max} iterations")
        raise NonConvergenceError(state=state.alpha, energy=best_energy, residual=best_residual,
                                  iterations=self.cfg.t_max, method=self.method)


def solve_n_states_sbci2(op: SymmetricLinearOperator, n: int, cfg: SolverConfig,
                         sink: Optional[TraceWriter] = None) -> SolveResult:
    if n == 1:
        result = solve_n_states_sbci1(op, 1, cfg, sink=sink)
        result.method = "sbci2"
        return result

    cfg.validate()
    start = op.apply_count
    guess = init_guess_from_diagonal(op, n, cfg.lindep)
    result = SolveResult(method="sbci2", eigenpairs=[], init_matvecs=op.apply_count - start)

    pre = GroundShiftPreconditioner(op.diagonal, float(guess.energies[0]), cfg.clamp_delta)
    defl = DeflationSet()
    lower = guess.seed(0)

    for alpha in range(n - 1):
        state = init_pair(defl, lower, guess.seed(alpha + 1), cfg.lindep,
                          fallbacks=guess.seeds_from(alpha + 2), alpha=alpha)
        solver = Sbci2Solver(op, cfg, pre, defl, alpha=alpha, sink=sink)
        try:
            solution = solver.solve_pair(state)
        finally:
            result.trace.extend(solver.trace)
            result.refresh_matvecs += solver.refresh_matvecs
        pair = solution.eigenpair
        result.eigenpairs.append(pair)
        result.peak_vectors = max(result.peak_vectors, SBCI2_VECTORS + len(defl))

        if alpha == 0:
            pre = update_shift(solver.pre, pair.energy)
        defl = defl.extended(pair.vector, pair.energy, pair.image)
        lower = solution.carry

    last = n - 1
    seed = ritz_seed([lower] + guess.seeds_from(last), defl, cfg.lindep)
    solver = Sbci1Solver(op, cfg, pre, defl, alpha=last, sink=sink)
    try:
        solution = solver.solve_state(seed)
    finally:
        result.trace.extend(solver.trace)
        result.refresh_matvecs += solver.refresh_matvecs
    result.eigenpairs.append(solution.eigenpair)
    result.peak_vectors = max(result.peak_vectors, SBCI1_VECTORS + len(defl))

    result.eigenpairs = sorted_pairs(result.eigenpairs)
    return result
