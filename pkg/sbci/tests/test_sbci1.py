import sys
import unittest
from pathlib import Path

import numpy as np
import scipy.linalg

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from sbci.config import SolverConfig, solver_config
from sbci.core.errors import ContractError
from sbci.core.linalg import SymmetricLinearOperator, dot, norm
from sbci.core.preconditioner import DeflationSet, GroundShiftPreconditioner
from sbci.core.results import RestartReason, Seed
from sbci.core.sbci1 import (
    Sbci1Solver, Sbci1State, check_restart_sbci1, init_guess_from_diagonal, ritz_seed,
    solve_n_states_sbci1,
)
from sbci.utils.synthetic import gen_synthetic_ci_matrix


def dense_oracle(op, n):
    return scipy.linalg.eigh(op.to_dense(), eigvals_only=True, subset_by_index=[0, n - 1])


def unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


class TestInitialGuess(unittest.TestCase):
    def test_smallest_diagonal_positions(self):
        op = SymmetricLinearOperator.from_dense(np.diag([5.0, 1.0, 3.0]))
        guess = init_guess_from_diagonal(op, 2)
        self.assertEqual(sorted(guess.indices), [1, 2])
        self.assertEqual(op.apply_count, 2)

    def test_diagonal_matrix_gives_eigenvectors(self):
        op = SymmetricLinearOperator.from_dense(np.diag([4.0, 2.0, 3.0, 1.0]))
        guess = init_guess_from_diagonal(op, 2)
        np.testing.assert_allclose(guess.energies, [1.0, 2.0])
        for vector, image, energy in zip(guess.vectors, guess.images, guess.energies):
            np.testing.assert_allclose(image, energy * vector, atol=1e-14)

    def test_rotation_matches_projected_matrix(self):
        op = gen_synthetic_ci_matrix(50, seed=4, density=0.2)
        guess = init_guess_from_diagonal(op, 3)
        dense = op.to_dense()
        idx = guess.indices
        expected = np.linalg.eigvalsh(dense[np.ix_(idx, idx)])
        np.testing.assert_allclose(guess.energies, expected, atol=1e-12)


class TestFirstStep(unittest.TestCase):
    def setUp(self):
        self.cfg = solver_config("tight")

    def _solver(self, h, e0=0.0, defl=None, alpha=0):
        op = SymmetricLinearOperator.from_dense(h)
        pre = GroundShiftPreconditioner(op.diagonal, e0, self.cfg.clamp_delta)
        return op, Sbci1Solver(op, self.cfg, pre, defl or DeflationSet(), alpha=alpha)

    def test_eigenvector_input_converges(self):
        h = np.diag([1.0, 2.0, 3.0])
        op, solver = self._solver(h, e0=1.0)
        state = solver.initial_state(Seed(unit(3, 0), h @ unit(3, 0), 1.0))
        outcome = solver.first_step(state)
        self.assertTrue(outcome.is_converged)
        self.assertEqual(outcome.energy, 1.0)
        self.assertEqual(op.apply_count, 0)

    def test_two_by_two_lands_on_ritz_vector(self):
        h = np.array([[0.0, 0.1], [0.1, 2.0]])
        values, vectors = np.linalg.eigh(h)
        op, solver = self._solver(h, e0=0.0)
        x0 = unit(2, 0)
        state = solver.initial_state(Seed(x0, h @ x0, 0.0))
        outcome = solver.first_step(state)
        self.assertFalse(outcome.is_converged)
        self.assertAlmostEqual(state.energy, values[0], places=12)
        cosine = abs(dot(state.x, vectors[:, 0])) / state.x_norm
        self.assertAlmostEqual(cosine, 1.0, places=12)
        self.assertAlmostEqual(state.x_norm, abs(state.k), places=12)
        self.assertEqual(op.apply_count, 1)


class TestStep(unittest.TestCase):
    def setUp(self):
        self.cfg = solver_config("tight")
        self.op = gen_synthetic_ci_matrix(200, seed=3, density=0.02)
        self.dense = self.op.to_dense()
        self.guess = init_guess_from_diagonal(self.op, 1)
        self.pre = GroundShiftPreconditioner(self.op.diagonal, float(self.guess.energies[0]))

    def test_invariants_along_a_segment(self):
        solver = Sbci1Solver(self.op, self.cfg, self.pre, DeflationSet())
        state = solver.initial_state(self.guess.seed(0))
        scale = float(np.max(np.abs(self.dense)))
        previous = state.energy
        for _ in range(self.cfg.max_cycle - 1):
            outcome = solver.step(state)
            self.assertLessEqual(state.energy, previous + 1e-12, "Ritz value must not rise")
            previous = state.energy
            np.testing.assert_allclose(state.hx, self.dense @ state.x, atol=1e-9 * scale)
            if state.y is not None:
                np.testing.assert_allclose(state.hy, self.dense @ state.y, atol=1e-9 * scale)
            self.assertAlmostEqual(state.x_norm, abs(state.k), delta=1e-10 * state.x_norm)
            if outcome.is_converged or outcome.is_restart:
                break
            state.t += 1

    def test_one_matvec_per_step(self):
        solver = Sbci1Solver(self.op, self.cfg, self.pre, DeflationSet())
        state = solver.initial_state(self.guess.seed(0))
        before = self.op.apply_count
        solver.step(state)
        state.t += 1
        solver.step(state)
        self.assertEqual(self.op.apply_count - before, 2)

    def test_exact_eigenvector_converges_immediately(self):
        values, vectors = np.linalg.eigh(self.dense)
        x = vectors[:, 0]
        solver = Sbci1Solver(self.op, self.cfg, self.pre, DeflationSet())
        state = solver.initial_state(Seed(x, self.dense @ x, values[0]))
        outcome = solver.step(state)
        self.assertTrue(outcome.is_converged)
        self.assertAlmostEqual(outcome.energy, values[0], places=10)

    def test_deflated_state_stays_orthogonal(self):
        values, vectors = np.linalg.eigh(self.dense)
        defl = DeflationSet().extended(vectors[:, 0], values[0])
        solver = Sbci1Solver(self.op, self.cfg, self.pre, defl, alpha=1)
        seed = init_guess_from_diagonal(self.op, 2).seed(1)
        state = solver.initial_state(seed)
        for _ in range(8):
            outcome = solver.step(state)
            self.assertLessEqual(abs(dot(state.x, defl.vectors[0])), 1e-10 * state.x_norm)
            if outcome.is_converged or outcome.is_restart:
                break
            state.t += 1


class TestCheckRestart(unittest.TestCase):
    def setUp(self):
        self.cfg = SolverConfig()

    def _state(self, x_norm=1.0, alpha=0, t=0, b=1.0):
        x = np.array([x_norm, 0.0])
        return Sbci1State(alpha=alpha, x=x, hx=x.copy(), zres=np.zeros(2), energy=0.0, t=t, b_prev=b)

    def test_norm_above_window(self):
        self.assertEqual(check_restart_sbci1(self._state(x_norm=1.3), self.cfg, 1e-3, 1e-3),
                         RestartReason.NORM_OUT_OF_RANGE)

    def test_norm_below_window(self):
        self.assertEqual(check_restart_sbci1(self._state(x_norm=0.05), self.cfg, 1e-3, 1e-3),
                         RestartReason.NORM_OUT_OF_RANGE)

    def test_healthy_state(self):
        self.assertIsNone(check_restart_sbci1(self._state(), self.cfg, 1e-3, 1e-3))

    def test_stall_requires_excited_state(self):
        self.assertIsNone(check_restart_sbci1(self._state(alpha=0, b=1e-4), self.cfg, 1e-9, 1e-3))
        self.assertEqual(check_restart_sbci1(self._state(alpha=1, b=1e-4), self.cfg, 1e-9, 1e-3),
                         RestartReason.STALL_SMALL_B)

    def test_stall_takes_precedence_over_norm(self):
        state = self._state(x_norm=1.5, alpha=2, b=1e-4)
        self.assertEqual(check_restart_sbci1(state, self.cfg, 1e-9, 1e-3), RestartReason.STALL_SMALL_B)

    def test_residual_blowup_after_first_step(self):
        self.assertIsNone(check_restart_sbci1(self._state(t=0), self.cfg, 1e-3, 2.0))
        self.assertEqual(check_restart_sbci1(self._state(t=1), self.cfg, 1e-3, 2.0),
                         RestartReason.RESIDUAL_BLOWUP)

    def test_max_cycle(self):
        self.assertIsNone(check_restart_sbci1(self._state(t=self.cfg.max_cycle - 2), self.cfg, 1e-3, 1e-3))
        self.assertEqual(check_restart_sbci1(self._state(t=self.cfg.max_cycle - 1), self.cfg, 1e-3, 1e-3),
                         RestartReason.MAX_CYCLE)


class TestSolveState(unittest.TestCase):
    def setUp(self):
        self.cfg = solver_config("tight")

    def test_eigenvector_seed(self):
        h = np.diag([1.0, 2.0, 3.0])
        op = SymmetricLinearOperator.from_dense(h)
        pre = GroundShiftPreconditioner(op.diagonal, 1.0)
        solution = Sbci1Solver(op, self.cfg, pre, DeflationSet()).solve_state(Seed(unit(3, 0), h @ unit(3, 0), 1.0))
        self.assertEqual(solution.eigenpair.energy, 1.0)
        self.assertEqual(solution.eigenpair.iterations, 1)
        self.assertEqual(solution.trace[0].t, 0)

    def test_excited_state_shift_is_frozen(self):
        op = gen_synthetic_ci_matrix(100, seed=6, density=0.05)
        values, vectors = np.linalg.eigh(op.to_dense())
        defl = DeflationSet().extended(vectors[:, 0], values[0])
        pre = GroundShiftPreconditioner(op.diagonal, values[0])
        solver = Sbci1Solver(op, self.cfg, pre, defl, alpha=1)
        seed = init_guess_from_diagonal(op, 2).seed(1)
        solution = solver.solve_state(seed)
        self.assertIs(solver.pre, pre)
        self.assertAlmostEqual(solution.eigenpair.energy, values[1], delta=1e-8)


class TestSolveNStates(unittest.TestCase):
    def setUp(self):
        self.cfg = solver_config("tight")

    def test_ground_state_matches_oracle(self):
        op = gen_synthetic_ci_matrix(200, seed=3, density=0.02)
        result = solve_n_states_sbci1(op, 1, self.cfg)
        self.assertAlmostEqual(result.energies[0], dense_oracle(op, 1)[0], delta=1e-9)

    def test_four_states(self):
        op = gen_synthetic_ci_matrix(200, seed=3, density=0.02)
        result = solve_n_states_sbci1(op, 4, self.cfg)
        np.testing.assert_allclose(result.energies, dense_oracle(op, 4), atol=1e-8)
        self.assertEqual(result.energies, sorted(result.energies))
        vectors = result.vectors
        for i in range(4):
            for j in range(i + 1, 4):
                self.assertLessEqual(abs(dot(vectors[i], vectors[j])), 1e-10)
        dense = op.to_dense()
        for pair in result.eigenpairs:
            self.assertLess(norm(dense @ pair.vector - pair.energy * pair.vector), 1e-4)

    def test_matvec_budget(self):
        op = gen_synthetic_ci_matrix(200, seed=8, density=0.02)
        result = solve_n_states_sbci1(op, 3, self.cfg)
        self.assertEqual(op.apply_count, result.init_matvecs + result.iterations + result.refresh_matvecs)
        self.assertEqual(result.init_matvecs, 3)
        self.assertEqual(result.trace[-1].matvecs, op.apply_count)

    def test_trace_rows(self):
        op = gen_synthetic_ci_matrix(150, seed=2, density=0.03)
        result = solve_n_states_sbci1(op, 2, self.cfg)
        for prev, curr in zip(result.trace, result.trace[1:]):
            if (prev.state, prev.segment) == (curr.state, curr.segment):
                self.assertEqual(curr.t, prev.t + 1)
        for record in result.trace:
            self.assertEqual(record.status == "restart", record.restart_reason is not None)
        self.assertEqual(result.restarts, sum(1 for r in result.trace if r.status == "restart"))

    def test_near_degenerate_diagonal(self):
        op = SymmetricLinearOperator.from_dense(np.diag([1.0, 1.0 + 1e-8, 2.0]))
        result = solve_n_states_sbci1(op, 2, self.cfg)
        np.testing.assert_allclose(result.energies, [1.0, 1.0 + 1e-8], atol=1e-12)
        self.assertLessEqual(abs(dot(result.vectors[0], result.vectors[1])), 1e-10)

    def test_ritz_values_descend_across_restarts(self):
        op = gen_synthetic_ci_matrix(200, seed=12, density=0.02)
        result = solve_n_states_sbci1(op, 3, solver_config("tight", max_cycle=4))
        self.assertGreater(result.restarts, 0)
        for prev, curr in zip(result.trace, result.trace[1:]):
            if prev.state == curr.state:
                self.assertLessEqual(curr.E, prev.E + 1e-12,
                                     f"state {curr.state} rose at segment {curr.segment}, t={curr.t}")

    def test_forced_split_converges(self):
        op = gen_synthetic_ci_matrix(200, seed=5, density=0.02, degeneracy_split=1e-8)
        oracle = dense_oracle(op, 2)
        result = solve_n_states_sbci1(op, 2, solver_config("tight", r0=1e-7))
        np.testing.assert_allclose(result.energies, oracle, rtol=0.0, atol=1e-8)
        self.assertLessEqual(abs(dot(result.vectors[0], result.vectors[1])), 1e-10)


class TestRitzSeed(unittest.TestCase):
    def setUp(self):
        self.h = np.diag([1.0, 2.0, 3.0, 4.0, 5.0])
        self.defl = DeflationSet().extended(unit(5, 0), 1.0, self.h @ unit(5, 0))

    def _seed(self, v):
        return Seed(v, self.h @ v, float(v @ self.h @ v / (v @ v)))

    def test_lowest_candidate_wins(self):
        candidates = [self._seed(unit(5, 4)), self._seed(unit(5, 1)), self._seed(unit(5, 0))]
        seed = ritz_seed(candidates, self.defl, 1e-14)
        self.assertAlmostEqual(seed.energy, 2.0, places=12)
        self.assertAlmostEqual(abs(seed.vector[1]), 1.0, places=12)
        np.testing.assert_allclose(seed.image, self.h @ seed.vector, atol=1e-12)

    def test_high_ritz_vector_mixed_with_guesses(self):
        mixed = unit(5, 4) + 1e-3 * unit(5, 2)
        seed = ritz_seed([self._seed(mixed), self._seed(unit(5, 2) + unit(5, 0))], self.defl, 1e-14)
        self.assertAlmostEqual(seed.energy, 3.0, places=10)
        self.assertLess(abs(seed.vector[0]), 1e-14)

    def test_all_candidates_collapsed(self):
        with self.assertRaises(ContractError):
            ritz_seed([None, self._seed(unit(5, 0))], self.defl, 1e-14)


if __name__ == "__main__":
    unittest.main()
