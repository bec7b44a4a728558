import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from sbci.config import solver_config
from sbci.core.errors import DimensionError
from sbci.core.linalg import SymmetricLinearOperator, dot
from sbci.core.preconditioner import (
    DeflationSet, GroundShiftPreconditioner, precondition_and_deflate, update_shift,
)
from sbci.core.sbci1 import solve_n_states_sbci1


class TestGroundShiftPreconditioner(unittest.TestCase):
    def test_direct_division(self):
        pre = GroundShiftPreconditioner(np.array([2.0, 3.0]), 1.0)
        out = precondition_and_deflate(np.array([1.0, 1.0]), pre, DeflationSet())
        np.testing.assert_allclose(out, [1.0, 0.5])

    def test_clamp_preserves_sign(self):
        pre = GroundShiftPreconditioner(np.array([1.0 + 1e-15, 1.0 - 1e-15, 1.0, 3.0]), 1.0, clamp_delta=1e-10)
        denominators = pre.denominators()
        self.assertTrue(np.all(np.abs(denominators) >= 1e-10))
        self.assertEqual(denominators[0], 1e-10)
        self.assertEqual(denominators[1], -1e-10)
        self.assertEqual(denominators[2], 1e-10, "an exact zero clamps to +clamp_delta")
        self.assertEqual(denominators[3], 2.0)

    def test_clamped_output_is_finite(self):
        pre = GroundShiftPreconditioner(np.array([1.0 + 1e-15, 2.0]), 1.0, clamp_delta=1e-10)
        out = pre.apply(np.array([1.0, 1.0]))
        self.assertTrue(np.all(np.isfinite(out)))
        self.assertAlmostEqual(abs(out[0]), 1e10, delta=1.0)

    def test_shape_mismatch(self):
        pre = GroundShiftPreconditioner(np.ones(3), 0.0)
        with self.assertRaises(DimensionError):
            pre.apply(np.ones(4))

    def test_kinetic(self):
        pre = GroundShiftPreconditioner(np.array([2.0, 4.0]), 1.0)
        self.assertAlmostEqual(pre.kinetic(np.array([1.0, 2.0])), 1.0 * 1.0 + 3.0 * 4.0)

    def test_update_shift(self):
        pre = GroundShiftPreconditioner(np.array([2.0, 3.0]), 1.0)
        self.assertIs(update_shift(pre, 1.0), pre)
        moved = update_shift(pre, 0.5)
        self.assertEqual(moved.e0, 0.5)
        self.assertEqual(pre.e0, 1.0, "original preconditioner is immutable")


class TestDeflationSet(unittest.TestCase):
    def test_projector_removes_component(self):
        e1 = np.array([1.0, 0.0, 0.0])
        defl = DeflationSet().extended(e1, 0.0)
        out = defl.project(np.array([3.0, 1.0, 2.0]))
        self.assertEqual(out[0], 0.0)
        np.testing.assert_array_equal(out[1:], [1.0, 2.0])

    def test_extended_vectors_are_orthonormal(self):
        rng = np.random.default_rng(3)
        defl = DeflationSet()
        for k in range(5):
            defl = defl.extended(rng.standard_normal(30), float(k))
        self.assertEqual(len(defl), 5)
        for i, u in enumerate(defl.vectors):
            self.assertAlmostEqual(dot(u, u), 1.0, delta=1e-12)
            for v in defl.vectors[i + 1:]:
                self.assertLessEqual(abs(dot(u, v)), 1e-10)

    def test_projection_is_orthogonal_within_roundoff(self):
        rng = np.random.default_rng(4)
        defl = DeflationSet()
        for k in range(4):
            defl = defl.extended(rng.standard_normal(50), float(k))
        out = defl.project(rng.standard_normal(50) * 1e6)
        for x_c in defl.vectors:
            self.assertLess(abs(dot(x_c, out)), 1e-8)

    def test_project_with_image_uses_eigenvalue(self):
        h = np.diag([1.0, 2.0, 3.0])
        e1 = np.array([1.0, 0.0, 0.0])
        defl = DeflationSet().extended(e1, 1.0)
        v = np.array([1.0, 1.0, 1.0])
        out, image = defl.project_with_image(v, h @ v)
        np.testing.assert_allclose(out, [0.0, 1.0, 1.0])
        np.testing.assert_allclose(image, h @ out)

    def test_image_stays_exact_for_approximate_eigenvector(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((40, 40))
        h = a + a.T
        values, vectors = np.linalg.eigh(h)
        x_c = vectors[:, 0] + 1e-6 * rng.standard_normal(40)
        x_c /= np.linalg.norm(x_c)
        defl = DeflationSet().extended(x_c, float(x_c @ h @ x_c), h @ x_c)

        seed = x_c + 1e-4 * rng.standard_normal(40)
        out, image = defl.project_with_image(seed, h @ seed)
        scale = 1.0 / np.linalg.norm(out)
        np.testing.assert_allclose(image * scale, h @ (out * scale), atol=1e-9)

    def test_extended_keeps_images_consistent(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((20, 20))
        h = a + a.T
        defl = DeflationSet()
        for k in range(3):
            v = rng.standard_normal(20)
            defl = defl.extended(v, 0.0, h @ v)
        for x_c, hx_c in zip(defl.vectors, defl.images):
            np.testing.assert_allclose(hx_c, h @ x_c, atol=1e-10)

    def test_empty_set_is_identity(self):
        v = np.array([1.0, -2.0])
        np.testing.assert_array_equal(DeflationSet().project(v), v)


class TestShiftSchedule(unittest.TestCase):
    def setUp(self):
        h = np.diag([1.0, 2.0, 3.0, 4.0, 5.0])
        h += 0.05 * (np.eye(5, k=1) + np.eye(5, k=-1))
        self.op = SymmetricLinearOperator.from_dense(h)
        self.cfg = solver_config("tight")

    def test_ground_state_energies_nonincreasing(self):
        result = solve_n_states_sbci1(self.op, 1, self.cfg)
        energies = [r.E for r in result.trace]
        for prev, curr in zip(energies, energies[1:]):
            self.assertLessEqual(curr, prev + 1e-12)


if __name__ == "__main__":
    unittest.main()
