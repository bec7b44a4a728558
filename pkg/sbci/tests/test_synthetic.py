import sys
import unittest
from pathlib import Path

import numpy as np
import scipy.linalg

sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from sbci.core.errors import ContractError
from sbci.utils.synthetic import gen_synthetic_ci_matrix


class TestSyntheticMatrix(unittest.TestCase):
    def test_deterministic(self):
        a = gen_synthetic_ci_matrix(100, seed=1, density=0.05)
        b = gen_synthetic_ci_matrix(100, seed=1, density=0.05)
        np.testing.assert_array_equal(a.to_dense(), b.to_dense())
        c = gen_synthetic_ci_matrix(100, seed=2, density=0.05)
        self.assertFalse(np.array_equal(a.to_dense(), c.to_dense()))

    def test_zero_density_is_diagonal(self):
        op = gen_synthetic_ci_matrix(30, seed=4, density=0.0)
        dense = op.to_dense()
        np.testing.assert_array_equal(dense, np.diag(np.diag(dense)))
        np.testing.assert_allclose(np.linalg.eigvalsh(dense), np.sort(op.diagonal))

    def test_exactly_symmetric(self):
        dense = gen_synthetic_ci_matrix(200, seed=7, density=0.02).to_dense()
        np.testing.assert_array_equal(dense, dense.T)

    def test_diagonal_grows_with_index(self):
        op = gen_synthetic_ci_matrix(200, seed=3, density=0.02, gap=0.1)
        slope = np.polyfit(np.arange(200), op.diagonal, 1)[0]
        self.assertAlmostEqual(slope, 0.1, delta=0.01)

    def test_couplings_decay_with_distance(self):
        dense = gen_synthetic_ci_matrix(400, seed=5, density=0.3, coupling=0.05).to_dense()
        rows, cols = np.nonzero(np.tril(dense, k=-1))
        distance = rows - cols
        near = np.abs(dense[rows, cols][distance < 20]).mean()
        far = np.abs(dense[rows, cols][distance > 200]).mean()
        self.assertGreater(near, 5.0 * far)

    def test_forced_split(self):
        op = gen_synthetic_ci_matrix(120, seed=5, density=0.05, degeneracy_split=1e-6)
        dense = op.to_dense()
        np.testing.assert_array_equal(dense, dense.T)
        values = scipy.linalg.eigh(dense, eigvals_only=True, subset_by_index=[0, 1])
        self.assertAlmostEqual(values[1] - values[0], 1e-6, delta=1e-11)

    def test_invalid_arguments(self):
        with self.assertRaises(ContractError):
            gen_synthetic_ci_matrix(3, seed=0)
        with self.assertRaises(ContractError):
            gen_synthetic_ci_matrix(10, seed=0, density=1.5)


if __name__ == "__main__":
    unittest.main()
