import unittest

import numpy as np
from scipy.spatial.distance import pdist

from mixgp.data import ObservationMatrix, parse_schema
from mixgp.errors import DegenerateInput, ShapeMismatch
from mixgp.metrics import (binarize_labels, nearest_neighbours, one_hot_encode, one_nn_error, one_nn_rmse,
                           pca_baseline)


class TestNearestNeighbour(unittest.TestCase):
    def test_collinear(self):
        self.assertEqual(1, one_nn_error([[0.0], [1.0], [2.0]], ['a', 'a', 'b']))

    def test_rmse(self):
        self.assertAlmostEqual(2.0, one_nn_rmse([[0.0], [1.0]], [1.0, 3.0]), places=14)

    def test_ties_go_to_lowest_index(self):
        self.assertEqual([1, 0, 1], nearest_neighbours([[0.0], [1.0], [2.0]]).tolist())

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(0)
        points = rng.standard_normal((40, 2))
        labels = rng.integers(0, 3, 40)
        angle = 0.7
        rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        moved = points @ rotation.T + np.array([3.0, -8.0])
        self.assertEqual(one_nn_error(points, labels), one_nn_error(moved, labels))
        targets = rng.standard_normal(40)
        self.assertAlmostEqual(one_nn_rmse(points, targets), one_nn_rmse(moved, targets), places=12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        points = rng.standard_normal((25, 3))
        dist = np.linalg.norm(points[:, None] - points[None], axis=2)
        np.fill_diagonal(dist, np.inf)
        np.testing.assert_array_equal(np.argmin(dist, axis=1), nearest_neighbours(points))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        points = rng.standard_normal((30, 2))
        labels = rng.integers(0, 3, 30)
        targets = rng.standard_normal(30)
        perm = rng.permutation(30)
        inverse = np.argsort(perm)
        nearest = nearest_neighbours(points)
        np.testing.assert_array_equal(inverse[nearest[perm]], nearest_neighbours(points[perm]))
        self.assertEqual(one_nn_error(points, labels), one_nn_error(points[perm], labels[perm]))
        self.assertAlmostEqual(one_nn_rmse(points, targets), one_nn_rmse(points[perm], targets[perm]), places=12)

    def test_degenerate(self):
        with self.assertRaises(DegenerateInput):
            one_nn_error([[1.0, 2.0]], ['a'])
        with self.assertRaises(DegenerateInput):
            one_nn_error([[1.0], [1.0], [1.0]], ['a', 'b', 'a'])
        with self.assertRaises(ShapeMismatch):
            one_nn_error([[0.0], [1.0]], ['a'])

    def test_binarize(self):
        self.assertEqual([0, 1, 1, 1, 0], binarize_labels(['0', '1', '2', '4', '0'], 1).tolist())


class TestPCA(unittest.TestCase):
    def test_orthonormal_directions(self):
        rng = np.random.default_rng(2)
        data = rng.standard_normal((50, 5)) @ rng.standard_normal((5, 5))
        projection, directions, eigvals = pca_baseline(data, 3)
        np.testing.assert_allclose(np.eye(3), directions.T @ directions, atol=1e-12)
        self.assertTrue(np.all(np.diff(eigvals) <= 0))
        np.testing.assert_allclose(eigvals[:3], projection.var(axis=0), rtol=1e-10)

    def test_rank_one(self):
        t = np.linspace(-1.0, 1.0, 9)
        data = np.outer(t, [3.0, 4.0]) + 1.0
        projection, directions, eigvals = pca_baseline(data, 2)
        np.testing.assert_allclose([0.6, 0.8], directions[:, 0], atol=1e-12)
        np.testing.assert_allclose(5.0 * t, projection[:, 0], atol=1e-12)
        np.testing.assert_allclose(np.zeros(9), projection[:, 1], atol=1e-12)

    def test_toy(self):
        data = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 0.0]])
        projection, directions, eigvals = pca_baseline(data, 1)
        np.testing.assert_allclose([[1.0], [0.0]], directions, atol=1e-15)
        np.testing.assert_allclose([[1.0], [-1.0], [0.0]], projection, atol=1e-15)
        np.testing.assert_allclose([2.0 / 3.0, 0.0], eigvals, atol=1e-15)

    def test_full_rank_preserves_distances(self):
        data = np.random.default_rng(4).standard_normal((40, 4))
        projection, _, _ = pca_baseline(data, 4)
        np.testing.assert_allclose(pdist(data), pdist(projection), rtol=1e-10)

    def test_rejects(self):
        with self.assertRaises(ShapeMismatch):
            pca_baseline(np.zeros((4, 2)), 3)
        with self.assertRaises(ShapeMismatch):
            pca_baseline(np.array([[1.0, np.nan], [0.0, 1.0]]), 1)


class TestOneHot(unittest.TestCase):
    def test_encoding(self):
        schema = parse_schema("a:gaussian\nc:categorical:3\n")
        obs = ObservationMatrix([[0.5, 2.0], [1.5, 0.0]], [[True, True], [False, False]], schema.names)
        encoded = one_hot_encode(schema, obs)
        np.testing.assert_array_equal([0.5, 0.0, 0.0, 1.0], encoded[0])
        self.assertTrue(np.all(np.isnan(encoded[1])))


if __name__ == '__main__':
    unittest.main()
