import os
import tempfile
import unittest

import numpy as np
import pandas as pd
from numpy.polynomial.hermite_e import hermegauss
from scipy import special, stats

from mixgp.autodiff import jittered_cholesky
from mixgp.data import Standardization, parse_schema
from mixgp.errors import EntryNotHeldOut, InvalidConfig
from mixgp.inference import (PROBABILITY_FLOOR, export_latents, impute, log_perplexity, predictive_draws,
                             predictive_logprob, predictive_probabilities, write_latents, write_predictions,
                             write_relevances)
from mixgp.trainer import init_model


def flat_model(schema_text, N=4, Q=2, M=3):
    """a model whose latent functions are pinned at 0"""
    model = init_model(parse_schema(schema_text), N, Q, M, seed=0)
    model.params['log_variance'][:] = -60.0
    model.params['u_mean'][:] = 0.0
    model.params['u_scale'][:] = np.diag(np.full(M, -60.0))
    return model


class TestLatents(unittest.TestCase):
    def test_fresh_model(self):
        model = init_model(parse_schema("a:gaussian\nb:bernoulli\n"), 5, 3, 2, seed=2)
        emb = export_latents(model)
        np.testing.assert_array_equal(model.params['x_mean'], emb.means)
        np.testing.assert_array_equal(np.ones((5, 3)), emb.variances)
        np.testing.assert_allclose([0.5, 0.5, 0.5], emb.relevances)
        self.assertEqual([0, 1], emb.dominant.tolist())
        np.testing.assert_array_equal(model.params['x_mean'][:, :2], emb.dominant_points())

    def test_dominant_follows_relevance(self):
        model = init_model(parse_schema("a:gaussian\n"), 5, 3, 2)
        model.params['log_inv_lengthscales'][:] = np.log([[0.01, 3.0, 0.2]])
        emb = export_latents(model)
        self.assertEqual([1, 2], emb.dominant.tolist())

    def test_single_dimension(self):
        emb = export_latents(init_model(parse_schema("a:gaussian\n"), 5, 1, 2))
        self.assertEqual((5, 1), emb.dominant_points().shape)

    def test_files(self):
        emb = export_latents(init_model(parse_schema("a:gaussian\n"), 4, 2, 2))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'latents.csv')
            write_latents(path, emb, header="# h\n")
            frame = pd.read_csv(path, comment='#', float_precision='round_trip')
            self.assertEqual(['point', 'mu_1', 'mu_2', 'var_1', 'var_2'], list(frame.columns))
            np.testing.assert_array_equal(emb.means, frame[['mu_1', 'mu_2']].to_numpy())
            path = os.path.join(tmp, 'ard.csv')
            write_relevances(path, emb)
            frame = pd.read_csv(path)
            self.assertEqual([1, 2], frame['rank'].tolist())


class TestPredictive(unittest.TestCase):
    def test_uniform_bernoulli_has_perplexity_one(self):
        model = flat_model("b:bernoulli\n")
        entries = [(0, 0, 1.0), (1, 0, 0.0), (3, 0, 1.0)]
        self.assertAlmostEqual(1.0, log_perplexity(model, entries, S=20), places=6)

    def test_uniform_categorical(self):
        model = flat_model("c:categorical:4\n")
        self.assertAlmostEqual(2.0, log_perplexity(model, [(2, 0, 3.0)], S=10), places=6)
        probs = predictive_probabilities(model, [(2, 0)], S=10)[0]
        np.testing.assert_allclose(np.full(4, 0.25), probs, atol=1e-6)

    def test_probabilities_sum_to_one(self):
        model = init_model(parse_schema("c:categorical:3:constrained\nb:bernoulli\n"), 4, 2, 3, seed=1)
        for probs in predictive_probabilities(model, [(0, 0), (1, 1), (3, 0)], S=15, seed=2):
            self.assertAlmostEqual(1.0, float(np.sum(probs)), places=12)

    def test_gaussian_in_data_units(self):
        model = flat_model("g:gaussian\n")
        st = Standardization(np.array([5.0]), np.array([2.0]))
        result = predictive_logprob(model, [(0, 0, 6.0)], S=5, standardization=st)
        expected = stats.norm.logpdf(6.0, loc=5.0, scale=2.0 * np.sqrt(0.1))
        self.assertAlmostEqual(expected, result.total, places=6)
        self.assertAlmostEqual(expected, result.per_column['g'], places=6)
        np.testing.assert_allclose([5.0], impute(model, [(0, 0, 6.0)], S=5, standardization=st), atol=1e-6)

    def test_floor(self):
        model = flat_model("g:gaussian\n")
        result = predictive_logprob(model, [(0, 0, 1e200), (1, 0, 0.0)], S=3)
        self.assertEqual(1, result.floored)
        self.assertEqual(np.log(PROBABILITY_FLOOR), result.per_entry[0])
        self.assertGreater(result.per_entry[1], np.log(PROBABILITY_FLOOR))

    def test_observed_entry_rejected(self):
        model = flat_model("b:bernoulli\n")
        mask = np.array([[True], [False], [True], [True]])
        with self.assertRaises(EntryNotHeldOut):
            predictive_logprob(model, [(0, 0, 1.0)], mask=mask)
        predictive_logprob(model, [(1, 0, 1.0)], mask=mask, S=2)
        with self.assertRaises(EntryNotHeldOut):
            predictive_logprob(model, [(9, 0, 1.0)])

    def test_empty(self):
        model = flat_model("b:bernoulli\n")
        self.assertTrue(np.isnan(log_perplexity(model, [])))
        result = predictive_logprob(model, [])
        self.assertEqual((0.0, 0), (result.total, result.n_entries))
        self.assertEqual(0, impute(model, []).size)

    def test_deterministic_given_seed(self):
        model = init_model(parse_schema("g:gaussian\nb:bernoulli\nc:categorical:3\n"), 6, 2, 3, seed=3)
        entries = [(0, 0, 0.3), (2, 1, 1.0), (5, 2, 2.0)]
        a = predictive_logprob(model, entries, S=30, seed=4)
        b = predictive_logprob(model, entries, S=30, seed=4)
        np.testing.assert_array_equal(a.per_entry, b.per_entry)
        self.assertAlmostEqual(sum(a.per_column.values()), a.total, places=12)

    def test_mean_mode_ignores_latent_spread(self):
        model = init_model(parse_schema("b:bernoulli\n"), 4, 2, 3, seed=3)
        wide = model.copy()
        wide.params['x_scale'][:] = np.log(5.0)
        entries = [(1, 0, 1.0)]
        a = predictive_logprob(model, entries, mode='mean', S=50, seed=1)
        b = predictive_logprob(wide, entries, mode='mean', S=50, seed=1)
        self.assertEqual(a.total, b.total)
        c = predictive_logprob(wide, entries, mode='mc', S=50, seed=1)
        self.assertNotEqual(a.total, c.total)

    def test_draws(self):
        model = init_model(parse_schema("b:bernoulli\nc:categorical:3\n"), 5, 2, 3)
        draws = predictive_draws(model, [0, 4], S=7, rng=np.random.default_rng(0))
        self.assertEqual((7, 2, 4), draws.shape)
        with self.assertRaises(InvalidConfig):
            predictive_draws(model, [0], mode='median')
        with self.assertRaises(InvalidConfig):
            predictive_draws(model, [0], S=0)

    def test_more_samples_agree(self):
        model = init_model(parse_schema("b:bernoulli\nc:categorical:3\n"), 6, 2, 3, seed=5)
        entries = [(0, 0, 1.0), (2, 0, 0.0), (3, 1, 2.0), (5, 1, 0.0)]
        few = predictive_logprob(model, entries, S=2000, seed=1)
        many = predictive_logprob(model, entries, S=8000, seed=2)
        np.testing.assert_allclose(many.per_entry, few.per_entry, atol=0.15)

    def test_matches_quadrature(self):
        model = init_model(parse_schema("y:bernoulli\n"), 2, 1, 1)
        model.params.update({
            'log_variance': np.log([[2.0]]),
            'log_inv_lengthscales': np.log([[0.7]]),
            'x_mean': np.array([[0.3], [-1.0]]),
            'x_scale': np.log([[0.5], [0.8]]),
            'inducing': np.array([[0.2]]),
            'u_mean': np.array([[1.5]]),
            'u_scale': np.log([[[0.6]]]),
        })
        s2, g, z, m, su = 2.0, 0.7, 0.2, 1.5, 0.6
        kzz = jittered_cholesky(np.array([[s2]]))[0, 0] ** 2
        t, w = hermegauss(80)
        w = w / np.sqrt(2.0 * np.pi)
        expected = []
        for mu, sd in ((0.3, 0.5), (-1.0, 0.8)):
            p = 0.0
            for x, wx in zip(mu + sd * t, w):
                a = s2 * np.exp(-0.5 * g * (x - z) ** 2) / kzz
                # u and the conditional noise of f combine into one gaussian
                var_f = a * a * su * su + max(s2 - a * a * kzz, 0.0)
                p += wx * np.dot(w, special.expit(a * m + np.sqrt(var_f) * t))
            expected.append(p)
        result = predictive_logprob(model, [(0, 0, 1.0), (1, 0, 1.0)], S=20000, seed=3)
        np.testing.assert_allclose(expected, np.exp(result.per_entry), atol=0.01)


class TestImpute(unittest.TestCase):
    def test_most_probable_class(self):
        model = flat_model("c:categorical:3\nb:bernoulli\n", N=2)
        # shift the inducing values so class 1 and y=1 dominate everywhere
        model.params['log_variance'][:] = 0.0
        model.params['x_scale'][:] = -30.0
        model.params['x_mean'][:] = model.params['inducing'][0]
        model.params['u_mean'][:] = [[0.0, 4.0, 0.0, 4.0]] * 3
        predictions = impute(model, [(0, 0, 0.0), (1, 1, 0.0)], S=20)
        self.assertEqual([1.0, 1.0], predictions.tolist())

    def test_prediction_file(self):
        model = flat_model("b:bernoulli\n")
        entries = [(0, 0, 1.0), (2, 0, 0.0)]
        result = predictive_logprob(model, entries, S=3)
        predictions = impute(model, entries, S=3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'predictions.csv')
            write_predictions(path, model, entries, predictions, result, header="# h\n")
            frame = pd.read_csv(path, comment='#')
        self.assertEqual(['row', 'column', 'value', 'prediction', 'logprob'], list(frame.columns))
        self.assertEqual(['b', 'b'], frame['column'].tolist())


if __name__ == '__main__':
    unittest.main()
