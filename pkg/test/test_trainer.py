import dataclasses
import os
import tempfile
import unittest
from unittest import mock

import numpy as np

from mixgp.config import RunConfig
from mixgp.data import Holdout, ObservationMatrix, parse_schema, standardize
from mixgp.elbo import elbo
from mixgp.errors import InvalidConfig, NonFiniteGradient, SchemaMismatch
from mixgp.trainer import (PARAMETER_NAMES, RMSProp, TrainState, has_converged, init_model,
                           load_checkpoint, rmsprop_step, save_checkpoint, smoothed, train)

SCHEMA = "g:gaussian\nb:bernoulli\nc:categorical:3\n"


def small_data(N=8, seed=0):
    rng = np.random.default_rng(seed)
    values = np.column_stack([rng.standard_normal(N), rng.integers(0, 2, N), rng.integers(0, 3, N)])
    mask = rng.random(values.shape) > 0.1
    return ObservationMatrix(values, mask, ['g', 'b', 'c'], labels=np.array(['x', 'y'] * (N // 2)))


def small_config(**overrides):
    settings = dict(Q=2, M=3, T=2, max_steps=5, log_every=1, lr=1e-2)
    settings.update(overrides)
    return RunConfig(**settings)


class TestInitModel(unittest.TestCase):
    def test_standard_starting_point(self):
        schema = parse_schema(SCHEMA)
        model = init_model(schema, 5, 2, 4, seed=3)
        self.assertEqual([n for n in PARAMETER_NAMES], list(model.params))
        self.assertEqual(1.0, model.kernel.variance)
        np.testing.assert_allclose([0.5, 0.5], model.kernel.inv_lengthscales)
        np.testing.assert_array_equal(np.zeros((5, 2)), model.params['x_scale'])
        self.assertEqual((5, 4, 4), model.params['u_scale'].shape)
        self.assertEqual((4, 5), model.params['u_mean'].shape)
        self.assertAlmostEqual(0.1, model.noise_variance(0), places=14)

    def test_seed_determines_means(self):
        schema = parse_schema(SCHEMA)
        a = init_model(schema, 5, 2, 4, seed=3)
        b = init_model(schema, 5, 2, 4, seed=3)
        c = init_model(schema, 5, 2, 4, seed=4)
        np.testing.assert_array_equal(a.params['x_mean'], b.params['x_mean'])
        self.assertFalse(np.array_equal(a.params['x_mean'], c.params['x_mean']))

    def test_no_noise_without_gaussian_columns(self):
        model = init_model(parse_schema("b:bernoulli\n"), 3, 1, 2)
        self.assertNotIn('log_noise', model.params)

    def test_full_covariance_shape(self):
        model = init_model(parse_schema(SCHEMA), 5, 2, 4, full_cov=True)
        self.assertEqual((2, 5, 5), model.params['x_scale'].shape)
        model.check_structure()

    def test_pca_init(self):
        data = small_data()
        model = init_model(parse_schema(SCHEMA), 8, 2, 3, init='pca', data=data)
        np.testing.assert_allclose(np.ones(2), model.params['x_mean'].std(axis=0), rtol=1e-10)
        with self.assertRaises(InvalidConfig):
            init_model(parse_schema(SCHEMA), 8, 2, 3, init='pca')

    def test_rejects_bad_sizes(self):
        with self.assertRaises(InvalidConfig):
            init_model(parse_schema(SCHEMA), 5, 0, 4)

    def test_fixed_noise_mask(self):
        model = init_model(parse_schema("a:gaussian:fixed\nb:gaussian\n"), 4, 1, 2)
        np.testing.assert_array_equal([[0.0, 1.0]], model.gradient_masks()['log_noise'])


class TestRMSProp(unittest.TestCase):
    def test_hand_trace(self):
        lr, decay, eps = 0.1, 0.9, 1e-8
        params = {'w': np.array([[1.0]])}
        squares = {}
        acc, w = 0.0, 1.0
        for g in (2.0, -1.0, 0.5):
            params, squares = rmsprop_step(params, {'w': np.array([[g]])}, squares, lr, decay, eps)
            acc = decay * acc + (1 - decay) * g * g
            w = w - lr * g / (np.sqrt(acc) + eps)
            self.assertAlmostEqual(w, params['w'][0, 0], places=14)
            self.assertAlmostEqual(acc, squares['w'][0, 0], places=14)

    def test_zero_gradient_leaves_parameters(self):
        params = {'w': np.array([[0.3, -2.0]])}
        new, _ = rmsprop_step(params, {'w': np.zeros((1, 2))}, {})
        np.testing.assert_array_equal(params['w'], new['w'])

    def test_constant_gradient_step_tends_to_lr(self):
        opt = RMSProp(learning_rate=0.01)
        params = {'w': np.array([[0.0]])}
        for _ in range(300):
            before = params['w'][0, 0]
            params = opt.apply_gradients(params, {'w': np.array([[3.0]])})
        self.assertAlmostEqual(0.01, before - params['w'][0, 0], places=8)

    def test_non_finite_gradient_rejected(self):
        params = {'w': np.array([[1.0]]), 'v': np.array([[2.0]])}
        with self.assertRaises(NonFiniteGradient):
            rmsprop_step(params, {'w': np.array([[np.nan]]), 'v': np.array([[1.0]])}, {})


class TestConvergence(unittest.TestCase):
    def test_smoothed(self):
        np.testing.assert_allclose([1.0, 1.5, 2.5, 3.5], smoothed([1.0, 2.0, 3.0, 4.0], 2))

    def test_has_converged(self):
        flat = np.full(700, -100.0)
        self.assertTrue(has_converged(flat, smooth=100, window=500, tol=1e-4))
        rising = np.linspace(-200.0, -100.0, 700)
        self.assertFalse(has_converged(rising, smooth=100, window=500, tol=1e-4))
        self.assertFalse(has_converged(flat[:599], smooth=100, window=500, tol=1e-4))


class TestTrain(unittest.TestCase):
    def setUp(self):
        self.schema = parse_schema(SCHEMA)
        self.data = small_data()

    def test_zero_steps_leaves_model(self):
        model = init_model(self.schema, 8, 2, 3, seed=1)
        trained, state, trace = train(model, self.data, small_config(max_steps=0))
        self.assertEqual([], trace)
        self.assertEqual(0, state.step)
        for name in model.params:
            np.testing.assert_array_equal(model.params[name], trained.params[name])

    def test_deterministic(self):
        model = init_model(self.schema, 8, 2, 3, seed=1)
        _, _, a = train(model, self.data, small_config())
        _, _, b = train(model, self.data, small_config())
        self.assertEqual(a, b)
        self.assertEqual(5, len(a))
        _, _, c = train(model, self.data, small_config(seed=1))
        self.assertNotEqual([row[1] for row in a], [row[1] for row in c])

    def test_input_model_untouched(self):
        model = init_model(self.schema, 8, 2, 3, seed=1)
        before = model.params['x_mean'].copy()
        train(model, self.data, small_config())
        np.testing.assert_array_equal(before, model.params['x_mean'])

    def test_fixed_noise_stays(self):
        schema = parse_schema("g:gaussian:fixed\nb:bernoulli\nc:categorical:3\n")
        model = init_model(schema, 8, 2, 3, seed=1)
        trained, _, _ = train(model, self.data, small_config())
        self.assertEqual(model.params['log_noise'][0, 0], trained.params['log_noise'][0, 0])
        self.assertFalse(np.array_equal(model.params['x_mean'], trained.params['x_mean']))

    def test_trace_components(self):
        model = init_model(self.schema, 8, 2, 3, seed=1)
        _, _, trace = train(model, self.data, small_config())
        for step, value, kl_x, kl_u, ell in trace:
            self.assertAlmostEqual(ell - kl_x - kl_u, value, delta=1e-9)
            self.assertGreaterEqual(kl_x, 0.0)

    def test_resume_matches_single_run(self):
        model = init_model(self.schema, 8, 2, 3, seed=1)
        straight, _, full_trace = train(model, self.data, small_config(max_steps=6))
        half, state, _ = train(model, self.data, small_config(max_steps=3))
        resumed, state, trace = train(half, self.data, small_config(max_steps=6), state=state)
        self.assertEqual(full_trace, trace)
        for name in model.params:
            np.testing.assert_array_equal(straight.params[name], resumed.params[name])

    def test_non_finite_step_is_skipped(self):
        model = init_model(self.schema, 8, 2, 3, seed=1)
        seen = []

        def flaky(model, data, T, rng):
            seen.append(model.params['x_mean'].copy())
            estimate = elbo(model, data, T=T, rng=rng)
            if len(seen) == 3:
                estimate = dataclasses.replace(estimate, gradients=dict(estimate.gradients))
                estimate.gradients['x_mean'] = np.full_like(estimate.gradients['x_mean'], np.nan)
            return estimate

        with mock.patch('mixgp.trainer.elbo', side_effect=flaky), self.assertLogs('mixgp.trainer', 'WARNING'):
            trained, state, trace = train(model, self.data, small_config(max_steps=6))
        self.assertEqual(1, state.rejected)
        self.assertEqual(6, state.step)
        self.assertEqual([0, 1, 3, 4, 5], [row[0] for row in trace])
        np.testing.assert_array_equal(seen[2], seen[3])
        self.assertFalse(np.array_equal(seen[3], seen[4]))
        self.assertTrue(np.all(np.isfinite(trained.params['x_mean'])))

    def test_kl_only_reaches_prior(self):
        schema = parse_schema("b:bernoulli\nc:categorical:3\n")
        empty = ObservationMatrix(np.zeros((6, 2)), np.zeros((6, 2), dtype=bool), ['b', 'c'])
        model = init_model(schema, 6, 2, 3, seed=2)
        config = small_config(T=1, lr=1e-3, max_steps=5000, window=10000, log_every=10000)
        _, state, trace = train(model, empty, config)
        self.assertFalse(state.converged)
        _, _, kl_x, kl_u, ell = trace[-1]
        self.assertEqual(0.0, ell)
        self.assertLess(kl_x, 1e-3)
        self.assertLess(kl_u, 1e-3)

    @unittest.skipUnless(os.environ.get('MIXGP_SLOW') == '1', "set MIXGP_SLOW=1 for long training runs")
    def test_elbo_improves(self):
        model = init_model(self.schema, 8, 2, 3, seed=1)
        _, state, _ = train(model, self.data, small_config(max_steps=2000, T=5))
        values = smoothed(state.elbo_values, 100)
        self.assertGreater(values[-1], values[99])


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.schema = parse_schema("g:gaussian\nb:bernoulli\nc:categorical:3:levels=r|s|t\ny:label\n")
        self.data, self.standardization = standardize(small_data(), self.schema)
        self.config = small_config(max_steps=3)
        model = init_model(self.schema, 8, 2, 3, seed=1)
        self.model, self.state, _ = train(model, self.data, self.config)
        self.holdout = Holdout([(0, 1, 1.0), (3, 2, 2.0)])

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_round_trip_is_byte_identical(self):
        save_checkpoint(self.path('a.json'), self.model, self.state, self.config,
                        self.data, self.standardization, self.holdout)
        ckpt = load_checkpoint(self.path('a.json'))
        save_checkpoint(self.path('b.json'), ckpt.model, ckpt.state, ckpt.config,
                        ckpt.data, ckpt.standardization, Holdout(ckpt.holdout))
        with open(self.path('a.json')) as a, open(self.path('b.json')) as b:
            self.assertEqual(a.read(), b.read())

    def test_loaded_contents(self):
        save_checkpoint(self.path('a.json'), self.model, self.state, self.config,
                        self.data, self.standardization, self.holdout)
        ckpt = load_checkpoint(self.path('a.json'))
        self.assertEqual(self.schema.to_text(), ckpt.schema.to_text())
        self.assertEqual(3, ckpt.state.step)
        self.assertEqual(self.state.trace, ckpt.state.trace)
        np.testing.assert_array_equal(self.data.mask, ckpt.data.mask)
        self.assertEqual(['x', 'y'] * 4, list(ckpt.data.labels))
        self.assertEqual(self.holdout.entries, ckpt.holdout)
        self.assertNotIn('output_dir', ckpt.config)
        for name in self.model.params:
            np.testing.assert_array_equal(self.model.params[name], ckpt.model.params[name])

    def test_resume_from_checkpoint(self):
        straight, _, full_trace = train(init_model(self.schema, 8, 2, 3, seed=1), self.data, small_config(max_steps=5))
        save_checkpoint(self.path('a.json'), self.model, self.state, self.config, self.data)
        ckpt = load_checkpoint(self.path('a.json'))
        resumed, _, trace = train(ckpt.model, ckpt.data, small_config(max_steps=5), state=ckpt.state)
        self.assertEqual(full_trace, trace)
        for name in straight.params:
            np.testing.assert_array_equal(straight.params[name], resumed.params[name])

    def test_not_a_checkpoint(self):
        with open(self.path('junk.json'), 'w') as fp:
            fp.write('{"format": "something-else"}')
        with self.assertRaises(SchemaMismatch):
            load_checkpoint(self.path('junk.json'))
        with open(self.path('junk.txt'), 'w') as fp:
            fp.write('not json')
        with self.assertRaises(SchemaMismatch):
            load_checkpoint(self.path('junk.txt'))


class TestTrainState(unittest.TestCase):
    def test_elbo_values(self):
        state = TrainState(trace=[(0, -3.0, 1.0, 1.0, -1.0), (1, -2.5, 1.0, 1.0, -0.5)])
        np.testing.assert_array_equal([-3.0, -2.5], state.elbo_values)


if __name__ == '__main__':
    unittest.main()
