"""End-to-end checks of trained models. The long experiments only run with MIXGP_SLOW=1."""
import os
import unittest

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from mixgp.config import RunConfig
from mixgp.data import (ObservationMatrix, generate_synthetic, make_holdout, parse_schema, standardize,
                        to_all_gaussian)
from mixgp.elbo import elbo
from mixgp.inference import impute, predictive_logprob
from mixgp.kernel import KernelParams, kernel_matrix
from mixgp.likelihoods import LikelihoodSpec, log_density
from mixgp.trainer import init_model, train

SLOW = os.environ.get('MIXGP_SLOW') == '1'


def fit(schema, obs, Q, M, steps, seed=0, T=5, lr=1e-2, init='random'):
    config = RunConfig(Q=Q, M=M, T=T, max_steps=steps, seed=seed, lr=lr, log_every=steps + 1)
    model = init_model(schema, obs.N, Q, M, seed=seed, init=init, data=obs)
    model, _, _ = train(model, obs, config)
    return model


def bernoulli_log_marginal(kernel, y, n_x=60, n_f=40):
    """log p(y) of a 2-point, 1-dim GP-LVM with bernoulli outputs by tensor Gauss-Hermite quadrature"""
    x, wx = hermegauss(n_x)
    wx = wx / np.sqrt(2.0 * np.pi)
    z, wz = hermegauss(n_f)
    wz = wz / np.sqrt(2.0 * np.pi)
    z1, z2 = np.meshgrid(z, z, indexing='ij')
    wf = np.outer(wz, wz).ravel()
    spec = LikelihoodSpec('bernoulli')
    total = 0.0
    for x1, w1 in zip(x, wx):
        for x2, w2 in zip(x, wx):
            K = kernel_matrix(kernel, np.array([[x1], [x2]]), np.array([[x1], [x2]])) + 1e-10 * np.eye(2)
            L = np.linalg.cholesky(K)
            f1 = L[0, 0] * z1.ravel()
            f2 = L[1, 0] * z1.ravel() + L[1, 1] * z2.ravel()
            lik = np.exp(log_density(spec, y[0], f1[:, None]) + log_density(spec, y[1], f2[:, None]))
            total += w1 * w2 * np.dot(wf, lik)
    return float(np.log(total))


class TestLowerBound(unittest.TestCase):
    def test_trained_elbo_below_log_marginal(self):
        schema = parse_schema("y:bernoulli\n")
        obs = ObservationMatrix([[1.0], [0.0]], np.ones((2, 1), dtype=bool), ['y'])
        model = fit(schema, obs, Q=1, M=1, steps=800, T=5)
        rng = np.random.default_rng(0)
        batches = np.array([elbo(model, obs, T=2000, rng=rng, with_gradients=False).value for _ in range(10)])
        value = batches.mean()
        se = batches.std(ddof=1) / np.sqrt(batches.size)
        log_marginal = bernoulli_log_marginal(model.kernel, [1.0, 0.0])
        self.assertLessEqual(value, log_marginal + max(1e-3, 3 * se))

    def test_quadrature_sanity(self):
        # a flat prior over f gives p(y) = 1/4 whatever the latents
        kernel = KernelParams(-40.0, np.array([0.0]))
        self.assertAlmostEqual(np.log(0.25), bernoulli_log_marginal(kernel, [1.0, 0.0], n_x=10, n_f=10), places=8)


@unittest.skipUnless(SLOW, "set MIXGP_SLOW=1 for training experiments")
class TestTrainedBehaviour(unittest.TestCase):
    def test_ard_switches_off_spurious_dimensions(self):
        schema = parse_schema("g1:gaussian\ng2:gaussian\ng3:gaussian\nb1:bernoulli\nb2:bernoulli\n"
                              "c1:categorical:3\n")
        obs, _ = generate_synthetic(schema, 150, 2, KernelParams(0.0, np.log([1.0, 1.0])), seed=0)
        obs, _ = standardize(obs, schema)
        best = 0
        for seed in range(3):
            model = fit(schema, obs, Q=10, M=20, steps=4000, seed=seed)
            gamma = model.kernel.inv_lengthscales
            order = np.argsort(-gamma)
            switched_off = int(np.sum(gamma[order[2:]] < 0.1 * gamma.max()))
            best = max(best, switched_off)
        self.assertGreaterEqual(best, 6)

    def test_mixed_likelihoods_beat_all_gaussian(self):
        schema = parse_schema("g1:gaussian\ng2:gaussian\ng3:gaussian\nb1:bernoulli\nb2:bernoulli\n"
                              "c1:categorical:3\nc2:categorical:3\n")
        raw, _ = generate_synthetic(schema, 400, 2, KernelParams(0.0, np.log([1.0, 1.0])), seed=1)
        for seed in range(3):
            train_obs, holdout = make_holdout(raw, 0.2, 2, seed=seed)
            data, scaling = standardize(train_obs, schema)
            model = fit(schema, data, Q=5, M=30, steps=3000, seed=seed)
            mixed = predictive_logprob(model, holdout.entries, S=100, seed=seed, mask=data.mask,
                                       standardization=scaling)

            g_schema, g_obs, g_holdout = to_all_gaussian(schema, train_obs, holdout)
            g_data, g_scaling = standardize(g_obs, g_schema)
            g_model = fit(g_schema, g_data, Q=5, M=30, steps=3000, seed=seed)
            gaussian = predictive_logprob(g_model, g_holdout.entries, S=100, seed=seed, mask=g_data.mask,
                                          standardization=g_scaling)
            self.assertGreater(mixed.total, gaussian.total, f"seed {seed}")

    def test_duplicated_column_is_imputed(self):
        schema = parse_schema("b:bernoulli\nb_copy:bernoulli\nc:categorical:3\ng:gaussian\n")
        raw, _ = generate_synthetic(parse_schema("b:bernoulli\nc:categorical:3\ng:gaussian\n"), 200, 2,
                                    KernelParams(0.0, np.log([1.0, 1.0])), seed=2)
        values = np.column_stack([raw.values[:, 0], raw.values[:, 0], raw.values[:, 1], raw.values[:, 2]])
        obs = ObservationMatrix(values, np.ones(values.shape, dtype=bool), schema.names)
        hidden = np.random.default_rng(3).choice(200, size=40, replace=False)
        obs.mask[hidden, 1] = False
        data, scaling = standardize(obs, schema)
        # from random latents this fit settles on the majority class
        model = fit(schema, data, Q=3, M=20, steps=3000, init='pca')
        entries = [(int(n), 1, float(values[n, 1])) for n in hidden]
        predictions = impute(model, entries, S=100, mask=data.mask, standardization=scaling)
        accuracy = np.mean(predictions == values[hidden, 1])
        self.assertGreater(accuracy, 0.9)


if __name__ == '__main__':
    unittest.main()
