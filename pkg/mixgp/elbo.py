"""The stochastic evidence lower bound

    ELBO = E_q[log p(Y | F)] - KL(q(U) || p(U)) - KL(q(X) || p(X))

The expectation is a T-sample Monte Carlo average. Each sample draws X and
U by reparameterization and then F from the marginal conditionals
p(f_nd | u_d, x_n); the integrand factorizes over (n, d), so the diagonal of
the conditional covariance is all that is needed. Missing entries contribute
nothing. One tape holds all T samples and K_zz is factored once on it.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, stable_cholesky
from .errors import InvalidConfig, NegativeVariance, ShapeMismatch
from .kernel import gram
from .likelihoods import LikelihoodSpec, log_prob
from .variational import kl_q_p_U, kl_q_p_X, sample_U, sample_X

logger = logging.getLogger(__name__)

# conditional variances below -NEGATIVE_TOLERANCE are a numerical failure,
# anything between that and 0 is rounding and is clamped to 0
NEGATIVE_TOLERANCE = 1e-8


@dataclass
class ElboEstimate:
    """one ELBO evaluation; gradients are d(-ELBO)/d(parameter), keyed by name"""
    value: float
    kl_x: float
    kl_u: float
    expected_loglik: float
    T: int
    gradients: dict = field(default=None, repr=False)


def draw_noise(rng, N, Q, M, n_channels, T):
    """T independent (eps_X, eps_U, eps_F) triples of standard normals"""
    return [(rng.standard_normal((N, Q)),
             rng.standard_normal((M, n_channels)),
             rng.standard_normal((N, n_channels))) for _ in range(T)]


def conditional_F(tape, log_variance, log_inv_lengthscales, X, Z, U, eps_f, kzz_chol=None):
    """conditional_F(tape, ..., X, Z, U, eps_f) - one draw of F from p(F | U, X)

    Per point n and channel d the mean is k(x_n, Z) K_zz^{-1} u_d and the
    variance k(x_n, x_n) - k(x_n, Z) K_zz^{-1} k(Z, x_n); the draw is
    mean + sqrt(variance) * eps_f. Pass kzz_chol to reuse a factorization.
    """
    if kzz_chol is None:
        kzz_chol = stable_cholesky(tape, gram(tape, log_variance, log_inv_lengthscales, Z, Z))
    N = tape.value(X).shape[0]
    D = tape.value(U).shape[1]
    eps_f = np.asarray(eps_f, dtype=np.float64)
    if eps_f.shape != (N, D):
        raise ShapeMismatch(f"conditional_F() - eps_f {eps_f.shape}, expected ({N}, {D})")
    kzx = gram(tape, log_variance, log_inv_lengthscales, Z, X)
    A = tape.trisolve(kzz_chol, kzx)
    mean = tape.matmul(tape.transpose(A), tape.trisolve(kzz_chol, U))
    var = tape.transpose(tape.sub(tape.exp(log_variance), tape.sum_axis(tape.square(A), axis=0)))
    lowest = float(np.min(tape.value(var)))
    if lowest < -NEGATIVE_TOLERANCE:
        raise NegativeVariance(f"conditional_F() - conditional variance {lowest:.3g} is negative")
    std = tape.sqrt(tape.clip_min(var, 0.0))
    return tape.add(mean, tape.mul(std, tape.constant(eps_f)))


def likelihood_groups(schema, channel_map):
    """split columns into vectorizable groups

    Returns:
        (dict, list): kind -> (column indexes, channel indexes) for the
        single-channel kinds, and (column, start, stop, spec) per categorical
    """
    groups = {'gaussian': ([], []), 'bernoulli': ([], []), 'poisson': ([], [])}
    categorical = []
    for j, column in enumerate(schema.columns):
        start, stop = channel_map.ranges[j]
        if column.kind == 'categorical':
            categorical.append((j, start, stop, column.likelihood))
        else:
            groups[column.kind][0].append(j)
            groups[column.kind][1].append(start)
    return groups, categorical


def _sample_loglik(tape, nodes, data, F, groups, categorical):
    terms = []
    for kind, (cols, chans) in groups.items():
        if not cols:
            continue
        f = tape.take_cols(F, chans)
        noise = nodes['log_noise'] if kind == 'gaussian' else None
        terms.append(log_prob(tape, LikelihoodSpec(kind), data.values[:, cols], f,
                              log_noise=noise, mask=data.mask[:, cols]))
    for j, start, stop, spec in categorical:
        f = tape.take_cols(F, list(range(start, stop)))
        terms.append(log_prob(tape, spec, data.values[:, j], f, mask=data.mask[:, j]))
    total = terms[0]
    for term in terms[1:]:
        total = tape.add(total, term)
    return total


def mc_expected_loglik(tape, nodes, model, data, noise, kzz_chol=None):
    """mc_expected_loglik(tape, nodes, model, data, noise) - (1/T) sum_t log p(Y_obs | F^t)

    nodes maps parameter names to ids on tape (ModelState.attach); noise is a
    list of T (eps_X, eps_U, eps_F) triples.
    """
    if not noise:
        raise InvalidConfig("mc_expected_loglik() - need at least one Monte Carlo sample")
    lv, lg = nodes['log_variance'], nodes['log_inv_lengthscales']
    if kzz_chol is None:
        kzz_chol = stable_cholesky(tape, gram(tape, lv, lg, nodes['inducing'], nodes['inducing']))
    groups, categorical = likelihood_groups(model.schema, model.channel_map)
    total = None
    for eps_x, eps_u, eps_f in noise:
        X = sample_X(tape, nodes['x_mean'], nodes['x_scale'], eps_x, full=model.full_cov)
        U = sample_U(tape, nodes['u_mean'], nodes['u_scale'], eps_u)
        F = conditional_F(tape, lv, lg, X, nodes['inducing'], U, eps_f, kzz_chol=kzz_chol)
        ll = _sample_loglik(tape, nodes, data, F, groups, categorical)
        total = ll if total is None else tape.add(total, ll)
    return tape.scale(total, 1.0 / len(noise))


def elbo(model, data, T=10, rng=None, noise=None, with_gradients=True):
    """elbo(model, data, T, rng) - Monte Carlo ELBO estimate and its gradients

    Noise comes from rng (T triples) unless an explicit noise list is passed;
    reusing the same noise gives common random numbers across evaluations.
    The tape root is -ELBO, so the returned gradients are loss gradients.
    """
    if data.values.shape != (model.N, len(model.schema.columns)):
        raise ShapeMismatch(f"elbo() - data {data.values.shape} does not match model ({model.N}, {len(model.schema.columns)})")
    if noise is None:
        if T < 1:
            raise InvalidConfig(f"elbo() - T must be >= 1, got {T}")
        rng = rng if rng is not None else np.random.default_rng()
        noise = draw_noise(rng, model.N, model.Q, model.M, model.n_channels, T)
    tape = Tape()
    nodes = model.attach(tape)
    lv, lg = nodes['log_variance'], nodes['log_inv_lengthscales']
    kzz_chol = stable_cholesky(tape, gram(tape, lv, lg, nodes['inducing'], nodes['inducing']))
    kl_x = kl_q_p_X(tape, nodes['x_mean'], nodes['x_scale'], full=model.full_cov)
    kl_u = kl_q_p_U(tape, nodes['u_mean'], nodes['u_scale'], kzz_chol)
    ell = mc_expected_loglik(tape, nodes, model, data, noise, kzz_chol=kzz_chol)
    loss = tape.sub(tape.add(kl_x, kl_u), ell)
    estimate = ElboEstimate(-tape.scalar(loss), tape.scalar(kl_x), tape.scalar(kl_u),
                            tape.scalar(ell), len(noise))
    if with_gradients:
        estimate.gradients = tape.gradients(loss)
    return estimate
