"""The variational family q(X) q(U).

q(X) factorizes over latent dimensions q, q(U) over function channels d.
Covariances are held as Cholesky factors in packed form: one square array
whose strictly-lower part is the factor's lower part and whose diagonal is
the log of the factor's diagonal (see Tape.lower_from_packed). In the
default diagonal mode q(X) keeps an N x Q array of log standard deviations
instead.

The samplers and KL terms take node ids so the ELBO can differentiate them;
eps draws come from the caller, which owns the RNG.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


@dataclass
class VariationalX:
    """q(X): N x Q means plus N x Q log std (diag) or Q x N x N packed factors (full)"""
    mean: np.ndarray
    scale: np.ndarray
    full: bool = False

    @classmethod
    def initial(cls, N, Q, rng, full=False):
        """means ~ N(0, 1), covariances = I"""
        mean = rng.standard_normal((N, Q))
        scale = np.zeros((Q, N, N)) if full else np.zeros((N, Q))
        return cls(mean, scale, full)

    def factor(self, q):
        """lower Cholesky factor of Sigma_q"""
        if not self.full:
            return np.diag(np.exp(self.scale[:, q]))
        return _unpack(self.scale[q])

    def covariance(self, q):
        L = self.factor(q)
        return L @ L.T

    def marginal_variances(self):
        """N x Q diagonal of every Sigma_q"""
        if not self.full:
            return np.exp(2.0 * self.scale)
        return np.stack([np.sum(_unpack(w) ** 2, axis=1) for w in self.scale], axis=1)


@dataclass
class VariationalU:
    """q(U): inducing inputs Z (M x Q), means (M x D_f), D_f x M x M packed factors"""
    inducing: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def initial(cls, M, Q, n_channels, rng):
        inducing = rng.standard_normal((M, Q))
        mean = rng.standard_normal((M, n_channels))
        return cls(inducing, mean, np.zeros((n_channels, M, M)))

    def factor(self, d):
        return _unpack(self.scale[d])

    def covariance(self, d):
        L = self.factor(d)
        return L @ L.T


def _unpack(w):
    L = np.tril(w, -1)
    np.fill_diagonal(L, np.exp(np.diag(w)))
    return L


def sample_X(tape, mean, scale, eps, full=False):
    """sample_X(tape, mean, scale, eps) - X = mu_q + L_q eps_q for every latent dim q

    mean and scale are node ids; eps is an N x Q array of standard normals.
    """
    mu = tape.value(mean)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.shape:
        raise ShapeMismatch(f"sample_X() - eps {eps.shape} does not match mean {mu.shape}")
    if not full:
        return tape.add(mean, tape.mul(tape.exp(scale), tape.constant(eps)))
    return tape.add(mean, _batched_factor_times(tape, scale, eps))


def sample_U(tape, mean, scale, eps):
    """sample_U(tape, mean, scale, eps) - U = mu_d + L_d eps_d for every channel d"""
    mu = tape.value(mean)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.shape:
        raise ShapeMismatch(f"sample_U() - eps {eps.shape} does not match mean {mu.shape}")
    return tape.add(mean, _batched_factor_times(tape, scale, eps))


def _batched_factor_times(tape, scale, eps):
    # eps is rows x B; scale packs B factors of rows x rows
    rows, batch = eps.shape
    L = tape.lower_from_packed(scale)
    e = tape.constant(eps.T.reshape(batch, rows, 1))
    le = tape.reshape(tape.matmul(L, e), (batch, rows))
    return tape.transpose(le)


def kl_q_p_X(tape, mean, scale, full=False):
    """KL(q(X) || N(0, I)) summed over latent dimensions"""
    N, Q = tape.value(mean).shape
    maha = tape.sum(tape.square(mean))
    if full:
        trace = tape.sum(tape.square(tape.lower_from_packed(scale)))
        logdet = tape.scale(tape.sum(tape.diag_part(scale)), 2.0)
    else:
        trace = tape.sum(tape.exp(tape.scale(scale, 2.0)))
        logdet = tape.scale(tape.sum(scale), 2.0)
    kl = tape.sub(tape.add(trace, maha), logdet)
    return tape.scale(tape.shift(kl, -float(N * Q)), 0.5)


def kl_q_p_U(tape, mean, scale, kzz_chol):
    """KL(q(U) || N(0, K_zz)) summed over channels

    kzz_chol is the node of the (jittered) Cholesky factor of K_zz, so the
    factorization done for conditional_F is shared.
    """
    M, D = tape.value(mean).shape
    L = tape.lower_from_packed(scale)
    maha = tape.sum(tape.square(tape.trisolve(kzz_chol, mean)))
    stacked = tape.reshape(tape.permute(L, (1, 0, 2)), (M, D * M))
    trace = tape.sum(tape.square(tape.trisolve(kzz_chol, stacked)))
    logdet_k = tape.scale(tape.sum(tape.log(tape.diag_part(kzz_chol))), 2.0 * D)
    logdet_s = tape.scale(tape.sum(tape.diag_part(scale)), 2.0)
    kl = tape.add(tape.add(trace, maha), tape.sub(logdet_k, logdet_s))
    return tape.scale(tape.shift(kl, -float(D * M)), 0.5)
