"""ARD RBF covariance function

    k(x, x') = s2 * exp(-1/2 * sum_q g_q * (x_q - x'_q)^2)

with variance s2 and inverse lengthscales g_q, both stored as logs. A large
g_q means latent dimension q is relevant; g_q -> 0 switches it off.
"""
from dataclasses import dataclass, field

import numpy as np

from .autodiff import adjoint, as_matrix
from .errors import ShapeMismatch

# initial inverse lengthscale of every latent dimension
INITIAL_INV_LENGTHSCALE = 0.5


@dataclass
class KernelParams:
    """log variance and log inverse lengthscales of the ARD RBF kernel"""
    log_variance: float = 0.0
    log_inv_lengthscales: np.ndarray = field(default_factory=lambda: np.zeros(1))

    @classmethod
    def initial(cls, Q):
        """s2 = 1 and every g_q = 0.5"""
        return cls(0.0, np.full(Q, np.log(INITIAL_INV_LENGTHSCALE)))

    @property
    def Q(self):
        return int(np.size(self.log_inv_lengthscales))

    @property
    def variance(self):
        return float(np.exp(self.log_variance))

    @property
    def inv_lengthscales(self):
        return np.exp(np.ravel(self.log_inv_lengthscales))


def _sq_diffs(A, B):
    """(a_iq - b_jq)^2 as an N x M x Q array"""
    return np.square(A[:, None, :] - B[None, :, :])


def kernel_matrix(params, A, B):
    """kernel_matrix(params, A, B) - N x M covariance between the rows of A and B"""
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape[1] != params.Q or B.shape[1] != params.Q:
        raise ShapeMismatch(f"kernel_matrix() - inputs {A.shape}, {B.shape} do not have Q={params.Q} columns")
    d2 = _sq_diffs(A, B) @ params.inv_lengthscales
    return params.variance * np.exp(-0.5 * d2)


def kernel_eval(params, x, x2):
    """kernel_eval(params, x, x2) - covariance of two Q-vectors

    Example:
        kernel_eval(KernelParams(0.0, np.log([2.0])), [0.0], [1.0]) ==> exp(-1)
    """
    x = np.ravel(np.asarray(x, dtype=np.float64))
    x2 = np.ravel(np.asarray(x2, dtype=np.float64))
    if x.shape != x2.shape or x.size != params.Q:
        raise ShapeMismatch(f"kernel_eval() - vectors of length {x.size} and {x2.size}, expected {params.Q}")
    return float(kernel_matrix(params, x[None, :], x2[None, :])[0, 0])


def gram(tape, log_variance, log_inv_lengthscales, A, B):
    """gram(tape, log_variance, log_inv_lengthscales, A, B) - kernel matrix node

    All four arguments are node ids on tape: a 1x1 log variance, a 1xQ row of
    log inverse lengthscales, and N x Q / M x Q inputs. Passing the same node
    for A and B gives the symmetric gram of one point set.
    """
    lv = tape.value(log_variance)
    lg = tape.value(log_inv_lengthscales)
    va, vb = tape.value(A), tape.value(B)
    Q = lg.size
    if va.shape[1] != Q or vb.shape[1] != Q:
        raise ShapeMismatch(f"gram() - inputs {va.shape}, {vb.shape} do not have Q={Q} columns")
    params = KernelParams(float(lv[0, 0]), lg.ravel())
    return tape.record('ard_rbf', [log_variance, log_inv_lengthscales, A, B], kernel_matrix(params, va, vb))


@adjoint('ard_rbf')
def _ard_rbf(node, g, tape):
    lv, lg, a, b = node.parents
    A, B = tape.value(a), tape.value(b)
    gamma = np.exp(tape.value(lg).ravel())
    W = g * node.value
    rows = W.sum(axis=1)
    cols = W.sum(axis=0)
    g_lv = np.array([[W.sum()]])
    g_gamma = -0.5 * np.einsum('ij,ijq->q', W, _sq_diffs(A, B))
    g_lg = (gamma * g_gamma).reshape(1, -1)
    g_a = -gamma * (A * rows[:, None] - W @ B)
    g_b = gamma * (W.T @ A - B * cols[:, None])
    return g_lv, g_lg, g_a, g_b


def ard_relevances(params):
    """ard_relevances(params) - inverse lengthscales and their descending order

    Returns:
        (ndarray, ndarray): gamma (length Q) and the indices sorting it from most
        to least relevant (stable, so ties keep dimension order)
    """
    gamma = params.inv_lengthscales
    return gamma, np.argsort(-gamma, kind='stable')
