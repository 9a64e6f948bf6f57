"""Using a trained model: latent embeddings, posterior predictive scores of
held-out entries, imputation and log perplexity.

Predictive draws reuse the ELBO's sampling scheme in plain numpy. In 'mc'
mode every draw samples x_n from its marginal under q(X), U from q(U), then
f from p(f | u, x_n); in 'mean' mode X and U sit at their means and only the
conditional variance of f is sampled.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .autodiff import jittered_cholesky
from .errors import EntryNotHeldOut, InvalidConfig
from .kernel import ard_relevances, kernel_matrix
from .likelihoods import class_probabilities, log_density

logger = logging.getLogger(__name__)

# smallest predictive probability reported; lower values are floored and counted
PROBABILITY_FLOOR = 1e-300

MODES = ('mc', 'mean')


@dataclass
class LatentEmbedding:
    means: np.ndarray
    variances: np.ndarray
    relevances: np.ndarray
    dominant: np.ndarray

    @property
    def Q(self):
        return self.means.shape[1]

    def dominant_points(self):
        """N x 2 means of the two most relevant dimensions (N x 1 when Q = 1)"""
        return self.means[:, self.dominant]


def export_latents(model):
    """export_latents(model) - q(X) means and marginal variances plus ARD relevances"""
    vx = model.variational_x
    relevances, order = ard_relevances(model.kernel)
    return LatentEmbedding(vx.mean.copy(), vx.marginal_variances(), relevances, order[:2].copy())


def write_latents(path, embedding, header=None, row_ids=None):
    """CSV of point id, mu_1..mu_Q, var_1..var_Q"""
    N, Q = embedding.means.shape
    table = {'point': np.arange(N) if row_ids is None else row_ids}
    for q in range(Q):
        table[f"mu_{q + 1}"] = embedding.means[:, q]
    for q in range(Q):
        table[f"var_{q + 1}"] = embedding.variances[:, q]
    _write_frame(path, pd.DataFrame(table), header)


def write_relevances(path, embedding, header=None):
    """CSV of latent dimension, inverse lengthscale and relevance rank"""
    ranks = np.empty(embedding.Q, dtype=int)
    ranks[np.argsort(-embedding.relevances, kind='stable')] = np.arange(1, embedding.Q + 1)
    frame = pd.DataFrame({'dim': np.arange(1, embedding.Q + 1),
                          'inv_lengthscale': embedding.relevances, 'rank': ranks})
    _write_frame(path, frame, header)


def _write_frame(path, frame, header):
    with open(path, 'w', newline='') as fp:
        if header:
            fp.write(header)
        frame.to_csv(fp, index=False, float_format='%.17g')


@dataclass
class PredictiveResult:
    """per-entry natural-log predictive probabilities and their sums"""
    total: float
    per_entry: np.ndarray
    per_column: dict = field(default_factory=dict)
    floored: int = 0
    mode: str = 'mc'
    S: int = 100

    @property
    def n_entries(self):
        return int(self.per_entry.size)


def _check_entries(model, entries, mask):
    checked = []
    for entry in entries:
        n, j = int(entry[0]), int(entry[1])
        if not (0 <= n < model.N and 0 <= j < len(model.schema.columns)):
            raise EntryNotHeldOut(f"predictive_logprob() - entry ({n}, {j}) is outside the data")
        if mask is not None and mask[n, j]:
            name = model.schema.columns[j].name
            raise EntryNotHeldOut(f"predictive_logprob() - entry (row {n}, column '{name}') was observed in training")
        checked.append((n, j, float(entry[2]) if len(entry) > 2 else np.nan))
    return checked


def predictive_draws(model, rows, mode='mc', S=100, rng=None):
    """predictive_draws(model, rows, mode, S, rng) - S x len(rows) x D_f draws of F"""
    if mode not in MODES:
        raise InvalidConfig(f"predictive_draws() - mode must be one of {MODES}, got '{mode}'")
    if S < 1:
        raise InvalidConfig(f"predictive_draws() - S must be >= 1, got {S}")
    rng = rng if rng is not None else np.random.default_rng()
    rows = np.asarray(rows, dtype=int)
    kernel = model.kernel
    vx, vu = model.variational_x, model.variational_u
    Z = vu.inducing
    Lk = jittered_cholesky(kernel_matrix(kernel, Z, Z))
    mu_x = vx.mean[rows]
    sd_x = np.sqrt(vx.marginal_variances()[rows])
    u_factors = np.stack([vu.factor(d) for d in range(model.n_channels)])
    R, D = rows.size, model.n_channels
    draws = np.empty((S, R, D))
    fixed_A = None
    if mode == 'mean':
        fixed_A = solve_triangular(Lk, kernel_matrix(kernel, Z, mu_x), lower=True)
        fixed_B = solve_triangular(Lk, vu.mean, lower=True)
    for s in range(S):
        if mode == 'mc':
            X = mu_x + sd_x * rng.standard_normal((R, model.Q))
            U = vu.mean + np.einsum('dmk,kd->md', u_factors, rng.standard_normal((model.M, D)))
            A = solve_triangular(Lk, kernel_matrix(kernel, Z, X), lower=True)
            B = solve_triangular(Lk, U, lower=True)
        else:
            A, B = fixed_A, fixed_B
        var = np.maximum(kernel.variance - np.sum(A * A, axis=0), 0.0)
        draws[s] = A.T @ B + np.sqrt(var)[:, None] * rng.standard_normal((R, D))
    return draws


def _entry_logps(model, entries, draws, row_index, standardization):
    """S x E natural-log densities of each entry's true value under every draw"""
    S = draws.shape[0]
    logps = np.empty((S, len(entries)))
    for e, (n, j, value) in enumerate(entries):
        column = model.schema.columns[j]
        start, stop = model.channel_map.ranges[j]
        f = draws[:, row_index[n], start:stop]
        if column.kind == 'gaussian':
            shift, scale = 0.0, 1.0
            if standardization is not None:
                shift, scale = standardization.mean[j], standardization.scale[j]
            logps[:, e] = log_density(column.likelihood, (value - shift) / scale, f,
                                      model.noise_variance(j)) - np.log(scale)
        else:
            logps[:, e] = log_density(column.likelihood, value, f)
    return logps


def _draws_for(model, entries, mode, S, seed):
    rows = sorted({n for n, _, _ in entries})
    row_index = {n: i for i, n in enumerate(rows)}
    draws = predictive_draws(model, rows, mode, S, np.random.default_rng(seed))
    return draws, row_index


def predictive_logprob(model, entries, mode='mc', S=100, seed=0, mask=None, standardization=None):
    """predictive_logprob(model, entries, mode, S) - held-out test log-likelihood

    Each entry (row, column index, true value) scores
    log[(1/S) sum_s p(y | f^s)], floored at log(1e-300). Gaussian values are
    compared in data units when a standardization is given. mask is the
    training mask; querying an entry it marks observed raises EntryNotHeldOut.

    Returns:
        PredictiveResult
    """
    entries = _check_entries(model, entries, mask)
    if not entries:
        return PredictiveResult(0.0, np.zeros(0), {}, 0, mode, S)
    draws, row_index = _draws_for(model, entries, mode, S, seed)
    logps = _entry_logps(model, entries, draws, row_index, standardization)
    per_entry = logsumexp(logps, axis=0) - np.log(S)
    floor = np.log(PROBABILITY_FLOOR)
    floored = int(np.sum(per_entry < floor))
    if floored:
        logger.warning("predictive_logprob(): %d entries floored at probability %g", floored, PROBABILITY_FLOOR)
    per_entry = np.maximum(per_entry, floor)
    per_column = {}
    for (n, j, _), value in zip(entries, per_entry):
        name = model.schema.columns[j].name
        per_column[name] = per_column.get(name, 0.0) + float(value)
    return PredictiveResult(float(per_entry.sum()), per_entry, per_column, floored, mode, S)


def predictive_probabilities(model, entries, mode='mc', S=100, seed=0):
    """len(entries) x K averaged class probabilities of bernoulli/categorical entries"""
    entries = [(int(e[0]), int(e[1]), np.nan) for e in entries]
    draws, row_index = _draws_for(model, entries, mode, S, seed)
    out = []
    for n, j, _ in entries:
        start, stop = model.channel_map.ranges[j]
        probs = class_probabilities(model.schema.columns[j].likelihood, draws[:, row_index[n], start:stop])
        out.append(probs.mean(axis=0))
    return out


def impute(model, entries, S=100, seed=0, mode='mc', mask=None, standardization=None):
    """impute(model, entries, S) - point predictions of held-out entries

    gaussian: predictive mean (data units); bernoulli and categorical: most
    probable class; poisson: rounded predictive mean.

    Example:
        categorical predictive (0.1, 0.7, 0.2) ==> class 1
    """
    entries = _check_entries(model, entries, mask)
    if not entries:
        return np.zeros(0)
    draws, row_index = _draws_for(model, entries, mode, S, seed)
    predictions = np.empty(len(entries))
    for e, (n, j, _) in enumerate(entries):
        column = model.schema.columns[j]
        start, stop = model.channel_map.ranges[j]
        f = draws[:, row_index[n], start:stop]
        if column.kind == 'gaussian':
            value = f[:, 0].mean()
            if standardization is not None:
                value = value * standardization.scale[j] + standardization.mean[j]
        elif column.kind == 'poisson':
            value = np.round(np.exp(f[:, 0]).mean())
        else:
            value = np.argmax(class_probabilities(column.likelihood, f).mean(axis=0))
        predictions[e] = value
    return predictions


def log_perplexity(model, entries, S=100, seed=0, mode='mc', mask=None, standardization=None):
    """log_perplexity(model, entries, S) - -(1/E) sum log2 p(y_e), NaN without entries

    Example:
        uniform predictive over 2 classes ==> 1.0
    """
    result = predictive_logprob(model, entries, mode, S, seed, mask, standardization)
    if result.n_entries == 0:
        return float('nan')
    return float(-np.mean(result.per_entry) / np.log(2.0))


def write_predictions(path, model, entries, predictions, result, header=None):
    """CSV of row, column, true value, prediction and predictive log-probability"""
    frame = pd.DataFrame({
        'row': [int(e[0]) for e in entries],
        'column': [model.schema.columns[int(e[1])].name for e in entries],
        'value': [float(e[2]) for e in entries],
        'prediction': predictions,
        'logprob': result.per_entry,
    })
    _write_frame(path, frame, header)
