"""Model parameters, RMSProp and the training loop.

Every trainable quantity lives in ModelState.params as a float64 array:

    log_variance            1 x 1     log s2 of the kernel
    log_inv_lengthscales    1 x Q     log g_q
    x_mean                  N x Q     means of q(X)
    x_scale                 N x Q     log std (diag)  or  Q x N x N packed factors (full)
    inducing                M x Q     inducing inputs Z
    u_mean                  M x D_f   means of q(U)
    u_scale                 D_f x M x M packed factors of q(U)
    log_noise               1 x G     log s2_d of the G gaussian columns

Positivity and triangularity hold by representation, so any finite array is
a valid parameter value.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import _version_, config_hash
from .data import ObservationMatrix, Standardization, parse_schema
from .elbo import elbo
from .errors import (InvalidConfig, NegativeVariance, NonFiniteGradient, NotPositiveDefinite,
                     SchemaMismatch, TrainingAborted)
from .kernel import KernelParams
from .likelihoods import INITIAL_NOISE_VARIANCE
from .metrics import one_hot_encode, pca_baseline
from .variational import VariationalU, VariationalX

logger = logging.getLogger(__name__)

PARAMETER_NAMES = ('log_variance', 'log_inv_lengthscales', 'x_mean', 'x_scale',
                   'inducing', 'u_mean', 'u_scale', 'log_noise')

CHECKPOINT_FORMAT = 'mixgp-checkpoint'


class ModelState:
    """all trainable parameters of one model, by name"""

    def __init__(self, schema, params, full_cov=False):
        self.schema = schema
        self.params = params
        self.full_cov = full_cov
        self.channel_map = schema.channel_map()
        self.gaussian_columns = [j for j, c in enumerate(schema.columns) if c.kind == 'gaussian']

    @property
    def N(self):
        return self.params['x_mean'].shape[0]

    @property
    def Q(self):
        return self.params['x_mean'].shape[1]

    @property
    def M(self):
        return self.params['inducing'].shape[0]

    @property
    def n_channels(self):
        return self.channel_map.n_channels

    @property
    def kernel(self):
        return KernelParams(float(self.params['log_variance'][0, 0]),
                            self.params['log_inv_lengthscales'].ravel().copy())

    @property
    def variational_x(self):
        return VariationalX(self.params['x_mean'], self.params['x_scale'], self.full_cov)

    @property
    def variational_u(self):
        return VariationalU(self.params['inducing'], self.params['u_mean'], self.params['u_scale'])

    def noise_variance(self, column):
        """s2_d of a gaussian column (schema index)"""
        g = self.gaussian_columns.index(column)
        return float(np.exp(self.params['log_noise'][0, g]))

    def attach(self, tape):
        """put every parameter on tape as a leaf; returns name -> node id"""
        return {name: tape.parameter(name, self.params[name]) for name in PARAMETER_NAMES if name in self.params}

    def gradient_masks(self):
        """0/1 multipliers for parameters with frozen entries"""
        masks = {}
        if 'log_noise' in self.params:
            fixed = [self.schema.columns[j].likelihood.fixed_noise for j in self.gaussian_columns]
            if any(fixed):
                masks['log_noise'] = np.where(fixed, 0.0, 1.0).reshape(1, -1)
        return masks

    def check_structure(self):
        """raise TrainingAborted if a parameter went non-finite or changed shape"""
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise TrainingAborted(f"ModelState.check_structure() - parameter '{name}' is not finite")
        expected_scale = (self.Q, self.N, self.N) if self.full_cov else (self.N, self.Q)
        if self.params['x_scale'].shape != expected_scale:
            raise TrainingAborted(f"ModelState.check_structure() - x_scale has shape {self.params['x_scale'].shape}")
        if self.params['u_scale'].shape != (self.n_channels, self.M, self.M):
            raise TrainingAborted(f"ModelState.check_structure() - u_scale has shape {self.params['u_scale'].shape}")

    def copy(self):
        return ModelState(self.schema, {k: v.copy() for k, v in self.params.items()}, self.full_cov)


def _pca_means(schema, data, Q):
    encoded = one_hot_encode(schema, data)
    seen = ~np.isnan(encoded)
    fill = np.nansum(encoded, axis=0) / np.maximum(seen.sum(axis=0), 1)
    encoded = np.where(np.isnan(encoded), fill, encoded)
    k = min(Q, encoded.shape[1])
    projection = pca_baseline(encoded, k)[0]
    sd = projection.std(axis=0)
    return projection / np.where(sd > 0, sd, 1.0)


def init_model(schema, N, Q, M, seed=0, full_cov=False, init='random', data=None):
    """init_model(schema, N, Q, M, seed) - the standard starting point

    mu_X, Z and mu_U ~ N(0, 1); every covariance = I; s2 = 1; every g_q = 0.5;
    s2_d = 0.1 for gaussian columns. init='pca' replaces the leading dims of
    mu_X with the unit-variance PCA projection of data.
    """
    if Q < 1 or M < 1 or N < 1:
        raise InvalidConfig(f"init_model() - need N, Q, M >= 1, got N={N}, Q={Q}, M={M}")
    if init not in ('random', 'pca'):
        raise InvalidConfig(f"init_model() - unknown init '{init}'")
    cmap = schema.channel_map()
    rng = np.random.default_rng(seed)
    vx = VariationalX.initial(N, Q, rng, full=full_cov)
    vu = VariationalU.initial(M, Q, cmap.n_channels, rng)
    if init == 'pca':
        if data is None:
            raise InvalidConfig("init_model() - init='pca' needs the data")
        means = _pca_means(schema, data, Q)
        vx.mean[:, :means.shape[1]] = means
    kernel = KernelParams.initial(Q)
    params = {
        'log_variance': np.array([[kernel.log_variance]]),
        'log_inv_lengthscales': kernel.log_inv_lengthscales.reshape(1, Q),
        'x_mean': vx.mean,
        'x_scale': vx.scale,
        'inducing': vu.inducing,
        'u_mean': vu.mean,
        'u_scale': vu.scale,
    }
    G = sum(1 for c in schema.columns if c.kind == 'gaussian')
    if G:
        params['log_noise'] = np.full((1, G), np.log(INITIAL_NOISE_VARIANCE))
    logger.debug("init_model(): N=%d Q=%d M=%d channels=%d full_cov=%s", N, Q, M, cmap.n_channels, full_cov)
    return ModelState(schema, params, full_cov)


def rmsprop_step(params, grads, mean_squares, lr=1e-3, decay=0.9, eps=1e-8):
    """rmsprop_step(params, grads, mean_squares, lr, decay, eps) - one update of every parameter

        acc   <- decay * acc + (1 - decay) * g^2
        param <- param - lr * g / (sqrt(acc) + eps)

    Nothing is updated if any gradient is non-finite.

    Returns:
        (dict, dict): new parameters and new accumulators
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"rmsprop_step() - gradient of '{name}' is not finite")
    new_params, new_squares = {}, {}
    for name, value in params.items():
        g = grads.get(name)
        acc = mean_squares.get(name, np.zeros_like(value))
        if g is None:
            new_params[name], new_squares[name] = value, acc
            continue
        acc = decay * acc + (1.0 - decay) * (g * g)
        new_params[name] = value - lr * g / (np.sqrt(acc) + eps)
        new_squares[name] = acc
    return new_params, new_squares


class RMSProp:
    """RMSProp with per-parameter second-moment accumulators"""

    def __init__(self, learning_rate=1e-3, decay=0.9, epsilon=1e-8, mean_squares=None):
        self._lr = learning_rate
        self._decay = decay
        self._eps = epsilon
        self._mean_squares = mean_squares if mean_squares is not None else {}

    @property
    def mean_squares(self):
        return self._mean_squares

    def apply_gradients(self, params, grads):
        params, self._mean_squares = rmsprop_step(params, grads, self._mean_squares,
                                                  self._lr, self._decay, self._eps)
        return params


@dataclass
class TrainState:
    """optimizer progress: step counter, accumulators and the ELBO trace

    trace rows are (step, elbo, kl_x, kl_u, expected_loglik) of accepted steps.
    """
    seed: int = 0
    step: int = 0
    optimizer: RMSProp = field(default_factory=RMSProp)
    trace: list = field(default_factory=list)
    rejected: int = 0
    converged: bool = False

    @property
    def elbo_values(self):
        return np.array([row[1] for row in self.trace])


def smoothed(values, smooth):
    """trailing moving average over smooth values (shorter at the start)"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(idx - smooth, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def has_converged(values, smooth=100, window=500, tol=1e-4):
    """has_converged(values) - True once the smoothed ELBO improved by less than
    tol (relative) over the last window steps"""
    if len(values) < window + smooth:
        return False
    now = float(np.mean(values[-smooth:]))
    then = float(np.mean(values[-(window + smooth):-window]))
    return now - then < tol * abs(then)


def train(model, data, config, state=None):
    """train(model, data, config) - maximise the ELBO with RMSProp

    Every step draws fresh noise from SeedSequence([seed, step]), so a run is
    determined by its seed and resumes exactly from (model, state). Stops at
    config.max_steps total steps or on convergence.

    Returns:
        (ModelState, TrainState, list): trained copy, progress, ELBO trace
    """
    model = model.copy()
    if state is None:
        state = TrainState(seed=int(config.seed),
                           optimizer=RMSProp(config.lr, config.decay, config.eps))
    masks = model.gradient_masks()
    while state.step < config.max_steps and not state.converged:
        step = state.step
        rng = np.random.default_rng([state.seed, step])
        state.step += 1
        try:
            estimate = elbo(model, data, T=config.T, rng=rng)
        except (NotPositiveDefinite, NegativeVariance) as e:
            raise TrainingAborted(f"train() - step {step}: {e}") from e
        grads = {name: g * masks[name] if name in masks else g for name, g in estimate.gradients.items()}
        try:
            if not np.isfinite(estimate.value):
                raise NonFiniteGradient(f"train() - ELBO is {estimate.value}")
            model.params = state.optimizer.apply_gradients(model.params, grads)
        except NonFiniteGradient as e:
            state.rejected += 1
            logger.warning("step %d rejected: %s", step, e)
            continue
        model.check_structure()
        state.trace.append((step, estimate.value, estimate.kl_x, estimate.kl_u, estimate.expected_loglik))
        if step % config.log_every == 0:
            logger.info("step %d: elbo %.4f kl_x %.4f kl_u %.4f loglik %.4f", step,
                        estimate.value, estimate.kl_x, estimate.kl_u, estimate.expected_loglik)
        state.converged = has_converged(state.elbo_values, config.smooth, config.window, config.tol)
        if state.converged:
            logger.info("converged at step %d", step)
    return model, state, state.trace


def _array(value):
    return {'shape': list(value.shape), 'data': value.ravel().tolist()}


def _unarray(blob):
    return np.array(blob['data'], dtype=np.float64).reshape(blob['shape'])


def save_checkpoint(path, model, state, config, data=None, standardization=None, holdout=None):
    """write everything needed to resume training or evaluate as JSON

    Floats are written with repr precision, so save -> load -> save is
    byte-identical.
    """
    blob = {
        'format': CHECKPOINT_FORMAT,
        'version': _version_,
        'seed': int(config['seed']),
        'config_hash': config_hash(config),
        'config': {k: v for k, v in config.items() if k != 'output_dir'},
        'schema': model.schema.to_text(),
        'full_cov': model.full_cov,
        'params': {name: _array(value) for name, value in model.params.items()},
        'optimizer': {
            'lr': state.optimizer._lr,
            'decay': state.optimizer._decay,
            'eps': state.optimizer._eps,
            'mean_squares': {name: _array(v) for name, v in state.optimizer.mean_squares.items()},
        },
        'state': {
            'seed': state.seed,
            'step': state.step,
            'rejected': state.rejected,
            'converged': state.converged,
            'trace': [list(row) for row in state.trace],
        },
    }
    if data is not None:
        blob['data'] = {
            'values': _array(data.values),
            'mask': data.mask.astype(int).ravel().tolist(),
            'labels': None if data.labels is None else [str(v) for v in data.labels],
            'row_ids': [int(r) for r in data.row_ids],
        }
    if standardization is not None:
        blob['standardization'] = {'mean': standardization.mean.tolist(), 'scale': standardization.scale.tolist()}
    if holdout is not None:
        blob['holdout'] = [list(e) for e in holdout.entries]
    with open(path, 'w') as fp:
        json.dump(blob, fp, indent=1, sort_keys=True)
        fp.write('\n')


@dataclass
class Checkpoint:
    """a loaded checkpoint; data, standardization and holdout may be None"""
    model: ModelState
    state: TrainState
    config: dict
    data: ObservationMatrix = None
    standardization: Standardization = None
    holdout: list = None

    @property
    def schema(self):
        return self.model.schema


def load_checkpoint(path):
    """load_checkpoint(path) - Checkpoint from a save_checkpoint file"""
    with open(path) as fp:
        try:
            blob = json.load(fp)
        except json.JSONDecodeError as e:
            raise SchemaMismatch(f"load_checkpoint() - {path} is not a checkpoint: {e}")
    if blob.get('format') != CHECKPOINT_FORMAT:
        raise SchemaMismatch(f"load_checkpoint() - {path} is not a checkpoint")
    schema = parse_schema(blob['schema'])
    params = {name: _unarray(v) for name, v in blob['params'].items()}
    model = ModelState(schema, params, blob['full_cov'])
    opt = blob['optimizer']
    optimizer = RMSProp(opt['lr'], opt['decay'], opt['eps'],
                        {name: _unarray(v) for name, v in opt['mean_squares'].items()})
    s = blob['state']
    state = TrainState(s['seed'], s['step'], optimizer, [tuple(row) for row in s['trace']],
                       s['rejected'], s['converged'])
    checkpoint = Checkpoint(model, state, blob['config'])
    if 'data' in blob:
        d = blob['data']
        values = _unarray(d['values'])
        mask = np.array(d['mask'], dtype=bool).reshape(values.shape)
        labels = None if d['labels'] is None else np.array(d['labels'], dtype=object)
        checkpoint.data = ObservationMatrix(values, mask, schema.names, labels, np.array(d['row_ids'], dtype=int))
    if 'standardization' in blob:
        st = blob['standardization']
        checkpoint.standardization = Standardization(np.array(st['mean']), np.array(st['scale']))
    if 'holdout' in blob:
        checkpoint.holdout = [(int(n), int(j), float(v)) for n, j, v in blob['holdout']]
    return checkpoint
