"""Per-column observation models with canonical inverse links.

    gaussian      y ~ N(f, s2_d)            (s2_d trainable, stored as a log)
    bernoulli     y ~ Ber(sigmoid(f))
    categorical   y ~ Cat(softmax(f))       K channels, or K-1 with a leading 0 logit
    poisson       y ~ Pois(exp(f))

Two flavours of every model live here: log_prob() records onto a Tape and is
what the ELBO differentiates; log_density() and friends are plain numpy and
serve prediction and sampling.
"""
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import EmptySchema, MissingValue, ShapeMismatch, UnsupportedValue

KINDS = ('gaussian', 'bernoulli', 'categorical', 'poisson')

# initial s2_d of every gaussian column
INITIAL_NOISE_VARIANCE = 0.1

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LikelihoodSpec:
    """likelihood declaration of one observed column

    kind is one of KINDS; n_classes is K for categorical columns (0 otherwise);
    constrained pins the first categorical logit to 0; fixed_noise freezes the
    gaussian variance at its initial value.
    """
    kind: str
    n_classes: int = 0
    constrained: bool = False
    fixed_noise: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedValue(f"LikelihoodSpec() - unknown likelihood '{self.kind}'")
        if self.kind == 'categorical' and self.n_classes < 2:
            raise UnsupportedValue(f"LikelihoodSpec() - categorical needs K >= 2, got {self.n_classes}")

    @classmethod
    def parse(cls, text, constrained=False, fixed_noise=False):
        """parse('gaussian'), parse('categorical:3') ..."""
        parts = text.strip().split(':')
        kind = parts[0].lower()
        if kind == 'categorical':
            try:
                n = int(parts[1])
            except (IndexError, ValueError):
                raise UnsupportedValue(f"LikelihoodSpec.parse() - '{text}' must look like categorical:K")
            return cls(kind, n, constrained=constrained)
        if len(parts) > 1:
            raise UnsupportedValue(f"LikelihoodSpec.parse() - '{text}' takes no arguments")
        return cls(kind, fixed_noise=fixed_noise and kind == 'gaussian')

    @property
    def n_channels(self):
        if self.kind == 'categorical':
            return self.n_classes - 1 if self.constrained else self.n_classes
        return 1

    def __str__(self):
        if self.kind == 'categorical':
            return f"categorical:{self.n_classes}"
        return self.kind


@dataclass
class ChannelMap:
    """contiguous channel ranges [start, stop) of each column, in schema order"""
    names: list
    ranges: list
    n_channels: int

    def range_of(self, column):
        if isinstance(column, str):
            column = self.names.index(column)
        return self.ranges[column]


def build_channel_map(schema):
    """build_channel_map(schema) - lay the columns' channels side by side

    Example:
        5 gaussian + 3 bernoulli + categoricals (3,3,3,4,4) ==> n_channels 25
    """
    if not schema.columns:
        raise EmptySchema("build_channel_map() - schema declares no columns")
    names, ranges = [], []
    start = 0
    for column in schema.columns:
        stop = start + column.likelihood.n_channels
        names.append(column.name)
        ranges.append((start, stop))
        start = stop
    return ChannelMap(names, ranges, start)


def check_support(spec, y, mask=None):
    """raise UnsupportedValue / MissingValue for observed entries of y outside the support"""
    y = np.asarray(y, dtype=np.float64)
    if mask is not None:
        y = y[np.asarray(mask, dtype=bool)]
    if np.any(np.isnan(y)):
        raise MissingValue(f"log_prob() - missing value passed to a {spec} likelihood")
    if spec.kind == 'gaussian':
        ok = np.isfinite(y)
    elif spec.kind == 'bernoulli':
        ok = (y == 0) | (y == 1)
    elif spec.kind == 'categorical':
        ok = (y == np.round(y)) & (y >= 0) & (y < spec.n_classes)
    else:
        ok = (y == np.round(y)) & (y >= 0) & np.isfinite(y)
    if not np.all(ok):
        bad = y[~ok][0]
        raise UnsupportedValue(f"log_prob() - value {bad} is outside the support of a {spec} likelihood")


def _observed(y, mask):
    """values with unobserved entries zeroed, and the mask as floats"""
    y = np.asarray(y, dtype=np.float64)
    if mask is None:
        mask = np.ones(y.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    return np.where(mask, y, 0.0), mask.astype(np.float64)


def log_prob(tape, spec, y, f, log_noise=None, mask=None):
    """log_prob(tape, spec, y, f) - summed log p(y | f) as a 1x1 node

    Args:
        spec (LikelihoodSpec): the likelihood shared by every column in y
        y (ndarray): N values (categorical), or N x G values of G single-channel
            columns of the same kind
        f (int): node holding the channels, N x n_channels or N x G
        log_noise (int): 1 x G node of log s2_d, gaussian only
        mask (ndarray): booleans like y; False entries contribute nothing

    Example:
        log_prob(tape, LikelihoodSpec('bernoulli'), [1], tape.constant(0.0)) ==> -log 2
    """
    check_support(spec, y, mask)
    fv = tape.value(f)
    if spec.kind == 'categorical':
        yv, m = _observed(np.ravel(y), None if mask is None else np.ravel(mask))
        if fv.shape != (yv.size, spec.n_channels):
            raise ShapeMismatch(f"log_prob() - channels {fv.shape}, expected ({yv.size}, {spec.n_channels})")
        return _categorical(tape, spec, yv, m, f)
    yv, m = _observed(y, mask)
    yv = yv.reshape(fv.shape[0], -1) if yv.ndim < 2 else yv
    m = m.reshape(yv.shape)
    if fv.shape != yv.shape:
        raise ShapeMismatch(f"log_prob() - channels {fv.shape} do not match values {yv.shape}")
    if spec.kind == 'gaussian':
        if log_noise is None:
            raise ShapeMismatch("log_prob() - gaussian likelihood needs a log_noise node")
        return _gaussian(tape, yv, m, f, log_noise)
    if spec.kind == 'bernoulli':
        sign = tape.constant(2.0 * yv - 1.0)
        terms = tape.log_sigmoid(tape.mul(sign, f))
        return tape.sum(tape.mul(tape.constant(m), terms))
    # poisson
    rate = tape.sub(tape.mul(tape.constant(yv), f), tape.exp(f))
    total = tape.sum(tape.mul(tape.constant(m), rate))
    return tape.shift(total, -float(np.sum(m * special.gammaln(yv + 1.0))))


def _gaussian(tape, y, m, f, log_noise):
    counts = m.sum(axis=0, keepdims=True)
    resid = tape.square(tape.sub(tape.constant(y), f))
    precision = tape.exp(tape.neg(log_noise))
    quad = tape.sum(tape.mul(tape.constant(m), tape.mul(resid, precision)))
    norm = tape.sum(tape.mul(tape.constant(counts), log_noise))
    total = tape.scale(tape.add(quad, norm), -0.5)
    return tape.shift(total, -0.5 * _LOG_2PI * float(counts.sum()))


def _categorical(tape, spec, y, m, f):
    if spec.constrained:
        f = tape.concat_cols([tape.constant(np.zeros((y.size, 1))), f])
    onehot = np.zeros((y.size, spec.n_classes))
    onehot[np.arange(y.size), y.astype(int)] = m
    return tape.sum(tape.mul(tape.constant(onehot), tape.log_softmax_rows(f)))


def _logits(spec, f):
    f = np.asarray(f, dtype=np.float64)
    if spec.constrained:
        f = np.concatenate([np.zeros(f.shape[:-1] + (1,)), f], axis=-1)
    return f


def class_probabilities(spec, f):
    """(..., K) class probabilities of bernoulli (K=2) and categorical columns"""
    f = np.asarray(f, dtype=np.float64)
    if spec.kind == 'bernoulli':
        p = special.expit(f[..., 0])
        return np.stack([1.0 - p, p], axis=-1)
    if spec.kind == 'categorical':
        return special.softmax(_logits(spec, f), axis=-1)
    raise UnsupportedValue(f"class_probabilities() - {spec} has no classes")


def log_density(spec, y, f, noise_var=None):
    """log p(y | f) elementwise in numpy; f is (..., n_channels), y matches f[..., 0]"""
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if spec.kind == 'gaussian':
        r = y - f[..., 0]
        return -0.5 * (_LOG_2PI + np.log(noise_var)) - 0.5 * r * r / noise_var
    if spec.kind == 'bernoulli':
        return -np.logaddexp(0.0, -(2.0 * y - 1.0) * f[..., 0])
    if spec.kind == 'categorical':
        logp = special.log_softmax(_logits(spec, f), axis=-1)
        idx = np.broadcast_to(y, logp.shape[:-1]).astype(int)
        return np.take_along_axis(logp, idx[..., None], axis=-1)[..., 0]
    return y * f[..., 0] - np.exp(f[..., 0]) - special.gammaln(y + 1.0)


def predictive_mean(spec, f):
    """E[y | f] of single-channel likelihoods"""
    f = np.asarray(f, dtype=np.float64)[..., 0]
    if spec.kind == 'gaussian':
        return f
    if spec.kind == 'bernoulli':
        return special.expit(f)
    if spec.kind == 'poisson':
        return np.exp(f)
    raise UnsupportedValue("predictive_mean() - categorical columns have class probabilities, not a mean")


def sample_observation(spec, f, rng, noise_var=None):
    """sample_observation(spec, f, rng) - draw y ~ Likelihood(h(f)) for every row of f

    f is (..., n_channels); the result drops the channel axis.
    """
    f = np.asarray(f, dtype=np.float64)
    if spec.kind == 'gaussian':
        return f[..., 0] + np.sqrt(noise_var) * rng.standard_normal(f.shape[:-1])
    if spec.kind == 'poisson':
        return rng.poisson(np.exp(f[..., 0])).astype(np.float64)
    probs = class_probabilities(spec, f)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(f.shape[:-1])
    draws = np.sum(u[..., None] >= cdf, axis=-1)
    return np.minimum(draws, probs.shape[-1] - 1).astype(np.float64)
