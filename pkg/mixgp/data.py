"""Datasets: schema files, CSV ingestion with missing values, standardization,
holdout masks and synthetic data drawn from the generative model.

Schema files hold one column per line, `name:kind[:flags]`:

    age:gaussian
    sex:bernoulli
    thal:categorical:3:levels=3|6|7
    counts:poisson
    num:label

Flags: `fixed` (gaussian noise variance not trained), `constrained`
(categorical first logit pinned to 0), `levels=a|b|c` (raw tokens of the
categorical classes, in class order). A `label` column is read for
evaluation only and never modelled. Lines starting with # are comments.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .autodiff import jittered_cholesky
from .errors import EmptySchema, InvalidConfig, ParseError, SchemaMismatch, UnsupportedValue
from .kernel import kernel_matrix
from .likelihoods import LikelihoodSpec, build_channel_map, check_support, sample_observation

logger = logging.getLogger(__name__)

MISSING_TOKENS = ('', '?', 'NA')


@dataclass
class ColumnSpec:
    name: str
    likelihood: LikelihoodSpec
    levels: tuple = ()

    @property
    def kind(self):
        return self.likelihood.kind

    def __str__(self):
        parts = [self.name, str(self.likelihood)]
        if self.likelihood.constrained:
            parts.append('constrained')
        if self.likelihood.fixed_noise:
            parts.append('fixed')
        if self.levels:
            parts.append('levels=' + '|'.join(self.levels))
        return ':'.join(parts)


@dataclass
class DatasetSchema:
    """ordered column declarations plus an optional label column"""
    columns: list
    label: str = None

    def __post_init__(self):
        names = [c.name for c in self.columns] + ([self.label] if self.label else [])
        if len(set(names)) != len(names):
            raise SchemaMismatch(f"DatasetSchema() - duplicate column names in {names}")

    @property
    def names(self):
        return [c.name for c in self.columns]

    @property
    def likelihoods(self):
        return [c.likelihood for c in self.columns]

    def channel_map(self):
        return build_channel_map(self)

    def index(self, name):
        return self.names.index(name)

    def to_text(self):
        lines = [str(c) for c in self.columns]
        if self.label:
            lines.append(f"{self.label}:label")
        return '\n'.join(lines) + '\n'


def parse_schema(text, constrained=False):
    """parse_schema(text) - DatasetSchema from schema-file text

    constrained sets the default categorical mode for columns without the flag.
    """
    columns, label = [], None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        parts = [p.strip() for p in line.split(':')]
        if len(parts) < 2 or not parts[0]:
            raise ParseError(f"parse_schema() - line {lineno}: expected name:kind, got '{line}'", row=lineno)
        name, kind = parts[0], parts[1].lower()
        if kind == 'label':
            if label:
                raise SchemaMismatch(f"parse_schema() - line {lineno}: second label column '{name}'")
            label = name
            continue
        rest = parts[2:]
        spec_text = kind
        if kind == 'categorical':
            if not rest:
                raise ParseError(f"parse_schema() - line {lineno}: categorical needs a class count", row=lineno)
            spec_text = f"categorical:{rest[0]}"
            rest = rest[1:]
        levels = ()
        flags = set()
        for flag in rest:
            if flag.startswith('levels='):
                levels = tuple(flag[len('levels='):].split('|'))
            elif flag in ('fixed', 'constrained', 'unconstrained'):
                flags.add(flag)
            else:
                raise ParseError(f"parse_schema() - line {lineno}: unknown flag '{flag}'", row=lineno)
        is_constrained = 'constrained' in flags or (constrained and 'unconstrained' not in flags)
        try:
            spec = LikelihoodSpec.parse(spec_text, constrained=is_constrained, fixed_noise='fixed' in flags)
        except UnsupportedValue as e:
            raise ParseError(f"parse_schema() - line {lineno}: {e}", row=lineno)
        if levels and (kind != 'categorical' or len(levels) != spec.n_classes):
            raise ParseError(f"parse_schema() - line {lineno}: levels must list exactly K categorical classes", row=lineno)
        columns.append(ColumnSpec(name, spec, levels))
    if not columns:
        raise EmptySchema("parse_schema() - no likelihood columns declared")
    return DatasetSchema(columns, label)


def load_schema(path, constrained=False):
    with open(path) as fp:
        return parse_schema(fp.read(), constrained=constrained)


@dataclass
class ObservationMatrix:
    """encoded N x D values (0 where missing) and the N x D observed mask

    Categorical values are class indices; labels holds the raw label column,
    if the schema has one.
    """
    values: np.ndarray
    mask: np.ndarray
    columns: list
    labels: np.ndarray = None
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise SchemaMismatch(f"ObservationMatrix() - values {self.values.shape} and mask {self.mask.shape} differ")
        self.values = np.where(self.mask, self.values, 0.0)
        if self.row_ids is None:
            self.row_ids = np.arange(self.values.shape[0])

    @property
    def N(self):
        return self.values.shape[0]

    @property
    def D(self):
        return self.values.shape[1]

    def copy(self):
        labels = None if self.labels is None else self.labels.copy()
        return ObservationMatrix(self.values.copy(), self.mask.copy(), list(self.columns), labels, self.row_ids.copy())

    def validate(self, schema):
        """raise UnsupportedValue for observed entries outside their likelihood's support"""
        for j, column in enumerate(schema.columns):
            check_support(column.likelihood, self.values[:, j], self.mask[:, j])


def _parse_cell(token, column, row):
    spec = column.likelihood
    if spec.kind == 'categorical' and column.levels:
        if token in column.levels:
            return float(column.levels.index(token))
        # numeric levels also match their float spelling ("6" vs "6.0")
        for k, level in enumerate(column.levels):
            try:
                if float(level) == float(token):
                    return float(k)
            except ValueError:
                continue
        raise ParseError(f"load_csv() - row {row}, column '{column.name}': unknown level '{token}'", row, column.name)
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"load_csv() - row {row}, column '{column.name}': cannot read '{token}'", row, column.name)
    if spec.kind == 'gaussian':
        ok = np.isfinite(value)
    elif spec.kind == 'bernoulli':
        ok = value in (0.0, 1.0)
    elif spec.kind == 'categorical':
        ok = np.isfinite(value) and value == int(value) and 0 <= value < spec.n_classes
    else:
        ok = np.isfinite(value) and value == int(value) and value >= 0
    if not ok:
        raise ParseError(f"load_csv() - row {row}, column '{column.name}': '{token}' is not a valid {spec} value", row, column.name)
    return value


def load_csv(path, schema, missing_tokens=MISSING_TOKENS, delimiter=','):
    """load_csv(path, schema) - parse a delimited file into an ObservationMatrix

    The header must name every schema column (any order); extra columns are
    ignored. Cells equal to a missing token become unobserved.
    """
    frame = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False, comment='#', skipinitialspace=True)
    return parse_frame(frame, schema, missing_tokens, source=path)


def parse_frame(frame, schema, missing_tokens=MISSING_TOKENS, source='frame'):
    """parse_frame(frame, schema) - ObservationMatrix from a DataFrame of raw string cells"""
    frame = frame.rename(columns=lambda c: str(c).strip())
    wanted = schema.names + ([schema.label] if schema.label else [])
    absent = [n for n in wanted if n not in frame.columns]
    if absent:
        raise SchemaMismatch(f"load_csv() - {source} has no column(s) {absent}")
    extra = [c for c in frame.columns if c not in wanted]
    if extra:
        logger.info("load_csv(): ignoring columns %s", extra)
    missing = set(missing_tokens)
    N, D = len(frame), len(schema.columns)
    values = np.zeros((N, D))
    mask = np.zeros((N, D), dtype=bool)
    for j, column in enumerate(schema.columns):
        for i, token in enumerate(frame[column.name].astype(str).str.strip()):
            if token in missing:
                continue
            values[i, j] = _parse_cell(token, column, i)
            mask[i, j] = True
    labels = None
    if schema.label:
        labels = frame[schema.label].astype(str).str.strip().to_numpy()
    logger.info("load_csv(): %d rows, %d columns, %d missing entries", N, D, int((~mask).sum()))
    return ObservationMatrix(values, mask, schema.names, labels)


def write_csv(path, obs, schema, header=None, missing_token='?'):
    """write obs back out in raw form (levels restored, missing entries as missing_token)"""
    table = {}
    for j, column in enumerate(schema.columns):
        cells = []
        for i in range(obs.N):
            if not obs.mask[i, j]:
                cells.append(missing_token)
            elif column.levels:
                cells.append(column.levels[int(obs.values[i, j])])
            elif column.kind == 'gaussian':
                cells.append(repr(float(obs.values[i, j])))
            else:
                cells.append(str(int(obs.values[i, j])))
        table[column.name] = cells
    if schema.label and obs.labels is not None:
        table[schema.label] = [str(v) for v in obs.labels]
    with open(path, 'w', newline='') as fp:
        if header:
            fp.write(header)
        pd.DataFrame(table).to_csv(fp, index=False)


@dataclass
class Standardization:
    """per-column shift and scale of the gaussian columns (identity elsewhere)"""
    mean: np.ndarray
    scale: np.ndarray

    def inverse(self, values, columns=None):
        """map standardized values back to data units (columns indexes the
        schema column of each value, default: all columns in order)"""
        if columns is None:
            return values * self.scale + self.mean
        columns = np.asarray(columns, dtype=int)
        return values * self.scale[columns] + self.mean[columns]


def standardize(obs, schema):
    """standardize(obs, schema) - shift/scale gaussian columns to mean 0, variance 1

    Statistics use observed entries only; other likelihoods are left alone.

    Returns:
        (ObservationMatrix, Standardization)
    """
    out = obs.copy()
    mean = np.zeros(obs.D)
    scale = np.ones(obs.D)
    for j, column in enumerate(schema.columns):
        if column.kind != 'gaussian':
            continue
        seen = obs.values[obs.mask[:, j], j]
        if seen.size == 0:
            continue
        mu = seen.mean()
        sd = seen.std()
        if not sd > 0:
            logger.warning("standardize(): column '%s' has zero variance, keeping scale 1", column.name)
            sd = 1.0
        mean[j], scale[j] = mu, sd
        out.values[:, j] = np.where(obs.mask[:, j], (obs.values[:, j] - mu) / sd, 0.0)
    return out, Standardization(mean, scale)


@dataclass
class Holdout:
    """entries hidden from training: (row, column index, true value) triples"""
    entries: list

    def __len__(self):
        return len(self.entries)


def make_holdout(obs, fraction_points=0.2, attrs_per_point=2, seed=0,
                 attr_fraction=None, points_per_class=None):
    """make_holdout(obs, fraction_points, attrs_per_point, seed) - hide entries for evaluation

    Picks points either as a fraction of all rows or as points_per_class rows
    of every label class, then hides attrs_per_point observed attributes of
    each (or round(attr_fraction * D) of them when attr_fraction is given).
    Entries already missing are never chosen.

    Returns:
        (ObservationMatrix, Holdout): the training copy with the extra mask,
        and the hidden entries with their true values
    """
    if not 0.0 <= fraction_points <= 1.0:
        raise InvalidConfig(f"make_holdout() - fraction_points {fraction_points} not in [0, 1]")
    if attr_fraction is not None and not 0.0 <= attr_fraction <= 1.0:
        raise InvalidConfig(f"make_holdout() - attr_fraction {attr_fraction} not in [0, 1]")
    if attr_fraction is None and attrs_per_point < 0:
        raise InvalidConfig(f"make_holdout() - attrs_per_point {attrs_per_point} is negative")
    rng = np.random.default_rng(seed)
    if points_per_class is not None:
        if obs.labels is None:
            raise InvalidConfig("make_holdout() - points_per_class needs a label column")
        rows = []
        for label in sorted(set(obs.labels.tolist()), key=str):
            members = np.flatnonzero(obs.labels == label)
            take = min(points_per_class, members.size)
            rows.extend(rng.choice(members, size=take, replace=False).tolist())
        rows = sorted(rows)
    else:
        n_points = int(round(fraction_points * obs.N))
        rows = sorted(rng.choice(obs.N, size=n_points, replace=False).tolist())
    n_attrs = attrs_per_point if attr_fraction is None else int(round(attr_fraction * obs.D))
    train = obs.copy()
    entries = []
    for n in rows:
        seen = np.flatnonzero(obs.mask[n])
        take = min(n_attrs, seen.size)
        for j in sorted(rng.choice(seen, size=take, replace=False).tolist()):
            entries.append((int(n), int(j), float(obs.values[n, j])))
            train.mask[n, j] = False
            train.values[n, j] = 0.0
    logger.info("make_holdout(): %d entries hidden over %d points", len(entries), len(rows))
    return train, Holdout(entries)


def write_holdout(path, holdout, schema, header=None):
    """sidecar listing the hidden (row, column) pairs and their values"""
    frame = pd.DataFrame({
        'row': [e[0] for e in holdout.entries],
        'column': [schema.columns[e[1]].name for e in holdout.entries],
        'value': [e[2] for e in holdout.entries],
    })
    with open(path, 'w', newline='') as fp:
        if header:
            fp.write(header)
        frame.to_csv(fp, index=False)


def load_holdout(path, schema):
    frame = pd.read_csv(path, comment='#', dtype={'row': int, 'column': str, 'value': float},
                        float_precision='round_trip')
    for name in frame['column']:
        if name not in schema.names:
            raise SchemaMismatch(f"load_holdout() - unknown column '{name}' in {path}")
    return Holdout([(int(r), schema.index(c), float(v))
                    for r, c, v in zip(frame['row'], frame['column'], frame['value'])])


def generate_synthetic(schema, N, Q, kernel_params, seed=0, noise_variance=0.1):
    """generate_synthetic(schema, N, Q, kernel_params, seed) - exact ancestral sample

    X ~ N(0, I); each channel f ~ GP(0, k) with the full N x N covariance;
    y from each column's likelihood (gaussian columns use noise_variance).

    Returns:
        (ObservationMatrix, ndarray): the fully observed data and the true X
    """
    if N < 1 or Q < 1:
        raise InvalidConfig(f"generate_synthetic() - need N >= 1 and Q >= 1, got N={N}, Q={Q}")
    if kernel_params.Q != Q:
        raise InvalidConfig(f"generate_synthetic() - kernel has {kernel_params.Q} lengthscales, Q={Q}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, Q))
    L = jittered_cholesky(kernel_matrix(kernel_params, X, X))
    cmap = schema.channel_map()
    F = L @ rng.standard_normal((N, cmap.n_channels))
    values = np.zeros((N, len(schema.columns)))
    for j, column in enumerate(schema.columns):
        start, stop = cmap.ranges[j]
        values[:, j] = sample_observation(column.likelihood, F[:, start:stop], rng, noise_var=noise_variance)
    return ObservationMatrix(values, np.ones(values.shape, dtype=bool), schema.names), X


def to_all_gaussian(schema, obs, holdout=None):
    """the misspecified all-gaussian view of a dataset

    Categorical columns become K one-hot gaussian columns (a missing entry
    leaves all K missing), every other column becomes gaussian as is.

    Returns:
        (DatasetSchema, ObservationMatrix, Holdout or None)
    """
    columns, blocks, masks, origin = [], [], [], []
    for j, column in enumerate(schema.columns):
        if column.kind == 'categorical':
            K = column.likelihood.n_classes
            onehot = np.zeros((obs.N, K))
            onehot[np.arange(obs.N), obs.values[:, j].astype(int)] = 1.0
            for k in range(K):
                columns.append(ColumnSpec(f"{column.name}={k}", LikelihoodSpec('gaussian')))
                origin.append((j, k))
            blocks.append(onehot)
            masks.append(np.repeat(obs.mask[:, j:j + 1], K, axis=1))
        else:
            columns.append(ColumnSpec(column.name, LikelihoodSpec('gaussian')))
            origin.append((j, None))
            blocks.append(obs.values[:, j:j + 1])
            masks.append(obs.mask[:, j:j + 1])
    new_schema = DatasetSchema(columns, schema.label)
    new_obs = ObservationMatrix(np.hstack(blocks), np.hstack(masks), new_schema.names, obs.labels, obs.row_ids)
    new_holdout = None
    if holdout is not None:
        entries = []
        for n, j, value in holdout.entries:
            for jj, (src, k) in enumerate(origin):
                if src != j:
                    continue
                entries.append((n, jj, value if k is None else float(int(value) == k)))
        new_holdout = Holdout(entries)
    return new_schema, new_obs, new_holdout

