###########################################
#
# mixgp - mixed likelihood Gaussian process
#   latent variable models
#
#   train, evaluate, impute, export,
#   synthesize and prepare datasets from
#   the command line
#
#    MIT License
#
#   Jinja2 renders the reports
#    (https://palletsprojects.com/p/jinja/)
#
###########################################
"""Command line entry point: `python -m mixgp <command> ...`

    train            fit a model, write checkpoint, ELBO trace, latents and ARD
    eval             1NN metrics, plot data and ARD relevances of a checkpoint
    impute           score and predict held-out entries of a checkpoint
    synth            sample a dataset from the generative model
    export-latents   latent means and variances of a checkpoint
    prepare          convert a benchmark dataset's raw files to CSV + schema

Every input is checked before the output directory is created; errors print
`ERROR: ...` on stderr and exit with status 2.
"""
import argparse
import logging
import os
import sys

import numpy as np
import pandas as pd

from .config import RunConfig, _version_, config_from_file, file_header
from .data import (Holdout, Standardization, generate_synthetic, load_csv, load_holdout,
                   load_schema, make_holdout, standardize, to_all_gaussian, write_csv,
                   write_holdout)
from .datasets import RECIPES, find_raw, load_raw, write_dataset
from .errors import InvalidConfig, MissingLabelColumn, MixGPError
from .inference import (export_latents, impute, log_perplexity, predictive_logprob,
                        write_latents, write_predictions, write_relevances)
from .kernel import KernelParams
from .metrics import (MetricsReport, binarize_labels, one_hot_encode, one_nn_error,
                      one_nn_rmse, pca_baseline)
from .report import render_impute, render_metrics, render_train, write_metrics_csv, write_text
from .trainer import RMSProp, init_model, load_checkpoint, save_checkpoint, smoothed, train

logger = logging.getLogger(__name__)

_logo_text = \
    r"""
           _
  _ __ ___ (_)_  __ __ _ _ __
 | '_ ` _ \| \ \/ // _` | '_ \
 | | | | | | |>  <| (_| | |_) |
 |_| |_| |_|_/_/\_\\__, | .__/
                   |___/|_|
------------------------------------------
 mixed likelihood GP latent variable models
 Version {}, MIT License
------------------------------------------
"""

CHECKPOINT_FILE = 'checkpoint.json'


def logo():
    """logo() - the banner printed before every command"""
    return _logo_text.format(_version_)


def _train_flags(parser):
    parser.add_argument('--config', help="flat key = value settings file (flags win)")
    parser.add_argument('--schema', help="schema file, one name:kind[:flags] per line")
    parser.add_argument('--data', help="CSV data file")
    parser.add_argument('-Q', type=int, dest='Q', help="latent dimensions (default 10)")
    parser.add_argument('-M', type=int, dest='M', help="inducing points (default 50)")
    parser.add_argument('-T', type=int, dest='T', help="Monte Carlo samples per step (default 10)")
    parser.add_argument('--lr', type=float, help="RMSProp learning rate (default 1e-3)")
    parser.add_argument('--decay', type=float, help="RMSProp decay (default 0.9)")
    parser.add_argument('--eps', type=float, help="RMSProp epsilon (default 1e-8)")
    parser.add_argument('--max-steps', type=int, dest='max_steps')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--tol', type=float, help="relative ELBO improvement for convergence")
    parser.add_argument('--window', type=int, help="convergence window in steps")
    parser.add_argument('--smooth', type=int, help="ELBO smoothing length in steps")
    parser.add_argument('--log-every', type=int, dest='log_every')
    parser.add_argument('--cov-mode', choices=('diag', 'full'), dest='cov_mode')
    parser.add_argument('--init', choices=('random', 'pca'))
    parser.add_argument('--no-standardize', action='store_const', const=False, dest='standardize')
    parser.add_argument('--constrained', action='store_const', const=True,
                        help="pin the first logit of every categorical column to 0")
    parser.add_argument('--all-gaussian', action='store_const', const=True, dest='all_gaussian',
                        help="model every column (categoricals one-hot) as gaussian")
    parser.add_argument('--holdout-fraction', type=float, dest='holdout_fraction')
    parser.add_argument('--holdout-attrs', type=int, dest='holdout_attrs')
    parser.add_argument('--holdout-attr-fraction', type=float, dest='holdout_attr_fraction')
    parser.add_argument('--holdout-per-class', type=int, dest='holdout_per_class')
    parser.add_argument('--holdout-seed', type=int, dest='holdout_seed')
    parser.add_argument('--resume', help="continue from this checkpoint")


def build_parser():
    parser = argparse.ArgumentParser(prog='mixgp', description="mixed likelihood GP latent variable models")
    parser.add_argument('-q', '--quiet', action='store_true', help="no banner, warnings only")
    parser.add_argument('-v', '--verbose', action='store_true', help="debug logging")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help="fit a model")
    _train_flags(p)
    p.add_argument('-o', '--output-dir', dest='output_dir')

    p = sub.add_parser('eval', help="embedding metrics of a checkpoint")
    p.add_argument('checkpoint')
    p.add_argument('--metric', action='append', choices=('1nn-error', '1nn-rmse'),
                   help="metric to compute, repeatable (default 1nn-error when labels exist)")
    p.add_argument('--labels', help="CSV file holding the labels")
    p.add_argument('--label-column', dest='label_column', help="label column in --labels")
    p.add_argument('--label-threshold', type=float, dest='label_threshold',
                   help="binarize labels as label >= threshold for 1nn-error")
    p.add_argument('--all-dims', action='store_true', dest='all_dims', help="use all Q latent dims")
    p.add_argument('--pca', action='store_true', help="also score the PCA baseline")
    p.add_argument('-o', '--output-dir', dest='output_dir')

    p = sub.add_parser('impute', help="score and predict held-out entries")
    p.add_argument('checkpoint')
    p.add_argument('--holdout', help="holdout sidecar CSV (default: the checkpoint's holdout)")
    p.add_argument('--mode', choices=('mc', 'mean'), dest='predictive_mode')
    p.add_argument('-S', type=int, dest='S', help="predictive samples (default 100)")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--column', help="only score entries of this column")
    p.add_argument('-o', '--output-dir', dest='output_dir')

    p = sub.add_parser('synth', help="sample a dataset from the generative model")
    p.add_argument('--schema', required=True)
    p.add_argument('-N', type=int, dest='N', required=True)
    p.add_argument('-Q', type=int, dest='Q', default=2)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--variance', type=float, default=1.0, help="kernel variance")
    p.add_argument('--inv-lengthscales', dest='inv_lengthscales',
                   help="comma separated inverse lengthscales (default all 1)")
    p.add_argument('--noise-variance', type=float, dest='noise_variance', default=0.1)
    p.add_argument('-o', '--output-dir', dest='output_dir')

    p = sub.add_parser('export-latents', help="write latent means and variances")
    p.add_argument('checkpoint')
    p.add_argument('-o', '--output-dir', dest='output_dir')

    p = sub.add_parser('prepare', help="convert a benchmark dataset's raw files to CSV + schema")
    p.add_argument('dataset', choices=sorted(RECIPES))
    p.add_argument('raw_dir', help="directory holding the raw files")
    p.add_argument('--classes', type=int, help="keep only the first K label classes")
    p.add_argument('--sample', type=int, help="keep N random rows")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('-o', '--output-dir', dest='output_dir')
    return parser


def _output_dir(args, config=None):
    if args.output_dir:
        return args.output_dir
    if config is not None and config.output_dir:
        return config.output_dir
    return RunConfig().output_dir


def _make_output_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


# settings a resumed run takes from its checkpoint
RESUME_FIXED = ('config', 'schema', 'data', 'Q', 'M', 'seed', 'cov_mode', 'init', 'standardize', 'constrained',
                'all_gaussian', 'holdout_fraction', 'holdout_attrs', 'holdout_attr_fraction',
                'holdout_per_class', 'holdout_seed')


def _train_config(args):
    flags = {k: v for k, v in vars(args).items() if k in RunConfig()}
    if args.resume:
        given = [k for k in RESUME_FIXED if getattr(args, k, None) is not None]
        if given:
            raise InvalidConfig(f"train - --resume keeps the checkpoint's {', '.join(given)}; drop those flags")
        checkpoint = load_checkpoint(args.resume)
        config = RunConfig(**checkpoint.config)
    else:
        checkpoint = None
        config = RunConfig()
        if args.config:
            config.update_from(config_from_file(args.config))
    config.update_from(flags)
    return config.validate(), checkpoint


def _prepare_data(config):
    if not config.schema or not config.data:
        raise InvalidConfig("train - --schema and --data are required")
    schema = load_schema(config.schema, constrained=config.constrained)
    obs = load_csv(config.data, schema)
    if config.holdout_fraction > 0 or config.holdout_per_class:
        train_obs, holdout = make_holdout(obs, config.holdout_fraction, config.holdout_attrs,
                                          config.holdout_seed, config.holdout_attr_fraction,
                                          config.holdout_per_class)
    else:
        train_obs, holdout = obs.copy(), Holdout([])
    if config.all_gaussian:
        schema, train_obs, holdout = to_all_gaussian(schema, train_obs, holdout)
    if config.standardize:
        train_obs, scaling = standardize(train_obs, schema)
    else:
        scaling = Standardization(np.zeros(train_obs.D), np.ones(train_obs.D))
    return schema, train_obs, scaling, holdout


def cmd_train(args):
    """cmd_train(args) - train, then write checkpoint, trace, latents, ARD and holdout"""
    config, checkpoint = _train_config(args)
    if checkpoint is not None:
        model, state = checkpoint.model, checkpoint.state
        data, scaling = checkpoint.data, checkpoint.standardization
        holdout = Holdout(checkpoint.holdout or [])
        if data is None:
            raise InvalidConfig(f"train - checkpoint {args.resume} holds no training data")
        state.optimizer = RMSProp(config.lr, config.decay, config.eps, state.optimizer.mean_squares)
        logger.info("resuming at step %d", state.step)
    else:
        schema, data, scaling, holdout = _prepare_data(config)
        model = init_model(schema, data.N, config.Q, config.M, config.seed,
                           full_cov=config.full_cov, init=config.init, data=data)
        state = None
    model, state, trace = train(model, data, config, state=state)

    out = _make_output_dir(_output_dir(args, config))
    header = file_header(config)
    save_checkpoint(os.path.join(out, CHECKPOINT_FILE), model, state, config, data, scaling, holdout)
    values = [row[1] for row in trace]
    frame = pd.DataFrame(trace, columns=['step', 'elbo', 'kl_x', 'kl_u', 'expected_loglik'])
    frame['smoothed'] = smoothed(values, config.smooth)
    with open(os.path.join(out, 'elbo_trace.csv'), 'w', newline='') as fp:
        fp.write(header)
        frame.to_csv(fp, index=False, float_format='%.17g')
    embedding = export_latents(model)
    write_latents(os.path.join(out, 'latents.csv'), embedding, header, data.row_ids)
    write_relevances(os.path.join(out, 'ard.csv'), embedding, header)
    write_holdout(os.path.join(out, 'holdout.csv'), holdout, model.schema, header)
    last = trace[-1] if trace else (None, float('nan'), float('nan'), float('nan'), float('nan'))
    order = np.argsort(-embedding.relevances, kind='stable')
    summary = render_train(header, N=data.N, D=data.D, n_channels=model.n_channels,
                           missing=int((~data.mask).sum()), Q=model.Q, M=model.M, T=config.T,
                           cov_mode=config.cov_mode, steps=state.step, rejected=state.rejected,
                           converged=state.converged, elbo=last[1], kl_x=last[2], kl_u=last[3],
                           loglik=last[4],
                           relevances=[(int(q) + 1, float(embedding.relevances[q])) for q in order])
    write_text(os.path.join(out, 'summary.txt'), summary)
    print(f"trained {state.step} steps, final elbo {last[1]:.4f}; outputs in {out}")
    return 0


def _eval_labels(args, checkpoint):
    if args.labels:
        frame = pd.read_csv(args.labels, dtype=str, keep_default_na=False, comment='#')
        column = args.label_column or frame.columns[0]
        if column not in frame.columns:
            raise MissingLabelColumn(f"eval - {args.labels} has no column '{column}'")
        labels = frame[column].str.strip().to_numpy()
        if labels.shape[0] != checkpoint.model.N:
            raise MissingLabelColumn(f"eval - {labels.shape[0]} labels for {checkpoint.model.N} points")
        return labels
    if checkpoint.data is not None and checkpoint.data.labels is not None:
        return checkpoint.data.labels
    return None


def _numeric(labels, what):
    try:
        return labels.astype(np.float64)
    except ValueError:
        raise InvalidConfig(f"eval - {what} needs numeric labels")


def cmd_eval(args):
    """cmd_eval(args) - 1NN metrics on the dominant latent dims, plot data and ARD"""
    checkpoint = load_checkpoint(args.checkpoint)
    config = RunConfig(**checkpoint.config)
    labels = _eval_labels(args, checkpoint)
    metrics = args.metric or (['1nn-error'] if labels is not None else [])
    if metrics and labels is None:
        raise MissingLabelColumn(f"eval - {', '.join(metrics)} needs labels; the checkpoint has none")
    embedding = export_latents(checkpoint.model)
    dims = np.arange(embedding.Q) if args.all_dims else embedding.dominant
    points = embedding.means[:, dims]
    dims_text = 'all dims' if args.all_dims else 'dims ' + ','.join(str(int(d) + 1) for d in dims)

    baseline = None
    if args.pca and metrics:
        data = checkpoint.data
        if data is None or not data.mask.all():
            raise InvalidConfig("eval - the PCA baseline needs a fully observed training set")
        encoded = one_hot_encode(checkpoint.schema, data)
        baseline = pca_baseline(encoded, min(len(dims), encoded.shape[1]))[0]

    reports = []
    for metric in metrics:
        if metric == '1nn-error':
            target = labels
            protocol = dims_text
            if args.label_threshold is not None:
                target = binarize_labels(_numeric(labels, '--label-threshold'), args.label_threshold)
                protocol += f", labels >= {args.label_threshold:g}"
            reports.append(MetricsReport('1nn_error', float(one_nn_error(points, target)), protocol, config.seed))
            if baseline is not None:
                reports.append(MetricsReport('1nn_error_pca', float(one_nn_error(baseline, target)), protocol, config.seed))
        else:
            target = _numeric(labels, '1nn-rmse')
            reports.append(MetricsReport('1nn_rmse', one_nn_rmse(points, target), dims_text, config.seed))
            if baseline is not None:
                reports.append(MetricsReport('1nn_rmse_pca', one_nn_rmse(baseline, target), dims_text, config.seed))

    out = _make_output_dir(_output_dir(args))
    header = file_header(config, f"eval {dims_text}")
    dom = embedding.dominant
    plot = pd.DataFrame({
        'point': checkpoint.data.row_ids if checkpoint.data is not None else np.arange(embedding.means.shape[0]),
        'x': embedding.means[:, dom[0]],
        'y': embedding.means[:, dom[1]] if dom.size > 1 else np.nan,
        'label': labels if labels is not None else '',
    })
    with open(os.path.join(out, 'plot_data.csv'), 'w', newline='') as fp:
        fp.write(header)
        plot.to_csv(fp, index=False, float_format='%.17g')
    write_relevances(os.path.join(out, 'ard.csv'), embedding, header)
    write_metrics_csv(os.path.join(out, 'metrics.csv'), reports, header)
    text = render_metrics(header, reports)
    write_text(os.path.join(out, 'metrics.txt'), text)
    for report in reports:
        print(f"{report.metric}: {report.value:.6g}")
    return 0


def cmd_impute(args):
    """cmd_impute(args) - predictions and test log-likelihood of held-out entries"""
    checkpoint = load_checkpoint(args.checkpoint)
    config = RunConfig(**checkpoint.config)
    mode = args.predictive_mode or config.predictive_mode
    S = args.S if args.S is not None else config.S
    if S < 1:
        raise InvalidConfig(f"impute - S must be >= 1, got {S}")
    schema = checkpoint.schema
    if args.holdout:
        entries = load_holdout(args.holdout, schema).entries
    else:
        entries = list(checkpoint.holdout or [])
    if args.column:
        if args.column not in schema.names:
            raise InvalidConfig(f"impute - unknown column '{args.column}'")
        j = schema.index(args.column)
        entries = [e for e in entries if e[1] == j]
    mask = checkpoint.data.mask if checkpoint.data is not None else None
    model, scaling = checkpoint.model, checkpoint.standardization
    result = predictive_logprob(model, entries, mode, S, args.seed, mask, scaling)
    predictions = impute(model, entries, S, args.seed, mode, mask, scaling)
    perplexity = log_perplexity(model, entries, S, args.seed, mode, mask, scaling)

    out = _make_output_dir(_output_dir(args))
    header = file_header(config, f"impute mode={mode} S={S} seed={args.seed}")
    write_predictions(os.path.join(out, 'predictions.csv'), model, entries, predictions, result, header)
    write_text(os.path.join(out, 'impute_summary.txt'), render_impute(header, result, perplexity))
    print(f"{result.n_entries} entries, test loglik {result.total:.4f}, log perplexity {perplexity:.4f}")
    return 0


def cmd_synth(args):
    """cmd_synth(args) - dataset and true latents drawn from the generative model"""
    if args.N is None or args.N < 1:
        raise InvalidConfig(f"synth - N must be >= 1, got {args.N}")
    if args.Q < 1:
        raise InvalidConfig(f"synth - Q must be >= 1, got {args.Q}")
    if not args.variance > 0:
        raise InvalidConfig(f"synth - variance must be > 0, got {args.variance}")
    schema = load_schema(args.schema)
    if args.inv_lengthscales:
        try:
            gammas = np.array([float(v) for v in args.inv_lengthscales.split(',')])
        except ValueError:
            raise InvalidConfig(f"synth - cannot read inverse lengthscales '{args.inv_lengthscales}'")
        if gammas.size != args.Q or np.any(gammas <= 0):
            raise InvalidConfig(f"synth - need {args.Q} positive inverse lengthscales")
    else:
        gammas = np.ones(args.Q)
    kernel = KernelParams(float(np.log(args.variance)), np.log(gammas))
    obs, X = generate_synthetic(schema, args.N, args.Q, kernel, args.seed, args.noise_variance)
    if schema.label:
        # a label for sanity checks of 1NN metrics: which side of 0 the first latent lies
        obs.labels = (X[:, 0] > 0).astype(int)

    out = _make_output_dir(_output_dir(args))
    header = file_header({'seed': args.seed, 'N': args.N, 'Q': args.Q, 'variance': args.variance,
                          'inv_lengthscales': gammas.tolist(), 'noise_variance': args.noise_variance,
                          'schema': schema.to_text()}, f"synth N={args.N} Q={args.Q}")
    write_csv(os.path.join(out, 'data.csv'), obs, schema, header)
    frame = pd.DataFrame(X, columns=[f"x_{q + 1}" for q in range(args.Q)])
    frame.insert(0, 'point', np.arange(args.N))
    with open(os.path.join(out, 'latents_true.csv'), 'w', newline='') as fp:
        fp.write(header)
        frame.to_csv(fp, index=False, float_format='%.17g')
    print(f"wrote {args.N} rows to {out}")
    return 0


def cmd_export_latents(args):
    """cmd_export_latents(args) - latents.csv and ard.csv of a checkpoint"""
    checkpoint = load_checkpoint(args.checkpoint)
    config = RunConfig(**checkpoint.config)
    embedding = export_latents(checkpoint.model)
    out = _make_output_dir(_output_dir(args))
    header = file_header(config)
    row_ids = checkpoint.data.row_ids if checkpoint.data is not None else None
    write_latents(os.path.join(out, 'latents.csv'), embedding, header, row_ids)
    write_relevances(os.path.join(out, 'ard.csv'), embedding, header)
    print(f"wrote latents of {embedding.means.shape[0]} points to {out}")
    return 0


def cmd_prepare(args):
    """cmd_prepare(args) - <dataset>.csv and <dataset>.schema from the raw files"""
    if args.classes is not None and args.classes < 1:
        raise InvalidConfig(f"prepare - classes must be >= 1, got {args.classes}")
    paths = find_raw(args.dataset, args.raw_dir)
    schema, obs, frame = load_raw(args.dataset, paths, args.classes, args.sample, args.seed)
    out = _make_output_dir(_output_dir(args))
    sources = ', '.join(os.path.basename(p) for p in paths)
    header = file_header({'seed': args.seed, 'dataset': args.dataset, 'classes': args.classes,
                          'sample': args.sample}, f"prepare {args.dataset} from {sources}")
    csv_path, _ = write_dataset(out, args.dataset, schema, frame, header)
    print(f"wrote {obs.N} rows, {obs.D} columns to {csv_path}")
    return 0


COMMANDS = {
    'train': cmd_train,
    'eval': cmd_eval,
    'impute': cmd_impute,
    'synth': cmd_synth,
    'export-latents': cmd_export_latents,
    'prepare': cmd_prepare,
}


def main(argv=None):
    """main(argv) - run one command; returns the process exit status"""
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    if not args.quiet:
        print(logo())
    try:
        return COMMANDS[args.command](args)
    except (MixGPError, OSError) as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return 2
