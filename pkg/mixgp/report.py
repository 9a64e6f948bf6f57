"""Human-readable run summaries, rendered with Jinja2, and the metrics CSV."""
import math

import pandas as pd
from jinja2 import Environment

_env = Environment(trim_blocks=True, lstrip_blocks=True, keep_trailing_newline=True)
_env.filters['num'] = lambda v: 'n/a' if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6g}"

TRAIN_TEMPLATE = _env.from_string("""\
{{ header }}
mixgp training summary
  data        {{ N }} points x {{ D }} columns ({{ n_channels }} channels), {{ missing }} entries unobserved
  model       Q={{ Q }} M={{ M }} T={{ T }} cov={{ cov_mode }}
  steps       {{ steps }} ({{ rejected }} rejected){% if converged %}, converged{% endif %}

  final elbo  {{ elbo | num }}
  kl q(X)     {{ kl_x | num }}
  kl q(U)     {{ kl_u | num }}
  loglik      {{ loglik | num }}

inverse lengthscales, most relevant first
{% for dim, gamma in relevances %}
  dim {{ dim }}  {{ gamma | num }}
{% endfor %}
""")

METRICS_TEMPLATE = _env.from_string("""\
{{ header }}
mixgp evaluation
{% for report in reports %}
  {{ '%-22s' | format(report.metric) }} {{ report.value | num }}   [{{ report.protocol }}]
{% endfor %}
""")

IMPUTE_TEMPLATE = _env.from_string("""\
{{ header }}
mixgp held-out evaluation ({{ mode }} mode, S={{ S }})
  entries          {{ n_entries }}
  test loglik      {{ total | num }} (natural log)
  log perplexity   {{ perplexity | num }} (bits)
{% if floored %}
  floored          {{ floored }} entries at the probability floor
{% endif %}
{% if per_column %}

per column
{% for name, value in per_column.items() %}
  {{ '%-16s' | format(name) }} {{ value | num }}
{% endfor %}
{% endif %}
""")


def render_train(header, **context):
    return TRAIN_TEMPLATE.render(header=header.rstrip('\n'), **context)


def render_metrics(header, reports):
    return METRICS_TEMPLATE.render(header=header.rstrip('\n'), reports=reports)


def render_impute(header, result, perplexity):
    return IMPUTE_TEMPLATE.render(header=header.rstrip('\n'), mode=result.mode, S=result.S,
                                  n_entries=result.n_entries, total=result.total,
                                  perplexity=perplexity, floored=result.floored,
                                  per_column=result.per_column)


def write_metrics_csv(path, reports, header=None):
    """one row per MetricsReport: metric, value, protocol, seed"""
    frame = pd.DataFrame({
        'metric': [r.metric for r in reports],
        'value': [r.value for r in reports],
        'protocol': [r.protocol for r in reports],
        'seed': [r.seed for r in reports],
    })
    with open(path, 'w', newline='') as fp:
        if header:
            fp.write(header)
        frame.to_csv(fp, index=False, float_format='%.17g')


def write_text(path, text):
    with open(path, 'w') as fp:
        fp.write(text)
