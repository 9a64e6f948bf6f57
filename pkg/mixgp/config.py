"""Run configuration: defaults, flat config files, hashing and file headers."""
import hashlib
import json
import os

from jinja2 import Environment

from .errors import InvalidConfig

_version_ = '0.1.0'
_author_ = 'mixgp developers'
_license_ = 'MIT'

# environment variable naming the default output directory
OUTPUT_DIR_ENV = 'MIXGP_OUTPUT_DIR'

DEFAULTS = {
    'schema': None,
    'data': None,
    'Q': 10,
    'M': 50,
    'T': 10,
    'lr': 1e-3,
    'decay': 0.9,
    'eps': 1e-8,
    'max_steps': 20000,
    'seed': 0,
    'tol': 1e-4,
    'window': 500,
    'smooth': 100,
    'log_every': 100,
    'cov_mode': 'diag',
    'init': 'random',
    'standardize': True,
    'constrained': False,
    'all_gaussian': False,
    'predictive_mode': 'mc',
    'S': 100,
    'holdout_fraction': 0.0,
    'holdout_attrs': 2,
    'holdout_attr_fraction': None,
    'holdout_per_class': None,
    'holdout_seed': 0,
    'output_dir': 'mixgp-out',
}

_CHOICES = {
    'cov_mode': ('diag', 'full'),
    'init': ('random', 'pca'),
    'predictive_mode': ('mc', 'mean'),
}

_header_template = Environment(keep_trailing_newline=True).from_string(
    "# mixgp {{ version }} seed={{ seed }} config={{ digest }}\n"
    "{% for line in extra %}# {{ line }}\n{% endfor %}")


class JSObj(dict):
    """a utility class that mimics a JavaScript Object"""
    def __getattr__(self, attr_name):
        if attr_name in self:
            return self[attr_name]
        else:
            return None

    def __setattr__(self, attr_name, attr_value):
        self[attr_name] = attr_value

    def __delattr__(self, attr_name):
        if attr_name in self:
            del self[attr_name]
        else:
            raise AttributeError(f"JSObj().__delattr__({attr_name}) - No such attribute")


class RunConfig(JSObj):
    """every run setting with attribute access

    Example:
        config = RunConfig(Q=2, max_steps=500)
        config.M ==> 50
    """
    def __init__(self, **overrides):
        super().__init__(DEFAULTS)
        env_dir = os.environ.get(OUTPUT_DIR_ENV)
        if env_dir:
            self['output_dir'] = env_dir
        self.update(overrides)

    def update_from(self, values):
        """overlay the non-None entries of values (CLI flags, file settings)"""
        for key, value in values.items():
            if value is not None:
                self[key] = value
        return self

    def validate(self):
        """raise InvalidConfig for out-of-range settings"""
        for key in ('Q', 'M', 'T', 'S', 'window', 'smooth', 'log_every'):
            if int(self[key]) < 1:
                raise InvalidConfig(f"RunConfig.validate() - {key} must be >= 1, got {self[key]}")
        if int(self.max_steps) < 0:
            raise InvalidConfig(f"RunConfig.validate() - max_steps must be >= 0, got {self.max_steps}")
        if int(self.seed) < 0:
            raise InvalidConfig(f"RunConfig.validate() - seed must be >= 0, got {self.seed}")
        for key in ('lr', 'eps', 'tol'):
            if not float(self[key]) > 0:
                raise InvalidConfig(f"RunConfig.validate() - {key} must be > 0, got {self[key]}")
        if not 0.0 <= float(self.decay) < 1.0:
            raise InvalidConfig(f"RunConfig.validate() - decay must lie in [0, 1), got {self.decay}")
        for key, allowed in _CHOICES.items():
            if self[key] not in allowed:
                raise InvalidConfig(f"RunConfig.validate() - {key} must be one of {allowed}, got '{self[key]}'")
        return self

    @property
    def full_cov(self):
        return self.cov_mode == 'full'


def _coerce(key, text):
    default = DEFAULTS.get(key)
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in ('true', 'false', '1', '0', 'yes', 'no'):
                raise ValueError(text)
            return lowered in ('true', '1', 'yes')
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if key in ('holdout_attr_fraction',):
            return float(text)
        if key in ('holdout_per_class',):
            return int(text)
    except ValueError:
        raise InvalidConfig(f"config_from_file() - cannot read {key} = '{text}'")
    return text


def config_from_file(config_file):
    """config_from_file(path) - settings from a flat `key = value` file

    Lines starting with # are comments; values may be quoted; values are
    coerced to the type of the setting's default.

    Returns:
        dict: only the keys present in the file
    """
    settings = {}
    with open(config_file) as fp:
        data = fp.read()
    for lineno, line in enumerate(data.split('\n'), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        parts = line.split('=', 1)
        if len(parts) != 2:
            raise InvalidConfig(f"config_from_file() - line {lineno}: expected key = value")
        key = parts[0].strip()
        value = parts[1].strip()
        # strip off trailing and leading quotes
        if value[:1] in ('"', "'"):
            value = value[1:-1]
        if key not in DEFAULTS:
            raise InvalidConfig(f"config_from_file() - line {lineno}: unknown setting '{key}'")
        settings[key] = _coerce(key, value)
    return settings


def config_hash(config):
    """first 12 hex digits of the SHA-256 of the canonical JSON of config

    output_dir is left out so the same run written elsewhere hashes the same.
    """
    canonical = {k: v for k, v in config.items() if k != 'output_dir'}
    text = json.dumps(canonical, sort_keys=True, default=str)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()[:12]


def file_header(config, *extra):
    """comment header written at the top of every text artifact"""
    return _header_template.render(version=_version_, seed=config.get('seed'),
                                   digest=config_hash(config), extra=extra)
