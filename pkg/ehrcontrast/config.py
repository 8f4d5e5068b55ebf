# -*- coding: utf-8 -*-
"""
Experiment configuration.

Config files are INI files; every value is addressed by a dotted name
``section.key``::

    [experiment]
    cohort = cohort.jsonl
    tasks = mortality, intubation
    encoders = retain
    windows = 24

    [train]
    epochs = 10

    [regimes.restricted]
    mortality = 0.06

Anything not mentioned keeps its default, so an empty file describes the
full default experiment on a generated cohort. :func:`dump_config`
writes the resolved config in the same format; loading it back gives an
equal :class:`ExperimentConfig`.
"""
from __future__ import absolute_import
import configparser
import io
from collections import OrderedDict
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Optional, Tuple

from ehrcontrast.exceptions import ConfigError, ContractError
from ehrcontrast.losses import LOSSES
from ehrcontrast.models import ENCODERS
from ehrcontrast.schema import TASKS, WINDOWS, check_task
from ehrcontrast.synthgen import GeneratorConfig
from ehrcontrast.training import TrainConfig


FULL_RATES = OrderedDict([('mortality', 0.23), ('intubation', 0.10), ('icu_transfer', 0.17)])
RESTRICTED_RATES = OrderedDict([('mortality', 0.07), ('intubation', 0.05), ('icu_transfer', 0.07)])


def _default_regimes():
    return OrderedDict([('full', OrderedDict(FULL_RATES)),
                        ('restricted', OrderedDict(RESTRICTED_RATES))])


@dataclass
class ExperimentConfig:
    """
    What to run: the cohort source (a JSONL file, or ``generator`` when
    ``cohort_path`` is None), the grid of tasks, encoders, losses, windows
    and regimes, training settings and output options.

    A regime maps tasks to target positive rates; tasks it doesn't name
    use their cohort as is.
    """
    cohort_path: Optional[str] = None
    schema_path: Optional[str] = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    tasks: Tuple[str, ...] = TASKS
    encoders: Tuple[str, ...] = ENCODERS
    losses: Tuple[str, ...] = LOSSES
    windows: Tuple[int, ...] = WINDOWS
    regimes: Dict[str, Dict[str, float]] = field(default_factory=_default_regimes)
    train: TrainConfig = field(default_factory=TrainConfig)
    k: int = 10
    seed: int = 0
    jobs: int = -1
    clip_low: float = 0.5
    clip_high: float = 99.5
    out_dir: str = 'output'
    checkpoint_folds: Tuple[int, ...] = (0,)

    def validate(self):
        for task in self.tasks:
            check_task(task)
        for name, values, allowed in (('encoder', self.encoders, ENCODERS),
                                      ('loss', self.losses, LOSSES),
                                      ('window', self.windows, WINDOWS)):
            for value in values:
                if value not in allowed:
                    raise ConfigError("unknown %s %r; expected one of %s" % (
                        name, value, ", ".join(str(a) for a in allowed)))
        for regime, rates in self.regimes.items():
            for task, rate in rates.items():
                check_task(task)
                if not 0 < rate < 1:
                    raise ConfigError("regime %s: rate of %s must be in (0, 1)" % (regime, task))
        if self.k < 2:
            raise ConfigError("k must be >= 2 (there must be held-out data), got %r" % self.k)
        if self.jobs == 0:
            raise ConfigError("jobs must be a positive number or negative (joblib style)")
        if not 0 <= self.clip_low < self.clip_high <= 100:
            raise ConfigError("clip percentiles must satisfy 0 <= low < high <= 100")
        self.train.validate()
        self.generator.validate()
        return self


# ===== value codecs =====

def _words(text):
    return tuple(w.strip() for w in text.replace('\n', ',').split(',') if w.strip())


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ('1', 'yes', 'true', 'on'):
        return True
    if lowered in ('0', 'no', 'false', 'off'):
        return False
    raise ValueError("not a boolean: %r" % text)


def _pairs(text, key_type, value_type):
    result = []
    for word in _words(text):
        key, sep, value = word.partition(':')
        if not sep:
            raise ValueError("expected key:value, got %r" % word)
        result.append((key_type(key), value_type(value)))
    return tuple(result)


def _fmt(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ', '.join(_fmt(v) if not isinstance(v, tuple) else '%s:%s' % (v[0], _fmt(v[1]))
                         for v in value)
    if value is None:
        return ''
    return str(value)


def _optional_str(text):
    return text.strip() or None


_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}
_GENERATOR_SCALARS = ('n_patients', 'noise_std', 'missingness_rate', 'stay_log_mean',
                      'stay_log_std', 'min_stay', 'max_stay', 'vitals_interval',
                      'labs_interval', 'signal_lead', 'outlier_rate', 'comorbidity_rate',
                      'seed')


def _parser_for(type_):
    if type_ in (bool, 'bool'):
        return _bool
    if type_ in (int, 'int'):
        return int
    return float


def _experiment_keys():
    """ dotted key -> (parse, attribute) for the fixed part of the config. """
    keys = OrderedDict([
        ('experiment.cohort', (_optional_str, 'cohort_path')),
        ('experiment.schema', (_optional_str, 'schema_path')),
        ('experiment.tasks', (_words, 'tasks')),
        ('experiment.encoders', (_words, 'encoders')),
        ('experiment.losses', (_words, 'losses')),
        ('experiment.windows', (lambda t: tuple(int(w) for w in _words(t)), 'windows')),
        ('experiment.regimes', (_words, None)),
        ('experiment.k', (int, 'k')),
        ('experiment.seed', (int, 'seed')),
        ('experiment.jobs', (int, 'jobs')),
        ('preprocess.clip_low', (float, 'clip_low')),
        ('preprocess.clip_high', (float, 'clip_high')),
        ('output.dir', (str.strip, 'out_dir')),
        ('output.checkpoint_folds', (lambda t: tuple(int(w) for w in _words(t)),
                                     'checkpoint_folds')),
    ])
    return keys


def config_to_flat(config):
    """ Resolved config as an ordered ``{dotted key: text}`` dict. """
    flat = OrderedDict()
    for key, (_, attr) in _experiment_keys().items():
        if attr is None:
            flat[key] = _fmt(tuple(config.regimes))
        else:
            flat[key] = _fmt(getattr(config, attr))
    for f in fields(TrainConfig):
        if f.name != 'verbose':
            flat['train.%s' % f.name] = _fmt(getattr(config.train, f.name))
    gen = config.generator
    for name in _GENERATOR_SCALARS:
        flat['generator.%s' % name] = _fmt(getattr(gen, name))
    flat['generator.signal_features'] = _fmt(tuple(gen.signal_features))
    flat['generator.feature_missingness'] = _fmt(tuple(sorted(gen.feature_missingness.items())))
    flat['generator.event_window'] = _fmt(tuple(gen.event_window))
    for task, rate in gen.positive_rates.items():
        flat['generator.positive_rates.%s' % task] = _fmt(rate)
    for task, slope in gen.severity_slopes.items():
        flat['generator.severity_slopes.%s' % task] = _fmt(slope)
    for regime, rates in config.regimes.items():
        for task, rate in rates.items():
            flat['regimes.%s.%s' % (regime, task)] = _fmt(rate)
    return flat


def config_from_flat(flat, base=None):
    """
    Build an :class:`ExperimentConfig` from ``{dotted key: text}``;
    keys not in ``flat`` keep the values of ``base`` (defaults).
    """
    config = base or ExperimentConfig()
    changes = {}
    train_changes = {}
    gen_changes = {}
    rates = OrderedDict()
    slopes = OrderedDict()
    regimes = OrderedDict()
    regime_names = None
    fixed = _experiment_keys()

    for key, text in flat.items():
        try:
            if key in fixed:
                parse, attr = fixed[key]
                if attr is None:
                    regime_names = parse(text)
                else:
                    changes[attr] = parse(text)
            elif key.startswith('train.') and key[6:] in _TRAIN_TYPES and key[6:] != 'verbose':
                name = key[6:]
                train_changes[name] = _parser_for(_TRAIN_TYPES[name])(text)
            elif key.startswith('generator.positive_rates.'):
                rates[key.rsplit('.', 1)[1]] = float(text)
            elif key.startswith('generator.severity_slopes.'):
                slopes[key.rsplit('.', 1)[1]] = float(text)
            elif key == 'generator.signal_features':
                gen_changes['signal_features'] = _pairs(text, int, float)
            elif key == 'generator.feature_missingness':
                gen_changes['feature_missingness'] = dict(_pairs(text, int, float))
            elif key == 'generator.event_window':
                low, high = (float(w) for w in _words(text))
                gen_changes['event_window'] = (low, high)
            elif key.startswith('generator.') and key[10:] in _GENERATOR_SCALARS:
                name = key[10:]
                gen_changes[name] = int(text) if name in ('n_patients', 'seed') else float(text)
            elif key.startswith('regimes.') and key.count('.') == 2:
                _, regime, task = key.split('.')
                regimes.setdefault(regime, OrderedDict())[task] = float(text)
            else:
                raise ConfigError("unknown config key %r" % key)
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError("bad value for %s: %s" % (key, e))

    generator = config.generator
    if rates:
        gen_changes['positive_rates'] = OrderedDict(generator.positive_rates, **rates)
    if slopes:
        gen_changes['severity_slopes'] = OrderedDict(generator.severity_slopes, **slopes)
    if gen_changes:
        changes['generator'] = replace(generator, **gen_changes)
    if train_changes:
        changes['train'] = replace(config.train, **train_changes)

    all_regimes = OrderedDict((name, OrderedDict(r)) for name, r in config.regimes.items())
    for name, r in regimes.items():
        all_regimes.setdefault(name, OrderedDict()).update(r)
    if regime_names is not None:
        missing = [name for name in regime_names if name not in all_regimes]
        if missing:
            raise ConfigError("regimes %s have no [regimes.<name>] section" % ", ".join(missing))
        all_regimes = OrderedDict((name, all_regimes[name]) for name in regime_names)
    changes['regimes'] = all_regimes
    return replace(config, **changes)


def load_config(path=None, overrides=None):
    """
    Read an INI config file (``path`` may be None for defaults) and apply
    ``overrides`` (``{dotted key: value}``, e.g. from command-line flags).
    """
    flat = OrderedDict()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, 'r', encoding='utf8') as f:
                parser.read_file(f)
        except configparser.Error as e:
            raise ConfigError("can't parse %s: %s" % (path, e))
        for section in parser.sections():
            for key, value in parser.items(section):
                flat['%s.%s' % (section, key)] = value
    for key, value in (overrides or {}).items():
        flat[key] = _fmt(value)
    config = config_from_flat(flat)
    try:
        return config.validate()
    except ConfigError:
        raise
    except ContractError as e:
        raise ConfigError(str(e))


def dump_config(config):
    """ Resolved config as INI text. """
    sections = OrderedDict()
    for key, text in config_to_flat(config).items():
        section, name = key.rsplit('.', 1)
        sections.setdefault(section, []).append((name, text))
    out = io.StringIO()
    for section, items in sections.items():
        out.write("[%s]\n" % section)
        for name, text in items:
            out.write("%s = %s\n" % (name, text))
        out.write("\n")
    return out.getvalue()


def save_config(config, path):
    with open(path, 'w', encoding='utf8') as f:
        f.write(dump_config(config))
