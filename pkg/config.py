import dataclasses
from dataclasses import dataclass, field
import hashlib
import json
import os

from dotenv import load_dotenv

from models.dp import BELIEF_STATES
from models.market import ModelParams
from models.quantizer import (DEFAULT_MEANS, DEFAULT_STDS, PROJECTION_NORMS, UPDATE_RULES,
                              TrainingSchedule)
from utils.errors import ConfigValidationError

load_dotenv()


class Config:
    """Base configuration class"""
    OUTPUT_DIR = os.environ.get('BQ_OUTPUT_DIR') or 'runs/default'
    RUN_CONFIG = os.environ.get('BQ_RUN_CONFIG') or None
    LOG_LEVEL = os.environ.get('BQ_LOG_LEVEL') or 'INFO'
    TESTING = False


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True
    LOG_LEVEL = 'DEBUG'


class TestingConfig(Config):
    """Testing configuration"""
    TESTING = True
    LOG_LEVEL = 'WARNING'


@dataclass
class UtilityConfig:
    consumption_scale: float = 0.25
    consumption_shift: float = 2.0
    terminal_scale: float = 2.0
    exponent: float = 0.5


@dataclass
class RangeConfig:
    lo: float
    hi: float
    step: float


@dataclass
class ReturnNodeConfig:
    count: int = 41
    half_width: float = 1.0


@dataclass
class GridConfig:
    factor: RangeConfig = field(default_factory=lambda: RangeConfig(-1.5, 1.5, 0.05))
    wealth: RangeConfig = field(default_factory=lambda: RangeConfig(0.0, 10.0, 0.25))
    control_step: float = 0.05
    return_nodes: ReturnNodeConfig = field(default_factory=ReturnNodeConfig)


@dataclass
class PriorConfig:
    kind: str = 'gaussian'
    mean: float = 0.1
    std: float = 0.2


@dataclass
class QuantizerConfig:
    means: list = field(default_factory=lambda: list(DEFAULT_MEANS))
    stds: list = field(default_factory=lambda: list(DEFAULT_STDS))
    schedule: TrainingSchedule = field(default_factory=TrainingSchedule)
    update_rule: str = 'clvq'
    projection_norm: str = 'sup'
    prune_eps: float = 0.1
    reseed_window: int = 50
    prune_trials: int = 5000
    prior: PriorConfig = field(default_factory=PriorConfig)
    support_threshold: float = 0.01


@dataclass
class DPConfig:
    belief_state: str = 'normalized'
    normalize_terminal: bool = False


@dataclass
class SimConfig:
    n_paths: int = 1000
    renormalize_filter: bool = True
    bins: int = 32


@dataclass
class BoundsConfig:
    M0: float = None
    n: int = None
    fmax_samples: int = 20000
    In_max: int = 10


@dataclass
class RunConfig:
    model: ModelParams = field(default_factory=ModelParams)
    utilities: UtilityConfig = field(default_factory=UtilityConfig)
    grids: GridConfig = field(default_factory=GridConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    dp: DPConfig = field(default_factory=DPConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    seed: int = 0
    output_dir: str = None


_NUMBER = (int, float)


def _check_type(value, default, path, errors):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            errors.append(f'{path}: expected true or false')
    elif isinstance(default, _NUMBER):
        if isinstance(value, bool) or not isinstance(value, _NUMBER):
            errors.append(f'{path}: expected a number')
    elif isinstance(default, str):
        if not isinstance(value, str):
            errors.append(f'{path}: expected a string')
    elif isinstance(default, (list, tuple)):
        if not isinstance(value, list):
            errors.append(f'{path}: expected a list')


def _build(cls, raw, path, errors, defaults=None):
    """Instantiate dataclass `cls` from a dict over `defaults`, collecting errors with dotted paths"""
    if defaults is None and _has_defaults(cls):
        defaults = cls()
    if not isinstance(raw, dict):
        errors.append(f'{path or "config"}: expected an object')
        return defaults
    known = [f.name for f in dataclasses.fields(cls)]
    for key in raw:
        if key not in known:
            errors.append(f'{_join(path, key)}: unknown key')
    kwargs = {}
    for name in known:
        sub = _join(path, name)
        default = getattr(defaults, name) if defaults is not None else None
        if name not in raw:
            if defaults is None:
                errors.append(f'{sub}: required')
            else:
                kwargs[name] = default
            continue
        value = raw[name]
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub, errors, default)
        else:
            if value is not None and default is not None:
                _check_type(value, default, sub, errors)
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        errors.append(f'{path or "config"}: {e}')
        return defaults


def _has_defaults(cls):
    return all(f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING
               for f in dataclasses.fields(cls))


def _join(path, key):
    return f'{path}.{key}' if path else key


def _validate(cfg, errors):
    try:
        cfg.model.validate()
    except ConfigValidationError as e:
        errors.extend(e.errors)
    try:
        cfg.quantizer.schedule.validate()
    except ConfigValidationError as e:
        errors.extend(e.errors)
    q = cfg.quantizer
    if q.update_rule not in UPDATE_RULES:
        errors.append(f'quantizer.update_rule: one of {UPDATE_RULES}')
    if q.projection_norm not in PROJECTION_NORMS:
        errors.append(f'quantizer.projection_norm: one of {PROJECTION_NORMS}')
    if not q.means:
        errors.append('quantizer.means: must be nonempty')
    if not q.stds or any(s <= 0 for s in q.stds):
        errors.append('quantizer.stds: must be nonempty and > 0')
    if q.prune_eps < 0:
        errors.append('quantizer.prune_eps: must be >= 0')
    if q.prune_trials < 0:
        errors.append('quantizer.prune_trials: must be >= 0')
    if int(q.reseed_window) != q.reseed_window or q.reseed_window < 0:
        errors.append('quantizer.reseed_window: must be an integer >= 0')
    if q.prior.kind not in ('gaussian', 'psi'):
        errors.append("quantizer.prior.kind: 'gaussian' or 'psi'")
    if not q.prior.std > 0:
        errors.append('quantizer.prior.std: must be > 0')
    g = cfg.grids
    for name in ('factor', 'wealth'):
        rng = getattr(g, name)
        if not (rng.step > 0 and rng.hi > rng.lo):
            errors.append(f'grids.{name}: need hi > lo and step > 0')
    if g.wealth.lo < 0:
        errors.append('grids.wealth.lo: must be >= 0')
    if not 0 < g.control_step <= 1:
        errors.append('grids.control_step: must lie in (0, 1]')
    if g.return_nodes.count < 1 or not g.return_nodes.half_width > 0:
        errors.append('grids.return_nodes: count >= 1 and half_width > 0')
    if cfg.dp.belief_state not in BELIEF_STATES:
        errors.append(f'dp.belief_state: one of {BELIEF_STATES}')
    if cfg.sim.n_paths < 1:
        errors.append('sim.n_paths: must be >= 1')
    if cfg.sim.bins < 1:
        errors.append('sim.bins: must be >= 1')
    if cfg.bounds.M0 is not None and not cfg.bounds.M0 > 0:
        errors.append('bounds.M0: must be > 0')
    if cfg.seed < 0:
        errors.append('seed: must be >= 0')


def from_dict(raw):
    errors = []
    cfg = _build(RunConfig, raw, '', errors)
    if not errors:
        _validate(cfg, errors)
    if errors:
        raise ConfigValidationError(errors)
    return cfg


def to_dict(cfg):
    return dataclasses.asdict(cfg)


def parse_override(text):
    """'a.b.c=value' -> (['a', 'b', 'c'], value); value parsed as JSON when possible"""
    if '=' not in text:
        raise ConfigValidationError([f'override {text!r}: expected key=value'])
    key, value = text.split('=', 1)
    try:
        value = json.loads(value)
    except json.JSONDecodeError:
        pass
    return key.strip().split('.'), value


def apply_overrides(raw, overrides):
    raw = json.loads(json.dumps(raw))
    for text in overrides:
        keys, value = parse_override(text)
        node = raw
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigValidationError([f'{".".join(keys)}: cannot override inside a scalar'])
        node[keys[-1]] = value
    return raw


def load_config(path=None, overrides=()):
    """Read a JSON run configuration; an empty file (or no path) gives the defaults"""
    raw = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigValidationError([f'config: {path} does not exist'])
        with open(path) as f:
            text = f.read()
        if text.strip():
            try:
                raw = json.loads(text)
            except json.JSONDecodeError as e:
                raise ConfigValidationError([f'config: invalid JSON ({e})'])
    return from_dict(apply_overrides(raw, overrides))


def canonical_json(cfg):
    return json.dumps(to_dict(cfg), sort_keys=True, separators=(',', ':'))


def save_config(cfg, path):
    with open(path, 'w') as f:
        json.dump(to_dict(cfg), f, indent=2, sort_keys=True)
        f.write('\n')


def config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()
