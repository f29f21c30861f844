"""Training configuration: schema, INI loading, overrides and the config hash.

A configuration file is INI-style text with the sections ``architecture``,
``data``, ``prior``, ``losses``, ``discriminator``, ``training`` and ``eval``.
Every key is declared on :class:`TrainConfig`; unknown sections and keys are
rejected. Values are resolved with the precedence
``--set section.key=value`` > file > default.

>>> cfg = parse_config("[training]\\nregime = ot\\n", ["prior.k=8"])
>>> cfg.regime, cfg.k, cfg.batch_size
('ot', 8, 256)
>>> parse_config("[training]\\nbogus = 1\\n")
Traceback (most recent call last):
...
revgen.exceptions.ConfigError: unknown configuration key training.bogus
"""

import configparser
import logging

import attr

from .digests import text_digest
from .exceptions import ConfigError
from .presets import get_preset_names

_logger = logging.getLogger(__name__)

SECTIONS = ("architecture", "data", "prior", "losses", "discriminator", "training", "eval")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _to_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _to_str(v):
    return str(v).strip()


def _dotted(attribute):
    return f"{attribute.metadata['section']}.{attribute.metadata['key'] or attribute.name}"


def _choice(*options):
    def check(instance, attribute, value):
        if value not in options:
            raise ConfigError(
                f"{_dotted(attribute)}: {value!r} is not one of {', '.join(options)}"
            )

    return check


def _at_least(lo):
    def check(instance, attribute, value):
        if value < lo:
            raise ConfigError(f"{_dotted(attribute)}: must be >= {lo}, got {value}")

    return check


def _opt(section, default, converter, key=None, validator=None):
    return attr.ib(
        default=default, converter=converter, validator=validator, metadata={"section": section, "key": key}
    )


@attr.s(frozen=True, kw_only=True)
class TrainConfig:
    """Every configuration key with its section, converter and default."""

    # architecture
    preset = _opt("architecture", "mnist-small", _to_str)
    dtype = _opt("architecture", "f32", _to_str, validator=_choice("f32", "f64"))

    # data
    data_kind = _opt("data", "mnist", _to_str, key="kind", validator=_choice("mnist", "mixture"))
    images = _opt("data", "", _to_str)
    labels = _opt("data", "", _to_str)
    limit = _opt("data", 0, int, validator=_at_least(0))
    mixture_n = _opt("data", 2048, int, validator=_at_least(1))
    mixture_classes = _opt("data", 4, int, validator=_at_least(1))
    mixture_dim = _opt("data", 8, int, validator=_at_least(2))
    mixture_radius = _opt("data", 5.0, float)
    mixture_std = _opt("data", 0.5, float, validator=_at_least(0.0))

    # prior
    k = _opt("prior", 64, int, validator=_at_least(1))
    family = _opt("prior", "normal", _to_str, validator=_choice("normal", "uniform"))
    clip_bound = _opt("prior", 2.0, float)
    select_samples = _opt("prior", 1000, int, validator=_at_least(1))

    # losses
    l1_weight = _opt("losses", 1.0, float)
    l2_weight = _opt("losses", 1.0, float)
    perturb_weight = _opt("losses", 1.0, float)
    perturb_std = _opt("losses", 0.1, float, validator=_at_least(0.0))
    perturb_in_adversarial = _opt("losses", False, _to_bool)
    ot_cost = _opt("losses", "euclidean", _to_str, validator=_choice("euclidean", "sqeuclidean"))
    ot_per_class = _opt("losses", True, _to_bool)

    # discriminator
    hidden1 = _opt("discriminator", 400, int, validator=_at_least(1))
    hidden2 = _opt("discriminator", 800, int, validator=_at_least(1))
    spectral_norm = _opt("discriminator", True, _to_bool)
    power_warmup = _opt("discriminator", 200, int, validator=_at_least(0))
    disc_steps = _opt("discriminator", 1, int, key="steps", validator=_at_least(1))

    # training
    regime = _opt("training", "adversarial", _to_str, validator=_choice("adversarial", "ot"))
    batch_size = _opt("training", 256, int, validator=_at_least(1))
    recon_epochs = _opt("training", 20, int, validator=_at_least(0))
    adv_epochs = _opt("training", 50, int, validator=_at_least(0))
    ot_epochs = _opt("training", 20, int, validator=_at_least(0))
    net_lr = _opt("training", 1e-4, float)
    disc_lr = _opt("training", 4e-4, float)
    # Adam moves each class mean by about prior_lr per step
    prior_lr = _opt("training", 1e-2, float)
    beta1 = _opt("training", 0.0, float)
    beta2 = _opt("training", 0.9, float)
    adam_eps = _opt("training", 1e-8, float)
    seed_net = _opt("training", 0, int, validator=_at_least(0))
    seed_data = _opt("training", 0, int, validator=_at_least(0))
    seed_adversary = _opt("training", 0, int, validator=_at_least(0))
    seed_noise = _opt("training", 0, int, validator=_at_least(0))
    checkpoint_every = _opt("training", 5, int, validator=_at_least(0))
    single_threaded = _opt("training", True, _to_bool)

    # eval
    eval_every = _opt("eval", 1, int, key="every", validator=_at_least(0))
    eval_n_samples = _opt("eval", 1000, int, key="n_samples", validator=_at_least(2))
    feature = _opt("eval", "classifier", _to_str, validator=_choice("classifier", "identity"))
    classifier_epochs = _opt("eval", 3, int, validator=_at_least(1))
    eval_seed = _opt("eval", 0, int, key="seed", validator=_at_least(0))
    effective_threshold = _opt("eval", 0.01, float)
    range_stds = _opt("eval", 3.0, float)

    @property
    def total_epochs(self):
        if self.regime == "ot":
            return self.ot_epochs
        return self.recon_epochs + self.adv_epochs


def _schema():
    """``{(section, key): attrs field}`` in declaration order."""
    out = {}
    for f in attr.fields(TrainConfig):
        out[(f.metadata["section"], f.metadata["key"] or f.name)] = f
    return out


def _convert(section, key, raw):
    f = _schema()[(section, key)]
    try:
        return f.converter(raw)
    except ValueError as e:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} ({e})") from e


def _lookup(dotted):
    section, _, key = dotted.partition(".")
    if section not in SECTIONS:
        raise ConfigError(f"unknown configuration section {section!r} (in {dotted})")
    if (section, key) not in _schema():
        raise ConfigError(f"unknown configuration key {section}.{key}")
    return section, key


def _build(values):
    kwargs = {_schema()[sk].name: _convert(*sk, raw) for sk, raw in values.items()}
    cfg = TrainConfig(**kwargs)
    if cfg.preset not in get_preset_names():
        raise ConfigError(f"architecture.preset: unknown preset {cfg.preset!r}")
    return cfg


def _parse_overrides(overrides):
    values = {}
    for item in overrides or ():
        dotted, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        values[_lookup(dotted.strip())] = raw.strip()
    return values


def parse_config(text, overrides=()):
    """Parses INI text and applies overrides.

    Args:
        text (str): Configuration text; may be empty.
        overrides (iterable of str, optional): ``section.key=value`` items.

    Returns:
        TrainConfig: The validated configuration.

    Raises:
        ConfigError: On unknown sections or keys and unparsable or invalid values.
    """

    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed configuration: {e}") from e
    values = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            values[_lookup(f"{section}.{key}")] = raw
    values.update(_parse_overrides(overrides))
    return _build(values)


def load_config(path=None, overrides=()):
    """Reads a configuration file (or only defaults when path is None) and applies overrides."""
    text = ""
    if path is not None:
        try:
            with open(path, encoding="UTF-8") as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read configuration {path}: {e}") from e
    cfg = parse_config(text, overrides)
    _logger.info("Loaded configuration from %s (%d overrides)", path or "defaults", len(overrides or ()))
    return cfg


def with_overrides(cfg, overrides):
    """Returns a copy of cfg with ``section.key=value`` overrides applied."""
    return parse_config(dump_config(cfg), overrides)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg):
    """Canonical text of cfg: every key, sections and keys in schema order.

    ``parse_config(dump_config(cfg)) == cfg``.
    """

    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for (sec, key), f in _schema().items():
            if sec == section:
                lines.append(f"{key} = {_fmt(getattr(cfg, f.name))}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg):
    """Digest of :func:`dump_config`, base64url.

    Examples:
        >>> config_hash(TrainConfig()) == config_hash(parse_config(""))
        True
    """

    return str(text_digest(dump_config(cfg)))
