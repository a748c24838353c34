# SPDX-License-Identifier: GPL-3.0+

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace

from fracseir.processor.error import InvalidConfiguration


class Config(object):
    """The base fracseir processor configuration."""

    log_level = logging.INFO
    default_seed = 42
    # Where the CLI writes its artifacts unless --out is given
    output_dir = os.environ.get('FRACSEIR_OUTPUT_DIR', 'fracseir-output')


class ProdConfig(Config):
    """The production fracseir configuration."""

    pass


class DevConfig(Config):
    """The development fracseir configuration."""

    log_level = logging.DEBUG


class TestConfig(Config):
    """The test fracseir configuration."""

    pass


if os.getenv('FRACSEIR_DEV', '').lower() == 'true':
    config = DevConfig
elif os.getenv('FRACSEIR_TESTING', '').lower() == 'true':
    config = TestConfig
else:
    config = ProdConfig


LOSS_TERMS = (
    'data_new_infected',
    'data_cum_infected',
    'data_new_removed',
    'data_removed',
    'data_infected',
    'residual_s',
    'residual_e',
    'residual_i',
    'residual_r',
    'residual_cum',
)


def _default_loss_weights():
    return {name: 1.0 for name in LOSS_TERMS}


@dataclass(frozen=True)
class TrainingConfig:
    """
    The settings of one fractional SEIR training run.

    Only ``population`` is required; every other field has the default documented in the
    README. Instances are immutable, use ``with_overrides`` to derive a modified copy.
    """

    population: float
    sigma: float = 1.0 / 3.0
    tau: float = 0.1
    iterations: int = 50000
    learning_rate: float = 1e-3
    seed: int = Config.default_seed
    loss_weights: dict = field(default_factory=_default_loss_weights)
    alpha_bounds: tuple = (0.05, 1.0)
    alpha_init: float = 0.9
    alpha_rebuild_threshold: float = 1e-4
    alpha_fd_step: float = 1e-4
    adam_betas: tuple = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    compartment_layers: tuple = (20, 20, 20, 20, 20)
    rate_layers: tuple = (5,)
    beta_init: float = 0.3
    mu_init: float = 0.05
    record_every: int = 1
    log_every: int = 1000

    def __post_init__(self):
        """
        Normalize the container fields and validate the configuration.

        :raises InvalidConfiguration: if any value is out of its admissible range
        """
        weights = _default_loss_weights()
        unknown = set(self.loss_weights or {}) - set(weights)
        if unknown:
            raise InvalidConfiguration(f'Unknown loss terms: {", ".join(sorted(unknown))}')
        weights.update({k: float(v) for k, v in (self.loss_weights or {}).items()})
        object.__setattr__(self, 'loss_weights', weights)
        for name in ('alpha_bounds', 'adam_betas', 'compartment_layers', 'rate_layers'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        """
        Check every field against its admissible range.

        :raises InvalidConfiguration: if a field is invalid
        """
        if self.population is None or not self.population > 0:
            raise InvalidConfiguration('The population must be a positive number')
        if not self.sigma > 0:
            raise InvalidConfiguration('sigma must be positive')
        if not 0 < self.tau <= 1:
            raise InvalidConfiguration('tau must lie in (0, 1]')
        steps = round(1.0 / self.tau)
        if abs(steps * self.tau - 1.0) > 1e-9:
            raise InvalidConfiguration(f'tau={self.tau} does not divide one day evenly')
        if self.iterations < 0:
            raise InvalidConfiguration('iterations cannot be negative')
        if not self.learning_rate > 0:
            raise InvalidConfiguration('learning_rate must be positive')
        lo, hi = self.alpha_bounds
        if not 0 <= lo < hi <= 1:
            raise InvalidConfiguration('alpha_bounds must satisfy 0 <= lo < hi <= 1')
        if not lo < self.alpha_init < hi:
            raise InvalidConfiguration('alpha_init must lie strictly inside alpha_bounds')
        if self.alpha_rebuild_threshold < 0 or not self.alpha_fd_step > 0:
            raise InvalidConfiguration('Invalid alpha rebuild threshold or finite-difference step')
        if any(not 0 <= b < 1 for b in self.adam_betas) or len(self.adam_betas) != 2:
            raise InvalidConfiguration('adam_betas must be two decay rates in [0, 1)')
        if any(int(n) < 1 for n in self.compartment_layers + self.rate_layers):
            raise InvalidConfiguration('Hidden layer sizes must be positive integers')
        if not (self.beta_init > 0 and self.mu_init > 0):
            raise InvalidConfiguration('beta_init and mu_init must be positive')
        if any(w < 0 for w in self.loss_weights.values()):
            raise InvalidConfiguration('Loss weights cannot be negative')
        if self.record_every < 1 or self.log_every < 1:
            raise InvalidConfiguration('record_every and log_every must be at least 1')

    @property
    def steps_per_day(self):
        """Return the number of residual steps in one day."""
        return round(1.0 / self.tau)

    @classmethod
    def from_dict(cls, data):
        """
        Build a configuration from a parsed JSON document.

        :param dict data: the configuration keys and values
        :return: the validated configuration
        :rtype: TrainingConfig
        :raises InvalidConfiguration: if a key is unknown or a value is invalid
        """
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfiguration(f'Unknown configuration keys: {", ".join(sorted(unknown))}')
        if 'population' not in data:
            raise InvalidConfiguration('The configuration must define "population"')
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidConfiguration(str(exc))

    @classmethod
    def from_file(cls, path):
        """
        Read a configuration from a JSON file.

        :param str path: the path to the JSON file
        :return: the validated configuration
        :rtype: TrainingConfig
        :raises InvalidConfiguration: if the file is not a JSON object or is invalid
        """
        with open(path, 'r') as f:
            try:
                data = json.load(f)
            except ValueError as exc:
                raise InvalidConfiguration(f'The configuration file "{path}" is not valid JSON: '
                                           f'{exc}')
        if not isinstance(data, dict):
            raise InvalidConfiguration('The configuration file must contain a JSON object')
        return cls.from_dict(data)

    def to_dict(self):
        """
        Return the configuration as JSON-serializable data.

        :rtype: dict
        """
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    def with_overrides(self, **overrides):
        """
        Return a copy with some fields replaced, skipping overrides that are None.

        :return: the new configuration
        :rtype: TrainingConfig
        """
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})
