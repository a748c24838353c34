# SPDX-License-Identifier: GPL-3.0+
"""
The physics-informed fit of the fractional SEIR system.

Five networks approximate S, E, I, R and the cumulative infected I^c as fractions of the
population, two more approximate the rates beta(t) and mu(t). The training loss is the sum
of a data misfit on the daily nodes ``1..N_u`` and of the squared residuals of

    D S   = -beta S I / N
    D E   =  beta S I / N - sigma E
    D I   =  sigma E - mu I
    D R   =  mu I
    D I^c =  sigma E

on the residual mesh, D being the discrete Caputo-Hadamard derivative with lower terminal 1.
Every quantity inside the loss is divided by N.

The epidemic occupies a tiny fraction of N, so each compartment network predicts its
compartment in units of the matching data series (``offset + scale * net``) and the training
objective divides every term by the squared magnitude of its series.
"""

import datetime
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from fracseir.common.chfrac import TimeGrid, build_weights, operator_alpha_derivative
from fracseir.common.models.base import JsonModel
from fracseir.common.models.cases import SERIES_NAMES, CaseSeries
from fracseir.common.models.epidemic import COMPARTMENTS, SeirConstants
from fracseir.common.neuralcore import (
    DenseNet, OptimizerState, bounded_scalar, bounded_scalar_grad, bounded_scalar_inverse,
    optimizer_step, softplus, softplus_grad, softplus_inverse,
)
from fracseir.processor.configuration import LOSS_TERMS
from fracseir.processor.datapipe import TrainingArrays, to_training_arrays
from fracseir.processor.error import (
    GridMismatch, InvalidConfiguration, MissingSeriesError, TrainingDivergence,
)
from fracseir.processor.logging import log

RATES = ('beta', 'mu')
NETWORK_NAMES = COMPARTMENTS + RATES
DATA_TERMS = LOSS_TERMS[:5]
RESIDUAL_TERMS = LOSS_TERMS[5:]
# The residual term each compartment's derivative appears in
RESIDUAL_OF = dict(zip(COMPARTMENTS, RESIDUAL_TERMS))
# The data series each data term compares against
SERIES_OF = dict(zip(DATA_TERMS, SERIES_NAMES))
# The data series that sets the magnitude of each compartment. S + E + I^c is conserved, so
# S moves by about as much as I^c.
SCALE_SERIES = {'s': 'cum_infected', 'e': 'infected', 'i': 'infected', 'r': 'removed',
                'i_cum': 'cum_infected'}


@dataclass(frozen=True)
class TrainingMesh:
    """
    The data nodes ``1..N_u`` and the residual mesh ``t_k = 1 + k * tau``.

    The mesh has K = (N_u - 1) / tau steps. The residual nodes are ``t_1..t_K``: at the lower
    terminal ``t_0 = 1`` the discrete derivative vanishes identically. Data node j sits at mesh
    index ``(j - 1) / tau``.
    """

    n_days: int
    tau: float = 0.1

    def __post_init__(self):
        """
        Validate the mesh.

        :raises GridMismatch: if there are fewer than two days or tau does not divide a day
        """
        if int(self.n_days) < 2:
            raise GridMismatch('A training mesh needs at least two data nodes')
        steps = round(1.0 / self.tau) if self.tau > 0 else 0
        if steps < 1 or abs(steps * self.tau - 1.0) > 1e-9:
            raise GridMismatch(f'tau={self.tau} does not divide one day evenly')
        object.__setattr__(self, 'n_days', int(self.n_days))

    @property
    def steps_per_day(self):
        """Return 1 / tau."""
        return round(1.0 / self.tau)

    @property
    def n_residual(self):
        """Return N_r, the number of residual nodes."""
        return (self.n_days - 1) * self.steps_per_day

    @cached_property
    def grid(self):
        """Return the residual mesh including the lower terminal."""
        return TimeGrid(1.0 + np.arange(self.n_residual + 1) / self.steps_per_day)

    @property
    def data_indices(self):
        """Return the mesh index of every data node."""
        return np.arange(self.n_days) * self.steps_per_day

    @property
    def data_nodes(self):
        """Return the data nodes ``1..N_u``."""
        return np.arange(1, self.n_days + 1, dtype=float)

    @property
    def residual_nodes(self):
        """Return ``t_1..t_K``."""
        return self.grid.points[1:]

    def normalize(self, t):
        """Rescale times so the training window maps onto [0, 1]."""
        return (np.asarray(t, dtype=float) - 1.0) / (self.n_days - 1.0)


@dataclass
class LossReport:
    """The loss of one training iteration with its ten weighted terms."""

    mse_u: float
    mse_r: float
    total: float
    terms: dict = field(default_factory=dict)
    iteration: int = None
    alpha: float = None

    @classmethod
    def from_terms(cls, terms, iteration=None, alpha=None):
        """
        Sum the data and residual terms into a report.

        :param dict terms: the value of every name in ``LOSS_TERMS``
        :rtype: LossReport
        """
        mse_u = float(sum(terms[name] for name in DATA_TERMS))
        mse_r = float(sum(terms[name] for name in RESIDUAL_TERMS))
        return cls(mse_u=mse_u, mse_r=mse_r, total=mse_u + mse_r,
                   terms={name: float(terms[name]) for name in LOSS_TERMS},
                   iteration=iteration, alpha=alpha)

    def as_row(self):
        """Return the report as a flat dict for the loss-history CSV."""
        row = {'iteration': self.iteration, 'alpha': self.alpha, 'total': self.total,
               'mse_u': self.mse_u, 'mse_r': self.mse_r}
        row.update(self.terms)
        return row


class SeirModel(JsonModel):
    """The seven networks, the trainable fractional order, and the constants of one fit."""

    def __init__(self, constants, mesh, nets, raw_alpha, alpha_bounds=(0.05, 1.0),
                 start_date=None, trained=False, output_scales=None, output_offsets=None):
        """
        Initialize the SeirModel class.

        Compartment ``name`` is ``output_offsets[name] + output_scales[name] * net(t)`` as a
        fraction of N; missing entries mean a scale of 1 and an offset of 0.

        :param SeirConstants constants: N and sigma
        :param TrainingMesh mesh: the training window and residual mesh
        :param dict nets: a DenseNet for every name in ``NETWORK_NAMES``
        :param float raw_alpha: the unconstrained value decoded into the fractional order
        :param tuple alpha_bounds: the open interval alpha is mapped into
        :param datetime.date start_date: (optional) the calendar day of node 1
        :param bool trained: whether the model came out of ``fit``
        :param dict output_scales: (optional) the output scale of each compartment network
        :param dict output_offsets: (optional) the output offset of each compartment network
        :raises ValueError: if a network is missing or a scale is not positive
        """
        missing = set(NETWORK_NAMES) - set(nets)
        if missing:
            raise ValueError(f'Missing networks: {", ".join(sorted(missing))}')
        self.constants = constants
        self.mesh = mesh
        self.nets = dict(nets)
        self.raw_alpha = np.array([float(raw_alpha)])
        self.alpha_bounds = tuple(float(b) for b in alpha_bounds)
        self.start_date = start_date
        self.trained = trained
        self.output_scales = {name: 1.0 for name in COMPARTMENTS}
        self.output_scales.update({k: float(v) for k, v in (output_scales or {}).items()})
        self.output_offsets = {name: 0.0 for name in COMPARTMENTS}
        self.output_offsets.update({k: float(v) for k, v in (output_offsets or {}).items()})
        if not all(scale > 0 for scale in self.output_scales.values()):
            raise ValueError('Output scales must be positive')

    @classmethod
    def create(cls, constants, mesh, compartment_layers=(20, 20, 20, 20, 20), rate_layers=(5,),
               seed=42, alpha_init=0.9, alpha_bounds=(0.05, 1.0), beta_init=0.3, mu_init=0.05,
               initial_outputs=None, output_scales=None, start_date=None):
        """
        Create an untrained model with freshly initialized networks.

        Network n (in the order of ``NETWORK_NAMES``) is seeded with ``seed + n``. Output
        layers start at zero weights, so every network begins constant: each compartment at
        ``initial_outputs[name]`` (S defaults to the whole population and is offset by it),
        the rates at ``beta_init`` and ``mu_init``.

        :param SeirConstants constants: N and sigma
        :param TrainingMesh mesh: the training mesh
        :param dict initial_outputs: (optional) compartment values at the start, fractions of N
        :param dict output_scales: (optional) the output scale of each compartment network
        :return: the model
        :rtype: SeirModel
        """
        scales = {name: 1.0 for name in COMPARTMENTS}
        scales.update(output_scales or {})
        offsets = {name: 0.0 for name in COMPARTMENTS}
        offsets['s'] = 1.0
        start = {'s': 1.0}
        start.update(initial_outputs or {})
        biases = {name: (start.get(name, 0.0) - offsets[name]) / scales[name]
                  for name in COMPARTMENTS}
        biases['beta'] = softplus_inverse(beta_init)
        biases['mu'] = softplus_inverse(mu_init)
        nets = {}
        for index, name in enumerate(NETWORK_NAMES):
            hidden = compartment_layers if name in COMPARTMENTS else rate_layers
            net = DenseNet([1, *hidden, 1], seed=seed + index)
            net.weights[-1][:] = 0.0
            net.biases[-1][0] = biases[name]
            nets[name] = net
        raw_alpha = bounded_scalar_inverse(alpha_init, *alpha_bounds)
        return cls(constants, mesh, nets, raw_alpha, alpha_bounds=alpha_bounds,
                   start_date=start_date, output_scales=scales, output_offsets=offsets)

    def output_scale(self, name):
        """Return the factor between a network's output and its value, 1 for the rates."""
        return self.output_scales.get(name, 1.0)

    @property
    def alpha(self):
        """Return the decoded fractional order."""
        return bounded_scalar(self.raw_alpha[0], *self.alpha_bounds)

    @property
    def alpha_gradient_factor(self):
        """Return d(alpha)/d(raw_alpha)."""
        return bounded_scalar_grad(self.raw_alpha[0], *self.alpha_bounds)

    def forward(self, t):
        """
        Evaluate every network on the same batch of times, recording their tapes.

        :param t: times in days
        :return: the compartments (fractions of N) and the rate networks' raw outputs
        :rtype: dict
        """
        t_hat = self.mesh.normalize(np.atleast_1d(t))
        values = {name: self.nets[name].forward(t_hat) for name in NETWORK_NAMES}
        for name in COMPARTMENTS:
            values[name] = self.output_offsets[name] + self.output_scales[name] * values[name]
        return values

    def evaluate(self, t):
        """
        Evaluate the compartments (fractions of N) and the rates (1/day).

        :param t: times in days
        :rtype: dict
        """
        values = self.forward(t)
        for name in RATES:
            values[name] = softplus(values[name])
        return values

    def infer(self, days):
        """
        Return the inferred compartments in persons and the rates in 1/day.

        :param days: the days to evaluate
        :rtype: dict
        """
        values = self.evaluate(days)
        for name in COMPARTMENTS:
            values[name] = values[name] * self.constants.population
        return values

    def parameters(self):
        """Return every trainable array: the network parameters, then ``raw_alpha``."""
        params = []
        for name in NETWORK_NAMES:
            params.extend(self.nets[name].parameters())
        params.append(self.raw_alpha)
        return params

    def mark_updated(self):
        """Invalidate the recorded forward passes after an optimizer step."""
        for net in self.nets.values():
            net.mark_updated()

    def date_of(self, day):
        """Return the calendar day of a model day, or None for an undated window."""
        if self.start_date is None:
            return None
        return self.start_date + datetime.timedelta(days=int(round(day)) - 1)

    def to_dict(self):
        """
        Serialize the model: the networks plus alpha, the constants and the window.

        :rtype: dict
        """
        return {
            'schema_version': self.SCHEMA_VERSION,
            'alpha': self.alpha,
            'raw_alpha': float(self.raw_alpha[0]),
            'alpha_bounds': list(self.alpha_bounds),
            'constants': {'population': self.constants.population,
                          'sigma': self.constants.sigma},
            'window': {
                'n_days': self.mesh.n_days,
                'tau': self.mesh.tau,
                'start_date': self.start_date.isoformat() if self.start_date else None,
            },
            'trained': self.trained,
            'output_scales': {name: self.output_scales[name] for name in COMPARTMENTS},
            'output_offsets': {name: self.output_offsets[name] for name in COMPARTMENTS},
            'nets': {name: self.nets[name].to_dict() for name in NETWORK_NAMES},
        }

    @classmethod
    def from_dict(cls, data):
        """
        Rebuild a model serialized by ``to_dict``.

        :param dict data: the serialized model
        :rtype: SeirModel
        :raises SchemaVersionMismatch: if the model or a network uses another schema version
        """
        cls.check_schema_version(data)
        window = data['window']
        start_date = window.get('start_date')
        return cls(
            SeirConstants(**data['constants']),
            TrainingMesh(window['n_days'], window['tau']),
            {name: DenseNet.from_dict(net) for name, net in data['nets'].items()},
            data['raw_alpha'],
            alpha_bounds=data['alpha_bounds'],
            start_date=datetime.date.fromisoformat(start_date) if start_date else None,
            trained=data.get('trained', False),
            output_scales=data.get('output_scales'),
            output_offsets=data.get('output_offsets'),
        )


def _check_grid(model, table):
    if not table.grid.matches(model.mesh.grid):
        raise GridMismatch('The weight table was not built on the model\'s residual mesh')


def _weights(weights):
    if weights is None:
        return {name: 1.0 for name in LOSS_TERMS}
    return weights


def residual_vectors(table, states, beta, mu, sigma):
    """
    Compute the five equation residuals at every mesh node, zero at the lower terminal.

    The derivatives sum weighted increments, so constant compartments contribute exactly 0.

    :param QuadratureTable table: the weights on the mesh
    :param dict states: the compartment samples (fractions of N) keyed by compartment
    :param numpy.ndarray beta: the transmission rate at every node
    :param numpy.ndarray mu: the removal rate at every node
    :param float sigma: the incubation rate
    :return: the residual of every name in ``RESIDUAL_TERMS``
    :rtype: dict
    """
    s, e, i, r, c = (np.asarray(states[name], dtype=float) for name in COMPARTMENTS)
    infection = beta * s * i
    residuals = {
        'residual_s': table.apply(s) + infection,
        'residual_e': table.apply(e) - infection + sigma * e,
        'residual_i': table.apply(i) - sigma * e + mu * i,
        'residual_r': table.apply(r) - mu * i,
        'residual_cum': table.apply(c) - sigma * e,
    }
    for values in residuals.values():
        values[0] = 0.0
    return residuals


def equation_residuals(table, states, beta, mu, sigma):
    """
    Compute the residuals on the residual nodes ``t_1..t_K``.

    :param QuadratureTable table: the weights on the mesh
    :param dict states: the compartment samples at ``t_0..t_K`` keyed by compartment
    :param beta: the transmission rate at every node
    :param mu: the removal rate at every node
    :param float sigma: the incubation rate
    :return: an array of shape (5, K), one row per equation in the order S, E, I, R, I^c
    :rtype: numpy.ndarray
    """
    residuals = residual_vectors(table, states, beta, mu, sigma)
    return np.stack([residuals[name][1:] for name in RESIDUAL_TERMS])


def residual_at(model, table, k):
    """
    Compute the five equation residuals at the residual node ``t_k``.

    :param SeirModel model: the model
    :param QuadratureTable table: the weights on the model's mesh for the current alpha
    :param int k: the residual node index, ``1 <= k <= K``
    :return: the residuals of the S, E, I, R and I^c equations
    :rtype: numpy.ndarray
    :raises GridMismatch: if the table and mesh differ or k is out of range
    """
    _check_grid(model, table)
    if not 1 <= k <= table.steps:
        raise GridMismatch(f'Residual index {k} is outside 1..{table.steps}')
    values = model.evaluate(table.grid.points)
    return equation_residuals(table, values, values['beta'], values['mu'],
                              model.constants.sigma)[:, k - 1]


def residual_terms(residuals, weights=None):
    """
    Sum the squared residuals per equation.

    :param numpy.ndarray residuals: the (5, K) array of ``equation_residuals``
    :param dict weights: (optional) multipliers keyed by loss term
    :rtype: dict
    """
    weights = _weights(weights)
    return {name: weights[name] * float(np.sum(np.square(row)))
            for name, row in zip(RESIDUAL_TERMS, residuals)}


def mse_r(model, table, mesh, weights=None):
    """
    Compute the residual loss: the plain sum of squared residuals over all residual nodes.

    :param SeirModel model: the model
    :param QuadratureTable table: the weights on ``mesh`` for the current alpha
    :param TrainingMesh mesh: the training mesh
    :param dict weights: (optional) per-term multipliers
    :rtype: float
    :raises GridMismatch: if the table, the mesh and the model disagree
    """
    if not table.grid.matches(mesh.grid):
        raise GridMismatch('The weight table was not built on the given mesh')
    _check_grid(model, table)
    values = model.evaluate(mesh.grid.points)
    residuals = equation_residuals(table, values, values['beta'], values['mu'],
                                   model.constants.sigma)
    return float(sum(residual_terms(residuals, weights).values()))


def _as_arrays(data, population):
    if isinstance(data, CaseSeries):
        return to_training_arrays(data, population)
    if isinstance(data, TrainingArrays):
        return data
    raise MissingSeriesError(f'Cannot read case series from {type(data).__name__}')


def data_errors(values, arrays, mesh):
    """
    Compute the network-minus-data error of every data term.

    The network's daily-new values are backward differences ``I^c(t) - I^c(t - 1)`` and
    ``R(t) - R(t - 1)``, so those two terms start at the second data node.

    :param dict values: compartment samples on the mesh (fractions of N)
    :param TrainingArrays arrays: the normalized data
    :param TrainingMesh mesh: the training mesh
    :return: the error vector of every name in ``DATA_TERMS``
    :rtype: dict
    :raises MissingSeriesError: if a series is absent or does not span the window
    """
    for name in SERIES_NAMES:
        series = arrays.series.get(name)
        if series is None:
            raise MissingSeriesError(f'The data has no "{name}" series')
        if len(series) != mesh.n_days:
            raise MissingSeriesError(
                f'The "{name}" series has {len(series)} days but the window has {mesh.n_days}')
    idx = mesh.data_indices
    cum = values['i_cum'][idx]
    removed = values['r'][idx]
    return {
        'data_new_infected': np.diff(cum) - arrays['new_infected'][1:],
        'data_cum_infected': cum - arrays['cum_infected'],
        'data_new_removed': np.diff(removed) - arrays['new_removed'][1:],
        'data_removed': removed - arrays['removed'],
        'data_infected': values['i'][idx] - arrays['infected'],
    }


def mse_u(model, data, mesh, weights=None):
    """
    Compute the data loss: the sum of the five squared-error sums over the data nodes.

    :param SeirModel model: the model
    :param data: a preprocessed CaseSeries or its TrainingArrays
    :param TrainingMesh mesh: the training mesh
    :param dict weights: (optional) per-term multipliers
    :rtype: float
    :raises MissingSeriesError: if a series is missing
    """
    arrays = _as_arrays(data, model.constants.population)
    weights = _weights(weights)
    values = model.evaluate(mesh.grid.points)
    errors = data_errors(values, arrays, mesh)
    return float(sum(weights[name] * np.sum(np.square(err)) for name, err in errors.items()))


def series_scales(arrays):
    """
    Return the magnitude of every normalized data series.

    The magnitude is the largest absolute value of the series, but at least one person.

    :param TrainingArrays arrays: the normalized data
    :rtype: dict
    """
    floor = 1.0 / arrays.population
    return {name: max(float(np.max(np.abs(arrays[name]))), floor) for name in SERIES_NAMES}


def compartment_scales(arrays):
    """
    Return the output scale of every compartment network for a data set.

    :param TrainingArrays arrays: the normalized data
    :rtype: dict
    """
    scales = series_scales(arrays)
    return {name: scales[series] for name, series in SCALE_SERIES.items()}


def scaled_loss_weights(model, arrays, weights=None):
    """
    Divide every loss weight by the squared magnitude of its term.

    Data terms are measured against their data series, residual terms against the output
    scale of the compartment whose derivative they hold.

    :param SeirModel model: the model, for its output scales
    :param TrainingArrays arrays: the normalized data
    :param dict weights: (optional) the configured multipliers
    :rtype: dict
    """
    weights = _weights(weights)
    scales = series_scales(arrays)
    scaled = {term: weights[term] / scales[series] ** 2 for term, series in SERIES_OF.items()}
    for name, term in RESIDUAL_OF.items():
        scaled[term] = weights[term] / model.output_scale(name) ** 2
    return scaled


@dataclass
class ChTermGradient:
    """
    The gradients of ``D u_NN(t_k)`` for the five compartment networks.

    ``tapes[name]`` holds the network-parameter gradients, ``raw_alpha[name]`` the derivative
    with respect to the unconstrained order.
    """

    tapes: dict
    raw_alpha: dict


def gradient_of_ch_term(model, table, k, alpha_step=1e-4):
    """
    Differentiate the approximate derivative of every compartment network at ``t_k``.

    The scheme is linear in the samples, so the parameter gradient is the same weighted sum
    of the networks' parameter gradients at the mesh nodes. The order enters through the
    weights only; that part is a central difference of two extra tables.

    :param SeirModel model: the model
    :param QuadratureTable table: the weights on the model's mesh for the model's alpha
    :param int k: the residual node index, ``1 <= k <= K``
    :param float alpha_step: the finite-difference step in alpha
    :rtype: ChTermGradient
    :raises GridMismatch: if the table and mesh differ or k is out of range
    """
    _check_grid(model, table)
    if not 1 <= k <= table.steps:
        raise GridMismatch(f'Residual index {k} is outside 1..{table.steps}')
    row = table.operator[k]
    d_row = operator_alpha_derivative(table.grid, table.alpha, alpha_step)[k]
    t_hat = model.mesh.normalize(table.grid.points)
    tapes, raw_alpha = {}, {}
    for name in COMPARTMENTS:
        scale = model.output_scale(name)
        values = scale * model.nets[name].forward(t_hat)
        tapes[name] = model.nets[name].backward(scale * row)
        raw_alpha[name] = float(d_row @ values) * model.alpha_gradient_factor
    return ChTermGradient(tapes=tapes, raw_alpha=raw_alpha)


class Trainer(object):
    """Runs full-batch adaptive moment descent of the loss over all parameters and alpha."""

    def __init__(self, model, arrays, config):
        """
        Initialize the Trainer class.

        :param SeirModel model: the model to train, updated in place
        :param TrainingArrays arrays: the normalized data on the model's window
        :param TrainingConfig config: the training settings
        :raises GridMismatch: if the data does not span the model's window
        """
        if arrays.n_days != model.mesh.n_days:
            raise GridMismatch(f'The data has {arrays.n_days} days but the model window has '
                               f'{model.mesh.n_days}')
        self.model = model
        self.arrays = arrays
        self.config = config
        self.mesh = model.mesh
        self.weights = scaled_loss_weights(model, arrays, config.loss_weights)
        beta1, beta2 = config.adam_betas
        self.state = OptimizerState.for_params(
            model.parameters(), learning_rate=config.learning_rate, beta1=beta1, beta2=beta2,
            epsilon=config.adam_epsilon)
        self.table = None
        self.alpha_operator = None
        self.history = []

    def refresh_tables(self, force=False):
        """
        Rebuild the weight tables when alpha moved by more than the configured threshold.

        :param bool force: rebuild regardless of the threshold
        :return: whether the tables were rebuilt
        :rtype: bool
        """
        alpha = self.model.alpha
        if (not force and self.table is not None
                and abs(alpha - self.table.alpha) <= self.config.alpha_rebuild_threshold):
            return False
        log.debug('Rebuilding the weight tables for alpha=%.6f', alpha)
        self.table = build_weights(self.mesh.grid, alpha)
        self.alpha_operator = operator_alpha_derivative(
            self.mesh.grid, alpha, self.config.alpha_fd_step)
        return True

    def loss_and_gradients(self, iteration=None):
        """
        Evaluate the loss and its gradient with respect to ``model.parameters()``.

        Each term carries its configured weight divided by its squared magnitude (see
        ``scaled_loss_weights``); the report holds those weighted terms.

        :param int iteration: (optional) the iteration recorded in the report
        :return: the loss report and the gradients aligned with the parameters
        :rtype: tuple
        """
        self.refresh_tables()
        model, mesh, weights = self.model, self.mesh, self.weights
        operator = self.table.operator
        sigma = model.constants.sigma

        raw = model.forward(mesh.grid.points)
        beta, mu = softplus(raw['beta']), softplus(raw['mu'])
        s, e, i, r, c = (raw[name] for name in COMPARTMENTS)

        residuals = residual_vectors(self.table, raw, beta, mu, sigma)
        errors = data_errors(raw, self.arrays, mesh)
        terms = {name: weights[name] * float(np.sum(np.square(err)))
                 for name, err in errors.items()}
        terms.update({name: weights[name] * float(np.sum(np.square(res)))
                      for name, res in residuals.items()})
        report = LossReport.from_terms(terms, iteration=iteration, alpha=model.alpha)

        # Adjoints of the residuals, row 0 stays zero
        g = {name: 2.0 * weights[name] * res for name, res in residuals.items()}
        g_s, g_e, g_i = g['residual_s'], g['residual_e'], g['residual_i']
        g_r, g_c = g['residual_r'], g['residual_cum']
        grads = {
            's': operator.T @ g_s + (g_s - g_e) * beta * i,
            'e': operator.T @ g_e + sigma * (g_e - g_i - g_c),
            'i': operator.T @ g_i + (g_s - g_e) * beta * s + mu * (g_i - g_r),
            'r': operator.T @ g_r,
            'i_cum': operator.T @ g_c,
            'beta': (g_s - g_e) * s * i * softplus_grad(raw['beta']),
            'mu': (g_i - g_r) * i * softplus_grad(raw['mu']),
        }
        d_alpha = sum(float(g[RESIDUAL_OF[name]] @ (self.alpha_operator @ raw[name]))
                      for name in COMPARTMENTS)

        idx = mesh.data_indices
        for name, term, level_term in (('i_cum', 'data_new_infected', 'data_cum_infected'),
                                       ('r', 'data_new_removed', 'data_removed')):
            step_grad = 2.0 * weights[term] * errors[term]
            grads[name][idx[1:]] += step_grad
            grads[name][idx[:-1]] -= step_grad
            grads[name][idx] += 2.0 * weights[level_term] * errors[level_term]
        grads['i'][idx] += 2.0 * weights['data_infected'] * errors['data_infected']

        flat = []
        for name in NETWORK_NAMES:
            upstream = grads[name] * model.output_scale(name)
            flat.extend(model.nets[name].backward(upstream).parameters())
        flat.append(np.array([d_alpha * model.alpha_gradient_factor]))
        return report, flat

    @staticmethod
    def check_finite(report, iteration):
        """
        Abort on a non-finite loss.

        :param LossReport report: the loss of the iteration
        :param int iteration: the iteration
        :raises TrainingDivergence: naming the first non-finite term
        """
        for name in LOSS_TERMS:
            value = report.terms[name]
            if not np.isfinite(value):
                raise TrainingDivergence(iteration, name, value)
        if not np.isfinite(report.total):
            raise TrainingDivergence(iteration, 'total', report.total)

    def step(self, iteration):
        """
        Run one optimizer iteration.

        :param int iteration: the iteration number
        :return: the loss before the update
        :rtype: LossReport
        :raises TrainingDivergence: if the loss is not finite
        """
        report, grads = self.loss_and_gradients(iteration)
        self.check_finite(report, iteration)
        optimizer_step(self.state, self.model.parameters(), grads)
        self.model.mark_updated()
        return report

    def run(self):
        """
        Train for the configured number of iterations.

        The history holds the report of every ``record_every``-th iteration and the report of
        the final parameters.

        :return: the loss history
        :rtype: list
        """
        config = self.config
        log.info(f'Training on {self.mesh.n_days} days with {self.mesh.n_residual} residual '
                 f'nodes for {config.iterations} iterations')
        for iteration in range(config.iterations):
            report = self.step(iteration)
            if iteration % config.record_every == 0:
                self.history.append(report)
            if iteration % config.log_every == 0:
                log.info(f'Iteration {iteration}: loss={report.total:.6e} '
                         f'(data {report.mse_u:.3e}, residual {report.mse_r:.3e}) '
                         f'alpha={report.alpha:.4f}')
        final, _ = self.loss_and_gradients(config.iterations)
        self.check_finite(final, config.iterations)
        self.history.append(final)
        log.info(f'Finished training: loss={final.total:.6e} alpha={final.alpha:.4f}')
        return self.history


@dataclass
class FitResult:
    """A fitted model with its loss history."""

    model: SeirModel
    history: list

    @property
    def final(self):
        """Return the loss report of the final parameters."""
        return self.history[-1]


def fit(data, config, model=None):
    """
    Fit the fractional SEIR model to a preprocessed case series.

    :param CaseSeries data: the preprocessed series (see ``datapipe``)
    :param TrainingConfig config: the training settings
    :param SeirModel model: (optional) a model to continue from instead of a fresh one
    :return: the trained model and the loss history
    :rtype: FitResult
    :raises TrainingDivergence: if the loss becomes non-finite
    :raises InvalidConfiguration: if the data is too short for a mesh
    """
    if len(data) < 2:
        raise InvalidConfiguration('Fitting needs at least two days of data')
    arrays = to_training_arrays(data, config.population)
    if model is None:
        mesh = TrainingMesh(len(data), config.tau)
        constants = SeirConstants(config.population, config.sigma)
        # D I^c = sigma E, so the second day's new infections estimate E at the start
        start = {
            'e': arrays['new_infected'][1] / config.sigma,
            'i': arrays['infected'][0],
            'r': arrays['removed'][0],
            'i_cum': arrays['cum_infected'][0],
        }
        start['s'] = 1.0 - start['e'] - start['i'] - start['r']
        model = SeirModel.create(
            constants, mesh, compartment_layers=config.compartment_layers,
            rate_layers=config.rate_layers, seed=config.seed, alpha_init=config.alpha_init,
            alpha_bounds=config.alpha_bounds, beta_init=config.beta_init, mu_init=config.mu_init,
            initial_outputs=start, output_scales=compartment_scales(arrays),
            start_date=data.start_date)
    history = Trainer(model, arrays, config).run()
    model.trained = True
    return FitResult(model=model, history=history)
