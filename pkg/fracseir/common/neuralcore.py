# SPDX-License-Identifier: GPL-3.0+
"""Small dense networks with reverse-mode gradients and an adaptive moment optimizer."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from fracseir.processor.error import SchemaVersionMismatch, ShapeMismatch, StaleTapeError

NET_SCHEMA_VERSION = 1

ACTIVATIONS = {
    # name: (function, derivative expressed through the activation value)
    'tanh': (np.tanh, lambda value: 1.0 - value ** 2),
}


@dataclass
class GradientTape:
    """
    The gradients of a network output with respect to each of its parameters.

    The arrays are aligned with ``DenseNet.weights`` and ``DenseNet.biases``.
    """

    weights: list
    biases: list
    seed: int = None

    def parameters(self):
        """Return the gradients in the order of ``DenseNet.parameters``."""
        return [g for pair in zip(self.weights, self.biases) for g in pair]


class DenseNet(object):
    """
    A fully connected network with a scalar input and a scalar output.

    Hidden layers apply an affine map followed by the activation; the last layer is affine.
    Weight matrices have the shape ``(n_out, n_in)``. The network evaluates a whole batch of
    inputs at once and remembers the activations of the last forward pass for ``backward``.
    """

    def __init__(self, layer_sizes, weights=None, biases=None, activation='tanh', seed=42):
        """
        Initialize the DenseNet class.

        Missing weights are drawn from a normal distribution with variance ``1 / fan_in``;
        missing biases are zero.

        :param list layer_sizes: the layer widths, starting and ending with 1
        :param list weights: (optional) the weight matrices
        :param list biases: (optional) the bias vectors
        :param str activation: the name of the hidden-layer activation
        :param int seed: the seed of the random initialization
        :raises ValueError: if the layer sizes or the activation are invalid
        :raises ShapeMismatch: if the given parameters don't match the layer sizes
        """
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2 or layer_sizes[0] != 1 or layer_sizes[-1] != 1:
            raise ValueError('A DenseNet maps one input to one output')
        if any(n < 1 for n in layer_sizes):
            raise ValueError('Layer sizes must be positive')
        if activation not in ACTIVATIONS:
            raise ValueError(f'Unsupported activation "{activation}"')
        self.layer_sizes = layer_sizes
        self.activation = activation
        self.seed = seed

        shapes = list(zip(layer_sizes[1:], layer_sizes[:-1]))
        if weights is None:
            rng = np.random.default_rng(seed)
            weights = [rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_out, n_in))
                       for n_out, n_in in shapes]
        if biases is None:
            biases = [np.zeros(n_out) for n_out, _ in shapes]
        self.weights = [np.array(w, dtype=float).reshape(shape) for w, shape in zip(
            weights, self._checked(weights, shapes))]
        self.biases = [np.array(b, dtype=float).reshape(shape[0]) for b, shape in zip(
            biases, self._checked(biases, shapes, bias=True))]
        self._tape = None
        self._version = 0

    @staticmethod
    def _checked(arrays, shapes, bias=False):
        if len(arrays) != len(shapes):
            raise ShapeMismatch(f'Expected {len(shapes)} layers of parameters, got {len(arrays)}')
        for array, shape in zip(arrays, shapes):
            expected = shape[0] if bias else shape[0] * shape[1]
            if np.size(array) != expected:
                raise ShapeMismatch(f'A layer of shape {shape} cannot hold {np.size(array)} values')
        return shapes

    @property
    def parameter_count(self):
        """Return the number of trainable parameters."""
        return sum(n_in * n_out + n_out
                   for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def parameters(self):
        """Return the parameter arrays as ``[W1, b1, W2, b2, ...]``; updates must be in place."""
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def mark_updated(self):
        """Invalidate the recorded forward pass after the parameters changed."""
        self._version += 1

    def forward(self, t):
        """
        Evaluate the network.

        :param t: a time or an array of times
        :return: the output, a float for scalar input and an array otherwise
        """
        scalar = np.ndim(t) == 0
        inputs = np.atleast_1d(np.asarray(t, dtype=float)).ravel()
        act, _ = ACTIVATIONS[self.activation]
        values = [inputs[None, :]]
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = w @ values[-1] + b[:, None]
            values.append(z if layer == len(self.weights) - 1 else act(z))
        self._tape = (values, self._version)
        output = values[-1][0]
        return float(output[0]) if scalar else output.copy()

    __call__ = forward

    def backward(self, upstream):
        """
        Accumulate ``upstream * d(output)/d(parameter)`` over the batch of the last forward pass.

        :param upstream: a scalar or one value per input of the last forward pass
        :return: the gradients
        :rtype: GradientTape
        :raises StaleTapeError: if no forward pass was recorded for the current parameters
        """
        if self._tape is None:
            raise StaleTapeError('backward() was called before forward()')
        values, version = self._tape
        if version != self._version:
            raise StaleTapeError('The parameters changed since the last forward pass')
        batch = values[0].shape[1]
        upstream = np.broadcast_to(np.asarray(upstream, dtype=float), (batch,)) \
            if np.ndim(upstream) == 0 else np.asarray(upstream, dtype=float).ravel()
        if upstream.size != batch:
            raise StaleTapeError(
                f'The last forward pass had {batch} inputs but {upstream.size} upstream values '
                'were given')
        _, dact = ACTIVATIONS[self.activation]
        grad_w = [None] * len(self.weights)
        grad_b = [None] * len(self.biases)
        delta = upstream[None, :]
        for layer in reversed(range(len(self.weights))):
            grad_w[layer] = delta @ values[layer].T
            grad_b[layer] = delta.sum(axis=1)
            if layer:
                delta = (self.weights[layer].T @ delta) * dact(values[layer])
        return GradientTape(weights=grad_w, biases=grad_b, seed=self.seed)

    def to_dict(self):
        """
        Serialize the network to the documented JSON schema.

        :rtype: dict
        """
        return {
            'schema_version': NET_SCHEMA_VERSION,
            'layer_sizes': list(self.layer_sizes),
            'activation': self.activation,
            'seed': self.seed,
            'weights': [w.tolist() for w in self.weights],
            'biases': [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data):
        """
        Rebuild a network serialized by ``to_dict``.

        :param dict data: the serialized network
        :rtype: DenseNet
        :raises SchemaVersionMismatch: if the schema version is not supported
        """
        version = data.get('schema_version')
        if version != NET_SCHEMA_VERSION:
            raise SchemaVersionMismatch(
                f'Network schema version {version} is not supported (expected '
                f'{NET_SCHEMA_VERSION})')
        return cls(data['layer_sizes'], weights=data['weights'], biases=data['biases'],
                   activation=data['activation'], seed=data.get('seed'))


@dataclass
class OptimizerState:
    """The moment estimates and settings of the adaptive moment optimizer."""

    first_moments: list
    second_moments: list
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    @classmethod
    def for_params(cls, params, **settings):
        """
        Create zero moments shaped like the given parameters.

        :param list params: the parameter arrays
        :rtype: OptimizerState
        """
        return cls(first_moments=[np.zeros_like(p) for p in params],
                   second_moments=[np.zeros_like(p) for p in params], **settings)


def optimizer_step(state, params, grads):
    """
    Apply one bias-corrected adaptive moment update to the parameters, in place.

    :param OptimizerState state: the optimizer state, updated in place
    :param list params: the parameter arrays
    :param list grads: the gradients, aligned with ``params``
    :return: the updated parameters and state
    :rtype: tuple
    :raises ShapeMismatch: if parameters, gradients, and moments are not aligned
    """
    if not len(params) == len(grads) == len(state.first_moments):
        raise ShapeMismatch('Parameters, gradients, and moments must have the same length')
    for p, g, m in zip(params, grads, state.first_moments):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(m):
            raise ShapeMismatch(f'Parameter of shape {np.shape(p)} got gradient of shape '
                                f'{np.shape(g)}')
    state.step_count += 1
    correction1 = 1.0 - state.beta1 ** state.step_count
    correction2 = 1.0 - state.beta2 ** state.step_count
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return params, state


def bounded_scalar(raw, lo, hi):
    """
    Map a real number smoothly and monotonically onto the open interval (lo, hi).

    :param float raw: the unconstrained value
    :param float lo: the lower bound
    :param float hi: the upper bound, greater than lo
    :return: ``lo + (hi - lo) * sigmoid(raw)``
    :rtype: float
    """
    if not lo < hi:
        raise ValueError('bounded_scalar needs lo < hi')
    return lo + (hi - lo) * float(expit(raw))


def bounded_scalar_grad(raw, lo, hi):
    """Return the derivative of ``bounded_scalar`` with respect to ``raw``."""
    s = float(expit(raw))
    return (hi - lo) * s * (1.0 - s)


def bounded_scalar_inverse(value, lo, hi):
    """Return the raw value that ``bounded_scalar`` maps to ``value``."""
    if not lo < value < hi:
        raise ValueError(f'{value} is not inside ({lo}, {hi})')
    p = (value - lo) / (hi - lo)
    return float(np.log(p / (1.0 - p)))


def softplus(z):
    """Return ``log(1 + exp(z))``, the positive map applied to the rate networks."""
    return np.logaddexp(0.0, z)


def softplus_grad(z):
    """Return the derivative of ``softplus``."""
    return expit(z)


def softplus_inverse(value):
    """Return the input that ``softplus`` maps to a positive ``value``."""
    return float(value + np.log(-np.expm1(-value)))
