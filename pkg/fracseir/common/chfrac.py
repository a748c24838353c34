# SPDX-License-Identifier: GPL-3.0+
r"""
Caputo-Hadamard derivatives of gridded functions.

The derivative of order :math:`0 < \alpha < 1` with lower terminal :math:`a > 0` is

.. math::

    {}_{CH}D^\alpha_{a,t} u(t) = \frac{1}{\Gamma(1 - \alpha)}
        \int_a^t \left(\log\frac{t}{s}\right)^{-\alpha} \delta u(s) \frac{\mathrm{d}s}{s},
    \qquad \delta = s \frac{\mathrm{d}}{\mathrm{d}s}.

It is approximated on a grid :math:`a \le t_0 < \dots < t_K` by the piecewise scheme

.. math::

    \frac{1}{\Gamma(2 - \alpha)} \sum_{j=1}^{k} c_{j,k} (u^j - u^{j-1}),

which interpolates linearly in :math:`\log t` on the first cell and quadratically on the
following ones. Its error is :math:`O(\tau^{3 - \alpha})` for smooth functions of
:math:`\log t`.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gamma

from fracseir.processor.error import GridMismatch


def _power(base, exponent):
    """
    Raise non-negative logarithms to a positive power with 0 ** p defined as 0.

    :param numpy.ndarray base: the bases, zero where the log argument is exactly 1
    :param float exponent: a positive exponent
    :return: the powers
    :rtype: numpy.ndarray
    """
    base = np.asarray(base, dtype=float)
    positive = base > 0
    return np.where(positive, np.power(np.where(positive, base, 1.0), exponent), 0.0)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """
    A strictly increasing set of positive times with the lower terminal of the derivative.

    The points are stored as a read-only float array; ``lower_terminal`` defaults to the first
    point.
    """

    points: np.ndarray
    lower_terminal: float = None

    def __post_init__(self):
        """
        Freeze the points and validate the grid.

        :raises GridMismatch: if the grid is not strictly increasing or not positive
        """
        points = np.array(self.points, dtype=float)
        if points.ndim != 1 or points.size < 1:
            raise GridMismatch('A time grid needs a one-dimensional, non-empty set of points')
        lower = float(points[0] if self.lower_terminal is None else self.lower_terminal)
        if not lower > 0:
            raise GridMismatch('The lower terminal of a Caputo-Hadamard grid must be positive')
        if points[0] < lower:
            raise GridMismatch('Grid points must not precede the lower terminal')
        if np.any(np.diff(points) <= 0):
            raise GridMismatch('Grid points must be strictly increasing')
        points.setflags(write=False)
        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'lower_terminal', lower)

    @classmethod
    def uniform(cls, n_steps, tau, start=1.0):
        """
        Build the uniform grid ``t_k = start + k * tau`` for ``k = 0..n_steps``.

        :param int n_steps: the number of steps K
        :param float tau: the step size
        :param float start: the first point, also the lower terminal
        :return: the grid
        :rtype: TimeGrid
        """
        if n_steps < 0 or not tau > 0:
            raise GridMismatch('A uniform grid needs a non-negative step count and tau > 0')
        return cls(start + np.arange(n_steps + 1) * tau)

    def __len__(self):
        """Return the number of points."""
        return self.points.size

    @property
    def steps(self):
        """Return K, the index of the last point."""
        return self.points.size - 1

    @cached_property
    def log_points(self):
        """Return ``log(t_k)`` for every point."""
        values = np.log(self.points)
        values.setflags(write=False)
        return values

    def matches(self, other):
        """
        Check whether two grids hold bit-identical points and terminals.

        :param TimeGrid other: the grid to compare with
        :rtype: bool
        """
        return (self.lower_terminal == other.lower_terminal
                and np.array_equal(self.points, other.points))


@dataclass(frozen=True, eq=False)
class QuadratureTable:
    """
    The weights ``c[j, k]`` of the scheme on one grid for one fractional order.

    ``weights[k - 1, j - 1]`` holds ``c_{j,k}`` for ``1 <= j <= k <= K`` and zero above the
    diagonal. Tables are immutable and can be shared between callers.
    """

    alpha: float
    grid: TimeGrid
    weights: np.ndarray

    @property
    def steps(self):
        """Return K, the number of rows."""
        return self.grid.steps

    @cached_property
    def rows(self):
        """Return the weight vectors ``(c_{1,k}, ..., c_{k,k})`` indexed by k (row 0 is empty)."""
        return (np.zeros(0),) + tuple(self.weights[k - 1, :k] for k in range(1, self.steps + 1))

    @cached_property
    def gamma_factor(self):
        """Return ``1 / Gamma(2 - alpha)``."""
        return 1.0 / gamma(2.0 - self.alpha)

    @cached_property
    def operator(self):
        """
        Return the matrix D with ``(D @ u)[k]`` equal to the approximate derivative at t_k.

        Row 0 is zero since the derivative vanishes at the lower terminal.
        """
        size = self.steps + 1
        matrix = np.zeros((size, size))
        matrix[1:, 1:] += self.weights
        matrix[1:, :-1] -= self.weights
        matrix *= self.gamma_factor
        matrix.setflags(write=False)
        return matrix

    def apply(self, values):
        """
        Evaluate the approximate derivative at every grid point.

        :param numpy.ndarray values: samples ``u^0..u^K``, optionally with trailing axes
        :return: the derivative at ``t_0..t_K`` (zero at ``t_0``)
        :rtype: numpy.ndarray
        :raises GridMismatch: if the number of samples differs from the grid size
        """
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.steps + 1:
            raise GridMismatch(
                f'Expected {self.steps + 1} samples but got {values.shape[0]}')
        # Summing weighted increments keeps constants exactly at zero
        derivative = np.zeros_like(values)
        derivative[1:] = self.gamma_factor * (self.weights @ np.diff(values, axis=0))
        return derivative


def a_coeff(grid, alpha, j, k):
    """
    Compute ``(log(t_k/t_{j-1}))^(1-alpha) - (log(t_k/t_j))^(1-alpha)``.

    :param TimeGrid grid: the grid
    :param float alpha: the order in (0, 1)
    :param int j: the cell index, ``1 <= j <= k``
    :param int k: the evaluation index, ``k <= K``
    :return: the coefficient
    :rtype: float
    """
    if not 1 <= j <= k <= grid.steps:
        raise IndexError(f'a_coeff needs 1 <= j <= k <= {grid.steps}, got j={j}, k={k}')
    x = grid.log_points
    far, near = x[k] - x[j - 1], x[k] - x[j]
    assert far > 0 and near >= 0
    return float(_power(far, 1 - alpha) - _power(near, 1 - alpha))


def b_coeff(grid, alpha, j, k):
    """
    Compute the quadratic-interpolation correction ``b_{j,k}`` of cell j.

    :param TimeGrid grid: the grid
    :param float alpha: the order in (0, 1)
    :param int j: the cell index, ``2 <= j <= k``
    :param int k: the evaluation index, ``k <= K``
    :return: the coefficient
    :rtype: float
    :raises IndexError: if j < 2, since the formula references ``t_{j-2}``
    """
    if not 2 <= j <= k <= grid.steps:
        raise IndexError(f'b_coeff needs 2 <= j <= k <= {grid.steps}, got j={j}, k={k}')
    x = grid.log_points
    far, near = x[k] - x[j - 1], x[k] - x[j]
    bracket = ((x[j] - x[j - 1]) * (_power(near, 1 - alpha) + _power(far, 1 - alpha))
               + 2.0 / (2.0 - alpha) * (_power(near, 2 - alpha) - _power(far, 2 - alpha)))
    return float(bracket / (x[j] - x[j - 2]))


def build_weights(grid, alpha):
    """
    Build the weight table of the scheme for every row ``k = 1..K``.

    Row ``k = 1`` uses the one-point start ``c_{1,1} = a_{1,1} / log(t_1/t_0)``; later rows use
    the three-branch definition with the b corrections.

    :param TimeGrid grid: the grid
    :param float alpha: the order in (0, 1)
    :return: the table
    :rtype: QuadratureTable
    :raises ValueError: if alpha is outside (0, 1)
    """
    if not 0 < alpha < 1:
        raise ValueError(f'The fractional order must lie in (0, 1), got {alpha}')
    K = grid.steps
    x = grid.log_points
    k_idx = np.arange(1, K + 1)[:, None]
    j_idx = np.arange(1, K + 1)[None, :]
    lower = j_idx <= k_idx

    far = np.where(lower, x[k_idx] - x[j_idx - 1], 0.0)
    near = np.where(lower, x[k_idx] - x[np.minimum(j_idx, k_idx)], 0.0)
    a = np.where(lower, _power(far, 1 - alpha) - _power(near, 1 - alpha), 0.0)

    # b is defined on cells j >= 2 only
    has_b = lower & (j_idx >= 2)
    h = np.diff(x)
    span = np.where(has_b, x[j_idx] - x[np.maximum(j_idx - 2, 0)], 1.0)
    bracket = (h[j_idx - 1] * (_power(near, 1 - alpha) + _power(far, 1 - alpha))
               + 2.0 / (2.0 - alpha) * (_power(near, 2 - alpha) - _power(far, 2 - alpha)))
    b = np.where(has_b, bracket / span, 0.0)

    c = a - b
    c[:, :-1] += b[:, 1:]
    c /= h[None, :]
    c = np.where(lower, c, 0.0)
    c.setflags(write=False)
    return QuadratureTable(alpha=float(alpha), grid=grid, weights=c)


def ch_derivative(table, values, k):
    """
    Evaluate the approximate Caputo-Hadamard derivative at ``t_k``.

    :param QuadratureTable table: the weights built on the grid of ``values``
    :param values: the samples ``u^0..u^k`` (longer sequences are allowed)
    :param int k: the evaluation index
    :return: ``(1 / Gamma(2 - alpha)) * sum_j c_{j,k} (u^j - u^{j-1})``
    :rtype: float
    :raises GridMismatch: if there are fewer than k + 1 samples or k is beyond the table
    """
    values = np.asarray(values, dtype=float)
    if k > table.steps:
        raise GridMismatch(f'Index {k} is beyond the {table.steps} rows of the table')
    if values.shape[0] < k + 1:
        raise GridMismatch(f'Need {k + 1} samples to evaluate at index {k}, got {values.shape[0]}')
    if k == 0:
        return 0.0
    return float(table.gamma_factor * np.dot(table.rows[k], np.diff(values[:k + 1])))


def ch_derivative_rearranged(table, values, k):
    """
    Evaluate the derivative through ``c_kk u^k + sum (c_jk - c_{j+1,k}) u^j - c_1k u^0``.

    :param QuadratureTable table: the weights
    :param values: the samples ``u^0..u^k``
    :param int k: the evaluation index, at least 1
    :return: the derivative at ``t_k``
    :rtype: float
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] < k + 1 or not 1 <= k <= table.steps:
        raise GridMismatch(f'Cannot evaluate index {k} from {values.shape[0]} samples')
    c = table.rows[k]
    total = c[-1] * values[k] + np.dot(c[:-1] - c[1:], values[1:k]) - c[0] * values[0]
    return float(table.gamma_factor * total)


def operator_alpha_derivative(grid, alpha, step=1e-4):
    """
    Differentiate the derivative operator with respect to the order.

    Central differences of two extra tables are used; a one-sided difference replaces the
    central one when ``alpha +- step`` leaves (0, 1).

    :param TimeGrid grid: the grid
    :param float alpha: the order in (0, 1)
    :param float step: the finite-difference step in alpha
    :return: the matrix ``dD/dalpha``
    :rtype: numpy.ndarray
    """
    upper, lower = alpha + step, alpha - step
    if upper >= 1:
        upper = alpha
    if lower <= 0:
        lower = alpha
    op_upper = build_weights(grid, upper).operator
    op_lower = build_weights(grid, lower).operator
    return (op_upper - op_lower) / (upper - lower)


@dataclass(frozen=True)
class LogPower:
    r"""
    The test function :math:`u(t) = s (\log t)^\beta` with its exact derivative.

    ``beta = 0`` gives the constant ``s``, whose derivative is zero.
    """

    beta: float
    scale: float = 1.0

    def __call__(self, t):
        """Evaluate the function."""
        return self.scale * np.power(np.log(t), self.beta)

    def ch_derivative(self, t, alpha):
        """
        Evaluate the exact Caputo-Hadamard derivative with lower terminal 1.

        :param t: the evaluation times, at least 1
        :param float alpha: the order in (0, 1)
        :rtype: numpy.ndarray
        """
        t = np.asarray(t, dtype=float)
        if self.beta == 0:
            return np.zeros_like(t)
        factor = gamma(self.beta + 1) / gamma(self.beta + 1 - alpha)
        return self.scale * factor * _power(np.log(t), self.beta - alpha)


def convergence_table(alpha, test_fn, refinements=4, interval=(1.0, 2.0), base_steps=10):
    """
    Measure the max-norm error of the scheme on successively halved uniform grids.

    :param float alpha: the order in (0, 1)
    :param test_fn: a callable with a ``ch_derivative(t, alpha)`` method, like LogPower
    :param int refinements: the number of halvings after the base grid
    :param tuple interval: the time interval, its left end is the lower terminal
    :param int base_steps: the number of steps of the coarsest grid
    :return: pairs of (tau, max error) from the coarsest to the finest grid
    :rtype: list
    """
    start, stop = interval
    results = []
    for level in range(refinements + 1):
        n_steps = base_steps * 2 ** level
        tau = (stop - start) / n_steps
        grid = TimeGrid.uniform(n_steps, tau, start)
        table = build_weights(grid, alpha)
        approx = table.apply(test_fn(grid.points))
        exact = test_fn.ch_derivative(grid.points, alpha)
        results.append((tau, float(np.max(np.abs(approx[1:] - exact[1:])))))
    return results


def measured_order(alpha, test_fn, refinements=4, interval=(1.0, 2.0), base_steps=10):
    """
    Estimate the convergence order as the least-squares slope of log(error) over log(tau).

    :param float alpha: the order in (0, 1)
    :param test_fn: a callable with a ``ch_derivative(t, alpha)`` method, like LogPower
    :param int refinements: the number of tau halvings
    :param tuple interval: the time interval
    :param int base_steps: the number of steps of the coarsest grid
    :return: the observed order, or ``math.inf`` when the scheme is exact at every level
    :rtype: float
    """
    table = convergence_table(alpha, test_fn, refinements, interval, base_steps)
    taus = np.array([tau for tau, _ in table])
    errors = np.array([error for _, error in table])
    if np.all(errors == 0):
        return math.inf
    # Levels that are exact to the last bit carry no slope information
    keep = errors > 0
    if keep.sum() < 2:
        return math.inf
    slope, _ = np.polyfit(np.log(taus[keep]), np.log(errors[keep]), 1)
    return float(slope)
