# SPDX-License-Identifier: GPL-3.0+


class DataError(ValueError):
    """Signify that the case-count data could not be used."""

    pass


class DateGapError(DataError):
    """Signify that the case-count data skips at least one calendar day."""

    pass


class NegativeCountError(DataError):
    """Signify that a case count is negative."""

    pass


class MalformedRowError(DataError):
    """Signify that a row of the case-count file could not be parsed."""

    pass


class SeriesTooShortError(DataError):
    """Signify that a series has fewer days than an operation requires."""

    pass


class MissingSeriesError(DataError):
    """Signify that a series required by the data loss is absent."""

    pass


class InvalidConfiguration(ValueError):
    """Signify that a training configuration is invalid."""

    pass


class GridMismatch(ValueError):
    """Signify that a weight table, mesh, or sample vector belong to different grids."""

    pass


class ShapeMismatch(ValueError):
    """Signify that parameters, gradients, or moments are not aligned."""

    pass


class StaleTapeError(RuntimeError):
    """Signify that a backward pass has no matching forward pass."""

    pass


class UntrainedModelError(RuntimeError):
    """Signify that an operation needs a fitted model."""

    pass


class SchemaVersionMismatch(ValueError):
    """Signify that a serialized model uses an unsupported schema version."""

    pass


class TrainingDivergence(ArithmeticError):
    """Signify that the training loss became non-finite."""

    def __init__(self, iteration, term, value):
        """
        Initialize the TrainingDivergence class.

        :param int iteration: the optimizer iteration at which the loss diverged
        :param str term: the name of the first non-finite loss term
        :param float value: the offending value
        """
        super().__init__(f'The loss term "{term}" became {value} at iteration {iteration}')
        self.iteration = iteration
        self.term = term
        self.value = value


class SolverError(ArithmeticError):
    """Signify that the fractional solver failed at a step."""

    def __init__(self, step, reason):
        """
        Initialize the SolverError class.

        :param int step: the index of the failing solver step
        :param str reason: a description of the failure
        """
        super().__init__(f'Solver step {step} failed: {reason}')
        self.step = step
        self.reason = reason
