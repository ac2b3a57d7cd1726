"""
Exception hierarchy for the estimation library.
"""


class VioError(Exception):
    """Base class for all library errors."""


class InvalidInputError(VioError, ValueError):
    """Input violates a documented precondition (non-finite, wrong shape, dt <= 0...)."""


class CheiralityError(VioError):
    """Point lies at or behind the camera plane."""


class DegenerateFactorError(VioError):
    """A vision factor cannot be built at the current linearization point."""


class SingularCovarianceError(VioError):
    """A covariance matrix cannot be inverted for whitening or evaluation."""


class SingularSystemError(VioError):
    """Normal equations are rank deficient."""

    def __init__(self, null_directions, message=None):
        self.null_directions = null_directions
        super().__init__(
            message or f'Normal equations are singular ({null_directions} null directions); '
                       f'is a prior on the first state missing?'
        )


class GimbalLockError(VioError):
    """Euler-angle rate matrix is singular (pitch at pi/2 + n*pi)."""


class DatasetFormatError(VioError):
    """A dataset file could not be parsed."""

    def __init__(self, filename, line, message):
        self.filename = filename
        self.line = line
        super().__init__(f'{filename}:{line}: {message}')


class ConfigError(VioError):
    """Experiment configuration failed validation."""

    def __init__(self, errors):
        self.errors = errors
        super().__init__(format_field_errors(errors))


def format_field_errors(errors, prefix=''):
    """Flatten nested serializer errors into 'section.field: message' lines."""
    lines = []
    if isinstance(errors, dict):
        for key, value in errors.items():
            name = f'{prefix}.{key}' if prefix else str(key)
            lines.extend(format_field_errors(value, name).splitlines())
    elif isinstance(errors, (list, tuple)):
        for item in errors:
            if isinstance(item, (dict, list, tuple)):
                lines.extend(format_field_errors(item, prefix).splitlines())
            else:
                lines.append(f'{prefix}: {item}' if prefix else str(item))
    else:
        lines.append(f'{prefix}: {errors}' if prefix else str(errors))
    return '\n'.join(lines)
