"""Exception types shared across the package.

The CLI maps each family onto its own exit code.
"""


class HypercodecError(Exception):
    exit_code = 1


class ConfigError(HypercodecError, ValueError):
    """Bad or inconsistent configuration (unknown keys, single-class splits...)."""

    exit_code = 2


class FormatError(HypercodecError, ValueError):
    """Malformed feature file, manifest, or checkpoint."""

    exit_code = 3


class NumericDomainError(HypercodecError, ArithmeticError):
    """NaN/Inf inputs or a non-finite loss."""

    exit_code = 4


class StructuralError(HypercodecError, ValueError):
    """Shape/dimension mismatch or an operation invoked out of order."""

    exit_code = 5
