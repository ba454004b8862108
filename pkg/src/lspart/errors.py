"""Exception hierarchy.

Three branches matter for the CLI exit-code mapping: configuration problems
(exit 2), data problems (exit 3), and numerical failures (exit 4).
"""


class LspartError(Exception):
    """Base class for all package errors."""


class ConfigError(LspartError):
    """Invalid option, flag combination, or constructor argument."""


class InvalidKappa(ConfigError):
    pass


class InvalidModel(ConfigError):
    pass


class InvalidGrid(ConfigError):
    pass


class UnsupportedFamily(ConfigError):
    """Basis family cannot serve the requested operation."""


class UnsupportedDerivative(ConfigError):
    """Derivative order not available for the basis order requested."""


class DataError(LspartError):
    """Problem with user-supplied data."""


class ParseError(DataError):
    """Malformed input file; message carries the offending line number."""


class OutOfSupport(DataError):
    """Evaluation or data point outside the partition's support."""


class DegenerateData(DataError):
    """Data cannot produce a valid partition (e.g. duplicate quantile knots)."""


class NumericalError(LspartError):
    """Numerical failure during fitting or inference."""


class RankDeficient(NumericalError):
    """Gram matrix not positive definite at working precision."""


class LeverageOverflow(NumericalError):
    """A leverage value reached 1; HC2/HC3 weights are undefined."""


class NonPositiveVariance(NumericalError):
    """A variance estimate required to be positive was not."""


class NegativeVarianceEstimate(NumericalError):
    """Tuning variance constant came out nonpositive."""
