"""Exception hierarchy for ectsens.

Everything raised intentionally by the library derives from EctsensError so
the CLI can map "expected" failures to exit code 1 and let genuine bugs
propagate with a traceback.
"""


class EctsensError(Exception):
    """Base class for all ectsens errors."""


class DataError(EctsensError):
    """Malformed input data or schema violation."""


class FitError(EctsensError):
    """A nuisance model could not be fit under its contract."""


class EstimationError(EctsensError):
    """An estimator or bootstrap run could not be completed."""


class TiltOverflowError(EstimationError):
    """A tilted moment exceeded the floating-point range (log value > 700)."""


class CalibrationError(EctsensError):
    """Sensitivity-parameter calibration failed."""


class SimulationError(EctsensError):
    """Data generation or Monte Carlo study failure."""


class ConfigError(EctsensError):
    """Invalid configuration value."""
