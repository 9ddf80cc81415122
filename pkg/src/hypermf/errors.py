"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so raising the right class matters:
parameter/structural problems exit 2, capacity guards exit 3, and
numerical failures (integration breakdown, bad rate values) exit 4.
"""


class HypermfError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(HypermfError, ValueError):
    """Invalid user-supplied parameter (negative rate, bad block sizes, ...)."""


class StructuralError(HypermfError, ValueError):
    """Malformed network structure (vertex index out of range, m=1 loop, ...)."""


class InputError(HypermfError, ValueError):
    """Inconsistent inputs to an operation (mismatched instances, short horizon)."""


class CapacityError(HypermfError):
    """A guard against infeasible problem sizes fired."""


class ModelEvaluationError(HypermfError):
    """A rate function returned a negative or non-finite value."""


class IntegrationError(HypermfError):
    """The ODE integrator could not reach the requested accuracy."""


class FitError(HypermfError, ValueError):
    """Not enough usable data points for a scaling fit."""
