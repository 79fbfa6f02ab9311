"""Exception types with stable machine-readable codes.

The CLI maps every exception below to a JSON error record on stderr; the
``code`` attribute is part of the external interface and must not change.
"""


class VolcurveError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"


class InputError(VolcurveError):
    """Malformed input data or configuration."""

    code = "invalid-input"


class DegenerateDataError(VolcurveError):
    """Data without enough variation to support the requested model."""

    code = "degenerate-data"


class SupportError(VolcurveError):
    """Evaluation point outside the range spanned by the spline basis."""

    code = "volume-outside-support"


class IdentifiabilityError(VolcurveError):
    """Penalized normal equations are singular."""

    code = "not-identifiable"


class NoVolumeHistoryError(VolcurveError):
    """Provider has no usable (non-zero) volume history."""

    code = "no-volume-history"


class FitError(VolcurveError):
    """Model fitting failed beyond recovery."""

    code = "fit-failed"
