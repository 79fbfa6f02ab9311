"""Volume-outcome analysis with penalized splines and provider random intercepts."""

from .design import AssembledModel, ModelSpec, PatientRecord, assemble, design_row
from .errors import (
    DegenerateDataError,
    FitError,
    IdentifiabilityError,
    InputError,
    NoVolumeHistoryError,
    SupportError,
    VolcurveError,
)
from .fit import FittedModel, PenalizedFit, laml, optimize, pirls, predict_eta
from .inference import (
    CurveEstimate,
    MOREstimate,
    OREstimate,
    ProbabilityCurve,
    TestResult,
    mor,
    odds_ratio,
    probability_curve,
    smooth_curve,
    test_smooth,
    test_tau,
)
from .proxy import (
    VolumeStats,
    VolumeTable,
    cumulative_average,
    provider_volume,
    simple_average,
    volume_variability,
)
from .sim import SimConfig, StudyResult, generate, run_study, summarize, true_volume_effect
from .spline import (
    CenteringTransform,
    KnotVector,
    PenaltyMatrix,
    SplineConfig,
    basis_matrix,
    centering_transform,
    difference_penalty,
    make_knots,
)

__version__ = "0.1.0"
