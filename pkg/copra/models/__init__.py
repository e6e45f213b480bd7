"""In-memory numeric carriers.

Everything here holds numpy arrays and is frozen after construction, so
instances can be shared between worker threads.
"""

from .estimates import (
    CopraResult,
    EpsilonRoot,
    ErrorBoundReport,
    GammaGrid,
    LCurveTerms,
    MseCurve,
    NewtonOutcome,
    Selection,
)
from .problem import IllPosedProblem, NoisyObservation
from .spectral import SpectralPartition, SvdFactors

__all__ = [
    "CopraResult",
    "EpsilonRoot",
    "ErrorBoundReport",
    "GammaGrid",
    "IllPosedProblem",
    "LCurveTerms",
    "MseCurve",
    "NewtonOutcome",
    "NoisyObservation",
    "Selection",
    "SpectralPartition",
    "SvdFactors",
]
