from enum import Enum


class MethodId(str, Enum):
    OLS = "ols"
    GCV = "gcv"
    LCURVE = "lcurve"
    QUASIOPT = "quasiopt"
    LMMSE = "lmmse"
    COPRA = "copra"


class SolverBranch(str, Enum):
    NEWTON_ROOT = "newton-root"
    EPSILON_FALLBACK = "epsilon-fallback"


class X0Distribution(str, Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"


class RunStatus(str, Enum):
    STARTED = "started"
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"
    FAILED = "failed"


class BoundCovariance(str, Enum):
    DETERMINISTIC = "deterministic"
    ENSEMBLE = "ensemble"
