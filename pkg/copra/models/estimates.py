from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from copra.schemas.enums import SolverBranch


@dataclass(frozen=True)
class EpsilonRoot:
    """Closed-form small root of the characteristic function.

    ``formula`` is the raw closed-form value (nan when it is not defined);
    ``value`` is what the regularizer uses after the floor is applied.
    """

    value: float
    formula: float
    floored: bool


@dataclass(frozen=True)
class NewtonOutcome:
    rho: float
    iters: int
    residual: float
    trace: Tuple[float, ...] = ()
    safeguard_steps: int = 0


@dataclass(frozen=True)
class CopraResult:
    rho: float
    x_hat: NDArray[np.float64]
    branch: SolverBranch
    iters: int
    g_residual: float
    condition_satisfied: bool
    delta: Optional[float]
    n1: int = 0
    epsilon: float = float("nan")
    trace: Tuple[float, ...] = ()
    flags: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rho": self.rho,
            "branch": self.branch.value,
            "iters": self.iters,
            "g_residual": self.g_residual,
            "condition_satisfied": self.condition_satisfied,
            "delta": self.delta,
            "x_hat": self.x_hat.tolist(),
            "n1": self.n1,
            "epsilon": self.epsilon,
            "trace": list(self.trace),
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class GammaGrid:
    values: NDArray[np.float64]

    @property
    def count(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class Selection:
    """Parameter picked by a grid-based selector."""

    gamma: float
    at_endpoint: bool
    value: float
    index: int


@dataclass(frozen=True)
class LCurveTerms:
    """Squared solution/residual norms and their first two gamma-derivatives."""

    eta: NDArray[np.float64]
    eta_d1: NDArray[np.float64]
    eta_d2: NDArray[np.float64]
    res: NDArray[np.float64]
    res_d1: NDArray[np.float64]
    res_d2: NDArray[np.float64]


@dataclass(frozen=True)
class MseCurve:
    gammas: NDArray[np.float64]
    mse: NDArray[np.float64]
    minimizer: float
    minimum: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gammas": self.gammas.tolist(),
            "mse": self.mse.tolist(),
            "minimizer": self.minimizer,
            "minimum": self.minimum,
        }


@dataclass(frozen=True)
class ErrorBoundReport:
    mu_x: float
    mu_a: float
    mu: float
    rho_min_lower: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mu_x": self.mu_x,
            "mu_a": self.mu_a,
            "mu": self.mu,
            "rho_min_lower": self.rho_min_lower,
        }
