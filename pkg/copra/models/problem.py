from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np
from numpy.typing import NDArray


@dataclass(frozen=True)
class IllPosedProblem:
    """Operator, true signal and generator parameters of one test problem."""

    name: str
    a: NDArray[np.float64]
    x0: NDArray[np.float64]
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return int(self.a.shape[0])

    @property
    def n(self) -> int:
        return int(self.a.shape[1])

    @property
    def clean_signal(self) -> NDArray[np.float64]:
        return self.a @ self.x0


@dataclass(frozen=True)
class NoisyObservation:
    y: NDArray[np.float64]
    sigma_z2: float
    snr_db: float
    seed: int
