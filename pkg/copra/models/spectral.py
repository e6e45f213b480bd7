from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``A = U diag(sigma) V^T`` with descending ``sigma``."""

    u: NDArray[np.float64]
    sigma: NDArray[np.float64]
    v: NDArray[np.float64]

    @property
    def m(self) -> int:
        return int(self.u.shape[0])

    @property
    def n(self) -> int:
        return int(self.sigma.shape[0])

    @property
    def sigma_max(self) -> float:
        return float(self.sigma[0])

    def reconstruct(self) -> NDArray[np.float64]:
        return (self.u * self.sigma) @ self.v.T

    def apply(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """A @ x evaluated from the factors."""
        return self.u @ (self.sigma * (self.v.T @ x))


@dataclass(frozen=True)
class SpectralPartition:
    n1: int
    n2: int
    threshold: float
    c: float
    beta: float

    @property
    def n(self) -> int:
        return self.n1 + self.n2
