from typing import Optional

from pydantic import BaseModel, Field

from copra.config import settings


class CopraConfig(BaseModel):
    """Tuning knobs of the regularizer.

    ``rho_init`` and ``epsilon_floor`` are left unset by default; the
    regularizer then derives them from the spectrum (ten times the small
    root, and ``EPSILON_FLOOR_REL * sigma_1**2``).
    """

    c: float = Field(default=settings.PARTITION_C, gt=0, lt=1, description="Partition constant")
    xi: float = Field(default=settings.NEWTON_XI, gt=0, description="Relative stopping tolerance on |G|")
    rho_init: Optional[float] = Field(default=None, gt=0, description="Initial Newton iterate")
    max_iter: int = Field(default=settings.NEWTON_MAX_ITER, ge=1, description="Newton iteration cap")
    epsilon_floor: Optional[float] = Field(default=None, gt=0, description="Smallest admissible rho")
    bracket_points: int = Field(default=settings.BRACKET_POINTS, ge=8, description="Log-grid size of the root bracket scan")

    model_config = {"frozen": True}
