from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


class SvdDocument(BaseModel):
    u: List[List[float]] = Field(..., description="Left singular vectors, row-major m x n")
    sigma: List[float] = Field(..., description="Singular values, descending")
    v: List[List[float]] = Field(..., description="Right singular vectors, row-major n x n")


class ProblemDocument(BaseModel):
    """Self-describing JSON container for a generated problem."""

    name: str = Field(..., description="Problem identifier")
    m: int = Field(..., ge=1, description="Number of rows of A")
    n: int = Field(..., ge=1, description="Number of columns of A")
    seed: Optional[int] = Field(None, description="Generator seed, if the problem is random")
    a: List[List[float]] = Field(..., description="Operator, row-major")
    x0: List[float] = Field(..., description="True signal")
    meta: Dict[str, Any] = Field(default_factory=dict, description="Generator parameters")
    svd: Optional[SvdDocument] = Field(None, description="Optional cached factorization")

    @model_validator(mode="after")
    def check_shapes(self) -> "ProblemDocument":
        if len(self.a) != self.m or any(len(row) != self.n for row in self.a):
            raise ValueError(f"matrix does not have shape ({self.m}, {self.n})")
        if len(self.x0) != self.n:
            raise ValueError(f"x0 has length {len(self.x0)}, expected {self.n}")
        return self


class ProblemSpec(BaseModel):
    """How to (re)build a problem: generator name, size and seed."""

    name: str = Field(..., description="Generator name, 'rank_deficient', 'full_rank' or 'tomo'")
    n: int = Field(..., ge=1, description="Grid size, rows for the random models, pixels per side for tomo")
    seed: int = Field(default=0, description="Generator seed for random problems")
    params: Dict[str, Any] = Field(default_factory=dict, description="Extra generator parameters")
