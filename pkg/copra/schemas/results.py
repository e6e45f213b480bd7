from typing import List, Optional

from pydantic import BaseModel, Field

from .enums import MethodId, SolverBranch


class CopraResultDocument(BaseModel):
    rho: float = Field(..., gt=0, description="Selected regularization parameter")
    branch: SolverBranch = Field(..., description="Which branch produced rho")
    iters: int = Field(..., ge=0, description="Newton iterations spent")
    g_residual: float = Field(..., description="|G(rho)| at exit")
    condition_satisfied: bool = Field(..., description="Whether the root-existence condition held")
    delta: Optional[float] = Field(None, description="Implied perturbation bound, null on zero residual")
    x_hat: List[float] = Field(..., description="Regularized estimate")
    n1: int = Field(default=0, description="Number of significant singular values")
    epsilon: float = Field(default=float("nan"), description="Small root used by the fallback branch")
    trace: List[float] = Field(default_factory=list, description="Newton iterates")
    flags: List[str] = Field(default_factory=list, description="Non-fatal diagnostics")


class BaselineResultDocument(BaseModel):
    method: MethodId = Field(..., description="Selection method")
    gamma: Optional[float] = Field(None, description="Selected parameter, null for ols")
    x_hat: List[float] = Field(..., description="Estimate")
    at_endpoint: bool = Field(default=False, description="Selection landed on a grid end")
    flags: List[str] = Field(default_factory=list, description="Non-fatal diagnostics")
