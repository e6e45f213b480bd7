"""
Schemas for configuration and file formats.

This module contains Pydantic models that define the documents read and
written by the library and the command line.
"""

from .config import CopraConfig
from .enums import BoundCovariance, MethodId, RunStatus, SolverBranch, X0Distribution
from .experiment import (
    DEFAULT_METHODS,
    BoundPoint,
    BoundReport,
    MethodAggregate,
    Provenance,
    RunManifest,
    RuntimeEntry,
    RuntimeReport,
    SweepReport,
    SweepSpec,
    TomoMethodSummary,
    TomoReport,
    TrialRecord,
)
from .problem import ProblemDocument, ProblemSpec, SvdDocument
from .results import BaselineResultDocument, CopraResultDocument

__all__ = [
    "DEFAULT_METHODS",
    "BaselineResultDocument",
    "BoundCovariance",
    "BoundPoint",
    "BoundReport",
    "CopraConfig",
    "CopraResultDocument",
    "MethodAggregate",
    "MethodId",
    "ProblemDocument",
    "ProblemSpec",
    "Provenance",
    "RunManifest",
    "RunStatus",
    "RuntimeEntry",
    "RuntimeReport",
    "SolverBranch",
    "SvdDocument",
    "SweepReport",
    "SweepSpec",
    "TomoMethodSummary",
    "TomoReport",
    "TrialRecord",
    "X0Distribution",
]
