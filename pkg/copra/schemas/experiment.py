from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator

from copra.config import settings

from .enums import BoundCovariance, MethodId, RunStatus
from .problem import ProblemSpec

DEFAULT_METHODS = [MethodId.COPRA, MethodId.GCV, MethodId.LCURVE, MethodId.QUASIOPT, MethodId.OLS]


class SweepSpec(BaseModel):
    problem: ProblemSpec = Field(..., description="Problem to benchmark on")
    snr_db_list: List[float] = Field(..., min_length=1, description="SNR values in dB")
    trials: int = Field(default=settings.DEFAULT_TRIALS, ge=1, description="Noise realizations per SNR")
    methods: List[MethodId] = Field(default_factory=lambda: list(DEFAULT_METHODS), min_length=1)
    seed: int = Field(default=0, ge=0, description="Master seed")
    c: float = Field(default=settings.PARTITION_C, gt=0, lt=1, description="Partition constant")
    grid_points: int = Field(default=settings.GRID_POINTS, ge=16, description="Baseline grid size")
    regenerate: bool = Field(default=False, description="Draw a fresh problem for every trial")

    @field_validator("methods")
    @classmethod
    def unique_methods(cls, value: List[MethodId]) -> List[MethodId]:
        if len(set(value)) != len(value):
            raise ValueError("methods must not repeat")
        return value


class TrialRecord(BaseModel):
    method: MethodId
    snr_db: float
    trial: int = Field(..., ge=0)
    seed: int = Field(..., description="Noise seed of the trial")
    nmse: float = Field(..., description="||x_hat - x0||^2 / ||x0||^2, nan when failed")
    runtime_ns: int = Field(..., ge=0)
    branch: str = Field(default="", description="Solver branch or selector flag")
    failed: bool = False
    error: Optional[str] = None
    input_digest: str = Field(default="", description="sha256 of the (A, x0, y) triple seen by the method")


class MethodAggregate(BaseModel):
    method: MethodId
    snr_db: float
    trials: int = Field(..., description="Successful trials")
    failed: int = Field(default=0, description="Failed trials")
    mean_nmse: float
    nmse_db: float = Field(..., description="10 log10 of the mean NMSE")
    mean_runtime_ns: float


class Provenance(BaseModel):
    master_seed: int
    config_hash: str
    version: str = settings.VERSION


class SweepReport(BaseModel):
    spec: SweepSpec
    aggregates: List[MethodAggregate]
    provenance: Provenance
    failed_methods: List[MethodId] = Field(default_factory=list)
    records: List[TrialRecord] = Field(default_factory=list)

    @property
    def succeeded(self) -> bool:
        return not self.failed_methods

    def aggregate(self, method: MethodId, snr_db: float) -> MethodAggregate:
        for item in self.aggregates:
            if item.method == method and item.snr_db == snr_db:
                return item
        raise KeyError(f"no aggregate for {method.value} at {snr_db} dB")


class TomoMethodSummary(BaseModel):
    method: MethodId
    mean_psnr_db: float
    trials: int
    failed: int = 0


class TomoReport(BaseModel):
    n_side: int
    n_rays: int
    snr_db: float
    summaries: List[TomoMethodSummary]
    provenance: Provenance


class BoundPoint(BaseModel):
    snr_db: float
    rho: float
    delta_exact: float
    delta_approx: float
    delta_trace: float = Field(..., description="Exact bound with the projected prior replaced by its mean")
    nmse: float
    nmse_db: float


class BoundReport(BaseModel):
    problem: str
    n1: int
    covariance: BoundCovariance = BoundCovariance.DETERMINISTIC
    points: List[BoundPoint]
    spearman: Optional[float] = Field(None, description="Rank correlation of nmse_db with SNR")


class RuntimeEntry(BaseModel):
    method: str
    mean_ns: float
    trials: int
    snr_db: Optional[float] = Field(None, description="SNR of the entry, null for the all-SNR mean")


class RuntimeReport(BaseModel):
    entries: List[RuntimeEntry]
    by_snr: List[RuntimeEntry] = Field(default_factory=list)
    setup_ns: float = Field(..., description="Mean wall time of the shared SVD and projection")
    provenance: Provenance

    def mean_ns(self, method: str) -> float:
        return {entry.method: entry.mean_ns for entry in self.entries}[method]


class RunManifest(BaseModel):
    command: str
    argv: List[str] = Field(..., description="Normalized arguments that replay this run")
    seed: int
    version: str = settings.VERSION
    config_hash: str
    status: RunStatus = RunStatus.STARTED
    outputs: List[str] = Field(default_factory=list)
    error_message: Optional[str] = None
    extra: Dict[str, str] = Field(default_factory=dict)
