"""Request/response models for the pipeline service."""

from typing import Literal, Optional

from pydantic import BaseModel, Field

from ..pipeline import RunConfig


class StageRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    force: bool = False


class PulseStageRequest(StageRequest):
    power: Literal[1, 3] = 1


class SimulateStageRequest(StageRequest):
    power: Literal[1, 3] = 1


class StageResponse(BaseModel):
    stage: str
    ran: bool
    cached: bool
    output_dir: str
    artifacts: list[str]


class HamiltonianResponse(StageResponse):
    eigenvalues_mev: list[float]


class PulseResponse(StageResponse):
    achieved_infidelity: float
    iteration_count: int
    iterations_to_target: Optional[int] = None


class SimulateResponse(StageResponse):
    n_steps: int


class AnalyzeResponse(StageResponse):
    omega_mev: list[float]
    omega_err: list[float]
    lambdas_mev: Optional[list[float]] = None
    lambda_err: Optional[list[float]] = None
    reconstruction_case: Optional[str] = None


class RunAllResponse(BaseModel):
    output_dir: str
    stages: dict[str, bool]          # stage name -> ran (False = cached)
    artifacts: list[str]
    config_hash: str


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorResponse(BaseModel):
    error: str
    error_type: str
    exit_code: int
