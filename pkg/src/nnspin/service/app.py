"""FastAPI wrapper around the staged pipeline.

Stage endpoints run synchronously: optimization and simulation stages
can take minutes, so remote clients should use generous timeouts.  All
package errors map onto a structured payload carrying the process exit
code the CLI should use.
"""

import json
import os

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import NnspinError
from ..pipeline import Pipeline, _hash_obj
from . import schemas


def create_app():
    app = FastAPI(title="nnspin pipeline service", version=__version__)

    @app.exception_handler(NnspinError)
    async def handle_package_error(request: Request, exc: NnspinError):
        status = 422 if exc.exit_code == 2 else 409
        payload = schemas.ErrorResponse(
            error=str(exc), error_type=type(exc).__name__, exit_code=exc.exit_code)
        return JSONResponse(status_code=status, content=payload.model_dump())

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/stages/hamiltonian", response_model=schemas.HamiltonianResponse)
    def run_hamiltonian(request: schemas.StageRequest):
        pipeline = Pipeline(request.config)
        ran = pipeline.stage_hamiltonian(force=request.force)
        with open(os.path.join(pipeline.out, "eigensystem.json")) as fh:
            eigenvalues = json.load(fh)["eigenvalues_MeV"]
        return schemas.HamiltonianResponse(
            stage="hamiltonian", ran=ran, cached=not ran,
            output_dir=pipeline.out, artifacts=pipeline.artifact_names(),
            eigenvalues_mev=eigenvalues)

    @app.post("/stages/pulse", response_model=schemas.PulseResponse)
    def run_pulse(request: schemas.PulseStageRequest):
        pipeline = Pipeline(request.config)
        ran = pipeline.stage_pulse(power=request.power, force=request.force)
        suffix = "" if request.power == 1 else "_p3"
        with open(os.path.join(pipeline.out, f"pulse_meta{suffix}.json")) as fh:
            meta = json.load(fh)
        return schemas.PulseResponse(
            stage="pulse", ran=ran, cached=not ran,
            output_dir=pipeline.out, artifacts=pipeline.artifact_names(),
            achieved_infidelity=meta["achieved_infidelity"],
            iteration_count=meta["iteration_count"],
            iterations_to_target=meta["iterations_to_target"])

    @app.post("/stages/simulate", response_model=schemas.SimulateResponse)
    def run_simulate(request: schemas.SimulateStageRequest):
        pipeline = Pipeline(request.config)
        ran = pipeline.stage_simulate(power=request.power, force=request.force)
        return schemas.SimulateResponse(
            stage="simulate", ran=ran, cached=not ran,
            output_dir=pipeline.out, artifacts=pipeline.artifact_names(),
            n_steps=request.config.simulation.n_steps)

    @app.post("/stages/analyze", response_model=schemas.AnalyzeResponse)
    def run_analyze(request: schemas.StageRequest):
        pipeline = Pipeline(request.config)
        ran = pipeline.stage_analyze(force=request.force)
        with open(os.path.join(pipeline.out, "spectral_result.json")) as fh:
            spectral = json.load(fh)
        response = schemas.AnalyzeResponse(
            stage="analyze", ran=ran, cached=not ran,
            output_dir=pipeline.out, artifacts=pipeline.artifact_names(),
            omega_mev=spectral["omega_MeV"], omega_err=spectral["omega_err"])
        recon_path = os.path.join(pipeline.out, "reconstruction.json")
        if request.config.analysis.reconstruction and os.path.exists(recon_path):
            with open(recon_path) as fh:
                recon = json.load(fh)
            response.lambdas_mev = recon["lambda_MeV"]
            response.lambda_err = recon["lambda_err"]
            response.reconstruction_case = recon["case_id"]
        return response

    @app.post("/run-all", response_model=schemas.RunAllResponse)
    def run_all(request: schemas.StageRequest):
        pipeline = Pipeline(request.config)
        stages = pipeline.run_all(force=request.force)
        return schemas.RunAllResponse(
            output_dir=pipeline.out, stages=stages,
            artifacts=pipeline.artifact_names(),
            config_hash=_hash_obj(request.config.model_dump()))

    return app
