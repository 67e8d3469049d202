"""Staged experiment pipeline: hamiltonian -> pulse -> simulate -> analyze.

Every stage reads its inputs from the artifacts of earlier stages and
writes its own artifacts atomically (temp file + rename), so a run
directory is a complete, reproducible record.  A manifest tracks a
content hash for each artifact plus the hash of the config slice each
stage depends on; re-runs skip stages whose inputs are unchanged unless
forced.  All floating-point output uses 17 significant digits so doubles
round-trip exactly and identical config + seed gives byte-identical
files.
"""

import hashlib
import json
import math
import os
import time
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .device import DeviceOperators, TransmonSpec
from .errors import ConfigError, DependencyError
from .hamiltonian import (CALIBRATED_A, CALIBRATED_B, EftParams, Geometry,
                          SpinCoefficients, build_vsd, exact_eigensystem,
                          initial_overlaps, spin_coefficients, target_propagator)
from .lindblad import (OccupationRecord, basis_state_density,
                       gate_superoperator, reference_spin_trajectory,
                       repeated_gate_trajectory)
from .pulse import (ControlPulse, GrapeOptions, GrapeResult, optimize_pulse,
                    pulse_from_csv, pulse_spectrum, pulse_to_csv)
from .spectral import (ReconstructionResult, SpectralResult, find_peaks,
                       gls_refine, power_spectrum, reconstruct_eigenvalues)


class NuclearConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["calibrated", "eft"] = "calibrated"
    a: float = CALIBRATED_A
    b: float = CALIBRATED_B
    c1: Optional[float] = None
    r0: float = 1.0
    m_pi: float = 138.04
    g_a: float = 1.29
    f_pi: float = 92.4
    hbar_c: float = 197.327
    r_fm: float = 3.5
    x: float = 0.382
    phi_deg: float = 2.71
    dt: float = 0.30
    dt_power3: float = 0.03
    trace_shift: float = 1.0


class DeviceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_levels: int = 6
    anharmonicity_mhz: float = 200.0
    t1_us: float = 30.0
    t_phi_us: float = 50.0


class PulseConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    duration_ns: float = 100.0
    sample_rate_gsps: float = 32.0
    max_amplitude_mhz: float = 20.0
    infidelity_target: float = 1e-4
    refine_target: Optional[float] = 1e-9
    max_iterations: int = 3000
    n_levels_opt: int = 6
    rng_seed: int = 0
    initial_peak_mhz: float = 1.0
    initial_jitter_mhz: float = 0.0
    method: Literal["lbfgs", "ascent"] = "lbfgs"
    phase_sensitive: bool = False


class SimulationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_steps: int = 256
    noise: bool = True
    rng_seed: int = 0


class AnalysisConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    reconstruction: bool = False
    n_restarts: int = 3
    rng_seed: int = 0
    prior_width: Optional[float] = None
    fit_max_iterations: int = 4000


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nuclear: NuclearConfig = Field(default_factory=NuclearConfig)
    device: DeviceConfig = Field(default_factory=DeviceConfig)
    pulse: PulseConfig = Field(default_factory=PulseConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    output_dir: str = "runs/default"

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            first = exc.errors()[0]
            path = ".".join(str(p) for p in first["loc"])
            raise ConfigError(f"invalid config field {path}: {first['msg']}") from exc

    def with_overrides(self, overrides):
        """Apply dotted-path key=value overrides (CLI --set flags)."""
        data = self.model_dump()
        for key, raw in overrides:
            node = data
            parts = key.split(".")
            for part in parts[:-1]:
                if part not in node:
                    raise ConfigError(f"unknown config section {key}")
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config field {key}")
            node[parts[-1]] = _coerce(raw)
        return RunConfig.from_dict(data)


def _coerce(raw):
    text = str(raw)
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("null", "none"):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _fmt(value):
    if isinstance(value, float):
        if math.isfinite(value):
            return format(value, ".17g")
        return repr(value)
    return None


def dump_json(obj):
    """JSON text with floats at 17 significant digits (exact round-trip)."""

    def render(node, indent):
        pad = "  " * indent
        if isinstance(node, dict):
            if not node:
                return "{}"
            items = []
            for key in sorted(node):
                items.append(f'{pad}  "{key}": {render(node[key], indent + 1)}')
            return "{\n" + ",\n".join(items) + f"\n{pad}}}"
        if isinstance(node, (list, tuple)):
            if len(node) == 0:
                return "[]"
            items = [f"{pad}  {render(v, indent + 1)}" for v in node]
            return "[\n" + ",\n".join(items) + f"\n{pad}]"
        if isinstance(node, bool) or node is None:
            return json.dumps(node)
        if isinstance(node, float):
            return _fmt(node)
        if isinstance(node, (int, str)):
            return json.dumps(node)
        if isinstance(node, np.ndarray):
            return render(node.tolist(), indent)
        raise TypeError(f"cannot serialize {type(node)}")

    return render(obj, 0) + "\n"


def _atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_obj(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


STAGES = ("hamiltonian", "pulse", "simulate", "analyze")


class Pipeline:
    """Drives the staged run inside a single output directory."""

    def __init__(self, config):
        self.config = config
        self.out = config.output_dir
        os.makedirs(self.out, exist_ok=True)
        self.manifest_path = os.path.join(self.out, "manifest.json")
        self.manifest = self._load_manifest()

    # -- manifest bookkeeping -------------------------------------------------

    def _load_manifest(self):
        if os.path.exists(self.manifest_path):
            with open(self.manifest_path) as fh:
                return json.load(fh)
        return {"version": __version__, "stages": {}}

    def _save_manifest(self):
        self.manifest["version"] = __version__
        self.manifest["config_hash"] = _hash_obj(self.config.model_dump())
        self.manifest["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        _atomic_write(self.manifest_path, json.dumps(self.manifest, indent=2,
                                                     sort_keys=True) + "\n")

    def _stage_inputs(self, stage):
        cfg = self.config
        nuclear = cfg.nuclear.model_dump()
        if stage == "hamiltonian":
            return {"nuclear": nuclear}
        if stage == "pulse":
            return {"nuclear": nuclear, "device": cfg.device.model_dump(),
                    "pulse": cfg.pulse.model_dump(),
                    "reconstruction": cfg.analysis.reconstruction}
        if stage == "simulate":
            return {**self._stage_inputs("pulse"),
                    "simulation": cfg.simulation.model_dump()}
        if stage == "analyze":
            return {**self._stage_inputs("simulate"),
                    "analysis": cfg.analysis.model_dump()}
        raise ConfigError(f"unknown stage {stage}")

    def _path(self, name):
        return os.path.join(self.out, name)

    def _record_stage(self, stage, artifact_names):
        self.manifest["stages"][stage] = {
            "inputs_hash": _hash_obj(self._stage_inputs(stage)),
            "artifacts": {name: _sha256(self._path(name)) for name in artifact_names},
        }
        self._save_manifest()

    def _cached(self, stage):
        entry = self.manifest["stages"].get(stage)
        if not entry:
            return False
        if entry["inputs_hash"] != _hash_obj(self._stage_inputs(stage)):
            return False
        for name, digest in entry["artifacts"].items():
            path = self._path(name)
            if not os.path.exists(path):
                return False
            if _sha256(path) != digest:
                raise DependencyError(
                    f"artifact {name} does not match its recorded hash; "
                    "remove it or re-run with force")
        return True

    def _require_artifact(self, name, producer):
        path = self._path(name)
        if not os.path.exists(path):
            raise DependencyError(
                f"missing artifact {name}; run the '{producer}' stage first")
        entry_stage = self.manifest["stages"].get(producer, {})
        digest = entry_stage.get("artifacts", {}).get(name)
        if digest is not None and _sha256(path) != digest:
            raise DependencyError(f"artifact {name} does not match its recorded hash")
        return path

    # -- physics helpers ------------------------------------------------------

    def _coefficients(self):
        ncfg = self.config.nuclear
        if ncfg.mode == "calibrated":
            return SpinCoefficients(ncfg.a, ncfg.b)
        if ncfg.c1 is None:
            raise ConfigError("missing config field nuclear.c1 (required in EFT mode)")
        params = EftParams(c1=ncfg.c1, r0=ncfg.r0, m_pi=ncfg.m_pi, g_a=ncfg.g_a,
                           f_pi=ncfg.f_pi, hbar_c=ncfg.hbar_c)
        return spin_coefficients(self._geometry(), params)

    def _geometry(self):
        ncfg = self.config.nuclear
        return Geometry(r=ncfg.r_fm, x=ncfg.x, phi=math.radians(ncfg.phi_deg))

    def _spec(self):
        d = self.config.device
        return TransmonSpec(n_levels=d.n_levels, anharmonicity_mhz=d.anharmonicity_mhz,
                            t1_us=d.t1_us, t_phi_us=d.t_phi_us)

    def _load_vsd(self):
        path = self._require_artifact("vsd.json", "hamiltonian")
        with open(path) as fh:
            data = json.load(fh)
        return np.array(data["matrix_re"]) + 1j * np.array(data["matrix_im"])

    def _shift(self):
        # The diagonal shift only matters for absolute-eigenvalue mode; it is
        # a pure global phase for the power-1 propagator.
        return self.config.nuclear.trace_shift if self.config.analysis.reconstruction \
            else 0.0

    def _powers(self):
        return (1, 3) if self.config.analysis.reconstruction else (1,)

    @staticmethod
    def _suffix(power):
        return "" if power == 1 else "_p3"

    def _dt(self, power):
        return self.config.nuclear.dt if power == 1 else self.config.nuclear.dt_power3

    # -- stages ---------------------------------------------------------------

    def stage_hamiltonian(self, force=False):
        if not force and self._cached("hamiltonian"):
            return False
        coeffs = self._coefficients()
        geometry = self._geometry()
        vsd = build_vsd(coeffs, geometry)
        eigenvalues, eigenvectors = exact_eigensystem(vsd, coeffs)
        overlaps = initial_overlaps(geometry)
        _atomic_write(self._path("vsd.json"), dump_json({
            "basis": ["dd", "du", "ud", "uu"],
            "a_MeV": coeffs.a,
            "b_MeV": coeffs.b,
            "matrix_re": vsd.real,
            "matrix_im": vsd.imag,
        }))
        _atomic_write(self._path("eigensystem.json"), dump_json({
            "eigenvalues_MeV": eigenvalues,
            "closed_form_MeV": coeffs.eigenvalues(),
            "eigenvectors_re": eigenvectors.real,
            "eigenvectors_im": eigenvectors.imag,
            "initial_overlaps_sq": np.abs(overlaps) ** 2,
        }))
        self._record_stage("hamiltonian", ["vsd.json", "eigensystem.json"])
        return True

    def stage_pulse(self, power=1, force=False):
        stage = "pulse"
        suffix = self._suffix(power)
        names = [f"pulse{suffix}.csv", f"pulse_meta{suffix}.json",
                 f"pulse_spectrum{suffix}.csv"]
        if not force and self._stage_branch_cached(stage, names):
            return False
        vsd = self._load_vsd() + self._shift() * np.eye(4)
        target4 = target_propagator(vsd, self._dt(power), power=power)
        pcfg = self.config.pulse
        template = ControlPulse.zero(pcfg.sample_rate_gsps, pcfg.duration_ns,
                                     pcfg.max_amplitude_mhz)
        opts = GrapeOptions(
            infidelity_target=pcfg.infidelity_target,
            refine_target=pcfg.refine_target,
            max_iterations=pcfg.max_iterations,
            n_levels_opt=pcfg.n_levels_opt,
            rng_seed=pcfg.rng_seed,
            initial_peak_mhz=pcfg.initial_peak_mhz,
            initial_jitter_mhz=pcfg.initial_jitter_mhz,
            method=pcfg.method,
            phase_sensitive=pcfg.phase_sensitive,
        )
        result = optimize_pulse(target4, self._spec(), opts, pulse_template=template)
        _atomic_write(self._path(names[0]), pulse_to_csv(result.pulse))
        _atomic_write(self._path(names[1]), dump_json({
            "sample_rate_gsps": pcfg.sample_rate_gsps,
            "duration_ns": pcfg.duration_ns,
            "max_amplitude_mhz": pcfg.max_amplitude_mhz,
            "achieved_infidelity": result.achieved_infidelity,
            "iteration_count": result.iteration_count,
            "iterations_to_target": result.iterations_to_target,
            "power": power,
            "trace_shift_MeV": self._shift(),
            "dt_MeV_inv": self._dt(power),
        }))
        freqs, mags = pulse_spectrum(result.pulse)
        lines = ["freq_GHz,power"]
        for f, m in zip(freqs, mags):
            lines.append(f"{format(f, '.17g')},{format(m, '.17g')}")
        _atomic_write(self._path(names[2]), "\n".join(lines) + "\n")
        self._record_stage_branch(stage, names)
        return True

    def stage_simulate(self, power=1, force=False):
        stage = "simulate"
        suffix = self._suffix(power)
        names = [f"trajectory_device{suffix}.csv", f"trajectory_reference{suffix}.csv"]
        if not force and self._stage_branch_cached(stage, names):
            return False
        pulse_path = self._require_artifact(f"pulse{suffix}.csv", "pulse")
        pcfg = self.config.pulse
        with open(pulse_path) as fh:
            pulse = pulse_from_csv(fh.read(), pcfg.sample_rate_gsps, pcfg.duration_ns,
                                   pcfg.max_amplitude_mhz)
        scfg = self.config.simulation
        spec = self._spec()
        ops = DeviceOperators.build(spec, with_noise=scfg.noise)
        rho0 = basis_state_density(spec.n_levels, 1)
        device_record = repeated_gate_trajectory(rho0, pulse, ops, scfg.n_steps,
                                                 self._dt(power))
        vsd = self._load_vsd() + self._shift() * np.eye(4)
        reference = reference_spin_trajectory(
            vsd, self._dt(power), scfg.n_steps, spec=spec,
            pulse_duration_us=pulse.duration_us, power=power, noise=scfg.noise)
        _atomic_write(self._path(names[0]), device_record.to_csv())
        _atomic_write(self._path(names[1]), reference.to_csv())
        self._record_stage_branch(stage, names)
        return True

    def stage_analyze(self, force=False):
        stage = "analyze"
        names = ["spectrum.csv", "spectral_result.json"]
        recon = self.config.analysis.reconstruction
        if recon:
            names += ["spectrum_p3.csv", "spectral_result_p3.json",
                      "reconstruction.json"]
        if not force and self._stage_branch_cached(stage, names):
            return False
        results = {}
        for power in self._powers():
            suffix = self._suffix(power)
            path = self._require_artifact(f"trajectory_device{suffix}.csv", "simulate")
            with open(path) as fh:
                record = OccupationRecord.from_csv(fh.read())
            spec = power_spectrum(record)
            _atomic_write(self._path(f"spectrum{suffix}.csv"), spec.to_csv())
            peaks = find_peaks(spec, d=4)
            acfg = self.config.analysis
            result = gls_refine(record, peaks, prior_width=acfg.prior_width,
                                n_restarts=acfg.n_restarts, rng_seed=acfg.rng_seed,
                                max_iterations=acfg.fit_max_iterations)
            _atomic_write(self._path(f"spectral_result{suffix}.json"), result.to_json())
            results[power] = result
        if recon:
            shift = self.config.nuclear.trace_shift
            recon_result = reconstruct_eigenvalues(
                results[1], results[3], trace_shift=shift, shifted_trace=4.0 * shift)
            _atomic_write(self._path("reconstruction.json"), recon_result.to_json())
        self._record_stage_branch(stage, names)
        return True

    # Branch-aware cache bookkeeping: the pulse/simulate stages may produce
    # both power-1 and power-3 artifact sets under one stage entry.

    def _stage_branch_cached(self, stage, names):
        entry = self.manifest["stages"].get(stage)
        if not entry or entry["inputs_hash"] != _hash_obj(self._stage_inputs(stage)):
            return False
        recorded = entry["artifacts"]
        for name in names:
            if name not in recorded:
                return False
            path = self._path(name)
            if not os.path.exists(path):
                return False
            if _sha256(path) != recorded[name]:
                raise DependencyError(
                    f"artifact {name} does not match its recorded hash; "
                    "remove it or re-run with force")
        return True

    def _record_stage_branch(self, stage, names):
        entry = self.manifest["stages"].get(stage, {})
        inputs_hash = _hash_obj(self._stage_inputs(stage))
        if entry.get("inputs_hash") != inputs_hash:
            entry = {"inputs_hash": inputs_hash, "artifacts": {}}
        entry["artifacts"].update({n: _sha256(self._path(n)) for n in names})
        self.manifest["stages"][stage] = entry
        self._save_manifest()

    # -- orchestration --------------------------------------------------------

    def run_all(self, force=False):
        """Execute every stage in dependency order; returns stage statuses."""
        status = {}
        status["hamiltonian"] = self.stage_hamiltonian(force=force)
        ran_pulse = ran_sim = False
        for power in self._powers():
            ran_pulse = self.stage_pulse(power=power, force=force) or ran_pulse
            ran_sim = self.stage_simulate(power=power, force=force) or ran_sim
        status["pulse"] = ran_pulse
        status["simulate"] = ran_sim
        status["analyze"] = self.stage_analyze(force=force)
        return status

    def artifact_names(self):
        names = []
        for entry in self.manifest["stages"].values():
            names.extend(entry["artifacts"])
        return sorted(names)
