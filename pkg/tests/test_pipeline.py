import json
import os

import numpy as np
import pytest

from nnspin.errors import ConfigError, DependencyError
from nnspin.pipeline import (Pipeline, RunConfig, _coerce, dump_json)


# -- configuration ------------------------------------------------------------

def test_config_defaults_round_trip():
    cfg = RunConfig()
    assert RunConfig.from_dict(cfg.model_dump()) == cfg


def test_config_rejects_unknown_field():
    with pytest.raises(ConfigError, match="nuclear.bogus"):
        RunConfig.from_dict({"nuclear": {"bogus": 1}})


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.from_file(bad)


def test_overrides():
    cfg = RunConfig().with_overrides([("nuclear.dt", "0.2"),
                                      ("simulation.noise", "false")])
    assert cfg.nuclear.dt == 0.2
    assert cfg.simulation.noise is False
    with pytest.raises(ConfigError):
        RunConfig().with_overrides([("nuclear.nope", "1")])
    with pytest.raises(ConfigError):
        RunConfig().with_overrides([("nope.dt", "1")])


def test_coerce():
    assert _coerce("true") is True
    assert _coerce("None") is None
    assert _coerce("3") == 3
    assert _coerce("3.5") == 3.5
    assert _coerce("lbfgs") == "lbfgs"


def test_eft_mode_needs_c1(tmp_path):
    cfg = RunConfig().with_overrides([("nuclear.mode", "eft"),
                                      ("output_dir", str(tmp_path))])
    with pytest.raises(ConfigError, match="nuclear.c1"):
        Pipeline(cfg).stage_hamiltonian()


def test_dump_json_exact_floats():
    text = dump_json({"x": 0.1 + 0.2, "v": np.array([1.0 / 3.0])})
    data = json.loads(text)
    assert data["x"] == 0.1 + 0.2
    assert data["v"][0] == 1.0 / 3.0


# -- stages -------------------------------------------------------------------

def test_run_all_statuses(fast_run):
    _, _, status = fast_run
    assert status == {"hamiltonian": True, "pulse": True,
                      "simulate": True, "analyze": True}


def test_hamiltonian_artifacts(fast_run):
    config, pipeline, _ = fast_run
    with open(os.path.join(pipeline.out, "eigensystem.json")) as fh:
        eig = json.load(fh)
    assert np.allclose(eig["eigenvalues_MeV"], eig["closed_form_MeV"], atol=1e-10)
    assert np.allclose(sorted(eig["initial_overlaps_sq"]),
                       sorted([0.5, 0.072962, 0.37265822, 0.05437978]), atol=1e-6)
    with open(os.path.join(pipeline.out, "vsd.json")) as fh:
        vsd = json.load(fh)
    m = np.array(vsd["matrix_re"]) + 1j * np.array(vsd["matrix_im"])
    assert np.allclose(m, m.conj().T)


def test_pulse_meta(fast_run):
    config, pipeline, _ = fast_run
    with open(os.path.join(pipeline.out, "pulse_meta.json")) as fh:
        meta = json.load(fh)
    assert meta["achieved_infidelity"] < config.pulse.infidelity_target
    assert meta["power"] == 1
    assert meta["dt_MeV_inv"] == 0.30


def test_spectral_artifact(fast_run):
    _, pipeline, _ = fast_run
    with open(os.path.join(pipeline.out, "spectral_result.json")) as fh:
        result = json.load(fh)
    # plumbing-level check only: 64 steps give wide bins and a coarse
    # fit, so just require every refined peak to sit near some true gap
    omega = np.sort(result["omega_MeV"])
    assert omega.size >= 2
    for w in omega:
        assert min(abs(w - g) for g in (2.5254, 3.3951, 5.9205)) < 0.6


def test_second_run_is_cached(fast_run):
    config, _, _ = fast_run
    status = Pipeline(config).run_all()
    assert status == {"hamiltonian": False, "pulse": False,
                      "simulate": False, "analyze": False}


def test_changed_input_invalidates_downstream(fast_run, tmp_path):
    import shutil
    config, pipeline, _ = fast_run
    clone = tmp_path / "clone"
    shutil.copytree(pipeline.out, clone)
    changed = config.with_overrides([("simulation.n_steps", "65"),
                                     ("output_dir", str(clone))])
    p2 = Pipeline(changed)
    assert p2.stage_hamiltonian() is False       # untouched upstream
    assert p2.stage_simulate() is True           # simulation config changed


def test_tampered_artifact_detected(fast_run):
    config, pipeline, _ = fast_run
    path = os.path.join(pipeline.out, "vsd.json")
    original = open(path).read()
    try:
        with open(path, "a") as fh:
            fh.write("\n")
        with pytest.raises(DependencyError, match="vsd.json"):
            Pipeline(config).stage_hamiltonian()
    finally:
        with open(path, "w") as fh:
            fh.write(original)


def test_missing_dependency(tmp_path):
    cfg = RunConfig().with_overrides([("output_dir", str(tmp_path / "empty"))])
    with pytest.raises(DependencyError, match="pulse"):
        Pipeline(cfg).stage_simulate()


def test_force_reruns_stage(fast_run):
    config, pipeline, _ = fast_run
    assert Pipeline(config).stage_hamiltonian(force=True) is True
