import json
import math
import os

import numpy as np
import pytest

from dyadic_sim import cli
from dyadic_sim.config import EXPERIMENTS_DICT, ExperimentConfig, get_config_foldername
from dyadic_sim.experiments import (
    VALID_EXPERIMENTS,
    hash_outputs,
    length_in_range,
    resolve_config,
    run_experiment,
    sweep_ellipse,
)


def test_decompose_command(tmp_path):
    out = str(tmp_path / "table.csv")
    result = cli.decompose("l-shape", depth=3, out=out)
    assert result["entries"] == 3
    assert np.isclose(result["H_lower"], math.log2(3))
    assert os.path.exists(out)


def test_encode_command():
    result = cli.encode("l-shape", depth=4, seed=0)
    assert result["k"] == 0
    assert len(result["codeword"]) in (1, 2)
    assert np.isclose(result["expected_length"], 5 / 3)
    arithmetic = cli.encode("unit-disk", seed=0, path="arithmetic")
    assert arithmetic["expected_length"] is None


def test_simulate_command(tmp_path):
    out = str(tmp_path / "transcripts.jsonl")
    result = cli.simulate("l-shape", sessions=5, seed=1, out=out)
    assert result["sessions"] == 5
    with open(out) as f:
        assert len(f.readlines()) == 5
    # a second run replaces the transcripts
    cli.simulate("l-shape", sessions=3, seed=1, out=out)
    with open(out) as f:
        assert len(f.readlines()) == 3
    truncated = cli.simulate("l-shape", sessions=5, eps=0.1, out=out)
    assert truncated["plan"]["l"] == 8
    assert truncated["plan"]["N"] == 13


def test_bounds_command(tmp_path):
    out = str(tmp_path / "bounds.json")
    result = cli.bounds("unit-square", depth=3, mc_samples=2000, out=out)
    assert result["violations"] == []
    with open(out) as f:
        assert json.load(f)["region"] == "unit-square"


def test_protocol_command(tmp_path):
    out = str(tmp_path / "protocol.jsonl")
    summary = cli.protocol("l-shape", sessions=5, out=out)
    assert summary["disagreements"] == 0
    assert summary["bytes_received"] == summary["bytes_expected"]
    assert os.path.exists(out + ".summary")
    assert "protocol-demo" in cli.COMMANDS


def test_experiment_registry_matches_manifest():
    assert set(VALID_EXPERIMENTS) == {
        "fig4-sweep",
        "ellipse-example1",
        "gauss-example2",
        "thm4-truncation",
        "props-suite",
    }
    assert set(VALID_EXPERIMENTS) <= set(EXPERIMENTS_DICT)
    with pytest.raises(AssertionError):
        cli.experiment("no-such-experiment")


def test_resolve_config():
    config = resolve_config("props-suite", depth=5, sessions=None)
    assert config.depth == 5
    assert config.sessions == 10_000
    assert config.regions[0] == "unit-square"
    with pytest.raises(ValueError):
        resolve_config("no-such-experiment")
    with pytest.raises(AssertionError):
        ExperimentConfig("thm4-truncation", eps=[1.5])


def test_config_foldername():
    name = get_config_foldername({"depth": 9, "regions": ["l-shape"], "min_mass": 1e-10})
    assert name == "d=9_mm=1e-10_r=l-shap"


def test_sweep_ellipse():
    ellipse = sweep_ellipse(0.0)
    assert np.allclose(ellipse.K, np.eye(2))


def test_hash_outputs_skips_logs(tmp_path):
    (tmp_path / "a.csv").write_text("1,2\n")
    before = hash_outputs(str(tmp_path))
    (tmp_path / "log.jsonl").write_text("{}\n")
    assert hash_outputs(str(tmp_path)) == before
    (tmp_path / "b.csv").write_text("3\n")
    assert hash_outputs(str(tmp_path)) != before


def test_truncation_experiment_is_deterministic(tmp_path):
    result = run_experiment(
        "thm4-truncation",
        verify=True,
        out_dir=str(tmp_path),
        regions=["l-shape"],
        depth=6,
        eps=[0.1],
        sessions=2000,
    )
    assert result["verified"]
    assert result["path"] == os.path.join(str(tmp_path), "thm4-truncation", "d=6_e=0.1_r=l-shap_s=2000")
    assert result["summary"]["all_fit"]
    with open(os.path.join(result["path"], "truncation.csv")) as f:
        rows = f.readlines()
    assert rows[0].startswith("region,eps,l,l_effective,N")
    assert rows[1].startswith("l-shape,0.1,8,7,13")
    assert not os.path.exists(result["path"] + "-rerun")


def test_length_in_range():
    assert length_in_range("prefix", 3.5, (3.0, 3.2))
    # prefix lengths stay strictly below H + 1
    assert not length_in_range("prefix", 4.2, (3.0, 3.2))
    assert not length_in_range("prefix", 2.9, (3.0, 3.2))
    assert length_in_range("arithmetic", 5.2, (3.0, 3.2))
    assert not length_in_range("arithmetic", 5.3, (3.0, 3.2))
