"""
Tests for the config module.
"""
import os
import pytest
from unittest.mock import patch

from src.config import SimulationConfig, load_params_file, load_plan_file, parse_list
from src.errors import ParameterError


def test_simulation_config_default_values():
    """Test that SimulationConfig exposes typed limits."""
    assert isinstance(SimulationConfig.MAX_LATTICE_SIDE, int)
    assert isinstance(SimulationConfig.MAX_ENUM_SITES, int)
    assert isinstance(SimulationConfig.FREENESS_WINDOW, int)
    assert isinstance(SimulationConfig.MAX_EVENTS, int)
    assert isinstance(SimulationConfig.WORKERS, int)
    assert isinstance(SimulationConfig.LOG_LEVEL, str)


@patch.dict(os.environ, {
    "NUCLEATION_MAX_LATTICE_SIDE": "256",
    "NUCLEATION_MAX_ENUM_SITES": "16",
    "NUCLEATION_FREENESS_WINDOW": "6",
    "NUCLEATION_WORKERS": "4",
}, clear=True)
def test_simulation_config_custom_values():
    """Test that SimulationConfig reads custom environment values."""
    # Re-import to reload environment variables
    from importlib import reload
    import src.config
    reload(src.config)

    try:
        assert src.config.SimulationConfig.MAX_LATTICE_SIDE == 256
        assert src.config.SimulationConfig.MAX_ENUM_SITES == 16
        assert src.config.SimulationConfig.FREENESS_WINDOW == 6
        assert src.config.SimulationConfig.WORKERS == 4
    finally:
        with patch.dict(os.environ, {}, clear=True):
            reload(src.config)


def test_validate_accepts_defaults():
    """Test validation passes with the shipped defaults."""
    with patch.object(SimulationConfig, "FREENESS_WINDOW", 10), \
            patch.object(SimulationConfig, "MAX_ENUM_SITES", 24):
        assert SimulationConfig.validate() is True


def test_validate_rejects_nonpositive_limit():
    """Test validation names the offending variable."""
    with patch.object(SimulationConfig, "WORKERS", 0):
        with pytest.raises(ValueError, match="NUCLEATION_WORKERS"):
            SimulationConfig.validate()


def test_validate_rejects_small_window():
    """Test validation rejects a freeness window below 2."""
    with patch.object(SimulationConfig, "FREENESS_WINDOW", 1):
        with pytest.raises(ValueError, match="NUCLEATION_FREENESS_WINDOW"):
            SimulationConfig.validate()


class TestParameterFiles:
    """Test cases for key = value parameter and plan files."""

    def test_load_params_file(self, tmp_path):
        path = tmp_path / "params.env"
        path.write_text("# metastable regime\nU = 1.0\nDelta = 1.6\nTheta = 2.4\nbeta = 3\n")
        params = load_params_file(path)
        assert params.Delta == 1.6
        assert params.Theta == 2.4
        assert params.beta == 3.0
        assert params.lambda_choice == "sqrt-log"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParameterError, match="not found"):
            load_params_file(tmp_path / "absent.env")

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "params.env"
        path.write_text("Delta = 1.6\ntemperature = 3\n")
        with pytest.raises(ParameterError, match="temperature"):
            load_params_file(path)

    def test_regime_violation(self, tmp_path):
        path = tmp_path / "params.env"
        path.write_text("U = 1\nDelta = 2.5\n")
        with pytest.raises(ParameterError, match="Delta"):
            load_params_file(path)

    def test_load_plan_file(self, tmp_path):
        path = tmp_path / "plan.env"
        path.write_text(
            "U = 1\nDelta = 1.6\nTheta = 2.4\n"
            "betas = 2.5, 3.0, 3.5\nreplicas = 50\nmaster_seed = 7\n"
            "output_dir = study\nsample_period = 0.5\n"
        )
        plan = load_plan_file(path)
        assert plan.betas == [2.5, 3.0, 3.5]
        assert plan.sample_period == 0.5
        assert plan.replicas == 50
        assert plan.master_seed == 7
        assert plan.deltas == [plan.params.delta]

    def test_plan_needs_theta(self, tmp_path):
        path = tmp_path / "plan.env"
        path.write_text("Delta = 1.6\nbetas = 3\nreplicas = 2\n")
        with pytest.raises(ParameterError, match="Theta"):
            load_plan_file(path)


def test_parse_list():
    assert parse_list("2.5, 3,3.5") == [2.5, 3.0, 3.5]
    assert parse_list("") == []
