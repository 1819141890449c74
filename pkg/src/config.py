"""
Configuration module for handling environment variables and parameter files.

This module loads environment variables from the .env file, provides
structured access to the simulation limits, and parses the flat
``key = value`` parameter and plan files used by the CLI.
"""

import os
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from dotenv import load_dotenv, dotenv_values

from src.errors import ParameterError
from src.models import ExperimentPlan, ModelParams

# Configure logging
logging.basicConfig(
    level=os.getenv("NUCLEATION_LOG_LEVEL", "INFO"),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

# Find .env file and load environment variables
env_path = Path(__file__).parents[1] / ".env"
load_dotenv(dotenv_path=env_path)
logger.debug(f"Environment variables loaded from {env_path}")


class SimulationConfig:
    """Limits and defaults for the simulator, overridable from the environment."""

    MAX_LATTICE_SIDE: int = int(os.getenv("NUCLEATION_MAX_LATTICE_SIDE", "1024"))
    MAX_ENUM_SITES: int = int(os.getenv("NUCLEATION_MAX_ENUM_SITES", "24"))
    FREENESS_WINDOW: int = int(os.getenv("NUCLEATION_FREENESS_WINDOW", "10"))
    MAX_EVENTS: int = int(os.getenv("NUCLEATION_MAX_EVENTS", "50000000"))
    WORKERS: int = int(os.getenv("NUCLEATION_WORKERS", "1"))
    LOG_LEVEL: str = os.getenv("NUCLEATION_LOG_LEVEL", "INFO")

    @classmethod
    def validate(cls) -> bool:
        """
        Validate the simulation limits.

        Returns:
            bool: True if every limit is usable.

        Raises:
            ValueError: If a limit is not a positive integer or the
                freeness window is smaller than 2.
        """
        for name in ("MAX_LATTICE_SIDE", "MAX_ENUM_SITES", "MAX_EVENTS", "WORKERS"):
            if getattr(cls, name) < 1:
                logger.error(f"NUCLEATION_{name} must be a positive integer.")
                raise ValueError(
                    f"NUCLEATION_{name} must be a positive integer, "
                    f"got {getattr(cls, name)}."
                )

        if cls.FREENESS_WINDOW < 2:
            logger.error("NUCLEATION_FREENESS_WINDOW must be at least 2.")
            raise ValueError(
                f"NUCLEATION_FREENESS_WINDOW must be at least 2, got {cls.FREENESS_WINDOW}."
            )

        return True


# Validate configuration on module import
try:
    SimulationConfig.validate()
except Exception as e:
    logger.error(f"Configuration validation failed: {e}")


_PARAM_KEYS = {
    "U", "Delta", "beta", "Theta", "alpha", "d", "kappa", "delta",
    "lambda_choice", "C_star",
}
_PLAN_KEYS = {
    "betas", "replicas", "master_seed", "sample_period", "horizon",
    "max_events", "output_dir", "deltas", "target_side", "box_trigger_volume",
    "write_logs", "workers",
}
_LIST_KEYS = {"betas", "deltas"}


def _read_key_values(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    """Read a ``key = value`` file, raising ParameterError if it is missing."""
    path = Path(path)
    if not path.is_file():
        raise ParameterError(f"Parameter file not found: {path}")
    values = dotenv_values(path)
    logger.info(f"Loaded {len(values)} keys from {path}")
    return dict(values)


def _split_values(raw: Dict[str, Optional[str]], allowed: set) -> Dict[str, Any]:
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ParameterError(f"Unknown keys in parameter file: {', '.join(unknown)}")

    parsed: Dict[str, Any] = {}
    for key, value in raw.items():
        if value is None or value.strip() == "":
            continue
        if key in _LIST_KEYS:
            parsed[key] = [float(item) for item in value.split(",") if item.strip()]
        else:
            parsed[key] = value.strip()
    return parsed


def load_params_file(path: Union[str, Path]) -> ModelParams:
    """
    Load model parameters from a flat ``key = value`` file.

    Args:
        path: Path of the parameter file (``#`` starts a comment).

    Returns:
        ModelParams: The validated parameters.

    Raises:
        ParameterError: If the file is missing, has unknown keys, or holds
            values that fail validation.
    """
    values = _split_values(_read_key_values(path), _PARAM_KEYS)
    try:
        return ModelParams(**values)
    except ValueError as e:
        logger.error(f"Invalid parameters in {path}: {e}")
        raise ParameterError(f"Invalid parameters in {path}: {e}")


def load_plan_file(path: Union[str, Path]) -> ExperimentPlan:
    """
    Load an experiment plan: model parameters plus study settings in one file.

    Args:
        path: Path of the plan file.

    Returns:
        ExperimentPlan: The validated plan.

    Raises:
        ParameterError: If the file is missing or invalid.
    """
    values = _split_values(_read_key_values(path), _PARAM_KEYS | _PLAN_KEYS)
    param_values = {k: v for k, v in values.items() if k in _PARAM_KEYS}
    plan_values = {k: v for k, v in values.items() if k in _PLAN_KEYS}
    try:
        params = ModelParams(**param_values)
        return ExperimentPlan(params=params, **plan_values)
    except ValueError as e:
        logger.error(f"Invalid plan in {path}: {e}")
        raise ParameterError(f"Invalid plan in {path}: {e}")


def parse_list(value: str) -> List[float]:
    """Parse a comma separated list of floats (CLI helper)."""
    return [float(item) for item in value.split(",") if item.strip()]
