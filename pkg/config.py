"""Environment settings, logging setup and INI study configuration."""

import configparser
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import load_dotenv

from errors import ConfigError
from models import SolverMode, SolverSettings, StudyConfig

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

ENV_TEMPLATE = """# Bulk-surface wave solver environment

# Optional: Logging level
LOG_LEVEL=INFO

# Optional: directory for study.csv / study.svg
BSWAVE_OUTPUT_DIR=./results

# Optional: stage solver (direct or iterative)
BSWAVE_SOLVER=direct
"""

SECTION_KEYS = {
    "problem": {"scenario"},  # plus numeric coefficient overrides
    "mesh": {"seed", "levels", "level"},
    "time": {"tau0", "halvings", "taus", "t", "rk_stages"},
    "study": {"norms", "comparison", "reference_gap", "metric", "max_workers",
              "record_wall_time", "energy_observer"},
    "solver": {"mode", "norm_mode", "tol", "max_iter", "ordering"},
    "output": {"directory"},
}


def load_environment() -> Dict[str, str]:
    load_dotenv()
    return {
        "LOG_LEVEL": os.getenv("LOG_LEVEL", "INFO"),
        "BSWAVE_OUTPUT_DIR": os.getenv("BSWAVE_OUTPUT_DIR", "./results"),
        "BSWAVE_SOLVER": os.getenv("BSWAVE_SOLVER", "direct"),
    }


def setup_logging(level: Optional[str] = None) -> None:
    """Configure root logging from LOG_LEVEL"""
    level = (level or load_environment()["LOG_LEVEL"]).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)


def create_env_file(path: Union[str, Path] = ".env") -> bool:
    """Write the .env template unless one exists; returns True when written"""
    path = Path(path)
    if path.exists():
        logger.info(f"{path} already exists")
        return False
    path.write_text(ENV_TEMPLATE)
    logger.info(f"Created {path} template")
    return True


def solver_mode(name: str) -> SolverMode:
    """Map the CLI/env solver names onto stage solver modes"""
    name = name.strip().lower()
    if name == "direct":
        return SolverMode.DIRECT
    if name == "iterative":
        return SolverMode.ITERATIVE_GENERAL
    try:
        return SolverMode(name)
    except ValueError:
        raise ConfigError(f"unknown solver '{name}'") from None


def parse_level_range(text: str) -> Tuple[int, int]:
    """'2..5' -> (2, 5); a single level '3' -> (3, 3)"""
    try:
        if ".." in text:
            first, last = text.split("..", 1)
            return int(first), int(last)
        return int(text), int(text)
    except ValueError:
        raise ConfigError(f"invalid level range '{text}', expected a..b") from None


def _split_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _float(section: str, key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key} must be a number, got '{text}'") from None


def study_config_from_mapping(sections: Dict[str, Dict[str, str]], defaults: Optional[Dict[str, Any]] = None) -> StudyConfig:
    """Validate INI-style sections into a StudyConfig"""
    for section, entries in sections.items():
        if section not in SECTION_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        if section == "problem":
            continue
        unknown = set(entries) - SECTION_KEYS[section]
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")

    values: Dict[str, Any] = dict(defaults or {})
    problem = dict(sections.get("problem", {}))
    if "scenario" in problem:
        values["scenario"] = problem.pop("scenario")
    if problem:
        values["overrides"] = {key: _float("problem", key, text) for key, text in problem.items()}

    mesh = sections.get("mesh", {})
    if "seed" in mesh:
        values["seed"] = mesh["seed"]
    if "levels" in mesh:
        values["levels"] = parse_level_range(mesh["levels"])
    if "level" in mesh:
        values["level"] = mesh["level"]

    time_section = sections.get("time", {})
    for key in ("tau0", "halvings", "rk_stages"):
        if key in time_section:
            values[key] = time_section[key]
    if "t" in time_section:
        values["T"] = time_section["t"]
    if "taus" in time_section:
        values["taus"] = [_float("time", "taus", item) for item in _split_list(time_section["taus"])]

    study = sections.get("study", {})
    for key in ("comparison", "reference_gap", "metric", "max_workers", "record_wall_time", "energy_observer"):
        if key in study:
            values[key] = study[key]
    if "norms" in study:
        values["norms"] = _split_list(study["norms"])

    solver = dict(sections.get("solver", {}))
    if solver:
        if "mode" in solver:
            solver["mode"] = solver_mode(solver["mode"])
        base = values.get("solver")
        merged = {**(base.model_dump() if isinstance(base, SolverSettings) else {}), **solver}
        values["solver"] = SolverSettings(**merged)

    if "directory" in sections.get("output", {}):
        values["output_dir"] = sections["output"]["directory"]

    if "scenario" not in values:
        raise ConfigError("[problem] scenario is required")
    return StudyConfig(**values)


def load_study_config(path: Union[str, Path], defaults: Optional[Dict[str, Any]] = None) -> StudyConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    sections = {name: dict(parser.items(name)) for name in parser.sections()}
    logger.info(f"Loaded study configuration from {path}")
    return study_config_from_mapping(sections, defaults)
