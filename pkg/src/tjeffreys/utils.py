from pathlib import Path
from importlib import resources
from typing import Any, Union
import copy
import datetime
import logging
import logging.config
import os

import tomlkit
import yaml


LOGGER = logging.getLogger("TJeffreys")
"""Logger instance for the tjeffreys package."""

RESOURCE_PATH = resources.files("tjeffreys")
USER_CONFIG_DIR = Path.home() / ".config/tjeffreys"

# --- NUMERICS Configuration ---
# Fixed numerical constants: tolerances, clamps, guards and validation ranges.
NUMERICS_RESOURCE = RESOURCE_PATH.joinpath("resources/numerics.yaml")
NUMERICS_PATH = USER_CONFIG_DIR / "numerics.yaml"
"""Path to a user override of the numerical settings YAML file.

Multiple settings profiles can be stored in one file. The top-level key `name`
specifies which profile to use, and its settings are loaded into `NUMERICS`.
If the user file does not exist the packaged `numerics.yaml` is used.
"""


def _load_numerics(path) -> dict:
    with open(path, "r") as f:
        all_settings = yaml.safe_load(f)
    profile = all_settings["name"]
    return all_settings[profile]


if NUMERICS_PATH.exists() and os.environ.get("PYTEST_VERSION") is None:
    NUMERICS = _load_numerics(NUMERICS_PATH)
else:
    NUMERICS = _load_numerics(NUMERICS_RESOURCE)
"""Dictionary with the numerical settings of the active profile."""

# --- DEFAULT_CONFIG Configuration ---
# Run defaults for every CLI command plus the logging schema.
DEFAULT_CONFIG_RESOURCE = RESOURCE_PATH.joinpath("resources/default.toml")
DEFAULT_CONFIG_PATH = USER_CONFIG_DIR / "default.toml"
"""Path to a user override of the default run configuration TOML file.

Under pytest the packaged `default.toml` is always used.
"""

if not DEFAULT_CONFIG_PATH.exists() or os.environ.get("PYTEST_VERSION") is not None:
    LOGGER.debug("Using package default.toml")
    DEFAULT_CONFIG_PATH = DEFAULT_CONFIG_RESOURCE

DEFAULT_CONFIG = tomlkit.parse(open(DEFAULT_CONFIG_PATH).read())
"""TOML document containing the default run configuration."""


def deep_merge(src_dict: dict, dst_dict: dict) -> dict:
    """Merge `src_dict` into `dst_dict` in place and return `dst_dict`.

    Nested tables are merged key by key, any other value in `src_dict` replaces
    the one in `dst_dict`. Used to lay a run TOML over the packaged defaults.
    """

    for k, v in src_dict.items():
        if k in dst_dict and isinstance(dst_dict[k], dict) and isinstance(v, dict):
            deep_merge(src_dict[k], dst_dict[k])
        else:
            dst_dict[k] = v

    return dst_dict


def default_config() -> dict:
    """Plain (unwrapped) deep copy of `DEFAULT_CONFIG`."""
    return copy.deepcopy(DEFAULT_CONFIG.unwrap())


def read_user_config(config_path: Union[str, Path, None]) -> dict:
    """Deep merge a user run configuration TOML file over the defaults."""
    config = default_config()
    if config_path is None:
        return config
    user_config = tomlkit.parse(open(config_path).read()).unwrap()
    return deep_merge(user_config, config)


def setup_output_path(run_config: dict, run_name: str, output_path: str = "") -> dict:
    """Sets up and creates output paths for a run.

    Resolves the run name and the output and log directories, creates them,
    and points the logging file handler at `<log_path>/<run_name>.log`.

    Args:
        run_config (dict): Full run configuration with a "run" and a "logging"
            section.
        run_name (str): Desired name for the run. If empty, the name from
            `run_config["run"]["name"]` is used. If that is also empty a name
            based on the current date is generated.
        output_path (str, optional): Overrides `run_config["run"]["output_path"]`.

    Returns:
        dict: The updated run configuration with resolved paths.
    """

    if len(run_name) == 0:
        run_name = run_config["run"]["name"]
    if len(run_name) == 0:
        run_name = "TJeffreys_" + datetime.datetime.now().strftime("%Y%m%d")
    run_config["run"]["name"] = run_name

    if len(output_path) == 0:
        output_path = run_config["run"]["output_path"]
    out = Path(output_path)
    out.mkdir(parents=True, exist_ok=True)
    run_config["run"]["output_path"] = str(out)

    log_path = run_config["run"]["log_path"]
    if len(log_path) == 0:
        log_dir = out / "log"
    else:
        log_dir = Path(log_path) / run_name
    log_dir.mkdir(parents=True, exist_ok=True)
    run_config["run"]["log_path"] = str(log_dir)

    run_config["logging"]["handlers"]["fileHandler"]["filename"] = (
        f"{log_dir}/{run_name}.log"
    )
    return run_config


def update_logger(logger_conf: dict, rotating: bool = False):
    """Applies the logging configuration.

    If `rotating` is True, a `TimedRotatingFileHandler` is configured and the
    per-run `FileHandler` removed. Otherwise the rotating handler is removed and
    the per-run file handler is used. Under pytest only a plain file handler is
    added so `caplog` keeps capturing records.

    Args:
        logger_conf (dict): The logging configuration dictionary, typically
            the `[logging]` table of `default.toml`.
        rotating (bool, optional): If True, configures a rotating file handler.
            Defaults to False.
    """
    logger_conf = copy.deepcopy(logger_conf)
    if rotating:
        del logger_conf["handlers"]["fileHandler"]
        filename = logger_conf["handlers"]["rotatingHandler"]["filename"]
        filename = Path(filename).expanduser()
        filename.parent.mkdir(parents=True, exist_ok=True)
        logger_conf["handlers"]["rotatingHandler"]["filename"] = str(filename)
    else:
        del logger_conf["handlers"]["rotatingHandler"]

    logger_conf["loggers"]["TJeffreys"]["handlers"] = list(
        logger_conf["handlers"].keys()
    )

    if not os.environ.get("PYTEST_VERSION"):
        logging.config.dictConfig(logger_conf)
    elif not rotating:
        # dictConfig would replace the handler caplog installs
        logger = logging.getLogger("TJeffreys")
        fname = logger_conf["handlers"]["fileHandler"]["filename"]
        fmt_ = logger_conf["formatters"]["long"]
        fmt = logging.Formatter(fmt=fmt_["format"], datefmt=fmt_["datefmt"])
        handler = logging.FileHandler(filename=fname)
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(fmt)
        logger.addHandler(handler)
        return handler


def validate_min_max(
    parameter: str, value: Union[int, float], valid_dict: dict
) -> Union[int, float]:
    """Return `value` if it lies in the inclusive range `valid_dict[parameter]`.

    Ranges live in numerics.yaml as `{parameter: {min_val: .., max_val: .., units: ..}}`.
    """

    min_val = valid_dict[parameter]["min_val"]
    max_val = valid_dict[parameter]["max_val"]
    units = valid_dict[parameter].get("units", "")

    if min_val <= value <= max_val:
        return value
    else:
        msg = f"{parameter} value ({value}) should be between {min_val} and {max_val} {units}"
        LOGGER.error(msg)
        raise ValueError(msg.strip())


def validate_in(parameter: str, value: Any, valid_dict: dict) -> Any:
    """Validate value to be in a valid list."""
    if value in valid_dict[parameter]["valid_list"]:
        return value
    else:
        msg = f"{parameter} value ({value}) not in valid list"
        LOGGER.error(msg)
        raise ValueError(msg)
