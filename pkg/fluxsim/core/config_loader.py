import copy
import logging
import os
from typing import Any, Dict, Optional

import yaml

from fluxsim.core.errors import ConfigError

logger = logging.getLogger(__name__)

CONFIG_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), "../../config"))
CONFIG_PATH = os.path.join(CONFIG_DIR, "defaults.yaml")
TEMPLATES_PATH = os.path.join(CONFIG_DIR, "sms_templates.txt")


def load_yaml(path: str) -> Any:
    """Read a YAML (or JSON, which YAML accepts) document."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError("file not found", path=path)
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed document: {e}", path=path)


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    path = path or CONFIG_PATH
    logger.debug(f"📄 Loading defaults from: {path}")
    data = load_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError("defaults must be a mapping", path=path)
    return data


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively overlay ``override`` on a copy of ``base``."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged
