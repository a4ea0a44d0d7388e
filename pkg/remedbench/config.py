import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import tomli
from pydantic import BaseModel, Field, ValidationError, model_validator

from remedbench.exceptions import ConfigError


class Config(object):
    """Environment driven settings. Secrets only ever come from the environment."""

    MAX_THINKING_TIME_S = 300.0
    DEFAULT_T_MAX = 1
    DEFAULT_PROBE_BUDGET = 5

    @classmethod
    def fetch_env_settings(cls):
        cls.api_key = os.getenv('REMEDBENCH_API_KEY')
        cls.endpoint = os.getenv('REMEDBENCH_ENDPOINT')
        cls.model = os.getenv('REMEDBENCH_MODEL')
        cls.log_level = os.getenv('REMEDBENCH_LOG_LEVEL')


Config.fetch_env_settings()


class DevelopmentConfig(Config):
    DEBUG = True
    LOG_LEVEL = 'DEBUG'


class ProductionConfig(Config):
    DEBUG = False
    LOG_LEVEL = 'INFO'


config_dict = {
    'development': DevelopmentConfig,
    'production': ProductionConfig
}

active_config = config_dict.get(os.getenv('REMEDBENCH_ENV', 'production'), ProductionConfig)

logging.basicConfig(
    level=getattr(logging, (Config.log_level or active_config.LOG_LEVEL).upper(), logging.INFO),
    format='%(asctime)s - %(levelname)s - %(message)s',
)
logger = logging.getLogger(__name__)


class SystemId(str, Enum):
    TT_LIKE = "tt_like"
    OB_LIKE = "ob_like"
    SM_LIKE = "sm_like"


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


class PolicyName(str, Enum):
    SOLOGEN = "sologen"
    THINKREMED = "thinkremed"


class BackendName(str, Enum):
    ORACLE = "oracle"
    NAIVE_THEN_ORACLE = "naive_then_oracle"
    SCALE_ONLY = "scale_only"
    BROKEN = "broken"
    REMOTE = "remote"


SYSTEM_ALIASES = {
    "tt": SystemId.TT_LIKE, "tt_like": SystemId.TT_LIKE, "train-ticket": SystemId.TT_LIKE,
    "ob": SystemId.OB_LIKE, "ob_like": SystemId.OB_LIKE, "online-boutique": SystemId.OB_LIKE,
    "sm": SystemId.SM_LIKE, "sm_like": SystemId.SM_LIKE, "simple-micro": SystemId.SM_LIKE,
}

DEFAULT_SCENARIO_COUNTS = {
    Difficulty.EASY: 23,
    Difficulty.MEDIUM: 49,
    Difficulty.HARD: 80,
}


def resolve_system(value):
    if isinstance(value, SystemId):
        return value
    try:
        return SYSTEM_ALIASES[str(value).lower()]
    except KeyError:
        raise ConfigError(f"unknown system: {value} (choose from tt, ob, sm)")


class RunConfig(BaseModel):
    system_id: SystemId = SystemId.SM_LIKE
    difficulty: Optional[Difficulty] = Difficulty.EASY  # None runs every level
    policy: PolicyName = PolicyName.THINKREMED
    backend: BackendName = BackendName.ORACLE
    endpoint: Optional[str] = None
    model: Optional[str] = None
    seed: int = 0
    t_max: int = Field(default=Config.DEFAULT_T_MAX, ge=0)
    probe_budget: int = Field(default=Config.DEFAULT_PROBE_BUDGET, ge=0)
    use_probe: bool = True
    use_reflection: bool = True
    count: Optional[int] = Field(default=None, ge=1)
    out: str = "remedbench-out"
    jobs: int = Field(default=1, ge=1)
    timeout_s: float = Field(default=Config.MAX_THINKING_TIME_S, gt=0)

    @model_validator(mode="after")
    def check_remote_fields(self):
        if self.backend == BackendName.REMOTE:
            if not self.endpoint or not self.model:
                raise ValueError("--endpoint and --model are required with --backend remote")
        elif self.endpoint or self.model:
            raise ValueError("--endpoint/--model are only valid with --backend remote")
        return self

    def difficulties(self):
        return [self.difficulty] if self.difficulty is not None else list(Difficulty)


# config-file keys mirror the flag names
FILE_KEYS = {
    "system": "system_id", "difficulty": "difficulty", "policy": "policy", "backend": "backend",
    "endpoint": "endpoint", "model": "model", "seed": "seed", "tmax": "t_max",
    "probe_budget": "probe_budget", "probe": "use_probe", "reflection": "use_reflection",
    "count": "count", "out": "out", "jobs": "jobs", "timeout": "timeout_s",
}


def read_config_file(path):
    """Read a TOML key/value file whose keys mirror the CLI flag names."""
    try:
        with open(path, 'rb') as fh:
            raw = tomli.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"malformed config file {path}: {e}")
    if "api_key" in raw or "api-key" in raw:
        raise ConfigError("api keys are read from REMEDBENCH_API_KEY only")
    values = {}
    for key, value in raw.items():
        name = FILE_KEYS.get(key.replace('-', '_'))
        if name is None:
            raise ConfigError(f"unknown key in config file {path}: {key}")
        values[name] = value
    return values


def build_run_config(file_path: Optional[Path] = None, **flags: Any):
    """Defaults < config file < flags. Flags left as None do not override."""
    values = {}
    if file_path is not None:
        values.update(read_config_file(file_path))
    values.update({k: v for k, v in flags.items() if v is not None})
    if "system_id" in values:
        values["system_id"] = resolve_system(values["system_id"])
    if values.get("difficulty") == "all":
        values["difficulty"] = None
    if values.get("backend") == BackendName.REMOTE:
        # REMEDBENCH_ENDPOINT / REMEDBENCH_MODEL fill what neither file nor flags gave
        for key in ("endpoint", "model"):
            if values.get(key) is None and getattr(Config, key):
                values[key] = getattr(Config, key)
    try:
        return RunConfig(**values)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or "config"
        raise ConfigError(f"{where}: {first['msg']}")
