"""Centralized configuration.

Two layers:
- Settings: process environment (AIRBONE_* variables, optional .env file).
  Import get_settings() instead of reading os.environ in service code.
- PipelineConfig: the JSON/TOML pipeline file. Store paths from the
  environment override the file.
"""
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.errors import AirBoneError, CorpusIOError
from app.schemas.pipeline import PipelineConfig

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(env_prefix="AIRBONE_", env_file=".env", extra="ignore")

    LOG_LEVEL: str = "INFO"

    # Store overrides (take precedence over the pipeline config file)
    MODEL_DIR: Optional[Path] = None
    TEMPLATE_STORE: Optional[Path] = None
    MACHINE_DETECTOR: Optional[Path] = None
    CORPUS_ROOT: Optional[Path] = None

    # Corpus generation / evaluation parallelism
    WORKERS: int = 1


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


def _read_config_file(path: Path) -> dict:
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        return json.loads(path.read_text())
    except OSError as e:
        raise CorpusIOError(path, f"cannot read config: {e}") from e
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise AirBoneError(f"{path}: malformed config: {e}", stage="config") from e


def apply_settings(cfg: PipelineConfig, settings: Optional[Settings] = None) -> PipelineConfig:
    """Overlay environment store paths onto a config."""
    settings = settings or get_settings()
    overrides = {
        "model_dir": settings.MODEL_DIR,
        "template_store": settings.TEMPLATE_STORE,
        "machine_detector": settings.MACHINE_DETECTOR,
        "corpus_root": settings.CORPUS_ROOT,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if not overrides:
        return cfg
    logger.debug(f"Environment overrides: {sorted(overrides)}")
    return cfg.model_copy(update={"paths": cfg.paths.model_copy(update=overrides)})


def load_pipeline_config(path=None, settings: Optional[Settings] = None) -> PipelineConfig:
    """Load a PipelineConfig from .json or .toml; None gives the defaults.

    Relative paths are resolved against the config file's directory, then
    environment overrides are applied.

    Raises:
        AirBoneError: on validation failure or a missing corpus_root
        CorpusIOError: if the file cannot be read
    """
    if path is None:
        cfg = PipelineConfig()
        base = Path.cwd()
    else:
        path = Path(path)
        try:
            cfg = PipelineConfig.model_validate(_read_config_file(path))
        except ValidationError as e:
            raise AirBoneError(f"{path}: invalid pipeline config: {e}", stage="config") from e
        base = path.resolve().parent

    def resolve(p: Optional[Path]) -> Optional[Path]:
        if p is None:
            return None
        return p if p.is_absolute() else (base / p).resolve()

    paths = cfg.paths
    cfg = cfg.model_copy(update={"paths": paths.model_copy(update={
        "model_dir": resolve(paths.model_dir),
        "template_store": resolve(paths.template_store),
        "corpus_root": resolve(paths.corpus_root),
        "machine_detector": resolve(paths.machine_detector),
    })})
    cfg = apply_settings(cfg, settings)
    if cfg.paths.corpus_root is not None and not cfg.paths.corpus_root.exists():
        raise AirBoneError(f"corpus_root {cfg.paths.corpus_root} does not exist", stage="config")
    return cfg


def save_pipeline_config(cfg: PipelineConfig, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(cfg.model_dump_json(indent=2, by_alias=True))
    except OSError as e:
        raise CorpusIOError(path, f"cannot write config: {e}") from e
    return path
