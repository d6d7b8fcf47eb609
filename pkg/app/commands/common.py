"""Helpers shared by command modules: argument groups, JSON output, loading."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from pydantic import BaseModel

from app.config import load_pipeline_config
from app.errors import AirBoneError
from app.schemas.pipeline import PipelineConfig
from app.services.synthgen import Corpus, load_corpus

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DENIED = 1
EXIT_ERROR = 2


def common_arguments() -> argparse.ArgumentParser:
    """Options every subcommand accepts."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, default=None, help="Pipeline config (.json or .toml)")
    verbosity = parent.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    return parent


def load_config(args: argparse.Namespace) -> PipelineConfig:
    return load_pipeline_config(getattr(args, "config", None))


def corpus_from(args: argparse.Namespace, cfg: PipelineConfig, attr: str = "corpus") -> Corpus:
    path = getattr(args, attr, None) or cfg.paths.corpus_root
    if path is None:
        raise AirBoneError(f"No corpus given (--{attr.replace('_', '-')} or paths.corpus_root)", stage="io")
    return load_corpus(path)


def emit(result: Any) -> None:
    """Print a result as JSON on stdout."""
    if isinstance(result, BaseModel):
        text = result.model_dump_json(indent=2, by_alias=True)
    else:
        text = json.dumps(result, indent=2, default=str)
    sys.stdout.write(text + "\n")
    sys.stdout.flush()


def emit_error(error: AirBoneError) -> None:
    sys.stderr.write(json.dumps(error.to_dict()) + "\n")
    sys.stderr.flush()
