"""`synth`: generate a synthetic AC/BC corpus."""
import argparse
import json
import logging
from pathlib import Path

from pydantic import ValidationError

from app.commands.common import EXIT_OK, emit
from app.config import get_settings
from app.errors import AirBoneError, CorpusIOError
from app.schemas.pipeline import PipelineConfig
from app.schemas.synth import AttackClass, SceneMix
from app.services.synthgen import build_corpus

logger = logging.getLogger(__name__)


def read_scene_mix(path) -> SceneMix:
    path = Path(path)
    try:
        return SceneMix.model_validate(json.loads(path.read_text()))
    except OSError as e:
        raise CorpusIOError(path, f"cannot read scene mix: {e}") from e
    except (json.JSONDecodeError, ValidationError) as e:
        raise AirBoneError(f"{path}: invalid scene mix: {e}", stage="config") from e


def run(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    if args.pretrain:
        # Clean genuine speech only; the AC side is what pretraining reads.
        mix = SceneMix(attacks={AttackClass.NONE: 1.0})
    elif args.scene_mix:
        mix = read_scene_mix(args.scene_mix)
    else:
        mix = SceneMix()
    if args.durations:
        mix = mix.model_copy(update={"durations_s": args.durations})
    mix = SceneMix.model_validate(mix.model_dump())

    entries = build_corpus(
        args.speakers,
        args.utts,
        mix,
        args.seed,
        args.out,
        bc_format=args.bc_format,
        workers=args.workers or get_settings().WORKERS,
        speaker_prefix=args.prefix,
    )
    counts: dict[str, int] = {}
    for e in entries:
        counts[e.ground_truth] = counts.get(e.ground_truth, 0) + 1
    emit({"out": str(args.out), "manifest": str(Path(args.out) / "manifest.json"),
          "n_entries": len(entries), "ground_truth": counts})
    return EXIT_OK


def register(subparsers, parents) -> None:
    p = subparsers.add_parser(
        "synth",
        parents=parents,
        help="Generate a synthetic corpus",
        description="Render synthetic speakers into paired AC WAV and BC accelerometer files "
        "plus manifest.json and speakers.json.",
    )
    p.add_argument("--speakers", type=int, required=True, help="Number of speakers (>= 2)")
    p.add_argument("--utts", type=int, required=True, help="Utterances per speaker")
    p.add_argument("--scene-mix", type=Path, default=None, help="SceneMix JSON file")
    p.add_argument(
        "--durations", type=float, nargs="+", default=None, help="Utterance durations in seconds"
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="Output corpus directory")
    p.add_argument("--bc-format", choices=["bin", "csv", "wav"], default="bin")
    p.add_argument("--workers", type=int, default=None, help="Worker processes (default AIRBONE_WORKERS)")
    p.add_argument("--prefix", default="spk", help="Speaker id prefix")
    p.add_argument("--pretrain", action="store_true", help="Clean genuine-only corpus for pretraining")
    p.set_defaults(handler=run)
