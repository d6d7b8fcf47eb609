"""`eval` and `authenticate`."""
import argparse
import logging
from pathlib import Path

from app.commands.common import EXIT_DENIED, EXIT_OK, corpus_from, emit
from app.schemas.pipeline import AuthMode, PipelineConfig
from app.services.authenticator import authenticate, load_resources
from app.services.bcsr.checkpoint import load_model
from app.services.bcsr.spoof_detector import MachineDetector
from app.services.experiments import PROTOCOLS, run_experiment

logger = logging.getLogger(__name__)

STAGE1_PROTOCOLS = {"stage1_normal_vs_false_trigger", "stage1_noise_grid", "stage1_acoustic_attacks"}


def run_eval(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    model = detector = None
    if args.protocol not in STAGE1_PROTOCOLS:
        model = load_model(cfg.paths.model_dir)
        detector_path = Path(cfg.paths.detector_path)
        if cfg.bcsr.machine_detector and detector_path.exists():
            detector = MachineDetector.load(detector_path)
    report = run_experiment(
        corpus_from(args, cfg), cfg, args.protocol, args.out, model=model, detector=detector
    )
    emit(report)
    return EXIT_OK


def run_authenticate(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    mode = AuthMode(args.mode) if args.mode else cfg.mode
    record = authenticate(args.ac, args.bc, args.user, cfg, load_resources(cfg), mode=mode)
    emit(record)
    return EXIT_OK if record.final else EXIT_DENIED


def register(subparsers, parents) -> None:
    p = subparsers.add_parser(
        "eval",
        parents=parents,
        help="Run an evaluation protocol on a corpus",
        description="Writes report.json, scores.csv and .dat files to --out.",
    )
    p.add_argument("--protocol", choices=sorted(PROTOCOLS), required=True)
    p.add_argument("--corpus", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True, help="Report directory")
    p.set_defaults(handler=run_eval)

    p = subparsers.add_parser(
        "authenticate",
        parents=parents,
        help="Two-stage authentication of one AC/BC capture",
        description="Prints the decision record. Exit code 1 when access is denied.",
    )
    p.add_argument("--ac", type=Path, required=True, help="AC WAV file")
    p.add_argument("--bc", type=Path, required=True, help="BC accelerometer file")
    p.add_argument("--user", default=None, help="Claimed user (required in verification mode)")
    p.add_argument("--mode", choices=[m.value for m in AuthMode], default=None)
    p.set_defaults(handler=run_authenticate)
