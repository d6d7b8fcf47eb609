"""`train`, `enroll`, `verify`, `identify`, `detect-machine`: Stage II workflows."""
import argparse
import logging
from pathlib import Path

from app.commands.common import EXIT_DENIED, EXIT_OK, corpus_from, emit
from app.schemas.pipeline import LayerTag, PipelineConfig
from app.services.audio_io import read_accel
from app.services.authenticator import verification_threshold
from app.services.bcsr.checkpoint import load_model, save_model
from app.services.bcsr.features import extract_feature
from app.services.bcsr.recognition import enroll, identify, verify
from app.services.bcsr.spoof_detector import MachineDetector
from app.services.bcsr.templates import TemplateStore
from app.services.bcsr.training import train
from app.services.experiments import (
    corpus_features,
    corpus_speakers,
    new_user_ids,
    pretraining_features,
    run_experiment,
    training_entries,
)
from app.services.pipeline_init import preprocess_bc
from app.services.synthgen import load_corpus

logger = logging.getLogger(__name__)


def run_train(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    training_cfg = cfg.bcsr.training
    updates = {k: v for k, v in {"epochs": args.epochs, "seed": args.seed}.items() if v is not None}
    if updates:
        training_cfg = training_cfg.model_copy(update=updates)
    network_cfg = cfg.bcsr.network
    if args.lambda_ is not None:
        network_cfg = network_cfg.model_copy(update={"lambda_": args.lambda_})

    corpus = corpus_from(args, cfg)
    entries = training_entries(corpus, cfg)
    speaker_ids = sorted({e.speaker_id for e in entries})
    held = new_user_ids(corpus_speakers(corpus), cfg.evaluation.new_users)
    if held:
        logger.info(f"Holding out {len(held)} unseen users for verification: {held}")
    features = corpus_features(corpus, entries, cfg)

    pretrain = None
    if args.pretrain_corpus:
        pretrain = pretraining_features(load_corpus(args.pretrain_corpus), cfg)

    model = train(
        features,
        speaker_ids,
        network_cfg,
        training_cfg,
        cfg.bcsr.features,
        layer_tag=cfg.bcsr.layer_tag,
        pretrain_features=pretrain,
    )
    out = save_model(model, args.out or cfg.paths.model_dir)
    emit({"model_dir": str(out), "speakers": speaker_ids, "held_out_users": held,
          "training_log": model.log.model_dump(mode="json")})
    return EXIT_OK


def _bc_from_file(path, cfg: PipelineConfig):
    return preprocess_bc(read_accel(path), cfg.init)


def run_enroll(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    model = load_model(cfg.paths.model_dir)
    clips = [_bc_from_file(p, cfg) for p in args.clips]
    template = enroll(
        args.user,
        clips,
        model,
        LayerTag(args.layer_tag or cfg.bcsr.layer_tag),
        store=TemplateStore(cfg.paths.template_store),
        max_seconds=args.seconds,
    )
    emit(template)
    return EXIT_OK


def run_verify(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    model = load_model(cfg.paths.model_dir)
    template = TemplateStore(cfg.paths.template_store).get(args.user)
    feature = extract_feature(_bc_from_file(args.probe, cfg), cfg=model.feature_cfg)
    threshold = args.threshold if args.threshold is not None else verification_threshold(cfg, model)
    outcome = verify(feature, template, model, threshold)
    emit(outcome)
    return EXIT_OK if outcome.accepted else EXIT_DENIED


def run_identify(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    model = load_model(cfg.paths.model_dir)
    outcome = identify(extract_feature(_bc_from_file(args.probe, cfg), cfg=model.feature_cfg), model)
    emit(outcome)
    return EXIT_OK


def run_detect_machine(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    model = load_model(cfg.paths.model_dir)
    out_dir = Path(args.out) if args.out else Path(cfg.paths.model_dir) / "machine_detection"
    report = run_experiment(corpus_from(args, cfg), cfg, "machine_detection", out_dir, model=model)
    detector = MachineDetector.load(out_dir / report.files["detector"])
    detector.save(cfg.paths.detector_path)
    logger.info(f"Machine detector saved to {cfg.paths.detector_path}")
    emit(report)
    return EXIT_OK


def register(subparsers, parents) -> None:
    p = subparsers.add_parser(
        "train",
        parents=parents,
        help="Train the BC speaker network on a corpus",
        description="Trains on genuine utterances of all but the held-out new users and saves "
        "model.npz + model.json to paths.model_dir (or --out).",
    )
    p.add_argument("--corpus", type=Path, default=None)
    p.add_argument(
        "--pretrain-corpus", type=Path, default=None, help="Clean corpus from `synth --pretrain`"
    )
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lambda", dest="lambda_", type=float, default=None, help="Adversarial weight")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="Model directory")
    p.set_defaults(handler=run_train)

    p = subparsers.add_parser("enroll", parents=parents, help="Enroll a user from BC clips")
    p.add_argument("--user", required=True)
    p.add_argument("--clips", type=Path, nargs="+", required=True, help="BC accelerometer files")
    p.add_argument("--seconds", type=float, default=None, help="Use at most this much audio (8, 24, 40)")
    p.add_argument("--layer-tag", choices=[t.value for t in LayerTag], default=None)
    p.set_defaults(handler=run_enroll)

    p = subparsers.add_parser(
        "verify",
        parents=parents,
        help="Verify a BC probe against a user's template",
        description="Exit code 1 when the cosine score is below the threshold.",
    )
    p.add_argument("--user", required=True)
    p.add_argument("--probe", type=Path, required=True, help="BC accelerometer file")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(handler=run_verify)

    p = subparsers.add_parser("identify", parents=parents, help="Closed-set identification of a BC probe")
    p.add_argument("--probe", type=Path, required=True, help="BC accelerometer file")
    p.set_defaults(handler=run_identify)

    p = subparsers.add_parser(
        "detect-machine",
        parents=parents,
        help="Train the human vs machine BC detector on a corpus",
    )
    p.add_argument("--corpus", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None, help="Report directory")
    p.set_defaults(handler=run_detect_machine)
