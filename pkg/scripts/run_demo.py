#!/usr/bin/env python3
"""End-to-end walk through both stages on a freshly synthesized corpus.

Usage: python scripts/run_demo.py [out_dir]
"""
import sys
from pathlib import Path

from app.schemas.pipeline import (
    BcsrConfig,
    FeatureConfig,
    NetworkConfig,
    PathsConfig,
    PipelineConfig,
    TrainingConfig,
)
from app.schemas.synth import AttackClass, SceneMix
from app.services.authenticator import AuthResources, authenticate_signals
from app.services.bcsr.recognition import enroll
from app.services.bcsr.templates import TemplateStore
from app.services.bcsr.training import train
from app.services.experiments import corpus_features, entry_bc, run_experiment, training_entries
from app.services.synthgen import build_corpus, load_corpus


def demo_config(out: Path) -> PipelineConfig:
    """Shrunk Stage II settings so the demo trains in about a minute on a CPU."""
    return PipelineConfig(
        bcsr=BcsrConfig(
            features=FeatureConfig(segment_seconds=2.0, bins_per_octave=24),
            network=NetworkConfig(channels=(8, 16), embedding_dim=64, condition_hidden=32),
            training=TrainingConfig(epochs=8, batch_size=16, validation_fraction=0.2),
        ),
        paths=PathsConfig(model_dir=out / "model", template_store=out / "templates.json"),
    )


def demo_stage1(corpus, cfg, out: Path):
    print("\n=== Stage I: genuine vs false trigger ===")
    report = run_experiment(corpus, cfg, "stage1_normal_vs_false_trigger", out / "stage1")
    for summary in report.eers:
        print(f"  {summary.label:>14}: EER {summary.eer:.3f} at S={summary.threshold:.3f}")
    print(f"  FAR/FRR at {report.metrics['threshold']}: {report.metrics['far']}, {report.metrics['frr']}")


def demo_stage2(corpus, cfg):
    print("\n=== Stage II: train, enroll, authenticate ===")
    entries = training_entries(corpus, cfg)
    speakers = sorted({e.speaker_id for e in entries})
    model = train(
        corpus_features(corpus, entries, cfg),
        speakers,
        cfg.bcsr.network,
        cfg.bcsr.training,
        cfg.bcsr.features,
    )
    print(f"  Trained on {len(speakers)} speakers, final loss {model.log.epochs[-1].total_loss:.3f}")

    store = TemplateStore(cfg.paths.template_store)
    user = speakers[0]
    genuine = [e for e in corpus.by_ground_truth("genuine") if e.speaker_id == user]
    enroll(user, [entry_bc(corpus, e, cfg.init) for e in genuine[:2]], model, store=store)
    resources = AuthResources(model=model, store=store)

    for entry in [e for e in corpus.entries if e.speaker_id == user][2:6]:
        ac, bc = corpus.load_pair(entry)
        record = authenticate_signals(ac, bc, user, cfg, resources, pair_id=entry.pair_id)
        status = "✓" if record.final == (entry.ground_truth == "genuine") else "✗"
        stage2 = "skipped" if isinstance(record.stage2, str) else f"{record.stage2.score:.3f}"
        print(
            f"  {status} {entry.pair_id} ({entry.ground_truth}): "
            f"S={record.stage1.score:.3f} stage2={stage2} final={record.final}"
        )


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
    mix = SceneMix(
        attacks={AttackClass.NONE: 0.6, AttackClass.FALSE_TRIGGER: 0.4},
        durations_s=[6.0],
    )
    print(f"Building corpus in {out / 'corpus'}")
    build_corpus(8, 8, mix, seed=1, out_dir=out / "corpus")
    corpus = load_corpus(out / "corpus")
    cfg = demo_config(out)

    demo_stage1(corpus, cfg, out)
    demo_stage2(corpus, cfg)


if __name__ == "__main__":
    main()
