"""`init`, `tcs` and `tcs-grid`: initialization and Stage I scoring."""
import argparse
import json
import logging
from pathlib import Path

from pydantic import ValidationError

from app.commands.common import EXIT_DENIED, EXIT_OK, corpus_from, emit
from app.config import save_pipeline_config
from app.errors import AirBoneError, CorpusIOError
from app.schemas.pipeline import PipelineConfig, TcsConfig, TcsGrid
from app.services.audio_io import read_accel, read_wav, write_wav
from app.services.experiments import grid_search_corpus
from app.services.pipeline_init import initialize
from app.services.synthgen import AirBonePair
from app.services.tcs import tcs_score

logger = logging.getLogger(__name__)

PAIR_AC = "ac.wav"
PAIR_BC = "bc.wav"
PAIR_RECORD = "init.json"


def run_init(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    pair = initialize(read_wav(args.ac), read_accel(args.bc), cfg.init, pair_id=Path(args.ac).stem)
    out = Path(args.out)
    write_wav(out / PAIR_AC, pair.ac)
    write_wav(out / PAIR_BC, pair.bc)
    try:
        (out / PAIR_RECORD).write_text(json.dumps(pair.metadata, indent=2))
    except OSError as e:
        raise CorpusIOError(out / PAIR_RECORD, f"cannot write init record: {e}") from e
    logger.info(f"Wrote initialized pair to {out}")
    emit(pair.metadata)
    return EXIT_OK


def read_pair_dir(path) -> AirBonePair:
    path = Path(path)
    return AirBonePair(ac=read_wav(path / PAIR_AC), bc=read_wav(path / PAIR_BC), pair_id=path.name)


def run_tcs(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    tcs_cfg = cfg.tcs
    if args.threshold is not None:
        try:
            tcs_cfg = TcsConfig.model_validate({**cfg.tcs.model_dump(), "threshold": args.threshold})
        except ValidationError as e:
            raise AirBoneError(f"invalid --threshold: {e}", stage="config") from e
    result = tcs_score(read_pair_dir(args.pair), tcs_cfg)
    emit(result)
    return EXIT_OK if result.accepted else EXIT_DENIED


def run_tcs_grid(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    grid = TcsGrid()
    candidates = {"m_values": args.m, "n_values": args.n, "window_ms_values": args.windows}
    updates = {k: v for k, v in candidates.items() if v}
    if updates:
        try:
            grid = TcsGrid.model_validate({**grid.model_dump(), **updates})
        except ValidationError as e:
            raise AirBoneError(f"invalid grid: {e}", stage="config") from e
    result = grid_search_corpus(corpus_from(args, cfg), grid, cfg, max_pairs=args.max_pairs)
    if args.out:
        save_pipeline_config(cfg.model_copy(update={"tcs": result.selected}), args.out)
        logger.info(f"Wrote config with the selected TCS parameters to {args.out}")
    emit(result)
    return EXIT_OK


def register(subparsers, parents) -> None:
    p = subparsers.add_parser(
        "init",
        parents=parents,
        help="Preprocess, synchronize and align one AC/BC capture",
        description="Writes aligned ac.wav, bc.wav and init.json to the output pair directory.",
    )
    p.add_argument("--ac", type=Path, required=True, help="AC WAV file")
    p.add_argument(
        "--bc", type=Path, required=True, help="BC accelerometer file (.json sidecar, .csv or .wav)"
    )
    p.add_argument("--out", type=Path, required=True, help="Output pair directory")
    p.set_defaults(handler=run_init)

    p = subparsers.add_parser(
        "tcs",
        parents=parents,
        help="Stage I temporal consistency score of an initialized pair",
        description="Exit code 1 when the score does not exceed the threshold.",
    )
    p.add_argument("--pair", type=Path, required=True, help="Pair directory written by `init`")
    p.add_argument("--threshold", type=float, default=None, help="Override tcs.threshold")
    p.add_argument("--json", action="store_true", help="JSON output (always on; kept for scripts)")
    p.set_defaults(handler=run_tcs)

    p = subparsers.add_parser(
        "tcs-grid",
        parents=parents,
        help="Grid search M, N and window length on a dev corpus",
    )
    p.add_argument("--corpus", type=Path, default=None)
    p.add_argument("--m", type=int, nargs="+", default=None, help="Candidate M values")
    p.add_argument("--n", type=int, nargs="+", default=None, help="Candidate N values")
    p.add_argument("--windows", type=float, nargs="+", default=None, help="Candidate window lengths (ms)")
    p.add_argument("--max-pairs", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="Write the updated pipeline config here")
    p.set_defaults(handler=run_tcs_grid)
