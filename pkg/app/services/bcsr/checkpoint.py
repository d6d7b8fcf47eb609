"""Model checkpoints: named tensors in model.npz, everything else in model.json."""
import json
import logging
from pathlib import Path

import numpy as np
import torch
from pydantic import ValidationError

from app.errors import CorpusIOError
from app.schemas.pipeline import FeatureConfig, NetworkConfig
from app.schemas.results import TrainingLog
from app.services.bcsr.network import BcsrNet
from app.services.bcsr.training import TrainedModel

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
WEIGHTS_FILE = "model.npz"
DESCRIPTOR_FILE = "model.json"


def save_model(model: TrainedModel, model_dir) -> Path:
    """Write weights and descriptor under model_dir; returns the directory."""
    model_dir = Path(model_dir)
    state = {name: t.detach().cpu().numpy() for name, t in model.net.state_dict().items()}
    descriptor = {
        "format_version": FORMAT_VERSION,
        "n_speakers": model.net.n_speakers,
        "n_conditions": model.net.n_conditions,
        "speaker_ids": model.speaker_ids,
        "condition_labels": model.condition_labels,
        "network": model.network_cfg.model_dump(mode="json", by_alias=True),
        "features": model.feature_cfg.model_dump(mode="json"),
        "training_log": model.log.model_dump(mode="json"),
    }
    try:
        model_dir.mkdir(parents=True, exist_ok=True)
        np.savez(model_dir / WEIGHTS_FILE, **state)
        (model_dir / DESCRIPTOR_FILE).write_text(json.dumps(descriptor, indent=2))
    except OSError as e:
        raise CorpusIOError(model_dir, f"cannot write model: {e}") from e
    logger.info(f"Saved model ({len(state)} tensors, {len(model.speaker_ids)} speakers) to {model_dir}")
    return model_dir


def load_model(model_dir) -> TrainedModel:
    """Rebuild a TrainedModel; the network comes back in eval mode.

    Raises:
        CorpusIOError: if either file is missing or inconsistent
    """
    model_dir = Path(model_dir)
    try:
        descriptor = json.loads((model_dir / DESCRIPTOR_FILE).read_text())
        network_cfg = NetworkConfig.model_validate(descriptor["network"])
        net = BcsrNet(descriptor["n_speakers"], descriptor["n_conditions"], network_cfg)
        with np.load(model_dir / WEIGHTS_FILE) as weights:
            state = {name: torch.from_numpy(weights[name].copy()) for name in weights.files}
        net.load_state_dict(state)
        model = TrainedModel(
            net=net,
            speaker_ids=list(descriptor["speaker_ids"]),
            condition_labels=list(descriptor["condition_labels"]),
            feature_cfg=FeatureConfig.model_validate(descriptor["features"]),
            network_cfg=network_cfg,
            log=TrainingLog.model_validate(descriptor["training_log"]),
        )
    except (OSError, KeyError, ValueError, RuntimeError, ValidationError) as e:
        raise CorpusIOError(model_dir, f"cannot load model: {e}") from e
    net.eval()
    return model
