"""Stage II: BC speaker recognition with condition-adversarial training."""
from app.services.bcsr.checkpoint import load_model, save_model
from app.services.bcsr.features import BcFeature, augment, extract_feature, network_input, split_segments
from app.services.bcsr.network import BcsrNet, GradientReversal, build_network, dal_loss
from app.services.bcsr.recognition import (
    SpeakerEmbedding,
    cosine,
    embed,
    embed_many,
    enroll,
    identify,
    verify,
)
from app.services.bcsr.spoof_detector import MachineDetector, detect_machine
from app.services.bcsr.templates import MemoryTemplateStore, TemplateStore
from app.services.bcsr.training import TrainedModel, train

__all__ = [
    "BcFeature",
    "BcsrNet",
    "GradientReversal",
    "MachineDetector",
    "MemoryTemplateStore",
    "SpeakerEmbedding",
    "TemplateStore",
    "TrainedModel",
    "augment",
    "build_network",
    "cosine",
    "dal_loss",
    "detect_machine",
    "embed",
    "embed_many",
    "enroll",
    "extract_feature",
    "identify",
    "load_model",
    "network_input",
    "save_model",
    "split_segments",
    "train",
    "verify",
]
