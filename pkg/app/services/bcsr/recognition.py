"""Embeddings, enrollment, verification and closed-set identification."""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from app.errors import EnrollmentError, SignalError
from app.schemas.pipeline import AuthMode, LayerTag
from app.schemas.results import IdentificationOutcome, Stage2Outcome, Template
from app.services.bcsr.features import BcFeature, extract_feature, network_input, split_segments
from app.services.bcsr.templates import TemplateStore
from app.services.bcsr.training import TrainedModel, embed_inputs
from app.services.signal_core import Waveform

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SpeakerEmbedding:
    vector: np.ndarray
    layer_tag: LayerTag

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if vector.size == 0 or not np.all(np.isfinite(vector)):
            raise SignalError("Embedding must be a nonempty finite vector")
        object.__setattr__(self, "vector", vector)
        object.__setattr__(self, "layer_tag", LayerTag(self.layer_tag))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0 if either vector is zero."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SignalError(f"Cannot compare embeddings of shape {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def embed_many(
    features: Sequence[BcFeature], model: TrainedModel, layer_tag: LayerTag = LayerTag.FC512
) -> list[SpeakerEmbedding]:
    layer_tag = LayerTag(layer_tag)
    if not features:
        return []
    inputs = np.stack([network_input(f, model.feature_cfg) for f in features])
    return [SpeakerEmbedding(row, layer_tag) for row in embed_inputs(model.net, inputs, layer_tag)]


def embed(
    feature: BcFeature, model: TrainedModel, layer_tag: LayerTag = LayerTag.FC512
) -> SpeakerEmbedding:
    """Activation of the tagged layer for one feature (eval mode, no gradients)."""
    return embed_many([feature], model, layer_tag)[0]


def enroll(
    user_id: str,
    bc_clips: Sequence[Waveform],
    model: TrainedModel,
    layer_tag: LayerTag = LayerTag.FC512,
    store: Optional[TemplateStore] = None,
    max_seconds: Optional[float] = None,
) -> Template:
    """Mean embedding over the whole segments in the enrollment clips.

    max_seconds caps the audio used (the 8/24/40 s presets).

    Raises:
        EnrollmentError: if the clips hold less than one segment
    """
    cfg = model.feature_cfg
    segments = split_segments(list(bc_clips), cfg)
    if max_seconds is not None:
        segments = segments[: int(max_seconds // cfg.segment_seconds)]
    if not segments:
        total = sum(c.duration_s for c in bc_clips)
        raise EnrollmentError(
            f"Enrollment for '{user_id}' needs at least {cfg.segment_seconds} s of BC audio, "
            f"got {total:.2f} s"
        )
    embeddings = embed_many([extract_feature(s, cfg=cfg) for s in segments], model, layer_tag)
    vector = np.mean([e.vector for e in embeddings], axis=0)
    template = Template(
        user_id=user_id,
        layer_tag=layer_tag,
        vector=vector.tolist(),
        enrollment_seconds=len(segments) * cfg.segment_seconds,
        n_segments=len(segments),
    )
    if store is not None:
        store.put(template)
    logger.info(f"Enrolled {user_id} from {len(segments)} segment(s) at {LayerTag(layer_tag).value}")
    return template


def verify(probe: BcFeature, template: Template, model: TrainedModel, threshold: float) -> Stage2Outcome:
    """Cosine score of the probe against the template; accept iff score >= threshold."""
    embedding = embed(probe, model, template.layer_tag)
    reference = np.asarray(template.vector)
    if reference.shape != embedding.vector.shape:
        raise EnrollmentError(
            f"Template for '{template.user_id}' has width {reference.size}, "
            f"the model's {template.layer_tag.value} has {embedding.vector.size}"
        )
    score = cosine(embedding.vector, reference)
    return Stage2Outcome(
        mode=AuthMode.VERIFICATION,
        user_id=template.user_id,
        score=score,
        threshold=threshold,
        layer_tag=template.layer_tag,
        accepted=score >= threshold,
    )


def identify(probe: BcFeature, model: TrainedModel) -> IdentificationOutcome:
    """Closed-set identification: argmax of the speaker softmax."""
    net = model.net
    net.eval()
    with torch.no_grad():
        x = torch.from_numpy(network_input(probe, model.feature_cfg)).unsqueeze(0).unsqueeze(0)
        probs = torch.softmax(net(x).speaker_logits, dim=1)[0].numpy().astype(np.float64)
    best = int(np.argmax(probs))
    return IdentificationOutcome(
        user_id=model.speaker_ids[best],
        probability=float(probs[best]),
        scores={sid: float(p) for sid, p in zip(model.speaker_ids, probs)},
    )
