"""Human vs loudspeaker-driven (machine) BC detection on speaker embeddings.

The primary detector is a linear discriminant; it is persisted as its
weight vector and bias so scoring needs no pickles. Logistic regression, a
quadratic-kernel SVM and a small MLP are trained alongside for comparison.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.discriminant_analysis import LinearDiscriminantAnalysis
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import accuracy_score
from sklearn.model_selection import train_test_split
from sklearn.neural_network import MLPClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC

from app.errors import CorpusIOError, ProtocolError
from app.schemas.pipeline import LayerTag
from app.schemas.results import DeviceAccuracy, MachineDetectionReport

logger = logging.getLogger(__name__)

PRIMARY = "lda"
CLASSIFIER_NAMES = ("lda", "logistic", "svm_quadratic", "mlp")


def make_classifier(name: str, seed: int = 0):
    if name == "lda":
        return LinearDiscriminantAnalysis()
    if name == "logistic":
        return make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000))
    if name == "svm_quadratic":
        return make_pipeline(StandardScaler(), SVC(kernel="poly", degree=2))
    if name == "mlp":
        return make_pipeline(
            StandardScaler(), MLPClassifier(hidden_layer_sizes=(64,), max_iter=1000, random_state=seed)
        )
    raise ProtocolError(f"Unknown classifier '{name}', expected one of {CLASSIFIER_NAMES}")


@dataclass
class MachineDetector:
    """Linear decision: machine iff w . x + b > 0."""

    weights: np.ndarray
    bias: float
    layer_tag: LayerTag = LayerTag.FC512

    def score(self, embedding) -> float:
        x = np.asarray(getattr(embedding, "vector", embedding), dtype=np.float64).reshape(-1)
        if x.shape != self.weights.shape:
            raise ProtocolError(f"Detector expects width {self.weights.size}, got {x.size}")
        return float(x @ self.weights + self.bias)

    def is_machine(self, embedding) -> bool:
        return self.score(embedding) > 0

    def to_dict(self) -> dict:
        return {
            "kind": PRIMARY,
            "layer_tag": LayerTag(self.layer_tag).value,
            "weights": self.weights.tolist(),
            "bias": self.bias,
        }

    def save(self, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict()))
        except OSError as e:
            raise CorpusIOError(path, f"cannot write machine detector: {e}") from e
        return path

    @classmethod
    def load(cls, path) -> "MachineDetector":
        path = Path(path)
        try:
            body = json.loads(path.read_text())
            return cls(
                weights=np.asarray(body["weights"], dtype=np.float64),
                bias=float(body["bias"]),
                layer_tag=LayerTag(body.get("layer_tag", LayerTag.FC512.value)),
            )
        except (OSError, ValueError, KeyError) as e:
            raise CorpusIOError(path, f"unreadable machine detector: {e}") from e


@dataclass
class MachineDetectionResult:
    detector: MachineDetector
    reports: list[MachineDetectionReport]

    def report(self, classifier: str = PRIMARY) -> MachineDetectionReport:
        return next(r for r in self.reports if r.classifier == classifier)


def _per_device(
    y_true: np.ndarray, y_pred: np.ndarray, devices: np.ndarray
) -> list[DeviceAccuracy]:
    """Accuracy over human samples plus the machine samples of each device."""
    out = []
    for device in sorted({d for d, y in zip(devices, y_true) if y == 1 and d}):
        mask = (y_true == 0) | (devices == device)
        out.append(DeviceAccuracy(
            device_profile=device,
            accuracy=float(accuracy_score(y_true[mask], y_pred[mask])),
            n_test=int(mask.sum()),
        ))
    return out


def detect_machine(
    embeddings: np.ndarray,
    is_machine: Sequence[bool],
    devices: Optional[Sequence[Optional[str]]] = None,
    *,
    layer_tag: LayerTag = LayerTag.FC512,
    test_fraction: float = 0.3,
    seed: int = 0,
    classifiers: Sequence[str] = CLASSIFIER_NAMES,
) -> MachineDetectionResult:
    """Fit the detectors on a stratified split and report held-out accuracy.

    Raises:
        ProtocolError: if either class is missing or too small to split
    """
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(is_machine, dtype=np.int64)
    dev = np.array([d or "" for d in (devices if devices is not None else [None] * y.size)], dtype=object)
    counts = np.bincount(y, minlength=2)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ProtocolError(f"Embeddings {X.shape} do not match {y.size} labels")
    if counts.min() < 2:
        raise ProtocolError(f"Need at least 2 human and 2 machine samples, got {counts[0]} and {counts[1]}")

    X_tr, X_te, y_tr, y_te, _, dev_te = train_test_split(
        X, y, dev, test_size=test_fraction, stratify=y, random_state=seed
    )
    reports, detector = [], None
    for name in classifiers:
        clf = make_classifier(name, seed).fit(X_tr, y_tr)
        pred = clf.predict(X_te)
        reports.append(MachineDetectionReport(
            classifier=name,
            accuracy=float(accuracy_score(y_te, pred)),
            per_device=_per_device(y_te, pred, dev_te),
            n_train=int(y_tr.size),
            n_test=int(y_te.size),
        ))
        logger.info(f"Machine detection [{name}]: held-out accuracy {reports[-1].accuracy:.3f}")
        if name == PRIMARY:
            detector = MachineDetector(
                weights=clf.coef_[0].astype(np.float64),
                bias=float(clf.intercept_[0]),
                layer_tag=layer_tag,
            )
    if detector is None:
        lda = make_classifier(PRIMARY).fit(X_tr, y_tr)
        detector = MachineDetector(lda.coef_[0].astype(np.float64), float(lda.intercept_[0]), layer_tag)
    return MachineDetectionResult(detector=detector, reports=reports)
