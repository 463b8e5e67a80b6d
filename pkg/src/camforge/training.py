"""AAM-softmax loss, SGD with momentum, warmup+cosine schedule, toy-scale fitting."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from camforge.core import ops
from camforge.core.nn import Module
from camforge.core.tensor import Parameter, Tape, Tensor
from camforge.errors import ConfigurationError, FormatError, InputError
from camforge.features import AudioBuffer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AamConfig:
    margin: float = 0.2
    scale: float = 32.0
    num_classes: int = 2

    def __post_init__(self):
        if not 0 <= self.margin < math.pi / 2:
            raise ConfigurationError("AAM margin must lie in [0, pi/2)")
        if self.scale <= 0:
            raise ConfigurationError("AAM scale must be positive")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be >= 1")


@dataclass(frozen=True)
class ScheduleConfig:
    lr_max: float = 0.1
    lr_min: float = 1e-4
    warmup_steps: int = 0
    total_steps: int = 1

    def __post_init__(self):
        if not 0 <= self.lr_min <= self.lr_max:
            raise ConfigurationError("need 0 <= lr_min <= lr_max")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigurationError("need 0 <= warmup_steps < total_steps")


def aam_softmax_loss(
    embeddings: Tensor, labels: Sequence[int], class_weights: Tensor, config: AamConfig
) -> Tensor:
    """Mean cross-entropy over AAM logits; cosines use L2-normalised rows."""
    labels = np.asarray(labels, dtype=np.int64)
    n_cls = class_weights.shape[0]
    if embeddings.shape[-1] != class_weights.shape[-1]:
        raise ConfigurationError(
            f"embedding dim {embeddings.shape[-1]} != class weight dim {class_weights.shape[-1]}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise InputError(f"labels must lie in [0, {n_cls})")
    cosine = ops.matmul(ops.l2_normalize(embeddings), ops.transpose(ops.l2_normalize(class_weights), 0, 1))
    logits = ops.aam_logits(cosine, labels, config.margin, config.scale)
    return ops.cross_entropy(logits, labels)


def lr_schedule(step: int, config: ScheduleConfig) -> float:
    """Linear warmup from 0 to ``lr_max``, then cosine decay to ``lr_min``."""
    if not 0 <= step <= config.total_steps:
        raise InputError(f"step {step} outside [0, {config.total_steps}]")
    if step < config.warmup_steps:
        return config.lr_max * step / config.warmup_steps
    progress = (step - config.warmup_steps) / (config.total_steps - config.warmup_steps)
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + math.cos(math.pi * progress))


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay folded into the gradient.

    v <- momentum * v + (grad + weight_decay * w);  w <- w - lr * v
    """

    def __init__(self, params: Iterable[Parameter], momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += p.grad + self.weight_decay * p.data
            p.data -= (lr * v).astype(p.dtype)
            p.grad.fill(0)


def sgd_step(
    params: Sequence[Parameter],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    optimizer: SGD | None = None,
) -> SGD:
    """One update; pass the returned optimizer back in to keep velocity."""
    if optimizer is None:
        optimizer = SGD(params, momentum, weight_decay)
    optimizer.step(lr)
    return optimizer


@dataclass
class FitResult:
    losses: list[float]
    accuracy: float
    class_weights: Parameter
    lrs: list[float] = field(default_factory=list)


def _crop(feats: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    extra = feats.shape[-1] - length
    start = int(rng.integers(0, extra + 1)) if extra > 0 else 0
    return feats[:, start : start + length]


def classify(model: Module, features: Sequence[np.ndarray], class_weights: Tensor) -> np.ndarray:
    """Nearest class by cosine, inference-mode embeddings."""
    model.eval()
    w = class_weights.data / np.linalg.norm(class_weights.data, axis=1, keepdims=True)
    preds = []
    for f in features:
        emb = model(Tensor(f[None])).data[0]
        preds.append(int(np.argmax(w @ (emb / np.linalg.norm(emb)))))
    return np.asarray(preds)


def toy_fit(
    model: Module,
    dataset: Sequence[tuple[np.ndarray, int]],
    schedule: ScheduleConfig,
    steps: int,
    seed: int = 0,
    aam: AamConfig | None = None,
    crop_frames: int = 300,
    batch_size: int | None = None,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
) -> FitResult:
    """Fit ``model`` plus an AAM classifier on a small labelled feature set.

    Each step draws a batch (the whole set by default), crops every
    utterance to a common length of at most ``crop_frames`` (300 frames =
    3 s) and takes one SGD step at the scheduled learning rate.
    """
    labels = np.asarray([lab for _, lab in dataset], dtype=np.int64)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise ConfigurationError("toy_fit needs at least two classes")
    if counts.min() < 2:
        raise ConfigurationError("toy_fit needs at least two samples per class")
    if steps > schedule.total_steps:
        raise ConfigurationError("steps exceeds schedule.total_steps")
    n_cls = int(labels.max()) + 1
    aam = aam or AamConfig(num_classes=n_cls)
    feats = [np.asarray(f.data if isinstance(f, Tensor) else f, dtype=np.float32) for f, _ in dataset]

    rng = np.random.default_rng(seed)
    emb_dim = model.config.embedding_dim
    bound = math.sqrt(6.0 / emb_dim)
    class_weights = Parameter(rng.uniform(-bound, bound, size=(n_cls, emb_dim)), name="aam.weight")
    optimizer = SGD(model.parameters() + [class_weights], momentum, weight_decay)
    model.zero_grad()

    losses, lrs = [], []
    model.train()
    for step in range(steps):
        if batch_size is None or batch_size >= len(feats):
            idx = np.arange(len(feats))
        else:
            idx = np.sort(rng.choice(len(feats), size=batch_size, replace=False))
        length = min(crop_frames, min(feats[i].shape[-1] for i in idx))
        batch = np.stack([_crop(feats[i], length, rng) for i in idx])
        with Tape() as tape:
            emb = model(Tensor(batch))
            loss = aam_softmax_loss(emb, labels[idx], class_weights, aam)
        tape.backward(loss)
        lr = lr_schedule(step, schedule)
        optimizer.step(lr)
        losses.append(float(loss.data))
        lrs.append(lr)
        log.debug("step %d lr %.5f loss %.5f", step, lr, losses[-1])

    preds = classify(model, feats, class_weights)
    return FitResult(losses, float((preds == labels).mean()), class_weights, lrs)


def synthetic_speakers(
    num_speakers: int = 2,
    utts_per_speaker: int = 5,
    seconds: float = 1.5,
    seed: int = 0,
    sample_rate: int = 16000,
) -> list[tuple[AudioBuffer, int]]:
    """Harmonic 'voices' with per-speaker pitch and spectral tilt plus noise."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    out = []
    for spk in range(num_speakers):
        f0 = 110.0 * 1.6**spk
        tilt = 0.6 + 0.3 * spk
        for _ in range(utts_per_speaker):
            pitch = f0 * (1.0 + 0.03 * rng.standard_normal())
            wav = np.zeros(n)
            for h in range(1, 16):
                if h * pitch >= sample_rate / 2:
                    break
                wav += tilt**h * np.sin(2 * np.pi * h * pitch * t + rng.uniform(0, 2 * np.pi))
            wav *= 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(2, 5) * t) ** 2
            wav += 0.01 * rng.standard_normal(n)
            wav *= 0.5 / np.max(np.abs(wav))
            out.append((AudioBuffer(wav.astype(np.float32), sample_rate), spk))
    return out


def load_manifest(path: str | Path) -> list[tuple[Path, str]]:
    """Toy dataset listing: a directory of ``<speaker>_<utt>.wav`` or a ``path<TAB>speaker`` file."""
    path = Path(path)
    if path.is_dir():
        entries = []
        for wav in sorted(path.glob("*.wav")):
            if "_" not in wav.stem:
                raise FormatError(f"{wav.name}: expected <speaker_id>_<utt_id>.wav")
            entries.append((wav, wav.stem.split("_", 1)[0]))
        return entries
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'path<TAB>speaker_id'")
        wav = Path(parts[0])
        if not wav.is_absolute():
            wav = path.parent / wav
        entries.append((wav, parts[1].strip()))
    return entries
