"""Trial lists, enrollment averaging, cosine scoring, EER and MinDCF."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from camforge.errors import InputError, ParseError

_LABELS = {"target": True, "1": True, "nontarget": False, "0": False}


@dataclass
class Trial:
    enroll_id: str
    test_id: str
    target: bool


@dataclass
class TrialSet:
    pairs: list[Trial]
    scores: np.ndarray | None = None

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.target for p in self.pairs], dtype=bool)

    def with_scores(self, scores: Sequence[float]) -> "TrialSet":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(self.pairs),):
            raise InputError(f"expected {len(self.pairs)} scores, got {scores.shape}")
        return TrialSet(self.pairs, scores)

    @classmethod
    def from_arrays(cls, target_scores: Sequence[float], nontarget_scores: Sequence[float]) -> "TrialSet":
        pairs = [Trial(f"e{i}", f"t{i}", True) for i in range(len(target_scores))]
        pairs += [Trial(f"e{i}", f"n{i}", False) for i in range(len(nontarget_scores))]
        return cls(pairs, np.concatenate([np.asarray(target_scores, float), np.asarray(nontarget_scores, float)]))


def parse_trials(path: str | Path) -> TrialSet:
    """``enroll_id test_id label`` per line; label is target/nontarget/1/0."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or parts[2] not in _LABELS:
            raise ParseError(f"{path}: line {lineno}: expected 'enroll_id test_id target|nontarget|1|0'")
        pairs.append(Trial(parts[0], parts[1], _LABELS[parts[2]]))
    return TrialSet(pairs)


def parse_scores(path: str | Path) -> dict[tuple[str, str], float]:
    scores = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            if len(parts) != 3:
                raise ValueError
            scores[(parts[0], parts[1])] = float(parts[2])
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: expected 'enroll_id test_id score'") from None
    return scores


def attach_scores(trials: TrialSet, scores: Mapping[tuple[str, str], float]) -> TrialSet:
    missing = [(p.enroll_id, p.test_id) for p in trials.pairs if (p.enroll_id, p.test_id) not in scores]
    if missing:
        raise InputError(f"no score for trial {missing[0][0]} {missing[0][1]} ({len(missing)} missing)")
    return trials.with_scores([scores[(p.enroll_id, p.test_id)] for p in trials.pairs])


def format_scores(trials: TrialSet) -> str:
    return "".join(
        f"{p.enroll_id} {p.test_id} {s:.6f}\n" for p, s in zip(trials.pairs, trials.scores)
    )


def average_enrollment(embeddings: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean of raw (unnormalised) embeddings."""
    if len(embeddings) == 0:
        raise InputError("average_enrollment needs at least one embedding")
    arrs = [np.asarray(getattr(e, "data", e), dtype=np.float64) for e in embeddings]
    if len({a.shape for a in arrs}) != 1:
        raise InputError("average_enrollment: embeddings have different dimensions")
    return np.mean(arrs, axis=0)


def cosine_score(a, b) -> float:
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InputError("cosine_score: zero-norm embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def score_trials(
    trials: TrialSet,
    store: Mapping[str, np.ndarray],
    enrollments: Mapping[str, Sequence[str]] | None = None,
) -> TrialSet:
    """Cosine-score every pair.

    An enroll id listed in ``enrollments`` is represented by the mean of its
    utterances' embeddings; otherwise it is looked up in ``store`` directly.
    """
    enrollments = enrollments or {}
    cache: dict[str, np.ndarray] = {}

    def lookup(key: str) -> np.ndarray:
        if key in store:
            return store[key]
        raise InputError(f"no embedding for {key!r}")

    def enroll_vec(eid: str) -> np.ndarray:
        if eid not in cache:
            utts = enrollments.get(eid)
            cache[eid] = average_enrollment([lookup(u) for u in utts]) if utts else lookup(eid)
        return cache[eid]

    return trials.with_scores([cosine_score(enroll_vec(p.enroll_id), lookup(p.test_id)) for p in trials.pairs])


def parse_enrollments(path: str | Path) -> dict[str, list[str]]:
    """``enroll_id utt1 utt2 ...`` per line."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 2:
            raise ParseError(f"{path}: line {lineno}: expected 'enroll_id utt_id [utt_id ...]'")
        out[parts[0]] = parts[1:]
    return out


def _checked(trials: TrialSet) -> tuple[np.ndarray, np.ndarray]:
    if trials.scores is None:
        raise InputError("trial set has no scores")
    labels = trials.labels
    if labels.all() or not labels.any():
        raise InputError("need at least one target and one nontarget trial")
    scores = np.asarray(trials.scores, dtype=np.float64)
    return scores[labels], scores[~labels]


def operating_points(target: np.ndarray, nontarget: np.ndarray):
    """Miss and false-accept rates at every candidate threshold.

    Candidates are -inf, the midpoints between consecutive distinct scores,
    and +inf. A trial is accepted when its score exceeds the threshold.
    """
    distinct = np.unique(np.concatenate([target, nontarget]))
    thresholds = np.concatenate([[-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]])
    t_sorted, n_sorted = np.sort(target), np.sort(nontarget)
    p_miss = np.searchsorted(t_sorted, thresholds, side="left") / len(target)
    p_fa = 1.0 - np.searchsorted(n_sorted, thresholds, side="right") / len(nontarget)
    return thresholds, p_miss, p_fa, distinct


def _finite_threshold(thr: float, distinct: np.ndarray) -> float:
    if thr == -np.inf:
        return float(distinct[0])
    if thr == np.inf:
        return float(distinct[-1])
    return float(thr)


def eer_from_points(thresholds, p_miss, p_fa, distinct) -> tuple[float, float]:
    """Interpolate the crossing of the miss and false-accept curves.

    The crossing lies on the segment between the last point with
    ``p_fa > p_miss`` and the next one. Infinite thresholds are replaced by
    the lowest/highest score when interpolating the threshold.
    """
    diff = p_fa - p_miss
    i = int(np.argmax(diff <= 0))
    if i == 0 or diff[i] == 0:
        return float(p_miss[i]), _finite_threshold(thresholds[i], distinct)
    d0, d1 = diff[i - 1], diff[i]
    alpha = d0 / (d0 - d1)
    eer = p_miss[i - 1] + alpha * (p_miss[i] - p_miss[i - 1])
    lo = _finite_threshold(thresholds[i - 1], distinct)
    hi = _finite_threshold(thresholds[i], distinct)
    return float(eer), float(lo + alpha * (hi - lo))


def compute_eer(trials: TrialSet) -> dict:
    target, nontarget = _checked(trials)
    eer, thr = eer_from_points(*operating_points(target, nontarget))
    return {"eer": eer, "threshold": thr}


def compute_mindcf(trials: TrialSet, p_target: float = 0.01, c_miss: float = 1.0, c_fa: float = 1.0) -> dict:
    """Minimum detection cost normalised by the best accept-all/reject-all cost."""
    target, nontarget = _checked(trials)
    thresholds, p_miss, p_fa, _ = operating_points(target, nontarget)
    cost = p_target * c_miss * p_miss + (1.0 - p_target) * c_fa * p_fa
    i = int(np.argmin(cost))
    norm = min(p_target * c_miss, (1.0 - p_target) * c_fa)
    return {"mindcf": float(cost[i] / norm), "threshold": float(thresholds[i])}
