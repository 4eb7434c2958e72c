"""Uncertainty scoring and batch selection for the labeling loop.

A strategy turns per-segment class probabilities for one file into a single
file score; files are then ranked (higher = queried earlier) with ascending
file_id breaking ties so runs are reproducible. An optional diversifier
re-filters a top-uncertainty prebatch, either by farthest-first traversal in
cosine distance over mean-embedding file representations or by uniform
sampling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import SoundFile

logger = logging.getLogger(__name__)

_STRATEGY_VARIANTS = (
    "random",
    "mean_entropy",
    "median_entropy",
    "mean_event_entropy",
    "top_k",
)
_DIVERSIFIER_VARIANTS = ("none", "farthest_traversal", "random_from_prebatch")

# Sentinel score for files whose predictions contain no event segments at
# all; ranks below every reachable entropy aggregate (entropies are >= 0).
NO_EVENT_SCORE = -1.0


@dataclass(frozen=True)
class StrategyKind:
    variant: str
    k: int | None = None
    # Alternate event-segment rule for mean_event_entropy: a segment counts
    # as an event when its best event-class probability exceeds this, rather
    # than when argmax is nonzero. None keeps the argmax rule.
    event_prob_threshold: float | None = None

    def __post_init__(self) -> None:
        if self.variant not in _STRATEGY_VARIANTS:
            raise ValueError(f"unknown strategy variant {self.variant!r}")
        if self.variant == "top_k":
            if self.k is None or self.k < 1:
                raise ValueError("top_k needs k >= 1")
        elif self.k is not None:
            raise ValueError(f"k only applies to top_k, not {self.variant}")
        if self.event_prob_threshold is not None:
            if self.variant != "mean_event_entropy":
                raise ValueError(
                    "event_prob_threshold only applies to mean_event_entropy"
                )
            if not (0 < self.event_prob_threshold < 1):
                raise ValueError("event_prob_threshold must lie in (0, 1)")

    @property
    def label(self) -> str:
        if self.variant == "top_k":
            return f"top_k_{self.k}"
        return self.variant


def strategy_from_label(label: str) -> StrategyKind:
    if label.startswith("top_k_"):
        return StrategyKind("top_k", k=int(label[len("top_k_") :]))
    return StrategyKind(label)


@dataclass(frozen=True)
class DiversifierKind:
    variant: str = "none"
    prebatch_factor: float = 3.0

    def __post_init__(self) -> None:
        if self.variant not in _DIVERSIFIER_VARIANTS:
            raise ValueError(f"unknown diversifier variant {self.variant!r}")
        if self.prebatch_factor < 1:
            raise ValueError("prebatch_factor must be >= 1")

    @property
    def label(self) -> str:
        return self.variant


@dataclass(frozen=True)
class FileScore:
    file_id: int
    score: float


def shannon_entropy(probs: np.ndarray) -> np.ndarray | float:
    """Entropy in bits of a probability vector, or row-wise for a matrix.

    Rows must sum to 1 within 1e-6; zero entries contribute zero.
    """
    p = np.asarray(probs, dtype=np.float64)
    if (p < -1e-9).any():
        raise ValueError("negative probability")
    sums = p.sum(axis=-1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ValueError("probabilities do not sum to 1")
    safe = np.where(p > 0, p, 1.0)
    ent = -(safe * np.log2(safe)).sum(axis=-1)
    if ent.ndim == 0:
        return float(ent)
    return ent


def segment_entropies(file_probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(file_probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("expected a (T, n_classes) probability matrix")
    return np.atleast_1d(shannon_entropy(probs))


def aggregate(
    file_probs: np.ndarray,
    strategy: StrategyKind,
    rng: np.random.Generator | None = None,
) -> float:
    """Collapse one file's (T, n_classes) probabilities to a query score."""
    if strategy.variant == "random":
        if rng is None:
            raise ValueError("random strategy needs an rng")
        return float(rng.random())
    ent = segment_entropies(file_probs)
    if strategy.variant == "mean_entropy":
        return float(np.mean(ent))
    if strategy.variant == "median_entropy":
        # even T averages the two middle values
        return float(np.median(ent))
    if strategy.variant == "mean_event_entropy":
        probs = np.asarray(file_probs, dtype=np.float64)
        if strategy.event_prob_threshold is None:
            mask = probs.argmax(axis=1) != 0
        else:
            mask = probs[:, 1:].max(axis=1) > strategy.event_prob_threshold
        if not mask.any():
            return NO_EVENT_SCORE
        return float(np.mean(ent[mask]))
    # top_k; k >= T falls back to the mean variant's exact code path so the
    # two scores are bit-identical
    if strategy.k >= ent.shape[0]:
        return float(np.mean(ent))
    top = np.partition(ent, ent.shape[0] - strategy.k)[ent.shape[0] - strategy.k :]
    return float(np.mean(top))


def rank_and_select(scores: Sequence[FileScore], batch_size: int) -> list[int]:
    """File ids of the batch_size highest scores, ties by ascending id."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > len(scores):
        raise ValueError(f"batch_size {batch_size} exceeds pool {len(scores)}")
    ranked = sorted(scores, key=lambda s: (-s.score, s.file_id))
    return [s.file_id for s in ranked[:batch_size]]


def file_embedding(file: SoundFile) -> np.ndarray:
    """Mean of the file's segment embeddings (its diversity representation)."""
    return file.embeddings.mean(axis=0)


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cosine similarity; involving a zero vector gives 1 (logged)."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        logger.warning("cosine_distance against a zero vector, returning 1.0")
        return 1.0
    return 1.0 - float(np.dot(u, v)) / (nu * nv)


def farthest_traversal(
    prebatch: Sequence[FileScore],
    reps: Mapping[int, np.ndarray],
    labeled_reps: Sequence[np.ndarray],
    batch_size: int,
) -> list[int]:
    """Farthest-first traversal of the prebatch in cosine distance.

    Each pick maximizes the minimum distance to the labeled representations
    plus everything already picked; ties go to the lower file_id. With no
    labeled representations the first pick is the head of the prebatch (its
    highest-uncertainty file). Returns ids in traversal order.
    """
    if batch_size > len(prebatch):
        raise ValueError("batch_size exceeds prebatch")
    ids = [s.file_id for s in prebatch]
    min_dist: dict[int, float] = {}
    for fid in ids:
        dists = [cosine_distance(reps[fid], lr) for lr in labeled_reps]
        min_dist[fid] = min(dists) if dists else np.inf
    selected: list[int] = []
    remaining = list(ids)
    for round_no in range(batch_size):
        if round_no == 0 and not labeled_reps:
            pick = remaining[0]
        else:
            best = max(min_dist[f] for f in remaining)
            pick = min(f for f in remaining if min_dist[f] == best)
        selected.append(pick)
        remaining.remove(pick)
        for fid in remaining:
            d = cosine_distance(reps[fid], reps[pick])
            if d < min_dist[fid]:
                min_dist[fid] = d
    return selected


def random_from_prebatch(
    prebatch: Sequence[FileScore], batch_size: int, rng: np.random.Generator
) -> list[int]:
    """Uniform sample without replacement from the prebatch, in draw order."""
    if batch_size > len(prebatch):
        raise ValueError("batch_size exceeds prebatch")
    ids = np.array([s.file_id for s in prebatch])
    return [int(i) for i in rng.choice(ids, size=batch_size, replace=False)]
