"""Pool-based active-learning loop over a synthetic corpus.

One run: seed a small labeled set from the training pool, then alternate
train-from-scratch, evaluate on the held-out test split, score the
remaining pool, and query a batch for labeling, until the batch schedule is
exhausted. A run with len(schedule) batches yields len(schedule)+1 history
rows; row i describes the model trained on the first i batches (plus seed)
and, except for the last row, the batch queried right after that
evaluation. Everything except wall-clock timings is a pure function of
(dataset, strategy, diversifier, schedule, train config, run seed).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .dataset import Dataset, SoundFile, round_half_up
from .metrics import (
    MetricsRow,
    event_averaged_iou,
    match_events,
    recall_f1,
    total_iou,
)
from .model import (
    ClassifierParams,
    TrainConfig,
    merge_events,
    predict_file,
    smooth_labels,
    train,
)
from .strategies import (
    DiversifierKind,
    FileScore,
    StrategyKind,
    aggregate,
    farthest_traversal,
    file_embedding,
    random_from_prebatch,
    rank_and_select,
    strategy_from_label,
)

RUN_FORMAT_VERSION = "alsed-run/1"


class RunFormatError(ValueError):
    """Raised when a run-history file cannot be parsed."""


@dataclass(frozen=True)
class BatchSchedule:
    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.sizes:
            raise ValueError("schedule needs at least one batch")
        if any(s < 1 for s in self.sizes):
            raise ValueError("batch sizes must be >= 1")

    @property
    def total(self) -> int:
        return sum(self.sizes)


def _fraction_ladder() -> Iterator[float]:
    yield from (0.005, 0.005, 0.01, 0.01)
    f = 0.02
    while True:
        yield f
        f *= 2


def default_schedule(pool_size: int, budget_fraction: float = 0.25) -> BatchSchedule:
    """Escalating batch sizes: two 0.5% batches, two 1%, then doubling
    fractions, truncated so the total equals the pool budget exactly.

    Every size is max(1, round-half-up(fraction * pool)). If the budget is
    smaller than even the first rung, the schedule is a single batch of
    max(1, floor(0.005 * pool)).
    """
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    if not (0 < budget_fraction <= 1):
        raise ValueError("budget_fraction must lie in (0, 1]")
    budget = round_half_up(budget_fraction * pool_size)
    sizes: list[int] = []
    cum = 0
    for frac in _fraction_ladder():
        size = max(1, round_half_up(frac * pool_size))
        if not sizes and budget < size:
            return BatchSchedule((max(1, int(0.005 * pool_size)),))
        if cum + size > budget:
            if budget - cum > 0:
                sizes.append(budget - cum)
            break
        sizes.append(size)
        cum += size
        if cum == budget:
            break
    return BatchSchedule(tuple(sizes))


def init_seed_set(
    pool_ids: Sequence[int], fraction: float, rng: np.random.Generator
) -> tuple[list[int], list[int]]:
    """Uniform seed sample of max(1, round-half-up(fraction * pool)) ids.

    Returns (labeled, unlabeled), both sorted ascending.
    """
    if not (0 < fraction <= 1):
        raise ValueError("fraction must lie in (0, 1]")
    if not pool_ids:
        raise ValueError("empty pool")
    n = max(1, round_half_up(fraction * len(pool_ids)))
    chosen = rng.choice(np.asarray(pool_ids), size=n, replace=False)
    labeled = sorted(int(i) for i in chosen)
    labeled_set = set(labeled)
    return labeled, [i for i in sorted(pool_ids) if i not in labeled_set]


@dataclass
class ALState:
    labeled_ids: list[int]
    unlabeled_ids: list[int]
    iteration: int
    params: ClassifierParams | None = None


@dataclass(frozen=True)
class RunRow:
    iteration: int
    n_labeled: int
    labeled_fraction: float
    metrics: MetricsRow
    event_file_fraction_of_labeled: float
    queried_file_ids: tuple[int, ...]
    wall_ms: float


@dataclass
class RunHistory:
    strategy: StrategyKind
    diversifier: DiversifierKind
    schedule: BatchSchedule
    train: TrainConfig
    run_seed: int
    seed_fraction: float
    pool_size: int
    rows: list[RunRow] = field(default_factory=list)
    dataset_hash: str = ""
    repeat: int = 0


def evaluate(
    params: ClassifierParams,
    test_files: Sequence[SoundFile],
    n_event_classes: int,
    smoothing_kernel: int = 3,
    iou_variant: str = "segment",
) -> MetricsRow:
    """Full prediction pipeline plus metrics over a file collection.

    Per file: probabilities -> argmax labels (ties to the lowest class id)
    -> plurality smoothing -> merged events. Segment IoU is computed over
    the concatenation of all files in ascending file_id order; the event
    matching is per file. iou_variant="event" swaps the headline total_iou
    for the event-averaged variant (per_class_iou stays segment-based).
    """
    if iou_variant not in ("segment", "event"):
        raise ValueError(f"unknown iou_variant {iou_variant!r}")
    if not test_files:
        raise ValueError("no files to evaluate")
    ordered = sorted(test_files, key=lambda f: f.file_id)
    pred_parts: list[np.ndarray] = []
    true_parts: list[np.ndarray] = []
    n_true = n_pred = n_matched = 0
    event_iou_weighted = 0.0
    for f in ordered:
        probs = predict_file(params, f)
        smoothed = smooth_labels(probs.argmax(axis=1), smoothing_kernel)
        pred_events = merge_events(smoothed)
        matches = match_events(pred_events, f.events)
        n_true += len(f.events)
        n_pred += len(pred_events)
        n_matched += len(matches)
        if iou_variant == "event" and f.events:
            event_iou_weighted += event_averaged_iou(pred_events, f.events) * len(
                f.events
            )
        pred_parts.append(smoothed)
        true_parts.append(f.labels)
    headline, per_class = total_iou(
        np.concatenate(pred_parts), np.concatenate(true_parts), n_event_classes
    )
    if iou_variant == "event":
        headline = event_iou_weighted / n_true if n_true > 0 else 0.0
    recall, f1 = recall_f1(n_matched, n_true, n_pred)
    return MetricsRow(headline, recall, f1, per_class, n_true, n_pred, n_matched)


def _select_batch(
    scores: list[FileScore],
    batch_size: int,
    diversifier: DiversifierKind,
    reps: dict[int, np.ndarray],
    labeled_reps: list[np.ndarray],
    rng: np.random.Generator,
) -> list[int]:
    if diversifier.variant == "none":
        return rank_and_select(scores, batch_size)
    pre_n = min(
        len(scores),
        max(batch_size, round_half_up(diversifier.prebatch_factor * batch_size)),
    )
    by_id = {s.file_id: s.score for s in scores}
    prebatch = [FileScore(i, by_id[i]) for i in rank_and_select(scores, pre_n)]
    if diversifier.variant == "farthest_traversal":
        return farthest_traversal(prebatch, reps, labeled_reps, batch_size)
    return random_from_prebatch(prebatch, batch_size, rng)


def run_al(
    dataset: Dataset,
    strategy: StrategyKind,
    diversifier: DiversifierKind,
    schedule: BatchSchedule,
    train_config: TrainConfig,
    run_seed: int,
    seed_fraction: float = 0.005,
) -> RunHistory:
    """Execute one active-learning run; see the module docstring.

    The run seed controls the seed-set draw, the random strategy stream and
    the random diversifier stream (three independent substreams); the
    training seed comes from train_config alone and is reused verbatim at
    every retraining, so a schedule that consumes the whole pool ends at
    exactly the model full-supervision training would produce.
    """
    train_config.validate()
    pool = sorted(dataset.train, key=lambda f: f.file_id)
    test = dataset.test
    by_id = {f.file_id: f for f in pool}
    pool_ids = [f.file_id for f in pool]

    seed_ss, strategy_ss, diversifier_ss = np.random.SeedSequence(run_seed).spawn(3)
    strategy_rng = np.random.default_rng(strategy_ss)
    diversifier_rng = np.random.default_rng(diversifier_ss)
    labeled, unlabeled = init_seed_set(
        pool_ids, seed_fraction, np.random.default_rng(seed_ss)
    )
    if len(labeled) + schedule.total > len(pool_ids):
        raise ValueError(
            f"schedule total {schedule.total} plus seed {len(labeled)} "
            f"exceeds pool {len(pool_ids)}"
        )

    n_classes = dataset.spec.n_event_classes + 1
    state = ALState(labeled, unlabeled, 0)
    reps: dict[int, np.ndarray] = {}
    history = RunHistory(
        strategy=strategy,
        diversifier=diversifier,
        schedule=schedule,
        train=train_config,
        run_seed=run_seed,
        seed_fraction=seed_fraction,
        pool_size=len(pool_ids),
    )
    for it in range(len(schedule.sizes) + 1):
        t0 = time.perf_counter()
        state.iteration = it
        train_files = [by_id[i] for i in state.labeled_ids]
        state.params = train(train_files, train_config, n_classes)
        metrics = evaluate(state.params, test, dataset.spec.n_event_classes)
        n_labeled = len(state.labeled_ids)
        event_frac = sum(f.has_events for f in train_files) / n_labeled

        queried: tuple[int, ...] = ()
        if it < len(schedule.sizes):
            scores = [
                FileScore(
                    fid,
                    aggregate(
                        predict_file(state.params, by_id[fid]), strategy, strategy_rng
                    ),
                )
                for fid in state.unlabeled_ids
            ]
            if diversifier.variant == "farthest_traversal":
                for fid in pool_ids:
                    if fid not in reps:
                        reps[fid] = file_embedding(by_id[fid])
                labeled_reps = [reps[i] for i in state.labeled_ids]
            else:
                labeled_reps = []
            queried = tuple(
                _select_batch(
                    scores,
                    schedule.sizes[it],
                    diversifier,
                    reps,
                    labeled_reps,
                    diversifier_rng,
                )
            )
            queried_set = set(queried)
            state.labeled_ids = sorted(state.labeled_ids + list(queried))
            state.unlabeled_ids = [
                i for i in state.unlabeled_ids if i not in queried_set
            ]

        history.rows.append(
            RunRow(
                iteration=it,
                n_labeled=n_labeled,
                labeled_fraction=n_labeled / len(pool_ids),
                metrics=metrics,
                event_file_fraction_of_labeled=event_frac,
                queried_file_ids=queried,
                wall_ms=(time.perf_counter() - t0) * 1000.0,
            )
        )
    return history


# --- run-history serialization ---------------------------------------------

_HEADER_KEYS = (
    "dataset_hash",
    "strategy",
    "event_prob_threshold",
    "diversifier",
    "prebatch_factor",
    "run_seed",
    "repeat",
    "seed_fraction",
    "pool_size",
    "schedule",
    "train.learning_rate",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_epsilon",
    "train.epochs",
    "train.minibatch_size",
    "train.init_scale",
    "train.rng_seed",
    "rows",
)

_ROW_KEYS = (
    "iteration",
    "n_labeled",
    "labeled_fraction",
    "total_iou",
    "recall",
    "f1",
    "per_class_iou",
    "n_true_events",
    "n_pred_events",
    "n_matched",
    "event_file_fraction_of_labeled",
    "wall_ms",
    "queried",
)


def save_run(history: RunHistory, path: str) -> None:
    """Write a run history in the alsed-run/1 structured-text format."""
    h = history
    values = {
        "dataset_hash": h.dataset_hash,
        "strategy": h.strategy.label,
        "event_prob_threshold": (
            "" if h.strategy.event_prob_threshold is None
            else repr(h.strategy.event_prob_threshold)
        ),
        "diversifier": h.diversifier.label,
        "prebatch_factor": repr(h.diversifier.prebatch_factor),
        "run_seed": str(h.run_seed),
        "repeat": str(h.repeat),
        "seed_fraction": repr(h.seed_fraction),
        "pool_size": str(h.pool_size),
        "schedule": ",".join(str(s) for s in h.schedule.sizes),
        "train.learning_rate": repr(h.train.learning_rate),
        "train.adam_beta1": repr(h.train.adam_beta1),
        "train.adam_beta2": repr(h.train.adam_beta2),
        "train.adam_epsilon": repr(h.train.adam_epsilon),
        "train.epochs": str(h.train.epochs),
        "train.minibatch_size": str(h.train.minibatch_size),
        "train.init_scale": repr(h.train.init_scale),
        "train.rng_seed": str(h.train.rng_seed),
        "rows": str(len(h.rows)),
    }
    lines = [RUN_FORMAT_VERSION]
    lines.extend(f"{k}={values[k]}" for k in _HEADER_KEYS)
    for r in h.rows:
        m = r.metrics
        fields = {
            "iteration": str(r.iteration),
            "n_labeled": str(r.n_labeled),
            "labeled_fraction": repr(r.labeled_fraction),
            "total_iou": repr(m.total_iou),
            "recall": repr(m.recall),
            "f1": repr(m.f1),
            "per_class_iou": "|".join(repr(v) for v in m.per_class_iou),
            "n_true_events": str(m.n_true_events),
            "n_pred_events": str(m.n_pred_events),
            "n_matched": str(m.n_matched),
            "event_file_fraction_of_labeled": repr(
                r.event_file_fraction_of_labeled
            ),
            "wall_ms": f"{r.wall_ms:.3f}",
            "queried": ",".join(str(i) for i in r.queried_file_ids),
        }
        lines.append("row " + " ".join(f"{k}={fields[k]}" for k in _ROW_KEYS))
    lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_kv(token: str, lineno: int) -> tuple[str, str]:
    if "=" not in token:
        raise RunFormatError(f"line {lineno}: expected key=value, got {token!r}")
    k, _, v = token.partition("=")
    return k, v


def load_run(path: str) -> RunHistory:
    """Parse an alsed-run/1 file; raises RunFormatError on any defect."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != RUN_FORMAT_VERSION:
        found = lines[0] if lines else "<empty>"
        raise RunFormatError(f"unsupported run format {found!r}")
    header: dict[str, str] = {}
    pos = 1
    for key in _HEADER_KEYS:
        if pos >= len(lines):
            raise RunFormatError(f"truncated header, expected {key}")
        k, v = _parse_kv(lines[pos], pos + 1)
        if k != key:
            raise RunFormatError(f"line {pos + 1}: expected {key}, got {k}")
        header[k] = v
        pos += 1
    try:
        base = strategy_from_label(header["strategy"])
        if header["event_prob_threshold"]:
            base = replace(
                base, event_prob_threshold=float(header["event_prob_threshold"])
            )
        strategy = base
        diversifier = DiversifierKind(
            header["diversifier"], float(header["prebatch_factor"])
        )
        schedule = BatchSchedule(
            tuple(int(s) for s in header["schedule"].split(","))
        )
        train_config = TrainConfig(
            learning_rate=float(header["train.learning_rate"]),
            adam_beta1=float(header["train.adam_beta1"]),
            adam_beta2=float(header["train.adam_beta2"]),
            adam_epsilon=float(header["train.adam_epsilon"]),
            epochs=int(header["train.epochs"]),
            minibatch_size=int(header["train.minibatch_size"]),
            init_scale=float(header["train.init_scale"]),
            rng_seed=int(header["train.rng_seed"]),
        )
        n_rows = int(header["rows"])
    except (ValueError, KeyError) as exc:
        if isinstance(exc, RunFormatError):
            raise
        raise RunFormatError(f"bad header value: {exc}") from exc
    history = RunHistory(
        strategy=strategy,
        diversifier=diversifier,
        schedule=schedule,
        train=train_config,
        run_seed=int(header["run_seed"]),
        seed_fraction=float(header["seed_fraction"]),
        pool_size=int(header["pool_size"]),
        dataset_hash=header["dataset_hash"],
        repeat=int(header["repeat"]),
    )
    for i in range(n_rows):
        lineno = pos + i + 1
        if pos + i >= len(lines):
            raise RunFormatError(f"truncated: expected {n_rows} rows, got {i}")
        line = lines[pos + i]
        if not line.startswith("row "):
            raise RunFormatError(f"line {lineno}: expected a row line")
        tokens = dict(_parse_kv(t, lineno) for t in line[4:].split(" "))
        if set(tokens) != set(_ROW_KEYS):
            raise RunFormatError(f"line {lineno}: row fields mismatch")
        try:
            per_class = tuple(
                float(v) for v in tokens["per_class_iou"].split("|") if v
            )
            metrics = MetricsRow(
                total_iou=float(tokens["total_iou"]),
                recall=float(tokens["recall"]),
                f1=float(tokens["f1"]),
                per_class_iou=per_class,
                n_true_events=int(tokens["n_true_events"]),
                n_pred_events=int(tokens["n_pred_events"]),
                n_matched=int(tokens["n_matched"]),
            )
            queried = tuple(
                int(v) for v in tokens["queried"].split(",") if v
            )
            history.rows.append(
                RunRow(
                    iteration=int(tokens["iteration"]),
                    n_labeled=int(tokens["n_labeled"]),
                    labeled_fraction=float(tokens["labeled_fraction"]),
                    metrics=metrics,
                    event_file_fraction_of_labeled=float(
                        tokens["event_file_fraction_of_labeled"]
                    ),
                    queried_file_ids=queried,
                    wall_ms=float(tokens["wall_ms"]),
                )
            )
        except ValueError as exc:
            raise RunFormatError(f"line {lineno}: bad row value: {exc}") from exc
    if pos + n_rows >= len(lines) or lines[pos + n_rows] != "end":
        raise RunFormatError("missing end marker")
    if any(line.strip() for line in lines[pos + n_rows + 1 :]):
        raise RunFormatError("unexpected content after end marker")
    return history
