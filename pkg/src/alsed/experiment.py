"""Experiment harness: configs, run execution, CSV results, reports.

A JSON experiment config names a generated dataset file, the strategy and
diversifier combinations to compare, the seeds, and training settings. The
sweep runs every (strategy, seed) cell, persists each run to a structured
text file named by its run id (so interrupted sweeps resume without
recomputation), and emits one combined CSV. The report command aggregates
run files into per-(strategy, budget) means with Student-t 95% confidence
intervals.

Paths inside a config resolve relative to the config file's directory.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, replace
from typing import Any, Sequence

import numpy as np
from scipy import stats

from .dataset import (
    Dataset,
    DatasetSpec,
    dataset_text_hash,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .loop import (
    BatchSchedule,
    RunHistory,
    default_schedule,
    load_run,
    run_al,
    save_run,
)
from .model import TrainConfig
from .strategies import DiversifierKind, StrategyKind, strategy_from_label

CSV_COLUMNS = (
    "run_id",
    "dataset_hash",
    "strategy",
    "k",
    "diversifier",
    "seed",
    "repeat",
    "iteration",
    "n_labeled",
    "labeled_fraction",
    "total_iou",
    "recall",
    "f1",
    "event_file_fraction_of_labeled",
    "wall_ms",
)

REPORT_METRICS = ("total_iou", "recall", "f1")


class ConfigError(ValueError):
    """Raised for malformed specs, configs, or command arguments."""


def _check_keys(
    obj: dict, allowed: Sequence[str], required: Sequence[str], where: str
) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    missing = sorted(set(required) - set(obj))
    if missing:
        raise ConfigError(f"{where}: missing required keys {missing}")


def _load_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


_SPEC_REQUIRED = ("n_files", "event_ratio", "snr_db", "rng_seed")
_SPEC_PAIR_FIELDS = ("event_len_range", "events_per_file_range")


def spec_from_json(obj: dict) -> DatasetSpec:
    """Build a DatasetSpec from parsed JSON with strict key checking."""
    allowed = [f.name for f in dataclasses.fields(DatasetSpec)]
    _check_keys(obj, allowed, _SPEC_REQUIRED, "dataset spec")
    kwargs = dict(obj)
    for key in _SPEC_PAIR_FIELDS:
        if key in kwargs:
            pair = kwargs[key]
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ConfigError(f"dataset spec: {key} must be a 2-element list")
            kwargs[key] = (int(pair[0]), int(pair[1]))
    try:
        spec = DatasetSpec(**kwargs)
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"dataset spec: {exc}") from exc
    return spec


_STRATEGY_ENTRY_KEYS = (
    "strategy",
    "k",
    "event_prob_threshold",
    "diversifier",
    "prebatch_factor",
)


def _parse_strategy_entry(entry: Any, where: str) -> tuple[StrategyKind, DiversifierKind]:
    try:
        if isinstance(entry, str):
            return strategy_from_label(entry), DiversifierKind()
        _check_keys(entry, _STRATEGY_ENTRY_KEYS, ("strategy",), where)
        variant = str(entry["strategy"])
        k = int(entry["k"]) if "k" in entry else None
        if variant.startswith("top_k_"):
            label_k = int(variant[len("top_k_") :])
            if k is not None and k != label_k:
                raise ConfigError(f"{where}: k conflicts with strategy label")
            variant, k = "top_k", label_k
        threshold = (
            float(entry["event_prob_threshold"])
            if "event_prob_threshold" in entry
            else None
        )
        strategy = StrategyKind(variant, k=k, event_prob_threshold=threshold)
        div_kwargs = {}
        if "diversifier" in entry:
            div_kwargs["variant"] = str(entry["diversifier"])
        if "prebatch_factor" in entry:
            div_kwargs["prebatch_factor"] = float(entry["prebatch_factor"])
        return strategy, DiversifierKind(**div_kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_CONFIG_KEYS = (
    "dataset",
    "strategies",
    "seeds",
    "schedule",
    "budget_fraction",
    "seed_fraction",
    "baseline_repeats",
    "train",
    "output_dir",
)


@dataclass(frozen=True)
class ExperimentConfig:
    # exactly one of dataset_path / dataset_spec is set
    dataset_path: str | None
    dataset_spec: DatasetSpec | None
    entries: tuple[tuple[StrategyKind, DiversifierKind], ...]
    seeds: tuple[int, ...]
    schedule: tuple[int, ...] | None  # None means the default ladder
    budget_fraction: float
    seed_fraction: float
    baseline_repeats: int
    train: TrainConfig
    output_dir: str

    def resolved_schedule(self, pool_size: int) -> BatchSchedule:
        if self.schedule is None:
            return default_schedule(pool_size, self.budget_fraction)
        return BatchSchedule(self.schedule)


def load_experiment_config(path: str) -> ExperimentConfig:
    obj = _load_json(path)
    _check_keys(
        obj, _CONFIG_KEYS, ("dataset", "strategies", "seeds", "output_dir"), path
    )
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    try:
        dataset_obj = obj["dataset"]
        if isinstance(dataset_obj, str):
            dataset_path: str | None = resolve(dataset_obj)
            dataset_spec = None
        elif isinstance(dataset_obj, dict):
            dataset_path = None
            dataset_spec = spec_from_json(dataset_obj)
        else:
            raise ConfigError("dataset must be a file path or a spec object")
        entries = tuple(
            _parse_strategy_entry(e, f"strategies[{i}]")
            for i, e in enumerate(obj["strategies"])
        )
        if not entries:
            raise ConfigError("strategies must be non-empty")
        seeds = tuple(int(s) for s in obj["seeds"])
        if not seeds:
            raise ConfigError("seeds must be non-empty")
        if any(s < 0 for s in seeds):
            raise ConfigError("seeds must be non-negative")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds must be distinct")
        schedule_obj = obj.get("schedule", "default")
        if schedule_obj == "default":
            schedule = None
        else:
            schedule = tuple(int(s) for s in schedule_obj)
        budget_fraction = float(obj.get("budget_fraction", 0.25))
        seed_fraction = float(obj.get("seed_fraction", 0.005))
        baseline_repeats = int(obj.get("baseline_repeats", 10))
        if baseline_repeats < 1:
            raise ConfigError("baseline_repeats must be >= 1")
        train_obj = obj.get("train", {})
        allowed = [f.name for f in dataclasses.fields(TrainConfig)]
        _check_keys(train_obj, allowed, (), "train")
        train = TrainConfig(**train_obj)
        train.validate()
        if train.rng_seed < 0:
            raise ConfigError("train.rng_seed must be non-negative")
        config = ExperimentConfig(
            dataset_path=dataset_path,
            dataset_spec=dataset_spec,
            entries=entries,
            seeds=seeds,
            schedule=schedule,
            budget_fraction=budget_fraction,
            seed_fraction=seed_fraction,
            baseline_repeats=baseline_repeats,
            train=train,
            output_dir=resolve(str(obj["output_dir"])),
        )
        if schedule is not None:
            BatchSchedule(schedule)  # validate sizes
        if not (0 < budget_fraction <= 1):
            raise ConfigError("budget_fraction must lie in (0, 1]")
        if not (0 < seed_fraction <= 1):
            raise ConfigError("seed_fraction must lie in (0, 1]")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config


# --- run execution ----------------------------------------------------------


def file_hash(path: str) -> str:
    """First 16 hex digits of the sha256 of the file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def run_id(
    dataset_hash: str,
    strategy: StrategyKind,
    diversifier: DiversifierKind,
    seed: int,
    repeat: int,
) -> str:
    return f"{dataset_hash}_{strategy.label}_{diversifier.label}_s{seed}_r{repeat}"


def loop_seed(seed: int, repeat: int) -> int:
    """Loop seed for a repeated baseline run; repeat 0 is the seed itself so
    repeat-0 runs pair with other strategies at the same seed."""
    if repeat == 0:
        return seed
    return int(np.random.SeedSequence([seed, repeat]).generate_state(1, np.uint64)[0])


def _train_config_for(base: TrainConfig, seed: int, repeat: int) -> TrainConfig:
    """Mix the run identity into the training seed: every run retrains from
    its own initialization, but identically-seeded runs of different
    strategies stay paired."""
    mixed = np.random.SeedSequence(
        [base.rng_seed, loop_seed(seed, repeat)]
    ).generate_state(1, np.uint64)[0]
    return replace(base, rng_seed=int(mixed))


def execute_run(
    dataset: Dataset,
    dataset_hash: str,
    config: ExperimentConfig,
    strategy: StrategyKind,
    diversifier: DiversifierKind,
    seed: int,
    repeat: int,
) -> RunHistory:
    pool_size = len(dataset.train)
    history = run_al(
        dataset,
        strategy,
        diversifier,
        config.resolved_schedule(pool_size),
        _train_config_for(config.train, seed, repeat),
        loop_seed(seed, repeat),
        seed_fraction=config.seed_fraction,
    )
    # run files record the experiment seed; repeats derive their loop seed
    history.run_seed = seed
    history.repeat = repeat
    history.dataset_hash = dataset_hash
    return history


def csv_rows(history: RunHistory) -> list[dict[str, str]]:
    h = history
    rid = run_id(h.dataset_hash, h.strategy, h.diversifier, h.run_seed, h.repeat)
    rows = []
    for r in h.rows:
        rows.append(
            {
                "run_id": rid,
                "dataset_hash": h.dataset_hash,
                "strategy": h.strategy.label,
                "k": "" if h.strategy.k is None else str(h.strategy.k),
                "diversifier": h.diversifier.label,
                "seed": str(h.run_seed),
                "repeat": str(h.repeat),
                "iteration": str(r.iteration),
                "n_labeled": str(r.n_labeled),
                "labeled_fraction": repr(r.labeled_fraction),
                "total_iou": repr(r.metrics.total_iou),
                "recall": repr(r.metrics.recall),
                "f1": repr(r.metrics.f1),
                "event_file_fraction_of_labeled": repr(
                    r.event_file_fraction_of_labeled
                ),
                "wall_ms": f"{r.wall_ms:.3f}",
            }
        )
    return rows


def format_csv(rows: list[dict[str, str]]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(",".join(row[c] for c in CSV_COLUMNS) for row in rows)
    return "\n".join(lines) + "\n"


def _sorted_rows(histories: list[RunHistory]) -> list[dict[str, str]]:
    keyed = []
    for h in histories:
        for row in csv_rows(h):
            keyed.append(
                (
                    (
                        row["strategy"],
                        row["diversifier"],
                        int(row["seed"]),
                        int(row["repeat"]),
                        int(row["iteration"]),
                    ),
                    row,
                )
            )
    keyed.sort(key=lambda kr: kr[0])
    return [row for _, row in keyed]


# --- aggregation ------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    strategy: str
    diversifier: str
    labeled_fraction: float
    mean: float
    ci95_halfwidth: float
    n_runs: int


def mean_ci95(values: Sequence[float]) -> tuple[float, float]:
    """Sample mean and Student-t 95% halfwidth; a single value has width 0."""
    v = np.asarray(values, dtype=np.float64)
    mean = float(v.mean())
    if v.shape[0] < 2:
        return mean, 0.0
    t = float(stats.t.ppf(0.975, v.shape[0] - 1))
    return mean, t * float(v.std(ddof=1)) / math.sqrt(v.shape[0])


def summarize_runs(histories: Sequence[RunHistory], metric: str) -> list[SummaryRow]:
    if metric not in REPORT_METRICS:
        raise ConfigError(f"metric must be one of {REPORT_METRICS}")
    groups: dict[tuple[str, str, float], list[float]] = {}
    for h in histories:
        for r in h.rows:
            key = (h.strategy.label, h.diversifier.label, r.labeled_fraction)
            groups.setdefault(key, []).append(getattr(r.metrics, metric))
    out = []
    for (strategy, diversifier, fraction), values in sorted(groups.items()):
        mean, half = mean_ci95(values)
        out.append(
            SummaryRow(strategy, diversifier, fraction, mean, half, len(values))
        )
    return out


# --- commands ---------------------------------------------------------------


def cmd_generate(spec_path: str, out_path: str) -> int:
    """Generate a dataset from a spec JSON and save it; prints a summary."""
    spec = spec_from_json(_load_json(spec_path))
    dataset = generate_dataset(spec)
    save_dataset(dataset, out_path)
    train, test = dataset.train, dataset.test
    event_files = sum(f.has_events for f in train) + sum(
        f.has_events for f in test
    )
    by_class = {c: 0 for c in range(1, spec.n_event_classes + 1)}
    for f in train + test:
        for e in f.events:
            by_class[e.class_id] += 1
    print(f"wrote {out_path}")
    print(
        f"files={spec.n_files} train={len(train)} test={len(test)} "
        f"event_files={event_files}"
    )
    print(
        "events_by_class "
        + " ".join(f"class{c}={n}" for c, n in sorted(by_class.items()))
    )
    print(
        f"segments_per_file={spec.segments_per_file} "
        f"embedding_dim={spec.embedding_dim} "
        f"n_event_classes={spec.n_event_classes}"
    )
    return 0


def _load_config_and_dataset(
    config_path: str,
) -> tuple[ExperimentConfig, Dataset, str]:
    config = load_experiment_config(config_path)
    if config.dataset_path is not None:
        return config, load_dataset(config.dataset_path), file_hash(config.dataset_path)
    dataset = generate_dataset(config.dataset_spec)
    return config, dataset, dataset_text_hash(dataset)


def cmd_run(config_path: str, strategy_label: str, seed: int) -> int:
    """Execute one run (repeat 0) and print its CSV rows to stdout."""
    config, dataset, ds_hash = _load_config_and_dataset(config_path)
    matches = [e for e in config.entries if e[0].label == strategy_label]
    if not matches:
        known = sorted({e[0].label for e in config.entries})
        raise ConfigError(
            f"strategy {strategy_label!r} not in config (known: {known})"
        )
    strategy, diversifier = matches[0]
    history = execute_run(dataset, ds_hash, config, strategy, diversifier, seed, 0)
    os.makedirs(config.output_dir, exist_ok=True)
    rid = run_id(ds_hash, strategy, diversifier, seed, 0)
    save_run(history, os.path.join(config.output_dir, rid + ".run"))
    print(format_csv(csv_rows(history)), end="")
    return 0


def cmd_sweep(config_path: str) -> int:
    """Execute every (strategy, seed) cell, resuming from existing run files,
    then write the combined CSV. Random-strategy entries run
    baseline_repeats times per seed."""
    config, dataset, ds_hash = _load_config_and_dataset(config_path)
    os.makedirs(config.output_dir, exist_ok=True)
    histories: list[RunHistory] = []
    failures: list[str] = []
    for strategy, diversifier in config.entries:
        repeats = (
            config.baseline_repeats if strategy.variant == "random" else 1
        )
        for seed in config.seeds:
            for repeat in range(repeats):
                rid = run_id(ds_hash, strategy, diversifier, seed, repeat)
                path = os.path.join(config.output_dir, rid + ".run")
                if os.path.exists(path):
                    try:
                        histories.append(load_run(path))
                        print(f"resume {rid}")
                        continue
                    except ValueError as exc:
                        print(f"re-running {rid}: stale run file ({exc})")
                try:
                    history = execute_run(
                        dataset, ds_hash, config, strategy, diversifier, seed, repeat
                    )
                    save_run(history, path)
                    histories.append(history)
                    print(f"done {rid}")
                except Exception as exc:  # noqa: BLE001 - isolate per-run failures
                    failures.append(f"{rid}: {exc}")
                    print(f"FAILED {rid}: {exc}")
    csv_path = os.path.join(config.output_dir, "results.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(format_csv(_sorted_rows(histories)))
    print(f"wrote {csv_path} ({len(histories)} runs)")
    if failures:
        print(f"{len(failures)} run(s) failed")
        return 1
    return 0


def cmd_report(
    in_dir: str, metric: str, out_path: str, plot_data_dir: str | None = None
) -> int:
    """Aggregate run files into a per-(strategy, budget) summary CSV."""
    if metric not in REPORT_METRICS:
        raise ConfigError(f"metric must be one of {REPORT_METRICS}")
    paths = sorted(
        os.path.join(in_dir, name)
        for name in os.listdir(in_dir)
        if name.endswith(".run")
    )
    if not paths:
        raise FileNotFoundError(f"no .run files in {in_dir}")
    histories = [load_run(p) for p in paths]
    hashes = {h.dataset_hash for h in histories}
    if len(hashes) > 1:
        raise RuntimeError(
            f"refusing to aggregate across datasets: hashes {sorted(hashes)}"
        )
    summary = summarize_runs(histories, metric)
    lines = [f"strategy,diversifier,labeled_fraction,mean_{metric},ci95_halfwidth,n_runs"]
    for s in summary:
        if s.n_runs == 1:
            print(
                f"note: single run for {s.strategy}/{s.diversifier} at "
                f"{s.labeled_fraction}; interval width is 0"
            )
        lines.append(
            f"{s.strategy},{s.diversifier},{s.labeled_fraction!r},"
            f"{s.mean!r},{s.ci95_halfwidth!r},{s.n_runs}"
        )
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {out_path}")
    if plot_data_dir is not None:
        os.makedirs(plot_data_dir, exist_ok=True)
        by_curve: dict[tuple[str, str], list[SummaryRow]] = {}
        for s in summary:
            by_curve.setdefault((s.strategy, s.diversifier), []).append(s)
        for (strategy, diversifier), rows in sorted(by_curve.items()):
            name = f"{strategy}_{diversifier}.dat"
            with open(
                os.path.join(plot_data_dir, name), "w", encoding="utf-8"
            ) as fh:
                fh.write(f"# labeled_fraction mean_{metric} ci95_halfwidth\n")
                for s in rows:
                    fh.write(
                        f"{s.labeled_fraction!r} {s.mean!r} {s.ci95_halfwidth!r}\n"
                    )
        print(f"wrote plot data to {plot_data_dir}")
    return 0
