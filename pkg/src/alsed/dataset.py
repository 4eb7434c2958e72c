"""Synthetic corpus generation for segment-based event detection experiments.

A corpus is a collection of fixed-length files. Each file is a sequence of
segments; every segment carries a class label (0 = background noise) and an
embedding vector. Event files contain a few disjoint labeled intervals, noise
files contain none. Embeddings are drawn from a class-conditional Gaussian
model: class means are fixed orthonormal directions, the noise class sits at
the origin, and a gain derived from an SNR parameter controls separability.

Embeddings are quantized to 9 significant decimal digits at generation time so
that the text serialization below round-trips bit-exactly.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = "alsed-ds/1"

# Retry bound for rejection-sampled event placement.
_PLACEMENT_RETRIES = 1000


class PlacementInfeasibleError(RuntimeError):
    """Raised when disjoint event intervals cannot be placed in a file."""


class DatasetFormatError(ValueError):
    """Raised when a dataset file is malformed or has the wrong version."""


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero toward +inf.

    Used for every count derived from a fraction (event-file counts, seed-set
    sizes, batch sizes) so results do not depend on banker's rounding.
    """
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class DatasetSpec:
    """Parameters of a synthetic corpus; a spec pins the corpus bit-exactly."""

    n_files: int
    event_ratio: float
    snr_db: float
    rng_seed: int
    segments_per_file: int = 175
    n_event_classes: int = 3
    embedding_dim: int = 32
    event_len_range: tuple[int, int] = (8, 40)
    events_per_file_range: tuple[int, int] = (1, 3)
    train_fraction: float = 0.8
    domain_shift: float = 0.0

    def validate(self) -> None:
        if self.n_files < 1:
            raise ValueError(f"n_files must be >= 1, got {self.n_files}")
        if not 0.0 <= self.event_ratio <= 1.0:
            raise ValueError(f"event_ratio must be in [0, 1], got {self.event_ratio}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )
        if self.segments_per_file < 1:
            raise ValueError("segments_per_file must be >= 1")
        if self.n_event_classes < 1:
            raise ValueError("n_event_classes must be >= 1")
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be >= 2")
        if self.embedding_dim < self.n_event_classes:
            raise ValueError(
                "embedding_dim must be >= n_event_classes for orthonormal class means"
            )
        lo, hi = self.event_len_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad event_len_range {self.event_len_range}")
        elo, ehi = self.events_per_file_range
        if not 1 <= elo <= ehi:
            raise ValueError(f"bad events_per_file_range {self.events_per_file_range}")
        # Max event count at min length, one gap segment apart, must fit.
        if ehi * lo + (ehi - 1) > self.segments_per_file:
            raise ValueError(
                f"{ehi} separated events of length >= {lo} cannot fit in "
                f"{self.segments_per_file} segments"
            )
        if self.domain_shift < 0:
            raise ValueError("domain_shift must be >= 0")


@dataclass(frozen=True)
class GroundTruthEvent:
    class_id: int
    start_segment: int
    end_segment: int  # inclusive


@dataclass(eq=False)
class SoundFile:
    file_id: int
    labels: np.ndarray = field(repr=False)  # (T,) int64, 0 = noise
    embeddings: np.ndarray = field(repr=False)  # (T, D) float64
    events: list[GroundTruthEvent] = field(default_factory=list)

    @property
    def has_events(self) -> bool:
        return len(self.events) > 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SoundFile):
            return NotImplemented
        return (
            self.file_id == other.file_id
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.embeddings, other.embeddings)
            and self.events == other.events
        )


@dataclass(eq=False)
class Dataset:
    spec: DatasetSpec
    train: list[SoundFile]
    test: list[SoundFile]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.train == other.train
            and self.test == other.test
        )


def quantize9(x) -> np.ndarray:
    """Quantize values to 9 significant decimal digits.

    Fixed point of the text round trip: for every output q,
    float(f"{q:.8e}") == q. The fast path computes m = round(x * 10^(8-e))
    and returns m / 10^(8-e) with exactly representable powers of ten; inputs
    outside its exponent range fall back to format/parse per element. The
    guarantee covers normal floats; deep subnormals (|x| < ~1e-300) may lose
    it to the reduced precision down there.
    """
    arr = np.array(x, dtype=np.float64, copy=True)
    flat = arr.ravel()
    live = np.flatnonzero(np.isfinite(flat) & (flat != 0.0))
    if live.size == 0:
        return arr
    v = flat[live]
    e = np.floor(np.log10(np.abs(v))).astype(np.int64)
    # 10^(8-e) must be an exact double: 8-e in [-22, 22].
    easy = (e >= -14) & (e <= 30)

    if np.any(easy):
        ve = v[easy]
        k = 8 - e[easy]
        pos = k >= 0
        scale = np.power(10.0, np.abs(k).astype(np.float64))
        m = np.round(np.where(pos, ve * scale, ve / scale))
        # log10 underestimates push |m| to 10 digits; renormalize.
        for _ in range(3):
            wide = np.abs(m) >= 1e9
            if not np.any(wide):
                break
            m[wide] = np.round(m[wide] / 10.0)
            k[wide] -= 1
            pos = k >= 0
            scale = np.power(10.0, np.abs(k).astype(np.float64))
        q = np.where(pos, m / scale, m * scale)
        flat[live[easy]] = q

    hard = ~easy
    if np.any(hard):
        flat[live[hard]] = [float(f"{val:.8e}") for val in v[hard]]
    return arr


def class_means(spec: DatasetSpec) -> np.ndarray:
    """Fixed orthonormal event-class means, deterministic in rng_seed.

    Gram-Schmidt on a seeded Gaussian matrix (not QR: keeps the result
    independent of LAPACK build details). When domain_shift > 0 each mean is
    offset by a deterministic vector of exactly that norm; the unshifted means
    are unchanged, so corpora differing only in domain_shift share geometry.
    """
    means_ss = np.random.SeedSequence(spec.rng_seed).spawn(3)[0]
    rng = np.random.default_rng(means_ss)
    raw = rng.standard_normal((spec.n_event_classes, spec.embedding_dim))
    means = np.zeros_like(raw)
    for i in range(spec.n_event_classes):
        vec = raw[i].copy()
        for j in range(i):
            vec -= (vec @ means[j]) * means[j]
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            raise ValueError("degenerate class-mean draw; change rng_seed")
        means[i] = vec / norm
    if spec.domain_shift > 0:
        pert = rng.standard_normal((spec.n_event_classes, spec.embedding_dim))
        pert *= spec.domain_shift / np.linalg.norm(pert, axis=1, keepdims=True)
        means = means + pert
    return means


def _noise_sigma(spec: DatasetSpec) -> float:
    # Isotropic noise with unit total variance across the embedding.
    return 1.0 / math.sqrt(spec.embedding_dim)


def snr_gain(snr_db: float) -> float:
    return 10.0 ** (snr_db / 20.0)


def synth_embedding(label: int, spec: DatasetSpec, rng, means: np.ndarray | None = None) -> np.ndarray:
    """One embedding draw: gain * class_mean + isotropic noise."""
    if not 0 <= label <= spec.n_event_classes:
        raise ValueError(f"label {label} outside 0..{spec.n_event_classes}")
    noise = rng.standard_normal(spec.embedding_dim) * _noise_sigma(spec)
    if label == 0:
        return noise
    if means is None:
        means = class_means(spec)
    return snr_gain(spec.snr_db) * means[label - 1] + noise


def place_events(T: int, n_events: int, len_range: tuple[int, int], rng) -> list[tuple[int, int]]:
    """Place n_events disjoint intervals in [0, T-1], lengths uniform in len_range.

    Consecutive intervals keep at least one background segment between them,
    so the label sequence maps back onto the events one-to-one (adjacent
    same-class events would otherwise fuse into a single label run).
    Rejection sampling; returns intervals sorted by start as inclusive
    (start, end) pairs. Raises PlacementInfeasibleError when the request
    cannot fit or the retry budget runs out.
    """
    if n_events == 0:
        return []
    lo, hi = len_range
    if n_events * lo + (n_events - 1) > T:
        raise PlacementInfeasibleError(
            f"cannot place {n_events} separated events of length >= {lo} "
            f"in {T} segments"
        )
    for _ in range(_PLACEMENT_RETRIES):
        lengths = rng.integers(lo, hi + 1, size=n_events)
        if int(lengths.sum()) + n_events - 1 > T:
            continue
        starts = [int(rng.integers(0, T - L + 1)) for L in lengths]
        intervals = sorted(
            (s, s + int(L) - 1) for s, L in zip(starts, lengths)
        )
        if all(
            intervals[i + 1][0] > intervals[i][1] + 1 for i in range(n_events - 1)
        ):
            return intervals
    raise PlacementInfeasibleError(
        f"no separated placement of {n_events} events with lengths in "
        f"[{lo}, {hi}] found in {T} segments after {_PLACEMENT_RETRIES} tries"
    )


def _generate_file(
    file_id: int,
    is_event_file: bool,
    spec: DatasetSpec,
    means: np.ndarray,
    rng,
) -> SoundFile:
    T = spec.segments_per_file
    labels = np.zeros(T, dtype=np.int64)
    events: list[GroundTruthEvent] = []
    if is_event_file:
        elo, ehi = spec.events_per_file_range
        n_events = int(rng.integers(elo, ehi + 1))
        try:
            intervals = place_events(T, n_events, spec.event_len_range, rng)
        except PlacementInfeasibleError as exc:
            raise PlacementInfeasibleError(f"file {file_id}: {exc}") from exc
        classes = rng.integers(1, spec.n_event_classes + 1, size=n_events)
        for (start, end), cls in zip(intervals, classes):
            labels[start : end + 1] = int(cls)
            events.append(GroundTruthEvent(int(cls), start, end))
    emb = rng.standard_normal((T, spec.embedding_dim)) * _noise_sigma(spec)
    mask = labels > 0
    if np.any(mask):
        emb[mask] += snr_gain(spec.snr_db) * means[labels[mask] - 1]
    return SoundFile(file_id, labels, quantize9(emb), events)


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Generate a corpus: exact event-file count, split preserving the ratio.

    The event-file count is round(n_files * event_ratio) by construction, and
    the train/test split keeps the event ratio within each side (within one
    file of rounding). Deterministic in spec.rng_seed.
    """
    spec.validate()
    root = np.random.SeedSequence(spec.rng_seed)
    _, assign_ss, files_ss = root.spawn(3)
    means = class_means(spec)

    n_train = round_half_up(spec.n_files * spec.train_fraction)
    n_train = min(max(n_train, 1), spec.n_files - 1)
    n_event = round_half_up(spec.n_files * spec.event_ratio)
    n_event_train = min(round_half_up(n_train * spec.event_ratio), n_event)
    n_event_test = n_event - n_event_train
    if n_event_test > spec.n_files - n_train:  # clamp overflow into train
        n_event_train += n_event_test - (spec.n_files - n_train)
        n_event_test = spec.n_files - n_train

    perm = np.random.default_rng(assign_ss).permutation(spec.n_files)
    train_ids = perm[:n_train]
    test_ids = perm[n_train:]
    event_ids = set(train_ids[:n_event_train].tolist())
    event_ids.update(test_ids[:n_event_test].tolist())
    train_set = set(train_ids.tolist())

    children = files_ss.spawn(spec.n_files)
    train_files: list[SoundFile] = []
    test_files: list[SoundFile] = []
    for fid in range(spec.n_files):
        rng = np.random.default_rng(children[fid])
        sf = _generate_file(fid, fid in event_ids, spec, means, rng)
        (train_files if fid in train_set else test_files).append(sf)
    return Dataset(spec, train_files, test_files)


# --- text serialization ------------------------------------------------------

_SPEC_FIELDS = (
    "n_files",
    "segments_per_file",
    "n_event_classes",
    "embedding_dim",
    "event_ratio",
    "snr_db",
    "event_len_range",
    "events_per_file_range",
    "train_fraction",
    "domain_shift",
    "rng_seed",
)


def _rle_encode(labels: np.ndarray) -> str:
    parts = []
    run_start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[run_start]:
            parts.append(f"{int(labels[run_start])}:{i - run_start}")
            run_start = i
    return ",".join(parts)


def _rle_decode(text: str, T: int) -> np.ndarray:
    labels = np.zeros(T, dtype=np.int64)
    pos = 0
    for part in text.split(","):
        lab, _, count = part.partition(":")
        n = int(count)
        labels[pos : pos + n] = int(lab)
        pos += n
    if pos != T:
        raise DatasetFormatError(f"label run length {pos} != {T}")
    return labels


def _events_encode(events: list[GroundTruthEvent]) -> str:
    if not events:
        return "-"
    return ";".join(f"{e.class_id}:{e.start_segment}-{e.end_segment}" for e in events)


def _events_decode(text: str) -> list[GroundTruthEvent]:
    if text == "-":
        return []
    events = []
    for part in text.split(";"):
        cls, _, span = part.partition(":")
        start, _, end = span.partition("-")
        events.append(GroundTruthEvent(int(cls), int(start), int(end)))
    return events


def _dataset_lines(dataset: Dataset):
    """Yield the text-format lines (without newlines) for a dataset."""
    spec = dataset.spec
    yield FORMAT_VERSION
    for name in _SPEC_FIELDS:
        value = getattr(spec, name)
        if isinstance(value, tuple):
            value = f"{value[0]},{value[1]}"
        yield f"{name}={value}"
    for split, files in (("train", dataset.train), ("test", dataset.test)):
        for sf in files:
            yield f"file {sf.file_id} {split}"
            yield "labels " + _rle_encode(sf.labels)
            yield "events " + _events_encode(sf.events)
            for row in sf.embeddings:
                yield " ".join(f"{v:.8e}" for v in row)
    yield "end"


def save_dataset(dataset: Dataset, path) -> None:
    """Write the versioned text format; see load_dataset for the layout."""
    with open(path, "w", encoding="ascii") as fh:
        for line in _dataset_lines(dataset):
            fh.write(line + "\n")


def dataset_text_hash(dataset: Dataset) -> str:
    """First 16 hex digits of the sha256 of the dataset's serialized bytes.

    Matches hashing the file save_dataset would write, without writing it.
    """
    h = hashlib.sha256()
    for line in _dataset_lines(dataset):
        h.update((line + "\n").encode("ascii"))
    return h.hexdigest()[:16]


def load_dataset(path) -> Dataset:
    """Parse a dataset file; bit-exact inverse of save_dataset.

    Layout: version line; one key=value line per spec field; then per file a
    "file <id> <split>" line, a "labels <rle>" line, an "events <list>" line,
    and segments_per_file embedding rows; closed by an "end" line.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("empty dataset file")
    if lines[0] != FORMAT_VERSION:
        raise DatasetFormatError(
            f"line 1: unsupported format version {lines[0]!r}, expected {FORMAT_VERSION!r}"
        )

    kv = {}
    ln = 1
    for name in _SPEC_FIELDS:
        if ln >= len(lines) or "=" not in lines[ln]:
            raise DatasetFormatError(f"line {ln + 1}: expected {name}=...")
        key, _, value = lines[ln].partition("=")
        if key != name:
            raise DatasetFormatError(f"line {ln + 1}: expected key {name}, got {key}")
        kv[key] = value
        ln += 1

    def _pair(text: str) -> tuple[int, int]:
        a, _, b = text.partition(",")
        return (int(a), int(b))

    try:
        spec = DatasetSpec(
            n_files=int(kv["n_files"]),
            event_ratio=float(kv["event_ratio"]),
            snr_db=float(kv["snr_db"]),
            rng_seed=int(kv["rng_seed"]),
            segments_per_file=int(kv["segments_per_file"]),
            n_event_classes=int(kv["n_event_classes"]),
            embedding_dim=int(kv["embedding_dim"]),
            event_len_range=_pair(kv["event_len_range"]),
            events_per_file_range=_pair(kv["events_per_file_range"]),
            train_fraction=float(kv["train_fraction"]),
            domain_shift=float(kv["domain_shift"]),
        )
    except ValueError as exc:
        raise DatasetFormatError(f"bad header field: {exc}") from exc

    T = spec.segments_per_file
    train: list[SoundFile] = []
    test: list[SoundFile] = []
    while True:
        if ln >= len(lines):
            raise DatasetFormatError("truncated file: missing end marker")
        header = lines[ln]
        if header == "end":
            break
        parts = header.split()
        if len(parts) != 3 or parts[0] != "file" or parts[2] not in ("train", "test"):
            raise DatasetFormatError(f"line {ln + 1}: bad file header {header!r}")
        fid = int(parts[1])
        if ln + 2 + T >= len(lines):
            raise DatasetFormatError(f"line {ln + 1}: truncated record for file {fid}")
        if not lines[ln + 1].startswith("labels "):
            raise DatasetFormatError(f"line {ln + 2}: expected labels line")
        if not lines[ln + 2].startswith("events "):
            raise DatasetFormatError(f"line {ln + 3}: expected events line")
        try:
            labels = _rle_decode(lines[ln + 1][7:], T)
            events = _events_decode(lines[ln + 2][7:])
        except (ValueError, DatasetFormatError) as exc:
            raise DatasetFormatError(f"file {fid}: {exc}") from exc
        emb = np.empty((T, spec.embedding_dim), dtype=np.float64)
        for i in range(T):
            row = np.fromstring(lines[ln + 3 + i], dtype=np.float64, sep=" ")
            if row.shape[0] != spec.embedding_dim:
                raise DatasetFormatError(
                    f"line {ln + 4 + i}: embedding row has {row.shape[0]} values, "
                    f"expected {spec.embedding_dim}"
                )
            emb[i] = row
        sf = SoundFile(fid, labels, emb, events)
        (train if parts[2] == "train" else test).append(sf)
        ln += 3 + T
    return Dataset(spec, train, test)
