"""Linear softmax segment classifier with from-scratch training.

One fully connected layer over segment embeddings, n_event_classes + 1
outputs, softmax activation. Training minimizes categorical cross-entropy
with a hand-rolled Adam optimizer; every call trains from a fresh seeded
initialization so runs are path-independent and bit-reproducible.

Post-processing turns per-segment predictions into events: a kernel-3 label
smoother removes isolated spikes, then maximal runs of identical nonzero
labels become predicted events.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import SoundFile


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 30
    minibatch_size: int = 256
    init_scale: float = 0.01
    rng_seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be >= 1")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")


@dataclass(eq=False)
class ClassifierParams:
    weights: np.ndarray = field(repr=False)  # (embedding_dim, n_classes)
    bias: np.ndarray = field(repr=False)  # (n_classes,)

    @property
    def n_classes(self) -> int:
        return self.bias.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClassifierParams):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and np.array_equal(
            self.bias, other.bias
        )


@dataclass
class AdamState:
    m_w: np.ndarray
    v_w: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray
    step: int = 0

    @staticmethod
    def zeros(dim: int, n_classes: int) -> "AdamState":
        return AdamState(
            m_w=np.zeros((dim, n_classes)),
            v_w=np.zeros((dim, n_classes)),
            m_b=np.zeros(n_classes),
            v_b=np.zeros(n_classes),
        )


@dataclass(frozen=True)
class PredictedEvent:
    class_id: int
    start_segment: int
    end_segment: int  # inclusive


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax; accepts a single logit vector or a matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if np.isnan(z).any():
        raise ValueError("NaN in logits")
    z = z - z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def _logits(params: ClassifierParams, embeddings: np.ndarray) -> np.ndarray:
    """Logits with a fixed summation order over embedding dimensions.

    Accumulating one input column at a time keeps the float rounding
    independent of the number of rows, so scoring a file in one call matches
    scoring its segments one at a time bit-exactly (BLAS matmul does not
    promise that across shapes).
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[1] != params.weights.shape[0]:
        raise ValueError(
            f"embeddings shape {emb.shape} does not match weights "
            f"{params.weights.shape}"
        )
    out = np.broadcast_to(params.bias, (emb.shape[0], params.n_classes)).copy()
    for d in range(params.weights.shape[0]):
        out += emb[:, d : d + 1] * params.weights[d]
    return out


def predict_proba(params: ClassifierParams, embeddings: np.ndarray) -> np.ndarray:
    """Per-segment class probabilities for a (T, dim) embedding matrix."""
    return softmax(_logits(params, embeddings))


def predict_file(params: ClassifierParams, file: SoundFile) -> np.ndarray:
    """Probabilities for every segment of a file, shape (T, n_classes)."""
    return predict_proba(params, file.embeddings)


def cross_entropy_and_grad(
    params: ClassifierParams, embeddings: np.ndarray, labels: np.ndarray
) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Mean cross-entropy (natural log) and its analytic gradient.

    Returns (loss, (grad_weights, grad_bias)).
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if emb.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape[0] != emb.shape[0]:
        raise ValueError("labels and embeddings disagree on batch size")
    logits = _logits(params, emb)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = emb.shape[0]
    loss = float(-logp[np.arange(n), y].mean())
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    g /= n
    return loss, (emb.T @ g, g.sum(axis=0))


def adam_step(
    params: ClassifierParams,
    grad: tuple[np.ndarray, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[ClassifierParams, AdamState]:
    """One bias-corrected Adam update over (weights, bias); pure."""
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    t = state.step + 1
    new_p = []
    new_m = []
    new_v = []
    for p, g, m, v in (
        (params.weights, grad[0], state.m_w, state.v_w),
        (params.bias, grad[1], state.m_b, state.v_b),
    ):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return (
        ClassifierParams(new_p[0], new_p[1]),
        AdamState(new_m[0], new_v[0], new_m[1], new_v[1], t),
    )


def train(
    labeled_files: list[SoundFile],
    config: TrainConfig,
    n_classes: int | None = None,
) -> ClassifierParams:
    """Train from scratch on all segments of the labeled files.

    Files are canonicalized by file_id before the seeded per-epoch shuffle,
    so the result depends on the set of files, not their order. n_classes
    defaults to the highest label present plus one (minimum 2); pass it
    explicitly when training subsets that may miss classes.
    """
    if not labeled_files:
        raise ValueError("need at least one labeled file")
    config.validate()
    ordered = sorted(labeled_files, key=lambda f: f.file_id)
    X = np.concatenate([f.embeddings for f in ordered], axis=0)
    y = np.concatenate([f.labels for f in ordered], axis=0)
    if n_classes is None:
        n_classes = max(int(y.max()) + 1, 2)
    if int(y.max()) >= n_classes:
        raise ValueError(f"label {int(y.max())} outside n_classes={n_classes}")

    rng = np.random.default_rng(config.rng_seed)
    params = ClassifierParams(
        weights=rng.standard_normal((X.shape[1], n_classes)) * config.init_scale,
        bias=np.zeros(n_classes),
    )
    state = AdamState.zeros(X.shape[1], n_classes)
    n = X.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.minibatch_size):
            idx = order[lo : lo + config.minibatch_size]
            _, grad = cross_entropy_and_grad(params, X[idx], y[idx])
            params, state = adam_step(params, grad, state, config)
    return params


def smooth_labels(labels: np.ndarray, kernel: int = 3) -> np.ndarray:
    """Sliding-window plurality vote over a label sequence.

    Ties keep the center label; windows shrink at the boundaries (for
    kernel 3 the endpoints are unchanged). Kernel must be odd.
    """
    if kernel % 2 == 0 or kernel < 1:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    lab = np.asarray(labels, dtype=np.int64)
    if kernel == 1 or lab.shape[0] < 3:
        return lab.copy()
    if kernel == 3:
        out = lab.copy()
        agree = lab[:-2] == lab[2:]
        out[1:-1] = np.where(agree, lab[:-2], lab[1:-1])
        return out
    half = kernel // 2
    out = lab.copy()
    n = lab.shape[0]
    for i in range(n):
        window = lab[max(0, i - half) : min(n, i + half + 1)]
        counts = np.bincount(window)
        top = counts.max()
        winners = np.flatnonzero(counts == top)
        if winners.shape[0] == 1:
            out[i] = winners[0]
        # plurality tie: keep center
    return out


def merge_events(labels: np.ndarray) -> list[PredictedEvent]:
    """Maximal runs of identical nonzero labels, ordered by start."""
    lab = np.asarray(labels)
    events: list[PredictedEvent] = []
    start = 0
    for i in range(1, lab.shape[0] + 1):
        if i == lab.shape[0] or lab[i] != lab[start]:
            if lab[start] != 0:
                events.append(PredictedEvent(int(lab[start]), start, i - 1))
            start = i
    return events
