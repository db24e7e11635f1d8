"""Moving a detector trained on fresh cells onto aged ones.

Aging mostly translates each level's voltage cloud, so per-level means tell
the two domains apart.  Source means come from labels; target means come from
1-D K-means seeded at the nominal write levels.  With both in hand there are
three routes: fine-tune on labeled target reads, fine-tune on mean-shifted
source reads when the target is unlabeled, or skip networks entirely and
shift the target reads back under the source thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import DomainDataset
from .detect import threshold_detect
from .neuralnet import NetworkParams, TrainConfig, train
from .oracle import ThresholdSet

__all__ = [
    "ClusterResult",
    "DomainMeans",
    "kmeans",
    "source_means",
    "align_source_to_target",
    "align_target_to_source",
    "model_based_dtl",
    "uda_dtl",
    "uda_threshold_detect",
]


@dataclass(frozen=True)
class ClusterResult:
    """K-means outcome: ascending centroids, per-sample labels, diagnostics."""

    centroids: np.ndarray
    assignments: np.ndarray
    iterations: int
    objective: float
    objective_trace: tuple[float, ...] = field(repr=False, default=())


@dataclass(frozen=True)
class DomainMeans:
    """Matched per-level means of the source and target domains."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "source", np.asarray(self.source, dtype=float))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float))
        if self.source.shape != self.target.shape or self.source.ndim != 1:
            raise ValueError("source/target means must be 1-D arrays of equal length")


def kmeans(
    voltages: np.ndarray,
    initial_centroids: np.ndarray,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> ClusterResult:
    """Lloyd iterations in 1-D, seeded at the nominal write levels.

    Each round assigns samples to the nearest centroid (ties to the lower
    index) and recenters; a cluster that empties keeps its previous centroid.
    Stops when no centroid moves more than ``tol`` volts.  Returned centroids
    are sorted ascending with assignments relabeled to match.
    """
    v = np.asarray(voltages, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("voltages must be a non-empty 1-D array")
    centroids = np.asarray(initial_centroids, dtype=float).copy()
    if centroids.ndim != 1 or centroids.size == 0:
        raise ValueError("need at least one initial centroid")
    trace: list[float] = []
    assignments = np.zeros(v.size, dtype=np.int64)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        dist = np.abs(v[:, None] - centroids[None, :])
        assignments = np.argmin(dist, axis=1)
        new_centroids = centroids.copy()
        for j in range(centroids.size):
            members = v[assignments == j]
            if members.size:
                new_centroids[j] = members.mean()
        movement = float(np.max(np.abs(new_centroids - centroids)))
        centroids = new_centroids
        trace.append(float(np.sum((v - centroids[assignments]) ** 2)))
        if movement < tol:
            break
    order = np.argsort(centroids, kind="stable")
    relabel = np.empty_like(order)
    relabel[order] = np.arange(order.size)
    return ClusterResult(
        centroids=centroids[order],
        assignments=relabel[assignments],
        iterations=iterations,
        objective=trace[-1],
        objective_trace=tuple(trace),
    )


def source_means(dataset: DomainDataset) -> np.ndarray:
    """Per-level mean voltage of a labeled dataset, indexed by level."""
    if dataset.labels is None:
        raise ValueError("source means require a labeled dataset")
    labels = np.asarray(dataset.labels)
    n_states = int(labels.max()) + 1
    means = np.empty(n_states)
    for s in range(n_states):
        sel = dataset.voltages[labels == s]
        if sel.size == 0:
            raise ValueError(f"no samples for level {s}; cannot estimate its mean")
        means[s] = sel.mean()
    return means


def align_source_to_target(dataset: DomainDataset, means: DomainMeans) -> np.ndarray:
    """Translate labeled source reads onto the target domain, level by level."""
    if dataset.labels is None:
        raise ValueError("alignment requires source labels")
    offsets = means.target - means.source
    return dataset.voltages + offsets[dataset.labels]


def align_target_to_source(
    voltages: np.ndarray, pseudo_labels: np.ndarray, means: DomainMeans
) -> np.ndarray:
    """Translate target reads back onto the source domain via cluster labels."""
    v = np.asarray(voltages, dtype=float)
    offsets = means.target - means.source
    return v - offsets[pseudo_labels]


def model_based_dtl(
    source: DomainDataset,
    target: DomainDataset,
    pretrain_config: TrainConfig,
    finetune_config: TrainConfig,
    init_params: NetworkParams,
    source_params: NetworkParams | None = None,
) -> NetworkParams:
    """Pre-train on labeled source reads, fine-tune on labeled target reads.

    The first recurrent layer is frozen during fine-tuning: it extracts
    features that carry across domains, and pinning it shrinks the trainable
    set.  Pass ``source_params`` to reuse an already pre-trained model.
    """
    if target.labels is None:
        raise ValueError("model-based transfer requires labeled target data")
    if source_params is None:
        source_params, _ = train(source, pretrain_config, init_params)
    tuned, _ = train(target, finetune_config, source_params, freeze=("gru1",))
    return tuned


def uda_dtl(
    source: DomainDataset,
    target: DomainDataset,
    pretrain_config: TrainConfig,
    finetune_config: TrainConfig,
    init_params: NetworkParams,
    initial_centroids: np.ndarray,
    source_params: NetworkParams | None = None,
) -> tuple[NetworkParams, np.ndarray]:
    """Adapt to an unlabeled target by retraining on shifted source reads.

    Target per-level means come from K-means (never from target labels);
    source reads are translated onto them and the pre-trained model is
    fine-tuned on the shifted reads with their original labels, first
    recurrent layer frozen.

    Returns the tuned parameters and the shifted source voltages used.
    """
    if source.labels is None:
        raise ValueError("source dataset must be labeled")
    if source_params is None:
        source_params, _ = train(source, pretrain_config, init_params)
    clusters = kmeans(target.voltages, initial_centroids)
    means = DomainMeans(source=source_means(source), target=clusters.centroids)
    shifted = align_source_to_target(source, means)
    shifted_ds = DomainDataset(
        voltages=shifted,
        labels=source.labels,
        op_point=target.op_point,
        truth=source.labels,
    )
    tuned, _ = train(shifted_ds, finetune_config, source_params, freeze=("gru1",))
    return tuned, shifted


def uda_threshold_detect(
    source_state_means: np.ndarray,
    source_thresholds: ThresholdSet,
    target_voltages: np.ndarray,
    initial_centroids: np.ndarray,
) -> np.ndarray:
    """Detect unlabeled target reads with unmodified source thresholds.

    K-means supplies pseudo-labels and target means; each read is translated
    back onto the source domain and sliced by the source thresholds.  No
    network involved.
    """
    clusters = kmeans(np.asarray(target_voltages, dtype=float), initial_centroids)
    means = DomainMeans(source=np.asarray(source_state_means, dtype=float),
                        target=clusters.centroids)
    shifted = align_target_to_source(target_voltages, clusters.assignments, means)
    return threshold_detect(source_thresholds, shifted)
