"""Per-filter redundancy similarity and normalized importance scores.

A layer's input-channel slices are compared pairwise: two channels whose
weight rows are (anti)correlated carry interchangeable information, so one
of them can be merged away.  Scores are per input channel, in [0, 1] under
max normalization, with 1 meaning "keep" and 0 meaning "fully redundant".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DETECTORS = ("correlation", "cosine", "dot_product")
NORMALIZATIONS = ("max", "l1", "l2")
SIGNED_MODES = ("abs", "relu", "square")


@dataclass(frozen=True)
class SimilarityMatrix:
    """Symmetric per-layer channel-pair similarity; the diagonal is zeroed."""

    layer: str
    values: np.ndarray
    flags: tuple[str, ...] = ()


@dataclass
class ImportanceTable:
    """Normalized importance per scored layer, keyed by consuming layer.

    Entries are vectors over that layer's input channels (for fully
    connected layers fed by a spatial flatten, over the producing
    channels).  reimp is populated once regularizers are applied.
    """

    scores: dict[str, np.ndarray] = field(default_factory=dict)
    top1: dict[str, np.ndarray] = field(default_factory=dict)
    reimp: dict[str, np.ndarray] = field(default_factory=dict)
    reg: dict[str, float] = field(default_factory=dict)
    flags: dict[str, tuple[str, ...]] = field(default_factory=dict)
    config: dict[str, object] = field(default_factory=dict)


def pearson(u, v) -> float:
    """Pearson correlation coefficient; 0 when either input has no variance."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    if u.size < 2:
        raise ValueError("need at least 2 samples for a correlation")
    uc = u - u.mean()
    vc = v - v.mean()
    nu = np.sqrt(np.dot(uc, uc))
    nv = np.sqrt(np.dot(vc, vc))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(uc, vc) / (nu * nv))


def _pairwise(node: np.ndarray, detector: str) -> np.ndarray:
    """All-pairs detector scores for one K x K node position.

    node is (channels, outputs); rows with zero variance (correlation) or
    zero norm (cosine) score 0 against everything.
    """
    x = node.astype(np.float64, copy=True)
    if detector == "correlation":
        x -= x.mean(axis=1, keepdims=True)
    if detector in ("correlation", "cosine"):
        norms = np.sqrt(np.einsum("ij,ij->i", x, x))
        safe = np.where(norms == 0.0, 1.0, norms)
        sim = (x @ x.T) / np.outer(safe, safe)
        sim[norms == 0.0, :] = 0.0
        sim[:, norms == 0.0] = 0.0
        # rounding can push exact duplicates a hair past +/-1
        return np.clip(sim, -1.0, 1.0)
    if detector == "dot_product":
        return x @ x.T
    raise ValueError(f"unknown detector {detector!r}, expected one of {DETECTORS}")


def _fold(values: np.ndarray, signed_mode: str) -> np.ndarray:
    if signed_mode == "abs":
        return np.abs(values)
    if signed_mode == "relu":
        return np.maximum(values, 0.0)
    if signed_mode == "square":
        return values * values
    raise ValueError(f"unknown signed_mode {signed_mode!r}, expected one of {SIGNED_MODES}")


def similarity_matrix(
    weights: np.ndarray,
    detector: str = "correlation",
    signed_mode: str = "abs",
    layer: str = "",
) -> SimilarityMatrix:
    """Channel-pair similarity for a [K, K, M, N] or [M, N] weight tensor.

    Each of the K*K kernel positions contributes the folded detector score
    of the two channels' weight rows; the entries average those positions.
    A 2-D tensor is the K = 1 case.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 2:
        w = w[None, None, :, :]
    if w.ndim != 4:
        raise ValueError(f"expected a [K,K,M,N] or [M,N] tensor, got shape {weights.shape}")
    k1, k2, m, n = w.shape
    if n < 2:
        raise ValueError(f"need at least 2 outputs to compare rows over, got {n}")
    if m < 1:
        raise ValueError("tensor has no input channels")

    flags: list[str] = []
    if not w.any():
        flags.append("all-zero layer: similarities are 0")

    acc = np.zeros((m, m), dtype=np.float64)
    for i in range(k1):
        for j in range(k2):
            acc += _fold(_pairwise(w[i, j], detector), signed_mode)
    acc /= k1 * k2
    np.fill_diagonal(acc, 0.0)
    return SimilarityMatrix(layer=layer, values=acc, flags=tuple(flags))


def normalize(sim: SimilarityMatrix, mode: str = "max") -> SimilarityMatrix:
    """Rescale off-diagonal similarities by the layer's max, l1, or l2 norm.

    A zero divisor (fully degenerate layer) leaves the matrix unchanged
    and adds a flag instead of dividing.
    """
    m = sim.values.shape[0]
    if m < 2:
        raise ValueError("normalization needs at least one off-diagonal entry")
    iu = np.triu_indices(m, k=1)
    off = sim.values[iu]
    if mode == "max":
        divisor = float(np.max(off))
    elif mode == "l1":
        divisor = float(np.sum(np.abs(off)))
    elif mode == "l2":
        divisor = float(np.sqrt(np.sum(off * off)))
    else:
        raise ValueError(f"unknown normalization {mode!r}, expected one of {NORMALIZATIONS}")
    if divisor == 0.0:
        return SimilarityMatrix(
            layer=sim.layer, values=sim.values,
            flags=sim.flags + (f"zero {mode} divisor: matrix left unnormalized",),
        )
    return SimilarityMatrix(layer=sim.layer, values=sim.values / divisor, flags=sim.flags)


def topk_importance(sim: SimilarityMatrix, k: int) -> np.ndarray:
    """1 minus the mean of each channel's k strongest normalized similarities.

    k is clipped to the number of peers.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    values = sim.values
    m = values.shape[0]
    if m < 2:
        raise ValueError("importance needs at least 2 channels")
    k_eff = min(k, m - 1)
    imp = np.empty(m, dtype=np.float64)
    for i in range(m):
        peers = np.delete(values[i], i)
        top = np.sort(peers)[::-1][:k_eff]
        imp[i] = 1.0 - float(np.mean(top))
    return imp


def top1_similarity(sim: SimilarityMatrix) -> np.ndarray:
    """Each channel's single strongest normalized similarity to a peer."""
    values = sim.values
    m = values.shape[0]
    out = np.empty(m, dtype=np.float64)
    for i in range(m):
        out[i] = float(np.max(np.delete(values[i], i)))
    return out
