"""Pixel-level NT-Xent contrastive loss over sampled correspondence descriptors.

The batch holds 2M unit vectors ordered as M positive pairs (2k, 2k+1). Each
of the 2M ordered terms compares a descriptor to its partner against all
other descriptors in the pool; the total is the mean of the ordered terms.
Arithmetic stays in the input dtype: float64 for gradient checks, float32
for bulk training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    # "batch": negatives come from the whole 2M pool; "per_pair": restricted
    # to descriptors sharing the same image-pair id
    pool: str = "batch"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.pool not in ("batch", "per_pair"):
            raise ValueError(f"pool must be 'batch' or 'per_pair', got {self.pool!r}")


def _check_batch(desc: np.ndarray) -> int:
    if desc.ndim != 2 or desc.shape[0] == 0 or desc.shape[0] % 2:
        raise ValueError(f"batch must be (2M, D) with M >= 1, got {desc.shape}")
    return desc.shape[0] // 2


def similarity_matrix(desc: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities; inputs must already be unit norm."""
    desc = np.asarray(desc)
    _check_batch(desc)
    norms = np.linalg.norm(desc, axis=1)
    if np.abs(norms - 1.0).max() > 1e-3:
        raise ValueError(
            f"descriptors not unit norm (max deviation {np.abs(norms - 1).max():.2e})"
        )
    return desc @ desc.T


def _core(
    desc: np.ndarray,
    cfg: LossConfig,
    group_ids: Optional[np.ndarray],
    want_grad: bool,
) -> Tuple[float, Optional[np.ndarray]]:
    desc = np.asarray(desc)
    n = 2 * _check_batch(desc)
    s = similarity_matrix(desc)
    s /= desc.dtype.type(cfg.temperature)
    idx = np.arange(n)
    partner = idx ^ 1
    pos = s[idx, partner].copy()
    if cfg.pool == "per_pair":
        if group_ids is None:
            raise ValueError("per_pair pool needs group_ids")
        gids = np.asarray(group_ids)
        s[gids[:, None] != gids[None, :]] = -np.inf
    np.fill_diagonal(s, -np.inf)
    row_max = s.max(axis=1)
    np.subtract(s, row_max[:, None], out=s)
    np.exp(s, out=s)  # s is now exp-weights with zeros where masked
    z = s.sum(axis=1)
    loss = float(np.mean(row_max + np.log(z) - pos))
    if not want_grad:
        return loss, None
    # dL/ds[i,k] for the full (non-symmetric) table of d_i . d_k
    s /= z[:, None]
    s[idx, partner] -= 1.0
    s /= desc.dtype.type(n * cfg.temperature)
    grad = (s + s.T) @ desc
    return loss, grad


def ntxent(desc: np.ndarray, cfg: LossConfig = LossConfig(), group_ids=None) -> float:
    """Mean NT-Xent loss over all 2M ordered positive pairs."""
    return _core(desc, cfg, group_ids, want_grad=False)[0]


def ntxent_grad(
    desc: np.ndarray, cfg: LossConfig = LossConfig(), group_ids=None
) -> np.ndarray:
    """Exact gradient of ntxent with respect to every descriptor."""
    return _core(desc, cfg, group_ids, want_grad=True)[1]


def ntxent_with_grad(
    desc: np.ndarray, cfg: LossConfig = LossConfig(), group_ids=None
) -> Tuple[float, np.ndarray]:
    """Loss and gradient sharing one similarity/softmax pass."""
    loss, grad = _core(desc, cfg, group_ids, want_grad=True)
    return loss, grad
