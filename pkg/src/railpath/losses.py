"""Loss functions: perspective-weighted trajectory regression, y-limit
penalty, and the classification / segmentation counterparts.

The trajectory loss averages, over the anchors flagged by the validity
mask, the smooth-L1 lateral errors of both rails, each anchor weighted by
the clamped reciprocal of the target rail width (errors near the vanishing
point correspond to larger real-world distances).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .augmentation import TrajectoryTarget


class LossError(ValueError):
    """Loss inputs violate a precondition."""


@dataclass
class LossConfig:
    beta1: float = 0.005          # smooth-L1 transition for rail x errors
    beta2: float = 0.015          # smooth-L1 transition for the y-limit error
    ylim_weight: float = 0.5      # weight of the y-limit term in the composite loss
    w_max: float = 20.0           # perspective-weight clamp
    anchor_count: int = 64

    def __post_init__(self) -> None:
        if self.beta1 <= 0 or self.beta2 <= 0:
            raise LossError("beta values must be positive")
        if self.ylim_weight < 0:
            raise LossError("ylim_weight must be >= 0")
        if self.w_max <= 0:
            raise LossError("w_max must be positive")


def smooth_l1(x, beta: float):
    """Piecewise smooth-L1: 0.5 x^2 / beta inside |x| < beta, |x| - beta/2 outside.

    Works on floats and torch tensors; continuous with continuous first
    derivative at |x| = beta.
    """
    if beta <= 0:
        raise LossError(f"beta must be positive, got {beta}")
    if isinstance(x, torch.Tensor):
        ax = x.abs()
        return torch.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)
    ax = abs(x)
    return 0.5 * x * x / beta if ax < beta else ax - 0.5 * beta


def perspective_weight(x_left, x_right, w_max: float):
    """Clamped reciprocal of the target rail width; callers sort the pair first."""
    if isinstance(x_left, torch.Tensor) or isinstance(x_right, torch.Tensor):
        width = torch.as_tensor(x_right) - torch.as_tensor(x_left)
        if bool((width <= 0).any()):
            raise LossError("rail width must be positive at every weighted anchor")
        return torch.clamp(1.0 / width, max=w_max)
    width = x_right - x_left
    if width <= 0:
        raise LossError(f"rail width must be positive, got {width}")
    return min(1.0 / width, w_max)


def compute_wmax(targets, percentile: float = 95.0) -> float:
    """Nearest-rank percentile of the unclamped reciprocal widths pooled over
    the masked anchors of all given targets."""
    pool = []
    for t in targets:
        widths = t.x[1, t.mask] - t.x[0, t.mask]
        if np.any(widths <= 0):
            raise LossError(f"non-positive rail width in target pool")
        pool.append(1.0 / widths)
    values = np.sort(np.concatenate(pool)) if pool else np.empty(0)
    if values.size == 0:
        raise LossError("empty target pool")
    rank = max(1, math.ceil(percentile / 100.0 * values.size))
    return float(values[rank - 1])


def anchor_mask(y_lim: float, anchor_count: int) -> np.ndarray:
    """Anchor validity per the bottom-up rule: anchor i valid iff i <= y_lim * H."""
    i = np.arange(1, anchor_count + 1, dtype=np.float64)
    return i <= y_lim * anchor_count


def _as_tensor(value, like: torch.Tensor | None = None) -> torch.Tensor:
    dtype = like.dtype if like is not None else torch.float64
    if isinstance(value, torch.Tensor):
        return value
    return torch.as_tensor(value, dtype=dtype)


def trajectory_loss(pred_x, target: TrajectoryTarget, config: LossConfig) -> torch.Tensor:
    """Masked, perspective-weighted smooth-L1 over both rails, averaged over
    the valid anchors."""
    pred = _as_tensor(pred_x)
    x = torch.as_tensor(target.x, dtype=pred.dtype, device=pred.device)
    mask = torch.as_tensor(target.mask, dtype=pred.dtype, device=pred.device)
    return _trajectory_loss_terms(pred.unsqueeze(0), x.unsqueeze(0), mask.unsqueeze(0), config)[0]


def batched_trajectory_loss(pred_x: torch.Tensor, x: torch.Tensor, mask: torch.Tensor,
                            config: LossConfig) -> torch.Tensor:
    """Mean per-sample trajectory loss over a batch; shapes (B, 2, H) / (B, H)."""
    return _trajectory_loss_terms(pred_x, x, mask.to(pred_x.dtype), config).mean()


def _trajectory_loss_terms(pred_x, x, mask, config: LossConfig) -> torch.Tensor:
    if pred_x.shape != x.shape or pred_x.shape[1] != 2 or pred_x.shape[:1] + pred_x.shape[2:] != mask.shape:
        raise LossError(f"shape mismatch: pred {tuple(pred_x.shape)}, x {tuple(x.shape)}, mask {tuple(mask.shape)}")
    denom = mask.sum(dim=1)
    if bool((denom <= 0).any()):
        raise LossError("target mask has no valid anchors")
    width = x[:, 1] - x[:, 0]
    if bool((width[mask > 0] <= 0).any()):
        raise LossError("rail width must be positive at every masked anchor")
    weight = torch.clamp(1.0 / width.clamp(min=1e-12), max=config.w_max)
    rails = smooth_l1(pred_x - x, config.beta1).sum(dim=1)
    return (mask * weight * rails).sum(dim=1) / denom


def ylim_loss(pred_ylim, target_ylim, beta2: float):
    """Smooth-L1 on the y-limit error."""
    if isinstance(pred_ylim, torch.Tensor) or isinstance(target_ylim, torch.Tensor):
        return smooth_l1(torch.as_tensor(pred_ylim) - torch.as_tensor(target_ylim), beta2)
    return smooth_l1(pred_ylim - target_ylim, beta2)


def composite_loss(pred_vector, target: TrajectoryTarget, config: LossConfig) -> torch.Tensor:
    """Trajectory loss plus the weighted y-limit loss for one 2H+1 output."""
    vec = _as_tensor(pred_vector)
    H = target.anchor_count
    if vec.shape != (2 * H + 1,):
        raise LossError(f"prediction vector must have length {2 * H + 1}, got {tuple(vec.shape)}")
    pred_x = vec[: 2 * H].reshape(2, H)
    l_traj = trajectory_loss(pred_x, target, config)
    l_ylim = ylim_loss(vec[-1], torch.as_tensor(target.y_lim, dtype=vec.dtype), config.beta2)
    return l_traj + config.ylim_weight * l_ylim


def batched_composite_loss(pred_vectors: torch.Tensor, x: torch.Tensor, mask: torch.Tensor,
                           y_lim: torch.Tensor, config: LossConfig) -> torch.Tensor:
    """Composite loss averaged over a batch of 2H+1 prediction vectors."""
    B = pred_vectors.shape[0]
    H = (pred_vectors.shape[1] - 1) // 2
    pred_x = pred_vectors[:, : 2 * H].reshape(B, 2, H)
    traj = _trajectory_loss_terms(pred_x, x, mask.to(pred_vectors.dtype), config)
    yl = smooth_l1(pred_vectors[:, -1] - y_lim, config.beta2)
    return (traj + config.ylim_weight * yl).mean()


def dice_loss(pred_probs: torch.Tensor, target_mask: torch.Tensor) -> torch.Tensor:
    """Binary Dice loss, 1 - 2|P.T| / (|P| + |T|); 0 when both are empty."""
    if pred_probs.shape != target_mask.shape:
        raise LossError(f"shape mismatch: {tuple(pred_probs.shape)} vs {tuple(target_mask.shape)}")
    p = pred_probs.reshape(pred_probs.shape[0], -1) if pred_probs.dim() > 1 else pred_probs.reshape(1, -1)
    t = target_mask.reshape(p.shape).to(p.dtype)
    inter = (p * t).sum(dim=1)
    total = p.sum(dim=1) + t.sum(dim=1)
    loss = torch.where(total > 0, 1.0 - 2.0 * inter / total.clamp(min=1e-30), torch.zeros_like(total))
    return loss.mean()


def rowwise_cross_entropy(logits: torch.Tensor, target_columns: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over every (rail, row) cell of the prediction grid.

    `logits` is (C, H, W+1) or batched (B, C, H, W+1); `target_columns`
    holds class indices in [0, W], with W the background class for rows
    above the y-limit.
    """
    if logits.dim() == 3:
        logits = logits.unsqueeze(0)
        target_columns = target_columns.unsqueeze(0)
    if logits.shape[:-1] != target_columns.shape:
        raise LossError(f"grid/target shape mismatch: {tuple(logits.shape)} vs {tuple(target_columns.shape)}")
    n_classes = logits.shape[-1]
    targets = target_columns.reshape(-1).long()
    if bool((targets < 0).any()) or bool((targets >= n_classes).any()):
        raise LossError(f"target class outside [0, {n_classes - 1}]")
    return F.cross_entropy(logits.reshape(-1, n_classes), targets)


def columns_from_target(target: TrajectoryTarget, columns: int = 128) -> np.ndarray:
    """Quantize a trajectory target into per-(rail, row) class indices.

    Normalized x maps to `columns` equal bins (off-frame values clamp to the
    edge bins); anchors above the y-limit get the background class index
    `columns`.
    """
    bins = np.clip(np.floor(target.x * columns), 0, columns - 1).astype(np.int64)
    bins[:, ~target.mask] = columns
    return bins


def columns_to_x(column_indices: np.ndarray, columns: int = 128) -> np.ndarray:
    """Bin-center normalized x for each (rail, row) class index."""
    return (np.asarray(column_indices, dtype=np.float64) + 0.5) / columns
