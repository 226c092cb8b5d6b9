"""
A module with the per-branch losses and the uncertainty-weighted total.

The total loss over branches i is Σ exp(−s_i)·L_i + s_i where s_i = log σ_i²
is a learned log-variance. With every s_i = 0 it is the plain sum.

Classes:
    MultiTaskLossState: Log-variances and loss kinds of the branches.

Functions:
    branch_loss: Mean loss of one branch.
    multitask_loss: Weighted total over branches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .autodiff import Tensor, as_tensor
from .errors import InvalidParams, NonFinite, ShapeMismatch
from .types import LossKind

PROB_CLIP = 1e-7
SDF_CLAMP = 0.1


def branch_loss(kind: LossKind, prediction: Tensor, target: np.ndarray, delta: float = SDF_CLAMP) -> Tensor:
    """
    Mean loss of one branch over every element.

    Args:
        kind (LossKind): BCE (prediction holds logits), CLAMPED_L1 or L1.
        prediction (Tensor): Branch output.
        target (np.ndarray): Target of the same shape.
        delta (float): Clamp bound of CLAMPED_L1.

    Returns:
        Tensor: Scalar loss.

    Raises:
        ShapeMismatch: if prediction and target shapes differ.
        InvalidParams: if delta <= 0.
    """
    prediction = as_tensor(prediction)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ShapeMismatch(f"prediction {prediction.shape} vs target {target.shape}")
    if kind == LossKind.BCE:
        p = prediction.sigmoid().clip(PROB_CLIP, 1.0 - PROB_CLIP)
        q = (1.0 - prediction.sigmoid()).clip(PROB_CLIP, 1.0 - PROB_CLIP)
        return -(p.log() * target + q.log() * (1.0 - target)).mean()
    if kind == LossKind.CLAMPED_L1:
        if delta <= 0:
            raise InvalidParams("delta", "clamp bound must be > 0")
        clamped = np.clip(target, -delta, delta)
        return (prediction.clip(-delta, delta) - clamped).abs().mean()
    if kind == LossKind.L1:
        return (prediction - target).abs().mean()
    raise InvalidParams("kind", f"unknown loss kind {kind!r}")


@dataclass(frozen=True)
class MultiTaskLossState:
    """
    Attributes:
        s (Tensor): (k,) log-variances, trained with the model.
        kinds (Tuple[LossKind, ...]): Loss of each branch.
        delta (float): Signed-distance clamp bound.
    """

    s: Tensor
    kinds: Tuple[LossKind, ...]
    delta: float = SDF_CLAMP

    @staticmethod
    def create(kinds: Sequence[LossKind], delta: float = SDF_CLAMP) -> "MultiTaskLossState":
        if not kinds:
            raise InvalidParams("kinds", "need at least one branch")
        return MultiTaskLossState(
            Tensor(np.zeros(len(kinds)), requires_grad=True, name="loss.s"), tuple(kinds), delta
        )

    def __len__(self) -> int:
        return len(self.kinds)


def multitask_loss(state: MultiTaskLossState, losses: Sequence[Tensor]) -> Tensor:
    """
    Σ exp(−s_i)·L_i + s_i. Gradients reach both s and the branch losses.

    Raises:
        ShapeMismatch: if the number of losses differs from the branch count.
        NonFinite: if a branch loss or the total is NaN/Inf.
    """
    if len(losses) != len(state):
        raise ShapeMismatch(f"{len(losses)} branch losses for {len(state)} branches")
    total = None
    for i, loss in enumerate(losses):
        loss = as_tensor(loss)
        if not np.isfinite(loss.data).all():
            raise NonFinite(f"branch {i} loss is not finite")
        s_i = state.s.rows(np.array([i])).reshape(())
        term = (-s_i).exp() * loss + s_i
        total = term if total is None else total + term
    if not np.isfinite(total.data):
        raise NonFinite("total loss is not finite")
    return total
