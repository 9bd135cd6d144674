"""Training objectives.

Reconstruction: pixel MSE of reconstructed-HR images against the original HR
image, and of reconstructed-LR images against the fixed LR reference standard
(default rate 3); combined as lr_term + hr_weight * hr_term.

Re-identification: per-sub-feature cross entropy over 10 independent heads
(5 per branch) plus a per-sub-feature triplet loss with margin, combined as
ce + triplet_weight * triplet.

Squared-norm sums are reduced to means over pixels and batch by default so
magnitudes stay comparable across image sizes; reduction="sum" restores the
plain sum for oracle comparisons.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import torch
import torch.nn.functional as F

DEFAULT_LR_STANDARD = 3


@dataclasses.dataclass(frozen=True)
class LossWeights:
    hr_mse_weight: float = 100.0
    triplet_weight: float = 1.0
    margin: float = 0.5

    def validate(self) -> "LossWeights":
        if self.hr_mse_weight < 0 or self.triplet_weight < 0 or self.margin < 0:
            raise ValueError("loss weights and margin must be non-negative")
        return self


def _pixel_mse(recons: torch.Tensor, targets: torch.Tensor, reduction: str) -> torch.Tensor:
    if recons.shape != targets.shape:
        raise ValueError(
            f"reconstruction batch {tuple(recons.shape)} does not match "
            f"target batch {tuple(targets.shape)}"
        )
    sq = (recons - targets) ** 2
    if reduction == "mean":
        return sq.mean()
    if reduction == "sum":
        return sq.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


def mse_hr(recons: torch.Tensor, hr_targets: torch.Tensor,
           reduction: str = "mean") -> torch.Tensor:
    """MSE of stacked HR reconstructions against their source HR images.

    The batch stacks, per source image, the reconstruction of the HR input
    and the reconstructions of its LR variants; the target rows repeat the
    source HR image accordingly.
    """
    return _pixel_mse(recons, hr_targets, reduction)


def mse_lr(recons: torch.Tensor, standard_targets: torch.Tensor,
           reduction: str = "mean") -> torch.Tensor:
    """MSE of stacked LR reconstructions against the LR reference standard.

    The target for every reconstruction of a source image is that source
    down-sampled at the configured reference rate.
    """
    return _pixel_mse(recons, standard_targets, reduction)


def mse_joint(hr_loss: torch.Tensor, lr_loss: torch.Tensor,
              weights: LossWeights) -> torch.Tensor:
    """Combined reconstruction loss: lr + hr_weight * hr."""
    return lr_loss + weights.hr_mse_weight * hr_loss


def cross_entropy(logit_groups: Sequence[torch.Tensor], labels: torch.Tensor) -> torch.Tensor:
    """Sum over sub-feature heads of batch-mean cross entropy.

    logit_groups holds one (B, num_classes) tensor per head (10 with both
    branches active). With uniform logits over C classes each head adds
    ln C, so the full dual-branch loss is 10 ln C per sample.
    """
    if not logit_groups:
        raise ValueError("no logit groups given")
    num_classes = logit_groups[0].shape[1]
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{int(labels.min())}, {int(labels.max())}]"
        )
    total = logit_groups[0].new_zeros(())
    for logits in logit_groups:
        total = total + F.cross_entropy(logits, labels)
    return total


def pairwise_distances(feats: torch.Tensor) -> torch.Tensor:
    """Exact (no matmul shortcut) Euclidean distance matrix."""
    return torch.cdist(feats, feats, compute_mode="donot_use_mm_for_euclid_dist")


def batch_hard_triplet(feats: torch.Tensor, labels: torch.Tensor, margin: float,
                       anchor_reduction: str = "mean") -> torch.Tensor:
    """Hardest-positive/hardest-negative triplet loss for one sub-feature.

    For every anchor the farthest same-identity sample and the nearest
    different-identity sample form the triplet; the hinge
    [d_ap - d_an + margin]_+ is reduced over anchors (mean by default).
    """
    if feats.ndim != 2 or feats.shape[0] != labels.shape[0]:
        raise ValueError("feats must be (B, D) with one label per row")
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~torch.eye(len(labels), dtype=torch.bool, device=feats.device)
    neg_mask = ~same
    if not neg_mask.any():
        raise ValueError("triplet loss needs at least 2 identities in the batch")

    dist = pairwise_distances(feats)
    valid = pos_mask.any(dim=1) & neg_mask.any(dim=1)
    if not valid.any():
        raise ValueError("no anchor has both a positive and a negative")

    d_ap = torch.where(pos_mask, dist, dist.new_tensor(float("-inf"))).max(dim=1).values
    d_an = torch.where(neg_mask, dist, dist.new_tensor(float("inf"))).min(dim=1).values
    hinge = F.relu(d_ap[valid] - d_an[valid] + margin)
    if anchor_reduction == "mean":
        return hinge.mean()
    if anchor_reduction == "sum":
        return hinge.sum()
    raise ValueError(f"unknown anchor reduction {anchor_reduction!r}")


def all_triplets(feats: torch.Tensor, labels: torch.Tensor, margin: float,
                 anchor_reduction: str = "mean") -> torch.Tensor:
    """Exhaustive variant: hinge over every (anchor, positive, negative)."""
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~torch.eye(len(labels), dtype=torch.bool, device=feats.device)
    neg_mask = ~same
    if not neg_mask.any():
        raise ValueError("triplet loss needs at least 2 identities in the batch")
    dist = pairwise_distances(feats)
    hinge = F.relu(dist[:, :, None] - dist[:, None, :] + margin)
    mask = pos_mask[:, :, None] & neg_mask[:, None, :]
    if not mask.any():
        raise ValueError("no valid triplet in the batch")
    selected = hinge[mask]
    return selected.mean() if anchor_reduction == "mean" else selected.sum()


def triplet(feature_groups: Sequence[torch.Tensor], labels: torch.Tensor,
            weights: LossWeights, mining: str = "batch_hard",
            anchor_reduction: str = "mean") -> torch.Tensor:
    """Sum of per-sub-feature triplet losses over all given groups.

    feature_groups holds one (B, D) tensor per sub-feature per branch
    (10 with both branches active).
    """
    fn = {"batch_hard": batch_hard_triplet, "all": all_triplets}.get(mining)
    if fn is None:
        raise ValueError(f"unknown mining mode {mining!r}")
    total = feature_groups[0].new_zeros(())
    for feats in feature_groups:
        total = total + fn(feats, labels, weights.margin, anchor_reduction)
    return total


def reid_loss(ce: torch.Tensor, trip: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """Combined re-identification loss: ce + triplet_weight * triplet."""
    return ce + weights.triplet_weight * trip
