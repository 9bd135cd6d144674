"""Joint optimization of the reconstruction network and the feature branches.

One training step reconstructs every non-dffn-only batch image (each HR image
plus its three LR variants), applies the reconstruction MSE pair losses, runs
both feature branches on the reconstructed pairs of the 20 base images, and
applies cross entropy + triplet. A single backward pass distributes
gradients; reconstruction parameters step at lr_mse, feature/head parameters
at lr_reid, and both rates decay by one fixed factor after the configured
epoch. Re-ID gradients reach the reconstruction parameters through the
reconstructed images unless detach_recon severs that path.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path
from typing import Sequence

import torch

from . import checkpoint as ckpt
from . import losses
from .data import ImageRecord, load_or_scan
from .dffn import DFFN, BranchConfig, ClassifierHeads
from .errors import ConfigurationError, NumericFaultError
from .rrn import RRN, RRNConfig
from .sampling import MiniBatch, MiniBatchSampler, stack

ABLATIONS = ("full", "hr_only", "lr_only", "single_branch_encoder")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs; every field is config-file nameable."""

    epochs: int = 60
    lr_mse: float = 3e-3
    lr_reid: float = 3e-4
    lr_decay_factor: float = 0.1
    lr_decay_epoch: int = 30
    weight_decay: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    hr_mse_weight: float = 100.0
    triplet_weight: float = 1.0
    margin: float = 0.5
    lr_standard: int = 3
    mse_reduction: str = "mean"
    triplet_mining: str = "batch_hard"
    triplet_anchor_reduction: str = "mean"

    ablation: str = "full"
    detach_recon: bool = False
    seed: int = 0
    batch_persons: int = 5
    checkpoint_every: int = 0        # epochs between mid-run checkpoints; 0 = end only
    num_threads: int = 1

    # Reconstruction network topology (widths are overridable).
    rrn_channels: tuple[int, ...] = (32, 32, 64, 64, 128, 128, 128, 128)
    rrn_strides: tuple[int, ...] = (1, 2, 1, 1, 2, 1, 1, 1)
    rrn_decoder_channels: tuple[int, int] = (64, 32)
    rrn_skip_taps: tuple[int | None, int | None] = (4, 1)
    rrn_attention_channels: int = 16

    # Feature branch backbone.
    backbone: str = "resnet50"
    stub_channels: tuple[int, ...] = (16, 32, 64, 64)
    stub_strides: tuple[int, ...] = (2, 2, 2, 2)

    def validate(self) -> "TrainConfig":
        if self.ablation not in ABLATIONS:
            raise ConfigurationError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.lr_standard not in (2, 3, 4):
            raise ConfigurationError(f"lr_standard must be 2, 3 or 4, got {self.lr_standard}")
        if self.epochs < 0 or self.batch_persons < 2:
            raise ConfigurationError("epochs must be >= 0 and batch_persons >= 2")
        self.loss_weights()
        self.rrn_config()
        return self

    def loss_weights(self) -> losses.LossWeights:
        return losses.LossWeights(self.hr_mse_weight, self.triplet_weight,
                                  self.margin).validate()

    def rrn_config(self) -> RRNConfig:
        single = self.ablation == "single_branch_encoder"
        return RRNConfig(
            kernel_sizes=(3,) if single else (1, 3, 5),
            channels=tuple(self.rrn_channels),
            strides=tuple(self.rrn_strides),
            decoder_channels=tuple(self.rrn_decoder_channels),
            skip_taps=tuple(self.rrn_skip_taps),
            attention_channels=self.rrn_attention_channels,
            use_attention=not single,
        ).validate()

    def branch_config(self) -> BranchConfig:
        return BranchConfig(backbone=self.backbone,
                            stub_channels=tuple(self.stub_channels),
                            stub_strides=tuple(self.stub_strides))

    def lr_for_epoch(self, epoch: int) -> tuple[float, float]:
        """(lr_mse, lr_reid) in effect during a 1-based epoch."""
        scale = self.lr_decay_factor if epoch > self.lr_decay_epoch else 1.0
        return self.lr_mse * scale, self.lr_reid * scale

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        """Desk-scale preset: small reconstruction net, stub backbone."""
        base = dict(
            rrn_channels=(4, 8), rrn_strides=(2, 2), rrn_decoder_channels=(4, 4),
            rrn_skip_taps=(1, None), rrn_attention_channels=8,
            backbone="stub", stub_channels=(16, 32, 64, 64), stub_strides=(2, 2, 2, 2),
        )
        base.update(overrides)
        return cls(**base)


@dataclasses.dataclass
class LossRecord:
    step: int
    mse_hr: float
    mse_lr: float
    ce: float
    trip: float
    total: float

    def tsv_row(self) -> str:
        return (f"{self.step}\t{self.mse_hr!r}\t{self.mse_lr!r}\t"
                f"{self.ce!r}\t{self.trip!r}\t{self.total!r}")


@dataclasses.dataclass
class TrainState:
    config: TrainConfig
    rrn: RRN
    dffn: DFFN
    heads: ClassifierHeads
    opt_mse: torch.optim.Adam
    opt_reid: torch.optim.Adam
    sampler: MiniBatchSampler
    epoch: int = 0        # completed epochs
    step: int = 0         # completed steps

    def modules(self):
        return self.rrn, self.dffn, self.heads


def _assert_parameter_partition(state: TrainState) -> None:
    """Every trainable parameter belongs to exactly one optimizer group."""
    mse_ids = {id(p) for p in state.rrn.parameters()}
    reid_ids = {id(p) for g in (state.dffn, state.heads) for p in g.parameters()}
    if mse_ids & reid_ids:
        raise ConfigurationError("a parameter appears in both optimizer groups")
    opt_ids = {id(p) for grp in state.opt_mse.param_groups for p in grp["params"]}
    opt_ids |= {id(p) for grp in state.opt_reid.param_groups for p in grp["params"]}
    all_ids = mse_ids | reid_ids
    if opt_ids != all_ids:
        raise ConfigurationError("optimizer groups do not partition the trainable parameters")


def build_state(config: TrainConfig, records: Sequence[ImageRecord],
                root: str | Path) -> TrainState:
    config = config.validate()
    torch.manual_seed(config.seed)
    sampler = MiniBatchSampler(records, root, persons=config.batch_persons,
                               seed=config.seed)
    rrn = RRN(config.rrn_config())
    dffn = DFFN(config.branch_config())
    heads = ClassifierHeads(sampler.num_classes)

    adam_kw = dict(betas=(config.adam_beta1, config.adam_beta2),
                   eps=config.adam_eps, weight_decay=config.weight_decay)
    opt_mse = torch.optim.Adam(rrn.parameters(), lr=config.lr_mse, **adam_kw)
    opt_reid = torch.optim.Adam(
        list(dffn.parameters()) + list(heads.parameters()),
        lr=config.lr_reid, **adam_kw)

    state = TrainState(config, rrn, dffn, heads, opt_mse, opt_reid, sampler)
    _assert_parameter_partition(state)
    return state


def _assemble_recon_batch(batch: MiniBatch, lr_standard: int):
    """Stack reconstruction inputs, MSE targets, and the 20 base images.

    Returns (mse_inputs, hr_targets, standard_targets, orig_lr, base_index,
    labels) where base_index picks, out of the concatenated reconstruction
    batch [mse_inputs; orig_lr], the rows belonging to the 20 base images in
    group order (hr, hr, lr, lr per person).
    """
    mse_inputs, hr_targets, std_targets = [], [], []
    orig_lr, base_index, labels = [], [], []
    n_variants = 1 + len(batch.groups[0].samples[0].lr_variants)   # hr + 3

    for g in batch.groups:
        for s in g.samples:
            base_index.append(len(mse_inputs))       # the HR input row
            labels.append(g.identity)
            std = s.variant(lr_standard)
            for img in (s.hr, *s.lr_variants):
                mse_inputs.append(img)
                hr_targets.append(s.hr)
                std_targets.append(std)
        for item in g.lr_items:
            orig_lr.append(item.image)
            labels.append(g.identity)

    n_mse = len(mse_inputs)
    # Original-LR rows sit after the MSE rows in the concatenated batch, but
    # base order must stay (hr, hr, lr, lr) per group.
    ordered = []
    per_person_hr = len(batch.groups[0].samples)
    per_person_lr = len(batch.groups[0].lr_items)
    for gi in range(len(batch.groups)):
        for j in range(per_person_hr):
            ordered.append(base_index[gi * per_person_hr + j])
        for j in range(per_person_lr):
            ordered.append(n_mse + gi * per_person_lr + j)
    assert n_variants * per_person_hr * len(batch.groups) == n_mse

    return (stack(mse_inputs), stack(hr_targets), stack(std_targets),
            stack(orig_lr), torch.tensor(ordered), labels)


def train_step(state: TrainState, batch: MiniBatch) -> LossRecord:
    """One forward/backward/update over a mini-batch."""
    cfg = state.config
    weights = cfg.loss_weights()
    mse_in, hr_tgt, std_tgt, orig_lr, base_idx, identities = \
        _assemble_recon_batch(batch, cfg.lr_standard)

    recon_in = torch.cat([mse_in, orig_lr])
    recon_hr, recon_lr = state.rrn(recon_in)

    n_mse = mse_in.shape[0]
    loss_hr = losses.mse_hr(recon_hr[:n_mse], hr_tgt, cfg.mse_reduction)
    loss_lr = losses.mse_lr(recon_lr[:n_mse], std_tgt, cfg.mse_reduction)
    loss_mse = losses.mse_joint(loss_hr, loss_lr, weights)

    base_hr = recon_hr[base_idx]
    base_lr = recon_lr[base_idx]
    if cfg.detach_recon:
        base_hr, base_lr = base_hr.detach(), base_lr.detach()

    class_idx = state.sampler.class_index
    labels = torch.tensor([class_idx[i] for i in identities])

    logit_groups, feature_groups = [], []
    if cfg.ablation != "lr_only":
        hr_parts = state.dffn.hr(base_hr)
        logit_groups += state.heads(hr_parts, "hr")
        feature_groups += hr_parts
    if cfg.ablation != "hr_only":
        lr_parts = state.dffn.lr(base_lr)
        logit_groups += state.heads(lr_parts, "lr")
        feature_groups += lr_parts

    loss_ce = losses.cross_entropy(logit_groups, labels)
    loss_trip = losses.triplet(feature_groups, labels, weights,
                               cfg.triplet_mining, cfg.triplet_anchor_reduction)
    loss_reid = losses.reid_loss(loss_ce, loss_trip, weights)
    total = loss_mse + loss_reid

    record = LossRecord(state.step, loss_hr.detach().item(), loss_lr.detach().item(),
                        loss_ce.detach().item(), loss_trip.detach().item(),
                        total.detach().item())
    if not math.isfinite(record.total):
        raise NumericFaultError(
            f"non-finite loss at step {state.step}: {record}",
            step=state.step, detail=dataclasses.asdict(record))

    state.opt_mse.zero_grad(set_to_none=True)
    state.opt_reid.zero_grad(set_to_none=True)
    total.backward()
    state.opt_mse.step()
    state.opt_reid.step()
    state.step += 1
    return record


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def make_payload(state: TrainState) -> dict:
    return {
        "version": ckpt.CHECKPOINT_VERSION,
        "train_config": dataclasses.asdict(state.config),
        "rrn_config": dataclasses.asdict(state.config.rrn_config()),
        "branch_config": dataclasses.asdict(state.config.branch_config()),
        "num_classes": state.heads.num_classes,
        "classes": state.sampler.classes,
        "epoch": state.epoch,
        "step": state.step,
        "model": {
            "rrn": state.rrn.state_dict(),
            "dffn": state.dffn.state_dict(),
            "heads": state.heads.state_dict(),
        },
        "optim": {
            "mse": state.opt_mse.state_dict(),
            "reid": state.opt_reid.state_dict(),
        },
        "sampler_rng": state.sampler.get_state(),
        "torch_rng": torch.get_rng_state(),
    }


def resume(checkpoint_path: str | Path, records: Sequence[ImageRecord],
           root: str | Path) -> TrainState:
    """Rebuild a TrainState from an archive; nothing is mutated on failure."""
    payload = ckpt.load_checkpoint(checkpoint_path)
    config = TrainConfig(**_tupled(payload["train_config"]))
    state = build_state(config, records, root)
    if state.heads.num_classes != payload["num_classes"]:
        raise ConfigurationError(
            f"checkpoint was trained on {payload['num_classes']} identities, "
            f"dataset has {state.heads.num_classes}")
    state.rrn.load_state_dict(payload["model"]["rrn"])
    state.dffn.load_state_dict(payload["model"]["dffn"])
    state.heads.load_state_dict(payload["model"]["heads"])
    state.opt_mse.load_state_dict(payload["optim"]["mse"])
    state.opt_reid.load_state_dict(payload["optim"]["reid"])
    state.epoch = payload["epoch"]
    state.step = payload["step"]
    state.sampler.set_state(payload["sampler_rng"])
    torch.set_rng_state(payload["torch_rng"])
    return state


def _tupled(config_dict: dict) -> dict:
    """Restore tuple-typed TrainConfig fields after (de)serialization."""
    out = dict(config_dict)
    for key, field in ((f.name, f) for f in dataclasses.fields(TrainConfig)):
        if key in out and isinstance(out[key], list):
            out[key] = tuple(out[key])
    return out


def train(config: TrainConfig, root: str | Path, out_dir: str | Path,
          records: Sequence[ImageRecord] | None = None,
          resume_from: str | Path | None = None) -> Path:
    """Run the full schedule; returns the path of the final checkpoint.

    Writes out_dir/train_metrics.tsv (one row per step: step, mse_hr, mse_lr,
    ce, triplet, total), out_dir/epochs.tsv (per-epoch means plus the
    learning rates in effect), and checkpoint archives.
    """
    config = config.validate()
    if config.num_threads > 0:
        torch.set_num_threads(config.num_threads)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if records is None:
        records = load_or_scan(root)

    if resume_from is not None:
        state = resume(resume_from, records, root)
        config = state.config
    else:
        state = build_state(config, records, root)

    mode = "a" if resume_from is not None else "w"
    metrics = open(out_dir / "train_metrics.tsv", mode, encoding="utf-8", newline="\n")
    epochs_file = open(out_dir / "epochs.tsv", mode, encoding="utf-8", newline="\n")
    if mode == "w":
        metrics.write("step\tL_mse_H\tL_mse_L\tL_ce\tL_trip\ttotal\n")
        epochs_file.write("epoch\tL_mse_H\tL_mse_L\tL_ce\tL_trip\ttotal\tlr_mse\tlr_reid\n")

    final_path = out_dir / "checkpoint.pt"
    try:
        batches = state.sampler.batches_per_epoch()
        for epoch in range(state.epoch + 1, config.epochs + 1):
            lr_mse, lr_reid = config.lr_for_epoch(epoch)
            _set_lr(state.opt_mse, lr_mse)
            _set_lr(state.opt_reid, lr_reid)

            sums = [0.0] * 5
            for _ in range(batches):
                record = train_step(state, state.sampler.sample())
                metrics.write(record.tsv_row() + "\n")
                for i, v in enumerate((record.mse_hr, record.mse_lr, record.ce,
                                       record.trip, record.total)):
                    sums[i] += v
            state.epoch = epoch

            means = "\t".join(repr(s / max(1, batches)) for s in sums)
            epochs_file.write(f"{epoch}\t{means}\t{lr_mse!r}\t{lr_reid!r}\n")
            metrics.flush()
            epochs_file.flush()

            if config.checkpoint_every and epoch % config.checkpoint_every == 0 \
                    and epoch < config.epochs:
                ckpt.save_checkpoint(make_payload(state),
                                     out_dir / f"checkpoint_epoch{epoch}.pt")
        ckpt.save_checkpoint(make_payload(state), final_path)
    finally:
        metrics.close()
        epochs_file.close()
    return final_path
