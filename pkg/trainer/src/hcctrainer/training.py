"""Per-fold training of one criterion model on exported patches.

The fold assignment reimplements the evaluation harness's stratified deal
(sorted ids, one seeded generator, positives then negatives, round-robin)
so that probs_fold{j}.csv always comes from a model that never saw fold j;
a contract test on the consumer side keeps the two implementations aligned.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .augment import augment_batch
from .backbone import Backbone3D, BackboneSpec, build_backbone
from .errors import TrainerError
from .patches import CRITERIA, PatchRecord, load_batch

DEFAULTS_NOTE = "batch 32, 600 epochs, lr 1e-5, weight decay 1e-3 (AdamW)"


@dataclass
class TrainConfig:
    criterion: str = "hcc"
    backbone: str = "tiny"
    fold: int | None = 0  # None trains on every record (capacity checks)
    k: int = 5
    batch_size: int = 32
    epochs: int = 600
    lr: float = 1e-5
    weight_decay: float = 1e-3
    augment: bool = True
    seed: int = 0
    target_accuracy: float | None = None  # early exit once training accuracy reaches it

    def __post_init__(self) -> None:
        if self.criterion not in CRITERIA:
            raise TrainerError(f"criterion must be one of {CRITERIA}")
        if self.fold is not None and not 0 <= self.fold < self.k:
            raise TrainerError(f"fold {self.fold} outside 0..{self.k - 1}")

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise TrainerError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def stratified_fold_assignments(labels: dict[str, int], k: int, seed: int) -> dict[str, int]:
    """Seeded stratified round-robin deal, matching the evaluation harness."""
    if k < 2:
        raise TrainerError("k must be >= 2")
    ids = sorted(labels)
    pos = [i for i in ids if labels[i] == 1]
    neg = [i for i in ids if labels[i] == 0]
    for name, members in (("positive", pos), ("negative", neg)):
        if len(members) < k:
            raise TrainerError(f"{name} class has {len(members)} members but k={k}")
    rng = np.random.default_rng(seed)
    assignments: dict[str, int] = {}
    for members in (pos, neg):
        order = rng.permutation(len(members))
        for deal, idx in enumerate(order):
            assignments[members[idx]] = deal % k
    return assignments


@dataclass
class TrainResult:
    model: Backbone3D
    config: TrainConfig
    train_ids: list[str]
    val_ids: list[str]
    epoch_losses: list[float] = field(default_factory=list)
    final_accuracy: float = 0.0

    def save(self, path) -> None:
        torch.save(
            {
                "state_dict": self.model.state_dict(),
                "backbone": self.model.spec.name,
                "in_channels": self.model.spec.in_channels,
                "config": dataclasses.asdict(self.config),
                "train_ids": self.train_ids,
                "epoch_losses": self.epoch_losses,
                "final_accuracy": self.final_accuracy,
            },
            path,
        )


def load_checkpoint(path) -> Backbone3D:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    model = build_backbone(payload["backbone"], in_channels=payload["in_channels"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model


def _check_no_leakage(train_ids: list[str], val_ids: list[str]) -> None:
    leaked = set(train_ids) & set(val_ids)
    if leaked:
        raise TrainerError(f"fold leakage: {sorted(leaked)[:5]} appear in train and validation")


def train(config: TrainConfig, records: list[PatchRecord]) -> TrainResult:
    """Train one criterion model on the records outside config.fold.

    Stratification always uses the case label so every criterion model of a
    fold shares the same split.
    """
    by_id = {r.lesion_id: r for r in records}
    if config.fold is None:
        train_ids = sorted(by_id)
        val_ids: list[str] = []
    else:
        case_labels = {r.lesion_id: r.criterion_label("hcc") for r in records}
        assignments = stratified_fold_assignments(case_labels, config.k, config.seed)
        train_ids = sorted(i for i, f in assignments.items() if f != config.fold)
        val_ids = sorted(i for i, f in assignments.items() if f == config.fold)
    _check_no_leakage(train_ids, val_ids)

    y = {i: by_id[i].criterion_label(config.criterion) for i in train_ids}
    if len(set(y.values())) < 2:
        raise TrainerError(
            f"criterion {config.criterion}: training folds hold a single class"
        )

    torch.manual_seed(config.seed)
    in_channels = len(records[0].channel_names)
    model = build_backbone(BackboneSpec(name=config.backbone, in_channels=in_channels))
    model.train()
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    loss_fn = nn.CrossEntropyLoss()
    shuffler = torch.Generator().manual_seed(config.seed)
    aug_gen = torch.Generator().manual_seed(config.seed + 1)

    # patches are small enough to keep resident; one disk pass total
    tensors = load_batch([by_id[i] for i in train_ids])
    targets = torch.tensor([y[i] for i in train_ids], dtype=torch.long)

    result = TrainResult(model=model, config=config, train_ids=train_ids, val_ids=val_ids)
    n = len(train_ids)
    for _ in range(config.epochs):
        order = torch.randperm(n, generator=shuffler)
        epoch_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = tensors[idx], targets[idx]
            if config.augment:
                xb = augment_batch(xb, aug_gen)
            optimizer.zero_grad()
            logits = model.logits(xb)
            loss = loss_fn(logits, yb)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(idx)
            correct += int((logits.argmax(dim=1) == yb).sum())
        result.epoch_losses.append(epoch_loss / n)
        result.final_accuracy = correct / n
        if config.target_accuracy is not None and result.final_accuracy >= config.target_accuracy:
            break
    model.eval()
    return result
