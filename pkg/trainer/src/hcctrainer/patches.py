"""Reader for the exported patch interchange format.

Each patch is a text header (NDims=4, DimSize=px py pz c, INT16 raw,
x-fastest layout) plus a JSON sidecar carrying lesion_id, mode, label and
the per-criterion flags. Intensity channels are clipped to [-200, 400] HU
and min-max scaled to [0, 1] per patch before training; the lesion-mask
channel stays binary.
"""

from __future__ import annotations

import glob
import json
import os
from dataclasses import dataclass

import numpy as np
import torch

from .errors import TrainerError

HU_CLIP = (-200.0, 400.0)
CRITERIA = ("hcc", "aphe", "ec", "npw")


@dataclass(frozen=True)
class PatchRecord:
    lesion_id: str
    hdr_path: str
    mode: str
    channel_names: tuple[str, ...]
    label: int | None
    lirads: dict | None

    def criterion_label(self, criterion: str) -> int:
        if criterion == "hcc":
            if self.label is None:
                raise TrainerError(f"{self.lesion_id}: sidecar has no label")
            return int(self.label)
        if criterion not in CRITERIA:
            raise TrainerError(f"unknown criterion {criterion!r}")
        if self.lirads is None or criterion not in self.lirads:
            raise TrainerError(f"{self.lesion_id}: sidecar has no {criterion} flag")
        return int(self.lirads[criterion])


def _parse_header(hdr_path: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    with open(hdr_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                fields[key.strip()] = value.strip()
    return fields


def scan_patches(patch_dir: str | os.PathLike) -> list[PatchRecord]:
    """All patches in a directory, sorted by lesion_id."""
    patch_dir = os.fspath(patch_dir)
    records = []
    for sidecar_path in sorted(glob.glob(os.path.join(patch_dir, "*.json"))):
        with open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
        hdr_path = sidecar_path[: -len(".json")] + ".hdr"
        if not os.path.exists(hdr_path):
            raise TrainerError(f"{sidecar_path}: matching header {hdr_path} is missing")
        records.append(
            PatchRecord(
                lesion_id=sidecar["lesion_id"],
                hdr_path=hdr_path,
                mode=sidecar["mode"],
                channel_names=tuple(sidecar["channel_names"]),
                label=sidecar.get("label"),
                lirads=sidecar.get("lirads"),
            )
        )
    if not records:
        raise TrainerError(f"no patch sidecars found in {patch_dir}")
    ids = [r.lesion_id for r in records]
    if len(set(ids)) != len(ids):
        raise TrainerError(f"{patch_dir}: duplicate lesion_ids among patches")
    return records


def read_patch_array(hdr_path: str) -> np.ndarray:
    """Raw patch data as float32 (C, D, H, W)."""
    fields = _parse_header(hdr_path)
    if fields.get("NDims") != "4":
        raise TrainerError(f"{hdr_path}: expected NDims=4")
    if fields.get("ElementType") != "INT16":
        raise TrainerError(f"{hdr_path}: expected INT16 payload")
    px, py, pz, c = (int(t) for t in fields["DimSize"].split())
    raw_path = os.path.join(os.path.dirname(hdr_path), fields["ElementDataFile"])
    raw = np.fromfile(raw_path, dtype="<i2")
    if raw.size != px * py * pz * c:
        raise TrainerError(f"{raw_path}: payload does not match DimSize")
    return raw.reshape(c, pz, py, px).astype(np.float32)


def load_tensor(record: PatchRecord) -> torch.Tensor:
    """Normalized patch tensor (C, D, H, W), ready for the networks."""
    data = read_patch_array(record.hdr_path)
    if len(record.channel_names) != data.shape[0]:
        raise TrainerError(f"{record.hdr_path}: channel_names disagree with payload")
    out = np.empty_like(data)
    for i, name in enumerate(record.channel_names):
        channel = data[i]
        if name == "lesion_mask":
            out[i] = (channel > 0).astype(np.float32)
            continue
        channel = np.clip(channel, *HU_CLIP)
        lo, hi = float(channel.min()), float(channel.max())
        out[i] = (channel - lo) / (hi - lo) if hi > lo else np.zeros_like(channel)
    return torch.from_numpy(out)


def load_batch(records: list[PatchRecord]) -> torch.Tensor:
    return torch.stack([load_tensor(r) for r in records], dim=0)
