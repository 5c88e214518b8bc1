"""Per-lesion case bundles and the JSON case manifest.

A manifest is a JSON array with one object per case:

    {"lesion_id": "...", "arterial": "a.hdr", "portal": "p.hdr",
     "delayed": "d.hdr", "liver_mask": "liver.hdr", "lesion_mask": "lesion.hdr",
     "label": 1, "lirads": {"aphe": 1, "ec": 0, "npw": 1}}

Paths are relative to the manifest's directory. ``delayed`` and the optional
``arterial_liver`` / ``delayed_liver`` registration masks may be omitted.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .volume import Mask3D, Volume3D, read_mask, read_volume, same_geometry, write_volume


@dataclass(frozen=True)
class LiradsFlags:
    """Binary presence flags for the three major imaging criteria."""

    aphe: int
    ec: int
    npw: int

    def __post_init__(self) -> None:
        for name in ("aphe", "ec", "npw"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"lirads flag {name} must be 0 or 1")

    def as_dict(self) -> dict[str, int]:
        return {"aphe": self.aphe, "ec": self.ec, "npw": self.npw}


@dataclass(frozen=True)
class PhaseSet:
    """Registered multi-phase volumes plus masks for one lesion case."""

    arterial: Volume3D
    portal: Volume3D
    delayed: Volume3D | None
    liver_mask: Mask3D
    lesion_mask: Mask3D
    lesion_id: str
    label: int | None = None
    lirads: LiradsFlags | None = None

    def members(self) -> list[Volume3D | Mask3D]:
        out: list[Volume3D | Mask3D] = [self.arterial, self.portal]
        if self.delayed is not None:
            out.append(self.delayed)
        out.extend([self.liver_mask, self.lesion_mask])
        return out

    def on_common_grid(self) -> bool:
        ref = self.portal
        return all(same_geometry(ref, m) for m in self.members())

    def check_masks(self) -> None:
        """Warn (not fail) when the lesion leaks outside the liver mask."""
        outside = np.count_nonzero(self.lesion_mask.foreground & ~self.liver_mask.foreground)
        if outside:
            warnings.warn(
                f"case {self.lesion_id}: {outside} lesion voxels outside the liver mask",
                stacklevel=2,
            )


@dataclass
class CaseRecord:
    """Manifest entry: file paths and labels for one case."""

    lesion_id: str
    arterial: str
    portal: str
    liver_mask: str
    lesion_mask: str
    delayed: str | None = None
    label: int | None = None
    lirads: LiradsFlags | None = None
    arterial_liver: str | None = None
    delayed_liver: str | None = None

    def to_json_obj(self) -> dict:
        obj: dict = {
            "lesion_id": self.lesion_id,
            "arterial": self.arterial,
            "portal": self.portal,
            "liver_mask": self.liver_mask,
            "lesion_mask": self.lesion_mask,
        }
        if self.delayed is not None:
            obj["delayed"] = self.delayed
        if self.label is not None:
            obj["label"] = self.label
        if self.lirads is not None:
            obj["lirads"] = self.lirads.as_dict()
        if self.arterial_liver is not None:
            obj["arterial_liver"] = self.arterial_liver
        if self.delayed_liver is not None:
            obj["delayed_liver"] = self.delayed_liver
        return obj


def _record_from_obj(obj: dict, manifest_path: str) -> CaseRecord:
    try:
        lesion_id = obj["lesion_id"]
        record = CaseRecord(
            lesion_id=str(lesion_id),
            arterial=obj["arterial"],
            portal=obj["portal"],
            liver_mask=obj["liver_mask"],
            lesion_mask=obj["lesion_mask"],
            delayed=obj.get("delayed"),
            label=obj.get("label"),
            arterial_liver=obj.get("arterial_liver"),
            delayed_liver=obj.get("delayed_liver"),
        )
    except KeyError as exc:
        raise DataError(f"{manifest_path}: case entry missing key {exc}") from exc
    if record.label is not None and record.label not in (0, 1):
        raise DataError(f"{manifest_path}: case {lesion_id}: label must be 0 or 1")
    lirads = obj.get("lirads")
    if lirads is not None:
        try:
            record.lirads = LiradsFlags(
                aphe=int(lirads["aphe"]), ec=int(lirads["ec"]), npw=int(lirads["npw"])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{manifest_path}: case {lesion_id}: bad lirads object") from exc
    return record


def load_manifest(path: str | os.PathLike) -> list[CaseRecord]:
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            entries = json.load(f)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(entries, list):
        raise DataError(f"{path}: manifest must be a JSON array of case objects")
    records = [_record_from_obj(obj, path) for obj in entries]
    seen: set[str] = set()
    for r in records:
        if r.lesion_id in seen:
            raise DataError(f"{path}: duplicate lesion_id {r.lesion_id!r}")
        seen.add(r.lesion_id)
    return records


def save_manifest(records: list[CaseRecord], path: str | os.PathLike) -> None:
    path = os.fspath(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump([r.to_json_obj() for r in records], f, indent=2, sort_keys=True)
        f.write("\n")


def load_case(record: CaseRecord, base_dir: str | os.PathLike) -> PhaseSet:
    """Load all volumes and masks of a case; paths resolve against base_dir."""
    base = os.fspath(base_dir)

    def vol(rel: str) -> Volume3D:
        out = read_volume(os.path.join(base, rel))
        if not isinstance(out, Volume3D):
            raise DataError(f"case {record.lesion_id}: {rel} is a mask, expected a volume")
        return out

    delayed = vol(record.delayed) if record.delayed else None
    return PhaseSet(
        arterial=vol(record.arterial),
        portal=vol(record.portal),
        delayed=delayed,
        liver_mask=read_mask(os.path.join(base, record.liver_mask)),
        lesion_mask=read_mask(os.path.join(base, record.lesion_mask)),
        lesion_id=record.lesion_id,
        label=record.label,
        lirads=record.lirads,
    )


def save_case(case: PhaseSet, out_dir: str | os.PathLike) -> CaseRecord:
    """Write all members of a case under out_dir; returns a manifest record."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    cid = case.lesion_id

    def put(member: Volume3D | Mask3D, tag: str) -> str:
        name = f"{cid}_{tag}"
        write_volume(member, os.path.join(out_dir, name))
        return name + ".hdr"

    return CaseRecord(
        lesion_id=cid,
        arterial=put(case.arterial, "arterial"),
        portal=put(case.portal, "portal"),
        delayed=put(case.delayed, "delayed") if case.delayed is not None else None,
        liver_mask=put(case.liver_mask, "liver"),
        lesion_mask=put(case.lesion_mask, "lesion"),
        label=case.label,
        lirads=case.lirads,
    )
