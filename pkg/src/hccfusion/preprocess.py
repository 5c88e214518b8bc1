"""Phase registration, grid resampling, and lesion-centered patch extraction.

The pipeline for one case: align arterial/delayed to the portal venous phase
by an integer z-slice translation, resample them onto the portal grid, then
resample every member to the common (0.76, 0.76, 2.00) mm grid. Patches of
96 x 96 x 24 voxels are cut around the lesion centroid for the deep models.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cases import LiradsFlags, PhaseSet
from .errors import DataError
from .volume import HU_AIR, Mask3D, Spacing, Volume3D

TARGET_SPACING = Spacing(0.76, 0.76, 2.00)
PATCH_DIMS = (96, 96, 24)  # (nx, ny, nz)


class PatchMode(str, Enum):
    HCC = "hcc"
    APHE = "aphe"
    EC = "ec"
    NPW = "npw"


def _zcentroid_mm(mask: Mask3D) -> float:
    z_idx = np.nonzero(mask.foreground)[0]
    if z_idx.size == 0:
        raise DataError("empty liver mask, cannot register")
    return mask.origin_z + float(z_idx.mean()) * mask.spacing.dz


def register_z(moving_liver: Mask3D, fixed_liver: Mask3D) -> int:
    """Integer z-shift (in moving-image slices) aligning liver z-centroids.

    Positive means the moving content must move toward higher slice indices.
    """
    zc_moving = _zcentroid_mm(moving_liver)
    zc_fixed = _zcentroid_mm(fixed_liver)
    return int(np.rint((zc_fixed - zc_moving) / moving_liver.spacing.dz))


def apply_z_shift(v: Volume3D | Mask3D, shift: int, fill: float | None = None):
    """Translate content along z: output slice k = input slice k - shift.

    Slices shifted in from outside the stack are filled with ``fill``
    (default -1024 HU for volumes, 0 for masks). origin_z is preserved;
    registration bookkeeping is the caller's job.
    """
    nz = v.data.shape[0]
    if abs(shift) >= nz:
        raise ValueError(f"|shift|={abs(shift)} must be < nz={nz}")
    if isinstance(v, Mask3D):
        fill_value = 0 if fill is None else int(fill)
        out = np.full_like(v.data, fill_value)
    else:
        fill_value = HU_AIR if fill is None else float(fill)
        out = np.full(v.data.shape, fill_value, dtype=np.float64)
    if shift >= 0:
        out[shift:] = v.data[: nz - shift]
    else:
        out[: nz + shift] = v.data[-shift:]
    return dataclasses.replace(v, data=out)


def _nearest_indices(n_in: int, s_in: float, n_out: int, s_out: float, offset: float) -> np.ndarray:
    # Ties (exact half-voxel positions) break toward the lower index.
    centers = offset + np.arange(n_out) * s_out
    idx = np.ceil(centers / s_in - 0.5).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def resample_nn(
    v: Volume3D | Mask3D,
    target_spacing: Spacing,
    target_dims: tuple[int, int, int],
    origin_z: float | None = None,
):
    """Nearest-neighbor resample onto a new grid.

    Grids share the physical frame: in x and y, voxel 0 sits at 0; in z the
    output grid starts at ``origin_z`` (default: the input's). Each output
    voxel copies the input voxel whose center is nearest, so no new values
    are ever invented.
    """
    nx_t, ny_t, nz_t = target_dims
    if min(nx_t, ny_t, nz_t) < 1:
        raise ValueError(f"degenerate target dims {target_dims}")
    if origin_z is None:
        origin_z = v.origin_z
    s = v.spacing
    ix = _nearest_indices(v.dims[0], s.dx, nx_t, target_spacing.dx, 0.0)
    iy = _nearest_indices(v.dims[1], s.dy, ny_t, target_spacing.dy, 0.0)
    iz = _nearest_indices(v.dims[2], s.dz, nz_t, target_spacing.dz, origin_z - v.origin_z)
    out = v.data[np.ix_(iz, iy, ix)]
    return dataclasses.replace(v, data=out, spacing=target_spacing, origin_z=origin_z)


def _dims_for_spacing(v: Volume3D, target: Spacing) -> tuple[int, int, int]:
    nx, ny, nz = v.dims
    s = v.spacing
    return (
        max(1, int(np.rint(nx * s.dx / target.dx))),
        max(1, int(np.rint(ny * s.dy / target.dy))),
        max(1, int(np.rint(nz * s.dz / target.dz))),
    )


def preprocess_case(
    case: PhaseSet,
    target_spacing: Spacing = TARGET_SPACING,
    moving_livers: dict[str, Mask3D] | None = None,
) -> PhaseSet:
    """Register arterial/delayed to portal and resample all members to a
    common grid at ``target_spacing``.

    When ``moving_livers`` provides per-phase liver masks (keys "arterial",
    "delayed"), the z-shift comes from liver centroid registration; otherwise
    it falls back to the origin_z metadata of each phase.
    """
    if case.delayed is None:
        raise DataError(f"case {case.lesion_id}: missing delayed phase")
    portal = case.portal
    moving_livers = moving_livers or {}

    def align(phase: Volume3D, name: str) -> Volume3D:
        liver = moving_livers.get(name)
        if liver is not None:
            shift = register_z(liver, case.liver_mask)
        else:
            shift = int(np.rint((phase.origin_z - portal.origin_z) / phase.spacing.dz))
        if shift != 0:
            phase = apply_z_shift(phase, shift)
        phase = dataclasses.replace(phase, origin_z=portal.origin_z)
        return resample_nn(phase, portal.spacing, portal.dims, origin_z=portal.origin_z)

    arterial = align(case.arterial, "arterial")
    delayed = align(case.delayed, "delayed")

    dims = _dims_for_spacing(portal, target_spacing)

    def to_common(member):
        return resample_nn(member, target_spacing, dims, origin_z=portal.origin_z)

    return PhaseSet(
        arterial=to_common(arterial),
        portal=to_common(portal),
        delayed=to_common(delayed),
        liver_mask=to_common(case.liver_mask),
        lesion_mask=to_common(case.lesion_mask),
        lesion_id=case.lesion_id,
        label=case.label,
        lirads=case.lirads,
    )


# ---------------------------------------------------------------------------
# Patch extraction
# ---------------------------------------------------------------------------

COVERAGE_THRESHOLD = 0.95


@dataclass(frozen=True)
class Patch:
    """Fixed-size multi-channel crop around the lesion centroid.

    ``data`` is (C, nz, ny, nx) with channels in fixed order: arterial,
    portal, (delayed,) lesion mask. C is 3 for APHE and 4 otherwise.
    """

    data: np.ndarray
    channel_names: tuple[str, ...]
    spacing: Spacing
    lesion_coverage: float
    coverage_warning: bool
    lesion_id: str
    mode: PatchMode
    label: int | None = None
    lirads: LiradsFlags | None = None

    def __post_init__(self) -> None:
        if self.data.ndim != 4:
            raise ValueError("patch data must be (C, nz, ny, nx)")
        if self.data.shape[0] not in (3, 4):
            raise ValueError(f"channel count {self.data.shape[0]} not in {{3, 4}}")
        if self.data.shape[0] != len(self.channel_names):
            raise ValueError("channel_names length must match channel count")


def _window_start(centroid: int, size: int, n: int) -> int:
    return int(np.clip(centroid - size // 2, 0, n - size))


def extract_patch(case: PhaseSet, mode: PatchMode | str) -> Patch:
    """Cut a 96x96x24 window centered on the lesion, clamped in-bounds.

    Coverage below 95% of the lesion sets a warning flag instead of
    rejecting the patch.
    """
    mode = PatchMode(mode)
    if mode is not PatchMode.APHE and case.delayed is None:
        raise DataError(f"case {case.lesion_id}: mode {mode.value} needs the delayed phase")
    if not case.on_common_grid():
        raise DataError(f"case {case.lesion_id}: members not on a common grid; preprocess first")

    fg = case.lesion_mask.foreground
    zz, yy, xx = np.nonzero(fg)
    if zz.size == 0:
        raise DataError(f"case {case.lesion_id}: empty lesion mask")

    nx, ny, nz = case.portal.dims
    px, py, pz = PATCH_DIMS
    if nx < px or ny < py or nz < pz:
        raise DataError(
            f"case {case.lesion_id}: volume dims {(nx, ny, nz)} smaller than patch {PATCH_DIMS}"
        )

    cx = int(np.rint(xx.mean()))
    cy = int(np.rint(yy.mean()))
    cz = int(np.rint(zz.mean()))
    x0 = _window_start(cx, px, nx)
    y0 = _window_start(cy, py, ny)
    z0 = _window_start(cz, pz, nz)
    sl = (slice(z0, z0 + pz), slice(y0, y0 + py), slice(x0, x0 + px))

    inside = int(np.count_nonzero(fg[sl]))
    coverage = inside / int(zz.size)

    if mode is PatchMode.APHE:
        names = ("arterial", "portal", "lesion_mask")
        channels = [case.arterial.data[sl], case.portal.data[sl]]
    else:
        names = ("arterial", "portal", "delayed", "lesion_mask")
        channels = [case.arterial.data[sl], case.portal.data[sl], case.delayed.data[sl]]
    channels.append(fg[sl].astype(np.float64))

    return Patch(
        data=np.stack(channels, axis=0),
        channel_names=names,
        spacing=case.portal.spacing,
        lesion_coverage=coverage,
        coverage_warning=coverage < COVERAGE_THRESHOLD,
        lesion_id=case.lesion_id,
        mode=mode,
        label=case.label,
        lirads=case.lirads,
    )


def write_patch(patch: Patch, path: str | os.PathLike) -> str:
    """Write a patch as NDims=4 header + raw (INT16) plus a JSON sidecar."""
    path = os.fspath(path)
    hdr_path = path if path.endswith(".hdr") else path + ".hdr"
    base = hdr_path[: -len(".hdr")]

    data = np.rint(patch.data)
    if np.any(np.abs(data) > 32767):
        raise DataError("patch intensities exceed INT16 range")
    c, pz, py, px = patch.data.shape
    sp = patch.spacing
    lines = [
        "NDims=4",
        f"DimSize={px} {py} {pz} {c}",
        f"ElementSpacing={sp.dx!r} {sp.dy!r} {sp.dz!r}",
        "ElementType=INT16",
        f"ElementDataFile={os.path.basename(base)}.raw",
    ]
    with open(hdr_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    data.astype("<i2").tofile(base + ".raw")

    sidecar = {
        "lesion_id": patch.lesion_id,
        "mode": patch.mode.value,
        "coverage": patch.lesion_coverage,
        "coverage_warning": patch.coverage_warning,
        "label": patch.label,
        "lirads": patch.lirads.as_dict() if patch.lirads is not None else None,
        "channel_names": list(patch.channel_names),
    }
    with open(base + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
    return hdr_path


def read_patch(path: str | os.PathLike) -> Patch:
    """Read back a patch written by write_patch."""
    path = os.fspath(path)
    hdr_path = path if path.endswith(".hdr") else path + ".hdr"
    base = hdr_path[: -len(".hdr")]
    fields: dict[str, str] = {}
    with open(hdr_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                fields[key.strip()] = value.strip()
    if fields.get("NDims") != "4":
        raise DataError(f"{hdr_path}: expected NDims=4 patch file")
    px, py, pz, c = (int(t) for t in fields["DimSize"].split())
    dx, dy, dz = (float(t) for t in fields["ElementSpacing"].split())
    raw = np.fromfile(base + ".raw", dtype="<i2")
    if raw.size != px * py * pz * c:
        raise DataError(f"{base}.raw: data length mismatch")
    data = raw.reshape(c, pz, py, px).astype(np.float64)
    with open(base + ".json", "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    lirads = sidecar.get("lirads")
    return Patch(
        data=data,
        channel_names=tuple(sidecar["channel_names"]),
        spacing=Spacing(dx, dy, dz),
        lesion_coverage=float(sidecar["coverage"]),
        coverage_warning=bool(sidecar["coverage_warning"]),
        lesion_id=sidecar["lesion_id"],
        mode=PatchMode(sidecar["mode"]),
        label=sidecar.get("label"),
        lirads=LiradsFlags(**lirads) if lirads is not None else None,
    )
