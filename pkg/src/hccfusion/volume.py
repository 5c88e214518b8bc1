"""Typed 3D volumes and binary masks with physical spacing and raw file I/O.

Volumes carry CT intensities in Hounsfield units as float64 in memory and
INT16 on disk; masks are UINT8 on disk (0 = background, >= 1 = foreground).
Arrays are stored z-slowest, i.e. ``data[z, y, x]``, which serializes to the
x-fastest raw layout used by the on-disk format.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

HU_AIR = -1024.0

_INT16_MIN = -32768
_INT16_MAX = 32767


@dataclass(frozen=True)
class Spacing:
    """Physical voxel size in millimeters along x, y, z.

    dz routinely differs from dx, dy (CT stacks are z-anisotropic).
    """

    dx: float
    dy: float
    dz: float

    def __post_init__(self) -> None:
        if not all(np.isfinite(v) and v > 0 for v in (self.dx, self.dy, self.dz)):
            raise ValueError(f"spacing components must be positive, got {self}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)


def _check_array(data: np.ndarray) -> None:
    if data.ndim != 3:
        raise ValueError(f"expected a 3D array, got ndim={data.ndim}")
    if any(n < 1 for n in data.shape):
        raise ValueError(f"all dims must be >= 1, got shape {data.shape}")


@dataclass(frozen=True)
class Volume3D:
    """Scalar 3D image with per-axis physical spacing.

    ``data`` holds Hounsfield units as float64, indexed ``[z, y, x]``.
    ``origin_z`` is the physical z-offset (mm) of slice 0, used as
    registration bookkeeping.
    """

    data: np.ndarray
    spacing: Spacing
    origin_z: float = 0.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        _check_array(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        """Voxel counts as (nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)


@dataclass(frozen=True)
class Mask3D:
    """Binary voxel labels on the same kind of grid as Volume3D.

    Stored as uint8 so that multi-label exports round-trip bit-exactly;
    any value >= 1 counts as foreground.
    """

    data: np.ndarray
    spacing: Spacing
    origin_z: float = 0.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.dtype != np.uint8:
            if arr.dtype == np.bool_:
                arr = arr.astype(np.uint8)
            else:
                if not np.all((arr >= 0) & (arr <= 255) & (arr == np.floor(arr))):
                    raise ValueError("mask values must be uint8-representable")
                arr = arr.astype(np.uint8)
        _check_array(arr)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def foreground(self) -> np.ndarray:
        """Boolean foreground array (any label >= 1)."""
        return self.data > 0

    def count(self) -> int:
        return int(np.count_nonzero(self.data))


def same_geometry(a: Volume3D | Mask3D, b: Volume3D | Mask3D) -> bool:
    """True when dims, spacing and origin_z agree (spacing to 1e-9 relative)."""
    if a.dims != b.dims:
        return False
    sa, sb = a.spacing.as_tuple(), b.spacing.as_tuple()
    if not all(abs(x - y) <= 1e-9 * max(abs(x), abs(y)) for x, y in zip(sa, sb)):
        return False
    return abs(a.origin_z - b.origin_z) <= 1e-6


def check_geometry(a: Volume3D | Mask3D, b: Volume3D | Mask3D) -> None:
    """Raise DataError on any geometry mismatch; never silently broadcast."""
    if not same_geometry(a, b):
        raise DataError(
            f"geometry mismatch: dims {a.dims} spacing {a.spacing.as_tuple()} "
            f"origin_z {a.origin_z} vs dims {b.dims} spacing {b.spacing.as_tuple()} "
            f"origin_z {b.origin_z}"
        )


def region_values(v: Volume3D, m: Mask3D) -> np.ndarray:
    """Intensities of ``v`` at the foreground voxels of ``m``.

    Returns a 1D float64 array whose length equals the mask popcount;
    an empty mask yields an empty array.
    """
    check_geometry(v, m)
    return v.data[m.foreground]


# ---------------------------------------------------------------------------
# File I/O: <name>.hdr (UTF-8 key=value lines) + <name>.raw (little-endian,
# x-fastest). ElementType INT16 for volumes, UINT8 for masks.
# ---------------------------------------------------------------------------

_ELEMENT_DTYPES = {"INT16": np.dtype("<i2"), "UINT8": np.dtype("<u1")}


def _header_path(path: str | os.PathLike) -> str:
    path = os.fspath(path)
    return path if path.endswith(".hdr") else path + ".hdr"


def _format_float(x: float) -> str:
    return repr(float(x))


def write_volume(v: Volume3D | Mask3D, path: str | os.PathLike) -> str:
    """Write ``v`` as a header + raw pair; returns the header path.

    ``path`` may be the header path or the extension-free base name.
    Volume intensities must be integral and inside the INT16 range
    (quantize first; on-disk float volumes are unsupported).
    """
    hdr_path = _header_path(path)
    base = hdr_path[: -len(".hdr")]
    raw_path = base + ".raw"

    if isinstance(v, Mask3D):
        element_type = "UINT8"
        raw = v.data
    elif isinstance(v, Volume3D):
        element_type = "INT16"
        data = v.data
        if not np.all(np.isfinite(data)):
            raise DataError("volume contains non-finite intensities")
        if np.any(data != np.rint(data)) or np.any(data < _INT16_MIN) or np.any(data > _INT16_MAX):
            raise DataError("volume intensities must be integral INT16 values on write")
        raw = data.astype("<i2")
    else:
        raise TypeError(f"unsupported type {type(v).__name__}")

    nx, ny, nz = v.dims
    sp = v.spacing
    lines = [
        "NDims=3",
        f"DimSize={nx} {ny} {nz}",
        f"ElementSpacing={_format_float(sp.dx)} {_format_float(sp.dy)} {_format_float(sp.dz)}",
        f"OriginZ={_format_float(v.origin_z)}",
        f"ElementType={element_type}",
        f"ElementDataFile={os.path.basename(raw_path)}",
    ]
    with open(hdr_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    np.ascontiguousarray(raw).tofile(raw_path)
    return hdr_path


def _parse_header(hdr_path: str) -> dict[str, str]:
    try:
        with open(hdr_path, "r", encoding="utf-8") as f:
            text = f.read()
    except UnicodeDecodeError as exc:
        raise DataError(f"malformed header {hdr_path}: not UTF-8 ({exc})") from exc
    fields: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"malformed header {hdr_path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    return fields


def read_volume(path: str | os.PathLike) -> Volume3D | Mask3D:
    """Read a header + raw pair; INT16 yields a Volume3D, UINT8 a Mask3D."""
    hdr_path = _header_path(path)
    if not os.path.exists(hdr_path):
        raise FileNotFoundError(hdr_path)
    fields = _parse_header(hdr_path)

    for key in ("NDims", "DimSize", "ElementSpacing", "ElementType", "ElementDataFile"):
        if key not in fields:
            raise DataError(f"malformed header {hdr_path}: missing {key}")
    if fields["NDims"] != "3":
        raise DataError(f"malformed header {hdr_path}: NDims={fields['NDims']} unsupported")

    try:
        nx, ny, nz = (int(t) for t in fields["DimSize"].split())
        dx, dy, dz = (float(t) for t in fields["ElementSpacing"].split())
        origin_z = float(fields.get("OriginZ", "0.0"))
    except ValueError as exc:
        raise DataError(f"malformed header {hdr_path}: {exc}") from exc

    element_type = fields["ElementType"]
    if element_type not in _ELEMENT_DTYPES:
        raise DataError(f"unsupported element type {element_type!r} in {hdr_path}")
    dtype = _ELEMENT_DTYPES[element_type]

    raw_path = os.path.join(os.path.dirname(hdr_path), fields["ElementDataFile"])
    if not os.path.exists(raw_path):
        raise DataError(f"raw file {raw_path} referenced by {hdr_path} does not exist")
    expected = nx * ny * nz
    actual = os.path.getsize(raw_path) // dtype.itemsize
    if os.path.getsize(raw_path) != expected * dtype.itemsize:
        raise DataError(
            f"data length mismatch in {raw_path}: header declares {expected} voxels, "
            f"raw file holds {actual}"
        )

    flat = np.fromfile(raw_path, dtype=dtype)
    data = flat.reshape(nz, ny, nx)
    spacing = Spacing(dx, dy, dz)
    if element_type == "INT16":
        return Volume3D(data=data.astype(np.float64), spacing=spacing, origin_z=origin_z)
    return Mask3D(data=data, spacing=spacing, origin_z=origin_z)


def read_mask(path: str | os.PathLike) -> Mask3D:
    """Read a mask file, rejecting volume element types."""
    out = read_volume(path)
    if not isinstance(out, Mask3D):
        raise DataError(f"{os.fspath(path)}: expected UINT8 mask, found INT16 volume")
    return out
