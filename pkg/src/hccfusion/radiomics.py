"""Handcrafted contrast features for liver lesions on multi-phase CT.

Three region statistics mirror how radiologists read the major criteria:

* ``f_aphe``: lesion-minus-parenchyma median HU on the arterial phase
  (hyper-enhancement shows up as a positive difference).
* ``f_ec``: inner-minus-border energy on the arterial phase. A bright
  enhancing capsule makes the border outshine the core, so the value
  goes negative.
* ``f_npw``: lesion-minus-parenchyma median HU on the portal venous
  phase (washout shows up as a negative difference).

Plus ``size_mm``, the maximum in-plane Feret diameter of the lesion.

Convention note: "energy" here is the MEAN of squared HU over the region,
not the sum. The mean keeps the value independent of region cardinality,
so border thickness cannot dominate the contrast signal. Sum-of-squares is
the other common convention; switching would rescale f_ec by region size.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import QhullError, ConvexHull
from scipy.spatial.distance import pdist
from sklearn.base import BaseEstimator, TransformerMixin

from .cases import PhaseSet
from .errors import DataError
from .volume import Mask3D, Spacing, Volume3D, check_geometry, region_values

# In-plane 4-connectivity; border extraction is 2D per slice because CT
# z-spacing is ~2.6x the in-plane spacing and 3D erosion would eat thin
# lesions along z.
_CROSS_2D = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def median_hu(v: Volume3D, m: Mask3D) -> float:
    """Median HU over the masked region; even counts average the middle two."""
    values = region_values(v, m)
    if values.size == 0:
        raise DataError("median over an empty region")
    return float(np.median(values))


def energy_hu(v: Volume3D, m: Mask3D) -> float:
    """Mean of squared HU over the masked region (see module note)."""
    values = region_values(v, m)
    if values.size == 0:
        raise DataError("energy over an empty region")
    return float(np.mean(values * values))


def _erode_slices(fg: np.ndarray, iterations: int) -> np.ndarray:
    out = np.zeros_like(fg)
    for k in range(fg.shape[0]):
        if fg[k].any():
            out[k] = ndimage.binary_erosion(fg[k], structure=_CROSS_2D, iterations=iterations)
    return out


def _dilate_slices(fg: np.ndarray, iterations: int) -> np.ndarray:
    if iterations == 0:
        return fg.copy()
    out = np.zeros_like(fg)
    for k in range(fg.shape[0]):
        if fg[k].any():
            out[k] = ndimage.binary_dilation(fg[k], structure=_CROSS_2D, iterations=iterations)
    return out


def lesion_border(m: Mask3D, thickness: int = 1) -> tuple[Mask3D, Mask3D]:
    """Split a lesion into (inner, border) by per-slice erosion.

    The border is ``thickness`` erosion passes wide (3x3 cross element).
    Slices that erode away entirely contribute all their voxels to the
    border. inner and border partition the input mask exactly.
    """
    if thickness < 1:
        raise ValueError("thickness must be >= 1")
    fg = m.foreground
    if not fg.any():
        raise DataError("empty lesion mask")
    inner = _erode_slices(fg, thickness)
    border = fg & ~inner
    return (
        dataclasses.replace(m, data=inner.astype(np.uint8)),
        dataclasses.replace(m, data=border.astype(np.uint8)),
    )


def parenchyma_mask(
    liver: Mask3D,
    lesion: Mask3D,
    margin: int = 2,
    extra_lesions: tuple[Mask3D, ...] = (),
) -> Mask3D:
    """Liver minus the lesion dilated by ``margin`` voxels (in-plane).

    The dilation keeps partial-volume rim voxels out of the parenchyma
    reference. Other lesions of the same patient can be excluded too.
    """
    check_geometry(liver, lesion)
    if not liver.foreground.any():
        raise DataError("empty liver mask")
    excluded = _dilate_slices(lesion.foreground, margin)
    for other in extra_lesions:
        check_geometry(liver, other)
        excluded |= _dilate_slices(other.foreground, margin)
    par = liver.foreground & ~excluded
    if not par.any():
        raise DataError("parenchyma is empty after excluding the lesion")
    return dataclasses.replace(liver, data=par.astype(np.uint8))


def f_aphe(arterial: Volume3D, lesion: Mask3D, parenchyma: Mask3D) -> float:
    """Arterial-phase hyper-enhancement contrast (HU)."""
    return median_hu(arterial, lesion) - median_hu(arterial, parenchyma)


def f_ec(arterial: Volume3D, lesion: Mask3D, border_thickness: int = 1) -> float:
    """Enhancing-capsule contrast (HU^2): inner energy minus border energy.

    Degenerate lesions whose inner region erodes away are defined as 0
    with a warning.
    """
    inner, border = lesion_border(lesion, thickness=border_thickness)
    if inner.count() == 0:
        warnings.warn("lesion too thin for a border split; f_ec set to 0", stacklevel=2)
        return 0.0
    return energy_hu(arterial, inner) - energy_hu(arterial, border)


def f_npw(portal: Volume3D, lesion: Mask3D, parenchyma: Mask3D) -> float:
    """Non-peripheral washout contrast (HU) on the portal venous phase."""
    return median_hu(portal, lesion) - median_hu(portal, parenchyma)


def lesion_diameter(m: Mask3D, spacing: Spacing | None = None) -> float:
    """Maximum in-plane Feret diameter (mm) on the largest-area axial slice.

    Measured between voxel centers; a single-voxel lesion reports the
    in-plane voxel diagonal. Matches the caliper-style measurement used
    in radiological practice.
    """
    if spacing is None:
        spacing = m.spacing
    fg = m.foreground
    areas = fg.sum(axis=(1, 2))
    if areas.max() == 0:
        raise DataError("empty lesion mask")
    k = int(np.argmax(areas))
    yy, xx = np.nonzero(fg[k])
    points = np.column_stack([xx * spacing.dx, yy * spacing.dy])
    if len(points) == 1:
        return float(np.hypot(spacing.dx, spacing.dy))
    if len(points) > 1500:
        try:
            points = points[ConvexHull(points).vertices]
        except QhullError:
            pass  # collinear slices fall back to the full point set
    return float(pdist(points).max())


@dataclass(frozen=True)
class HandcraftedFeatures:
    """The three contrast features plus lesion size for one case."""

    f_aphe: float
    f_ec: float
    f_npw: float
    size_mm: float

    def __post_init__(self) -> None:
        vals = (self.f_aphe, self.f_ec, self.f_npw, self.size_mm)
        if not all(np.isfinite(v) for v in vals):
            raise DataError(f"non-finite handcrafted feature: {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.f_aphe, self.f_ec, self.f_npw, self.size_mm], dtype=np.float64)


HF_NAMES = ("f_aphe", "f_ec", "f_npw", "size_mm")


def compute_features(
    case: PhaseSet,
    parenchyma_margin: int = 2,
    border_thickness: int = 1,
    extra_lesions: tuple[Mask3D, ...] = (),
) -> HandcraftedFeatures:
    """All four handcrafted features for a preprocessed case.

    Statistics run on the full volumes, not the network patch, so the
    parenchyma reference uses the whole liver.
    """
    case.check_masks()  # lesion outside the liver warns, never fails
    par = parenchyma_mask(case.liver_mask, case.lesion_mask, parenchyma_margin, extra_lesions)
    return HandcraftedFeatures(
        f_aphe=f_aphe(case.arterial, case.lesion_mask, par),
        f_ec=f_ec(case.arterial, case.lesion_mask, border_thickness),
        f_npw=f_npw(case.portal, case.lesion_mask, par),
        size_mm=lesion_diameter(case.lesion_mask),
    )


class HandcraftedFeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping PhaseSet cases to the 4-feature matrix.

    Parameters
    ----------
    parenchyma_margin : int, default=2
        In-plane dilation (voxels) of the lesion excluded from parenchyma.
    border_thickness : int, default=1
        Width of the lesion border band used by f_ec.
    """

    def __init__(self, parenchyma_margin: int = 2, border_thickness: int = 1):
        self.parenchyma_margin = parenchyma_margin
        self.border_thickness = border_thickness

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        rows = [
            compute_features(case, self.parenchyma_margin, self.border_thickness).as_array()
            for case in X
        ]
        return np.vstack(rows) if rows else np.empty((0, len(HF_NAMES)))

    def get_feature_names_out(self, input_features=None):
        return np.asarray(HF_NAMES, dtype=object)


# ---------------------------------------------------------------------------
# Feature CSV: header lesion_id,f_aphe,f_ec,f_npw,size_mm with full-precision
# decimal values.
# ---------------------------------------------------------------------------


def write_features_csv(rows: dict[str, HandcraftedFeatures], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("lesion_id," + ",".join(HF_NAMES) + "\n")
        for lesion_id in rows:
            hf = rows[lesion_id]
            f.write(
                f"{lesion_id},{hf.f_aphe!r},{hf.f_ec!r},{hf.f_npw!r},{hf.size_mm!r}\n"
            )


def read_features_csv(path) -> dict[str, HandcraftedFeatures]:
    import csv

    out: dict[str, HandcraftedFeatures] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = set(("lesion_id",) + HF_NAMES) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            lesion_id = row["lesion_id"]
            if lesion_id in out:
                raise DataError(f"{path}: duplicate lesion_id {lesion_id!r}")
            try:
                out[lesion_id] = HandcraftedFeatures(
                    f_aphe=float(row["f_aphe"]),
                    f_ec=float(row["f_ec"]),
                    f_npw=float(row["f_npw"]),
                    size_mm=float(row["size_mm"]),
                )
            except ValueError as exc:
                raise DataError(f"{path}: bad value for {lesion_id!r}: {exc}") from exc
    return out
