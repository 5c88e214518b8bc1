import dataclasses

import numpy as np
import pytest

from helpers import box_mask, random_blob_mask, small_phantom_config

from hccfusion.cases import PhaseSet
from hccfusion.errors import DataError
from hccfusion.phantom import generate_case
from hccfusion.preprocess import (
    PATCH_DIMS,
    TARGET_SPACING,
    PatchMode,
    apply_z_shift,
    extract_patch,
    preprocess_case,
    read_patch,
    register_z,
    resample_nn,
    write_patch,
)
from hccfusion.volume import Mask3D, Spacing, Volume3D


# -- register_z ---------------------------------------------------------------


def test_register_identical_masks_is_zero():
    m = box_mask((10, 8, 8), 2, 5)
    assert register_z(m, m) == 0


def test_register_translated_box():
    # moving = fixed translated by +3 slices -> -3
    fixed = box_mask((12, 8, 8), 2, 5)
    moving = apply_z_shift(fixed, 3)
    assert register_z(moving, fixed) == -3


def test_register_empty_mask_errors():
    empty = Mask3D(data=np.zeros((4, 4, 4), dtype=np.uint8), spacing=Spacing(1, 1, 1))
    full = box_mask((4, 4, 4), 1, 3, spacing=(1, 1, 1))
    with pytest.raises(DataError, match="empty liver mask"):
        register_z(empty, full)


def test_register_shift_roundtrip_property():
    rng = np.random.default_rng(31)
    for _ in range(25):
        nz = int(rng.integers(8, 16))
        mask = random_blob_mask(rng, (nz, 12, 12))
        # confine foreground to the middle band so shifts never clip content
        band = np.zeros_like(mask.data)
        band[nz // 4 : nz - nz // 4] = mask.data[nz // 4 : nz - nz // 4]
        if not band.any():
            band[nz // 2, 6, 6] = 1
        mask = Mask3D(data=band, spacing=mask.spacing)
        k = int(rng.integers(-(nz // 4), nz // 4 + 1))
        shifted = apply_z_shift(mask, k)
        assert register_z(shifted, mask) == -k


# -- apply_z_shift -------------------------------------------------------------


def test_shift_zero_is_identity():
    v = Volume3D(data=np.arange(12.0).reshape(3, 2, 2), spacing=Spacing(1, 1, 2))
    np.testing.assert_array_equal(apply_z_shift(v, 0).data, v.data)


def test_shift_fills_exposed_slices():
    v = Volume3D(data=np.arange(12.0).reshape(3, 2, 2), spacing=Spacing(1, 1, 2))
    out = apply_z_shift(v, 1)
    assert np.all(out.data[0] == -1024.0)
    np.testing.assert_array_equal(out.data[1:], v.data[:2])
    m = box_mask((3, 4, 4), 0, 3)
    assert np.all(apply_z_shift(m, 1).data[0] == 0)


def test_shift_of_full_depth_errors():
    v = Volume3D(data=np.zeros((3, 2, 2)), spacing=Spacing(1, 1, 2))
    with pytest.raises(ValueError, match="shift"):
        apply_z_shift(v, 3)
    with pytest.raises(ValueError, match="shift"):
        apply_z_shift(v, -3)


# -- resample_nn ---------------------------------------------------------------


def test_resample_identity_on_same_grid():
    rng = np.random.default_rng(0)
    v = Volume3D(data=rng.integers(-100, 100, (5, 6, 7)).astype(float), spacing=Spacing(0.9, 1.1, 2.5))
    out = resample_nn(v, v.spacing, v.dims)
    np.testing.assert_array_equal(out.data, v.data)


def test_resample_never_invents_values():
    rng = np.random.default_rng(1)
    data = rng.permutation(64).reshape(4, 4, 4).astype(float)
    v = Volume3D(data=data, spacing=Spacing(1, 1, 1))
    out = resample_nn(v, Spacing(2, 2, 2), (2, 2, 2))
    assert set(out.data.ravel()) <= set(data.ravel())


def test_checkerboard_mask_down_up_stays_binary():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        nz, ny, nx = (int(rng.integers(4, 9)) for _ in range(3))
        zz, yy, xx = np.mgrid[0:nz, 0:ny, 0:nx]
        board = ((zz + yy + xx) % 2).astype(np.uint8)
        m = Mask3D(data=board, spacing=Spacing(1, 1, 1))
        down = resample_nn(m, Spacing(2, 2, 2), (max(1, nx // 2), max(1, ny // 2), max(1, nz // 2)))
        up = resample_nn(down, Spacing(1, 1, 1), (nx, ny, nz))
        assert set(np.unique(up.data)) <= {0, 1}


def test_resample_degenerate_dims():
    v = Volume3D(data=np.zeros((2, 2, 2)), spacing=Spacing(1, 1, 1))
    with pytest.raises(ValueError, match="degenerate"):
        resample_nn(v, Spacing(1, 1, 1), (0, 2, 2))


def test_resample_tie_breaks_toward_lower_index():
    # centers at 0,1,2,...; target spacing 2 puts output voxel 1 at x=2.0
    # exactly between nothing; but spacing 1->0.5 puts odd outputs on half
    # positions, exactly between two input centers.
    v = Volume3D(data=np.arange(4.0).reshape(1, 1, 4), spacing=Spacing(1, 1, 1))
    out = resample_nn(v, Spacing(0.5, 1, 1), (8, 1, 1))
    # position 0.5 ties between inputs 0 and 1 -> lower index wins
    assert out.data[0, 0, 1] == 0.0
    assert out.data[0, 0, 3] == 1.0


# -- preprocess_case -----------------------------------------------------------


def test_preprocess_common_grid_and_spacing():
    cfg = small_phantom_config()
    case = generate_case(cfg, 0)
    out = preprocess_case(case)
    assert out.on_common_grid()
    assert out.portal.spacing == TARGET_SPACING
    assert set(np.unique(out.lesion_mask.data)) <= {0, 1}
    assert out.lesion_mask.count() > 0
    # deterministic / idempotent
    again = preprocess_case(case)
    np.testing.assert_array_equal(out.arterial.data, again.arterial.data)


def test_preprocess_undoes_arterial_shift():
    cfg = small_phantom_config()
    case = generate_case(cfg, 0)
    aligned = preprocess_case(case)

    shifted = PhaseSet(
        arterial=apply_z_shift(case.arterial, 2),
        portal=case.portal,
        delayed=case.delayed,
        liver_mask=case.liver_mask,
        lesion_mask=case.lesion_mask,
        lesion_id=case.lesion_id,
        label=case.label,
    )
    moving_liver = apply_z_shift(case.liver_mask, 2)
    out = preprocess_case(shifted, moving_livers={"arterial": moving_liver})
    liver_band = aligned.liver_mask.foreground
    np.testing.assert_array_equal(
        out.arterial.data[liver_band], aligned.arterial.data[liver_band]
    )


def test_preprocess_requires_delayed_phase():
    cfg = small_phantom_config()
    case = generate_case(cfg, 0)
    case = dataclasses.replace(case, delayed=None)
    with pytest.raises(DataError, match="delayed"):
        preprocess_case(case)


# -- extract_patch --------------------------------------------------------------


def _sphere_case(center_vox=None, radius_mm=10.0, dims=(200, 200, 100), label=1):
    nx, ny, nz = dims
    sp = TARGET_SPACING
    if center_vox is None:
        center_vox = (nx // 2, ny // 2, nz // 2)
    cx, cy, cz = center_vox
    xs = (np.arange(nx) * sp.dx)[None, None, :]
    ys = (np.arange(ny) * sp.dy)[None, :, None]
    zs = (np.arange(nz) * sp.dz)[:, None, None]
    lesion = (
        (xs - cx * sp.dx) ** 2 + (ys - cy * sp.dy) ** 2 + (zs - cz * sp.dz) ** 2
    ) <= radius_mm**2
    liver = np.ones((nz, ny, nx), dtype=np.uint8)
    vol = lambda fill: Volume3D(data=np.full((nz, ny, nx), float(fill)), spacing=sp)
    return PhaseSet(
        arterial=vol(100),
        portal=vol(90),
        delayed=vol(80),
        liver_mask=Mask3D(data=liver, spacing=sp),
        lesion_mask=Mask3D(data=lesion.astype(np.uint8), spacing=sp),
        lesion_id="sphere",
        label=label,
    )


def test_patch_centered_sphere_full_coverage():
    case = _sphere_case()  # 20 mm sphere in a 200x200x100 grid
    p = extract_patch(case, PatchMode.HCC)
    assert p.data.shape == (4, PATCH_DIMS[2], PATCH_DIMS[1], PATCH_DIMS[0])
    assert p.channel_names == ("arterial", "portal", "delayed", "lesion_mask")
    assert p.lesion_coverage == 1.0
    assert not p.coverage_warning


def test_patch_aphe_has_three_channels():
    case = _sphere_case()
    p = extract_patch(case, PatchMode.APHE)
    assert p.data.shape[0] == 3
    assert p.channel_names == ("arterial", "portal", "lesion_mask")


def test_patch_window_clamps_at_edge():
    case = _sphere_case(center_vox=(5, 100, 50), radius_mm=3.0)
    p = extract_patch(case, PatchMode.HCC)
    assert p.data.shape[1:] == (24, 96, 96)
    assert p.lesion_coverage == 1.0  # small lesion still fits after clamping


def test_patch_missing_delayed_and_empty_lesion():
    case = _sphere_case()
    no_delayed = dataclasses.replace(case, delayed=None)
    with pytest.raises(DataError, match="delayed"):
        extract_patch(no_delayed, PatchMode.EC)
    p = extract_patch(no_delayed, PatchMode.APHE)  # APHE works without delayed
    assert p.data.shape[0] == 3
    empty = dataclasses.replace(
        case,
        lesion_mask=Mask3D(
            data=np.zeros_like(case.lesion_mask.data), spacing=case.lesion_mask.spacing
        ),
    )
    with pytest.raises(DataError, match="empty lesion"):
        extract_patch(empty, PatchMode.HCC)


def test_patch_write_read_roundtrip(tmp_path):
    case = _sphere_case()
    p = extract_patch(case, PatchMode.HCC)
    write_patch(p, tmp_path / "patch0")
    back = read_patch(tmp_path / "patch0")
    np.testing.assert_array_equal(back.data, p.data)
    assert back.channel_names == p.channel_names
    assert back.mode == p.mode
    assert back.lesion_id == p.lesion_id
    assert back.label == p.label
    assert back.lesion_coverage == p.lesion_coverage
    hdr = (tmp_path / "patch0.hdr").read_text()
    assert "NDims=4" in hdr
    assert "DimSize=96 96 24 4" in hdr
