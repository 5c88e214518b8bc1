"""Shared builders for the test suite."""

import numpy as np

from hccfusion.phantom import PhantomConfig
from hccfusion.volume import Mask3D, Spacing


def small_phantom_config(**overrides) -> PhantomConfig:
    """Laptop-friendly phantom grid used across tests."""
    defaults = dict(
        n_cases=4,
        hcc_fraction=0.5,
        hcc_size_mean_mm=14.0,
        hcc_size_std_mm=2.0,
        nonhcc_size_mean_mm=10.0,
        nonhcc_size_std_mm=2.0,
        noise_std_hu=0.0,
        dims=(64, 64, 26),  # resamples to >= the 96x96x24 patch window
        spacing=(1.2, 1.2, 2.8),
        liver_semi_axes_mm=(30.0, 26.0, 28.0),
        seed=11,
    )
    defaults.update(overrides)
    return PhantomConfig(**defaults)


def box_mask(shape_zyx, z0, z1, spacing=(1.0, 1.0, 2.0), origin_z=0.0) -> Mask3D:
    """Axis-aligned box spanning slices [z0, z1)."""
    data = np.zeros(shape_zyx, dtype=np.uint8)
    data[z0:z1, 1:-1, 1:-1] = 1
    return Mask3D(data=data, spacing=Spacing(*spacing), origin_z=origin_z)


def random_blob_mask(rng, shape_zyx, n_disks=4, spacing=(1.0, 1.0, 2.0)) -> Mask3D:
    """Union of random in-plane disks; stays off the array border."""
    nz, ny, nx = shape_zyx
    data = np.zeros(shape_zyx, dtype=np.uint8)
    yy, xx = np.mgrid[0:ny, 0:nx]
    for _ in range(n_disks):
        z = int(rng.integers(1, max(2, nz - 1)))
        cy = int(rng.integers(3, ny - 3))
        cx = int(rng.integers(3, nx - 3))
        r = float(rng.uniform(1.0, min(ny, nx) / 4))
        disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
        disk[0, :] = disk[-1, :] = False
        disk[:, 0] = disk[:, -1] = False
        data[z][disk] = 1
    if not data.any():
        data[nz // 2, ny // 2, nx // 2] = 1
    return Mask3D(data=data, spacing=Spacing(*spacing))
