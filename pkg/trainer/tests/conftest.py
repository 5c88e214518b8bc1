import pytest

from hccfusion.phantom import PhantomConfig, generate_case
from hccfusion.preprocess import PatchMode, extract_patch, write_patch


@pytest.fixture(scope="session")
def patch_dirs(tmp_path_factory):
    """Patch files produced by the fusion pipeline's exporter: the trainer's
    real input interface. 8 cases, both channel layouts."""
    root = tmp_path_factory.mktemp("patches")
    c4_dir = root / "hcc"
    c3_dir = root / "aphe"
    c4_dir.mkdir()
    c3_dir.mkdir()
    cfg = PhantomConfig(
        n_cases=8,
        noise_std_hu=5.0,
        dims=(128, 128, 56),
        spacing=(0.76, 0.76, 2.0),
        seed=0,
        hcc_size_mean_mm=20.0,
        hcc_size_std_mm=3.0,
        nonhcc_size_mean_mm=14.0,
        nonhcc_size_std_mm=3.0,
    )
    for idx in range(cfg.n_cases):
        case = generate_case(cfg, idx)
        write_patch(extract_patch(case, PatchMode.HCC), c4_dir / f"{case.lesion_id}_hcc")
        write_patch(extract_patch(case, PatchMode.APHE), c3_dir / f"{case.lesion_id}_aphe")
    return c4_dir, c3_dir
