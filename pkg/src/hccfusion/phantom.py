"""Seeded synthetic multi-phase CT cases with LI-RADS-like contrast patterns.

Each case is an ellipsoidal liver of constant base HU holding one spherical
lesion. Positive cases get the full pattern set: arterial hyper-enhancement
on the lesion core, a bright one-voxel capsule rim on the arterial phase,
and portal/delayed washout. Negative cases get at most one pattern at half
magnitude. Compartments are constant plus optional white noise, so every
handcrafted feature has a closed-form expected value; realism is not a goal,
verifiable pipeline math is.

The capsule rim reuses the same per-slice border split as the capsule
feature. When a lesion is so small that the rim would be the majority of
its voxels (the region median would no longer sit in the core), the capsule
pattern is skipped for that case; the injected pattern set is recorded in
the case's lirads flags either way.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from .cases import CaseRecord, LiradsFlags, PhaseSet, save_case, save_manifest
from .errors import ConfigError
from .model import DeepProbs, write_probs_csv
from .radiomics import lesion_border
from .volume import Mask3D, Spacing, Volume3D

MIN_LESION_MM = 4.0
_LESION_CLEARANCE_MM = 2.0
_MAX_JITTER_MM = 6.0
_NONHCC_MAGNITUDE = 0.5


@dataclass(frozen=True)
class PhantomConfig:
    """Generator knobs; defaults give a laptop-scale but nontrivial dataset."""

    n_cases: int = 200
    hcc_fraction: float = 0.5
    hcc_size_mean_mm: float = 19.3
    hcc_size_std_mm: float = 5.6
    nonhcc_size_mean_mm: float = 15.4
    nonhcc_size_std_mm: float = 5.6
    aphe_delta_hu: float = 40.0
    capsule_delta_hu: float = 60.0
    washout_delta_hu: float = 30.0
    noise_std_hu: float = 10.0
    dims: tuple[int, int, int] = (112, 96, 44)  # (nx, ny, nz)
    spacing: tuple[float, float, float] = (0.9, 0.9, 2.5)
    liver_semi_axes_mm: tuple[float, float, float] = (42.0, 36.0, 40.0)
    liver_hu: float = 90.0
    background_hu: float = 0.0
    seed: int = 0
    id_prefix: str = "case_"

    def __post_init__(self) -> None:
        if self.n_cases < 1:
            raise ConfigError("n_cases must be >= 1")
        if not 0.0 <= self.hcc_fraction <= 1.0:
            raise ConfigError("hcc_fraction must lie in [0, 1]")
        for name in ("hcc_size_std_mm", "nonhcc_size_std_mm", "noise_std_hu"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if any(n < 1 for n in self.dims):
            raise ConfigError("dims must be positive")
        if any(s <= 0 for s in self.spacing):
            raise ConfigError("spacing must be positive")
        if any(a <= 0 for a in self.liver_semi_axes_mm):
            raise ConfigError("liver semi-axes must be positive")

    def to_json_obj(self) -> dict:
        obj = dataclasses.asdict(self)
        obj["dims"] = list(self.dims)
        obj["spacing"] = list(self.spacing)
        obj["liver_semi_axes_mm"] = list(self.liver_semi_axes_mm)
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "PhantomConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown phantom config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        for key in ("dims", "spacing", "liver_semi_axes_mm"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad phantom config: {exc}") from exc


def load_phantom_config(path) -> PhantomConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return PhantomConfig.from_json_obj(json.load(f))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read phantom config {path}: {exc}") from exc


def n_hcc_cases(cfg: PhantomConfig) -> int:
    return int(round(cfg.n_cases * cfg.hcc_fraction))


def _grids_mm(cfg: PhantomConfig):
    nx, ny, nz = cfg.dims
    dx, dy, dz = cfg.spacing
    xs = (np.arange(nx) * dx)[None, None, :]
    ys = (np.arange(ny) * dy)[None, :, None]
    zs = (np.arange(nz) * dz)[:, None, None]
    return xs, ys, zs


def _case_label(cfg: PhantomConfig, case_index: int) -> int:
    if not 0 <= case_index < cfg.n_cases:
        raise ConfigError(f"case_index {case_index} outside 0..{cfg.n_cases - 1}")
    return 1 if case_index < n_hcc_cases(cfg) else 0


def _sample_geometry(cfg: PhantomConfig, rng, label: int, case_index: int):
    """First draws of a case's stream: lesion diameter then center jitter."""
    if label:
        mean, std = cfg.hcc_size_mean_mm, cfg.hcc_size_std_mm
    else:
        mean, std = cfg.nonhcc_size_mean_mm, cfg.nonhcc_size_std_mm
    diameter = max(MIN_LESION_MM, float(rng.normal(mean, std)))
    radius = diameter / 2.0

    min_semi = min(cfg.liver_semi_axes_mm)
    if radius + _LESION_CLEARANCE_MM > min_semi:
        raise ConfigError(
            f"case {case_index}: lesion diameter {diameter:.1f} mm does not fit in a "
            f"liver with min semi-axis {min_semi:.1f} mm"
        )
    max_jitter = min(_MAX_JITTER_MM, (min_semi - radius - _LESION_CLEARANCE_MM) / np.sqrt(3.0))
    jitter = rng.uniform(-max_jitter, max_jitter, size=3) if max_jitter > 0 else np.zeros(3)
    return diameter, jitter


def sampled_diameter(cfg: PhantomConfig, case_index: int) -> float:
    """The lesion diameter generate_case will use for this index (mm)."""
    rng = np.random.default_rng([cfg.seed, case_index])
    label = _case_label(cfg, case_index)
    return _sample_geometry(cfg, rng, label, case_index)[0]


def generate_case(cfg: PhantomConfig, case_index: int) -> PhaseSet:
    """One deterministic case; the label comes from the case index, all random
    draws from a generator seeded with (seed, case_index)."""
    rng = np.random.default_rng([cfg.seed, case_index])
    label = _case_label(cfg, case_index)
    diameter, jitter = _sample_geometry(cfg, rng, label, case_index)
    radius = diameter / 2.0
    semi = np.array(cfg.liver_semi_axes_mm)

    nx, ny, nz = cfg.dims
    dx, dy, dz = cfg.spacing
    center = np.array([(nx - 1) * dx, (ny - 1) * dy, (nz - 1) * dz]) / 2.0
    lesion_center = center + jitter

    xs, ys, zs = _grids_mm(cfg)
    liver_fg = (
        ((xs - center[0]) / semi[0]) ** 2
        + ((ys - center[1]) / semi[1]) ** 2
        + ((zs - center[2]) / semi[2]) ** 2
    ) <= 1.0
    lesion_fg = (
        (xs - lesion_center[0]) ** 2
        + (ys - lesion_center[1]) ** 2
        + (zs - lesion_center[2]) ** 2
    ) <= radius**2

    spacing = Spacing(dx, dy, dz)
    lesion_mask = Mask3D(data=lesion_fg.astype(np.uint8), spacing=spacing)
    liver_mask = Mask3D(data=liver_fg.astype(np.uint8), spacing=spacing)

    inner, border = lesion_border(lesion_mask)
    rim_allowed = border.count() < inner.count()

    magnitude = 1.0 if label else _NONHCC_MAGNITUDE
    if label:
        want_aphe, want_ec, want_npw = True, True, True
    else:
        choice = int(rng.integers(0, 4))  # 0 none, 1 aphe, 2 capsule, 3 washout
        want_aphe, want_ec, want_npw = choice == 1, choice == 2, choice == 3
    ec_injected = want_ec and rim_allowed
    aphe_eff = cfg.aphe_delta_hu * magnitude if want_aphe else 0.0
    capsule_eff = cfg.capsule_delta_hu * magnitude if ec_injected else 0.0
    washout_eff = cfg.washout_delta_hu * magnitude if want_npw else 0.0

    base = np.where(liver_fg, cfg.liver_hu, cfg.background_hu)
    arterial = base.copy()
    arterial[lesion_fg] = cfg.liver_hu + aphe_eff
    if ec_injected:
        arterial[border.foreground] = cfg.liver_hu + capsule_eff
    portal = base.copy()
    portal[lesion_fg] = cfg.liver_hu - washout_eff
    delayed = portal.copy()

    def finish(arr: np.ndarray) -> Volume3D:
        if cfg.noise_std_hu > 0:
            arr = arr + rng.normal(0.0, cfg.noise_std_hu, arr.shape)
        return Volume3D(data=np.rint(arr), spacing=spacing)

    return PhaseSet(
        arterial=finish(arterial),
        portal=finish(portal),
        delayed=finish(delayed),
        liver_mask=liver_mask,
        lesion_mask=lesion_mask,
        lesion_id=f"{cfg.id_prefix}{case_index:04d}",
        label=label,
        lirads=LiradsFlags(aphe=int(want_aphe), ec=int(ec_injected), npw=int(want_npw)),
    )


def expected_features(cfg: PhantomConfig, case: PhaseSet) -> dict[str, float]:
    """Closed-form feature values for a zero-noise case (testing oracle)."""
    magnitude = 1.0 if case.label else _NONHCC_MAGNITUDE
    aphe = cfg.aphe_delta_hu * magnitude * case.lirads.aphe
    washout = cfg.washout_delta_hu * magnitude * case.lirads.npw
    if case.lirads.ec:
        core = cfg.liver_hu + aphe
        rim = cfg.liver_hu + cfg.capsule_delta_hu * magnitude
        ec = core**2 - rim**2
    else:
        ec = 0.0
    return {"f_aphe": aphe, "f_ec": ec, "f_npw": -washout}


def generate_dataset(cfg: PhantomConfig, outdir) -> str:
    """Write every case plus manifest.json and the config; returns the
    manifest path. Regenerating with the same config is byte-identical."""
    outdir = os.fspath(outdir)
    os.makedirs(outdir, exist_ok=True)
    records: list[CaseRecord] = []
    for idx in range(cfg.n_cases):
        records.append(save_case(generate_case(cfg, idx), outdir))
    manifest_path = os.path.join(outdir, "manifest.json")
    save_manifest(records, manifest_path)
    with open(os.path.join(outdir, "phantom_config.json"), "w", encoding="utf-8") as f:
        json.dump(cfg.to_json_obj(), f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path


# ---------------------------------------------------------------------------
# Stub probabilities: label-derived deep-model outputs for exercising the
# fusion and evaluation stages before any network exists.
# ---------------------------------------------------------------------------


def stub_probs(
    cases: dict[str, tuple[int, LiradsFlags | None]],
    flip_prob: float = 0.3,
    seed: int = 0,
) -> dict[str, DeepProbs]:
    """Per-case probabilities built from the true labels, each flipped with
    ``flip_prob``, with uniform jitter so scores are tie-free."""
    if not 0.0 <= flip_prob <= 1.0:
        raise ConfigError("flip_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    out: dict[str, DeepProbs] = {}
    for lesion_id in sorted(cases):
        label, lirads = cases[lesion_id]
        truth = {
            "p_hcc": label,
            "p_aphe": lirads.aphe if lirads is not None else label,
            "p_ec": lirads.ec if lirads is not None else label,
            "p_npw": lirads.npw if lirads is not None else label,
        }
        values = {}
        for key, bit in truth.items():
            eff = 1 - bit if rng.random() < flip_prob else bit
            u = rng.uniform(0.0, 0.5)
            values[key] = 0.5 + u if eff == 1 else 0.5 - u
        out[lesion_id] = DeepProbs(**values)
    return out


def write_stub_probs_dir(
    cases: dict[str, tuple[int, LiradsFlags | None]],
    outdir,
    k: int,
    flip_prob: float = 0.3,
    seed: int = 0,
) -> list[str]:
    """Write identical stub CSVs as probs_fold{j}.csv for j in 0..k-1."""
    outdir = os.fspath(outdir)
    os.makedirs(outdir, exist_ok=True)
    rows = stub_probs(cases, flip_prob=flip_prob, seed=seed)
    paths = []
    for j in range(k):
        path = os.path.join(outdir, f"probs_fold{j}.csv")
        write_probs_csv(rows, path)
        paths.append(path)
    return paths
