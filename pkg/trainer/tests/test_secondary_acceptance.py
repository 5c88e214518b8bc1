"""Acceptance criteria for the trainer component, one PASS line each."""

import functools
import time
import warnings

import torch

from hccfusion.model import load_deep_probs

from hcctrainer.backbone import build_backbone, parameter_count
from hcctrainer.export import train_criterion_suite
from hcctrainer.patches import scan_patches
from hcctrainer.training import TrainConfig, train


def criterion(name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException:
                print(f"FAIL [{name}]")
                raise
            print(f"PASS [{name}]{': ' + detail if detail else ''}")

        return wrapper

    return deco


@criterion("backbone-shape-contract")
def test_shape_softmax_and_parameter_budgets():
    tiny = build_backbone("tiny", in_channels=4)
    out = tiny(torch.randn(2, 4, 24, 96, 96))
    assert out.shape == (2, 2)
    assert torch.allclose(out.sum(dim=1), torch.ones(2), atol=1e-6)
    n_tiny = parameter_count(tiny)
    n_small = parameter_count(build_backbone("small", in_channels=4))
    assert 1_200_000 <= n_tiny <= 1_800_000
    assert 4_400_000 <= n_small <= 6_600_000
    return f"(2,4,24,96,96)->(2,2); tiny {n_tiny:,} params, small {n_small:,} params"


@criterion("overfit-sanity")
def test_overfit_eight_patches(patch_dirs):
    c4_dir, _ = patch_dirs
    records = scan_patches(c4_dir)
    assert len(records) == 8
    config = TrainConfig(
        criterion="hcc",
        fold=None,  # capacity check trains on all eight patches
        epochs=200,
        batch_size=8,
        lr=1e-3,
        augment=False,
        seed=0,
        target_accuracy=1.0,
    )
    t0 = time.time()
    result = train(config, records)
    elapsed = time.time() - t0
    epochs_used = len(result.epoch_losses)
    assert result.final_accuracy == 1.0, f"accuracy {result.final_accuracy} after {epochs_used} epochs"
    assert epochs_used <= 200
    return f"accuracy 1.0 after {epochs_used} epochs ({elapsed:.1f}s)"


@criterion("probs-csv-round-trip")
def test_round_trip_under_strict_parser(tmp_path, patch_dirs):
    c4_dir, c3_dir = patch_dirs
    quick = TrainConfig(epochs=1, lr=1e-3, augment=False)
    paths = train_criterion_suite(
        c4_dir, c3_dir, tmp_path, k=2, seed=1, base_config=quick, save_checkpoints=False
    )
    for path in paths:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            probs = load_deep_probs(path)
        assert caught == [], [str(w.message) for w in caught]
        assert len(probs) == 8
    return f"{len(paths)} fold CSVs parse cleanly"
