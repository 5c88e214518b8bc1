import json
import os

import numpy as np
import pytest

from helpers import small_phantom_config

from hccfusion.cli import main
from hccfusion.preprocess import read_patch


def write_config(tmp_path, name="cfg.json", **overrides):
    params = dict(n_cases=12, seed=13)
    params.update(overrides)
    cfg = small_phantom_config(**params)
    path = tmp_path / name
    path.write_text(json.dumps(cfg.to_json_obj()))
    return path


@pytest.fixture()
def pipeline_dirs(tmp_path):
    cfg_path = write_config(tmp_path)
    raw = tmp_path / "raw"
    assert main(["phantom", "--config", str(cfg_path), "--outdir", str(raw)]) == 0
    pre = tmp_path / "pre"
    assert main(["preprocess", "--manifest", str(raw / "manifest.json"), "--outdir", str(pre)]) == 0
    return tmp_path, raw, pre


def test_full_pipeline_and_reports(pipeline_dirs):
    tmp_path, raw, pre = pipeline_dirs
    features = tmp_path / "features.csv"
    assert main(["features", "--manifest", str(pre / "manifest.json"), "--out", str(features)]) == 0
    assert features.read_text().startswith("lesion_id,f_aphe,f_ec,f_npw,size_mm")
    assert len(features.read_text().splitlines()) == 13  # header + 12 cases

    probs = tmp_path / "probs"
    assert main([
        "stub-probs", "--manifest", str(pre / "manifest.json"), "--outdir", str(probs),
        "--k", "3", "--seed", "5",
    ]) == 0
    assert sorted(os.listdir(probs)) == [f"probs_fold{j}.csv" for j in range(3)]

    report_dir = tmp_path / "report"
    args = [
        "evaluate", "--manifest", str(pre / "manifest.json"), "--features", str(features),
        "--probs-dir", str(probs), "--k", "3", "--seed", "42",
        "--lambda-grid", "0.01,1,100", "--outdir", str(report_dir),
    ]
    assert main(args) == 0
    text = (report_dir / "report.txt").read_text()
    for column in ("Model", "DL baseline", "DLF", "HF", "DLF+HF", "↑ w.r.t baseline"):
        assert column in text
    payload = json.loads((report_dir / "report.json").read_text())
    assert payload["k"] == 3
    assert payload["variants"]["hf"]["mean"] > 0.5

    # reruns are byte-identical
    first = (report_dir / "report.json").read_bytes(), (report_dir / "report.txt").read_bytes()
    assert main(args) == 0
    second = (report_dir / "report.json").read_bytes(), (report_dir / "report.txt").read_bytes()
    assert first == second


def test_evaluate_leaky_probs_flag(pipeline_dirs):
    tmp_path, raw, pre = pipeline_dirs
    features = tmp_path / "features.csv"
    assert main(["features", "--manifest", str(pre / "manifest.json"), "--out", str(features)]) == 0
    probs = tmp_path / "probs_global"
    assert main([
        "stub-probs", "--manifest", str(pre / "manifest.json"), "--outdir", str(probs), "--k", "1",
    ]) == 0
    os.rename(probs / "probs_fold0.csv", probs / "probs.csv")

    base = [
        "evaluate", "--manifest", str(pre / "manifest.json"), "--features", str(features),
        "--probs-dir", str(probs), "--k", "3", "--lambda-grid", "1",
        "--outdir", str(tmp_path / "rep"),
    ]
    assert main(base) == 2  # global CSV without acknowledgment is a config error
    assert main(base + ["--leaky-probs"]) == 0


def test_transfer_protocol_via_cli(tmp_path):
    cfg_tr = write_config(tmp_path, "tr.json", id_prefix="tr_")
    cfg_te = write_config(tmp_path, "te.json", id_prefix="te_", seed=14)
    for cfg, name in ((cfg_tr, "train"), (cfg_te, "test")):
        assert main(["phantom", "--config", str(cfg), "--outdir", str(tmp_path / name)]) == 0
        assert main([
            "features", "--manifest", str(tmp_path / name / "manifest.json"),
            "--out", str(tmp_path / f"{name}.csv"),
        ]) == 0
    report_dir = tmp_path / "transfer_report"
    assert main([
        "evaluate",
        "--manifest", str(tmp_path / "train" / "manifest.json"),
        "--features", str(tmp_path / "train.csv"),
        "--test-manifest", str(tmp_path / "test" / "manifest.json"),
        "--test-features", str(tmp_path / "test.csv"),
        "--subset", "hf", "--k", "3", "--lambda-grid", "0.1,10",
        "--outdir", str(report_dir),
    ]) == 0
    payload = json.loads((report_dir / "report.json").read_text())
    assert payload["protocol"] == "transfer"
    assert payload["variants"]["hf"]["mean"] > 0.5
    assert payload["variants"]["dlf+hf"] is None  # no probs supplied


def test_patches_command(pipeline_dirs):
    tmp_path, raw, pre = pipeline_dirs
    outdir = tmp_path / "patches"
    assert main([
        "patches", "--manifest", str(pre / "manifest.json"), "--mode", "hcc",
        "--outdir", str(outdir),
    ]) == 0
    files = sorted(outdir.glob("*_hcc.hdr"))
    assert len(files) == 12
    patch = read_patch(files[0])
    assert patch.data.shape == (4, 24, 96, 96)
    assert patch.lesion_coverage == 1.0
    assert patch.label in (0, 1)

    assert main([
        "patches", "--manifest", str(pre / "manifest.json"), "--mode", "aphe",
        "--outdir", str(tmp_path / "patches_aphe"),
    ]) == 0
    aphe = read_patch(sorted((tmp_path / "patches_aphe").glob("*.hdr"))[0])
    assert aphe.data.shape[0] == 3


def test_preprocess_skips_missing_delayed(tmp_path, caplog):
    cfg_path = write_config(tmp_path)
    raw = tmp_path / "raw"
    assert main(["phantom", "--config", str(cfg_path), "--outdir", str(raw)]) == 0
    manifest = json.loads((raw / "manifest.json").read_text())
    del manifest[0]["delayed"]
    (raw / "manifest.json").write_text(json.dumps(manifest))
    pre = tmp_path / "pre"
    import logging

    with caplog.at_level(logging.INFO, logger="hccfusion"):
        assert main(["preprocess", "--manifest", str(raw / "manifest.json"), "--outdir", str(pre)]) == 0
    assert any("reason=missing_delayed" in m for m in caplog.messages)
    kept = json.loads((pre / "manifest.json").read_text())
    assert len(kept) == 11


def test_parallel_jobs_match_sequential(tmp_path):
    cfg_path = write_config(tmp_path, n_cases=4)
    raw = tmp_path / "raw"
    assert main(["phantom", "--config", str(cfg_path), "--outdir", str(raw)]) == 0
    out1 = tmp_path / "seq.csv"
    out2 = tmp_path / "par.csv"
    assert main(["features", "--manifest", str(raw / "manifest.json"), "--out", str(out1)]) == 0
    assert main([
        "features", "--manifest", str(raw / "manifest.json"), "--out", str(out2), "--jobs", "2",
    ]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_preprocess_rerun_is_idempotent(tmp_path):
    cfg_path = write_config(tmp_path, n_cases=2)
    raw = tmp_path / "raw"
    assert main(["phantom", "--config", str(cfg_path), "--outdir", str(raw)]) == 0
    pre = tmp_path / "pre"
    args = ["preprocess", "--manifest", str(raw / "manifest.json"), "--outdir", str(pre)]
    assert main(args) == 0
    snapshot = {p.name: p.read_bytes() for p in pre.iterdir()}
    assert main(args) == 0
    assert {p.name: p.read_bytes() for p in pre.iterdir()} == snapshot


def test_exit_codes(tmp_path):
    # missing manifest path -> config error
    assert main(["features", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path / "f.csv")]) == 2
    # malformed manifest -> data error
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["features", "--manifest", str(bad), "--out", str(tmp_path / "f.csv")]) == 3