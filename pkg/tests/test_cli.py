import csv
from pathlib import Path

import numpy as np
import pytest

from patchaudit.cli import EXIT_INPUT, EXIT_OK, EXIT_STATS, main
from patchaudit.geometry import read_pgm, write_pgm
from patchaudit.records import parse_records

CONFOUNDED = Path(__file__).resolve().parent.parent / "configs" / "confounded.ini"


def run_synth(tmp_path, size=1500, seed=3, name="cohort.csv"):
    out = tmp_path / name
    code = main([
        "synth", "--config", str(CONFOUNDED), "--out", str(out),
        "--size", str(size), "--seed", str(seed),
    ])
    assert code == EXIT_OK
    return out


def test_synth_writes_parseable_csv(tmp_path):
    out = run_synth(tmp_path)
    ds = parse_records(out)
    assert len(ds) == 1500
    assert {r.truth for r in ds} == {0, 1}


def test_synth_deterministic(tmp_path):
    a = run_synth(tmp_path, name="a.csv")
    b = run_synth(tmp_path, name="b.csv")
    assert a.read_bytes() == b.read_bytes()
    c = run_synth(tmp_path, seed=4, name="c.csv")
    assert a.read_bytes() != c.read_bytes()


def test_synth_malformed_config_names_key(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    text = CONFOUNDED.read_text().replace(
        "positive_fraction = 0.5", "positive_fraction = nope"
    )
    bad.write_text(text, encoding="utf-8")
    code = main(["synth", "--config", str(bad), "--out", str(tmp_path / "x.csv")])
    assert code == EXIT_INPUT
    assert "cohort.positive_fraction" in capsys.readouterr().err


def audit_args(inp, out, seed=9):
    return [
        "audit", "--input", str(inp), "--out", str(out),
        "--seed", str(seed), "--iterations", "30", "--size-range", "200:800",
    ]


def test_audit_end_to_end(tmp_path):
    inp = run_synth(tmp_path, size=2000)
    out = tmp_path / "report"
    assert main(audit_args(inp, out)) == EXIT_OK
    for name in ("report.txt", "overall_metrics.csv", "fn_risk.csv",
                 "fp_risk.csv", "subgroup_density_metrics.csv",
                 "auc_pairwise_tests.csv"):
        assert (out / name).exists()
    with open(out / "fn_risk.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 14
    for row in rows:
        if row["odds_ratio"]:
            assert float(row["odds_ratio"]) > 0
            assert float(row["risk_ratio"]) > 0
    assert (out / "roc" / "overall.csv").exists()
    boots = list((out / "bootstrap").glob("*_auc.csv"))
    assert boots


def test_audit_byte_identical_reruns(tmp_path):
    inp = run_synth(tmp_path, size=1200)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(audit_args(inp, out1)) == EXIT_OK
    assert main(audit_args(inp, out2)) == EXIT_OK
    files1 = sorted(p.relative_to(out1) for p in out1.rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(out2) for p in out2.rglob("*") if p.is_file())
    assert files1 == files2
    for rel in files1:
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel


def test_audit_empty_input_no_partial_outputs(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    out = tmp_path / "nothing"
    assert main(audit_args(empty, out)) == EXIT_INPUT
    assert not out.exists()


def test_audit_header_only_input(tmp_path):
    inp = tmp_path / "header.csv"
    inp.write_text(
        "patch_id,patient_id,truth,score,predicted,race,age_group,density,"
        "pathology,mass,asymmetry,ad,calcification\n",
        encoding="utf-8",
    )
    out = tmp_path / "nothing"
    assert main(audit_args(inp, out)) == EXIT_INPUT
    assert not out.exists()


def test_audit_config_file_overrides(tmp_path):
    inp = run_synth(tmp_path, size=800)
    cfg = tmp_path / "audit.ini"
    cfg.write_text(
        "[audit]\nseed = 4\niterations = 20\nci = percentile\n", encoding="utf-8"
    )
    out = tmp_path / "rep"
    assert main(["audit", "--input", str(inp), "--out", str(out),
                 "--config", str(cfg), "--size-range", "100:400"]) == EXIT_OK
    text = (out / "report.txt").read_text()
    assert "ci_method = percentile" in text
    assert "seed = 4" in text


def test_report_values_stay_in_range(tmp_path):
    inp = run_synth(tmp_path, size=1500)
    out = tmp_path / "rep"
    assert main(audit_args(inp, out)) == EXIT_OK
    with open(out / "subgroup_density_metrics.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["mean"]:
                assert 0.0 <= float(row["mean"]) <= 1.0
    with open(out / "overall_metrics.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["point"]:
                assert 0.0 <= float(row["point"]) <= 1.0


def prep_fixture(tmp_path):
    rng = np.random.default_rng(0)
    images = []
    # two images with ROIs, one clean negative-source image
    for k in range(2):
        img = np.full((700, 600), 300, dtype=np.uint16)
        img[:, :80] = 0
        img[rng.random((700, 600)) < 0.03] = 0
        path = tmp_path / f"img{k}.pgm"
        write_pgm(path, img)
        images.append(path)
    neg = np.full((500, 500), 200, dtype=np.uint16)
    neg_path = tmp_path / "neg.pgm"
    write_pgm(neg_path, neg)
    manifest = tmp_path / "rois.csv"
    manifest.write_text(
        "image,patient_id,x,y,width,height\n"
        f"{images[0]},pa,100,20,450,620\n"  # taller than the canvas: downsampled
        f"{images[0]},pa,90,500,60,44\n"
        f"{images[1]},pb,200,100,100,150\n"
        f"{neg_path},pc,NA,NA,NA,NA\n",
        encoding="utf-8",
    )
    return manifest


def test_prep_end_to_end(tmp_path):
    manifest = prep_fixture(tmp_path)
    out = tmp_path / "prep"
    assert main(["prep", "--manifest", str(manifest), "--out", str(out),
                 "--seed", "2"]) == EXIT_OK
    with open(out / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    labels = [int(r["label"]) for r in rows]
    assert labels.count(1) == 3
    assert labels.count(0) >= 3  # one per ROI plus the ROI-free image
    for r in rows:
        patch = read_pgm(out / "patches" / f"{r['patch_id']}.pgm")
        assert patch.shape == (512, 512)
        assert r["split"] in ("train", "val", "test")
    # patient-level split: one split per patient everywhere
    by_patient = {}
    for r in rows:
        by_patient.setdefault(r["patient_id"], set()).add(r["split"])
    assert all(len(s) == 1 for s in by_patient.values())


def test_prep_deterministic(tmp_path):
    manifest = prep_fixture(tmp_path)
    outs = []
    for name in ("p1", "p2"):
        out = tmp_path / name
        assert main(["prep", "--manifest", str(manifest), "--out", str(out),
                     "--seed", "2"]) == EXIT_OK
        outs.append((out / "manifest.csv").read_bytes())
    assert outs[0] == outs[1]


def test_prep_unsatisfiable_negative_logged_not_fatal(tmp_path, capsys):
    img = np.zeros((300, 300), dtype=np.uint16)  # all air
    path = tmp_path / "dark.pgm"
    write_pgm(path, img)
    manifest = tmp_path / "rois.csv"
    manifest.write_text(
        "image,patient_id,x,y,width,height\n"
        f"{path},pz,10,10,50,50\n",
        encoding="utf-8",
    )
    out = tmp_path / "prep"
    assert main(["prep", "--manifest", str(manifest), "--out", str(out),
                 "--seed", "1", "--attempts", "40"]) == EXIT_OK
    assert "no acceptable box" in capsys.readouterr().err
    with open(out / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["label"]) for r in rows] == [1]


def test_prep_without_any_roi_is_input_error(tmp_path, capsys):
    neg = np.full((200, 200), 90, dtype=np.uint16)
    path = tmp_path / "n.pgm"
    write_pgm(path, neg)
    manifest = tmp_path / "rois.csv"
    manifest.write_text(
        f"image,patient_id,x,y,width,height\n{path},pq,NA,NA,NA,NA\n",
        encoding="utf-8",
    )
    assert main(["prep", "--manifest", str(manifest),
                 "--out", str(tmp_path / "p")]) == EXIT_INPUT
    assert "size distribution" in capsys.readouterr().err
