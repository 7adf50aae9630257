import pytest

from patchaudit.records import (
    Dataset,
    FactorSchema,
    PredictionRecord,
    RecordError,
    Variable,
    default_schema,
    derive_predicted,
    parse_records,
    write_records,
)

HEADER = "patch_id,patient_id,truth,score,predicted,race,age_group,density,pathology,mass,asymmetry,ad,calcification"


def write_csv(tmp_path, lines, name="records.csv"):
    path = tmp_path / name
    path.write_text("\n".join([HEADER] + lines) + "\n", encoding="utf-8")
    return path


def test_parse_basic_row(tmp_path):
    path = write_csv(tmp_path, ["p1,pt9,1,0.93,,Black,50-60,C,Benign,1,0,0,0"])
    ds = parse_records(path)
    assert len(ds) == 1
    r = ds.records[0]
    assert r.truth == 1
    assert r.score == 0.93
    assert r.predicted is None
    assert r.race == "Black"
    assert r.age_group == "50-60"
    assert r.density == "C"
    assert r.pathology == "Benign"
    assert (r.mass, r.asymmetry, r.ad, r.calcification) == (1, 0, 0, 0)


def test_unknown_level_names_row(tmp_path):
    path = write_csv(tmp_path, [
        "p1,pt1,1,0.9,,White,<50,A,NA,NA,NA,NA,NA",
        "p2,pt2,1,0.9,,White,<50,E,NA,NA,NA,NA,NA",
    ])
    with pytest.raises(RecordError, match=r"line 3.*unknown level 'E'"):
        parse_records(path)


def test_missing_values_are_retained(tmp_path):
    lines = [
        f"p{i},pt{i},1,0.9,,{'NA' if i < 2 else 'White'},<50,A,NA,NA,NA,NA,NA"
        for i in range(10)
    ]
    path = write_csv(tmp_path, lines)
    ds = parse_records(path)
    assert len(ds) == 10
    assert sum(1 for r in ds if r.race is None) == 2
    stratified = ds.filter(lambda r: r.race is not None)
    assert len(stratified) == 8
    assert stratified.excluded_rows == 2


def test_duplicate_patch_id(tmp_path):
    path = write_csv(tmp_path, [
        "p1,pt1,1,0.9,,NA,NA,NA,NA,NA,NA,NA,NA",
        "p1,pt2,0,0.1,,NA,NA,NA,NA,NA,NA,NA,NA",
    ])
    with pytest.raises(RecordError, match="duplicate patch_id"):
        parse_records(path)


def test_neither_score_nor_predicted(tmp_path):
    path = write_csv(tmp_path, ["p1,pt1,1,NA,NA,NA,NA,NA,NA,NA,NA,NA,NA"])
    with pytest.raises(RecordError, match="neither score nor predicted"):
        parse_records(path)


def test_score_out_of_range(tmp_path):
    path = write_csv(tmp_path, ["p1,pt1,1,1.5,,NA,NA,NA,NA,NA,NA,NA,NA"])
    with pytest.raises(RecordError, match="outside"):
        parse_records(path)


def test_positive_only_fields_rejected_on_negatives(tmp_path):
    path = write_csv(tmp_path, ["p1,pt1,0,0.1,,White,<50,A,Benign,NA,NA,NA,NA"])
    with pytest.raises(RecordError, match="truth=0"):
        parse_records(path)


def test_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n", encoding="utf-8")
    with pytest.raises(RecordError, match="bad header"):
        parse_records(path)


def test_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("", encoding="utf-8")
    with pytest.raises(RecordError, match="empty"):
        parse_records(path)


def test_missing_file(tmp_path):
    with pytest.raises(RecordError, match="cannot read"):
        parse_records(tmp_path / "nope.csv")


def test_round_trip(tmp_path):
    lines = [
        "p1,pt9,1,0.93,,Black,50-60,C,Benign,1,0,0,0",
        "p2,pt9,0,0.25,0,White,<50,A,NA,NA,NA,NA,NA",
        "p3,pt3,1,NA,1,NA,>70,D,Cancer,0,1,1,1",
    ]
    path = write_csv(tmp_path, lines)
    ds = parse_records(path)
    out = tmp_path / "again.csv"
    write_records(ds.records, out)
    ds2 = parse_records(out)
    assert ds.records == ds2.records


def test_truth_partition_counts(tmp_path):
    lines = [f"p{i},pt{i},{i % 2},0.5,,NA,NA,NA,NA,NA,NA,NA,NA" for i in range(9)]
    # fix positive-only fields: they are already NA, fine
    path = write_csv(tmp_path, lines)
    ds = parse_records(path)
    assert len(ds.positives()) + len(ds.negatives()) == len(ds)


def test_derive_predicted_rules():
    base = dict(patch_id="p", patient_id="t", truth=1)
    assert derive_predicted(PredictionRecord(**base, score=0.5), 0.5) == 1
    assert derive_predicted(PredictionRecord(**base, score=0.49), 0.5) == 0
    assert derive_predicted(PredictionRecord(**base, score=0.99, predicted=0)) == 0
    with pytest.raises(RecordError):
        derive_predicted(PredictionRecord(**base))


def test_derive_predicted_monotone_in_score():
    base = dict(patch_id="p", patient_id="t", truth=1)
    scores = [i / 50 for i in range(51)]
    labels = [derive_predicted(PredictionRecord(**base, score=s), 0.37) for s in scores]
    assert labels == sorted(labels)


def test_schema_validation():
    with pytest.raises(ValueError, match="not a level"):
        Variable("race", ("White", "Black"), "Other")
    with pytest.raises(ValueError, match="duplicate"):
        FactorSchema((Variable("x", ("a", "b"), "a"), Variable("x", ("a", "b"), "a")))


def test_schema_defaults_and_display():
    schema = default_schema()
    assert schema.get("race").control == "White"
    assert schema.get("age_group").control == "<50"
    assert schema.get("density").control == "A"
    assert schema.get("pathology").control == "NeverBiopsied"
    for flag in ("mass", "asymmetry", "ad", "calcification"):
        assert schema.get(flag).control == "0"
    assert schema.get("mass").control_display() == "No Mass"
    assert schema.get("mass").display("1") == "Mass"
    assert schema.get("density").display("B") == "BI-RADS density B"
    assert schema.get("age_group").display("<50") == "<50y/o"


def test_schema_overrides():
    schema = default_schema().with_overrides(
        levels={"race": ("X", "Y")}, controls={"race": "Y"}
    )
    assert schema.get("race").levels == ("X", "Y")
    assert schema.get("race").control == "Y"


def test_dataset_provenance_invariant():
    recs = tuple(
        PredictionRecord(f"p{i}", f"t{i}", 1, score=0.5) for i in range(5)
    )
    ds = Dataset(recs)
    assert ds.raw_rows == 5 and ds.excluded_rows == 0
    sub = ds.filter(lambda r: r.patch_id != "p0")
    assert sub.raw_rows == 5 and ds.raw_rows - len(sub) == sub.excluded_rows == 1
    with pytest.raises(ValueError, match="excluded_rows"):
        Dataset(recs, raw_rows=10, excluded_rows=3)
