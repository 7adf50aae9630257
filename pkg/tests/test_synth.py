import math
from collections import Counter

import pytest

from patchaudit.records import write_records
from patchaudit.synth import (
    ConfigError,
    EffectModel,
    SynthConfig,
    generate,
    load_config,
    theoretical_effects,
)


def flat_config(**overrides):
    base = dict(
        size=5000,
        race={"White": 0.4, "Black": 0.4, "Other": 0.2},
        density_given_race={
            r: {"A": 0.25, "B": 0.25, "C": 0.25, "D": 0.25}
            for r in ("White", "Black", "Other")
        },
        age_group={"<50": 0.3, "50-60": 0.3, "60-70": 0.2, ">70": 0.2},
        pathology={"NeverBiopsied": 0.9, "Benign": 0.07, "Cancer": 0.03},
        findings={"mass": 0.1, "asymmetry": 0.4, "ad": 0.05, "calcification": 0.2},
        fn_model=EffectModel(math.log(0.1 / 0.9), {}),
        fp_model=EffectModel(math.log(0.1 / 0.9), {}),
        seed=0,
        positive_fraction=0.5,
    )
    base.update(overrides)
    return SynthConfig(**base)


def test_determinism():
    a = generate(flat_config(seed=33))
    b = generate(flat_config(seed=33))
    assert a.records == b.records
    c = generate(flat_config(seed=34))
    assert a.records != c.records


def test_invalid_distributions_rejected():
    with pytest.raises(ConfigError, match="race"):
        flat_config(race={"White": 0.5, "Black": 0.6})
    with pytest.raises(ConfigError, match="size"):
        flat_config(size=0)
    with pytest.raises(ConfigError, match="density"):
        flat_config(density_given_race={"White": {"A": 1.0}})
    with pytest.raises(ConfigError, match="not applicable"):
        flat_config(fp_model=EffectModel(0.0, {("pathology", "Benign"): 0.5}))
    with pytest.raises(ConfigError, match="unknown level"):
        flat_config(fn_model=EffectModel(0.0, {("density", "Z"): 0.5}))


def test_null_model_failure_rate_converges():
    cfg = flat_config(size=100000, fn_model=EffectModel(math.log(1 / 9), {}), seed=5)
    ds = generate(cfg)
    positives = [r for r in ds if r.truth == 1]
    fnr = sum(1 for r in positives if r.predicted == 0) / len(positives)
    assert abs(fnr - 0.1) <= 0.01


def test_marginals_within_three_standard_errors():
    cfg = flat_config(size=60000, seed=8)
    ds = generate(cfg)
    n = len(ds)
    race_counts = Counter(r.race for r in ds)
    for level, p in cfg.race.items():
        se = math.sqrt(p * (1 - p) / n)
        assert abs(race_counts[level] / n - p) <= 3 * se
    age_counts = Counter(r.age_group for r in ds)
    for level, p in cfg.age_group.items():
        se = math.sqrt(p * (1 - p) / n)
        assert abs(age_counts[level] / n - p) <= 3 * se


def test_positive_only_attributes():
    ds = generate(flat_config(size=2000))
    for r in ds:
        if r.truth == 0:
            assert r.pathology is None
            assert r.mass is None and r.asymmetry is None
            assert r.ad is None and r.calcification is None
        else:
            assert r.pathology is not None
            assert None not in (r.mass, r.asymmetry, r.ad, r.calcification)


def test_scores_consistent_with_labels():
    ds = generate(flat_config(size=3000))
    for r in ds:
        assert (r.score >= 0.5) == (r.predicted == 1)
        assert 0.0 <= r.score <= 1.0


def test_theoretical_effects():
    cfg = flat_config(
        fn_model=EffectModel(-2.0, {("density", "C"): math.log(2.0),
                                    ("race", "Black"): 0.0}),
    )
    eff = theoretical_effects(cfg)
    assert eff["fn"][("density", "C")] == pytest.approx(2.0)
    assert eff["fn"][("race", "Black")] == 1.0
    assert eff["fp"] == {}


def test_generated_dataset_round_trips_through_csv(tmp_path):
    ds = generate(flat_config(size=500))
    path = tmp_path / "synth.csv"
    write_records(ds.records, path)
    from patchaudit.records import parse_records
    assert parse_records(path).records == ds.records


def test_load_config_files():
    cfg = load_config("configs/confounded.ini")
    assert cfg.size == 50000
    assert cfg.seed == 7
    assert cfg.fn_model.coefficients[("density", "C")] == pytest.approx(0.6931)
    assert sum(cfg.race.values()) == pytest.approx(1.0)
    cfg2 = load_config("configs/embed_like.ini")
    assert cfg2.positive_fraction == pytest.approx(0.461)
    assert cfg2.fn_model.coefficients[("ad", "1")] == pytest.approx(0.9459)


def test_load_config_errors_name_keys(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text(
        "[cohort]\nsize = 10\n[race]\nWhite = huh\n", encoding="utf-8"
    )
    with pytest.raises(ConfigError, match="race.White"):
        load_config(bad)
    bad.write_text("[cohort]\nsize = 10\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="race"):
        load_config(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.ini")
