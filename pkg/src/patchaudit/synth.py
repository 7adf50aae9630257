"""Synthetic cohorts with controllable confounding.

Attributes are drawn from configured marginals (density conditionally on
race, which is what makes race a confounded variable), and each record's
failure indicator comes from a true logistic model.  The generator is the
ground truth oracle for end-to-end validation of the audit pipeline.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .records import Dataset, FINDING_FLAGS, PredictionRecord
from .rng import TAG_SYNTH, substream

_DIST_TOL = 1e-9

FN_MODEL_VARIABLES = ("race", "age_group", "density", "pathology") + FINDING_FLAGS
FP_MODEL_VARIABLES = ("race", "age_group", "density")


class ConfigError(ValueError):
    """Malformed generator configuration; the message names the bad key."""


@dataclass(frozen=True)
class EffectModel:
    """True failure model: intercept plus per-level log odds ratios."""

    intercept: float
    coefficients: Mapping[tuple[str, str], float] = field(default_factory=dict)


@dataclass(frozen=True)
class SynthConfig:
    size: int
    race: Mapping[str, float]
    density_given_race: Mapping[str, Mapping[str, float]]
    age_group: Mapping[str, float]
    pathology: Mapping[str, float]
    findings: Mapping[str, float]
    fn_model: EffectModel
    fp_model: EffectModel
    positive_fraction: float = 0.5
    score_margin: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.size < 1:
            raise ConfigError("cohort.size must be >= 1")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ConfigError("cohort.positive_fraction must lie in (0, 1)")
        if not 0.0 < self.score_margin <= 0.5:
            raise ConfigError("cohort.score_margin must lie in (0, 0.5]")
        for name, dist in (("race", self.race), ("age_group", self.age_group),
                           ("pathology", self.pathology)):
            _check_distribution(name, dist)
        for race, dist in self.density_given_race.items():
            if race not in self.race:
                raise ConfigError(f"density|{race}: {race!r} is not a race level")
            _check_distribution(f"density|{race}", dist)
        for race in self.race:
            if race not in self.density_given_race:
                raise ConfigError(f"density|{race}: section missing")
        for flag, p in self.findings.items():
            if flag not in FINDING_FLAGS:
                raise ConfigError(f"findings.{flag}: unknown finding flag")
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"findings.{flag}: probability outside [0, 1]")
        self._check_model("fn_model", self.fn_model, FN_MODEL_VARIABLES)
        self._check_model("fp_model", self.fp_model, FP_MODEL_VARIABLES)

    def _levels(self, variable: str) -> tuple[str, ...]:
        if variable == "race":
            return tuple(self.race)
        if variable == "age_group":
            return tuple(self.age_group)
        if variable == "density":
            first = next(iter(self.density_given_race.values()))
            return tuple(first)
        if variable == "pathology":
            return tuple(self.pathology)
        if variable in FINDING_FLAGS:
            return ("0", "1")
        raise ConfigError(f"unknown variable {variable!r}")

    def _check_model(self, name: str, model: EffectModel, allowed) -> None:
        for (variable, level) in model.coefficients:
            if variable not in allowed:
                raise ConfigError(f"{name}.{variable}.{level}: {variable!r} not "
                                  f"applicable to this outcome")
            if level not in self._levels(variable):
                raise ConfigError(f"{name}.{variable}.{level}: unknown level")


def _check_distribution(name: str, dist: Mapping[str, float]) -> None:
    if not dist:
        raise ConfigError(f"{name}: empty distribution")
    total = sum(dist.values())
    if any(p < 0 for p in dist.values()):
        raise ConfigError(f"{name}: negative probability")
    if abs(total - 1.0) > _DIST_TOL:
        raise ConfigError(f"{name}: probabilities sum to {total!r}, not 1")


def _draw_categorical(gen, dist: Mapping[str, float], n: int) -> np.ndarray:
    levels = list(dist)
    cum = np.cumsum([dist[k] for k in levels])
    cum[-1] = 1.0
    picks = np.searchsorted(cum, gen.random(n), side="right")
    return np.array(levels, dtype=object)[np.minimum(picks, len(levels) - 1)]


def _linear_predictor(model: EffectModel, columns: Mapping[str, np.ndarray], n: int):
    lp = np.full(n, model.intercept)
    for (variable, level), beta in model.coefficients.items():
        lp += beta * (columns[variable] == level)
    return lp


def generate(config: SynthConfig) -> Dataset:
    """Draw a cohort; fully determined by config.seed."""
    n = config.size
    draw = lambda i: substream(config.seed, TAG_SYNTH, i)  # noqa: E731

    truth = draw(0).random(n) < config.positive_fraction
    race = _draw_categorical(draw(1), config.race, n)
    density = np.empty(n, dtype=object)
    dgen = draw(2)
    uniforms = dgen.random(n)
    for r_level, dist in config.density_given_race.items():
        mask = race == r_level
        levels = list(dist)
        cum = np.cumsum([dist[k] for k in levels])
        cum[-1] = 1.0
        picks = np.searchsorted(cum, uniforms[mask], side="right")
        density[mask] = np.array(levels, dtype=object)[np.minimum(picks, len(levels) - 1)]
    age = _draw_categorical(draw(3), config.age_group, n)
    pathology = _draw_categorical(draw(4), config.pathology, n)
    flags = {
        flag: (draw(5 + k).random(n) < config.findings.get(flag, 0.0)).astype(np.int64)
        for k, flag in enumerate(FINDING_FLAGS)
    }

    columns: dict[str, np.ndarray] = {
        "race": race,
        "age_group": age,
        "density": density,
        "pathology": pathology,
    }
    for flag in FINDING_FLAGS:
        columns[flag] = np.where(flags[flag] == 1, "1", "0")

    lp = np.where(
        truth,
        _linear_predictor(config.fn_model, columns, n),
        _linear_predictor(config.fp_model, columns, n),
    )
    failure = draw(9).random(n) < 1.0 / (1.0 + np.exp(-lp))
    predicted = np.where(truth, ~failure, failure).astype(np.int64)
    u = draw(10).random(n)
    score = np.where(
        predicted == 1,
        0.5 + config.score_margin * u,
        0.5 - config.score_margin * (1.0 - u),
    )

    width = len(str(n - 1))
    recs = []
    for i in range(n):
        pos = bool(truth[i])
        recs.append(
            PredictionRecord(
                patch_id=f"p{i:0{width}d}",
                patient_id=f"pt{i:0{width}d}",
                truth=1 if pos else 0,
                score=float(score[i]),
                predicted=int(predicted[i]),
                race=str(race[i]),
                age_group=str(age[i]),
                density=str(density[i]),
                pathology=str(pathology[i]) if pos else None,
                **{flag: int(flags[flag][i]) if pos else None for flag in FINDING_FLAGS},
            )
        )
    return Dataset(tuple(recs), source=f"synth(seed={config.seed})")


def theoretical_effects(config: SynthConfig) -> dict[str, dict[tuple[str, str], float]]:
    """True per-level odds ratios exp(beta) for both failure models."""
    return {
        "fn": {key: math.exp(b) for key, b in config.fn_model.coefficients.items()},
        "fp": {key: math.exp(b) for key, b in config.fp_model.coefficients.items()},
    }


def _get_float(section, key, parser_section) -> float:
    try:
        return float(parser_section[key])
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: not a number "
                          f"({parser_section[key]!r})") from exc


def _section_floats(parser, name: str) -> dict[str, float]:
    if name not in parser:
        raise ConfigError(f"{name}: section missing")
    return {key: _get_float(name, key, parser[name]) for key in parser[name]}


def _parse_model(parser, name: str) -> EffectModel:
    if name not in parser:
        raise ConfigError(f"{name}: section missing")
    section = parser[name]
    if "intercept" not in section:
        raise ConfigError(f"{name}.intercept: key missing")
    coeffs: dict[tuple[str, str], float] = {}
    for key in section:
        if key == "intercept":
            continue
        if "." not in key:
            raise ConfigError(f"{name}.{key}: expected variable.level = beta")
        variable, level = key.split(".", 1)
        coeffs[(variable, level)] = _get_float(name, key, section)
    return EffectModel(
        intercept=_get_float(name, "intercept", section), coefficients=coeffs
    )


def load_config(path) -> SynthConfig:
    """Load a generator configuration from a key = value sections file."""
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",))
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    if "cohort" not in parser:
        raise ConfigError("cohort: section missing")
    cohort = parser["cohort"]
    for key in ("size",):
        if key not in cohort:
            raise ConfigError(f"cohort.{key}: key missing")
    race = _section_floats(parser, "race")
    density_given_race = {}
    for section in parser.sections():
        if section.startswith("density|"):
            density_given_race[section.split("|", 1)[1]] = _section_floats(parser, section)
    if not density_given_race:
        raise ConfigError("density|<race>: no conditional density sections")

    try:
        size = int(cohort["size"])
        seed = int(cohort.get("seed", "0"))
    except ValueError as exc:
        raise ConfigError(f"cohort: {exc}") from exc

    return SynthConfig(
        size=size,
        positive_fraction=_get_float("cohort", "positive_fraction", cohort)
        if "positive_fraction" in cohort else 0.5,
        score_margin=_get_float("cohort", "score_margin", cohort)
        if "score_margin" in cohort else 0.4,
        seed=seed,
        race=race,
        density_given_race=density_given_race,
        age_group=_section_floats(parser, "age_group"),
        pathology=_section_floats(parser, "pathology"),
        findings=_section_floats(parser, "findings"),
        fn_model=_parse_model(parser, "fn_model"),
        fp_model=_parse_model(parser, "fp_model"),
    )
