"""Audit data model: prediction records, factor schemas, CSV interchange.

A record holds one patch's ground truth, classifier output, and subgroup
attributes.  Attributes may be missing (token ``NA``); a missing value only
excludes the record from analyses that use that variable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields, replace
from typing import Callable, Iterable, Iterator, Sequence

MISSING = "NA"

CSV_HEADER = (
    "patch_id",
    "patient_id",
    "truth",
    "score",
    "predicted",
    "race",
    "age_group",
    "density",
    "pathology",
    "mass",
    "asymmetry",
    "ad",
    "calcification",
)

FINDING_FLAGS = ("mass", "asymmetry", "ad", "calcification")


class RecordError(ValueError):
    """Unreadable, malformed, or schema-violating record input."""


@dataclass(frozen=True)
class Variable:
    """One audit variable: ordered levels plus a control (reference) level.

    ``is_flag`` marks a binary finding indicator whose control renders as
    "No <label>".  ``level_labels`` optionally maps levels to display names.
    """

    name: str
    levels: tuple[str, ...]
    control: str
    is_flag: bool = False
    label: str | None = None
    level_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(set(self.levels)) != len(self.levels) or not self.levels:
            raise ValueError(f"variable {self.name!r} needs distinct, nonempty levels")
        if self.control not in self.levels:
            raise ValueError(
                f"control {self.control!r} is not a level of {self.name!r}"
            )
        if self.level_labels is not None and len(self.level_labels) != len(self.levels):
            raise ValueError(f"level_labels of {self.name!r} must match levels")

    @property
    def display_name(self) -> str:
        return self.label if self.label is not None else self.name

    def display(self, level: str) -> str:
        if self.is_flag:
            return self.display_name if level != self.control else f"No {self.display_name}"
        if self.level_labels is not None:
            return self.level_labels[self.levels.index(level)]
        return level

    def control_display(self) -> str:
        return self.display(self.control)


@dataclass(frozen=True)
class FactorSchema:
    """Ordered collection of variables with uniqueness and lookup."""

    variables: tuple[Variable, ...]

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names in schema")

    def __iter__(self) -> Iterator[Variable]:
        return iter(self.variables)

    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def get(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(f"unknown variable {name!r}")

    def with_overrides(
        self,
        levels: dict[str, Sequence[str]] | None = None,
        controls: dict[str, str] | None = None,
    ) -> "FactorSchema":
        out = []
        for v in self.variables:
            lv = tuple(levels[v.name]) if levels and v.name in levels else v.levels
            ctrl = controls[v.name] if controls and v.name in controls else v.control
            labels = v.level_labels if lv == v.levels else None
            out.append(replace(v, levels=lv, control=ctrl, level_labels=labels))
        return FactorSchema(tuple(out))


def default_schema() -> FactorSchema:
    """Schema with the conventional control groups: White, <50, density A,
    never biopsied, and each finding absent."""
    return FactorSchema(
        (
            Variable("race", ("White", "Black", "Other"), "White"),
            Variable(
                "age_group",
                ("<50", "50-60", "60-70", ">70"),
                "<50",
                level_labels=("<50y/o", "50-60y/o", "60-70y/o", ">70y/o"),
            ),
            Variable(
                "density",
                ("A", "B", "C", "D"),
                "A",
                label="BI-RADS density",
                level_labels=tuple(f"BI-RADS density {d}" for d in "ABCD"),
            ),
            Variable(
                "pathology",
                ("NeverBiopsied", "Benign", "Cancer"),
                "NeverBiopsied",
                level_labels=("Never Biopsied", "Benign", "Cancer"),
            ),
            Variable("mass", ("0", "1"), "0", is_flag=True, label="Mass"),
            Variable("asymmetry", ("0", "1"), "0", is_flag=True, label="Asymmetry"),
            Variable("ad", ("0", "1"), "0", is_flag=True, label="AD"),
            Variable(
                "calcification", ("0", "1"), "0", is_flag=True, label="Calcification"
            ),
        )
    )


# variables that describe the whole image and therefore exist on negatives
WHOLE_IMAGE_VARIABLES = ("race", "age_group", "density")
POSITIVE_ONLY_VARIABLES = ("pathology",) + FINDING_FLAGS


@dataclass(frozen=True)
class PredictionRecord:
    """One patch: identity, truth, classifier output, subgroup attributes."""

    patch_id: str
    patient_id: str
    truth: int
    score: float | None = None
    predicted: int | None = None
    race: str | None = None
    age_group: str | None = None
    density: str | None = None
    pathology: str | None = None
    mass: int | None = None
    asymmetry: int | None = None
    ad: int | None = None
    calcification: int | None = None

    def value(self, variable: str) -> str | None:
        """Attribute value as a level string (flags become "0"/"1")."""
        v = getattr(self, variable)
        if v is None:
            return None
        return str(v) if variable in FINDING_FLAGS else v


def derive_predicted(record: PredictionRecord, threshold: float = 0.5) -> int:
    """Predicted label: the explicit label when present, else score >= threshold."""
    if record.predicted is not None:
        return record.predicted
    if record.score is not None:
        return 1 if record.score >= threshold else 0
    raise RecordError(f"record {record.patch_id!r} has neither score nor predicted")


@dataclass(frozen=True)
class Dataset:
    """Immutable record collection with filtering provenance."""

    records: tuple[PredictionRecord, ...]
    source: str = "<memory>"
    raw_rows: int = -1
    excluded_rows: int = 0

    def __post_init__(self):
        if self.raw_rows < 0:
            object.__setattr__(self, "raw_rows", len(self.records))
        if self.excluded_rows != self.raw_rows - len(self.records):
            raise ValueError("excluded_rows must equal raw_rows minus retained rows")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[PredictionRecord]:
        return iter(self.records)

    def filter(self, keep: Callable[[PredictionRecord], bool], note: str = "") -> "Dataset":
        kept = tuple(r for r in self.records if keep(r))
        src = f"{self.source}|{note}" if note else self.source
        return Dataset(
            kept,
            source=src,
            raw_rows=len(self.records),
            excluded_rows=len(self.records) - len(kept),
        )

    def positives(self) -> "Dataset":
        return self.filter(lambda r: r.truth == 1, "truth=1")

    def negatives(self) -> "Dataset":
        return self.filter(lambda r: r.truth == 0, "truth=0")


def _parse_optional(token: str) -> str | None:
    token = token.strip()
    return None if token in ("", MISSING) else token


def _parse_flag(token: str, column: str, line: int, problems: list[str]) -> int | None:
    val = _parse_optional(token)
    if val is None:
        return None
    if val not in ("0", "1"):
        problems.append(f"line {line}: {column} must be 0, 1, or {MISSING} (got {val!r})")
        return None
    return int(val)


def parse_records(path, schema: FactorSchema | None = None) -> Dataset:
    """Parse a records CSV into a Dataset, validating against the schema.

    All problems are collected and raised together as a RecordError that
    names the offending lines (the header is line 1).
    """
    schema = schema or default_schema()
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise RecordError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise RecordError(f"{path}: empty file, expected header {','.join(CSV_HEADER)}")
    header = tuple(h.strip() for h in rows[0])
    if header != CSV_HEADER:
        raise RecordError(
            f"{path}: bad header {','.join(header)!r}; expected {','.join(CSV_HEADER)}"
        )

    problems: list[str] = []
    seen_ids: set[str] = set()
    records: list[PredictionRecord] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(CSV_HEADER):
            problems.append(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            continue
        rec = _parse_row(row, lineno, schema, problems)
        if rec is None:
            continue
        if rec.patch_id in seen_ids:
            problems.append(f"line {lineno}: duplicate patch_id {rec.patch_id!r}")
            continue
        seen_ids.add(rec.patch_id)
        records.append(rec)
    if problems:
        raise RecordError(f"{path}: " + "; ".join(problems))
    return Dataset(tuple(records), source=str(path))


def _parse_row(row, lineno, schema, problems) -> PredictionRecord | None:
    bad = len(problems)
    patch_id, patient_id = row[0].strip(), row[1].strip()
    if not patch_id:
        problems.append(f"line {lineno}: empty patch_id")

    truth_tok = row[2].strip()
    truth = 0
    if truth_tok not in ("0", "1"):
        problems.append(f"line {lineno}: truth must be 0 or 1 (got {truth_tok!r})")
    else:
        truth = int(truth_tok)

    score = None
    tok = _parse_optional(row[3])
    if tok is not None:
        try:
            score = float(tok)
        except ValueError:
            problems.append(f"line {lineno}: score is not a number (got {tok!r})")
        else:
            if not 0.0 <= score <= 1.0:
                problems.append(f"line {lineno}: score {score} outside [0,1]")

    predicted = _parse_flag(row[4], "predicted", lineno, problems)
    if score is None and predicted is None:
        problems.append(f"line {lineno}: record has neither score nor predicted")

    cats: dict[str, str | None] = {}
    for col, tok in zip(("race", "age_group", "density", "pathology"), row[5:9]):
        val = _parse_optional(tok)
        if val is not None and val not in schema.get(col).levels:
            problems.append(f"line {lineno}: unknown level {val!r} for {col}")
            val = None
        cats[col] = val

    flags = {
        name: _parse_flag(tok, name, lineno, problems)
        for name, tok in zip(FINDING_FLAGS, row[9:13])
    }

    if truth == 0:
        present = [k for k in ("pathology", *FINDING_FLAGS)
                   if (cats.get(k) if k == "pathology" else flags.get(k)) is not None]
        if present:
            problems.append(
                f"line {lineno}: {', '.join(present)} set on a truth=0 record"
            )

    if len(problems) > bad:
        return None
    return PredictionRecord(
        patch_id=patch_id,
        patient_id=patient_id,
        truth=truth,
        score=score,
        predicted=predicted,
        race=cats["race"],
        age_group=cats["age_group"],
        density=cats["density"],
        pathology=cats["pathology"],
        **flags,
    )


def write_records(records: Iterable[PredictionRecord], path) -> None:
    """Write records in the interchange CSV format (NA for missing)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.patch_id,
                    r.patient_id,
                    r.truth,
                    MISSING if r.score is None else format(r.score, ".17g"),
                    MISSING if r.predicted is None else r.predicted,
                    r.race or MISSING,
                    r.age_group or MISSING,
                    r.density or MISSING,
                    r.pathology or MISSING,
                    MISSING if r.mass is None else r.mass,
                    MISSING if r.asymmetry is None else r.asymmetry,
                    MISSING if r.ad is None else r.ad,
                    MISSING if r.calcification is None else r.calcification,
                ]
            )
