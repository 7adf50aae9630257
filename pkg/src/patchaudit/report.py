"""Full-audit orchestration and paper-shaped report rendering.

``run_audit`` chains parsing, metrics, bootstraps, pairwise tests, and the
failure-risk regressions, producing an in-memory report;
``write_report`` then renders every artifact (aligned text plus
machine-readable CSVs).  All computation happens before any file is
written, so a failing audit leaves no partial output, and everything is a
pure function of (input, config, seed).
"""

from __future__ import annotations

import configparser
import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .bootstrap import BootstrapDistribution, BootstrapError, BootstrapSpec, run_bootstrap, run_bootstrap_multi
from .metrics import MetricError, MetricSet, RocCurve, confusion, metric_set, roc_curve
from .records import Dataset, FactorSchema, RecordError, default_schema
from .riskmodel import OUTCOME_FN, OUTCOME_FP, RiskTable, default_variables, risk_table
from .stats import TestResult, bonferroni, welch_t

GRID_METRICS = ("accuracy", "auc", "recall", "precision", "f1")
GRID_CHARACTERISTICS = ("race", "age_group", "pathology", "findings")
PAIRWISE_CHARACTERISTICS = ("race", "age_group", "density", "pathology", "findings")

OVERALL = "Overall"


class AuditError(RuntimeError):
    """A stage of the audit failed; the message names the stage."""


@dataclass(frozen=True)
class AuditConfig:
    """Everything the audit depends on besides the records themselves."""

    seed: int = 0
    threshold: float = 0.5
    iterations: int = 200
    ci_method: str = "normal"
    size_lo: int | None = None
    size_hi: int | None = None
    density_size_ranges: Mapping[str, tuple[int, int]] = field(default_factory=dict)
    schema: FactorSchema = field(default_factory=default_schema)
    workers: int = 1


def load_audit_config(path, base: AuditConfig | None = None) -> AuditConfig:
    """Read audit settings (and schema overrides) from a sections file."""
    base = base or AuditConfig()
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",))
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise AuditError(f"config: {exc}") from exc

    audit = parser["audit"] if "audit" in parser else {}

    def _get(key, cast, fallback):
        if key not in audit:
            return fallback
        try:
            return cast(audit[key])
        except ValueError as exc:
            raise AuditError(f"config: audit.{key}: {exc}") from exc

    levels = {}
    controls = {}
    if "levels" in parser:
        levels = {k: tuple(x.strip() for x in v.split(",") if x.strip())
                  for k, v in parser["levels"].items()}
    if "controls" in parser:
        controls = dict(parser["controls"].items())
    schema = base.schema.with_overrides(levels or None, controls or None)

    density_ranges = dict(base.density_size_ranges)
    if "density_sizes" in parser:
        for level, spec in parser["density_sizes"].items():
            try:
                lo, hi = (int(x) for x in spec.split(":"))
            except ValueError as exc:
                raise AuditError(
                    f"config: density_sizes.{level}: expected lo:hi"
                ) from exc
            density_ranges[level] = (lo, hi)

    return AuditConfig(
        seed=_get("seed", int, base.seed),
        threshold=_get("threshold", float, base.threshold),
        iterations=_get("iterations", int, base.iterations),
        ci_method=_get("ci", str, base.ci_method),
        size_lo=_get("size_lo", int, base.size_lo),
        size_hi=_get("size_hi", int, base.size_hi),
        density_size_ranges=density_ranges,
        schema=schema,
        workers=base.workers,
    )


@dataclass(frozen=True)
class GridCell:
    n: int
    dists: Mapping[str, BootstrapDistribution]


@dataclass(frozen=True)
class GridRow:
    characteristic: str
    label: str
    cells: Mapping[str, GridCell | None]


@dataclass(frozen=True)
class PairwiseTest:
    characteristic: str
    level_a: str
    level_b: str
    result: TestResult
    m: int


@dataclass(frozen=True)
class AuditReport:
    header: Mapping[str, object]
    overall_point: MetricSet
    overall: Mapping[str, BootstrapDistribution]
    grid_columns: tuple[str, ...]
    grid: tuple[GridRow, ...]
    fn_table: RiskTable | None
    fp_table: RiskTable | None
    pairwise: tuple[PairwiseTest, ...]
    roc: Mapping[str, RocCurve]
    auc_distributions: Mapping[str, BootstrapDistribution]


def _subgroups(schema: FactorSchema, characteristic: str):
    """(display characteristic, [(label, predicate)]) for one characteristic."""
    if characteristic == "findings":
        pairs = []
        for name in ("mass", "calcification", "ad", "asymmetry"):
            try:
                var = schema.get(name)
            except KeyError:
                continue
            pairs.append(
                (var.display_name, lambda r, n=name: r.value(n) == "1")
            )
        return "Image Findings", pairs
    var = schema.get(characteristic)
    title = {"race": "Race", "age_group": "Age Group", "density": "BI-RADS Density",
             "pathology": "Pathology"}.get(characteristic, var.display_name)
    return title, [
        (var.display(level), lambda r, v=characteristic, l=level: r.value(v) == l)
        for level in var.levels
    ]


def _cell_spec(seed: int, cell_id: int, iterations: int,
               lo: int, hi: int, n: int) -> BootstrapSpec | None:
    if n < 1:
        return None
    hi_c = min(hi, n)
    lo_c = max(1, min(lo, hi_c))
    return BootstrapSpec(size_lo=lo_c, size_hi=hi_c, iterations=iterations,
                         seed=seed * 1_000_003 + cell_id + 1)


def _bootstrap_cell(records, spec, metrics, config) -> GridCell | None:
    if spec is None or len(records) < 1:
        return None
    try:
        dists = run_bootstrap_multi(
            records, spec, metrics, threshold=config.threshold,
            ci_method=config.ci_method, workers=config.workers,
        )
    except BootstrapError:
        # retry metric by metric; the resamples are identical per seed, so
        # surviving metrics match what the joint run would have produced
        dists = {}
        for m in metrics:
            try:
                dists[m] = run_bootstrap(
                    records, spec, m, threshold=config.threshold,
                    ci_method=config.ci_method, workers=config.workers,
                )
            except BootstrapError:
                continue
        if not dists:
            return None
    return GridCell(n=len(records), dists=dists)


def run_audit(dataset: Dataset, config: AuditConfig) -> AuditReport:
    records = dataset.records
    if not records:
        raise RecordError("audit input holds no records")
    schema = config.schema
    n = len(records)
    lo_overall = config.size_lo if config.size_lo is not None else min(1000, n)
    hi_overall = config.size_hi if config.size_hi is not None else n

    try:
        counts = confusion(records, config.threshold)
        overall_point = metric_set(counts, records)
    except MetricError as exc:
        raise AuditError(f"metrics: {exc}") from exc

    cell_id = 0
    spec = _cell_spec(config.seed, cell_id, config.iterations, lo_overall, hi_overall, n)
    overall_cell = _bootstrap_cell(records, spec, GRID_METRICS + ("fnr", "fpr"), config)
    if overall_cell is None:
        raise AuditError("resample: overall bootstrap failed")

    # subgroup x density grid
    density_var = schema.get("density")
    columns = tuple(density_var.display(lv) for lv in density_var.levels) + (OVERALL,)
    col_filters = [
        (density_var.display(lv), lambda r, l=lv: r.value("density") == l)
        for lv in density_var.levels
    ] + [(OVERALL, lambda r: True)]
    col_ranges = {}
    for lv in density_var.levels:
        stratum = [r for r in records if r.value("density") == lv]
        lo, hi = config.density_size_ranges.get(
            lv, (min(500, max(1, len(stratum))), max(1, len(stratum)))
        )
        col_ranges[density_var.display(lv)] = (lo, hi)
    col_ranges[OVERALL] = (lo_overall, hi_overall)

    grid: list[GridRow] = []
    rows = [("Overall", "Overall", lambda r: True)]
    for char in GRID_CHARACTERISTICS:
        try:
            title, pairs = _subgroups(schema, char)
        except KeyError:
            continue
        rows.extend((title, label, pred) for label, pred in pairs)
    for title, label, pred in rows:
        row_records = [r for r in records if pred(r)]
        cells: dict[str, GridCell | None] = {}
        for col_name, col_pred in col_filters:
            cell_id += 1
            cell_records = [r for r in row_records if col_pred(r)]
            lo, hi = col_ranges[col_name]
            cspec = _cell_spec(config.seed, cell_id, config.iterations,
                               lo, hi, len(cell_records))
            cells[col_name] = _bootstrap_cell(cell_records, cspec, GRID_METRICS, config)
        grid.append(GridRow(characteristic=title, label=label, cells=cells))

    # per-subgroup AUC distributions, ROC curves, and pairwise tests
    auc_dists: dict[str, BootstrapDistribution] = {}
    roc: dict[str, RocCurve] = {}
    pairwise: list[PairwiseTest] = []
    try:
        roc[OVERALL] = roc_curve(records)
    except MetricError:
        pass
    auc_dists[OVERALL] = overall_cell.dists["auc"] if "auc" in overall_cell.dists else None
    if auc_dists[OVERALL] is None:
        del auc_dists[OVERALL]

    for char in PAIRWISE_CHARACTERISTICS:
        try:
            title, pairs = _subgroups(schema, char)
        except KeyError:
            continue
        level_dists: list[tuple[str, BootstrapDistribution]] = []
        for label, pred in pairs:
            sub = [r for r in records if pred(r)]
            cell_id += 1
            cspec = _cell_spec(config.seed, cell_id, config.iterations,
                               min(500, max(1, len(sub))), max(1, len(sub)), len(sub))
            cell = _bootstrap_cell(sub, cspec, ("auc",), config)
            if cell is not None and "auc" in cell.dists:
                key = f"{title}: {label}"
                auc_dists[key] = cell.dists["auc"]
                level_dists.append((label, cell.dists["auc"]))
            try:
                roc[f"{title}: {label}"] = roc_curve(sub)
            except MetricError:
                pass
        m = len(level_dists) * (len(level_dists) - 1) // 2
        if m == 0:
            continue
        tests = []
        for i in range(len(level_dists)):
            for j in range(i + 1, len(level_dists)):
                la, da = level_dists[i]
                lb, db = level_dists[j]
                tests.append((la, lb, welch_t(da.values, db.values)))
        adjusted = bonferroni([t.p for _, _, t in tests], m)
        for (la, lb, t), p_adj in zip(tests, adjusted):
            pairwise.append(PairwiseTest(
                characteristic=title, level_a=la, level_b=lb,
                result=t.with_adjusted(p_adj), m=m,
            ))

    # failure-risk tables
    fn_table = fp_table = None
    if default_variables(OUTCOME_FN, schema, records):
        fn_table = risk_table(
            records, schema, OUTCOME_FN, mode="both",
            threshold=config.threshold, iterations=config.iterations,
            seed=config.seed,
        )
    if default_variables(OUTCOME_FP, schema, records):
        fp_table = risk_table(
            records, schema, OUTCOME_FP, mode="both",
            threshold=config.threshold, iterations=config.iterations,
            seed=config.seed,
        )

    header = {
        "tool": "patchaudit",
        "source": dataset.source,
        "records": n,
        "positives": counts.positives,
        "negatives": counts.negatives,
        "seed": config.seed,
        "threshold": config.threshold,
        "iterations": config.iterations,
        "ci_method": config.ci_method,
        "size_range": f"{lo_overall}:{hi_overall}",
    }
    return AuditReport(
        header=header,
        overall_point=overall_point,
        overall=overall_cell.dists,
        grid_columns=columns,
        grid=tuple(grid),
        fn_table=fn_table,
        fp_table=fp_table,
        pairwise=tuple(pairwise),
        roc=roc,
        auc_distributions=auc_dists,
    )


def _fmt(x, digits: int = 3) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.{digits}f}"


def _fmt_p(p) -> str:
    if p is None or (isinstance(p, float) and math.isnan(p)):
        return ""
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def _cell_text(dist: BootstrapDistribution | None) -> str:
    if dist is None:
        return ""
    if dist.ci_method == "normal":
        return f"{dist.mean:.3f}±{dist.ci_halfwidth:.3f}"
    return f"{dist.mean:.3f} [{dist.ci_low:.3f},{dist.ci_high:.3f}]"


def _render_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(headers), line("-" * w for w in widths)]
    out.extend(line(row) for row in rows)
    return "\n".join(out)


def _risk_rows(table: RiskTable):
    rows = []
    for r in table.rows:
        rows.append([
            r.label,
            _fmt(r.odds_ratio), _fmt(r.risk_ratio),
            _fmt_p(r.univariate_p), _fmt_p(r.p),
            str(r.n_level), r.control_label,
            r.error or "",
        ])
    return rows


def render_text(report: AuditReport) -> str:
    parts: list[str] = []
    parts.append("\n".join(f"{k} = {v}" for k, v in report.header.items()))

    point = report.overall_point
    rows = []
    for m in GRID_METRICS + ("fnr", "fpr"):
        dist = report.overall.get(m)
        rows.append([m, _fmt(point.get(m)), _cell_text(dist)])
    parts.append("Overall performance\n" + _render_table(
        ["metric", "point", "bootstrap mean±95% CI"], rows))

    grid_rows = []
    last_char = None
    for row in report.grid:
        char = row.characteristic if row.characteristic != last_char else ""
        last_char = row.characteristic
        for metric in GRID_METRICS:
            cells = [
                _cell_text(row.cells[c].dists.get(metric))
                if row.cells[c] is not None else ""
                for c in report.grid_columns
            ]
            grid_rows.append(
                [char if metric == GRID_METRICS[0] else "",
                 row.label if metric == GRID_METRICS[0] else "",
                 metric] + cells
            )
            char = ""
    parts.append("Subgroup performance by tissue density\n" + _render_table(
        ["characteristic", "subgroup", "metric"] + list(report.grid_columns),
        grid_rows))

    risk_headers = ["variable", "OR", "RR", "univariate p", "multivariate p",
                    "patches", "control group", "note"]
    if report.fn_table is not None:
        parts.append(
            f"False negative risk (abnormal patches, n = {report.fn_table.n_records})\n"
            + _render_table(risk_headers, _risk_rows(report.fn_table)))
    if report.fp_table is not None:
        parts.append(
            f"False positive risk (normal patches, n = {report.fp_table.n_records})\n"
            + _render_table(risk_headers, _risk_rows(report.fp_table)))

    if report.pairwise:
        rows = [
            [t.characteristic, t.level_a, t.level_b, _fmt(t.result.t, 3),
             _fmt(t.result.df, 1), _fmt_p(t.result.p),
             _fmt_p(t.result.p_adjusted), str(t.m),
             "*" if t.result.significant else ""]
            for t in report.pairwise
        ]
        parts.append("Pairwise AUC comparisons (Welch t on bootstrap "
                     "distributions, Bonferroni-adjusted)\n" + _render_table(
            ["characteristic", "subgroup A", "subgroup B", "t", "df",
             "p", "adjusted p", "m", "sig"], rows))

    return "\n\n".join(parts) + "\n"


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower()


def write_report(report: AuditReport, outdir) -> list[Path]:
    """Render every artifact under outdir; returns the paths written."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def _open(relpath: str):
        path = out / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        written.append(path)
        return open(path, "w", encoding="utf-8", newline="")

    with _open("report.txt") as fh:
        fh.write(render_text(report))

    with _open("overall_metrics.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "point", "mean", "sd", "ci_low", "ci_high", "n_defined"])
        for m in GRID_METRICS + ("fnr", "fpr"):
            dist = report.overall.get(m)
            point = report.overall_point.get(m)
            if dist is None:
                w.writerow([m, _num(point), "", "", "", "", ""])
            else:
                w.writerow([m, _num(point), _num(dist.mean), _num(dist.sd),
                            _num(dist.ci_low), _num(dist.ci_high), dist.n_defined])

    with _open("subgroup_density_metrics.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["characteristic", "subgroup", "density", "metric", "n",
                    "mean", "sd", "ci_low", "ci_high"])
        for row in report.grid:
            for col in report.grid_columns:
                cell = row.cells[col]
                if cell is None:
                    continue
                for metric in GRID_METRICS:
                    dist = cell.dists.get(metric)
                    if dist is None:
                        w.writerow([row.characteristic, row.label, col, metric,
                                    cell.n, "", "", "", ""])
                    else:
                        w.writerow([row.characteristic, row.label, col, metric,
                                    cell.n, _num(dist.mean), _num(dist.sd),
                                    _num(dist.ci_low), _num(dist.ci_high)])

    for name, table in (("fn_risk.csv", report.fn_table),
                        ("fp_risk.csv", report.fp_table)):
        if table is None:
            continue
        with _open(name) as fh:
            w = csv.writer(fh)
            w.writerow(["variable", "level", "label", "odds_ratio", "or_low",
                        "or_high", "risk_ratio", "rr_low", "rr_high", "p0",
                        "univariate_p", "multivariate_p", "n", "control",
                        "error"])
            for r in table.rows:
                w.writerow([r.variable, r.level, r.label, _num(r.odds_ratio),
                            _num(r.or_low), _num(r.or_high), _num(r.risk_ratio),
                            _num(r.rr_low), _num(r.rr_high), _num(r.p0),
                            _num(r.univariate_p), _num(r.p), r.n_level,
                            r.control_label, r.error or ""])

    if report.pairwise:
        with _open("auc_pairwise_tests.csv") as fh:
            w = csv.writer(fh)
            w.writerow(["characteristic", "level_a", "level_b", "t", "df",
                        "p", "p_adjusted", "m", "significant"])
            for t in report.pairwise:
                w.writerow([t.characteristic, t.level_a, t.level_b,
                            _num(t.result.t), _num(t.result.df), _num(t.result.p),
                            _num(t.result.p_adjusted), t.m,
                            int(t.result.significant)])

    for name, curve in report.roc.items():
        with _open(f"roc/{_slug(name)}.csv") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fpr", "tpr"])
            for th, fp, tp in zip(curve.thresholds, curve.fpr, curve.tpr):
                w.writerow(["inf" if math.isinf(th) else _num(th), _num(fp), _num(tp)])

    for name, dist in report.auc_distributions.items():
        with _open(f"bootstrap/{_slug(name)}__auc.csv") as fh:
            fh.write("auc\n")
            for v in dist.values:
                fh.write(("" if math.isnan(v) else _num(v)) + "\n")

    return written


def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return format(x, ".10g")
    return str(x)
