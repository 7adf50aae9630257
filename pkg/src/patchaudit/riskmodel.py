"""Failure-risk regression: dummy-coded logistic models of false negatives
(on abnormal patches) and false positives (on normal patches), Wald
inference, and odds-ratio to risk-ratio conversion.

The risk ratio for a level is RR = OR / (1 - P0 + P0*OR), where P0 is the
control level's share among the correctly predicted records (true
positives for the FN analysis, true negatives for the FP analysis).  One
P0 per variable, shared by all of its levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bootstrap import BootstrapError, BootstrapSpec, run_bootstrap
from .records import (
    FactorSchema,
    PredictionRecord,
    Variable,
    WHOLE_IMAGE_VARIABLES,
    derive_predicted,
)
from .stats import ALPHA, StatError, normal_two_sided_p, welch_t

OUTCOME_FN = "fn"
OUTCOME_FP = "fp"

Z_95 = 1.96

# variables entering each analysis by default; findings and pathology only
# exist on abnormal patches
FN_VARIABLES = ("race", "age_group", "density", "pathology",
                "mass", "asymmetry", "ad", "calcification")
FP_VARIABLES = WHOLE_IMAGE_VARIABLES


class FitError(RuntimeError):
    """Base class for regression failures."""


class SeparationError(FitError):
    """A covariate pattern perfectly predicts the outcome."""


class SingularInformationError(FitError):
    """The information matrix is singular (collinear design)."""


class NonConvergenceError(FitError):
    """Newton iterations exhausted without meeting the tolerance."""


class DesignError(ValueError):
    """The requested design cannot be built from these records."""


@dataclass(frozen=True)
class DesignColumn:
    variable: str
    level: str
    label: str
    control_label: str


@dataclass(frozen=True)
class RegressionDesign:
    """Outcome vector plus intercept-led indicator matrix.

    ``columns`` describes X[:, 1:]; column 0 is the intercept.
    """

    X: np.ndarray
    y: np.ndarray
    columns: tuple[DesignColumn, ...]
    outcome: str
    n_dropped: int

    @property
    def n_rows(self) -> int:
        return int(self.X.shape[0])


def _restrict(records: Sequence[PredictionRecord], outcome: str):
    if outcome == OUTCOME_FN:
        return [r for r in records if r.truth == 1]
    if outcome == OUTCOME_FP:
        return [r for r in records if r.truth == 0]
    raise DesignError(f"unknown outcome kind {outcome!r}")


def _failure(record: PredictionRecord, outcome: str, threshold: float) -> int:
    pred = derive_predicted(record, threshold)
    if outcome == OUTCOME_FN:
        return 1 if pred == 0 else 0
    return 1 if pred == 1 else 0


def build_design(
    records: Sequence[PredictionRecord],
    schema: FactorSchema,
    variables: Sequence[str],
    outcome: str,
    threshold: float = 0.5,
) -> RegressionDesign:
    """Dummy-code the variables against their controls.

    Rows missing any included variable are dropped (the drop count is kept);
    each variable must still show at least two levels afterwards.
    """
    subset = _restrict(records, outcome)
    vars_ = [schema.get(name) for name in variables]
    if not vars_:
        raise DesignError("no variables requested")
    kept = [r for r in subset if all(r.value(v.name) is not None for v in vars_)]
    n_dropped = len(subset) - len(kept)
    if not kept:
        raise DesignError(f"empty design: no records carry {list(variables)}")

    columns: list[DesignColumn] = []
    data: list[np.ndarray] = [np.ones(len(kept))]
    for v in vars_:
        values = [r.value(v.name) for r in kept]
        observed = {x for x in values}
        if len(observed) < 2:
            raise DesignError(
                f"variable {v.name!r} has fewer than 2 observed levels"
            )
        if v.control not in observed:
            raise DesignError(
                f"control level {v.control!r} of {v.name!r} has no records"
            )
        for level in v.levels:
            if level == v.control or level not in observed:
                continue
            data.append(np.fromiter((1.0 if x == level else 0.0 for x in values),
                                    dtype=np.float64, count=len(values)))
            columns.append(DesignColumn(v.name, level, v.display(level),
                                        v.control_display()))
    X = np.column_stack(data)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise DesignError("design columns are linearly dependent")
    y = np.fromiter((_failure(r, outcome, threshold) for r in kept),
                    dtype=np.float64, count=len(kept))
    return RegressionDesign(
        X=X, y=y, columns=tuple(columns), outcome=outcome, n_dropped=n_dropped
    )


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    cov: np.ndarray
    loglik: float
    iterations: int
    converged: bool


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _loglik(y: np.ndarray, eta: np.ndarray) -> float:
    # y*log(p) + (1-y)*log(1-p), computed through logaddexp for stability
    return float(-np.sum(np.logaddexp(0.0, -eta) * y + np.logaddexp(0.0, eta) * (1.0 - y)))


def fit_mle(
    design: RegressionDesign,
    ridge: float = 0.0,
    max_iterations: int = 50,
    grad_tol: float = 1e-8,
    step_tol: float = 1e-10,
) -> FitResult:
    """Maximize the Bernoulli log-likelihood by Newton-Raphson.

    Convergence requires the score max-norm <= grad_tol (or a step below
    step_tol); one extra Newton step is taken afterwards so the returned
    estimate sits at quadratic-limit accuracy.  An optional ridge penalty
    (on non-intercept terms) is available for degenerate inputs.
    """
    X, y = design.X, design.y
    n, p = X.shape
    penalty = np.zeros(p)
    penalty[1:] = ridge

    beta = np.zeros(p)
    ybar = min(max(float(y.mean()), 1.0 / (n + 1)), n / (n + 1.0))
    beta[0] = math.log(ybar / (1.0 - ybar))

    eta = X @ beta
    ll = _loglik(y, eta) - 0.5 * float(penalty @ (beta * beta))
    converged = False
    iterations = 0
    while iterations < max_iterations:
        iterations += 1
        prob = _sigmoid(eta)
        grad = X.T @ (y - prob) - penalty * beta
        if float(np.max(np.abs(grad))) <= grad_tol:
            converged = True
            # one more Newton step pins the estimate to quadratic-limit
            # accuracy; the stopping rule itself stays at grad_tol
        w = prob * (1.0 - prob)
        hess = (X * w[:, None]).T @ X + np.diag(penalty)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularInformationError(
                "information matrix is singular; check for collinear levels"
            ) from exc
        # dampen any step that would lower the penalized likelihood
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            cand_eta = X @ cand
            cand_ll = _loglik(y, cand_eta) - 0.5 * float(penalty @ (cand * cand))
            if cand_ll >= ll - 1e-12:
                break
            scale *= 0.5
        improving = cand_ll > ll
        beta, eta, ll = cand, cand_eta, cand_ll
        if converged:
            break
        if ridge == 0.0 and improving and float(np.max(np.abs(beta))) > 15.0:
            raise SeparationError(
                "a coefficient diverged (|beta| > 15) while the likelihood "
                "was still improving; a covariate separates the outcome"
            )
        if float(np.max(np.abs(scale * step))) <= step_tol:
            converged = True
            break
    if not converged:
        raise NonConvergenceError(
            f"no convergence after {max_iterations} Newton iterations"
        )

    prob = _sigmoid(eta)
    if ridge == 0.0:
        _check_level_separation(design, prob)
    w = prob * (1.0 - prob)
    hess = (X * w[:, None]).T @ X + np.diag(penalty)
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError as exc:
        raise SingularInformationError("information matrix is singular") from exc
    return FitResult(beta=beta, cov=cov, loglik=ll, iterations=iterations,
                     converged=True)


def _check_level_separation(design: RegressionDesign, prob: np.ndarray) -> None:
    eps = 1e-10
    for j, col in enumerate(design.columns, start=1):
        members = design.X[:, j] == 1.0
        if not members.any():
            continue
        pm = prob[members]
        if np.all(pm <= eps) or np.all(pm >= 1.0 - eps):
            raise SeparationError(
                f"level {col.variable}={col.level} is perfectly predicted"
            )


@dataclass(frozen=True)
class WaldRow:
    z: float
    p: float
    beta_low: float
    beta_high: float


def wald(fit: FitResult) -> list[WaldRow]:
    """Per-coefficient z, two-sided p, and 95% CI on beta."""
    if not fit.converged:
        raise FitError("Wald inference requires a converged fit")
    se = np.sqrt(np.diag(fit.cov))
    rows = []
    for b, s in zip(fit.beta, se):
        z = b / s if s > 0 else math.inf * np.sign(b) if b else 0.0
        rows.append(WaldRow(z=float(z), p=normal_two_sided_p(float(z)),
                            beta_low=float(b - Z_95 * s), beta_high=float(b + Z_95 * s)))
    return rows


def p0_control_share(
    records: Sequence[PredictionRecord],
    variable: Variable | str,
    outcome: str,
    schema: FactorSchema | None = None,
    threshold: float = 0.5,
) -> float:
    """Share of the variable's control level among correctly predicted
    records (TPs for the FN analysis, TNs for the FP analysis)."""
    if isinstance(variable, str):
        if schema is None:
            raise DesignError("schema required when variable is given by name")
        variable = schema.get(variable)
    subset = _restrict(records, outcome)
    correct = [
        r for r in subset
        if _failure(r, outcome, threshold) == 0 and r.value(variable.name) is not None
    ]
    if not correct:
        raise DesignError(
            f"no correctly predicted records carry {variable.name!r}"
        )
    hits = sum(1 for r in correct if r.value(variable.name) == variable.control)
    return hits / len(correct)


def or_to_rr(odds_ratio: float, p0: float) -> float:
    """Standard conversion RR = OR / (1 - P0 + P0*OR)."""
    if odds_ratio <= 0:
        raise ValueError("odds ratio must be positive")
    if not 0.0 < p0 < 1.0:
        raise ValueError("P0 must lie strictly inside (0, 1)")
    return odds_ratio / (1.0 - p0 + p0 * odds_ratio)


def p0_from_or_rr(odds_ratio: float, risk_ratio: float) -> float:
    """Invert or_to_rr; useful for auditing published (OR, RR) tables."""
    if odds_ratio <= 0 or risk_ratio <= 0:
        raise ValueError("ratios must be positive")
    if odds_ratio == 1.0:
        raise ValueError("P0 is unidentified when OR = 1")
    return (odds_ratio - risk_ratio) / (risk_ratio * (odds_ratio - 1.0))


@dataclass(frozen=True)
class EffectRow:
    """One regression level: effect sizes, inference, and provenance."""

    variable: str
    level: str
    label: str
    control_label: str
    n_level: int
    odds_ratio: float | None = None
    or_low: float | None = None
    or_high: float | None = None
    p: float | None = None
    p0: float | None = None
    risk_ratio: float | None = None
    rr_low: float | None = None
    rr_high: float | None = None
    univariate_p: float | None = None
    error: str | None = None


@dataclass(frozen=True)
class RiskTable:
    outcome: str
    mode: str
    rows: tuple[EffectRow, ...]
    n_records: int
    n_dropped: int


def default_variables(
    outcome: str, schema: FactorSchema, records: Sequence[PredictionRecord]
) -> list[str]:
    """Variables applicable to the outcome that the records actually carry."""
    wanted = FN_VARIABLES if outcome == OUTCOME_FN else FP_VARIABLES
    subset = _restrict(records, outcome)
    out = []
    for name in wanted:
        if name not in schema.names():
            continue
        observed = {r.value(name) for r in subset} - {None}
        if len(observed) >= 2:
            out.append(name)
    return out


def _univariate_reference_p(
    subset: Sequence[PredictionRecord],
    variable: Variable,
    outcome: str,
    threshold: float,
    iterations: int,
    seed: int,
    stream: int,
) -> dict[str, float]:
    """Bootstrap-t p-values of each level's failure rate against the control."""
    metric = "fnr" if outcome == OUTCOME_FN else "fpr"
    groups: dict[str, list[PredictionRecord]] = {}
    for r in subset:
        val = r.value(variable.name)
        if val is not None:
            groups.setdefault(val, []).append(r)

    def dist(level: str, offset: int):
        recs = groups.get(level, [])
        if len(recs) < 2:
            return None
        spec = BootstrapSpec(
            size_lo=min(500, len(recs)),
            size_hi=len(recs),
            iterations=iterations,
            seed=seed + stream * 1000003 + offset,
        )
        try:
            return run_bootstrap(recs, spec, metric, threshold=threshold).values
        except BootstrapError:
            return None

    control = dist(variable.control, 0)
    out: dict[str, float] = {}
    for k, level in enumerate(variable.levels):
        if level == variable.control or control is None:
            continue
        values = dist(level, k + 1)
        if values is None:
            continue
        try:
            out[level] = welch_t(values, control).p
        except StatError:
            continue
    return out


def risk_table(
    records: Sequence[PredictionRecord],
    schema: FactorSchema,
    outcome: str,
    mode: str = "both",
    variables: Sequence[str] | None = None,
    threshold: float = 0.5,
    iterations: int = 200,
    seed: int = 0,
    ridge: float = 0.0,
) -> RiskTable:
    """Level-by-level failure risk, shaped like the published audit tables.

    ``multivariate``/``both`` fit one joint model over all variables;
    ``univariate`` fits one model per variable.  ``both`` adds the
    bootstrap-t reference column comparing each level's failure rate
    against its control.  Fitting problems are reported per row instead of
    aborting the table.
    """
    if mode not in ("univariate", "multivariate", "both"):
        raise DesignError(f"unknown mode {mode!r}")
    subset = _restrict(records, outcome)
    if variables is None:
        variables = default_variables(outcome, schema, records)
    if not variables:
        raise DesignError(f"no usable variables for outcome {outcome!r}")

    joint_fit = None
    joint_design = None
    joint_error: str | None = None
    if mode in ("multivariate", "both"):
        try:
            joint_design = build_design(records, schema, variables, outcome, threshold)
            joint_fit = fit_mle(joint_design, ridge=ridge)
        except (DesignError, FitError) as exc:
            joint_error = str(exc)

    rows: list[EffectRow] = []
    n_dropped = joint_design.n_dropped if joint_design is not None else 0
    for stream, name in enumerate(variables):
        var = schema.get(name)
        uni_p: dict[str, float] = {}
        if mode == "both":
            uni_p = _univariate_reference_p(
                subset, var, outcome, threshold, iterations, seed, stream
            )

        fit = joint_fit
        design = joint_design
        var_error = joint_error
        if mode == "univariate":
            try:
                design = build_design(records, schema, [name], outcome, threshold)
                fit = fit_mle(design, ridge=ridge)
                var_error = None
            except (DesignError, FitError) as exc:
                design, fit, var_error = None, None, str(exc)

        counts = {
            lvl: sum(1 for r in subset if r.value(name) == lvl) for lvl in var.levels
        }
        wald_rows = wald(fit) if fit is not None else None
        p0 = None
        if var_error is None:
            try:
                p0 = p0_control_share(records, var, outcome, threshold=threshold)
            except DesignError as exc:
                var_error = str(exc)

        for level in var.levels:
            if level == var.control:
                continue
            base = dict(
                variable=name,
                level=level,
                label=var.display(level),
                control_label=var.control_display(),
                n_level=counts[level],
                univariate_p=uni_p.get(level),
            )
            if var_error is not None or fit is None or design is None:
                rows.append(EffectRow(**base, error=var_error or "no fit"))
                continue
            col = next(
                (j for j, c in enumerate(design.columns)
                 if c.variable == name and c.level == level),
                None,
            )
            if col is None:
                rows.append(EffectRow(**base, error="level absent from design"))
                continue
            wr = wald_rows[col + 1]  # +1 skips the intercept
            or_ = math.exp(fit.beta[col + 1])
            or_lo, or_hi = math.exp(wr.beta_low), math.exp(wr.beta_high)
            rows.append(
                EffectRow(
                    **base,
                    odds_ratio=or_,
                    or_low=or_lo,
                    or_high=or_hi,
                    p=wr.p,
                    p0=p0,
                    risk_ratio=or_to_rr(or_, p0),
                    rr_low=or_to_rr(or_lo, p0),
                    rr_high=or_to_rr(or_hi, p0),
                )
            )
    return RiskTable(
        outcome=outcome,
        mode=mode,
        rows=tuple(rows),
        n_records=len(subset),
        n_dropped=n_dropped,
    )
