"""Expected monthly counts from individual-level test episodes.

Pipeline: raw per-sample records are merged into patient episodes, one
logistic regression per virus estimates the probability of testing positive
(fixed effects for age, sex and severity, a month factor, and ridge-penalised
year indicators standing in for a yearly random effect), predictions are then
averaged over the empirical strata of each month to give standardised
probabilities, and expected counts are the standardised probabilities scaled
by the number tested.
"""

import logging
from dataclasses import dataclass, field
from datetime import date
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

__all__ = [
    "POSITIVE",
    "NEGATIVE",
    "NOT_TESTED",
    "FEMALE",
    "MALE",
    "GP",
    "HOSPITAL",
    "EpisodeRecord",
    "LogisticFit",
    "StandardizedProbs",
    "ExpectedPanel",
    "MalformedRecord",
    "Separation",
    "InsufficientData",
    "EmptyMonth",
    "ZeroExpected",
    "aggregate_episodes",
    "fit_logistic",
    "standardize",
    "standardized_probs",
    "expected_panel",
    "apply_expected_floor",
    "count_tables",
]

POSITIVE = "positive"
NEGATIVE = "negative"
NOT_TESTED = "not_tested"
RESULT_VALUES = (POSITIVE, NEGATIVE, NOT_TESTED)

FEMALE = "female"
MALE = "male"
GP = "gp"
HOSPITAL = "hospital"


class MalformedRecord(ValueError):
    """Raised for unparseable dates or unknown category codes in raw records."""


class Separation(RuntimeError):
    """IRLS diverged (weights collapsed); the likelihood has no finite maximiser."""


class InsufficientData(ValueError):
    """A regression needs at least one positive and one negative outcome."""


class EmptyMonth(ValueError):
    """No tested episodes in some month; the caller must merge or flag."""


class ZeroExpected(ValueError):
    """Expected count of zero where the downstream model requires positivity."""


@dataclass
class EpisodeRecord:
    """One patient test episode (or one raw sample before aggregation)."""

    patient_id: str
    date: date
    age: int
    sex: str
    severity: str
    results: dict[str, str]

    def __post_init__(self):
        if self.age < 0:
            raise MalformedRecord(f"negative age {self.age} for patient {self.patient_id}")
        if self.sex not in (FEMALE, MALE):
            raise MalformedRecord(f"unknown sex code {self.sex!r}")
        if self.severity not in (GP, HOSPITAL):
            raise MalformedRecord(f"unknown severity code {self.severity!r}")
        for virus, value in self.results.items():
            if value not in RESULT_VALUES:
                raise MalformedRecord(f"unknown result code {value!r} for {virus}")
        if all(value == NOT_TESTED for value in self.results.values()):
            raise MalformedRecord(f"episode for patient {self.patient_id} tests no virus")


def aggregate_episodes(
    samples: Sequence[EpisodeRecord], window_days: int = 30
) -> list[EpisodeRecord]:
    """Merge per-patient samples taken within ``window_days`` into single episodes.

    Samples are grouped per patient in date order; a sample starts a new
    episode when it falls ``window_days`` or more after the current episode's
    first sample.  An episode is positive for a virus if any sample in the
    window was positive, negative if any was tested without a positive, and
    untested otherwise.  The episode keeps the first sample's date and
    demographics.
    """
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    by_patient: dict[str, list[EpisodeRecord]] = {}
    order: list[str] = []
    for rec in samples:
        if rec.patient_id not in by_patient:
            by_patient[rec.patient_id] = []
            order.append(rec.patient_id)
        by_patient[rec.patient_id].append(rec)

    episodes: list[EpisodeRecord] = []
    for pid in order:
        recs = sorted(by_patient[pid], key=lambda r: r.date)
        current: list[EpisodeRecord] = []
        for rec in recs:
            if current and (rec.date - current[0].date).days >= window_days:
                episodes.append(_merge_episode(current))
                current = []
            current.append(rec)
        if current:
            episodes.append(_merge_episode(current))
    return episodes


def _merge_episode(samples: list[EpisodeRecord]) -> EpisodeRecord:
    first = samples[0]
    viruses: list[str] = []
    for rec in samples:
        for virus in rec.results:
            if virus not in viruses:
                viruses.append(virus)
    merged: dict[str, str] = {}
    for virus in viruses:
        values = [rec.results.get(virus, NOT_TESTED) for rec in samples]
        if POSITIVE in values:
            merged[virus] = POSITIVE
        elif NEGATIVE in values:
            merged[virus] = NEGATIVE
        else:
            merged[virus] = NOT_TESTED
    return EpisodeRecord(
        patient_id=first.patient_id,
        date=first.date,
        age=first.age,
        sex=first.sex,
        severity=first.severity,
        results=merged,
    )


@dataclass
class LogisticFit:
    """Fitted per-virus logistic regression.

    ``coefficients`` maps term names to values; ``term_names`` preserves the
    design-column order.  ``year_levels`` records the calendar years that
    received (ridge-penalised) indicator columns.  ``month`` is set when the
    fit was restricted to a single month (the per-month fitting mode), in
    which case no month factor is present.
    """

    virus: str
    coefficients: dict[str, float]
    converged: bool
    iterations: int
    term_names: list[str] = field(default_factory=list)
    year_levels: list[int] = field(default_factory=list)
    month: int | None = None
    max_score_residual: float = np.inf

    def predict_prob(
        self,
        age: np.ndarray,
        sex_male: np.ndarray,
        severity_hospital: np.ndarray,
        month: np.ndarray,
        year: np.ndarray,
    ) -> np.ndarray:
        """Predicted positivity probabilities for arrays of covariates."""
        age = np.asarray(age, dtype=float)
        eta = np.zeros_like(age)
        coef = self.coefficients
        if "intercept" in coef:
            eta += coef["intercept"]
        if "age" in coef:
            eta += coef["age"] * age
        if "sex:male" in coef:
            eta += coef["sex:male"] * np.asarray(sex_male, dtype=float)
        if "severity:hospital" in coef:
            eta += coef["severity:hospital"] * np.asarray(severity_hospital, dtype=float)
        month = np.asarray(month)
        for m in range(2, 13):
            name = f"month:{m}"
            if name in coef:
                eta += coef[name] * (month == m)
        year = np.asarray(year)
        for y in self.year_levels:
            name = f"year:{y}"
            if name in coef:
                eta += coef[name] * (year == y)
        return expit(eta)


def _design_matrix(
    records: Sequence[EpisodeRecord], include_month: bool
) -> tuple[np.ndarray, list[str], list[int], np.ndarray]:
    n = len(records)
    age = np.array([r.age for r in records], dtype=float)
    male = np.array([r.sex == MALE for r in records], dtype=float)
    hosp = np.array([r.severity == HOSPITAL for r in records], dtype=float)
    months = np.array([r.date.month for r in records])
    years = np.array([r.date.year for r in records])
    year_levels = sorted(set(int(y) for y in years))

    columns = [np.ones(n)]
    names = ["intercept"]
    penalized = [False]
    for values, name in ((age, "age"), (male, "sex:male"), (hosp, "severity:hospital")):
        columns.append(values)
        names.append(name)
        penalized.append(False)
    if include_month:
        for m in range(2, 13):
            columns.append((months == m).astype(float))
            names.append(f"month:{m}")
            penalized.append(False)
    for y in year_levels:
        columns.append((years == y).astype(float))
        names.append(f"year:{y}")
        penalized.append(True)

    x = np.column_stack(columns)
    # Constant non-intercept columns carry no information and would make the
    # unpenalised normal equations singular; drop them.
    keep = [0] + [
        j for j in range(1, x.shape[1]) if np.ptp(x[:, j]) > 0.0
    ]
    x = x[:, keep]
    names = [names[j] for j in keep]
    penalty_mask = np.array([penalized[j] for j in keep], dtype=float)
    return x, names, year_levels, penalty_mask


def fit_logistic(
    records: Sequence[EpisodeRecord],
    virus: str,
    ridge_year: float = 1.0,
    *,
    month: int | None = None,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> LogisticFit:
    """Penalised maximum-likelihood logistic fit for one virus.

    The design holds an intercept plus age (linear), sex, severity, an
    11-level month factor (reference January) and one indicator per calendar
    year; the year coefficients carry an L2 penalty of strength ``ridge_year``
    approximating a yearly random effect.  Newton/IRLS iterates until the
    largest penalised-score component drops below ``tol``.

    With ``month`` set, only records tested in that month are used and the
    month factor is omitted (the alternative one-fit-per-virus-month mode).

    Raises ``InsufficientData`` when either outcome class is empty and
    ``Separation`` when the iteration diverges instead of returning made-up
    coefficients.
    """
    if ridge_year < 0:
        raise ValueError("ridge_year must be nonnegative")
    tested = [r for r in records if r.results.get(virus, NOT_TESTED) != NOT_TESTED]
    if month is not None:
        tested = [r for r in tested if r.date.month == month]
    y = np.array([r.results[virus] == POSITIVE for r in tested], dtype=float)
    if y.size == 0 or y.sum() == 0 or y.sum() == y.size:
        raise InsufficientData(
            f"virus {virus!r} needs at least one positive and one negative outcome"
        )
    x, names, year_levels, penalty_mask = _design_matrix(tested, include_month=month is None)
    penalty = ridge_year * penalty_mask

    beta = np.zeros(x.shape[1])
    max_resid = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        eta = x @ beta
        p = expit(eta)
        w = p * (1.0 - p)
        score = x.T @ (y - p) - penalty * beta
        max_resid = float(np.max(np.abs(score)))
        if max_resid < tol:
            converged = True
            break
        hessian = (x.T * w) @ x + np.diag(penalty)
        try:
            step = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError as exc:
            raise Separation(f"singular IRLS system for virus {virus!r}") from exc
        beta = beta + step
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > 1e4:
            raise Separation(f"diverging coefficients for virus {virus!r}")

    return LogisticFit(
        virus=virus,
        coefficients={name: float(b) for name, b in zip(names, beta)},
        converged=converged,
        iterations=iterations,
        term_names=names,
        year_levels=year_levels,
        month=month,
        max_score_residual=max_resid,
    )


@dataclass
class StandardizedProbs:
    """Month-by-virus standardised positivity probabilities, shape (12, V)."""

    p_s: np.ndarray
    virus_names: list[str]

    def __post_init__(self):
        self.p_s = np.asarray(self.p_s, dtype=float)
        if self.p_s.shape != (12, len(self.virus_names)):
            raise ValueError("p_s must have shape (12, V)")
        if np.any(self.p_s <= 0.0) or np.any(self.p_s >= 1.0):
            raise ValueError("standardised probabilities must lie strictly inside (0, 1)")


def standardize(
    fit: LogisticFit, records: Sequence[EpisodeRecord]
) -> np.ndarray:
    """Standardised monthly probabilities for the fitted virus, shape (12,).

    For each month the episodes tested for the virus are grouped into the
    observed (age, sex, severity, year) strata; the fit's predictions for
    those strata are averaged with the stratum counts as weights, so the
    result always lies between the smallest and largest stratum prediction.

    Raises ``EmptyMonth`` if some month has no tested episode.
    """
    if not fit.converged:
        raise ValueError(f"fit for virus {fit.virus!r} did not converge")
    tested = [r for r in records if r.results.get(fit.virus, NOT_TESTED) != NOT_TESTED]
    out = np.zeros(12)
    for m in range(1, 13):
        if fit.month is not None and m != fit.month:
            continue
        month_recs = [r for r in tested if r.date.month == m]
        if not month_recs:
            raise EmptyMonth(f"no tested episodes for virus {fit.virus!r} in month {m}")
        strata: dict[tuple[int, str, str, int], int] = {}
        for r in month_recs:
            key = (r.age, r.sex, r.severity, r.date.year)
            strata[key] = strata.get(key, 0) + 1
        keys = sorted(strata)
        counts = np.array([strata[k] for k in keys], dtype=float)
        age = np.array([k[0] for k in keys], dtype=float)
        male = np.array([k[1] == MALE for k in keys], dtype=float)
        hosp = np.array([k[2] == HOSPITAL for k in keys], dtype=float)
        year = np.array([k[3] for k in keys])
        preds = fit.predict_prob(age, male, hosp, np.full(len(keys), m), year)
        out[m - 1] = float(np.sum(counts * preds) / counts.sum())
    return out


def standardized_probs(
    records: Sequence[EpisodeRecord],
    virus_names: Sequence[str],
    ridge_year: float = 1.0,
    *,
    per_month: bool = False,
) -> tuple[StandardizedProbs, dict[str, list[LogisticFit]]]:
    """Fit every virus and assemble the (12, V) standardised-probability table.

    ``per_month=True`` switches to the alternative reading that fits one
    regression per (virus, month) instead of a single per-virus fit with a
    month factor.
    """
    table = np.zeros((12, len(virus_names)))
    fits: dict[str, list[LogisticFit]] = {}
    for j, virus in enumerate(virus_names):
        if per_month:
            monthly = []
            for m in range(1, 13):
                fit = fit_logistic(records, virus, ridge_year, month=m)
                table[m - 1, j] = standardize(fit, records)[m - 1]
                monthly.append(fit)
            fits[virus] = monthly
        else:
            fit = fit_logistic(records, virus, ridge_year)
            table[:, j] = standardize(fit, records)
            fits[virus] = [fit]
    return StandardizedProbs(p_s=table, virus_names=list(virus_names)), fits


class ExpectedPanel(NamedTuple):
    expected: np.ndarray
    zero_cells: list[tuple[int, int, int]]


def expected_panel(probs: StandardizedProbs | np.ndarray, n_tested: np.ndarray) -> ExpectedPanel:
    """Expected counts ``n_tested[m, t, v] * p_s[m, v]`` with zero cells flagged.

    Cells with nothing tested get expected count zero and are reported in
    ``zero_cells`` (month, year, virus indices, 0-based); the downstream model
    needs strictly positive expected counts, so callers must floor or drop
    them (see ``apply_expected_floor``).
    """
    p = probs.p_s if isinstance(probs, StandardizedProbs) else np.asarray(probs, dtype=float)
    n_tested = np.asarray(n_tested, dtype=float)
    if n_tested.ndim != 3 or n_tested.shape[0] != 12 or n_tested.shape[2] != p.shape[1]:
        raise ValueError("n_tested must have shape (12, T, V) matching the probability table")
    if np.any(n_tested < 0):
        raise ValueError("n_tested must be nonnegative")
    expected = n_tested * p[:, None, :]
    zero_cells = [tuple(ix) for ix in np.argwhere(n_tested == 0)]
    return ExpectedPanel(expected=expected, zero_cells=zero_cells)


def apply_expected_floor(
    expected: np.ndarray, zero_cells: list[tuple[int, int, int]], floor: float = 0.5
) -> np.ndarray:
    """Replace flagged zero cells by ``floor``, logging what was substituted."""
    if floor <= 0:
        raise ValueError("floor must be strictly positive")
    out = np.array(expected, dtype=float, copy=True)
    for m, t, v in zero_cells:
        out[m, t, v] = floor
        logger.warning(
            "expected count floored to %g at month=%d year=%d virus=%d", floor, m + 1, t + 1, v + 1
        )
    return out


def count_tables(
    episodes: Sequence[EpisodeRecord], virus_names: Sequence[str]
) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Observed-positive and tested counts per (month, year, virus).

    Returns ``(observed, n_tested, year_levels)`` where the year axis follows
    the sorted calendar years present in the episodes.
    """
    years = sorted({r.date.year for r in episodes})
    year_index = {y: i for i, y in enumerate(years)}
    observed = np.zeros((12, len(years), len(virus_names)), dtype=int)
    tested = np.zeros_like(observed)
    for r in episodes:
        m = r.date.month - 1
        t = year_index[r.date.year]
        for j, virus in enumerate(virus_names):
            value = r.results.get(virus, NOT_TESTED)
            if value == NOT_TESTED:
                continue
            tested[m, t, j] += 1
            if value == POSITIVE:
                observed[m, t, j] += 1
    return observed, tested, years
