"""Posterior summaries: credible intervals, tail p-values, FDR control, reports.

The covariance report reconstructs the between-virus covariance from each
posterior draw, tests every off-diagonal entry against zero with a two-sided
posterior tail proportion, and applies Benjamini-Hochberg step-up control
jointly across the virus pairs.
"""

from dataclasses import dataclass

import numpy as np

from .model import covariance_from_cholesky, relative_risks

__all__ = [
    "PairResult",
    "CovarianceReport",
    "RelativeRiskSummary",
    "posterior_interval",
    "posterior_p_zero",
    "bh_adjust",
    "covariance_report",
    "relative_risk_summary",
]


def posterior_interval(values, level: float = 0.95) -> tuple[float, float]:
    """Equal-tailed credible interval from a sample, by interpolated order statistics."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("need at least two values")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(values, [tail, 1.0 - tail], method="linear")
    return float(lo), float(hi)


def posterior_p_zero(values) -> float:
    """Two-sided posterior tail probability of zero: ``2 * min(#>0, #<0) / n``.

    Floored at ``1/n`` (a sample can never put zero mass on a tail) and capped
    at 1.  Draws exactly equal to zero count toward neither tail.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 10:
        raise ValueError("need at least 10 values")
    pos = int(np.sum(values > 0))
    neg = int(np.sum(values < 0))
    if pos == 0 and neg == 0:
        # Degenerate posterior concentrated exactly at zero: no evidence
        # against zero at all.
        return 1.0
    p = 2.0 * min(pos, neg) / n
    return float(min(1.0, max(p, 1.0 / n)))


def bh_adjust(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in the input order.

    Sorted ascending, each value is scaled by ``m / rank``, monotonicity is
    enforced by a cumulative minimum from the largest rank down, and results
    are capped at 1.
    """
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("p_values must be a nonempty 1-d sequence")
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("p-values must lie in (0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(ranked[::-1])[::-1]
    adjusted = np.minimum(adjusted, 1.0)
    # Mathematically adjusted >= input already; the clamp only removes
    # one-ulp rounding dips so the dominance property holds exactly.
    adjusted = np.maximum(adjusted, p[order])
    out = np.empty(m)
    out[order] = adjusted
    return out


@dataclass
class PairResult:
    """Posterior summary of one off-diagonal covariance entry."""

    virus_a: str
    virus_b: str
    posterior_mean: float
    ci_low: float
    ci_high: float
    p_raw: float
    p_adjusted: float
    significant: bool


@dataclass
class CovarianceReport:
    """All unordered virus pairs with FDR-adjusted significance flags."""

    pairs: list[PairResult]
    level: float
    fdr_level: float

    def significant_pairs(self) -> list[tuple[str, str]]:
        return [(p.virus_a, p.virus_b) for p in self.pairs if p.significant]


def covariance_report(samples, level: float = 0.95, fdr: float = 0.05) -> CovarianceReport:
    """Pairwise between-virus covariance report over posterior draws.

    Rebuilds the covariance matrix from the scale/correlation factorisation of
    every draw, summarises each off-diagonal entry with an equal-tailed
    interval and a two-sided tail p-value, and adjusts the p-values jointly
    across all pairs with Benjamini-Hochberg at rate ``fdr``.
    """
    draws = samples.draws
    if not draws:
        raise ValueError("no posterior draws")
    v = draws[0].viruses
    names = list(getattr(samples, "virus_names", None) or [f"virus{i+1}" for i in range(v)])
    covs = np.stack([covariance_from_cholesky(d.sigma, d.gamma) for d in draws])

    idx_pairs = [(i, j) for i in range(v) for j in range(i + 1, v)]
    raw = []
    stats = []
    for i, j in idx_pairs:
        values = covs[:, i, j]
        lo, hi = posterior_interval(values, level)
        raw.append(posterior_p_zero(values))
        stats.append((float(values.mean()), lo, hi))
    adjusted = bh_adjust(np.array(raw))

    pairs = [
        PairResult(
            virus_a=names[i],
            virus_b=names[j],
            posterior_mean=mean,
            ci_low=lo,
            ci_high=hi,
            p_raw=float(p),
            p_adjusted=float(q),
            significant=bool(q < fdr),
        )
        for (i, j), (mean, lo, hi), p, q in zip(idx_pairs, stats, raw, adjusted)
    ]
    return CovarianceReport(pairs=pairs, level=level, fdr_level=fdr)


@dataclass
class RelativeRiskSummary:
    """Per-cell posterior mean and credible bounds of the relative risks."""

    mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    virus_names: list[str]
    level: float


def relative_risk_summary(samples, level: float = 0.95) -> RelativeRiskSummary:
    """Posterior mean and equal-tailed interval of exp(alpha + phi) per cell."""
    draws = samples.draws
    if not draws:
        raise ValueError("no posterior draws")
    v = draws[0].viruses
    names = list(getattr(samples, "virus_names", None) or [f"virus{i+1}" for i in range(v)])
    rr = np.stack([relative_risks(d) for d in draws])
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(rr, [tail, 1.0 - tail], axis=0, method="linear")
    return RelativeRiskSummary(
        mean=rr.mean(axis=0), ci_low=lo, ci_high=hi, virus_names=names, level=level
    )
