"""Synthetic multi-virus datasets with known ground truth.

Generation follows the same path the inference pipeline consumes: individual
test records are drawn from a logistic model with per-virus seasonal month
effects, the expected-count pipeline is fitted to those records, random
effects come from the year-conditional MCAR prior with a chosen between-virus
covariance, and observed counts are either the rounded product of relative
risks and expected counts or Poisson draws around that product.
"""

from dataclasses import dataclass, field, replace
from datetime import date

import numpy as np

from .expected import (
    FEMALE,
    GP,
    HOSPITAL,
    MALE,
    NEGATIVE,
    NOT_TESTED,
    POSITIVE,
    EpisodeRecord,
    apply_expected_floor,
    expected_panel,
    standardized_probs,
)
from .linalg import kronecker, sample_mvn_precision
from .model import MONTHS, CountPanel, ProximitySpec, build_omega, proximity_matrix

__all__ = [
    "Demographics",
    "SimScenario",
    "SimOutput",
    "seasonal_cosine",
    "scenario_three_virus",
    "scenario_five_virus",
    "simulate",
]

BASE_YEAR = 2001


@dataclass
class Demographics:
    """Sampling distributions for age, sex and severity of simulated records.

    Ages are drawn uniformly within bands chosen by ``age_band_probs``; the
    default mixture skews toward young children, sex is balanced, and most
    samples come from general practice.
    """

    age_bands: list[tuple[int, int]] = field(
        default_factory=lambda: [(0, 5), (6, 30), (31, 90)]
    )
    age_band_probs: list[float] = field(default_factory=lambda: [0.45, 0.30, 0.25])
    p_male: float = 0.5
    p_hospital: float = 0.4

    def __post_init__(self):
        if len(self.age_bands) != len(self.age_band_probs):
            raise ValueError("age_bands and age_band_probs must have equal length")
        if abs(sum(self.age_band_probs) - 1.0) > 1e-9:
            raise ValueError("age_band_probs must sum to 1")

    def draw(self, n: int, rng: np.random.Generator):
        bands = rng.choice(len(self.age_bands), size=n, p=self.age_band_probs)
        lows = np.array([b[0] for b in self.age_bands])
        highs = np.array([b[1] for b in self.age_bands])
        ages = rng.integers(lows[bands], highs[bands] + 1)
        male = rng.random(n) < self.p_male
        hospital = rng.random(n) < self.p_hospital
        return ages, male, hospital


def seasonal_cosine(peak_month: int, amplitude: float = 1.0) -> np.ndarray:
    """Cosine month effect on the log-odds scale, peaking at ``peak_month`` (1-12)."""
    months = np.arange(1, MONTHS + 1)
    return amplitude * np.cos(2.0 * np.pi * (months - peak_month) / MONTHS)


@dataclass
class SimScenario:
    """Full description of one synthetic dataset."""

    n_viruses: int
    n_years: int
    samples_per_month: int = 200
    seasonal_effects: np.ndarray | None = None  # (V, 12) log-odds month effects
    true_cov: np.ndarray | None = None  # between-virus covariance
    s_true: np.ndarray | None = None
    lambda_true: float = 0.5
    rho_true: float = 0.5  # read only under autoregressive proximity
    alpha_true: np.ndarray | None = None
    coef_sd: float = 0.1
    proximity: ProximitySpec = field(default_factory=ProximitySpec)
    observed_mode: str = "product"
    demographics: Demographics = field(default_factory=Demographics)
    virus_names: list[str] | None = None

    def __post_init__(self):
        v = self.n_viruses
        if self.seasonal_effects is None:
            self.seasonal_effects = np.zeros((v, MONTHS))
        self.seasonal_effects = np.asarray(self.seasonal_effects, dtype=float)
        if self.seasonal_effects.shape != (v, MONTHS):
            raise ValueError("seasonal_effects must have shape (V, 12)")
        if self.true_cov is None:
            self.true_cov = np.eye(v)
        self.true_cov = np.asarray(self.true_cov, dtype=float)
        if self.true_cov.shape != (v, v):
            raise ValueError("true_cov must have shape (V, V)")
        self.s_true = np.full(v, 0.5) if self.s_true is None else np.asarray(self.s_true, float)
        self.alpha_true = (
            np.zeros(v) if self.alpha_true is None else np.asarray(self.alpha_true, float)
        )
        if self.observed_mode not in ("product", "poisson"):
            raise ValueError("observed_mode must be 'product' or 'poisson'")
        if self.virus_names is None:
            self.virus_names = [f"virus{i + 1}" for i in range(v)]


@dataclass
class SimOutput:
    """Simulated records and panel together with the generating truth."""

    records: list[EpisodeRecord]
    panel: CountPanel
    true_rr: np.ndarray
    true_phi: np.ndarray
    p_standardized: np.ndarray
    scenario: SimScenario
    seed: int


def scenario_three_virus() -> SimScenario:
    """Three viruses over four years: a winter and a summer virus negatively
    coupled, and a third with no seasonality circulating independently."""
    seasonal = np.vstack(
        [seasonal_cosine(1), seasonal_cosine(7), np.zeros(MONTHS)]
    )
    cov = np.array(
        [
            [1.0, -0.5, 0.0],
            [-0.5, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    return SimScenario(
        n_viruses=3,
        n_years=4,
        samples_per_month=200,
        seasonal_effects=seasonal,
        true_cov=cov,
    )


def scenario_five_virus() -> SimScenario:
    """Five viruses over fifteen years: pairs (1,2) and (4,5) coupled with
    -0.5 and +0.5 covariance, virus 3 independent, viruses 4 and 5 peaking in autumn."""
    seasonal = np.vstack(
        [
            seasonal_cosine(1),
            seasonal_cosine(7),
            np.zeros(MONTHS),
            seasonal_cosine(10),
            seasonal_cosine(10),
        ]
    )
    cov = np.eye(5)
    cov[0, 1] = cov[1, 0] = -0.5
    cov[3, 4] = cov[4, 3] = 0.5
    return SimScenario(
        n_viruses=5,
        n_years=15,
        samples_per_month=200,
        seasonal_effects=seasonal,
        true_cov=cov,
    )


def truncate_scenario(scenario: SimScenario, n_years: int) -> SimScenario:
    """Same scenario over a shorter horizon (for rolling-year analyses)."""
    if not 1 <= n_years <= scenario.n_years:
        raise ValueError("n_years out of range")
    return replace(scenario, n_years=n_years)


def simulate(scenario: SimScenario, seed: int, *, expected_floor: float = 0.5) -> SimOutput:
    """Generate one dataset; identical output for identical (scenario, seed).

    Steps: draw per-virus regression coefficients, simulate individual test
    records month by month, run the expected-count pipeline on those records,
    draw the random effects year by year from the MCAR conditional, form the
    relative risks and derive observed counts per ``observed_mode``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    v, t_years = scenario.n_viruses, scenario.n_years
    names = scenario.virus_names

    betas = rng.normal(0.0, scenario.coef_sd, size=(v, 3))  # age, sex, severity

    records: list[EpisodeRecord] = []
    n_tested = np.full((MONTHS, t_years, v), scenario.samples_per_month)
    for j in range(v):
        for t in range(t_years):
            for m in range(MONTHS):
                n = scenario.samples_per_month
                ages, male, hospital = scenario.demographics.draw(n, rng)
                logit = (
                    scenario.seasonal_effects[j, m]
                    + betas[j, 0] * ages
                    + betas[j, 1] * male
                    + betas[j, 2] * hospital
                )
                prob = 1.0 / (1.0 + np.exp(-logit))
                positive = rng.random(n) < prob
                when = date(BASE_YEAR + t, m + 1, 15)
                for i in range(n):
                    results = {name: NOT_TESTED for name in names}
                    results[names[j]] = POSITIVE if positive[i] else NEGATIVE
                    records.append(
                        EpisodeRecord(
                            patient_id=f"sim-{j + 1}-{t + 1}-{m + 1}-{i + 1}",
                            date=when,
                            age=int(ages[i]),
                            sex=MALE if male[i] else FEMALE,
                            severity=HOSPITAL if hospital[i] else GP,
                            results=results,
                        )
                    )

    probs, _ = standardized_probs(records, names)
    expected, zero_cells = expected_panel(probs, n_tested)
    if zero_cells:
        expected = apply_expected_floor(expected, zero_cells, expected_floor)

    omega = build_omega(
        proximity_matrix(scenario.proximity, rho=scenario.rho_true), scenario.lambda_true
    )
    lam_prec = np.linalg.inv(scenario.true_cov)
    precision = kronecker(omega, lam_prec)
    phi = np.zeros((MONTHS, t_years, v))
    for t in range(t_years):
        mean = (
            (scenario.s_true[None, :] * phi[:, t - 1, :]).ravel()
            if t > 0
            else np.zeros(MONTHS * v)
        )
        phi[:, t, :] = sample_mvn_precision(mean, precision, rng).reshape(MONTHS, v)

    true_rr = np.exp(scenario.alpha_true[None, None, :] + phi)
    intensity = true_rr * expected
    if scenario.observed_mode == "product":
        observed = np.rint(intensity).astype(int)
    else:
        observed = rng.poisson(intensity)

    panel = CountPanel(
        observed=observed, expected=expected, virus_names=list(names), n_tested=n_tested
    )
    return SimOutput(
        records=records,
        panel=panel,
        true_rr=true_rr,
        true_phi=phi,
        p_standardized=probs.p_s,
        scenario=scenario,
        seed=seed,
    )
