"""Bayesian multivariate CAR model for monthly multi-virus count panels.

Observation model: counts are Poisson with mean ``expected * RR`` where
``log(RR[m, t, v]) = alpha[v] + phi[m, t, v]``.  The random effects for each
year form a 12*V vector (month-major, viruses contiguous within a month) with
a multivariate normal prior whose precision is ``kron(omega, lam_prec)``:
``omega`` couples months through a proximity matrix, ``lam_prec`` couples
viruses.  Year-to-year dependence enters through the conditional mean
``s[v] * phi[m, t-1, v]``.

The between-virus covariance (the inverse of ``lam_prec``) is parameterised
through a modified Cholesky factorisation ``sigma * gamma @ gamma.T * sigma``
with ``sigma`` a positive diagonal and ``gamma`` unit lower triangular, which
keeps every proposal positive definite by construction.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .linalg import NotPositiveDefinite, cholesky_factor, is_positive_definite, kronecker

__all__ = [
    "MONTHS",
    "CountPanel",
    "ModelState",
    "ProximitySpec",
    "HyperParams",
    "month_distance",
    "build_w_neighborhood",
    "build_w_autoregressive",
    "build_omega",
    "covariance_from_cholesky",
    "between_virus_precision",
    "proximity_matrix",
    "log_likelihood",
    "mcar_log_density",
    "log_prior_phi",
    "log_prior_params",
    "log_posterior",
    "relative_risks",
]

MONTHS = 12


@dataclass
class CountPanel:
    """Observed and expected monthly counts, shape (12, T, V).

    ``expected`` must be strictly positive everywhere; a zero expected count
    with a nonzero observation is a data error and has to be resolved (e.g.
    floored) before the panel is built.  ``n_tested`` is optional metadata
    carried for serialisation; the model itself never reads it.
    """

    observed: np.ndarray
    expected: np.ndarray
    virus_names: list[str]
    n_tested: np.ndarray | None = None

    def __post_init__(self):
        self.observed = np.asarray(self.observed)
        self.expected = np.asarray(self.expected, dtype=float)
        if self.observed.ndim != 3 or self.observed.shape[0] != MONTHS:
            raise ValueError(f"observed must have shape (12, T, V), got {self.observed.shape}")
        if self.observed.shape != self.expected.shape:
            raise ValueError("observed and expected must share shape (12, T, V)")
        if np.any(self.observed < 0):
            raise ValueError("observed counts must be nonnegative")
        if not np.all(self.expected > 0.0):
            raise ValueError("expected counts must be strictly positive")
        if len(self.virus_names) != self.observed.shape[2]:
            raise ValueError("virus_names length must match the virus axis")
        if self.n_tested is not None:
            self.n_tested = np.asarray(self.n_tested)
            if self.n_tested.shape != self.observed.shape:
                raise ValueError("n_tested must share shape (12, T, V)")

    @property
    def months_per_year(self) -> int:
        return MONTHS

    @property
    def years(self) -> int:
        return self.observed.shape[1]

    @property
    def viruses(self) -> int:
        return self.observed.shape[2]


@dataclass
class ModelState:
    """All latent parameters of the model.

    alpha : (V,) per-virus intercepts on the log relative-risk scale
    phi   : (12, T, V) seasonal-temporal random effects
    s     : (V,) yearly autocorrelations, each in [0, 1)
    lam   : monthly smoothing weight in (0, 1)
    rho   : autoregressive decay in (0, 1); only read under the
            autoregressive proximity construction
    sigma : (V,) positive diagonal scales of the covariance factorisation
    gamma : (V, V) unit lower-triangular correlation factor
    """

    alpha: np.ndarray
    phi: np.ndarray
    s: np.ndarray
    lam: float
    rho: float
    sigma: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.phi = np.asarray(self.phi, dtype=float)
        self.s = np.atleast_1d(np.asarray(self.s, dtype=float))
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        self.gamma = np.asarray(self.gamma, dtype=float)
        v = self.alpha.shape[0]
        if self.phi.ndim != 3 or self.phi.shape[0] != MONTHS or self.phi.shape[2] != v:
            raise ValueError(f"phi must have shape (12, T, {v}), got {self.phi.shape}")
        if self.s.shape != (v,) or self.sigma.shape != (v,) or self.gamma.shape != (v, v):
            raise ValueError("alpha, s, sigma, gamma must agree on the number of viruses")

    @property
    def viruses(self) -> int:
        return self.alpha.shape[0]

    @property
    def years(self) -> int:
        return self.phi.shape[1]

    def in_support(self) -> bool:
        """True when every parameter lies inside its declared support."""
        return bool(
            np.all((self.s >= 0.0) & (self.s < 1.0))
            and 0.0 < self.lam < 1.0
            and 0.0 < self.rho < 1.0
            and np.all(self.sigma > 0.0)
            and np.allclose(np.diag(self.gamma), 1.0)
            and np.allclose(np.triu(self.gamma, 1), 0.0)
        )

    def copy(self) -> "ModelState":
        return ModelState(
            alpha=self.alpha.copy(),
            phi=self.phi.copy(),
            s=self.s.copy(),
            lam=float(self.lam),
            rho=float(self.rho),
            sigma=self.sigma.copy(),
            gamma=self.gamma.copy(),
        )


@dataclass
class ProximitySpec:
    """Which month-proximity construction to use when building omega.

    ``neighborhood`` links months within ``neighbor_order`` steps with unit
    weight; ``autoregressive`` weights every pair by ``rho ** distance``.
    ``circular`` treats December and January as adjacent, which matches the
    season-of-year reading of the month index.
    """

    kind: str = "neighborhood"
    neighbor_order: int = 3
    circular: bool = True

    def __post_init__(self):
        if self.kind not in ("neighborhood", "autoregressive"):
            raise ValueError(f"unknown proximity kind {self.kind!r}")
        if not 1 <= self.neighbor_order <= 5:
            raise ValueError("neighbor_order must lie in [1, 5]")


@dataclass
class HyperParams:
    """Hyperparameters of the parameter priors.

    Intercepts and the strictly-lower correlation-factor entries get normal
    priors, the diagonal scales get gamma priors, and the bounded smoothing
    parameters get uniform priors on the given closed intervals.
    """

    alpha_prior_mean: float = 0.0
    alpha_prior_sd: float = 10.0
    sigma_prior_shape: float = 1.0
    sigma_prior_rate: float = 1.0
    gamma_entry_prior_sd: float = 1.0
    s_bounds: tuple[float, float] = (0.0, 1.0)
    lambda_bounds: tuple[float, float] = (0.0, 1.0)
    rho_bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        for name in ("alpha_prior_sd", "sigma_prior_shape", "sigma_prior_rate", "gamma_entry_prior_sd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("s_bounds", "lambda_bounds", "rho_bounds"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must satisfy lower < upper")


def month_distance(i: int, j: int, circular: bool = True) -> int:
    """Distance between 1-based months, wrapping across the year boundary if circular."""
    d = abs(i - j)
    return min(d, MONTHS - d) if circular else d


def build_w_neighborhood(order: int = 3, circular: bool = True) -> np.ndarray:
    """0/1 proximity matrix linking months within ``order`` steps of each other.

    Symmetric with a zero diagonal.  With ``circular=True`` every month has
    exactly ``2 * order`` neighbours.
    """
    if not 1 <= order <= 5:
        raise ValueError("order must lie in [1, 5]")
    w = np.zeros((MONTHS, MONTHS))
    for i in range(MONTHS):
        for j in range(MONTHS):
            if i != j and month_distance(i + 1, j + 1, circular) <= order:
                w[i, j] = 1.0
    return w


def build_w_autoregressive(rho: float, circular: bool = True) -> np.ndarray:
    """Proximity matrix with off-diagonal entries ``rho ** distance``.

    The diagonal is left at zero so that the degree matrix keeps its usual
    row-sum-of-neighbour-weights meaning.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    w = np.zeros((MONTHS, MONTHS))
    for i in range(MONTHS):
        for j in range(MONTHS):
            if i != j:
                w[i, j] = rho ** month_distance(i + 1, j + 1, circular)
    return w


def build_omega(w: np.ndarray, lam: float) -> np.ndarray:
    """Month-coupling precision ``diag(rowsums(w)) - lam * w``.

    Strictly diagonally dominant, hence positive definite, for lam in (0, 1);
    the explicit check is defensive and flags invalid smoothing values.
    """
    w = np.asarray(w, dtype=float)
    if not 0.0 < lam < 1.0:
        raise ValueError("lam must lie in (0, 1)")
    degree = w.sum(axis=1)
    omega = np.diag(degree) - lam * w
    if not is_positive_definite(omega):
        raise NotPositiveDefinite("omega = D - lam * W is not positive definite")
    return omega


def proximity_matrix(spec: ProximitySpec, rho: float | None = None) -> np.ndarray:
    """Build the proximity matrix named by ``spec`` (autoregressive needs rho)."""
    if spec.kind == "neighborhood":
        return build_w_neighborhood(spec.neighbor_order, spec.circular)
    if rho is None:
        raise ValueError("the autoregressive construction requires rho")
    return build_w_autoregressive(rho, spec.circular)


def covariance_from_cholesky(sigma: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Between-virus covariance from its modified Cholesky parameterisation.

    Returns ``diag(sigma) @ gamma @ gamma.T @ diag(sigma)``, which is
    symmetric positive definite whenever all scales are positive.
    """
    sigma = np.asarray(sigma, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma entries must be strictly positive")
    if not np.allclose(np.diag(gamma), 1.0):
        raise ValueError("gamma must have a unit diagonal")
    scaled = sigma[:, None] * gamma
    return scaled @ scaled.T


def between_virus_precision(sigma: np.ndarray, gamma: np.ndarray) -> tuple[np.ndarray, float]:
    """Precision matrix paired with ``covariance_from_cholesky`` and its log-determinant.

    Uses the triangular structure directly: with ``A = gamma^{-1} diag(1/sigma)``
    the precision is ``A.T @ A`` and its log-determinant is ``-2 * sum(log(sigma))``
    because the unit-triangular factor has determinant one.
    """
    sigma = np.asarray(sigma, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    v = sigma.shape[0]
    gamma_inv = solve_triangular(gamma, np.eye(v), lower=True, unit_diagonal=True)
    a = gamma_inv / sigma[None, :]
    return a.T @ a, -2.0 * float(np.sum(np.log(sigma)))


def _omega_for_state(state: ModelState, spec: ProximitySpec) -> np.ndarray:
    rho = state.rho if spec.kind == "autoregressive" else None
    return build_omega(proximity_matrix(spec, rho), state.lam)


def log_likelihood(state: ModelState, panel: CountPanel) -> float:
    """Poisson log-likelihood of the panel, including the log-factorial terms."""
    if state.phi.shape != panel.observed.shape:
        raise ValueError("state.phi and panel shapes disagree")
    log_mean = np.log(panel.expected) + state.alpha[None, None, :] + state.phi
    mean = np.exp(log_mean)
    y = panel.observed
    return float(np.sum(y * log_mean - mean - gammaln(y + 1.0)))


def mcar_log_density(
    phi: np.ndarray, s: np.ndarray, omega: np.ndarray, lam_prec: np.ndarray
) -> float:
    """Year-conditional MCAR log-density with explicit precision factors.

    ``phi`` has shape (12, T, V); year 1 is centred at zero and each later
    year at ``s[v]`` times the previous year's effects.  Every year's 12*V
    vector (month-major, viruses contiguous within a month) shares the
    precision ``kron(omega, lam_prec)``, factored once; the log-determinant
    comes from the Cholesky diagonal.
    """
    phi = np.asarray(phi, dtype=float)
    s = np.asarray(s, dtype=float)
    v = phi.shape[2]
    precision = kronecker(omega, lam_prec)
    lower = cholesky_factor(precision)
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    n = MONTHS * v
    const = -0.5 * n * np.log(2.0 * np.pi) + 0.5 * logdet

    total = 0.0
    for t in range(phi.shape[1]):
        resid = phi[:, t, :].copy()
        if t > 0:
            resid -= s[None, :] * phi[:, t - 1, :]
        r = resid.ravel()
        half_quad = 0.5 * float(np.sum((lower.T @ r) ** 2))
        total += const - half_quad
    return total


def log_prior_phi(state: ModelState, spec: ProximitySpec) -> float:
    """Log-density of the random effects under the year-conditional MCAR prior.

    The month-coupling precision comes from the proximity spec together with
    the state's smoothing (and decay) parameters; the virus-coupling precision
    comes from the state's covariance factorisation.
    """
    omega = _omega_for_state(state, spec)
    lam_prec, _ = between_virus_precision(state.sigma, state.gamma)
    return mcar_log_density(state.phi, state.s, omega, lam_prec)


def _normal_logpdf(x: np.ndarray, mean: float, sd: float) -> float:
    z = (np.asarray(x, dtype=float) - mean) / sd
    return float(np.sum(-0.5 * z * z - np.log(sd) - 0.5 * np.log(2.0 * np.pi)))


def _gamma_logpdf(x: np.ndarray, shape: float, rate: float) -> float:
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        return -np.inf
    return float(
        np.sum(shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x)
    )


def _uniform_logpdf(x: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    # Closed-interval convention: exact boundary values carry prior mass.
    if lo <= x <= hi:
        return -np.log(hi - lo)
    return -np.inf


def log_prior_params(state: ModelState, hyper: HyperParams) -> float:
    """Joint log-prior of the non-random-effect parameters.

    Returns ``-inf`` whenever any parameter sits outside its support, which
    is a legal value signalling zero prior mass.
    """
    v = state.viruses
    total = _normal_logpdf(state.alpha, hyper.alpha_prior_mean, hyper.alpha_prior_sd)
    lower_idx = np.tril_indices(v, k=-1)
    total += _normal_logpdf(state.gamma[lower_idx], 0.0, hyper.gamma_entry_prior_sd)
    total += _gamma_logpdf(state.sigma, hyper.sigma_prior_shape, hyper.sigma_prior_rate)
    for sv in state.s:
        total += _uniform_logpdf(float(sv), hyper.s_bounds)
    total += _uniform_logpdf(float(state.lam), hyper.lambda_bounds)
    total += _uniform_logpdf(float(state.rho), hyper.rho_bounds)
    return total


def log_posterior(
    state: ModelState, panel: CountPanel, spec: ProximitySpec, hyper: HyperParams
) -> float:
    """Unnormalised log-posterior: likelihood plus both prior terms."""
    prior = log_prior_params(state, hyper)
    if not np.isfinite(prior):
        return -np.inf
    return log_likelihood(state, panel) + log_prior_phi(state, spec) + prior


def relative_risks(state: ModelState) -> np.ndarray:
    """Relative-risk table exp(alpha[v] + phi[m, t, v]), shape (12, T, V)."""
    return np.exp(state.alpha[None, None, :] + state.phi)
