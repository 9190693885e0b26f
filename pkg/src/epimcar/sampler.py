"""Adaptive Metropolis-within-Gibbs sampler for the multivariate CAR model.

One sweep updates, in a fixed order: each intercept (scalar random walk), each
(year, virus) random-effect month-vector (12-dimensional random walk), each
yearly autocorrelation, the monthly smoothing weight and, under the
autoregressive proximity, the decay parameter (random walks on the logit
scale), each diagonal scale (log scale) and each strictly-lower entry of the
correlation factor (plain scalar walk).  Proposal scales adapt toward target
acceptance rates during burn-in only and are frozen afterwards, so retained
draws come from a fixed-kernel chain.

The log-posterior deltas are computed incrementally.  For a year residual
matrix R (months by viruses) the quadratic form against the Kronecker
precision is ``trace(omega @ R @ lam_prec @ R.T)``; changing one virus column
of R by ``d`` shifts it by ``2 * d @ omega @ (R @ lam_prec[:, v]) +
lam_prec[v, v] * d @ omega @ d``, which keeps the per-block cost at a handful
of length-12 operations.  Scale and correlation-factor updates share the
cached cross-product ``sum_t R_t' omega R_t``, valid while residuals and the
month coupling are unchanged within a sweep.  All caches are refreshed from
scratch at every adaptation boundary to stop floating-point drift.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dtrtri

from .model import (
    MONTHS,
    CountPanel,
    HyperParams,
    ModelState,
    ProximitySpec,
    build_w_neighborhood,
    log_likelihood,
    log_posterior,
    month_distance,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ChainConfig",
    "ChainResult",
    "PosteriorSamples",
    "NonFiniteDensity",
    "desk_profile",
    "default_initial_state",
    "run_chain",
    "run_chains",
    "gelman_rubin",
    "dic",
    "param_names",
    "state_vector",
]

TARGET_ACCEPT_VECTOR = 0.234


class NonFiniteDensity(RuntimeError):
    """The initial state has zero posterior density (bad initialisation or data)."""


@dataclass
class ChainConfig:
    """MCMC run settings.  Defaults follow the full production profile."""

    n_chains: int = 5
    n_iterations: int = 500_000
    burn_in: int = 300_000
    thin: int = 100
    seed: int = 0
    adapt_window: int = 50
    target_accept: float = 0.44
    n_workers: int = 1

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.burn_in >= self.n_iterations:
            raise ValueError("burn_in must be smaller than n_iterations")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.n_workers < 1:
            raise ValueError("n_workers must be >= 1")

    @property
    def draws_per_chain(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin


def desk_profile(seed: int = 0, n_chains: int = 5, n_workers: int = 1) -> ChainConfig:
    """Reduced profile sized for desk-scale runs and CI."""
    return ChainConfig(
        n_chains=n_chains,
        n_iterations=50_000,
        burn_in=30_000,
        thin=20,
        seed=seed,
        n_workers=n_workers,
    )


@dataclass
class ChainResult:
    """Raw output of a single chain."""

    chain_index: int
    seed: int
    draws: list[ModelState]
    iterations: list[int]
    accept_rates: dict[str, float]


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in draws across all chains, plus diagnostics."""

    draws: list[ModelState]
    chain: np.ndarray
    iteration: np.ndarray
    accept_rates: dict[str, float]
    rhat: dict[str, float] | None
    virus_names: list[str] = field(default_factory=list)
    sampled_rho: bool = False

    def __len__(self) -> int:
        return len(self.draws)


def param_names(v: int, t: int, include_rho: bool) -> list[str]:
    """Deterministic scalar-parameter naming (1-based indices)."""
    names = [f"alpha[{i + 1}]" for i in range(v)]
    names += [f"s[{i + 1}]" for i in range(v)]
    names.append("lambda")
    if include_rho:
        names.append("rho")
    names += [f"sigma[{i + 1}]" for i in range(v)]
    names += [f"gamma[{i + 1},{j + 1}]" for i in range(v) for j in range(i)]
    names += [
        f"phi[{m + 1},{year + 1},{i + 1}]"
        for i in range(v)
        for year in range(t)
        for m in range(MONTHS)
    ]
    return names


def state_vector(state: ModelState, include_rho: bool) -> np.ndarray:
    """Flatten a state into the ``param_names`` order."""
    v = state.viruses
    parts = [state.alpha, state.s, [state.lam]]
    if include_rho:
        parts.append([state.rho])
    parts.append(state.sigma)
    parts.append([state.gamma[i, j] for i in range(v) for j in range(i)])
    parts.append(state.phi.transpose(2, 1, 0).ravel())
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def default_initial_state(panel: CountPanel) -> ModelState:
    """Moment-matched starting point that always lies in the support."""
    y_sum = panel.observed.sum(axis=(0, 1)).astype(float)
    e_sum = panel.expected.sum(axis=(0, 1))
    alpha = np.log(np.maximum(y_sum, 0.5) / e_sum)
    v = panel.viruses
    return ModelState(
        alpha=alpha,
        phi=np.zeros((MONTHS, panel.years, v)),
        s=np.full(v, 0.5),
        lam=0.5,
        rho=0.5,
        sigma=np.ones(v),
        gamma=np.eye(v),
    )


def _expit(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _rank_one_quad_delta(
    resid_year: np.ndarray, omega: np.ndarray, lam_col: np.ndarray, lam_vv: float, delta: np.ndarray
) -> float:
    """Change of ``trace(omega @ R @ lam_prec @ R.T)`` when column v of R shifts by delta.

    ``lam_col`` is column v of ``lam_prec`` and ``lam_vv`` its diagonal entry;
    the identity is ``2 * delta @ omega @ (R @ lam_col) + lam_vv * delta @ omega @ delta``.
    """
    w = omega @ delta
    return 2.0 * float((resid_year @ lam_col) @ w) + lam_vv * float(delta @ w)


def _quad_form_total(resid: np.ndarray, omega: np.ndarray, lam_prec: np.ndarray) -> float:
    """``sum_t trace(omega @ R_t @ lam_prec @ R_t.T)`` over the year axis."""
    rt = resid.transpose(1, 0, 2)  # (T, 12, V)
    return float(np.sum((rt @ lam_prec) * (omega @ rt)))


class _ChainSampler:
    """Mutable single-chain state with incrementally maintained caches."""

    def __init__(
        self,
        panel: CountPanel,
        proximity: ProximitySpec,
        hyper: HyperParams,
        config: ChainConfig,
        rng: np.random.Generator,
        initial: ModelState,
        fixed: frozenset[str],
    ):
        self.proximity = proximity
        self.hyper = hyper
        self.config = config
        self.rng = rng
        self.fixed = fixed

        self.y = panel.observed.astype(float)
        self.e = panel.expected
        self.sum_y = self.y.sum(axis=(0, 1))
        self.n_years = panel.years
        self.n_viruses = panel.viruses

        st = initial
        self.alpha = st.alpha.copy()
        self.phi = st.phi.copy()
        self.s = st.s.copy()
        self.lam = float(st.lam)
        self.rho = float(st.rho)
        self.sigma = st.sigma.copy()
        self.gamma = st.gamma.copy()

        self.sample_rho = proximity.kind == "autoregressive" and "rho" not in fixed
        dist = np.zeros((MONTHS, MONTHS))
        for i in range(MONTHS):
            for j in range(MONTHS):
                dist[i, j] = month_distance(i + 1, j + 1, proximity.circular)
        self._dist = dist

        self._rebuild_omega()
        self._rebuild_lam_prec()
        self.refresh_caches()
        self._build_blocks()

    # -- cache construction -------------------------------------------------

    def _w_matrix(self) -> np.ndarray:
        if self.proximity.kind == "neighborhood":
            return build_w_neighborhood(self.proximity.neighbor_order, self.proximity.circular)
        w = self.rho ** self._dist
        np.fill_diagonal(w, 0.0)
        return w

    @staticmethod
    def _omega_from(w: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
        omega = np.diag(w.sum(axis=1)) - lam * w
        lower = np.linalg.cholesky(omega)
        return omega, 2.0 * float(np.sum(np.log(np.diag(lower))))

    def _rebuild_omega(self):
        self.w = self._w_matrix()
        self.omega, self.logdet_omega = self._omega_from(self.w, self.lam)

    @staticmethod
    def _gamma_inverse(gamma: np.ndarray) -> np.ndarray:
        inv, info = dtrtri(gamma, lower=1, unitdiag=1)
        if info != 0:
            raise np.linalg.LinAlgError("triangular inversion failed")
        return inv

    def _lam_prec_from(self, sigma: np.ndarray, gamma_inv: np.ndarray) -> np.ndarray:
        a = gamma_inv / sigma[None, :]
        return a.T @ a

    def _rebuild_lam_prec(self):
        self.gamma_inv = self._gamma_inverse(self.gamma)
        self.lam_prec = self._lam_prec_from(self.sigma, self.gamma_inv)
        self.logdet_lam = -2.0 * float(np.sum(np.log(self.sigma)))

    def refresh_caches(self):
        """Recompute residuals, quadratic forms and Poisson mean sums from scratch."""
        self.resid = self.phi.copy()
        if self.n_years > 1:
            self.resid[:, 1:, :] -= self.s[None, None, :] * self.phi[:, :-1, :]
        self.q_sum = _quad_form_total(self.resid, self.omega, self.lam_prec)
        self.musum = (self.e * np.exp(self.alpha[None, None, :] + self.phi)).sum(axis=0)

    # -- block bookkeeping ---------------------------------------------------

    def _build_blocks(self):
        blocks: list[tuple] = []
        v, t = self.n_viruses, self.n_years
        if "alpha" not in self.fixed:
            blocks += [("alpha", i) for i in range(v)]
        n_phi = 0
        if "phi" not in self.fixed:
            blocks += [("phi", year, i) for year in range(t) for i in range(v)]
            n_phi = t * v
        if "s" not in self.fixed:
            blocks += [("s", i) for i in range(v)]
        if "lambda" not in self.fixed:
            blocks.append(("lambda",))
        if self.sample_rho:
            blocks.append(("rho",))
        if "sigma" not in self.fixed:
            blocks += [("sigma", i) for i in range(v)]
        if "gamma" not in self.fixed:
            blocks += [("gamma", i, j) for i in range(v) for j in range(i)]
        if not blocks:
            raise ValueError("every parameter group is fixed; nothing to sample")
        self.blocks = blocks
        self.n_phi_blocks = n_phi
        self.block_names = [self._block_name(b) for b in blocks]
        init_scale = {"alpha": 0.1, "phi": 0.1, "s": 0.5, "lambda": 0.5, "rho": 0.5,
                      "sigma": 0.3, "gamma": 0.1}
        self.scales = [init_scale[b[0]] for b in blocks]
        self.targets = [
            TARGET_ACCEPT_VECTOR if b[0] == "phi" else self.config.target_accept for b in blocks
        ]
        n = len(blocks)
        self.win_prop = [0] * n
        self.win_acc = [0] * n
        self.post_prop = [0] * n
        self.post_acc = [0] * n

    @staticmethod
    def _block_name(block: tuple) -> str:
        kind = block[0]
        if kind == "phi":
            return f"phi[{block[1] + 1},{block[2] + 1}]"
        if kind in ("alpha", "s", "sigma"):
            return f"{kind}[{block[1] + 1}]"
        if kind == "gamma":
            return f"gamma[{block[1] + 1},{block[2] + 1}]"
        return kind

    # -- individual updates ---------------------------------------------------

    def _update_alpha(self, v: int, z: float, log_u: float, scale: float) -> bool:
        old = self.alpha[v]
        new = old + scale * z
        d_alpha = new - old
        mu_sum = float(self.musum[:, v].sum())
        d_lik = d_alpha * self.sum_y[v] - (math.exp(d_alpha) - 1.0) * mu_sum
        h = self.hyper
        d_prior = -0.5 * (
            (new - h.alpha_prior_mean) ** 2 - (old - h.alpha_prior_mean) ** 2
        ) / h.alpha_prior_sd**2
        if d_lik + d_prior > log_u:
            self.alpha[v] = new
            self.musum[:, v] = (self.e[:, :, v] * np.exp(new + self.phi[:, :, v])).sum(axis=0)
            return True
        return False

    def _update_phi(self, t: int, v: int, z: np.ndarray, log_u: float, scale: float) -> bool:
        old = self.phi[:, t, v]
        d_eta = scale * z
        new = old + d_eta
        new_mu = self.e[:, t, v] * np.exp(self.alpha[v] + new)
        new_mu_sum = float(new_mu.sum())
        d_lik = float(self.y[:, t, v] @ d_eta) - new_mu_sum + self.musum[t, v]

        lam_col = self.lam_prec[:, v]
        lam_vv = self.lam_prec[v, v]
        dq = _rank_one_quad_delta(self.resid[:, t, :], self.omega, lam_col, lam_vv, d_eta)
        d_next = None
        if t + 1 < self.n_years:
            d_next = -self.s[v] * d_eta
            dq += _rank_one_quad_delta(
                self.resid[:, t + 1, :], self.omega, lam_col, lam_vv, d_next
            )

        if d_lik - 0.5 * dq > log_u:
            self.phi[:, t, v] = new
            self.musum[t, v] = new_mu_sum
            self.resid[:, t, v] += d_eta
            if d_next is not None:
                self.resid[:, t + 1, v] += d_next
            self.q_sum += dq
            return True
        return False

    def _logit_walk(self, x: float, bounds: tuple[float, float], z: float, scale: float):
        lo, hi = bounds
        t = math.log((x - lo) / (hi - x))
        t_new = t + scale * z
        x_new = lo + (hi - lo) * _expit(t_new)
        if x_new <= lo or x_new >= hi:
            return None
        d_jac = math.log((x_new - lo) * (hi - x_new)) - math.log((x - lo) * (hi - x))
        return x_new, d_jac

    def _update_s(self, v: int, z: float, log_u: float, scale: float) -> bool:
        # s lives in [0, 1): the walk runs on the open prior interval, which
        # never reaches the boundary from an interior start.
        prop = self._logit_walk(self.s[v], self.hyper.s_bounds, z, scale)
        if prop is None:
            return False
        s_new, d_jac = prop
        resid_c = self.resid.copy()
        resid_c[:, 1:, v] = self.phi[:, 1:, v] - s_new * self.phi[:, :-1, v]
        q_new = _quad_form_total(resid_c, self.omega, self.lam_prec)
        if -0.5 * (q_new - self.q_sum) + d_jac > log_u:
            self.s[v] = s_new
            self.resid = resid_c
            self.q_sum = q_new
            return True
        return False

    def _update_lambda(self, z: float, log_u: float, scale: float) -> bool:
        prop = self._logit_walk(self.lam, self.hyper.lambda_bounds, z, scale)
        if prop is None:
            return False
        lam_new, d_jac = prop
        if not 0.0 < lam_new < 1.0:
            return False
        try:
            omega_new, logdet_new = self._omega_from(self.w, lam_new)
        except np.linalg.LinAlgError:
            return False
        q_new = _quad_form_total(self.resid, omega_new, self.lam_prec)
        d = (
            0.5 * self.n_years * self.n_viruses * (logdet_new - self.logdet_omega)
            - 0.5 * (q_new - self.q_sum)
            + d_jac
        )
        if d > log_u:
            self.lam = lam_new
            self.omega = omega_new
            self.logdet_omega = logdet_new
            self.q_sum = q_new
            return True
        return False

    def _update_rho(self, z: float, log_u: float, scale: float) -> bool:
        prop = self._logit_walk(self.rho, self.hyper.rho_bounds, z, scale)
        if prop is None:
            return False
        rho_new, d_jac = prop
        if not 0.0 < rho_new < 1.0:
            return False
        w_new = rho_new ** self._dist
        np.fill_diagonal(w_new, 0.0)
        try:
            omega_new, logdet_new = self._omega_from(w_new, self.lam)
        except np.linalg.LinAlgError:
            return False
        q_new = _quad_form_total(self.resid, omega_new, self.lam_prec)
        d = (
            0.5 * self.n_years * self.n_viruses * (logdet_new - self.logdet_omega)
            - 0.5 * (q_new - self.q_sum)
            + d_jac
        )
        if d > log_u:
            self.rho = rho_new
            self.w = w_new
            self.omega = omega_new
            self.logdet_omega = logdet_new
            self.q_sum = q_new
            return True
        return False

    def _ensure_cross_product(self) -> np.ndarray:
        # Valid while residuals and omega are untouched, i.e. across the
        # consecutive sigma/gamma blocks of one sweep.
        if self._cross is None:
            rt = self.resid.transpose(1, 0, 2)
            self._cross = np.einsum("tmv,tmw->vw", rt, self.omega @ rt)
        return self._cross

    def _update_sigma(self, v: int, z: float, log_u: float, scale: float) -> bool:
        old = self.sigma[v]
        new = old * math.exp(scale * z)
        if new <= 0.0 or not math.isfinite(new):
            return False
        cross = self._ensure_cross_product()
        sigma_new = self.sigma.copy()
        sigma_new[v] = new
        lam_prec_new = self._lam_prec_from(sigma_new, self.gamma_inv)
        logdet_new = -2.0 * float(np.sum(np.log(sigma_new)))
        q_new = float(np.sum(lam_prec_new * cross))
        h = self.hyper
        log_ratio_sigma = math.log(new) - math.log(old)
        d_prior = (h.sigma_prior_shape - 1.0) * log_ratio_sigma - h.sigma_prior_rate * (new - old)
        d = (
            0.5 * self.n_years * MONTHS * (logdet_new - self.logdet_lam)
            - 0.5 * (q_new - self.q_sum)
            + d_prior
            + log_ratio_sigma  # log-scale walk Jacobian
        )
        if d > log_u:
            self.sigma = sigma_new
            self.lam_prec = lam_prec_new
            self.logdet_lam = logdet_new
            self.q_sum = q_new
            return True
        return False

    def _update_gamma(self, i: int, j: int, z: float, log_u: float, scale: float) -> bool:
        old = self.gamma[i, j]
        new = old + scale * z
        cross = self._ensure_cross_product()
        gamma_new = self.gamma.copy()
        gamma_new[i, j] = new
        gamma_inv_new = self._gamma_inverse(gamma_new)
        lam_prec_new = self._lam_prec_from(self.sigma, gamma_inv_new)
        q_new = float(np.sum(lam_prec_new * cross))
        sd = self.hyper.gamma_entry_prior_sd
        d_prior = -0.5 * (new**2 - old**2) / sd**2
        if -0.5 * (q_new - self.q_sum) + d_prior > log_u:
            self.gamma = gamma_new
            self.gamma_inv = gamma_inv_new
            self.lam_prec = lam_prec_new
            self.q_sum = q_new
            return True
        return False

    # -- sweep & adaptation ----------------------------------------------------

    def sweep(self, adapting: bool):
        n_blocks = len(self.blocks)
        z_phi = (
            self.rng.standard_normal((self.n_phi_blocks, MONTHS))
            if self.n_phi_blocks
            else None
        )
        z_scalar = self.rng.standard_normal(n_blocks - self.n_phi_blocks)
        log_u = np.log(self.rng.random(n_blocks))
        self._cross = None

        i_phi = 0
        i_scalar = 0
        for k, block in enumerate(self.blocks):
            kind = block[0]
            scale = self.scales[k]
            lu = log_u[k]
            if kind == "phi":
                accepted = self._update_phi(block[1], block[2], z_phi[i_phi], lu, scale)
                i_phi += 1
            else:
                z = float(z_scalar[i_scalar])
                i_scalar += 1
                if kind == "alpha":
                    accepted = self._update_alpha(block[1], z, lu, scale)
                elif kind == "s":
                    accepted = self._update_s(block[1], z, lu, scale)
                elif kind == "lambda":
                    accepted = self._update_lambda(z, lu, scale)
                elif kind == "rho":
                    accepted = self._update_rho(z, lu, scale)
                elif kind == "sigma":
                    accepted = self._update_sigma(block[1], z, lu, scale)
                else:
                    accepted = self._update_gamma(block[1], block[2], z, lu, scale)
            if adapting:
                self.win_prop[k] += 1
                self.win_acc[k] += accepted
            else:
                self.post_prop[k] += 1
                self.post_acc[k] += accepted

    def adapt(self, batch_index: int):
        step = min(0.05, batch_index**-0.5)
        for k in range(len(self.blocks)):
            if self.win_prop[k] == 0:
                continue
            rate = self.win_acc[k] / self.win_prop[k]
            factor = step if rate > self.targets[k] else -step
            self.scales[k] = float(np.clip(self.scales[k] * math.exp(factor), 1e-6, 50.0))
            self.win_prop[k] = 0
            self.win_acc[k] = 0

    def snapshot(self) -> ModelState:
        return ModelState(
            alpha=self.alpha.copy(),
            phi=self.phi.copy(),
            s=self.s.copy(),
            lam=self.lam,
            rho=self.rho,
            sigma=self.sigma.copy(),
            gamma=self.gamma.copy(),
        )

    def accept_rates(self) -> dict[str, float]:
        return {
            name: (self.post_acc[k] / self.post_prop[k]) if self.post_prop[k] else math.nan
            for k, name in enumerate(self.block_names)
        }


def run_chain(
    panel: CountPanel,
    proximity: ProximitySpec,
    hyper: HyperParams,
    config: ChainConfig,
    chain_index: int,
    *,
    seed: int | None = None,
    initial: ModelState | None = None,
    fixed: frozenset[str] | set[str] = frozenset(),
    fixed_rho: float | None = None,
) -> ChainResult:
    """Run one chain and return its thinned post-burn-in draws.

    The chain seed defaults to ``config.seed + chain_index`` fed through a
    splittable seed sequence.  ``fixed`` names parameter groups excluded from
    updating (useful for reduced models and for fixing the autoregressive
    decay, cf. ``fixed_rho``).
    """
    chain_seed = config.seed + chain_index if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence(chain_seed))
    state = initial.copy() if initial is not None else default_initial_state(panel)
    fixed = frozenset(fixed)
    if fixed_rho is not None:
        if not 0.0 < fixed_rho < 1.0:
            raise ValueError("fixed_rho must lie in (0, 1)")
        state.rho = float(fixed_rho)
        fixed = fixed | {"rho"}

    start = log_posterior(state, panel, proximity, hyper)
    if not np.isfinite(start):
        raise NonFiniteDensity(f"initial state has log-posterior {start}")

    sampler = _ChainSampler(panel, proximity, hyper, config, rng, state, fixed)
    draws: list[ModelState] = []
    iterations: list[int] = []
    batch = 0
    with np.errstate(over="ignore"):
        for sweep in range(1, config.n_iterations + 1):
            adapting = sweep <= config.burn_in
            sampler.sweep(adapting)
            if adapting and sweep % config.adapt_window == 0:
                batch += 1
                sampler.adapt(batch)
                sampler.refresh_caches()
            if sweep == config.burn_in:
                sampler.refresh_caches()
            if sweep > config.burn_in and (sweep - config.burn_in) % config.thin == 0:
                draws.append(sampler.snapshot())
                iterations.append(sweep)
    return ChainResult(
        chain_index=chain_index,
        seed=chain_seed,
        draws=draws,
        iterations=iterations,
        accept_rates=sampler.accept_rates(),
    )


def _chain_task(args) -> ChainResult:
    panel, proximity, hyper, config, chain_index, seed, initial, fixed, fixed_rho = args
    return run_chain(
        panel,
        proximity,
        hyper,
        config,
        chain_index,
        seed=seed,
        initial=initial,
        fixed=fixed,
        fixed_rho=fixed_rho,
    )


def run_chains(
    panel: CountPanel,
    proximity: ProximitySpec,
    hyper: HyperParams,
    config: ChainConfig,
    *,
    chain_seeds: list[int] | None = None,
    initial: ModelState | None = None,
    fixed: frozenset[str] | set[str] = frozenset(),
    fixed_rho: float | None = None,
) -> PosteriorSamples:
    """Run ``config.n_chains`` independent chains and pool their draws.

    Per-chain seeds default to ``config.seed + chain_index``; duplicated
    explicit seeds produce identical chains and a logged warning.  Chains may
    run in worker processes (``config.n_workers``); the draws are identical
    regardless of the worker count.
    """
    if chain_seeds is None:
        chain_seeds = [config.seed + c for c in range(config.n_chains)]
    if len(chain_seeds) != config.n_chains:
        raise ValueError("chain_seeds must provide one seed per chain")
    if len(set(chain_seeds)) != len(chain_seeds):
        logger.warning("duplicate chain seeds %s: identical chains will be produced", chain_seeds)

    tasks = [
        (panel, proximity, hyper, config, c, chain_seeds[c], initial, frozenset(fixed), fixed_rho)
        for c in range(config.n_chains)
    ]
    if config.n_workers > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=config.n_workers) as pool:
            results = list(pool.map(_chain_task, tasks))
    else:
        results = [_chain_task(t) for t in tasks]

    draws: list[ModelState] = []
    chain_labels: list[int] = []
    iteration: list[int] = []
    for res in results:
        draws.extend(res.draws)
        chain_labels.extend([res.chain_index] * len(res.draws))
        iteration.extend(res.iterations)

    accept_rates: dict[str, float] = {}
    for name in results[0].accept_rates:
        accept_rates[name] = float(np.mean([r.accept_rates[name] for r in results]))

    sampled_rho = proximity.kind == "autoregressive"
    rhat = None
    if config.n_chains >= 2:
        names = param_names(panel.viruses, panel.years, include_rho=sampled_rho)
        per_chain = np.stack(
            [
                np.stack([state_vector(d, sampled_rho) for d in res.draws])
                for res in results
            ]
        )
        rhat_values = gelman_rubin(per_chain)
        rhat = {
            name: float(val)
            for name, val in zip(names, rhat_values)
            if np.isfinite(val)
        }
        flagged = {k: v for k, v in rhat.items() if v > 1.1}
        if flagged:
            logger.warning("R-hat above 1.1 for %d parameter(s): %s", len(flagged),
                           sorted(flagged, key=flagged.get, reverse=True)[:10])

    return PosteriorSamples(
        draws=draws,
        chain=np.array(chain_labels),
        iteration=np.array(iteration),
        accept_rates=accept_rates,
        rhat=rhat,
        virus_names=list(panel.virus_names),
        sampled_rho=sampled_rho,
    )


def gelman_rubin(chains: np.ndarray) -> np.ndarray:
    """Potential scale reduction factors for an (m, n, P) array of chains.

    Parameters with zero within-chain variance yield NaN (no mixing
    information, e.g. frozen parameters).
    """
    chains = np.asarray(chains, dtype=float)
    m, n, _ = chains.shape
    if m < 2 or n < 2:
        raise ValueError("need at least two chains with two draws each")
    within = chains.var(axis=1, ddof=1).mean(axis=0)
    means = chains.mean(axis=1)
    between = n * means.var(axis=0, ddof=1)
    var_hat = within * (n - 1) / n + between * (m + 1) / (m * n)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sqrt(var_hat / within)
    out[within == 0] = np.nan
    return out


def dic(samples: PosteriorSamples, panel: CountPanel) -> float:
    """Deviance information criterion from posterior draws.

    ``mean deviance + p_D`` with ``p_D = mean deviance - deviance at the
    elementwise posterior-mean state``.
    """
    draws = samples.draws
    if len(draws) < 10:
        raise ValueError("need at least 10 draws")
    deviances = np.array([-2.0 * log_likelihood(d, panel) for d in draws])
    mean_dev = float(deviances.mean())
    mean_state = ModelState(
        alpha=np.mean([d.alpha for d in draws], axis=0),
        phi=np.mean([d.phi for d in draws], axis=0),
        s=np.mean([d.s for d in draws], axis=0),
        lam=float(np.mean([d.lam for d in draws])),
        rho=float(np.mean([d.rho for d in draws])),
        sigma=np.mean([d.sigma for d in draws], axis=0),
        gamma=np.mean([d.gamma for d in draws], axis=0),
    )
    dev_at_mean = -2.0 * log_likelihood(mean_state, panel)
    p_d = mean_dev - dev_at_mean
    return mean_dev + p_d
