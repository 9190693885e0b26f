import numpy as np
import pytest
from scipy.stats import gamma as gamma_dist
from scipy.stats import norm, poisson, uniform

from epimcar.linalg import NotPositiveDefinite, cholesky_factor
from epimcar.model import (
    CountPanel,
    HyperParams,
    ModelState,
    ProximitySpec,
    between_virus_precision,
    build_omega,
    build_w_autoregressive,
    build_w_neighborhood,
    covariance_from_cholesky,
    log_likelihood,
    log_prior_params,
    log_prior_phi,
    log_posterior,
    mcar_log_density,
    month_distance,
    relative_risks,
)


def make_state(rng, v=3, t=2, phi_scale=0.3):
    gamma = np.eye(v)
    gamma[np.tril_indices(v, -1)] = rng.normal(scale=0.4, size=v * (v - 1) // 2)
    return ModelState(
        alpha=rng.normal(scale=0.5, size=v),
        phi=rng.normal(scale=phi_scale, size=(12, t, v)),
        s=rng.uniform(0.2, 0.8, size=v),
        lam=rng.uniform(0.2, 0.8),
        rho=rng.uniform(0.2, 0.8),
        sigma=rng.uniform(0.5, 1.5, size=v),
        gamma=gamma,
    )


def make_panel(rng, v=3, t=2):
    expected = rng.uniform(5.0, 30.0, size=(12, t, v))
    observed = rng.poisson(expected)
    return CountPanel(observed=observed, expected=expected, virus_names=[f"v{i}" for i in range(v)])


class TestProximityMatrices:
    def test_neighborhood_example_entries(self):
        w = build_w_neighborhood(3, circular=True)
        assert w[0, 3] == 1.0  # months 1 and 4
        assert w[0, 4] == 0.0  # months 1 and 5
        assert w[0, 11] == 1.0  # months 1 and 12 wrap around

    def test_neighborhood_matches_distance_oracle(self):
        for order in (1, 3, 5):
            w = build_w_neighborhood(order, circular=True)
            for i in range(12):
                for j in range(12):
                    d = min(abs(i - j), 12 - abs(i - j))
                    assert w[i, j] == (1.0 if i != j and d <= order else 0.0)

    def test_neighborhood_row_sums(self):
        for order in (1, 2, 3, 4, 5):
            w = build_w_neighborhood(order, circular=True)
            assert np.all(w.sum(axis=1) == 2 * order)

    def test_neighborhood_non_circular_chain(self):
        w = build_w_neighborhood(1, circular=False)
        assert w[0, 11] == 0.0
        assert w[0, 1] == 1.0

    def test_neighborhood_order_bounds(self):
        with pytest.raises(ValueError):
            build_w_neighborhood(0)
        with pytest.raises(ValueError):
            build_w_neighborhood(6)

    def test_autoregressive_power_entries(self):
        w = build_w_autoregressive(0.5, circular=True)
        assert w[0, 1] == 0.5
        assert w[0, 2] == 0.25
        assert w[0, 11] == 0.5  # circular distance 1

    def test_autoregressive_matches_distance_oracle(self):
        rho = 0.7
        w = build_w_autoregressive(rho, circular=True)
        for i in range(12):
            for j in range(12):
                expected = 0.0 if i == j else rho ** month_distance(i + 1, j + 1)
                assert w[i, j] == pytest.approx(expected)

    def test_autoregressive_zero_diagonal(self):
        for rho in (0.1, 0.5, 0.9):
            assert np.all(np.diag(build_w_autoregressive(rho)) == 0.0)

    def test_symmetric_zero_diagonal_both_kinds(self):
        for w in (build_w_neighborhood(3), build_w_autoregressive(0.4)):
            assert np.array_equal(w, w.T)
            assert np.all(np.diag(w) == 0.0)


class TestOmega:
    def test_neighborhood_entries(self):
        omega = build_omega(build_w_neighborhood(3, True), 0.5)
        assert np.all(np.diag(omega) == 6.0)
        assert omega[0, 1] == -0.5
        assert omega[0, 4] == 0.0

    def test_small_lambda_limit_is_degree_matrix(self):
        w = build_w_neighborhood(3, True)
        omega = build_omega(w, 1e-9)
        assert np.max(np.abs(omega - np.diag(w.sum(axis=1)))) < 1e-8

    def test_row_sum_identity(self):
        for lam in (0.1, 0.5, 0.9):
            for w in (build_w_neighborhood(3), build_w_autoregressive(0.6)):
                omega = build_omega(w, lam)
                degree = w.sum(axis=1)
                assert np.allclose(omega @ np.ones(12), (1 - lam) * degree)

    def test_positive_definite_grid(self):
        for lam in (0.1, 0.5, 0.9):
            for w in (build_w_neighborhood(3), build_w_autoregressive(0.6)):
                omega = build_omega(w, lam)
                assert np.min(np.linalg.eigvalsh(omega)) > 0

    def test_lambda_bounds(self):
        w = build_w_neighborhood(3)
        with pytest.raises(ValueError):
            build_omega(w, 0.0)
        with pytest.raises(ValueError):
            build_omega(w, 1.0)


class TestCovarianceFromCholesky:
    def test_identity(self):
        assert np.array_equal(covariance_from_cholesky(np.ones(2), np.eye(2)), np.eye(2))

    def test_two_virus_example(self):
        gamma = np.array([[1.0, 0.0], [-0.5, 1.0]])
        out = covariance_from_cholesky(np.ones(2), gamma)
        assert np.allclose(out, [[1.0, -0.5], [-0.5, 1.25]])

    def test_randomized_outputs_are_spd(self):
        rng = np.random.default_rng(10)
        for _ in range(1000):
            v = rng.integers(2, 6)
            sigma = rng.uniform(0.1, 3.0, size=v)
            gamma = np.eye(v)
            gamma[np.tril_indices(v, -1)] = rng.normal(size=v * (v - 1) // 2)
            cov = covariance_from_cholesky(sigma, gamma)
            assert np.allclose(cov, cov.T)
            assert np.min(np.linalg.eigvalsh(cov)) > 0

    def test_diagonal_entries_formula(self):
        rng = np.random.default_rng(11)
        sigma = rng.uniform(0.5, 2.0, size=3)
        gamma = np.eye(3)
        gamma[np.tril_indices(3, -1)] = rng.normal(size=3)
        cov = covariance_from_cholesky(sigma, gamma)
        for v in range(3):
            assert cov[v, v] == pytest.approx(sigma[v] ** 2 * np.sum(gamma[v] ** 2))

    def test_precision_is_inverse(self):
        rng = np.random.default_rng(12)
        sigma = rng.uniform(0.5, 2.0, size=4)
        gamma = np.eye(4)
        gamma[np.tril_indices(4, -1)] = rng.normal(size=6)
        cov = covariance_from_cholesky(sigma, gamma)
        prec, logdet = between_virus_precision(sigma, gamma)
        assert np.max(np.abs(prec @ cov - np.eye(4))) < 1e-10
        assert logdet == pytest.approx(np.linalg.slogdet(prec)[1])


class TestLogLikelihood:
    def test_single_cell_values(self):
        observed = np.zeros((12, 1, 1), dtype=int)
        observed[0, 0, 0] = 2
        panel = CountPanel(observed=observed, expected=np.ones((12, 1, 1)), virus_names=["a"])
        state = ModelState(
            alpha=np.zeros(1), phi=np.zeros((12, 1, 1)), s=np.zeros(1),
            lam=0.5, rho=0.5, sigma=np.ones(1), gamma=np.eye(1),
        )
        # Eleven cells contribute the zero-count value -1; the Y=2 cell
        # contributes -1 - log(2).
        expected_total = 11 * (-1.0) + (-1.0 - np.log(2.0))
        assert log_likelihood(state, panel) == pytest.approx(expected_total, abs=1e-12)

    def test_matches_scipy_poisson_oracle(self):
        rng = np.random.default_rng(13)
        panel = make_panel(rng)
        state = make_state(rng)
        rr = relative_risks(state)
        oracle = float(np.sum(poisson.logpmf(panel.observed, panel.expected * rr)))
        assert log_likelihood(state, panel) == pytest.approx(oracle, rel=1e-12)

    def test_additivity_over_cells(self):
        rng = np.random.default_rng(14)
        panel = make_panel(rng, v=1, t=1)
        state = make_state(rng, v=1, t=1)
        total = log_likelihood(state, panel)
        per_cell = 0.0
        rr = relative_risks(state)
        for m in range(12):
            mu = panel.expected[m, 0, 0] * rr[m, 0, 0]
            per_cell += float(poisson.logpmf(panel.observed[m, 0, 0], mu))
        assert total == pytest.approx(per_cell, rel=1e-12)


class TestMcarDensity:
    def test_standard_normal_at_origin(self):
        for v in (1, 2, 3):
            value = mcar_log_density(
                np.zeros((12, 1, v)), np.full(v, 0.5), np.eye(12), np.eye(v)
            )
            assert value == pytest.approx(-(12 * v / 2) * np.log(2 * np.pi))

    def test_s_zero_factorizes_over_years(self):
        rng = np.random.default_rng(15)
        v, t = 2, 4
        phi = rng.normal(size=(12, t, v))
        omega = build_omega(build_w_neighborhood(3), 0.4)
        prec = np.array([[1.5, -0.3], [-0.3, 1.0]])
        joint = mcar_log_density(phi, np.zeros(v), omega, prec)
        separate = sum(
            mcar_log_density(phi[:, t0 : t0 + 1, :], np.zeros(v), omega, prec)
            for t0 in range(t)
        )
        assert joint == pytest.approx(separate, rel=1e-12)

    def test_s_one_with_repeated_year_gives_zero_residual(self):
        rng = np.random.default_rng(16)
        v = 2
        phi_year = rng.normal(size=(12, 1, v))
        phi = np.concatenate([phi_year, phi_year], axis=1)
        omega = build_omega(build_w_neighborhood(3), 0.4)
        prec = np.eye(v)
        value = mcar_log_density(phi, np.ones(v), omega, prec)
        year1 = mcar_log_density(phi_year, np.ones(v), omega, prec)
        # The year-2 residual is exactly zero, so its contribution is the
        # normalising constant alone.
        lower = cholesky_factor(np.kron(omega, prec))
        logdet = 2 * np.sum(np.log(np.diag(lower)))
        norm_const = -(12 * v / 2) * np.log(2 * np.pi) + 0.5 * logdet
        assert value == pytest.approx(year1 + norm_const, rel=1e-12)

    def test_matches_dense_mvn_oracle_single_year(self):
        rng = np.random.default_rng(17)
        v = 3
        state = make_state(rng, v=v, t=1)
        spec = ProximitySpec()
        omega = build_omega(build_w_neighborhood(3), state.lam)
        lam_prec, _ = between_virus_precision(state.sigma, state.gamma)
        dense = np.kron(omega, lam_prec)
        sign, logdet = np.linalg.slogdet(dense)
        assert sign > 0
        r = state.phi[:, 0, :].ravel()
        oracle = -0.5 * (36 * np.log(2 * np.pi) - logdet + r @ dense @ r)
        assert log_prior_phi(state, spec) == pytest.approx(oracle, abs=1e-8)

    def test_multi_year_dense_oracle(self):
        rng = np.random.default_rng(18)
        v, t = 2, 3
        state = make_state(rng, v=v, t=t)
        spec = ProximitySpec(kind="autoregressive")
        omega = build_omega(build_w_autoregressive(state.rho), state.lam)
        lam_prec, _ = between_virus_precision(state.sigma, state.gamma)
        dense = np.kron(omega, lam_prec)
        sign, logdet = np.linalg.slogdet(dense)
        total = 0.0
        for t0 in range(t):
            r = state.phi[:, t0, :].ravel()
            if t0 > 0:
                r = r - (state.s[None, :] * state.phi[:, t0 - 1, :]).ravel()
            total += -0.5 * (24 * np.log(2 * np.pi) - logdet + r @ dense @ r)
        assert log_prior_phi(state, spec) == pytest.approx(total, abs=1e-8)


class TestLogPriorParams:
    def test_matches_scipy_oracle(self):
        rng = np.random.default_rng(19)
        state = make_state(rng)
        hyper = HyperParams()
        v = state.viruses
        oracle = float(np.sum(norm.logpdf(state.alpha, 0.0, 10.0)))
        oracle += float(np.sum(norm.logpdf(state.gamma[np.tril_indices(v, -1)], 0.0, 1.0)))
        oracle += float(np.sum(gamma_dist.logpdf(state.sigma, a=1.0, scale=1.0)))
        oracle += float(np.sum(uniform.logpdf(state.s, 0.0, 1.0)))
        oracle += float(uniform.logpdf(state.lam, 0.0, 1.0))
        oracle += float(uniform.logpdf(state.rho, 0.0, 1.0))
        assert log_prior_params(state, hyper) == pytest.approx(oracle, rel=1e-12)

    def test_out_of_support_smoothing(self):
        rng = np.random.default_rng(20)
        state = make_state(rng)
        state.lam = 1.2
        assert log_prior_params(state, HyperParams()) == -np.inf

    def test_boundary_value_is_finite(self):
        rng = np.random.default_rng(21)
        state = make_state(rng)
        state.s = np.array([0.0, 0.3, 0.6])
        assert np.isfinite(log_prior_params(state, HyperParams()))

    def test_negative_sigma_has_zero_mass(self):
        rng = np.random.default_rng(22)
        state = make_state(rng)
        state.sigma = np.array([1.0, -0.1, 1.0])
        assert log_prior_params(state, HyperParams()) == -np.inf


class TestRelativeRisks:
    def test_all_ones_at_zero(self):
        state = ModelState(
            alpha=np.zeros(2), phi=np.zeros((12, 2, 2)), s=np.zeros(2),
            lam=0.5, rho=0.5, sigma=np.ones(2), gamma=np.eye(2),
        )
        assert np.array_equal(relative_risks(state), np.ones((12, 2, 2)))

    def test_intercept_only(self):
        state = ModelState(
            alpha=np.array([np.log(2.0), 0.0]), phi=np.zeros((12, 1, 2)), s=np.zeros(2),
            lam=0.5, rho=0.5, sigma=np.ones(2), gamma=np.eye(2),
        )
        rr = relative_risks(state)
        assert np.allclose(rr[:, :, 0], 2.0)
        assert np.allclose(rr[:, :, 1], 1.0)

    def test_log_round_trip(self):
        rng = np.random.default_rng(23)
        state = make_state(rng)
        rr = relative_risks(state)
        assert np.max(np.abs(np.log(rr) - (state.alpha[None, None, :] + state.phi))) < 1e-12


def permute_state_conjugate(state, perm):
    """Relabel viruses, re-deriving the covariance factors from the permuted matrix."""
    perm = np.asarray(perm)
    cov = covariance_from_cholesky(state.sigma, state.gamma)
    cov_p = cov[np.ix_(perm, perm)]
    lower = cholesky_factor(cov_p)
    sigma_p = np.diag(lower).copy()
    gamma_p = lower / sigma_p[:, None]
    return ModelState(
        alpha=state.alpha[perm],
        phi=state.phi[:, :, perm],
        s=state.s[perm],
        lam=state.lam,
        rho=state.rho,
        sigma=sigma_p,
        gamma=gamma_p,
    )


class TestRelabelingSymmetry:
    def test_likelihood_plus_phi_prior_invariant(self):
        # The data terms are symmetric under virus relabeling when the
        # covariance is conjugated consistently; checked over all 3! orders.
        from itertools import permutations

        rng = np.random.default_rng(24)
        state = make_state(rng, v=3, t=2)
        panel = make_panel(rng, v=3, t=2)
        spec = ProximitySpec()
        base = log_likelihood(state, panel) + log_prior_phi(state, spec)
        for perm in permutations(range(3)):
            perm = list(perm)
            state_p = permute_state_conjugate(state, perm)
            panel_p = CountPanel(
                observed=panel.observed[:, :, perm],
                expected=panel.expected[:, :, perm],
                virus_names=[panel.virus_names[j] for j in perm],
            )
            value = log_likelihood(state_p, panel_p) + log_prior_phi(state_p, spec)
            assert value == pytest.approx(base, rel=1e-9)

    def test_param_prior_invariant_under_vector_permutation(self):
        # The iid parameter priors are exchangeable: permuting the entries of
        # alpha, s, sigma and of the strictly-lower factor entries leaves the
        # joint prior unchanged.
        from itertools import permutations

        rng = np.random.default_rng(25)
        state = make_state(rng, v=3, t=2)
        hyper = HyperParams()
        base = log_prior_params(state, hyper)
        idx = np.tril_indices(3, -1)
        lower_entries = state.gamma[idx]
        for perm in permutations(range(3)):
            perm = list(perm)
            gamma_p = np.eye(3)
            gamma_p[idx] = lower_entries[perm]
            state_p = ModelState(
                alpha=state.alpha[perm],
                phi=state.phi,
                s=state.s[perm],
                lam=state.lam,
                rho=state.rho,
                sigma=state.sigma[perm],
                gamma=gamma_p,
            )
            assert log_prior_params(state_p, hyper) == pytest.approx(base, rel=1e-12)


class TestPanelValidation:
    def test_rejects_zero_expected(self):
        with pytest.raises(ValueError):
            CountPanel(
                observed=np.zeros((12, 1, 1), dtype=int),
                expected=np.zeros((12, 1, 1)),
                virus_names=["a"],
            )

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            CountPanel(
                observed=np.zeros((12, 1, 2), dtype=int),
                expected=np.ones((12, 1, 1)),
                virus_names=["a", "b"],
            )

    def test_rejects_negative_counts(self):
        observed = np.zeros((12, 1, 1), dtype=int)
        observed[0, 0, 0] = -1
        with pytest.raises(ValueError):
            CountPanel(observed=observed, expected=np.ones((12, 1, 1)), virus_names=["a"])


def test_log_posterior_is_sum_of_terms():
    rng = np.random.default_rng(26)
    state = make_state(rng)
    panel = make_panel(rng)
    spec = ProximitySpec()
    hyper = HyperParams()
    total = log_posterior(state, panel, spec, hyper)
    parts = (
        log_likelihood(state, panel)
        + log_prior_phi(state, spec)
        + log_prior_params(state, hyper)
    )
    assert total == pytest.approx(parts, rel=1e-12)
