"""
Characteristic function, its roots and the estimator built on them.

Closed-form checks use exact rational arithmetic on the float inputs.
"""

from fractions import Fraction

import numpy as np
import pytest
from scipy import linalg, optimize

from conftest import diagonal_svd
from copra.errors import DerivativeVanished, NoConvergence, NotApplicable, OutOfDomain
from copra.models import SpectralPartition
from copra.schemas import CopraConfig, SolverBranch
from copra.services import problems, regularizer
from copra.services.baselines import ols_solve
from copra.services.spectral import compute_svd, partition_spectrum

# σ = (2, 1, 0.001) with b chosen so the existence condition holds
TOY_SIGMA = np.array([2.0, 1.0, 0.001])
TOY_B = np.array([1.0, 0.5, 0.1])


def _part(n1, n2):
    return SpectralPartition(n1=n1, n2=n2, threshold=0.0, c=0.1, beta=(n1 + n2) / n1)


def _g_exact(rho, sigma, n1, b):
    """Sum form of the characteristic function in rationals."""
    rho = Fraction(rho)
    s = [Fraction(float(v)) ** 2 for v in sigma]
    bb = [Fraction(float(v)) ** 2 for v in b]
    n = len(s)
    beta = Fraction(n, n1)
    d = [si + rho for si in s]
    t1 = sum(si * bi / di ** 2 for si, bi, di in zip(s, bb, d))
    t0 = sum(bi / di ** 2 for bi, di in zip(bb, d))
    w_pos = sum((beta * s[i] + rho) / d[i] ** 2 for i in range(n1)) + (n - n1) / rho
    w_neg = sum(s[i] * (beta * s[i] + rho) / d[i] ** 2 for i in range(n1))
    return t1 * w_pos - t0 * w_neg


# ── regularized least squares ────────────────────────────────────────────────

def test_rls_on_identity():
    svd = diagonal_svd([1.0, 1.0])
    np.testing.assert_allclose(regularizer.rls_solve(svd, np.array([2.0, 4.0]), 1.0), [1.0, 2.0])


def test_rls_without_regularization_on_identity_returns_y():
    y = np.array([0.3, -1.0, 2.5])
    np.testing.assert_allclose(regularizer.rls_solve(diagonal_svd(np.ones(3)), y, 0.0), y)


def test_rls_matches_normal_equations(shaw8):
    y = problems.observe(shaw8, 30.0, seed=2).y
    rho = 1e-3
    gram = shaw8.a.T @ shaw8.a + rho * np.eye(8)
    expected = linalg.cho_solve(linalg.cho_factor(gram), shaw8.a.T @ y)
    np.testing.assert_allclose(regularizer.rls_solve(compute_svd(shaw8.a), y, rho), expected, rtol=1e-8)


def test_rls_rejects_negative_rho():
    with pytest.raises(OutOfDomain):
        regularizer.rls_solve(diagonal_svd([1.0]), np.array([1.0]), -1.0)


def test_projection_with_identity_factors_is_y():
    y = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(regularizer.projected_observation(diagonal_svd(np.ones(3)), y), y)


def test_projection_never_increases_norm():
    rng = np.random.default_rng(4)
    svd = compute_svd(rng.standard_normal((9, 4)))
    y = rng.standard_normal(9)
    assert np.linalg.norm(regularizer.projected_observation(svd, y)) <= np.linalg.norm(y)
    inside = svd.u @ rng.standard_normal(4)
    assert np.linalg.norm(regularizer.projected_observation(svd, inside)) == pytest.approx(np.linalg.norm(inside))


def test_projection_matches_compensated_dot_products(shaw8):
    y = problems.observe(shaw8, 20.0, seed=0).y
    svd = compute_svd(shaw8.a)
    exact = [float(sum(Fraction(float(u)) * Fraction(float(v)) for u, v in zip(svd.u[:, j], y))) for j in range(8)]
    np.testing.assert_allclose(regularizer.projected_observation(svd, y), exact, rtol=1e-12, atol=1e-13)


# ── characteristic function ──────────────────────────────────────────────────

@pytest.mark.parametrize("rho", [1e-6, 0.1, 1.0, 1e4])
def test_equal_spectrum_makes_g_vanish(rho):
    b = np.array([0.5, -1.0, 2.0, 0.1])
    part = partition_spectrum(np.ones(4), 0.1)
    assert regularizer.characteristic_g(rho, np.ones(4), part, b) == 0.0
    assert regularizer.characteristic_g_prime(rho, np.ones(4), part, b) == 0.0


def test_g_matches_rational_transcription():
    sigma, b = np.array([2.0, 1.0]), np.array([1.0, 1.0])
    expected = float(_g_exact(1.0, sigma, 1, b))
    assert expected == pytest.approx(0.14)
    assert regularizer.characteristic_g(1.0, sigma, _part(1, 1), b) == pytest.approx(expected, rel=1e-12)


def test_g_parts_combine_to_g():
    g1, g2 = regularizer.characteristic_parts(0.3, TOY_SIGMA, _part(2, 1), TOY_B)
    assert g1 > 0 and g2 > 0
    assert g1 - g2 == pytest.approx(regularizer.characteristic_g(0.3, TOY_SIGMA, _part(2, 1), TOY_B), rel=1e-12)


def test_g_is_positive_for_large_rho_when_condition_holds():
    sigma, b = np.array([10.0, 0.01]), np.array([1.0, 0.0])
    assert regularizer.root_condition(sigma, _part(1, 1), b)
    assert regularizer.characteristic_g(1e6 * 100.0, sigma, _part(1, 1), b) > 0
    assert regularizer.characteristic_g(1e6 * 4.0, TOY_SIGMA, _part(2, 1), TOY_B) > 0


def test_g_prime_matches_central_difference():
    sigma, b, part = np.array([2.0, 1.0]), np.array([1.0, 1.0]), _part(1, 1)
    h = 1e-6
    fd = (
        regularizer.characteristic_g(1.0 + h, sigma, part, b)
        - regularizer.characteristic_g(1.0 - h, sigma, part, b)
    ) / (2 * h)
    assert regularizer.characteristic_g_prime(1.0, sigma, part, b) == pytest.approx(fd, rel=1e-6)


def test_g_prime_changes_sign_at_the_minimum_of_g():
    part = _part(2, 1)
    grid = np.geomspace(1e-7, 1.0, 2000)
    slopes = np.array([regularizer.characteristic_g_prime(r, TOY_SIGMA, part, TOY_B) for r in grid])
    rising = np.nonzero((slopes[:-1] < 0) & (slopes[1:] > 0))[0]
    assert any(regularizer.characteristic_g(grid[i], TOY_SIGMA, part, TOY_B) < 0 for i in rising)


def test_g_rejects_non_positive_rho():
    with pytest.raises(OutOfDomain):
        regularizer.characteristic_g(0.0, TOY_SIGMA, _part(2, 1), TOY_B)


# ── existence condition and small root ──────────────────────────────────────

def test_condition_fails_on_equal_spectrum():
    part = partition_spectrum(np.ones(3), 0.1)
    assert not regularizer.root_condition(np.ones(3), part, np.array([1.0, 2.0, 3.0]))


def test_condition_literal_arithmetic():
    # 2 * 100 * 1 = 200 against 100 * 1 = 100
    assert regularizer.root_condition(np.array([10.0, 0.01]), _part(1, 1), np.array([1.0, 0.0]))


def test_condition_agrees_with_literal_inequality(shaw50_svd):
    part = partition_spectrum(shaw50_svd.sigma, 0.1)
    problem = problems.generate("shaw", 50)
    s2 = shaw50_svd.sigma ** 2
    for seed in range(50):
        b = regularizer.projected_observation(shaw50_svd, problems.observe(problem, 20.0, seed).y)
        lhs = 50 * np.sum(s2 * b ** 2)
        rhs = np.sum(s2[: part.n1]) * np.sum(b ** 2)
        if abs(lhs - rhs) > 1e-9 * rhs:
            assert regularizer.root_condition(shaw50_svd.sigma, part, b) == (lhs > rhs)


def test_small_root_needs_trivial_values():
    with pytest.raises(NotApplicable):
        regularizer.epsilon_root(np.ones(3), partition_spectrum(np.ones(3), 0.1), np.ones(3))


def test_small_root_matches_rational_formula():
    sigma, b = np.array([10.0, 1e-4]), np.array([1.0, 1.0])
    s2 = [Fraction(float(v)) ** 2 for v in sigma]
    inv2 = sum(1 / s for s in s2)
    inv4 = sum(1 / s ** 2 for s in s2)
    expected = (1 * inv2) / (2 * 1 * inv4 - 2 * inv2 * (1 / s2[0]))
    root = regularizer.epsilon_root(sigma, _part(1, 1), b)
    assert root.value == pytest.approx(float(expected), rel=1e-12)
    assert not root.floored


def test_small_root_is_floored():
    root = regularizer.epsilon_root(np.array([10.0, 1e-4]), _part(1, 1), np.array([1.0, 1.0]), floor=1.0)
    assert root.value == 1.0
    assert root.floored


def test_small_root_is_small_on_shaw(shaw50_svd):
    problem = problems.generate("shaw", 50)
    part = partition_spectrum(shaw50_svd.sigma, 0.1)
    limit = 1e-3 * shaw50_svd.sigma[part.n1 - 1] ** 2
    for seed in range(20):
        b = regularizer.projected_observation(shaw50_svd, problems.observe(problem, 20.0, seed).y)
        assert regularizer.epsilon_root(shaw50_svd.sigma, part, b).value < limit


# ── Newton iteration ─────────────────────────────────────────────────────────

def test_newton_on_linear_function_takes_one_step():
    outcome = regularizer.newton_solve(lambda r: r - 5.0, lambda r: 1.0, CopraConfig(), rho_init=1.0)
    assert outcome.rho == pytest.approx(5.0)
    assert outcome.iters == 1


def test_newton_bisects_when_a_step_leaves_the_bracket():
    outcome = regularizer.newton_solve(
        lambda r: float(np.tanh(r - 5.0)),
        lambda r: float(1.0 - np.tanh(r - 5.0) ** 2),
        CopraConfig(),
        rho_init=1.0,
        bracket=(1.0, 100.0),
    )
    assert outcome.rho == pytest.approx(5.0, rel=1e-8)
    assert outcome.safeguard_steps >= 1


def test_newton_without_root_leaves_the_positive_axis():
    with pytest.raises(NoConvergence):
        regularizer.newton_solve(lambda r: r * r + 1.0, lambda r: 2.0 * r, CopraConfig(), rho_init=1.0)


def test_newton_with_flat_function_reports_vanishing_derivative():
    with pytest.raises(DerivativeVanished):
        regularizer.newton_solve(lambda r: 1.0, lambda r: 0.0, CopraConfig(), rho_init=1.0)


def test_newton_needs_a_positive_start():
    with pytest.raises(OutOfDomain):
        regularizer.newton_solve(lambda r: r, lambda r: 1.0, CopraConfig(), rho_init=-1.0)


def _bisection_root(sigma, part, b, lower):
    grid = np.geomspace(lower, 1e8, 10_000)
    values = np.array([regularizer.characteristic_g(r, sigma, part, b) for r in grid])
    i = np.nonzero((values[:-1] < 0) & (values[1:] > 0))[0][-1]
    g = lambda r: regularizer.characteristic_g(r, sigma, part, b)
    return optimize.brentq(g, grid[i], grid[i + 1], xtol=1e-16, rtol=1e-14)


def test_estimate_finds_the_bisection_root():
    svd = diagonal_svd(TOY_SIGMA)
    part = partition_spectrum(TOY_SIGMA, 0.1)
    assert (part.n1, part.n2) == (2, 1)
    assert regularizer.root_condition(TOY_SIGMA, part, TOY_B)

    result = regularizer.estimate(svd, TOY_B)
    expected = _bisection_root(TOY_SIGMA, part, TOY_B, 10 * result.epsilon)
    assert result.branch is SolverBranch.NEWTON_ROOT
    assert result.rho == pytest.approx(expected, rel=1e-6)
    assert result.n1 == 2


@pytest.mark.parametrize("rho_init", [0.03, 0.1, 0.3])
def test_root_does_not_depend_on_the_start(rho_init):
    svd = diagonal_svd(TOY_SIGMA)
    reference = regularizer.estimate(svd, TOY_B).rho
    assert regularizer.estimate(svd, TOY_B, CopraConfig(rho_init=rho_init)).rho == pytest.approx(reference, rel=1e-6)


# ── estimator ────────────────────────────────────────────────────────────────

def test_zero_observation_gives_zero_estimate(shaw8):
    result = regularizer.estimate(compute_svd(shaw8.a), np.zeros(8))
    assert result.rho > 0
    np.testing.assert_array_equal(result.x_hat, np.zeros(8))
    assert result.delta is None


def test_identity_operator_falls_back_to_the_small_root():
    y = np.array([1.0, -2.0, 0.5, 3.0])
    result = regularizer.estimate(diagonal_svd(np.ones(4)), y)
    assert result.branch is SolverBranch.EPSILON_FALLBACK
    assert not result.condition_satisfied
    assert "no-trivial-values" in result.flags
    np.testing.assert_allclose(result.x_hat, y, rtol=1e-10)


def test_newton_result_solves_the_secular_equation():
    svd = diagonal_svd(TOY_SIGMA)
    result = regularizer.estimate(svd, TOY_B)
    residual = regularizer.secular_residual(svd, TOY_B, result.rho, result.delta)
    scale = result.rho ** 2 * float(result.x_hat @ result.x_hat)
    assert abs(residual) <= 1e-10 * scale
    assert result.g_residual <= 1e-6 * regularizer.characteristic_parts(result.rho, TOY_SIGMA, partition_spectrum(TOY_SIGMA, 0.1), TOY_B)[0]


def test_result_document_fields(shaw8):
    svd = compute_svd(shaw8.a)
    result = regularizer.estimate(svd, problems.observe(shaw8, 20.0, seed=1).y)
    data = result.to_dict()
    assert data["branch"] in {"newton-root", "epsilon-fallback"}
    assert len(data["x_hat"]) == 8
    assert data["rho"] == result.rho
    assert data["n1"] >= 1


def test_regularizer_beats_least_squares_on_shaw(shaw50, shaw50_svd):
    errors, ols_errors = [], []
    for seed in range(100):
        y = problems.observe(shaw50, 20.0, seed).y
        errors.append(problems.nmse(regularizer.estimate(shaw50_svd, y).x_hat, shaw50.x0))
        ols_errors.append(problems.nmse(ols_solve(shaw50_svd, y), shaw50.x0))
    errors, ols_errors = np.array(errors), np.array(ols_errors)
    assert np.mean(errors) < 1.0
    assert np.mean(errors < ols_errors) >= 0.99


# ── randomized and full-size checks (slow) ───────────────────────────────────

def _random_spectrum(rng):
    """Descending sigma whose squares span twelve decades, and a noisy projection."""
    n = int(rng.integers(3, 51))
    sigma = np.sort(10.0 ** rng.uniform(-6.0, 0.0, n))[::-1]
    sigma[0], sigma[-1] = 1.0, 1e-6
    noise = 10.0 ** rng.uniform(-6.0, -2.0)
    b = sigma * rng.standard_normal(n) + noise * rng.standard_normal(n)
    return sigma, b


@pytest.mark.slow
def test_newton_root_matches_a_fine_grid_oracle():
    rng = np.random.default_rng(2024)
    cfg = CopraConfig(xi=1e-12)
    checked = 0
    for _ in range(200):
        sigma, b = _random_spectrum(rng)
        part = partition_spectrum(sigma, cfg.c)
        if not regularizer.root_condition(sigma, part, b):
            continue
        result = regularizer.estimate(diagonal_svd(sigma), b, cfg)
        if result.branch is not SolverBranch.NEWTON_ROOT:
            continue
        bracket = regularizer.find_bracket(sigma, part, b, result.epsilon, 1e15 * sigma[0] ** 2, 10_000)
        assert bracket is not None
        lower, upper = bracket
        g = lambda r: regularizer.characteristic_g(r, sigma, part, b)
        expected = optimize.brentq(g, lower, upper, xtol=lower * 1e-14, rtol=1e-14)
        assert result.rho == pytest.approx(expected, rel=1e-6)
        checked += 1
    assert checked >= 50


def _g_matrix_parts(a, y, n1, rho):
    """``(G1, G2)`` from regularized solves and matrix traces, no spectral sums."""
    n = a.shape[1]
    beta = n / n1
    gram = a.T @ a
    x = np.linalg.solve(gram + rho * np.eye(n), a.T @ y)
    t1 = x @ x
    t0 = np.sum((y - a @ x) ** 2) / rho ** 2

    _, _, vt = np.linalg.svd(a)
    k = vt[:n1] @ gram @ vt[:n1].T
    shifted_inv = np.linalg.inv(k + rho * np.eye(n1))
    weight = (beta * k + rho * np.eye(n1)) @ shifted_inv @ shifted_inv
    w_pos = np.trace(weight) + (n - n1) / rho
    w_neg = np.trace(k @ weight)
    return t1 * w_pos, t0 * w_neg


@pytest.mark.slow
def test_sum_form_matches_the_matrix_trace_form():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(2, 7))
        q1, _ = linalg.qr(rng.standard_normal((n, n)))
        q2, _ = linalg.qr(rng.standard_normal((n, n)))
        sigma = np.sort(10.0 ** rng.uniform(-1.0, 0.5, n))[::-1]
        a = q1 @ np.diag(sigma) @ q2.T
        y = rng.standard_normal(n)
        rho = 10.0 ** rng.uniform(-3.0, 1.0)

        svd = compute_svd(a)
        part = partition_spectrum(svd.sigma, 0.1)
        b = regularizer.projected_observation(svd, y)
        g1, g2 = regularizer.characteristic_parts(rho, svd.sigma, part, b)
        m1, m2 = _g_matrix_parts(a, y, part.n1, rho)
        assert g1 == pytest.approx(m1, rel=1e-10)
        assert g2 == pytest.approx(m2, rel=1e-10)


@pytest.mark.slow
def test_full_rank_reduction():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = int(rng.integers(2, 7))
        sigma = np.sort(rng.uniform(0.8, 2.0, n))[::-1]
        b = rng.standard_normal(n)
        part = partition_spectrum(sigma, 0.1)
        assert part.n2 == 0
        rho = 10.0 ** rng.uniform(-3.0, 1.0)
        s2 = sigma ** 2
        t1 = np.sum(s2 * b ** 2 / (s2 + rho) ** 2)
        t0 = np.sum(b ** 2 / (s2 + rho) ** 2)
        reduced = t1 * np.sum(1.0 / (s2 + rho)) - t0 * np.sum(s2 / (s2 + rho))
        scale = t1 * np.sum(1.0 / (s2 + rho))
        assert regularizer.characteristic_g(rho, sigma, part, b) == pytest.approx(reduced, abs=1e-12 * scale)


def _kernel(name):
    if name == "tomo":
        return problems.tomo(7, seed=3)
    return problems.generate(name, 50)


@pytest.mark.slow
@pytest.mark.parametrize(
    "name", ["shaw", "baart", "foxgood", "deriv2", "heat", "wing", "spikes", "ilaplace", "tomo"]
)
def test_characteristic_function_changes_sign_at_most_twice(name):
    problem = _kernel(name)
    svd = compute_svd(problem.a)
    part = partition_spectrum(svd.sigma, 0.1)
    ceiling = regularizer.ROOT_SEARCH_CEILING * svd.sigma_max ** 2
    grid = np.geomspace(regularizer.default_floor(svd.sigma), ceiling, 100)
    for snr_db in (10.0, 20.0, 30.0, 40.0):
        for seed in range(100):
            b = regularizer.projected_observation(svd, problems.observe(problem, snr_db, seed).y)
            values = np.array([regularizer.characteristic_g(r, svd.sigma, part, b) for r in grid])
            signs = np.sign(values[values != 0])
            assert np.count_nonzero(signs[1:] != signs[:-1]) <= 2
            if regularizer.root_condition(svd.sigma, part, b):
                assert values[-1] > 0
