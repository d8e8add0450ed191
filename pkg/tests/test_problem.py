import numpy as np
import pytest

from ftcgt.problem import (LeastSquaresProblem, ProblemError, box_muller, dumps_problem, generate,
                           loads_problem)


def test_generate_well_formed_and_deterministic():
    p = generate(16, 20, 30, 0.1, 4)
    R = np.einsum("knm,knp->mp", p.features, p.features) / (16 * 30)
    assert np.linalg.eigvalsh(R)[0] > 0
    np.testing.assert_array_equal(p.labels, np.einsum("knm,m->kn", p.features, p.w_true) + p.noise)
    q = generate(16, 20, 30, 0.1, 4)
    for a in ("features", "labels", "w_true", "noise"):
        assert np.array_equal(getattr(p, a), getattr(q, a))


def test_generate_single_sample_noiseless():
    p = generate(1, 1, 1, 0.0, 3)
    assert p.labels[0, 0] == p.features[0, 0, 0] * p.w_true[0]


@pytest.mark.parametrize("args", [(0, 2, 2, 0.1, 0), (2, 2, 2, -1.0, 0), (2, 2.5, 2, 0.1, 0)])
def test_generate_rejects_bad_inputs(args):
    with pytest.raises(ProblemError):
        generate(*args)


def test_box_muller_moments():
    z = box_muller(np.random.Generator(np.random.PCG64(0)), (200_000,))
    assert abs(z.mean()) < 0.01 and abs(z.var() - 1) < 0.01


def test_full_gradient_hand_case():
    p = LeastSquaresProblem(np.array([[[1.0, 0.0]]]), np.array([[0.0]]), np.zeros(2), np.zeros((1, 1)))
    np.testing.assert_array_equal(p.full_gradient(0, [1.0, 0.0]), [1.0, 0.0])


def test_full_gradient_zero_at_local_optimum(problem8):
    _, local, _ = problem8.optima_and_constants()
    for k in range(problem8.K):
        assert np.max(np.abs(problem8.full_gradient(k, local[k]))) <= 1e-10


def test_full_gradients_match_finite_differences(problem8, rng):
    h = 1e-5
    for _ in range(50):
        k = int(rng.integers(problem8.K))
        w = rng.standard_normal(problem8.M) * 2
        fd = np.array([(problem8.local_cost(k, w + h * e) - problem8.local_cost(k, w - h * e)) / (2 * h)
                       for e in np.eye(problem8.M)])
        g = problem8.full_gradient(k, w)
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)


def test_stacked_gradients_match_per_agent(problem8, rng):
    W = rng.standard_normal((8, 20))
    idx = rng.integers(30, size=8)
    G = problem8.full_gradients(W)
    S = problem8.sample_gradients(W, idx)
    for k in range(8):
        np.testing.assert_allclose(G[k], problem8.full_gradient(k, W[k]), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(S[k], problem8.sample_gradient(k, W[k], idx[k]), rtol=1e-13, atol=1e-14)


def test_single_sample_stochastic_equals_full():
    p = generate(4, 3, 1, 0.1, 0)
    w = np.ones(3)
    np.testing.assert_allclose(p.stochastic_gradient(1, w, np.random.default_rng(0)), p.full_gradient(1, w),
                               rtol=1e-14)


def test_stochastic_gradient_monte_carlo_unbiased(problem8):
    w = np.linspace(-1, 1, 20)
    rng = np.random.default_rng(7)
    draws = np.array([problem8.stochastic_gradient(2, w, rng) for _ in range(100_000)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - problem8.full_gradient(2, w)) <= 3 * se + 1e-12)


def test_noise_variance_matches_enumeration(problem8):
    _, local, consts = problem8.optima_and_constants()
    k = 3
    per = np.array([problem8.sample_gradient(k, local[k], n) for n in range(problem8.N)])
    g = problem8.full_gradient(k, local[k])
    direct = np.mean(np.sum(per ** 2, axis=1)) - g @ g
    assert consts.sigma_k_sq[k] == pytest.approx(direct, rel=1e-12)
    rng = np.random.default_rng(1)
    draws = np.array([problem8.stochastic_gradient(k, local[k], rng) for _ in range(40_000)])
    emp = np.mean(np.sum((draws - g) ** 2, axis=1))
    assert emp == pytest.approx(direct, rel=0.05)


def test_noiseless_optimum_recovers_truth():
    p = generate(4, 5, 10, 0.0, 2)
    w_opt, local, c = p.optima_and_constants()
    np.testing.assert_allclose(w_opt, p.w_true, atol=1e-8)
    assert c.zeta_sq <= 1e-12


def test_single_agent_constants():
    p = generate(1, 5, 10, 0.1, 2)
    w_opt, local, c = p.optima_and_constants()
    np.testing.assert_allclose(local[0], w_opt, atol=1e-12)
    assert c.zeta_sq <= 1e-20


def test_global_normal_equation_residual():
    p = generate(16, 20, 30, 0.1, 0)
    w_opt = p.optima_and_constants()[0]
    assert np.linalg.norm(p.full_gradients(np.tile(w_opt, (16, 1))).mean(axis=0)) <= 1e-10


def test_constants_are_sane(problem8):
    c = problem8.optima_and_constants()[2]
    R = problem8.hessians()
    assert c.nu == pytest.approx(np.linalg.eigvalsh(R.mean(axis=0))[0])
    assert c.delta == pytest.approx(max(np.linalg.eigvalsh(Rk)[-1] for Rk in R))
    assert 0 < c.nu <= c.delta
    assert c.sigma_sq == pytest.approx(sum(c.sigma_k_sq)) and c.beta_sq == pytest.approx(sum(c.beta_k_sq))


def test_singular_aggregate_hessian_rejected():
    H = np.zeros((2, 3, 2))
    H[:, :, 0] = 1.0
    with pytest.raises(ProblemError, match="singular"):
        LeastSquaresProblem(H, np.ones((2, 3)), np.zeros(2), np.zeros((2, 3))).optima_and_constants()


def test_text_roundtrip():
    p = generate(3, 4, 5, 0.1, 9)
    q = loads_problem(dumps_problem(p))
    for a in ("features", "labels", "w_true", "noise"):
        assert np.array_equal(getattr(p, a), getattr(q, a))
    assert q.seed == 9 and q.noise_variance == 0.1
