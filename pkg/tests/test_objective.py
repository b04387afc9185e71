import numpy as np
import pytest

from equicast import objective, predictor
from equicast.agents import AgentSpec, DataCenterContext, dc_act, dc_act_jacobian, dc_cost_grad_action, regret
from equicast.objective import ChainSample


def test_equitable_loss_reference_values():
    assert objective.equitable_loss([0.2, 0.4], 0.0) == pytest.approx(0.6)
    assert objective.equitable_loss([0.2, 0.4], 1.0) == pytest.approx(0.2)
    assert objective.equitable_loss([0.0, 0.0], 3.0) == 0.0


def test_equitable_loss_validation():
    with pytest.raises(ValueError):
        objective.equitable_loss([0.2, -0.1], 1.0)
    with pytest.raises(ValueError):
        objective.equitable_loss([0.2], -0.5)
    with pytest.raises(ValueError):
        objective.equitable_loss([], 1.0)
    # tiny negatives are float noise, clamped
    assert objective.equitable_loss([-1e-12, 0.3], 1.0) == pytest.approx(0.09)


def test_equitable_loss_permutation_and_monotonicity():
    rng = np.random.default_rng(0)
    r = rng.uniform(0, 1, size=6)
    assert objective.equitable_loss(r, 1.7) == pytest.approx(
        objective.equitable_loss(rng.permutation(r), 1.7)
    )
    bumped = r.copy()
    bumped[2] += 0.1
    assert objective.equitable_loss(bumped, 1.7) > objective.equitable_loss(r, 1.7)


def test_equitable_loss_power_monotonicity_in_q():
    rng = np.random.default_rng(1)
    small = rng.uniform(0.05, 0.9, size=5)  # all < 1: loss nonincreasing in q
    large = 1.0 + rng.uniform(0.0, 2.0, size=5)  # all >= 1: nondecreasing
    qs = [0.0, 0.5, 1.0, 2.0, 4.0]
    small_vals = [objective.equitable_loss(small, q) for q in qs]
    large_vals = [objective.equitable_loss(large, q) for q in qs]
    assert all(a >= b - 1e-12 for a, b in zip(small_vals, small_vals[1:]))
    assert all(a <= b + 1e-12 for a, b in zip(large_vals, large_vals[1:]))


def test_combined_loss_blend():
    loss = objective.combined_loss([0.2, 0.4], [0.15, 0.25], q=0.0, beta=0.5)
    assert loss.equitable == pytest.approx(0.6)
    assert loss.mse == pytest.approx(0.4)
    assert loss.combined == pytest.approx(0.5)
    assert objective.combined_loss([0.2], [0.4], 0.0, 1.0).combined == pytest.approx(0.4)
    assert objective.combined_loss([0.2], [0.4], 0.0, 0.0).combined == pytest.approx(0.2)


def test_combined_loss_rejects_bad_beta():
    with pytest.raises(ValueError):
        objective.combined_loss([0.1], [0.1], 0.0, 1.2)


# --- chain gradient


def build_dc_chain_batch(params, specs, Xs, Ys, t_mean, t_scale):
    samples = []
    for agent, X, Y in zip(specs, Xs, Ys):
        preds = predictor.forward_batch(params, X)
        for i in range(X.shape[0]):
            ctx = agent.context
            c_hat = t_mean + t_scale * float(preds[i, 0])
            c_true = float(Y[i, 0])
            p_hat = dc_act(ctx, c_hat)
            samples.append(
                ChainSample(
                    agent=agent.agent_id,
                    x=X[i],
                    y_hat=preds[i],
                    y=(Y[i] - t_mean) / t_scale,
                    regret=regret(agent, c_hat, c_true).value,
                    dcost_daction=dc_cost_grad_action(ctx, p_hat, c_true),
                    daction_dyhat=np.array([dc_act_jacobian(ctx, c_hat) * t_scale]),
                )
            )
    return samples


def pipeline_loss(params, specs, Xs, Ys, t_mean, t_scale, q, beta):
    mean_regrets, mse_sum = [], 0.0
    for agent, X, Y in zip(specs, Xs, Ys):
        preds = predictor.forward_batch(params, X)
        values = [
            regret(agent, t_mean + t_scale * float(preds[i, 0]), float(Y[i, 0])).value
            for i in range(X.shape[0])
        ]
        mean_regrets.append(np.mean(values))
        mse_sum += float(np.mean(((preds - (Y - t_mean) / t_scale)) ** 2))
    return (1 - beta) * objective.equitable_loss(mean_regrets, q) + beta * mse_sum


def test_chain_grad_matches_finite_differences():
    rng = np.random.default_rng(2)
    params = predictor.init_params([3, 4, 1], seed=2)
    specs = [
        AgentSpec(0, "datacenter", DataCenterContext(1.5, 2.0)),
        AgentSpec(1, "datacenter", DataCenterContext(3.0, 0.7)),
    ]
    Xs = [rng.uniform(-1, 1, size=(5, 3)) for _ in specs]
    Ys = [rng.uniform(0.9, 2.2, size=(5, 1)) for _ in specs]
    t_mean, t_scale = 1.5, 0.4
    h = 1e-5
    for q, beta in ((0.0, 0.0), (1.0, 0.5), (2.0, 1.0)):
        samples = build_dc_chain_batch(params, specs, Xs, Ys, t_mean, t_scale)
        grad = objective.chain_grad(params, samples, q, beta)
        fd = np.zeros_like(grad)
        for j in range(params.values.size):
            v = params.values.copy()
            v[j] += h
            up = pipeline_loss(params.with_values(v), specs, Xs, Ys, t_mean, t_scale, q, beta)
            v[j] -= 2 * h
            dn = pipeline_loss(params.with_values(v), specs, Xs, Ys, t_mean, t_scale, q, beta)
            fd[j] = (up - dn) / (2 * h)
        scale = max(np.max(np.abs(fd)), 1e-8)
        assert np.max(np.abs(grad - fd)) / scale < 1e-3


def test_chain_grad_beta_one_is_pure_mse_gradient():
    rng = np.random.default_rng(3)
    params = predictor.init_params([3, 4, 1], seed=3)
    spec = AgentSpec(0, "datacenter", DataCenterContext(1.5, 2.0))
    X = rng.uniform(-1, 1, size=(6, 3))
    Y = rng.uniform(0.9, 2.2, size=(6, 1))
    samples = build_dc_chain_batch(params, [spec], [X], [Y], 1.5, 0.4)
    grad = objective.chain_grad(params, samples, q=2.0, beta=1.0)
    preds = predictor.forward_batch(params, X)
    y_norm = (Y - 1.5) / 0.4
    direct = predictor.vjp_batch(params, X, (2.0 / 6) * (preds - y_norm))
    assert np.max(np.abs(grad - direct)) < 1e-6


def test_chain_grad_zero_at_perfection():
    params = predictor.init_params([2, 1], seed=0)
    samples = [
        ChainSample(agent=0, x=np.zeros(2), y_hat=np.zeros(1), y=np.zeros(1),
                    regret=0.0, dcost_daction=0.0, daction_dyhat=np.zeros(1))
    ]
    assert np.all(objective.chain_grad(params, samples, 1.0, 0.5) == 0.0)


# --- policy-gradient batch estimator


def test_pg_batch_grad_one_parameter_example():
    # score 0.5, batch loss 2, q=0 -> gradient 1.0
    scores = np.array([[0.5]])
    g = objective.pg_batch_grad(scores, [[2.0]], q=0.0)
    assert g == pytest.approx([1.0])


def test_pg_batch_grad_zero_loss():
    scores = np.array([[0.3, -0.2]])
    assert np.all(objective.pg_batch_grad(scores, [[0.0, 0.0]], q=1.0) == 0.0)


def test_pg_batch_grad_validation():
    with pytest.raises(ValueError):
        objective.pg_batch_grad(np.zeros((0, 2)), [[0.1]], q=0.0)
    with pytest.raises(ValueError):
        objective.pg_batch_grad(np.zeros((1, 2)), [], q=0.0)
    with pytest.raises(ValueError):
        objective.pg_batch_grad(np.zeros((1, 2)), [[0.1]], q=0.0, beta=0.5)


def test_pg_batch_grad_monte_carlo_matches_analytic():
    # quadratic toy: yhat ~ N(theta, std^2), C = (yhat-1)^2
    # d/dtheta E[C] = 2(theta-1)
    std = 0.3
    n = 200_000
    for theta in (0.0, 0.5, 2.0):
        rng = np.random.default_rng(42 + int(10 * theta))
        draws = theta + std * rng.standard_normal(n)
        grads = np.empty(n)
        for i in range(n):
            score = np.array([[(draws[i] - theta) / std**2]])
            grads[i] = objective.pg_batch_grad(score, [[(draws[i] - 1.0) ** 2]], q=0.0)[0]
        se = grads.std() / np.sqrt(n)
        assert abs(grads.mean() - 2 * (theta - 1.0)) < 5 * se


def test_pg_batch_grad_beta_one_drops_regret_term():
    scores = np.array([[0.4, -1.0]])
    a = objective.pg_batch_grad(scores, [[5.0]], q=2.0, beta=1.0, sq_errors_by_agent=[[0.3]])
    b = objective.pg_batch_grad(scores, [[99.0]], q=2.0, beta=1.0, sq_errors_by_agent=[[0.3]])
    assert np.array_equal(a, b)
    assert a == pytest.approx([0.4 * 0.3, -1.0 * 0.3])


def test_pg_batch_grad_baseline_keeps_mean():
    std, theta, n = 0.3, 0.5, 200_000
    rng = np.random.default_rng(11)
    draws = theta + std * rng.standard_normal(n)
    scores = (draws - theta) / std**2
    losses = (draws - 1.0) ** 2
    plain = scores * losses
    with_base = scores * (losses - 0.7)
    assert abs(plain.mean() - with_base.mean()) < 5 * np.sqrt(
        plain.var() / n + with_base.var() / n
    )
    assert with_base.std() < plain.std()


def test_pg_matches_chain_on_differentiable_toy():
    # frozen params: averaged pg estimates align with the exact gradient
    rng = np.random.default_rng(9)
    params = predictor.init_params([2, 3, 1], seed=9)
    spec = AgentSpec(0, "datacenter", DataCenterContext(1.2, 2.0))
    X = rng.uniform(-1, 1, size=(4, 2))
    Y = rng.uniform(1.0, 2.0, size=(4, 1))
    t_mean, t_scale = 1.5, 0.3
    q = 1.0
    samples = build_dc_chain_batch(params, [spec], [X], [Y], t_mean, t_scale)
    exact = objective.chain_grad(params, samples, q, 0.0)

    std = 0.05
    preds = predictor.forward_batch(params, X)
    acc = np.zeros_like(exact)
    n_rounds = 10_000
    for _ in range(n_rounds):
        eps = rng.standard_normal(preds.shape)
        sampled = preds + std * eps
        score_sum = predictor.vjp_batch(params, X, eps / std)
        values = [
            regret(spec, t_mean + t_scale * float(sampled[i, 0]), float(Y[i, 0])).value
            for i in range(4)
        ]
        loss = objective.equitable_loss([np.mean(values)], q)
        acc += objective.pg_batch_grad(score_sum[None, :], [values], q)
    acc /= n_rounds
    cosine = float(acc @ exact / (np.linalg.norm(acc) * np.linalg.norm(exact)))
    assert cosine > 0.5


# --- dual norm


def test_dual_norm_reference_values():
    assert objective.dual_norm_value([3.0, 4.0], 1.0) == pytest.approx(5.0)
    assert objective.dual_norm_value([3.0, 4.0], 0.0) == pytest.approx(7.0)
    assert objective.dual_norm_value([0.0, 0.0], 2.0) == 0.0


def test_dual_norm_matches_holder_maximizer():
    rng = np.random.default_rng(10)
    for _ in range(100):
        m = int(rng.integers(2, 13))
        r = rng.uniform(0, 1, size=m)
        for q in (0.5, 2.0, 9.0):
            closed = objective.equitable_loss(r, q) ** (1 / (q + 1))
            witness = objective.holder_max_value(r, q)
            assert abs(closed - witness) / max(closed, 1e-300) < 1e-10


def test_dual_norm_power_identity():
    rng = np.random.default_rng(12)
    r = rng.uniform(0, 1, size=7)
    for q in (0.0, 0.5, 2.0):
        assert objective.dual_norm_value(r, q) ** (q + 1) == pytest.approx(
            objective.equitable_loss(r, q), rel=1e-12
        )


def test_holder_maximizer_is_feasible():
    # the witness vector satisfies ||v||_p <= 1 by construction; check value <= closed form
    rng = np.random.default_rng(13)
    r = rng.uniform(0, 1, size=9)
    for q in (0.5, 2.0, 9.0):
        closed = objective.equitable_loss(r, q) ** (1 / (q + 1))
        assert objective.holder_max_value(r, q) <= closed + 1e-12
