import numpy as np
import pytest

from equicast import harness
from equicast.errors import ConfigError
from equicast.harness import ExperimentConfig, build_pool, config_from_dict, config_hash, run_experiment
from equicast.training import TrainConfig


def small_config(**kw):
    base = dict(application="datacenter", n_agents=3, heterogeneity="different",
                lambda_scheme="grid", length=80, lookback=6, hidden=4,
                train=TrainConfig(mode="plain", lr=0.05, epochs=2, batch_size=16))
    base.update(kw)
    return ExperimentConfig(**base)


def test_pool_shares_one_target_transform():
    pool = build_pool(small_config(n_agents=4), seed=0)
    means = {s.target_mean for s in pool.splits}
    scales = {s.target_scale for s in pool.splits}
    assert len(means) == 1 and len(scales) == 1


def test_pool_charging_shapes():
    cfg = small_config(application="charging", n_agents=3, horizon=5, length=90)
    pool = build_pool(cfg, seed=1)
    assert pool.arch == [6, 4, 5]
    for split in pool.splits:
        assert split.train_y.shape[1] == 5
        assert split.train_outcome.shape[1] == 5


def test_mixed_pool_structure():
    cfg = small_config(application="mixed", n_agents=7, horizon=5, length=90)
    pool = build_pool(cfg, seed=0)
    families = [a.family for a in pool.agents]
    assert families.count("datacenter") >= 1
    assert families.count("charging") >= 2
    # device chargers: zero mixing weights present in the pool
    charging = [a for a in pool.agents if a.family == "charging"]
    assert any(a.context.water_weight == 0.0 and a.context.price_weight == 0.0 for a in charging)
    assert any(a.context.water_weight > 0.0 for a in charging)
    # data-center agents consume the mean of the forecast window
    dc_splits = [s for a, s in zip(pool.agents, pool.splits) if a.family == "datacenter"]
    assert all(s.predict_adapter == "window_mean" for s in dc_splits)
    assert all(s.train_outcome.shape[1] == 1 for s in dc_splits)
    assert pool.arch[-1] == 5


def test_run_experiment_deterministic():
    cfg = small_config()
    a, _, _ = run_experiment(cfg)
    b, _, _ = run_experiment(cfg)
    assert np.array_equal(a.per_agent_regret, b.per_agent_regret)
    assert a.as_dict() == b.as_dict()


def test_config_hash_tracks_content():
    cfg = small_config()
    assert config_hash(cfg) == config_hash(small_config())
    assert config_hash(cfg) != config_hash(small_config(seed=1))


def test_config_from_dict_round_trip():
    cfg = small_config(repeats=2, sweep_q_plus_1=(1.0, 2.0))
    rebuilt = config_from_dict(cfg.as_dict())
    assert rebuilt == cfg


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        ExperimentConfig(application="nuclear")
    with pytest.raises(ConfigError):
        ExperimentConfig(sweep_beta=(1.5,))
    with pytest.raises(ConfigError):
        ExperimentConfig(sweep_q_plus_1=(0.5,))
    with pytest.raises(ConfigError):
        config_from_dict({"n_agents": 0})


def test_sweep_counts_and_order():
    cfg = small_config(repeats=2, sweep_q_plus_1=(1.0, 2.0), sweep_beta=(0.0,))
    rows = harness.run_sweep(cfg)
    assert len(rows) == 4  # 2 q values x 1 beta x 2 repeats
    keys = [(r.q_plus_1, r.beta, r.seed) for r in rows]
    assert keys == [(1.0, 0.0, 0), (1.0, 0.0, 1), (2.0, 0.0, 0), (2.0, 0.0, 1)]
    assert all(r.status == "ok" for r in rows)


def test_generate_then_load_pool_matches_memory(tmp_path):
    cfg = small_config(n_agents=2)
    harness.generate_files(cfg, tmp_path)
    loaded = harness.load_pool(tmp_path, cfg, seed=cfg.seed)
    mem = build_pool(cfg, seed=cfg.seed)
    assert loaded.arch == mem.arch
    for a, b in zip(loaded.splits, mem.splits):
        assert np.allclose(a.train_x, b.train_x, atol=1e-12)
        assert np.allclose(a.train_y_raw, b.train_y_raw, atol=1e-12)
        assert np.allclose(a.train_ctx, b.train_ctx, atol=1e-12)
    assert [a.context for a in loaded.agents] == [a.context for a in mem.agents]
