import json

import numpy as np
import pytest

from specshare.allocation import AllocationState, validate
from specshare.config import ScenarioConfig, config_from_dict
from specshare.env import ScheduleError, SpectrumSharingEnv, episode_summary
from specshare.metrics import RewardNorms, compute_step_metrics
from specshare.channel import compute_snapshot
from specshare.topology import build_topology


def _cfg(**overrides):
    cfg = ScenarioConfig()
    cfg.beams = 2
    cfg.haps_per_beam = 1
    cfg.regions_per_hap = 1
    cfg.uavs_per_region = 1
    cfg.users_per_region = 4
    cfg.num_subbands = 4
    cfg.fading_frozen = True
    cfg.steps_per_episode = 8
    cfg.decision_intervals = (4, 2, 1)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    cfg.validate()
    return cfg


def _bundle(env, rng, t):
    """Raw random action bundle honoring the decision schedule."""
    cfg = env.cfg
    actions = {
        "local": {
            "beta": (rng.random((cfg.num_transmitters, cfg.num_subbands)) < 0.7).astype(float),
            "alpha": rng.random((cfg.num_transmitters, cfg.num_subbands)),
            "dp": rng.uniform(-cfg.uav_step, cfg.uav_step, size=(cfg.num_transmitters, 2)),
        }
    }
    if env.global_due(t):
        actions["global"] = (rng.random((cfg.beams, cfg.num_subbands)) < 0.7).astype(float)
    if env.regional_due(t):
        m = cfg.nodes_per_region
        actions["regional"] = {
            r: (rng.random((m, cfg.num_subbands)) < 0.7).astype(float)
            for r in range(cfg.num_regions)
        }
    return actions


def test_reset_gives_zero_allocation_and_full_observation():
    cfg = _cfg()
    env = SpectrumSharingEnv(cfg)
    obs = env.reset(seed=0)
    assert env.state.t == 0
    assert env.state.alloc.global_alloc.sum() == 0
    n, b = cfg.num_subbands, cfg.beams
    m = cfg.nodes_per_region
    k = cfg.users_per_region
    assert obs["global"].shape == (n + 2 * b,)
    assert set(obs["regional"]) == set(range(cfg.num_haps))
    assert obs["regional"][0].shape == (n + 2 * cfg.regions_per_hap * m,)
    assert set(obs["local"]) == set(range(cfg.num_transmitters))
    assert obs["local"][0].shape == (2 * n + 3 * k + 2,)
    for vec in [obs["global"], obs["regional"][0], obs["local"][0]]:
        assert np.isfinite(vec).all()
        assert ((vec >= 0.0) & (vec <= 1.0)).all()


def test_batched_observations_match_single_row_path():
    # the step() observation dict is built region-blocked; observe() goes row
    # by row, and the two must agree bitwise
    cfg = _cfg()
    env = SpectrumSharingEnv(cfg)
    rng = np.random.default_rng(9)
    obs = env.reset(seed=3)
    for t in range(6):
        obs, *_ = env.step(_bundle(env, rng, t))
    assert np.array_equal(obs["global"], env.observe("global"))
    for h in range(cfg.num_haps):
        assert np.array_equal(obs["regional"][h], env.observe("regional", h))
    for row in range(cfg.num_transmitters):
        assert np.array_equal(obs["local"][row], env.observe("local", row))


def test_step_before_reset_raises():
    env = SpectrumSharingEnv(_cfg())
    with pytest.raises(RuntimeError):
        env.step({})


def test_schedule_gating():
    cfg = _cfg()
    env = SpectrumSharingEnv(cfg)
    env.reset(seed=0)
    rng = np.random.default_rng(0)

    # t=0: global and regional are both due; omitting either is an error
    full = _bundle(env, rng, 0)
    with pytest.raises(ScheduleError, match="global"):
        env.step({k: v for k, v in full.items() if k != "global"})
    with pytest.raises(ScheduleError, match="regional"):
        env.step({k: v for k, v in full.items() if k != "regional"})
    with pytest.raises(ScheduleError, match="local"):
        env.step({k: v for k, v in full.items() if k != "local"})
    env.step(full)

    # t=1: nothing but local is allowed
    stray = _bundle(env, rng, 1)
    stray["global"] = np.zeros((cfg.beams, cfg.num_subbands))
    with pytest.raises(ScheduleError, match="off-schedule"):
        env.step(stray)
    stray = _bundle(env, rng, 1)
    stray["regional"] = {r: np.zeros((cfg.nodes_per_region, cfg.num_subbands)) for r in range(cfg.num_regions)}
    with pytest.raises(ScheduleError, match="off-schedule"):
        env.step(stray)
    env.step(_bundle(env, rng, 1))

    # t=2: regional due again (interval 2), global not until t=4
    assert env.regional_due(2) and not env.global_due(2)


def test_missing_region_in_regional_action():
    cfg = _cfg()
    env = SpectrumSharingEnv(cfg)
    env.reset(seed=0)
    rng = np.random.default_rng(1)
    actions = _bundle(env, rng, 0)
    del actions["regional"][1]
    with pytest.raises(ScheduleError, match="regions"):
        env.step(actions)


def test_local_shape_error():
    cfg = _cfg()
    env = SpectrumSharingEnv(cfg)
    env.reset(seed=0)
    actions = _bundle(env, np.random.default_rng(2), 0)
    actions["local"]["alpha"] = actions["local"]["alpha"][:, :2]
    with pytest.raises(ValueError, match="shape"):
        env.step(actions)


def test_global_revocation_cascades_downward():
    cfg = _cfg()
    env = SpectrumSharingEnv(cfg)
    env.reset(seed=0)
    m = cfg.nodes_per_region
    n = cfg.num_subbands

    grant_all = {
        "global": np.array([[1, 1, 0, 0], [0, 0, 1, 1]], dtype=float),
        "regional": {r: np.eye(m, n) for r in range(cfg.num_regions)},
        "local": {
            "beta": np.ones((cfg.num_transmitters, n)),
            "alpha": np.full((cfg.num_transmitters, n), 0.2),
            "dp": np.zeros((cfg.num_transmitters, 2)),
        },
    }
    env.step(grant_all)
    assert env.state.alloc.regional[0, 0] == 1
    assert env.state.alloc.beta[0, 0] == 1

    # quiet steps until the next global slot
    for t in (1, 2, 3):
        bundle = {"local": grant_all["local"]}
        if env.regional_due(t):
            bundle["regional"] = {r: np.eye(m, n) for r in range(cfg.num_regions)}
        env.step(bundle)

    # t=4: beam 0 loses subband 0; the regional grant and beta must follow
    revoke = {
        "global": np.array([[0, 1, 0, 0], [0, 0, 1, 1]], dtype=float),
        "regional": {r: np.eye(m, n) for r in range(cfg.num_regions)},
        "local": grant_all["local"],
    }
    env.step(revoke)
    beam0_regions = [r for r in range(cfg.num_regions) if env.topology.beam_of_region(r) == 0]
    for region in beam0_regions:
        rows = slice(region * m, (region + 1) * m)
        assert env.state.alloc.regional[rows, 0].sum() == 0
        assert env.state.alloc.beta[rows, 0].sum() == 0


def test_global_conflicts_resolved_keep_lowest_beam():
    cfg = _cfg()
    env = SpectrumSharingEnv(cfg)
    env.reset(seed=0)
    actions = _bundle(env, np.random.default_rng(3), 0)
    actions["global"] = np.ones((cfg.beams, cfg.num_subbands))
    env.step(actions)
    g = env.state.alloc.global_alloc
    assert (g.sum(axis=0) == 1).all()
    assert (g[0] == 1).all()  # lowest-index beam wins every contested subband


def test_every_step_leaves_a_feasible_allocation():
    cfg = _cfg(steps_per_episode=24)
    env = SpectrumSharingEnv(cfg)
    env.reset(seed=0)
    rng = np.random.default_rng(4)
    for t in range(cfg.steps_per_episode):
        env.step(_bundle(env, rng, t))
        assert validate(env.state.alloc, cfg) is None


def test_episode_truncates_at_horizon():
    cfg = _cfg()
    env = SpectrumSharingEnv(cfg)
    env.reset(seed=0)
    rng = np.random.default_rng(5)
    truncated = False
    for t in range(cfg.steps_per_episode):
        _, rewards, terminated, truncated, metrics = env.step(_bundle(env, rng, t))
        assert terminated is False
        assert set(rewards) == {"r_s", "r_h", "r_l"}
        assert np.isfinite(metrics.r_s)
    assert truncated is True
    with pytest.raises(RuntimeError, match="truncated"):
        env.step(_bundle(env, rng, 0))


def test_uav_moves_by_dp_and_respects_wall():
    cfg = _cfg(region_size=(100.0, 100.0), uav_step=30.0)
    env = SpectrumSharingEnv(cfg)
    env.reset(seed=0)
    uav_row = 2  # region-major layout: tbs, tbs, uav
    start_x = env.state.tx_positions[uav_row, 0]
    rng = np.random.default_rng(6)
    actions = _bundle(env, rng, 0)
    actions["local"]["dp"][:] = 0.0
    actions["local"]["dp"][uav_row] = (30.0, 0.0)
    env.step(actions)
    assert env.state.tx_positions[uav_row, 0] == pytest.approx(start_x + 30.0)

    # region 0 spans x in [0, 100]; one more step crosses the boundary and
    # the uav penalty turns on for that region
    actions = _bundle(env, rng, 1)
    actions["local"]["dp"][:] = 0.0
    actions["local"]["dp"][uav_row] = (30.0, 0.0)
    _, _, _, _, metrics = env.step(actions)
    assert env.state.tx_positions[uav_row, 0] > 100.0
    assert metrics.region_uav_penalty[0] == 1.0
    assert metrics.region_uav_penalty[1] == 0.0

    # the wall caps the excursion at one region-extent beyond the rectangle
    for t in range(2, 7):
        actions = _bundle(env, rng, t)
        actions["local"]["dp"][:] = 0.0
        actions["local"]["dp"][uav_row] = (30.0, 0.0)
        env.step(actions)
    assert env.state.tx_positions[uav_row, 0] <= 200.0


def test_two_envs_same_seed_are_bit_identical():
    cfg = _cfg(fading_frozen=False, steps_per_episode=8)
    env_a = SpectrumSharingEnv(cfg)
    env_b = SpectrumSharingEnv(config_from_dict(cfg.to_dict()))
    env_a.reset(seed=3)
    env_b.reset(seed=3)
    rng_a = np.random.default_rng(7)
    rng_b = np.random.default_rng(7)
    for t in range(cfg.steps_per_episode):
        _, _, _, _, ma = env_a.step(_bundle(env_a, rng_a, t))
        _, _, _, _, mb = env_b.step(_bundle(env_b, rng_b, t))
        assert ma.r_s == mb.r_s
        assert np.array_equal(ma.user_rates, mb.user_rates)
        assert np.array_equal(env_a.state.snapshot.gains, env_b.state.snapshot.gains)


def test_episode_seeds_change_the_channel_but_not_the_topology():
    cfg = _cfg(fading_frozen=False)
    env = SpectrumSharingEnv(cfg)
    env.reset(seed=0)
    g0 = env.state.snapshot.gains.copy()
    env.reset(seed=1)
    g1 = env.state.snapshot.gains.copy()
    assert not np.array_equal(g0, g1)
    assert np.array_equal(env.topology.user_positions, env.topology.user_positions)


def test_episode_summary_keys():
    cfg = _cfg()
    env = SpectrumSharingEnv(cfg)
    env.reset(seed=0)
    rng = np.random.default_rng(8)
    collected = []
    for t in range(cfg.steps_per_episode):
        collected.append(env.step(_bundle(env, rng, t))[4])
    summary = episode_summary(collected)
    assert set(summary) == {"cumulative_reward", "r_avg", "eta", "fairness"}
    assert summary["cumulative_reward"] == pytest.approx(sum(m.r_s for m in collected))
    assert summary["eta"] == pytest.approx(np.mean([m.eta for m in collected]))


def test_trace_file_structure_and_replayability(tmp_path):
    cfg = _cfg(steps_per_episode=8)
    trace = tmp_path / "episode.jsonl"
    env = SpectrumSharingEnv(cfg, trace_path=trace)
    env.reset(seed=0)
    rng = np.random.default_rng(9)
    for t in range(cfg.steps_per_episode):
        env.step(_bundle(env, rng, t))
    env.close()

    lines = [json.loads(line) for line in trace.read_text().splitlines()]
    header, steps = lines[0], lines[1:]
    assert header["type"] == "header"
    assert header["seed"] == 0
    assert len(steps) == cfg.steps_per_episode

    ds, dh, _ = cfg.decision_intervals
    n_global = sum(1 for s in steps if s["decisions"]["global"])
    n_regional = sum(len(s["decisions"]["regional"]) for s in steps)
    assert n_global == cfg.steps_per_episode // ds
    assert n_regional == (cfg.steps_per_episode // dh) * cfg.num_haps

    # recompute one step's metrics from the traced state alone
    traced_cfg = config_from_dict(header["config"])
    topo = build_topology(traced_cfg, np.random.default_rng(traced_cfg.seed))
    norms = RewardNorms.from_config(traced_cfg)
    step = steps[3]
    alloc = AllocationState.from_dict(step["allocation"])
    pos = np.asarray(step["tx_positions"])
    gains = np.asarray(step["gains"])
    snap = compute_snapshot(topo, alloc, pos, gains=gains)
    metrics = compute_step_metrics(topo, alloc, snap, pos, norms)
    for key, value in metrics.to_dict().items():
        traced = step["metrics"][key]
        assert np.allclose(traced, value, rtol=1e-12, atol=1e-12), key
