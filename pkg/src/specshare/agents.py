"""Allocation agents: random, exhaustive search, flat PPO, per-region PPO,
and the hierarchical three-tier PPO, plus the shared train/evaluate loops.

Action factorization (shared by all learned agents):

* global: one categorical slot per subband with arity beams+1 (0 = leave
  idle, k = grant to beam k-1);
* regional: one slot per (region, subband) with arity nodes_per_region+1
  (0 = unused, k = node k-1 of that region);
* local, per node: one binary slot per subband (access mask), one
  box-bounded continuous slot per subband (power fraction), and a 2D
  movement slot bounded by the per-step UAV displacement limit.

The hierarchical agent evaluates the local policy once per region (its
nodes batched through the shared net) and the regional policy once per HAP
at that tier's decision steps; the per-region baseline runs one separate
PPO per region every step; the flat baseline runs one network over the
concatenated observation every step.
"""

from __future__ import annotations

import time

import numpy as np

from .allocation import AllocationState, EnumerationCapError
from .channel import associate_users, co_channel_interference, dbm_to_watts, link_gains
from .config import ScenarioConfig
from .env import SpectrumSharingEnv, episode_summary
from .metrics import jain_fairness
from .ppo import (
    ActionSchema,
    Adam,
    PolicyNet,
    Trajectory,
    forward,
    load_checkpoint,
    mode_action,
    sample_action,
    save_checkpoint,
)
from .topology import build_topology

AGENT_KINDS = ("random", "exhaustive", "sadrl", "madrl", "hdrl")


# -- observation/action sizing and codecs -------------------------------------


def obs_dims(cfg: ScenarioConfig) -> dict:
    n, k = cfg.num_subbands, cfg.users_per_region
    m = cfg.nodes_per_region
    r = cfg.regions_per_hap
    return {
        "global": n + 2 * cfg.beams,
        "regional": n + 2 * r * m,
        "local": n + 2 * k + 2 + k + n,
    }


def slots_to_global(slots: np.ndarray, beams: int) -> np.ndarray:
    """Per-subband beam choices (0 = idle) to a binary grant matrix."""
    slots = np.asarray(slots, dtype=int)
    g = np.zeros((beams, slots.size), dtype=np.int8)
    idx = np.nonzero(slots > 0)[0]
    g[slots[idx] - 1, idx] = 1
    return g


def slots_to_region(slots: np.ndarray, nodes: int) -> np.ndarray:
    """Per-subband node choices (0 = unused) to a region's binary matrix."""
    slots = np.asarray(slots, dtype=int)
    mat = np.zeros((nodes, slots.size), dtype=np.int8)
    idx = np.nonzero(slots > 0)[0]
    mat[slots[idx] - 1, idx] = 1
    return mat


def _local_schema(cfg: ScenarioConfig) -> ActionSchema:
    n = cfg.num_subbands
    s = cfg.uav_step
    return ActionSchema(
        cat_arities=(2,) * n,
        cont_bounds=((0.0, 1.0),) * n + ((-s, s), (-s, s)),
    )


# -- transition bookkeeping -----------------------------------------------------


class _Pending:
    """A decision awaiting its interval's rewards before entering a trajectory."""

    __slots__ = ("obs", "cat", "cont", "logp", "value", "rewards")

    def __init__(self, obs, cat, cont, logp, value):
        self.obs = obs
        self.cat = cat
        self.cont = cont
        self.logp = logp
        self.value = value
        self.rewards: list[float] = []


class _TierStore:
    """Per-entity pending decisions + episode trajectories for one policy."""

    def __init__(self):
        self.pending: dict = {}
        self.trajs: dict = {}

    def start(self, entity, obs, cat, cont, logp, value, done_flag=False) -> None:
        self.flush(entity, done=done_flag)
        self.pending[entity] = _Pending(obs, cat, cont, logp, value)

    def reward(self, entity, r: float) -> None:
        if entity in self.pending:
            self.pending[entity].rewards.append(float(r))

    def flush(self, entity, done: bool) -> None:
        p = self.pending.pop(entity, None)
        if p is None:
            return
        traj = self.trajs.setdefault(entity, Trajectory())
        traj.add(p.obs, p.cat, p.cont, p.logp, p.value, float(np.mean(p.rewards)), done)

    def flush_all(self, done: bool) -> None:
        for entity in list(self.pending):
            self.flush(entity, done)

    def drain(self, gamma: float, lam: float) -> list[dict]:
        out = [t.finalize(gamma, lam) for t in self.trajs.values() if len(t)]
        self.trajs.clear()
        return out


def _concat_batches(parts: list[dict]) -> dict:
    return {k: np.concatenate([p[k] for p in parts], axis=0) for k in parts[0]}


# -- agents ---------------------------------------------------------------------


class RandomAgent:
    """Uniform draws over the raw action boxes; the env clamp keeps them feasible."""

    kind = "random"
    trainable = False

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng((cfg.seed, 101))

    def begin_episode(self, env: SpectrumSharingEnv) -> None:
        pass

    def act(self, obs: dict, t: int, explore: bool = True) -> dict:
        cfg = self.cfg
        n, tcount = cfg.num_subbands, cfg.num_transmitters
        m = cfg.nodes_per_region
        bundle: dict = {}
        if t % cfg.decision_intervals[0] == 0:
            bundle["global"] = slots_to_global(self.rng.integers(0, cfg.beams + 1, n), cfg.beams)
        if t % cfg.decision_intervals[1] == 0:
            bundle["regional"] = {
                region: slots_to_region(self.rng.integers(0, m + 1, n), m)
                for region in range(cfg.num_regions)
            }
        bundle["local"] = {
            "beta": self.rng.integers(0, 2, (tcount, n)),
            "alpha": self.rng.uniform(0.0, 1.0, (tcount, n)),
            "dp": self.rng.uniform(-cfg.uav_step, cfg.uav_step, (tcount, 2)),
        }
        return bundle

    def record(self, rewards: dict, done: bool) -> None:
        pass

    def end_episode(self) -> None:
        pass


def count_joint_candidates(cfg: ScenarioConfig) -> int:
    """Exact size of the joint global x regional discrete search space."""
    m = cfg.nodes_per_region
    regions_per_beam = cfg.haps_per_beam * cfg.regions_per_hap
    per_subband = 1 + cfg.beams * (m + 1) ** regions_per_beam
    return per_subband**cfg.num_subbands


def exhaustive_solve(cfg: ScenarioConfig, cap: int | None = None) -> dict:
    """Enumerate every joint (global, regional) allocation under frozen fading.

    Local actions are fixed to the heuristic used by the exhaustive agent:
    full access on granted subbands, equal power split, no movement.  The
    best candidate maximizes network spectral efficiency, with network
    fairness breaking ties.  Requires fading_frozen.
    """
    import itertools

    if not cfg.fading_frozen:
        raise ValueError("exhaustive_solve requires fading_frozen=true")
    cap = cfg.exhaustive_cap if cap is None else cap
    total = count_joint_candidates(cfg)
    if total > cap:
        raise EnumerationCapError(
            f"search space too large: {total} joint allocations exceed cap {cap}"
        )

    topo = build_topology(cfg, np.random.default_rng(cfg.seed))
    home = np.stack([nd.position for nd in topo.transmitters()])
    gains = link_gains(topo, home, rng=None, frozen=True)
    power = dbm_to_watts([nd.tx_power_dbm for nd in topo.transmitters()])
    noise = cfg.noise_power_w
    n, m = cfg.num_subbands, cfg.nodes_per_region
    n_regions = cfg.num_regions
    per_band = cfg.subband_bandwidth
    region_beam = [topo.beam_of_region(r) for r in range(n_regions)]

    best = None
    for combo in itertools.product(range(cfg.beams + 1), repeat=n):
        combo_arr = np.asarray(combo)
        granted_cols = [np.nonzero(combo_arr == beam + 1)[0] for beam in range(cfg.beams)]
        region_options = []
        for region in range(n_regions):
            cols = granted_cols[region_beam[region]]
            region_options.append(
                [
                    (cols, np.asarray(assign))
                    for assign in itertools.product(range(m + 1), repeat=len(cols))
                ]
            )
        for joint in itertools.product(*region_options):
            regional = np.zeros((cfg.num_transmitters, n), dtype=np.int8)
            for region, (cols, assign) in enumerate(joint):
                chosen = assign > 0
                if chosen.any():
                    rows = region * m + (assign[chosen] - 1)
                    regional[rows, cols[chosen]] = 1
            counts = regional.sum(axis=1)
            alpha = np.divide(
                regional, counts[:, None], out=np.zeros(regional.shape), where=counts[:, None] > 0
            )
            alloc = AllocationState(
                global_alloc=slots_to_global(combo_arr, cfg.beams),
                regional=regional,
                beta=regional.copy(),
                alpha=alpha,
                dp=np.zeros((cfg.num_transmitters, 2)),
            )
            assoc = associate_users(topo, gains, regional)
            interference = co_channel_interference(
                topo, gains, alloc, power, assoc, cfg.interference_scope
            )
            rates = np.zeros(cfg.num_users)
            served = np.nonzero(assoc >= 0)[0]
            if served.size:
                rows = assoc[served]
                active = regional[rows].astype(float)
                signal = gains[rows, served][:, None] * alpha[rows] * power[rows, None] * active
                snr = signal / (interference[served] + noise)
                rates[served] = per_band * np.log2(1.0 + snr).sum(axis=1)
            eta = rates.sum() / cfg.total_bandwidth
            fair = jain_fairness(rates)
            if best is None or eta > best["eta"] or (eta == best["eta"] and fair > best["fairness"]):
                best = {
                    "eta": float(eta),
                    "fairness": float(fair),
                    "global": alloc.global_alloc.copy(),
                    "regional": {
                        region: regional[region * m : (region + 1) * m].copy()
                        for region in range(n_regions)
                    },
                }
    best["candidates"] = total
    return best


class ExhaustiveAgent:
    """Replays the exhaustive-search optimum; heuristic local actions."""

    kind = "exhaustive"
    trainable = False

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.solution: dict | None = None

    def begin_episode(self, env: SpectrumSharingEnv) -> None:
        if not self.cfg.fading_frozen:
            raise ValueError("exhaustive agent requires fading_frozen=true")
        self.solution = exhaustive_solve(self.cfg)

    def act(self, obs: dict, t: int, explore: bool = True) -> dict:
        cfg = self.cfg
        sol = self.solution
        if sol is None:
            raise RuntimeError("begin_episode must run before act")
        bundle: dict = {}
        if t % cfg.decision_intervals[0] == 0:
            bundle["global"] = sol["global"]
        if t % cfg.decision_intervals[1] == 0:
            bundle["regional"] = sol["regional"]
        granted = np.concatenate(
            [sol["regional"][region] for region in range(cfg.num_regions)], axis=0
        )
        counts = granted.sum(axis=1)
        alpha = np.divide(
            granted, counts[:, None], out=np.zeros(granted.shape, dtype=float),
            where=counts[:, None] > 0,
        )
        bundle["local"] = {
            "beta": granted,
            "alpha": alpha,
            "dp": np.zeros((cfg.num_transmitters, 2)),
        }
        return bundle

    def record(self, rewards: dict, done: bool) -> None:
        pass

    def end_episode(self) -> None:
        pass


class _PpoAgentBase:
    """Shared machinery: nets, stores, episodic finishing, updates, checkpoints."""

    trainable = True

    def __init__(self, cfg: ScenarioConfig, rng_tag: int):
        self.cfg = cfg
        self.ppo = cfg.ppo
        self.rng = np.random.default_rng((cfg.seed, rng_tag))
        self.updates = 0
        self.episodes_trained = 0

    def _new_net(self, input_dim: int, schema: ActionSchema) -> PolicyNet:
        return PolicyNet(input_dim, schema, rng=self.rng)

    def net_dict(self) -> dict[str, PolicyNet]:
        raise NotImplementedError

    def _buffer_len(self, parts: list[dict]) -> int:
        return sum(p["obs"].shape[0] for p in parts)

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"episodes_trained": self.episodes_trained, "updates": self.updates}
        meta.update(extra_meta or {})
        save_checkpoint(
            path, self.kind, self.cfg.config_hash(), self.net_dict(), self.ppo, self.rng, meta
        )

    def load(self, path) -> None:
        blob = load_checkpoint(path)
        if blob["kind"] != self.kind:
            raise ValueError(f"checkpoint kind {blob['kind']!r} does not match agent {self.kind!r}")
        if blob["config_hash"] != self.cfg.config_hash():
            raise ValueError(
                "checkpoint config hash mismatch: refusing to load weights trained on a different scenario"
            )
        mine = self.net_dict()
        for name, net in blob["nets"].items():
            mine[name].params = net.params
        self.rng = blob["rng"]
        self.episodes_trained = int(blob["meta"].get("episodes_trained", 0))


class HdrlAgent(_PpoAgentBase):
    """Three shared policies gated by the decision intervals."""

    kind = "hdrl"

    def __init__(self, cfg: ScenarioConfig):
        super().__init__(cfg, rng_tag=301)
        dims = obs_dims(cfg)
        n, m = cfg.num_subbands, cfg.nodes_per_region
        r = cfg.regions_per_hap
        self.net_g = self._new_net(dims["global"], ActionSchema(cat_arities=(cfg.beams + 1,) * n))
        self.net_r = self._new_net(dims["regional"], ActionSchema(cat_arities=(m + 1,) * (r * n)))
        self.net_l = self._new_net(dims["local"], _local_schema(cfg))
        self.opt = {
            "global": Adam(self.net_g.params, self.ppo.learning_rate),
            "regional": Adam(self.net_r.params, self.ppo.learning_rate),
            "local": Adam(self.net_l.params, self.ppo.learning_rate),
        }
        self.store = {"global": _TierStore(), "regional": _TierStore(), "local": _TierStore()}
        self.buffer: dict[str, list[dict]] = {"global": [], "regional": [], "local": []}
        # tiers gather transitions at very different rates (local: T per step,
        # global: 1 per ds steps); each updates once its own buffer holds a
        # workable batch so slow tiers see more than a couple of samples
        self.update_threshold = {
            "local": self.ppo.batch_size,
            "regional": max(8, self.ppo.batch_size // 10),
            "global": max(8, self.ppo.batch_size // 50),
        }
        m = cfg.nodes_per_region
        self._region_rows = [list(range(r * m, (r + 1) * m)) for r in range(cfg.num_regions)]
        self._hap_regions = [
            list(range(h * cfg.regions_per_hap, (h + 1) * cfg.regions_per_hap))
            for h in range(cfg.num_haps)
        ]

    def net_dict(self) -> dict[str, PolicyNet]:
        return {"global": self.net_g, "regional": self.net_r, "local": self.net_l}

    def begin_episode(self, env: SpectrumSharingEnv) -> None:
        for store in self.store.values():
            store.pending.clear()

    def act(self, obs: dict, t: int, explore: bool = True) -> dict:
        cfg = self.cfg
        n, m = cfg.num_subbands, cfg.nodes_per_region
        bundle: dict = {}

        if t % cfg.decision_intervals[0] == 0:
            params = forward(self.net_g, obs["global"][None])
            if explore:
                action, logp = sample_action(params, self.rng)
                self.store["global"].start(
                    "sat", obs["global"], action.cat[0], action.cont[0],
                    logp[0], params.value[0],
                )
            else:
                action = mode_action(params)
            bundle["global"] = slots_to_global(action.cat[0], cfg.beams)

        if t % cfg.decision_intervals[1] == 0:
            regional: dict = {}
            for hap in range(cfg.num_haps):
                params = forward(self.net_r, obs["regional"][hap][None])
                if explore:
                    action, logp = sample_action(params, self.rng)
                    self.store["regional"].start(
                        hap, obs["regional"][hap], action.cat[0], action.cont[0],
                        logp[0], params.value[0],
                    )
                else:
                    action = mode_action(params)
                slots = action.cat[0].reshape(cfg.regions_per_hap, n)
                for j, region in enumerate(self._hap_regions[hap]):
                    regional[region] = slots_to_region(slots[j], m)
            bundle["regional"] = regional

        # shared local policy, evaluated region by region with the region's
        # nodes batched through one forward pass
        tcount = cfg.num_transmitters
        beta = np.empty((tcount, n), dtype=np.int8)
        alpha = np.empty((tcount, n))
        dp = np.empty((tcount, 2))
        local_obs = obs["local"]
        for region, rows in enumerate(self._region_rows):
            X = np.stack([local_obs[row] for row in rows])
            params = forward(self.net_l, X)
            if explore:
                action, logp = sample_action(params, self.rng)
                for i, row in enumerate(rows):
                    self.store["local"].start(
                        row, X[i], action.cat[i], action.cont[i], logp[i], params.value[i]
                    )
            else:
                action = mode_action(params)
            lo, hi = rows[0], rows[-1] + 1
            beta[lo:hi] = action.cat
            alpha[lo:hi] = action.cont[:, :n]
            dp[lo:hi] = action.cont[:, n:]
        bundle["local"] = {"beta": beta, "alpha": alpha, "dp": dp}
        return bundle

    def record(self, rewards: dict, done: bool) -> None:
        cfg = self.cfg
        self.store["global"].reward("sat", rewards["r_s"])
        for hap in range(cfg.num_haps):
            self.store["regional"].reward(hap, rewards["r_h"][hap])
        m = cfg.nodes_per_region
        for row in range(cfg.num_transmitters):
            self.store["local"].reward(row, rewards["r_l"][row // m])
        if done:
            for store in self.store.values():
                store.flush_all(done=True)

    def end_episode(self) -> None:
        from .ppo import ppo_update

        ppo_cfg = self.ppo
        nets = {"global": self.net_g, "regional": self.net_r, "local": self.net_l}
        self.episodes_trained += 1
        for tier, store in self.store.items():
            self.buffer[tier].extend(store.drain(ppo_cfg.discount, ppo_cfg.gae_lambda))
            if self._buffer_len(self.buffer[tier]) >= self.update_threshold[tier]:
                ppo_update(
                    nets[tier],
                    _concat_batches(self.buffer[tier]),
                    ppo_cfg,
                    self.rng,
                    optimizer=self.opt[tier],
                )
                self.buffer[tier] = []
                self.updates += 1


class SadrlAgent(_PpoAgentBase):
    """One flat policy over the concatenated observation; full action every step."""

    kind = "sadrl"

    def __init__(self, cfg: ScenarioConfig):
        super().__init__(cfg, rng_tag=302)
        dims = obs_dims(cfg)
        n, m = cfg.num_subbands, cfg.nodes_per_region
        tcount = cfg.num_transmitters
        s = cfg.uav_step
        self.input_dim = (
            dims["global"] + cfg.num_haps * dims["regional"] + tcount * dims["local"]
        )
        schema = ActionSchema(
            cat_arities=(cfg.beams + 1,) * n
            + (m + 1,) * (cfg.num_regions * n)
            + (2,) * (tcount * n),
            cont_bounds=((0.0, 1.0),) * (tcount * n) + ((-s, s), (-s, s)) * tcount,
        )
        self.net = self._new_net(self.input_dim, schema)
        self.opt = Adam(self.net.params, self.ppo.learning_rate)
        self.store = _TierStore()
        self.buffer: list[dict] = []
        # fixed layout: global, HAPs in order, transmitters in order
        self._flat = np.empty(self.input_dim)
        self._slices = []
        offset = dims["global"]
        self._slices.append(("global", None, slice(0, offset)))
        for h in range(cfg.num_haps):
            self._slices.append(("regional", h, slice(offset, offset + dims["regional"])))
            offset += dims["regional"]
        for row in range(tcount):
            self._slices.append(("local", row, slice(offset, offset + dims["local"])))
            offset += dims["local"]

    def net_dict(self) -> dict[str, PolicyNet]:
        return {"policy": self.net}

    def flat_obs(self, obs: dict) -> np.ndarray:
        buf = self._flat
        for tier, key, sl in self._slices:
            buf[sl] = obs[tier] if key is None else obs[tier][key]
        return buf

    def begin_episode(self, env: SpectrumSharingEnv) -> None:
        self.store.pending.clear()

    def act(self, obs: dict, t: int, explore: bool = True) -> dict:
        cfg = self.cfg
        n, m = cfg.num_subbands, cfg.nodes_per_region
        tcount = cfg.num_transmitters
        X = self.flat_obs(obs)
        params = forward(self.net, X[None])
        if explore:
            action, logp = sample_action(params, self.rng)
            # the flat buffer is reused next step; the stored obs must not alias it
            self.store.start("all", X.copy(), action.cat[0], action.cont[0], logp[0], params.value[0])
        else:
            action = mode_action(params)
        cat = action.cat[0]
        cont = action.cont[0]

        bundle: dict = {}
        if t % cfg.decision_intervals[0] == 0:
            bundle["global"] = slots_to_global(cat[:n], cfg.beams)
        if t % cfg.decision_intervals[1] == 0:
            offset = n
            bundle["regional"] = {
                region: slots_to_region(cat[offset + region * n : offset + (region + 1) * n], m)
                for region in range(cfg.num_regions)
            }
        beta_start = n + cfg.num_regions * n
        beta = cat[beta_start : beta_start + tcount * n].reshape(tcount, n)
        alpha = cont[: tcount * n].reshape(tcount, n)
        dp = cont[tcount * n :].reshape(tcount, 2)
        bundle["local"] = {"beta": beta, "alpha": alpha, "dp": dp}
        return bundle

    def record(self, rewards: dict, done: bool) -> None:
        self.store.reward("all", rewards["r_s"])
        if done:
            self.store.flush_all(done=True)
        else:
            self.store.flush("all", done=False)

    def end_episode(self) -> None:
        self.buffer.extend(self.store.drain(self.ppo.discount, self.ppo.gae_lambda))
        self.episodes_trained += 1
        if self._buffer_len(self.buffer) >= self.ppo.batch_size:
            from .ppo import ppo_update

            ppo_update(self.net, _concat_batches(self.buffer), self.ppo, self.rng, optimizer=self.opt)
            self.buffer = []
            self.updates += 1


class MadrlAgent(_PpoAgentBase):
    """Independent per-region PPO agents; the global grant is a fixed round-robin."""

    kind = "madrl"

    def __init__(self, cfg: ScenarioConfig):
        super().__init__(cfg, rng_tag=303)
        dims = obs_dims(cfg)
        n, m = cfg.num_subbands, cfg.nodes_per_region
        s = cfg.uav_step
        self.input_dim = n + 2 * m + m * dims["local"]
        schema = ActionSchema(
            cat_arities=(m + 1,) * n + (2,) * (m * n),
            cont_bounds=((0.0, 1.0),) * (m * n) + ((-s, s), (-s, s)) * m,
        )
        self.nets = [self._new_net(self.input_dim, schema) for _ in range(cfg.num_regions)]
        self.opts = [Adam(net.params, self.ppo.learning_rate) for net in self.nets]
        self.stores = [_TierStore() for _ in range(cfg.num_regions)]
        self.buffers: list[list[dict]] = [[] for _ in range(cfg.num_regions)]
        # all subbands granted, beams interleaved
        g = np.zeros((cfg.beams, n), dtype=np.int8)
        g[np.arange(n) % cfg.beams, np.arange(n)] = 1
        self.fixed_global = g

    def net_dict(self) -> dict[str, PolicyNet]:
        return {f"region_{i}": net for i, net in enumerate(self.nets)}

    def _region_obs(self, obs: dict, region: int) -> np.ndarray:
        cfg = self.cfg
        n, m = cfg.num_subbands, cfg.nodes_per_region
        hap = region // cfg.regions_per_hap
        j = region % cfg.regions_per_hap
        hap_vec = obs["regional"][hap]
        mask = hap_vec[:n]
        load = hap_vec[n + j * m : n + (j + 1) * m]
        offset = n + cfg.regions_per_hap * m
        gain = hap_vec[offset + j * m : offset + (j + 1) * m]
        rows = range(region * m, (region + 1) * m)
        return np.concatenate([mask, load, gain, *[obs["local"][row] for row in rows]])

    def begin_episode(self, env: SpectrumSharingEnv) -> None:
        for store in self.stores:
            store.pending.clear()

    def act(self, obs: dict, t: int, explore: bool = True) -> dict:
        cfg = self.cfg
        n, m = cfg.num_subbands, cfg.nodes_per_region
        tcount = cfg.num_transmitters
        bundle: dict = {}
        if t % cfg.decision_intervals[0] == 0:
            bundle["global"] = self.fixed_global
        regional_due = t % cfg.decision_intervals[1] == 0
        if regional_due:
            bundle["regional"] = {}
        beta = np.empty((tcount, n), dtype=np.int8)
        alpha = np.empty((tcount, n))
        dp = np.empty((tcount, 2))
        for region in range(cfg.num_regions):
            X = self._region_obs(obs, region)
            params = forward(self.nets[region], X[None])
            if explore:
                action, logp = sample_action(params, self.rng)
                self.stores[region].start(
                    region, X, action.cat[0], action.cont[0], logp[0], params.value[0]
                )
            else:
                action = mode_action(params)
            cat = action.cat[0]
            cont = action.cont[0]
            # no timescale gating inside the agent: the full per-region action
            # (assignment included) is produced every step; the schedule only
            # controls what the env consumes
            assignment = slots_to_region(cat[:n], m)
            if regional_due:
                bundle["regional"][region] = assignment
            rows = slice(region * m, (region + 1) * m)
            beta[rows] = cat[n:].reshape(m, n)
            alpha[rows] = cont[: m * n].reshape(m, n)
            dp[rows] = cont[m * n :].reshape(m, 2)
        bundle["local"] = {"beta": beta, "alpha": alpha, "dp": dp}
        return bundle

    def record(self, rewards: dict, done: bool) -> None:
        for region, store in enumerate(self.stores):
            store.reward(region, rewards["r_l"][region])
            if done:
                store.flush_all(done=True)
            else:
                store.flush(region, done=False)

    def end_episode(self) -> None:
        from .ppo import ppo_update

        self.episodes_trained += 1
        for region, store in enumerate(self.stores):
            self.buffers[region].extend(store.drain(self.ppo.discount, self.ppo.gae_lambda))
            if self._buffer_len(self.buffers[region]) >= self.ppo.batch_size:
                ppo_update(
                    self.nets[region],
                    _concat_batches(self.buffers[region]),
                    self.ppo,
                    self.rng,
                    optimizer=self.opts[region],
                )
                self.buffers[region] = []
                self.updates += 1


def make_agent(kind: str, cfg: ScenarioConfig):
    if kind == "random":
        return RandomAgent(cfg)
    if kind == "exhaustive":
        return ExhaustiveAgent(cfg)
    if kind == "sadrl":
        return SadrlAgent(cfg)
    if kind == "madrl":
        return MadrlAgent(cfg)
    if kind == "hdrl":
        return HdrlAgent(cfg)
    raise ValueError(f"unknown agent kind {kind!r}; choose from {AGENT_KINDS}")


# -- training and evaluation loops ------------------------------------------------


def train(agent, env: SpectrumSharingEnv, episodes: int | None = None, on_episode=None) -> list[dict]:
    """Run training episodes; one log row per episode.

    Deterministic for a fixed config seed: episode channel streams derive
    from the seed, and all agent randomness comes from seeded generators.
    """
    if not agent.trainable:
        raise ValueError(f"agent kind {agent.kind!r} is not trainable")
    cfg = env.cfg
    episodes = cfg.episodes if episodes is None else episodes
    rows = []
    for episode in range(episodes):
        obs = env.reset()
        agent.begin_episode(env)
        step_metrics = []
        for t in range(cfg.steps_per_episode):
            bundle = agent.act(obs, t, explore=True)
            obs, rewards, _, truncated, metrics = env.step(bundle)
            agent.record(rewards, done=truncated)
            step_metrics.append(metrics)
        agent.end_episode()
        summary = episode_summary(step_metrics)
        row = {"episode": episode, **summary}
        rows.append(row)
        if on_episode is not None:
            on_episode(row)
    return rows


def evaluate(
    agent,
    env: SpectrumSharingEnv,
    episodes: int = 1,
    eval_seed_base: int = 100_000,
) -> dict:
    """Greedy-policy evaluation with per-episode decision timing.

    Channel streams are reseeded per episode from eval_seed_base so repeat
    runs see identical conditions.  Wall-clock timing covers only action
    computation (including any per-episode solver in begin_episode), never
    environment physics.
    """
    cfg = env.cfg
    per_episode = []
    step_rows = []
    throughput = []
    for episode in range(episodes):
        obs = env.reset(seed=eval_seed_base + episode)
        t0 = time.perf_counter()
        agent.begin_episode(env)
        decision_time = time.perf_counter() - t0
        step_metrics = []
        series = []
        for t in range(cfg.steps_per_episode):
            t0 = time.perf_counter()
            bundle = agent.act(obs, t, explore=False)
            decision_time += time.perf_counter() - t0
            obs, rewards, _, truncated, metrics = env.step(bundle)
            step_metrics.append(metrics)
            series.append(metrics.r_avg)
            step_rows.append(
                {
                    "step": t,
                    "throughput_bps": metrics.r_avg,
                    "eta": metrics.eta,
                    "fairness": metrics.fairness,
                    "episode": episode,
                }
            )
        summary = episode_summary(step_metrics)
        summary["decision_time_s"] = decision_time
        summary["spectrum_utilization"] = float(
            np.mean([m.spectrum_utilization for m in step_metrics])
        )
        per_episode.append(summary)
        throughput.append(series)
    out = {
        "episodes": per_episode,
        "eta_mean": float(np.mean([e["eta"] for e in per_episode])),
        "throughput_mean": float(np.mean([e["r_avg"] for e in per_episode])),
        "fairness_mean": float(np.mean([e["fairness"] for e in per_episode])),
        "cumulative_reward_mean": float(np.mean([e["cumulative_reward"] for e in per_episode])),
        "decision_time_s": [e["decision_time_s"] for e in per_episode],
        "spectrum_utilization_mean": float(
            np.mean([e["spectrum_utilization"] for e in per_episode])
        ),
        "per_step_throughput": throughput,
        "steps": step_rows,
    }
    return out
