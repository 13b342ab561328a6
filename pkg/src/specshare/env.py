"""Multi-timescale spectrum sharing environment.

One step equals one local decision interval.  Global (satellite) actions
are accepted only every ``ds`` steps and regional (HAP) actions every
``dh`` steps; between decision points the last allocation holds.  Local
actions arrive every step.  Actions are applied top-down: the global grant
masks regional matrices, regional grants mask local access, and local
actions are clamped onto the feasible set rather than rejected.  UAVs move
by their (clamped) ``dp`` each step and are penalized, not blocked, for
leaving their region; only a hard wall at three region sizes clips them.

Episodes never terminate early; they truncate after ``steps_per_episode``
steps.  Supplying a tier's action off schedule, or omitting it when due,
raises ScheduleError.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .allocation import AllocationState, clamp_local, validate
from .channel import ChannelSnapshot, compute_snapshot, gain_to_unit
from .config import ScenarioConfig
from .metrics import RewardNorms, StepMetrics, compute_step_metrics
from .topology import TIER_UAV, Topology, build_topology

# dBm range used to squash interference into [0, 1] observation features;
# zero interference maps to the floor.
INTERFERENCE_DBM_RANGE = (-150.0, -40.0)


class ScheduleError(ValueError):
    """An action arrived off its tier's decision schedule, or was missing."""


def interference_to_unit(interference_w) -> np.ndarray:
    lo, hi = INTERFERENCE_DBM_RANGE
    iw = np.asarray(interference_w, dtype=float)
    dbm = np.full(iw.shape, lo)
    pos = iw > 0
    dbm[pos] = 10.0 * np.log10(iw[pos]) + 30.0
    return np.clip((dbm - lo) / (hi - lo), 0.0, 1.0)


@dataclass
class EnvState:
    t: int
    alloc: AllocationState
    tx_positions: np.ndarray  # (num_transmitters, 3), current
    snapshot: ChannelSnapshot
    metrics: StepMetrics | None
    episode_seed: int


def episode_summary(step_metrics: list[StepMetrics]) -> dict:
    """Aggregate one episode: cumulative top-level reward plus time means."""
    if not step_metrics:
        raise ValueError("episode_summary needs at least one step")
    return {
        "cumulative_reward": float(sum(m.r_s for m in step_metrics)),
        "r_avg": float(np.mean([m.r_avg for m in step_metrics])),
        "eta": float(np.mean([m.eta for m in step_metrics])),
        "fairness": float(np.mean([m.fairness for m in step_metrics])),
    }


class SpectrumSharingEnv:
    """Environment over a fixed scene; the scene itself derives from cfg.seed."""

    def __init__(self, cfg: ScenarioConfig, trace_path: str | Path | None = None):
        cfg.validate()
        self.cfg = cfg
        self.norms = RewardNorms.from_config(cfg)
        self.topology: Topology = build_topology(cfg, np.random.default_rng(cfg.seed))
        topo = self.topology
        self._home = np.stack([n.position for n in topo.transmitters()])
        self._uav_rows = np.array(
            [i for i, n in enumerate(topo.transmitters()) if n.tier == TIER_UAV], dtype=int
        )
        self._row_region = np.array([n.region for n in topo.transmitters()], dtype=int)
        # hard wall: region rectangle inflated to 3x its size, same center
        w, h = cfg.region_size
        b = topo.region_bounds
        self._wall = np.stack([b[:, 0] - w, b[:, 1] - h, b[:, 2] + w, b[:, 3] + h], axis=1)
        # static observation pieces
        self._beam_regions = [
            [r for r in range(cfg.num_regions) if topo.beam_of_region(r) == beam]
            for beam in range(cfg.beams)
        ]
        self._beam_user_share = np.array(
            [len(rs) * cfg.users_per_region / cfg.num_users for rs in self._beam_regions]
        )
        self._user_xy_unit = []
        for region in range(cfg.num_regions):
            x0, y0, x1, y1 = topo.region_bounds[region]
            pos = topo.user_positions[topo.region_user_slice(region)]
            unit = np.stack([(pos[:, 0] - x0) / (x1 - x0), (pos[:, 1] - y0) / (y1 - y0)], axis=1)
            self._user_xy_unit.append(unit.reshape(-1))

        self.state: EnvState | None = None
        self._auto_seed = cfg.seed
        self._trace_path = Path(trace_path) if trace_path else None
        self._trace_fh = None

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int | None = None) -> dict:
        """Start an episode; channel randomness derives from the given seed."""
        cfg = self.cfg
        if seed is None:
            seed = self._auto_seed
            self._auto_seed += 1
        self._chan_rng = np.random.default_rng((cfg.seed, 0x5EED, seed))
        alloc = AllocationState.zeros(cfg)
        tx_positions = self._home.copy()
        snapshot = compute_snapshot(
            self.topology, alloc, tx_positions, rng=self._chan_rng, frozen=cfg.fading_frozen
        )
        self.state = EnvState(
            t=0,
            alloc=alloc,
            tx_positions=tx_positions,
            snapshot=snapshot,
            metrics=None,
            episode_seed=seed,
        )
        if self._trace_path:
            if self._trace_fh is None:
                self._trace_fh = open(self._trace_path, "w")
            self._trace_fh.write(
                json.dumps({"type": "header", "config": cfg.to_dict(), "seed": seed}) + "\n"
            )
        return self._observe_all()

    def close(self) -> None:
        if self._trace_fh is not None:
            self._trace_fh.close()
            self._trace_fh = None

    # -- scheduling ----------------------------------------------------------

    def global_due(self, t: int) -> bool:
        return t % self.cfg.decision_intervals[0] == 0

    def regional_due(self, t: int) -> bool:
        return t % self.cfg.decision_intervals[1] == 0

    # -- stepping -------------------------------------------------------------

    def step(self, actions: dict):
        """Apply one action bundle; returns (obs, rewards, terminated, truncated, metrics).

        ``actions`` holds "global" (beams x N binary matrix, only at global
        decision steps), "regional" (region id -> nodes x N binary matrix,
        only at regional decision steps, all regions at once), and "local"
        ({"beta": (T, N), "alpha": (T, N), "dp": (T, 2)}) every step.
        """
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        cfg = self.cfg
        state = self.state
        t = state.t
        if t >= cfg.steps_per_episode:
            raise RuntimeError("episode already truncated; call reset()")

        g_action = actions.get("global")
        r_action = actions.get("regional")
        l_action = actions.get("local")

        if self.global_due(t):
            if g_action is None:
                raise ScheduleError(f"missing required action: global at t={t}")
            self._apply_global(g_action)
        elif g_action is not None:
            raise ScheduleError(f"off-schedule action: global at t={t}")

        if self.regional_due(t):
            if not r_action:
                raise ScheduleError(f"missing required action: regional at t={t}")
            self._apply_regional(r_action)
        elif r_action:
            raise ScheduleError(f"off-schedule action: regional at t={t}")

        if l_action is None:
            raise ScheduleError(f"missing required action: local at t={t}")
        self._apply_local(l_action)

        self._move_uavs()

        state.snapshot = compute_snapshot(
            self.topology, state.alloc, state.tx_positions, rng=self._chan_rng,
            frozen=cfg.fading_frozen,
        )
        state.metrics = compute_step_metrics(
            self.topology, state.alloc, state.snapshot, state.tx_positions, self.norms
        )

        violation = validate(state.alloc, cfg)
        if violation is not None:
            raise RuntimeError(f"internal allocation violation after step: {violation}")

        decisions = {
            "global": self.global_due(t),
            "regional": list(range(cfg.num_haps)) if self.regional_due(t) else [],
            "local": cfg.num_transmitters,
        }
        if self._trace_fh is not None:
            self._write_trace(t, decisions, state)

        state.t = t + 1
        truncated = state.t >= cfg.steps_per_episode
        rewards = {
            "r_s": state.metrics.r_s,
            "r_h": state.metrics.r_h.copy(),
            "r_l": state.metrics.r_l.copy(),
        }
        return self._observe_all(), rewards, False, truncated, state.metrics

    def _apply_global(self, matrix) -> None:
        cfg = self.cfg
        g = (np.asarray(matrix) > 0.5).astype(np.int8)
        if g.shape != (cfg.beams, cfg.num_subbands):
            raise ValueError(f"global action must be {(cfg.beams, cfg.num_subbands)}, got {g.shape}")
        # at most one beam per subband: keep the lowest-index claimant
        first = np.argmax(g, axis=0)
        cleaned = np.zeros_like(g)
        cols = np.nonzero(g.any(axis=0))[0]
        cleaned[first[cols], cols] = 1
        alloc = self.state.alloc
        alloc.global_alloc = cleaned
        # cascade: regional grants and local masks shrink to the new grant
        beam_rows = cleaned[self._beam_of_row()]
        alloc.regional &= beam_rows
        alloc.beta &= alloc.regional

    def _beam_of_row(self) -> np.ndarray:
        haps = self._row_region // self.cfg.regions_per_hap
        return haps // self.cfg.haps_per_beam

    def _apply_regional(self, per_region: dict) -> None:
        cfg = self.cfg
        alloc = self.state.alloc
        missing = set(range(cfg.num_regions)) - set(per_region)
        if missing:
            raise ScheduleError(f"missing required action: regional for regions {sorted(missing)}")
        m = cfg.nodes_per_region
        for region in range(cfg.num_regions):
            mat = (np.asarray(per_region[region]) > 0.5).astype(np.int8)
            if mat.shape != (m, cfg.num_subbands):
                raise ValueError(
                    f"regional action for region {region} must be {(m, cfg.num_subbands)}, got {mat.shape}"
                )
            # one node per subband inside the region
            first = np.argmax(mat, axis=0)
            cleaned = np.zeros_like(mat)
            cols = np.nonzero(mat.any(axis=0))[0]
            cleaned[first[cols], cols] = 1
            beam = self.topology.beam_of_region(region)
            cleaned &= alloc.global_alloc[beam]
            alloc.regional[region * m : (region + 1) * m] = cleaned
        alloc.beta &= alloc.regional

    def _apply_local(self, local: dict) -> None:
        cfg = self.cfg
        alloc = self.state.alloc
        beta = np.asarray(local["beta"])
        alpha = np.asarray(local["alpha"])
        dp = np.asarray(local["dp"])
        shape = (cfg.num_transmitters, cfg.num_subbands)
        if beta.shape != shape or alpha.shape != shape or dp.shape != (cfg.num_transmitters, 2):
            raise ValueError("local action arrays have wrong shape")
        is_uav = np.zeros(cfg.num_transmitters, dtype=bool)
        is_uav[self._uav_rows] = True
        for row in range(cfg.num_transmitters):
            act = clamp_local(
                beta[row], alpha[row], dp[row], alloc.regional[row], cfg.uav_step, is_uav[row]
            )
            alloc.beta[row] = act.beta
            alloc.alpha[row] = act.alpha
            alloc.dp[row] = act.dp

    def _move_uavs(self) -> None:
        state = self.state
        rows = self._uav_rows
        if rows.size == 0:
            return
        state.tx_positions[rows, :2] += state.alloc.dp[rows]
        wall = self._wall[self._row_region[rows]]
        state.tx_positions[rows, 0] = np.clip(state.tx_positions[rows, 0], wall[:, 0], wall[:, 2])
        state.tx_positions[rows, 1] = np.clip(state.tx_positions[rows, 1], wall[:, 1], wall[:, 3])

    # -- observations ----------------------------------------------------------

    def observe(self, tier: str, entity: int = 0) -> np.ndarray:
        """Observation vector for one decision entity; all entries in [0, 1]."""
        if self.state is None:
            raise RuntimeError("call reset() before observe()")
        if tier == "global":
            return self._observe_global()
        if tier == "regional":
            return self._observe_regional(entity)
        if tier == "local":
            return self._observe_local(entity)
        raise ValueError(f"unknown tier {tier!r}")

    def _region_gain_row_means(self) -> np.ndarray:
        """Mean gain of each transmitter over its own region's users (memoized per snapshot)."""
        snap = self.state.snapshot
        if getattr(self, "_row_means_for", None) is snap:
            return self._row_means
        topo = self.topology
        gains = snap.gains
        out = np.zeros(self.cfg.num_transmitters)
        for region in range(self.cfg.num_regions):
            rows = topo.region_transmitter_rows(region)
            sl = topo.region_user_slice(region)
            out[rows] = gains[rows, sl].mean(axis=1)
        self._row_means_for = snap
        self._row_means = out
        return out

    def _observe_global(self) -> np.ndarray:
        alloc = self.state.alloc
        avail = 1.0 - alloc.global_alloc.any(axis=0)
        row_means = self._region_gain_row_means()
        beam_gain = np.zeros(self.cfg.beams)
        for beam, regions in enumerate(self._beam_regions):
            rows = np.concatenate([self.topology.region_transmitter_rows(r) for r in regions])
            beam_gain[beam] = gain_to_unit(row_means[rows].mean())
        return np.concatenate([avail.astype(float), self._beam_user_share, beam_gain])

    def _observe_regional(self, hap: int) -> np.ndarray:
        cfg = self.cfg
        topo = self.topology
        state = self.state
        beam = hap // cfg.haps_per_beam
        mask = state.alloc.global_alloc[beam].astype(float)
        regions = topo.region_of_hap(hap)
        rows = np.concatenate([topo.region_transmitter_rows(r) for r in regions])
        assoc = state.snapshot.association
        counts = np.bincount(assoc[assoc >= 0], minlength=cfg.num_transmitters)
        hap_users = cfg.regions_per_hap * cfg.users_per_region
        load = counts[rows] / hap_users
        gain = gain_to_unit(self._region_gain_row_means()[rows])
        return np.concatenate([mask, load, gain])

    def _observe_local(self, row: int) -> np.ndarray:
        cfg = self.cfg
        topo = self.topology
        state = self.state
        region = self._row_region[row]
        granted = state.alloc.regional[row].astype(float)
        user_xy = self._user_xy_unit[region]
        x0, y0, x1, y1 = topo.region_bounds[region]
        own = state.tx_positions[row]
        own_unit = np.clip(
            [(own[0] - x0) / (x1 - x0), (own[1] - y0) / (y1 - y0)], 0.0, 1.0
        )
        sl = topo.region_user_slice(region)
        gain = gain_to_unit(state.snapshot.gains[row, sl])
        interf = interference_to_unit(state.snapshot.interference[sl].mean(axis=0))
        return np.concatenate([granted, user_xy, own_unit, gain, interf])

    def _observe_all(self) -> dict:
        cfg = self.cfg
        topo = self.topology
        state = self.state
        gains = state.snapshot.gains
        # region-blocked build of the local vectors; shares the per-region work
        # that _observe_local would redo for every row
        local = {}
        for region in range(cfg.num_regions):
            rows = topo.region_transmitter_rows(region)
            sl = topo.region_user_slice(region)
            x0, y0, x1, y1 = topo.region_bounds[region]
            user_xy = self._user_xy_unit[region]
            interf = interference_to_unit(state.snapshot.interference[sl].mean(axis=0))
            gain_block = gain_to_unit(gains[rows, sl])
            pos = state.tx_positions[rows]
            own_unit = np.clip(
                np.stack(
                    [(pos[:, 0] - x0) / (x1 - x0), (pos[:, 1] - y0) / (y1 - y0)], axis=1
                ),
                0.0,
                1.0,
            )
            for j, row in enumerate(rows):
                local[int(row)] = np.concatenate(
                    [
                        state.alloc.regional[row].astype(float),
                        user_xy,
                        own_unit[j],
                        gain_block[j],
                        interf,
                    ]
                )
        return {
            "global": self._observe_global(),
            "regional": {h: self._observe_regional(h) for h in range(cfg.num_haps)},
            "local": local,
        }

    # -- tracing ----------------------------------------------------------------

    def _write_trace(self, t: int, decisions: dict, state: EnvState) -> None:
        line = {
            "type": "step",
            "t": t,
            "decisions": decisions,
            "allocation": state.alloc.to_dict(),
            "tx_positions": state.tx_positions.tolist(),
            "gains": state.snapshot.gains.tolist(),
            "metrics": state.metrics.to_dict(),
        }
        self._trace_fh.write(json.dumps(line) + "\n")
