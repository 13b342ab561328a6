"""Nested spectrum allocation state, feasibility checks, and clamping.

Three levels share one pool of N subbands:

* global: beams x subbands binary matrix, each subband granted to at most
  one beam;
* regional: per region, a nodes x subbands binary matrix, each subband used
  by at most one node inside the region, and only if the region's beam
  holds that subband;
* local: per node, a binary access mask ``beta`` over subbands, a power
  fraction ``alpha`` per subband with unit budget over active subbands, and
  a horizontal movement vector ``dp`` (UAVs only).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig

# Feasibility is checked with a small tolerance on the power budget so a
# rescale followed by re-validation never flags float dust.
BUDGET_TOL = 1e-9
# clamp only rescales when the overshoot exceeds this, which makes
# clamp(clamp(x)) bit-identical to clamp(x)
_RESCALE_TOL = 1e-12


class EnumerationCapError(RuntimeError):
    """Search space exceeds the configured enumeration cap."""


@dataclass
class Violation:
    constraint: str
    where: tuple
    message: str

    def __str__(self) -> str:
        return f"{self.constraint} at {self.where}: {self.message}"


@dataclass
class LocalAction:
    """Per-node spectrum access: subband mask, power split, movement."""

    beta: np.ndarray  # (N,) in {0, 1}
    alpha: np.ndarray  # (N,) in [0, 1]
    dp: np.ndarray  # (2,) meters

    def copy(self) -> "LocalAction":
        return LocalAction(self.beta.copy(), self.alpha.copy(), self.dp.copy())


@dataclass
class AllocationState:
    """Joint allocation across all three levels, transmitter-major layout.

    ``regional`` stacks every region's matrix into one
    (num_transmitters, N) array so that row ``i`` of ``regional``,
    ``beta`` and ``alpha`` all describe the same node.
    """

    global_alloc: np.ndarray  # (B, N) in {0, 1}
    regional: np.ndarray  # (num_transmitters, N) in {0, 1}
    beta: np.ndarray  # (num_transmitters, N) in {0, 1}
    alpha: np.ndarray  # (num_transmitters, N) in [0, 1]
    dp: np.ndarray  # (num_transmitters, 2) meters

    @classmethod
    def zeros(cls, cfg: ScenarioConfig) -> "AllocationState":
        n, t = cfg.num_subbands, cfg.num_transmitters
        return cls(
            global_alloc=np.zeros((cfg.beams, n), dtype=np.int8),
            regional=np.zeros((t, n), dtype=np.int8),
            beta=np.zeros((t, n), dtype=np.int8),
            alpha=np.zeros((t, n)),
            dp=np.zeros((t, 2)),
        )

    def copy(self) -> "AllocationState":
        return AllocationState(
            self.global_alloc.copy(),
            self.regional.copy(),
            self.beta.copy(),
            self.alpha.copy(),
            self.dp.copy(),
        )

    def region_rows(self, cfg: ScenarioConfig, region: int) -> slice:
        m = cfg.nodes_per_region
        return slice(region * m, (region + 1) * m)

    def local_action(self, row: int) -> LocalAction:
        return LocalAction(self.beta[row], self.alpha[row], self.dp[row])

    def to_dict(self) -> dict:
        return {
            "global": self.global_alloc.tolist(),
            "regional": self.regional.tolist(),
            "beta": self.beta.tolist(),
            "alpha": self.alpha.tolist(),
            "dp": self.dp.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AllocationState":
        return cls(
            global_alloc=np.asarray(data["global"], dtype=np.int8),
            regional=np.asarray(data["regional"], dtype=np.int8),
            beta=np.asarray(data["beta"], dtype=np.int8),
            alpha=np.asarray(data["alpha"], dtype=float),
            dp=np.asarray(data["dp"], dtype=float),
        )


def validate(state: AllocationState, cfg: ScenarioConfig, uav_step: float | None = None) -> Violation | None:
    """Return the first violated constraint, or None when feasible."""
    if uav_step is None:
        uav_step = cfg.uav_step
    g = state.global_alloc
    if g.shape != (cfg.beams, cfg.num_subbands):
        return Violation("shape", g.shape, "global allocation has wrong shape")
    if not np.isin(g, (0, 1)).all():
        bad = np.argwhere(~np.isin(g, (0, 1)))[0]
        return Violation("binary", tuple(bad), "global allocation entries must be 0/1")
    col = g.sum(axis=0)
    if (col > 1).any():
        n = int(np.argmax(col > 1))
        return Violation("beam-conflict", (n,), f"subband {n} granted to {col[n]} beams")

    if not np.isin(state.regional, (0, 1)).all():
        bad = np.argwhere(~np.isin(state.regional, (0, 1)))[0]
        return Violation("binary", tuple(bad), "regional allocation entries must be 0/1")
    m = cfg.nodes_per_region
    for region in range(cfg.num_regions):
        rows = state.regional[region * m : (region + 1) * m]
        col = rows.sum(axis=0)
        if (col > 1).any():
            n = int(np.argmax(col > 1))
            return Violation(
                "region-conflict", (region, n), f"subband {n} used by {col[n]} nodes in region {region}"
            )
        beam = (region // cfg.regions_per_hap) // cfg.haps_per_beam
        excess = rows.any(axis=0) & (g[beam] == 0)
        if excess.any():
            n = int(np.argmax(excess))
            return Violation(
                "grant-nesting", (region, n), f"region {region} uses subband {n} not granted to beam {beam}"
            )

    if not np.isin(state.beta, (0, 1)).all():
        bad = np.argwhere(~np.isin(state.beta, (0, 1)))[0]
        return Violation("binary", tuple(bad), "beta entries must be 0/1")
    over = (state.beta == 1) & (state.regional == 0)
    if over.any():
        row, n = np.argwhere(over)[0]
        return Violation("access-mask", (int(row), int(n)), "beta set on an ungranted subband")

    if (state.alpha < 0).any() or (state.alpha > 1).any():
        row, n = np.argwhere((state.alpha < 0) | (state.alpha > 1))[0]
        return Violation("power-range", (int(row), int(n)), "alpha outside [0, 1]")
    used = (state.beta * state.alpha).sum(axis=1)
    if (used > 1.0 + BUDGET_TOL).any():
        row = int(np.argmax(used))
        return Violation("power-budget", (row,), f"active power fractions sum to {used[row]:.6f}")

    if (np.abs(state.dp) > uav_step + BUDGET_TOL).any():
        row, axis = np.argwhere(np.abs(state.dp) > uav_step + BUDGET_TOL)[0]
        return Violation("movement-limit", (int(row), int(axis)), f"|dp| exceeds {uav_step} m")
    return None


def clamp_local(
    beta: np.ndarray,
    alpha: np.ndarray,
    dp: np.ndarray,
    granted: np.ndarray,
    uav_step: float,
    is_uav: bool,
) -> LocalAction:
    """Project a raw local action onto the feasible set.

    beta is masked by the regional grant, alpha clipped to [0, 1] and
    rescaled when the active budget exceeds one, dp clipped per axis and
    zeroed for non-UAV nodes.  Idempotent: clamping a clamped action is a
    bit-exact no-op.
    """
    b = (np.asarray(beta) > 0.5).astype(np.int8) * np.asarray(granted, dtype=np.int8)
    a = np.clip(np.asarray(alpha, dtype=float), 0.0, 1.0)
    used = float((b * a).sum())
    if used > 1.0 + _RESCALE_TOL:
        a = a / used
    if is_uav:
        d = np.clip(np.asarray(dp, dtype=float), -uav_step, uav_step)
    else:
        d = np.zeros(2)
    return LocalAction(beta=b, alpha=a, dp=d)


def enumerate_global(beams: int, num_subbands: int, cap: int):
    """Yield every feasible global allocation matrix (at most one beam per subband).

    There are (beams + 1) ** num_subbands of them; raises
    EnumerationCapError when that exceeds ``cap``.
    """
    total = (beams + 1) ** num_subbands
    if total > cap:
        raise EnumerationCapError(
            f"search space too large: {total} global allocations exceed cap {cap}"
        )
    for combo in itertools.product(range(beams + 1), repeat=num_subbands):
        g = np.zeros((beams, num_subbands), dtype=np.int8)
        for n, choice in enumerate(combo):
            if choice > 0:
                g[choice - 1, n] = 1
        yield g
