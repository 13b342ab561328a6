"""Deterministic scene construction: node placement and user drops.

Regions tile a horizontal strip, one square per region, left to right in
region-id order, so each beam covers a contiguous block of regions.  Every
region gets two TBSs (west/east half centers) and its UAVs at the region
center; users drop uniformly inside the region rectangle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ScenarioConfig

# TBS antennas sit on a short mast so transmitter-user distances stay
# strictly positive (users are at ground level).
TBS_MAST_HEIGHT_M = 10.0

TIER_SATELLITE = "satellite"
TIER_HAP = "hap"
TIER_TBS = "tbs"
TIER_UAV = "uav"


@dataclass(frozen=True)
class Node:
    id: int
    tier: str
    position: np.ndarray  # (3,) meters, read-only home position
    tx_power_dbm: float
    region: int = -1  # owning region for tbs/uav, -1 for satellite/hap
    hap: int = -1  # owning hap for hap-tier and below
    beam: int = -1


@dataclass
class Topology:
    cfg: ScenarioConfig
    nodes: list[Node]
    user_positions: np.ndarray  # (num_users, 3), region-major order
    region_bounds: np.ndarray  # (num_regions, 4): xmin, ymin, xmax, ymax
    transmitter_ids: list[int] = field(default_factory=list)

    @property
    def num_regions(self) -> int:
        return len(self.region_bounds)

    def region_of_hap(self, hap: int) -> list[int]:
        r = self.cfg.regions_per_hap
        return list(range(hap * r, (hap + 1) * r))

    def hap_of_region(self, region: int) -> int:
        return region // self.cfg.regions_per_hap

    def beam_of_region(self, region: int) -> int:
        return self.hap_of_region(region) // self.cfg.haps_per_beam

    def transmitters(self) -> list[Node]:
        return [self.nodes[i] for i in self.transmitter_ids]

    def region_transmitter_rows(self, region: int) -> np.ndarray:
        """Row indices (into transmitter-major arrays) of a region's nodes."""
        m = self.cfg.nodes_per_region
        return np.arange(region * m, (region + 1) * m)

    def region_user_slice(self, region: int) -> slice:
        k = self.cfg.users_per_region
        return slice(region * k, (region + 1) * k)

    def region_of_user(self, user: int) -> int:
        return user // self.cfg.users_per_region


def build_topology(cfg: ScenarioConfig, rng: np.random.Generator) -> Topology:
    """Place satellite, HAPs, TBSs, UAVs and drop users; rng only drives users."""
    w, h = cfg.region_size
    n_regions = cfg.num_regions

    bounds = np.zeros((n_regions, 4))
    for r in range(n_regions):
        bounds[r] = (r * w, 0.0, (r + 1) * w, h)

    sat_power = 0.5 * (cfg.tx_power_sat_range[0] + cfg.tx_power_sat_range[1])
    hap_power = 0.5 * (cfg.tx_power_hap_range[0] + cfg.tx_power_hap_range[1])

    nodes: list[Node] = []
    next_id = 0

    all_cx = 0.5 * (bounds[:, 0] + bounds[:, 2])
    all_cy = 0.5 * (bounds[:, 1] + bounds[:, 3])
    nodes.append(
        Node(
            id=next_id,
            tier=TIER_SATELLITE,
            position=np.array([all_cx.mean(), all_cy.mean(), cfg.sat_altitude]),
            tx_power_dbm=sat_power,
        )
    )
    next_id += 1

    for hap in range(cfg.num_haps):
        regions = range(hap * cfg.regions_per_hap, (hap + 1) * cfg.regions_per_hap)
        cx = np.mean([all_cx[r] for r in regions])
        cy = np.mean([all_cy[r] for r in regions])
        nodes.append(
            Node(
                id=next_id,
                tier=TIER_HAP,
                position=np.array([cx, cy, cfg.hap_altitude]),
                tx_power_dbm=hap_power,
                hap=hap,
                beam=hap // cfg.haps_per_beam,
            )
        )
        next_id += 1

    transmitter_ids: list[int] = []
    for r in range(n_regions):
        x0, y0, x1, y1 = bounds[r]
        hap = r // cfg.regions_per_hap
        beam = hap // cfg.haps_per_beam
        cy = 0.5 * (y0 + y1)
        cx = 0.5 * (x0 + x1)
        tbs_positions = [
            np.array([x0 + 0.25 * (x1 - x0), cy, TBS_MAST_HEIGHT_M]),
            np.array([x0 + 0.75 * (x1 - x0), cy, TBS_MAST_HEIGHT_M]),
        ]
        for pos in tbs_positions:
            nodes.append(
                Node(
                    id=next_id,
                    tier=TIER_TBS,
                    position=pos,
                    tx_power_dbm=cfg.tx_power_tbs,
                    region=r,
                    hap=hap,
                    beam=beam,
                )
            )
            transmitter_ids.append(next_id)
            next_id += 1
        for _ in range(cfg.uavs_per_region):
            nodes.append(
                Node(
                    id=next_id,
                    tier=TIER_UAV,
                    position=np.array([cx, cy, cfg.uav_altitude]),
                    tx_power_dbm=cfg.tx_power_uav,
                    region=r,
                    hap=hap,
                    beam=beam,
                )
            )
            transmitter_ids.append(next_id)
            next_id += 1

    users = np.zeros((cfg.num_users, 3))
    for r in range(n_regions):
        x0, y0, x1, y1 = bounds[r]
        k = cfg.users_per_region
        sl = slice(r * k, (r + 1) * k)
        users[sl, 0] = rng.uniform(x0, x1, size=k)
        users[sl, 1] = rng.uniform(y0, y1, size=k)

    return Topology(
        cfg=cfg,
        nodes=nodes,
        user_positions=users,
        region_bounds=bounds,
        transmitter_ids=transmitter_ids,
    )
