"""Radio propagation: path loss, shadowing, small-scale fading, interference.

Channel power gain for a link is ``10 ** (-(PL + X) / 10) * F`` with
free-space path loss PL, log-normal shadowing X (sigma 4 dB), and a
small-scale fading power factor F drawn per link: Rician (K = 10 dB) for
satellite/HAP transmitters, Rayleigh for ground-tier ones.  A frozen mode
(shadowing 0, fading 1) makes the whole channel deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import AllocationState
from .config import ScenarioConfig
from .topology import TIER_HAP, TIER_SATELLITE, Topology

SHADOWING_STD_DB = 4.0
RICIAN_K_DB = 10.0
# dB range used to squash link gains into [0, 1] observation features
GAIN_DB_RANGE = (-160.0, -60.0)
_MIN_GAIN = 1e-30


def path_loss_db(distance_m, carrier_hz) -> np.ndarray:
    """Free-space path loss in dB; distance and frequency must be positive."""
    d = np.asarray(distance_m, dtype=float)
    f = np.asarray(carrier_hz, dtype=float)
    if (d <= 0).any() if d.ndim else d <= 0:
        raise ValueError("distance must be > 0")
    if (f <= 0).any() if f.ndim else f <= 0:
        raise ValueError("carrier frequency must be > 0")
    return 20.0 * np.log10(d) + 20.0 * np.log10(f) - 147.55


def rayleigh_power(rng: np.random.Generator, size=None):
    """Rayleigh fading power factor: unit-mean exponential."""
    return np.maximum(rng.exponential(1.0, size=size), 1e-12)


def rician_power(k_linear: float, rng: np.random.Generator, size=None):
    """Rician fading power factor with linear K-factor; unit mean.

    Power of ``sqrt(K/(K+1)) + CN(0, 1/(K+1))``; K -> inf collapses to 1.
    """
    mu = np.sqrt(k_linear / (k_linear + 1.0))
    sigma = np.sqrt(1.0 / (2.0 * (k_linear + 1.0)))
    re = rng.normal(mu, sigma, size=size)
    im = rng.normal(0.0, sigma, size=size)
    return re * re + im * im


def fading_gain(tier: str, rng: np.random.Generator, size=None):
    """Small-scale fading power for a transmitter tier."""
    if tier in (TIER_SATELLITE, TIER_HAP):
        return rician_power(10.0 ** (RICIAN_K_DB / 10.0), rng, size=size)
    return rayleigh_power(rng, size=size)


def dbm_to_watts(dbm) -> np.ndarray:
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def gain_to_unit(gain_linear) -> np.ndarray:
    """Map linear gains onto [0, 1] via the fixed dB observation range."""
    lo, hi = GAIN_DB_RANGE
    db = 10.0 * np.log10(np.maximum(gain_linear, _MIN_GAIN))
    return np.clip((db - lo) / (hi - lo), 0.0, 1.0)


@dataclass
class ChannelSnapshot:
    """One step's channel state for all transmitter-user links.

    gains: (num_transmitters, num_users) linear power gains in (0, 1];
    association: (num_users,) transmitter row serving each user, -1 if the
    user's region holds no granted subband;
    interference: (num_users, N) co-channel interference power in watts,
    excluding each user's own serving node.
    """

    gains: np.ndarray
    association: np.ndarray
    interference: np.ndarray
    tx_power_w: np.ndarray  # (num_transmitters,)


def link_gains(
    topo: Topology,
    tx_positions: np.ndarray,
    rng: np.random.Generator | None,
    frozen: bool,
) -> np.ndarray:
    """Draw the (num_transmitters, num_users) gain matrix for one step."""
    cfg = topo.cfg
    users = topo.user_positions
    diff = tx_positions[:, None, :] - users[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    pl = path_loss_db(dist, cfg.carrier_freq)
    if frozen:
        total_db = -pl
        fading = 1.0
    else:
        assert rng is not None
        shadow = rng.normal(0.0, SHADOWING_STD_DB, size=pl.shape)
        total_db = -(pl + shadow)
        # ground transmitters only; tier-wise draw kept for completeness
        fading = np.empty_like(pl)
        for row, node in enumerate(topo.transmitters()):
            fading[row] = fading_gain(node.tier, rng, size=pl.shape[1])
    gains = 10.0 ** (total_db / 10.0) * fading
    return np.clip(gains, _MIN_GAIN, 1.0)


def associate_users(topo: Topology, gains: np.ndarray, regional: np.ndarray) -> np.ndarray:
    """Serve each user from its region's best-gain node among grant holders."""
    cfg = topo.cfg
    association = np.full(cfg.num_users, -1, dtype=int)
    holds = regional.sum(axis=1) > 0
    for region in range(cfg.num_regions):
        rows = topo.region_transmitter_rows(region)
        candidates = rows[holds[rows]]
        if candidates.size == 0:
            continue
        sl = topo.region_user_slice(region)
        best = np.argmax(gains[candidates, sl], axis=0)
        association[sl] = candidates[best]
    return association


def co_channel_interference(
    topo: Topology,
    gains: np.ndarray,
    alloc: AllocationState,
    tx_power_w: np.ndarray,
    association: np.ndarray,
    scope: str,
) -> np.ndarray:
    """Interference per (user, subband) from other active co-channel nodes."""
    cfg = topo.cfg
    active = (alloc.regional * alloc.beta).astype(float)
    tx_psd = active * alloc.alpha * tx_power_w[:, None]  # (T, N) radiated power
    if scope == "region":
        total = np.zeros((cfg.num_users, cfg.num_subbands))
        for region in range(cfg.num_regions):
            rows = topo.region_transmitter_rows(region)
            sl = topo.region_user_slice(region)
            total[sl] = gains[rows, sl].T @ tx_psd[rows]
    else:
        total = gains.T @ tx_psd  # (U, N)
    # remove each user's own serving contribution
    served = association >= 0
    u_idx = np.nonzero(served)[0]
    if u_idx.size:
        s_rows = association[u_idx]
        total[u_idx] -= gains[s_rows, u_idx][:, None] * tx_psd[s_rows]
        np.maximum(total, 0.0, out=total)
    return total


def compute_snapshot(
    topo: Topology,
    alloc: AllocationState,
    tx_positions: np.ndarray,
    rng: np.random.Generator | None = None,
    frozen: bool = False,
    gains: np.ndarray | None = None,
) -> ChannelSnapshot:
    """Draw gains (unless supplied) and derive association and interference."""
    cfg = topo.cfg
    if gains is None:
        gains = link_gains(topo, tx_positions, rng, frozen or cfg.fading_frozen)
    power = dbm_to_watts([n.tx_power_dbm for n in topo.transmitters()])
    association = associate_users(topo, gains, alloc.regional)
    interference = co_channel_interference(
        topo, gains, alloc, power, association, cfg.interference_scope
    )
    return ChannelSnapshot(
        gains=gains,
        association=association,
        interference=interference,
        tx_power_w=power,
    )
