"""Link/network performance metrics and the multi-objective reward stack.

Rates follow the Shannon form per subband, spectral efficiency is total
rate over total bandwidth, fairness is Jain's index, QoS violation is the
shortfall of the worst user against the minimum rate, and the UAV penalty
is the fraction of UAVs that left their home region.  Rewards compose the
per-region metrics bottom-up: regions feed HAP means, HAP means feed the
satellite-level scalar.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import AllocationState
from .channel import ChannelSnapshot
from .config import RewardWeights, ScenarioConfig
from .topology import TIER_UAV, Topology

# Reference SINR anchoring the reward normalizers: a link at this SINR
# counts as "full rate" for normalization purposes.
REFERENCE_SINR = 100.0

CSV_COLUMNS = (
    "step",
    "region",
    "eta",
    "fairness",
    "qos",
    "uav_penalty",
    "r_l",
    "r_h",
    "r_s",
    "throughput_bps",
)


def sinr(gain, alpha, power_w, interference_w, noise_w):
    """SINR = gain * alpha * P / (I + N0); all linear units."""
    return (np.asarray(gain) * np.asarray(alpha) * np.asarray(power_w)) / (
        np.asarray(interference_w) + noise_w
    )


def user_rate(sinr_values, total_bandwidth: float, num_subbands: int) -> float:
    """Shannon rate in bps summed over a user's serving subbands."""
    per = total_bandwidth / num_subbands
    return float(per * np.log2(1.0 + np.asarray(sinr_values, dtype=float)).sum())


def spectral_efficiency(rates, total_bandwidth: float) -> float:
    """Sum rate normalized by the shared bandwidth, bps/Hz."""
    return float(np.sum(rates) / total_bandwidth)


def jain_fairness(rates) -> float:
    """Jain's index in [1/K, 1]; defined as 1 for an all-zero rate vector."""
    r = np.asarray(rates, dtype=float)
    if r.size == 0:
        raise ValueError("jain_fairness needs at least one rate")
    total = r.sum()
    if total == 0.0:
        return 1.0
    return float(total * total / (r.size * (r * r).sum()))


def qos_violation(rates, r_min: float) -> float:
    """Worst-user shortfall against the minimum rate, in bps."""
    r = np.asarray(rates, dtype=float)
    if r.size == 0:
        raise ValueError("qos_violation needs at least one rate")
    return float(max(0.0, r_min - r.min()))


def uav_penalty(positions: np.ndarray, bounds) -> float:
    """Fraction of UAVs strictly outside the region rectangle (boundary is inside)."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    if pos.shape[0] == 0:
        return 0.0
    x0, y0, x1, y1 = bounds
    outside = (pos[:, 0] < x0) | (pos[:, 0] > x1) | (pos[:, 1] < y0) | (pos[:, 1] > y1)
    return float(outside.mean())


@dataclass(frozen=True)
class RewardNorms:
    """Scale constants keeping reward terms O(1).

    rate_norm is the one-subband rate at the reference SINR; eff_norm is
    the spectral efficiency of all subbands running at it.
    """

    rate_norm: float
    eff_norm: float

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "RewardNorms":
        log_term = np.log2(1.0 + REFERENCE_SINR)
        return cls(
            rate_norm=float(cfg.subband_bandwidth * log_term),
            eff_norm=float(cfg.num_subbands * log_term),
        )


def compose_rewards(
    region_rate_mean: np.ndarray,
    region_eta: np.ndarray,
    region_fairness: np.ndarray,
    region_uav: np.ndarray,
    region_qos: np.ndarray,
    weights: RewardWeights,
    norms: RewardNorms,
    regions_per_hap: int,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Region rewards, then HAP means, then the satellite-level mean."""
    r_l = (
        weights.w_rate * region_rate_mean / norms.rate_norm
        + weights.w_eff * region_eta / norms.eff_norm
        + weights.w_fair * region_fairness
        + weights.w_uav * region_uav
        + weights.w_qos * region_qos / norms.rate_norm
    )
    r_h = r_l.reshape(-1, regions_per_hap).mean(axis=1)
    r_s = float(r_h.mean())
    return r_l, r_h, r_s


@dataclass
class StepMetrics:
    """Everything measured in one environment step."""

    sinr: np.ndarray  # (num_users, N), zero where not served
    user_rates: np.ndarray  # (num_users,) bps
    region_eta: np.ndarray  # (num_regions,) bps/Hz
    region_fairness: np.ndarray
    region_qos: np.ndarray  # bps shortfall
    region_uav_penalty: np.ndarray
    region_rate_mean: np.ndarray  # (num_regions,) bps
    r_avg: float  # network mean user rate, bps
    eta: float  # network sum rate over bandwidth, bps/Hz
    fairness: float  # Jain over all users
    r_l: np.ndarray  # (num_regions,)
    r_h: np.ndarray  # (num_haps,)
    r_s: float
    spectrum_utilization: float  # active / granted subband-node pairs

    def to_csv_rows(self, step: int, regions_per_hap: int) -> list[list]:
        rows = []
        for region in range(len(self.region_eta)):
            hap = region // regions_per_hap
            rows.append(
                [
                    step,
                    region,
                    float(self.region_eta[region]),
                    float(self.region_fairness[region]),
                    float(self.region_qos[region]),
                    float(self.region_uav_penalty[region]),
                    float(self.r_l[region]),
                    float(self.r_h[hap]),
                    self.r_s,
                    float(self.region_rate_mean[region]),
                ]
            )
        return rows

    def to_dict(self) -> dict:
        return {
            "user_rates": self.user_rates.tolist(),
            "region_eta": self.region_eta.tolist(),
            "region_fairness": self.region_fairness.tolist(),
            "region_qos": self.region_qos.tolist(),
            "region_uav_penalty": self.region_uav_penalty.tolist(),
            "region_rate_mean": self.region_rate_mean.tolist(),
            "r_avg": self.r_avg,
            "eta": self.eta,
            "fairness": self.fairness,
            "r_l": self.r_l.tolist(),
            "r_h": self.r_h.tolist(),
            "r_s": self.r_s,
            "spectrum_utilization": self.spectrum_utilization,
        }


def compute_step_metrics(
    topo: Topology,
    alloc: AllocationState,
    snap: ChannelSnapshot,
    tx_positions: np.ndarray,
    norms: RewardNorms,
) -> StepMetrics:
    cfg = topo.cfg
    n_users, n_sub = cfg.num_users, cfg.num_subbands
    noise = cfg.noise_power_w

    sinr_matrix = np.zeros((n_users, n_sub))
    served = np.nonzero(snap.association >= 0)[0]
    if served.size:
        rows = snap.association[served]
        active = (alloc.regional[rows] * alloc.beta[rows]).astype(float)
        signal = (
            snap.gains[rows, served][:, None]
            * alloc.alpha[rows]
            * snap.tx_power_w[rows, None]
            * active
        )
        sinr_matrix[served] = signal / (snap.interference[served] + noise)

    per_band = cfg.subband_bandwidth
    user_rates = per_band * np.log2(1.0 + sinr_matrix).sum(axis=1)

    n_regions = cfg.num_regions
    region_eta = np.zeros(n_regions)
    region_fair = np.zeros(n_regions)
    region_qos = np.zeros(n_regions)
    region_uav = np.zeros(n_regions)
    region_rate_mean = np.zeros(n_regions)
    txs = topo.transmitters()
    for region in range(n_regions):
        sl = topo.region_user_slice(region)
        rates = user_rates[sl]
        region_eta[region] = spectral_efficiency(rates, cfg.total_bandwidth)
        region_fair[region] = jain_fairness(rates)
        region_qos[region] = qos_violation(rates, cfg.r_min)
        region_rate_mean[region] = rates.mean()
        rows = topo.region_transmitter_rows(region)
        uav_rows = [r for r in rows if txs[r].tier == TIER_UAV]
        region_uav[region] = uav_penalty(tx_positions[uav_rows], topo.region_bounds[region])

    r_l, r_h, r_s = compose_rewards(
        region_rate_mean,
        region_eta,
        region_fair,
        region_uav,
        region_qos,
        cfg.reward_weights,
        norms,
        cfg.regions_per_hap,
    )

    granted = int(alloc.regional.sum())
    active_cnt = int((alloc.regional * alloc.beta).sum())
    utilization = active_cnt / granted if granted else 0.0

    return StepMetrics(
        sinr=sinr_matrix,
        user_rates=user_rates,
        region_eta=region_eta,
        region_fairness=region_fair,
        region_qos=region_qos,
        region_uav_penalty=region_uav,
        region_rate_mean=region_rate_mean,
        r_avg=float(user_rates.mean()),
        eta=spectral_efficiency(user_rates, cfg.total_bandwidth),
        fairness=jain_fairness(user_rates),
        r_l=r_l,
        r_h=r_h,
        r_s=r_s,
        spectrum_utilization=utilization,
    )
