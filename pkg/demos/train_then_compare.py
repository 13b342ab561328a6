#!/usr/bin/env python3
"""Train the hierarchical agent on the desk scenario, then race the baselines.

The desk scenario is small enough that the exhaustive search is tractable, so
after a short training run we can report how close the learned policy gets to
the per-step optimum, and how much faster it decides.

Takes a couple of minutes with the defaults; use --episodes to trade quality
for time.
"""

import argparse
from pathlib import Path

from specshare import SpectrumSharingEnv, evaluate, load_config, make_agent, train

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "desk.cfg"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=150, help="training episodes")
    ap.add_argument("--eval-episodes", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = load_config(CONFIG)
    cfg.seed = args.seed

    env = SpectrumSharingEnv(cfg)
    agent = make_agent("hdrl", cfg)
    print(f"training hdrl for {args.episodes} episodes on {CONFIG.name} ...")
    log = train(agent, env, episodes=args.episodes)
    first, last = log[0], log[-1]
    print(f"  episode {first['episode']}: cumulative reward {first['cumulative_reward']:8.2f}")
    print(f"  episode {last['episode']}: cumulative reward {last['cumulative_reward']:8.2f}\n")

    print(f"{'agent':12s} {'eta bit/s/Hz':>12s} {'fairness':>9s} {'ms/episode':>11s}")
    rows = []
    for kind in ("exhaustive", "hdrl", "random"):
        contender = agent if kind == "hdrl" else make_agent(kind, cfg)
        r = evaluate(contender, SpectrumSharingEnv(cfg), episodes=args.eval_episodes)
        ms = 1e3 * sum(r["decision_time_s"]) / len(r["decision_time_s"])
        rows.append((kind, r["eta_mean"], ms))
        print(f"{kind:12s} {r['eta_mean']:12.4f} {r['fairness_mean']:9.4f} {ms:11.2f}")

    by_kind = {k: (eta, ms) for k, eta, ms in rows}
    gap = by_kind["hdrl"][0] / by_kind["exhaustive"][0]
    speedup = by_kind["exhaustive"][1] / by_kind["hdrl"][1]
    print(f"\nhdrl reaches {100 * gap:.1f}% of the exhaustive optimum"
          f" while deciding {speedup:.0f}x faster")


if __name__ == "__main__":
    main()
