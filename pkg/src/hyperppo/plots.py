"""Figure rendering for the report paths (training curve, sweep scatter,
reward-distribution curve, comparison bars). Data files stay authoritative;
every figure is written next to its delimited twin."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .archspace import ArchSpec, param_count


def training_curve(metrics: list[dict], path: str) -> None:
    """Mean evaluation return and loss terms per iteration."""
    if not metrics:
        return
    iters = sorted({m["iter"] for m in metrics})
    mean_ret, ploss, vloss = [], [], []
    for k in iters:
        rows = [m for m in metrics if m["iter"] == k]
        rets = [m["mean_return"] for m in rows if not math.isnan(m["mean_return"])]
        mean_ret.append(np.mean(rets) if rets else np.nan)
        ploss.append(np.mean([m["policy_loss"] for m in rows]))
        vloss.append(np.mean([m["value_loss"] for m in rows]))

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(iters, mean_ret, marker="o", ms=3, color="tab:blue")
    ax1.set_ylabel("meta-batch mean eval return")
    ax1.grid(alpha=0.3)
    ax2.plot(iters, ploss, label="policy loss", color="tab:orange")
    ax2.plot(iters, vloss, label="value loss", color="tab:green")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("loss")
    ax2.legend()
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_figure(table, path: str) -> None:
    """Return vs parameter count, one point per architecture."""
    obs_dim = table.metadata["obs_dim"]
    act_dim = table.metadata["act_dim"]
    params = [param_count(ArchSpec(r.widths), obs_dim, act_dim) for r in table.rows]
    rets = [r.mean_return for r in table.rows]
    depths = [len(r.widths) for r in table.rows]

    fig, ax = plt.subplots(figsize=(7, 5))
    sc = ax.scatter(params, rets, c=depths, s=12, cmap="viridis", alpha=0.7)
    ax.set_xscale("log")
    ax.set_xlabel("policy parameters")
    ax.set_ylabel("mean return")
    ax.grid(alpha=0.3)
    fig.colorbar(sc, ax=ax, label="hidden layers")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def distribution_figure(points: list[tuple[float, int]], path: str) -> None:
    """Number of architectures with return greater than x, against x."""
    xs = [p[0] for p in points]
    counts = [p[1] for p in points]
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.step(xs, counts, where="post")
    ax.set_xlabel("return threshold")
    ax.set_ylabel("architectures above threshold")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def compare_figure(report, path: str) -> None:
    """Generated vs directly trained returns for one architecture."""
    fig, ax = plt.subplots(figsize=(5, 5))
    labels = ["generated", "direct PPO"]
    means = [report.hyper_mean, report.baseline_mean]
    stds = [report.hyper_std, report.baseline_std]
    ax.bar(labels, means, yerr=stds, capsize=6, color=["tab:blue", "tab:gray"])
    ax.set_ylabel("mean return")
    ax.set_title(f"architecture {','.join(map(str, report.widths))}, "
                 f"{report.episodes} episodes")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
