"""Figure rendering for harness reports.

Every report writes its figures next to its CSVs; all rendering goes through
the Agg backend so runs work headless.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_learning_curve(rows, path, title: str = "greedy return") -> None:
    """rows: (env_steps, mean_return) pairs."""
    steps = [r[0] for r in rows]
    returns = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, returns, marker="o", ms=3)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("mean greedy return")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep_returns(cells, path) -> None:
    """cells: {(k_label, tier): [(env_steps, mean_return), ...]}."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (k_label, tier), rows in sorted(cells.items()):
        ax.plot(
            [r[0] for r in rows],
            [r[1] for r in rows],
            marker="o",
            ms=2.5,
            label=f"k={k_label}, {tier}",
        )
    ax.set_xlabel("environment steps")
    ax.set_ylabel("mean greedy return")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep_speed(speed_rows, path) -> None:
    """speed_rows: [(k_label, tier, median_steps_per_sec)]."""
    labels = [f"k={k}\n{t}" for k, t, _ in speed_rows]
    values = [v for _, _, v in speed_rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.0 * len(labels)), 4))
    ax.bar(range(len(values)), values)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("median training steps / second")
    ax.set_yscale("log")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_lemma_curves(rows, path) -> None:
    """rows: dicts with keys p, b, c, k, expected_max, mc_mean."""
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r["p"], r["b"], r["c"]), []).append(r)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (p, b, c), grp in sorted(groups.items()):
        grp = sorted(grp, key=lambda r: r["k"])
        ks = [g["k"] for g in grp]
        ax.plot(ks, [g["expected_max"] for g in grp], "-", label=f"p={p}, b={b}, c={c}")
        ax.plot(ks, [g["mc_mean"] for g in grp], "x", ms=4, color=ax.lines[-1].get_color())
    ax.set_xscale("log")
    ax.set_xlabel("candidate count k")
    ax.set_ylabel("expected best candidate value")
    ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)
    ax.set_title("closed form (lines) vs Monte Carlo (crosses)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_recall(rows, path) -> None:
    """rows: [(tier, seed, recall)]."""
    tiers: dict[str, list[float]] = {}
    for tier, _, recall in rows:
        tiers.setdefault(tier, []).append(recall)
    names = list(tiers)
    fig, ax = plt.subplots(figsize=(5, 4))
    for i, name in enumerate(names):
        vals = tiers[name]
        ax.scatter([i] * len(vals), vals, alpha=0.6)
        med = sorted(vals)[len(vals) // 2] if len(vals) % 2 else 0.5 * (
            sorted(vals)[len(vals) // 2 - 1] + sorted(vals)[len(vals) // 2]
        )
        ax.hlines(med, i - 0.25, i + 0.25, color="k")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names)
    ax.set_ylabel("recall")
    ax.set_ylim(0, 1.05)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def finite(values):
    return [v for v in values if v is not None and not math.isnan(v)]
