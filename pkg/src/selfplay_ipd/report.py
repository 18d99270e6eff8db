"""Delimited output and figure rendering.

CSV files carry one version header line, '.' decimals, '\\n' line endings,
and 17-significant-digit floats, so re-running a spec file reproduces them
byte for byte. Figures are a convenience layer rendered next to the data
files; the CSV/JSON content is the reproducibility contract.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .engine import TrajectoryRecord
from .game import Action, State

CSV_VERSION_HEADER = f"# selfplay-ipd {__version__}"

TRAJECTORY_COLUMNS = ["t", "s", "a1", "a2", "r1", "r2",
                      "q_dd_c", "q_dd_d", "q_cc_c", "q_cc_d",
                      "q_cd_c", "q_cd_d", "q_dc_c", "q_dc_d", "policy"]
QDIFF_COLUMNS = ["t", "dq_dd", "dq_cc", "dq_cd", "dq_dc"]
DQN_COLUMNS = ["iter", "epsilon", "p_c_cc", "p_c_dd", "p_c_cd", "p_c_dc", "loss"]
RATE_COLUMNS = ["alpha", "t1", "t2", "alpha_t1", "alpha_t2", "t1_pred"]


def fmt_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [CSV_VERSION_HEADER, ",".join(columns)]
    lines.extend(",".join(fmt_cell(c) for c in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True,
                               default=_json_default) + "\n",
                    encoding="utf-8", newline="\n")


def _snapshot_cells(snap) -> list:
    # column order: q_dd_c, q_dd_d, q_cc_c, q_cc_d, q_cd_c, q_cd_d, q_dc_c, q_dc_d
    return [snap[0, 1], snap[0, 0], snap[1, 1], snap[1, 0],
            snap[2, 1], snap[2, 0], snap[3, 1], snap[3, 0]]


def trajectory_rows(rec: TrajectoryRecord) -> list:
    """One row per snapshot time; the t=0 row has no actions or rewards."""
    rows = []
    for pos, t in enumerate(rec.snapshot_times):
        t = int(t)
        snap = rec.snapshots[pos]
        if t == 0:
            head = [0, rec.config.s0.name, None, None, None, None]
        else:
            i = t - 1
            head = [t, State(int(rec.states[i])).name,
                    Action(int(rec.a1[i])).name, Action(int(rec.a2[i])).name,
                    float(rec.r1[i]), float(rec.r2[i])]
        rows.append(head + _snapshot_cells(snap) + [rec.policy_name_at(t)])
    return rows


def qdiff_series(rec: TrajectoryRecord) -> np.ndarray:
    """Q[s,D] - Q[s,C] per state (the plotted quantity), one row per
    snapshot time; columns in state order DD, CC, CD, DC."""
    return rec.snapshots[:, :, 0] - rec.snapshots[:, :, 1]


def qdiff_rows(rec: TrajectoryRecord) -> list:
    d = qdiff_series(rec)
    return [[int(t), d[i, 0], d[i, 1], d[i, 2], d[i, 3]]
            for i, t in enumerate(rec.snapshot_times)]


# ---------------------------------------------------------------------------
# figures

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


_STATE_LABELS = ["DD", "CC", "CD", "DC"]


def plot_trajectory(rec: TrajectoryRecord, out_path) -> None:
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 7), sharex=True)
    t = rec.snapshot_times
    for si, s in enumerate(_STATE_LABELS):
        ax1.plot(t, rec.snapshots[:, si, 1], label=f"Q[{s},C]")
        ax1.plot(t, rec.snapshots[:, si, 0], "--", label=f"Q[{s},D]")
    ax1.set_ylabel("Q value")
    ax1.legend(ncol=4, fontsize=8)
    d = qdiff_series(rec)
    for si, s in enumerate(_STATE_LABELS):
        ax2.plot(t, d[:, si], label=f"Q[{s},D] - Q[{s},C]")
    ax2.axhline(0.0, color="k", lw=0.5)
    for mark, label in ((rec.t1, "t1"), (rec.t2, "t2")):
        if mark is not None:
            for ax in (ax1, ax2):
                ax.axvline(mark, color="gray", ls=":", lw=1)
            ax2.annotate(label, (mark, 0), textcoords="offset points",
                         xytext=(2, 5), fontsize=8)
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("greedy gap")
    ax2.legend(ncol=2, fontsize=8)
    fig.suptitle(f"final policy: {rec.final_policy}")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_qdiff_band(times, mean, std, out_path, title="") -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(9, 5))
    for si, s in enumerate(_STATE_LABELS):
        ax.plot(times, mean[:, si], label=f"Q[{s},D] - Q[{s},C]")
        ax.fill_between(times, mean[:, si] - std[:, si], mean[:, si] + std[:, si],
                        alpha=0.25)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("iteration")
    ax.set_ylabel("greedy gap")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_sweep(results, out_path) -> None:
    """Heat map of cooperation probability over (alpha, epsilon); one panel
    per (g, gamma) combination present in the results."""
    plt = _pyplot()
    groups = {}
    for r in results:
        groups.setdefault((r.g, r.gamma), []).append(r)
    fig, axes = plt.subplots(1, len(groups), figsize=(5.5 * len(groups), 4.5),
                             squeeze=False)
    for ax, ((g, gamma), cells) in zip(axes[0], sorted(groups.items(),
                                                       key=lambda kv: (kv[0][0] or 0,
                                                                       kv[0][1]))):
        alphas = sorted({c.alpha for c in cells})
        epsilons = sorted({c.epsilon for c in cells})
        grid = np.full((len(epsilons), len(alphas)), np.nan)
        for c in cells:
            grid[epsilons.index(c.epsilon), alphas.index(c.alpha)] = c.coop_prob
        im = ax.imshow(grid, origin="lower", vmin=0.0, vmax=1.0, cmap="viridis",
                       aspect="auto")
        ax.set_xticks(range(len(alphas)), [f"{a:g}" for a in alphas])
        ax.set_yticks(range(len(epsilons)), [f"{e:g}" for e in epsilons])
        ax.set_xlabel("alpha")
        ax.set_ylabel("epsilon")
        ax.set_title(f"g={g}, gamma={gamma}")
        fig.colorbar(im, ax=ax, label="cooperation probability")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_rate(rows, out_path) -> None:
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    alphas = [r.alpha for r in rows]
    t1 = [r.t1 for r in rows]
    t2 = [r.t2 for r in rows]
    ax1.loglog(alphas, t1, "o-", label="t1")
    if all(x is not None for x in t2):
        ax1.loglog(alphas, t2, "s-", label="t2")
    ax1.set_xlabel("alpha")
    ax1.set_ylabel("hitting time")
    ax1.legend()
    ax2.plot(alphas, [r.alpha_t1 for r in rows], "o-", label="alpha * t1")
    if all(x is not None for x in t2):
        ax2.plot(alphas, [r.alpha_t2 for r in rows], "s-", label="alpha * t2")
    ax2.set_xlabel("alpha")
    ax2.set_ylabel("alpha * hitting time")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_dqn(logs, out_path) -> None:
    """Cooperate-probability trajectories per state; one thin line per seed
    and a thick mean, panel per state."""
    plt = _pyplot()
    fig, axes = plt.subplots(2, 2, figsize=(10, 6), sharex=True, sharey=True)
    order = [State.CC, State.CD, State.DC, State.DD]
    stack = np.stack([log.p_c for log in logs])  # (seeds, iters, 4)
    for ax, s in zip(axes.flat, order):
        for k in range(stack.shape[0]):
            ax.plot(stack[k, :, int(s)], lw=0.6, alpha=0.5)
        ax.plot(stack[:, :, int(s)].mean(axis=0), lw=2.0, color="k")
        ax.set_title(f"p(C | {s.name})")
        ax.set_ylim(-0.02, 1.02)
    for ax in axes[1]:
        ax.set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
