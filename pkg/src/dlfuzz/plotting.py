"""Static figures for replays and campaign reports (matplotlib, file output only)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fuzzer import STAGES, stage_shares  # noqa: E402
from .oracle import FAIL  # noqa: E402


def _draw_lanes(ax, graph):
    for lane in graph.lanes:
        c = lane.centerline
        ax.plot(c[:, 0], c[:, 1], color="0.85", lw=3.0, zorder=0, solid_capstyle="round")


def replay_figure(obs, graph, verdict=None, regions=(), path=None):
    """Trajectories, conflict regions and the wait-for cycle of one run."""
    fig, ax = plt.subplots(figsize=(7, 7))
    _draw_lanes(ax, graph)
    colors = plt.get_cmap("tab10")
    k_at = None
    if verdict is not None and verdict.t_detect is not None:
        k_at = min(obs.index_of(verdict.t_detect), obs.n_scenes - 1)
    for n, aid in enumerate(obs.agent_ids):
        tr = obs.track(aid)
        av = aid in obs.av_ids
        style = dict(color=colors(n % 10), lw=1.6 if av else 1.0, ls="-" if av else "--")
        ax.plot(tr.p[:, 0], tr.p[:, 1], label=f"{'AV' if av else 'NPC'} {aid}", **style)
        ax.plot(*tr.p[0], "o", color=style["color"], ms=4)
        end = tr.p[k_at] if k_at is not None else tr.p[-1]
        ax.plot(*end, "s", color=style["color"], ms=6)
    for r in regions:
        ax.add_patch(plt.Circle(r.point, 2.0, fill=False, color="tab:red", lw=1.0))
    if verdict is not None and verdict.outcome == FAIL and verdict.cycle:
        cyc = list(verdict.cycle)
        for i, j in zip(cyc, cyc[1:] + cyc[:1]):
            a, b = obs.track(i).p[k_at], obs.track(j).p[k_at]
            ax.annotate("", xy=b, xytext=a, arrowprops=dict(arrowstyle="->", color="crimson", lw=1.5, connectionstyle="arc3,rad=0.4"))
    title = "replay"
    if verdict is not None:
        title = verdict.outcome + (f" cycle {verdict.cycle} at t={verdict.t_detect:g}s" if verdict.cycle else "")
    if obs.collision_flag:
        title = f"collision {obs.collided_pair}"
    ax.set_title(title)
    ax.set_aspect("equal")
    ax.legend(fontsize=7, loc="upper right")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    if path is not None:
        fig.savefig(path)
    plt.close(fig)
    return path


def campaign_figures(report, out_dir):
    """Cumulative findings, score trace and stage time shares; returns file paths."""
    recs = report.records
    it = np.arange(1, len(recs) + 1)
    fails = np.cumsum([r.verdict == FAIL for r in recs]) if recs else np.zeros(0)
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(it, fails, where="post")
    ax.set_xlabel("iteration")
    ax.set_ylabel("deadlock scenarios found")
    ax.set_title(f"{report.config.mode} seed {report.config.seed}")
    fig.tight_layout()
    p = out_dir / "dls_over_time.svg"
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [r.iteration for r in recs if r.phi is not None]
    if xs:
        ax.plot(xs, [r.phi for r in recs if r.phi is not None], ".", ms=3, label="combined")
        ax.plot(xs, [r.phi_temporal for r in recs if r.phi is not None], ".", ms=3, label="temporal")
        ax.legend()
    ax.set_xlabel("iteration")
    ax.set_ylabel("feedback score")
    fig.tight_layout()
    p = out_dir / "scores.svg"
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(5, 3))
    share = stage_shares(report)
    ax.bar(STAGES, [share[s] for s in STAGES])
    ax.set_ylabel("share of wall-clock")
    fig.tight_layout()
    p = out_dir / "stage_time.svg"
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)
    return paths
