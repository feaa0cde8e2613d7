"""Exports for the multi-goal experiment: Q landscape with action field, and trajectory fans.

CSV files are the source of truth; the PNGs are rendered from exactly those numbers.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError
from ..numcore.tensor import no_grad
from .evaluation import rollout_batch

PROBE_STARTS = ((0.0, 0.0), (-0.5, 0.5), (0.5, 0.5), (0.5, -0.5), (-0.5, -0.5))


@dataclass
class LandscapeGrid:
    xs: np.ndarray  # (r,)
    ys: np.ndarray  # (r,)
    q: np.ndarray  # (r, r), q[j, i] at (xs[i], ys[j])
    actions: np.ndarray  # (r, r, 2)
    peaks: list = field(default_factory=list)

    @property
    def resolution(self) -> int:
        return len(self.xs)


def landscape(q_fn: Callable[[np.ndarray, np.ndarray], np.ndarray], act_fn, resolution: int = 101,
              half_width: float = 7.0) -> LandscapeGrid:
    """Evaluate ``q_fn(states, act_fn(states))`` over a square grid."""
    if resolution < 2:
        raise ContractError("grid resolution must be at least 2")
    xs = np.linspace(-half_width, half_width, resolution)
    ys = np.linspace(-half_width, half_width, resolution)
    gx, gy = np.meshgrid(xs, ys)
    states = np.column_stack([gx.ravel(), gy.ravel()])
    acts = act_fn(states)
    q = np.asarray(q_fn(states, acts), dtype=np.float64)
    grid = LandscapeGrid(xs, ys, q.reshape(resolution, resolution), acts.reshape(resolution, resolution, -1))
    grid.peaks = cluster_peaks(local_maxima(grid))
    return grid


def local_maxima(grid: LandscapeGrid) -> list[tuple[float, float, float]]:
    """Grid points strictly higher than every one of their (up to 8) neighbours."""
    q = grid.q
    r, c = q.shape
    padded = np.pad(q, 1, constant_values=-np.inf)
    is_max = np.ones_like(q, dtype=bool)
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if dj == 0 and di == 0:
                continue
            is_max &= q > padded[1 + dj:1 + dj + r, 1 + di:1 + di + c]
    js, is_ = np.nonzero(is_max)
    return [(float(grid.xs[i]), float(grid.ys[j]), float(q[j, i])) for j, i in zip(js, is_)]


def cluster_peaks(peaks: Sequence[tuple[float, float, float]], link: float = 1.0):
    """Single-linkage grouping of maxima closer than ``link``; each cluster reports its highest point."""
    n = len(peaks)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    pts = np.array([(x, y) for x, y, _ in peaks]).reshape(-1, 2)
    for i in range(n):
        for j in range(i + 1, n):
            if np.hypot(*(pts[i] - pts[j])) < link:
                parent[find(i)] = find(j)
    groups: dict[int, list] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(peaks[i])
    return sorted((max(g, key=lambda p: p[2]) for g in groups.values()), key=lambda p: (-p[2], p[0], p[1]))


def export_q_landscape(policy, critic, out_dir, resolution: int = 101, seed: int = 0,
                       half_width: float = 7.0, plot: bool = True) -> LandscapeGrid:
    """Write q_landscape.csv (x, y, q, ax, ay), q_peaks.txt and q_landscape.png."""
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def q_fn(states, acts):
        with no_grad():
            return critic.min_q(states, acts).data

    grid = landscape(q_fn, lambda s: policy.act(s, rng), resolution, half_width)
    write_landscape(grid, out)
    if plot:
        plot_landscape(out / "q_landscape.csv", out / "q_landscape.png")
    return grid


def write_landscape(grid: LandscapeGrid, out: Path) -> None:
    with open(out / "q_landscape.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "q", "ax", "ay"])
        for j, y in enumerate(grid.ys):
            for i, x in enumerate(grid.xs):
                ax, ay = grid.actions[j, i, :2]
                w.writerow([repr(float(x)), repr(float(y)), repr(float(grid.q[j, i])),
                            repr(float(ax)), repr(float(ay))])
    with open(out / "q_peaks.txt", "w") as fh:
        fh.write(f"clusters={len(grid.peaks)}\n")
        for x, y, q in grid.peaks:
            fh.write(f"{x:.4f} {y:.4f} {q:.6f}\n")


def read_landscape(path) -> LandscapeGrid:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    xs = np.unique(data[:, 0])
    ys = np.unique(data[:, 1])
    r = len(xs)
    grid = LandscapeGrid(xs, ys, data[:, 2].reshape(len(ys), r), data[:, 3:5].reshape(len(ys), r, 2))
    grid.peaks = cluster_peaks(local_maxima(grid))
    return grid


def plot_landscape(csv_path, png_path, goals=None, arrow_stride: int | None = None) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    grid = read_landscape(csv_path)
    stride = arrow_stride or max(1, grid.resolution // 15)
    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.pcolormesh(grid.xs, grid.ys, grid.q, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="min Q")
    gx, gy = np.meshgrid(grid.xs, grid.ys)
    sl = (slice(None, None, stride), slice(None, None, stride))
    ax.quiver(gx[sl], gy[sl], grid.actions[..., 0][sl], grid.actions[..., 1][sl], color="red",
              scale=25, width=0.004)
    for x, y, _ in grid.peaks:
        ax.plot(x, y, "w+", ms=10)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)


@dataclass
class TrajectoryFan:
    start: tuple[float, float]
    paths: list[np.ndarray]
    goals: np.ndarray
    returns: np.ndarray

    def goal_histogram(self, n_goals: int = 4) -> np.ndarray:
        """Counts per goal index, with a trailing bin for rollouts that reached no goal."""
        counts = np.zeros(n_goals + 1, dtype=int)
        for g in self.goals:
            counts[g if g >= 0 else n_goals] += 1
        return counts


def sample_trajectories(policy, env, starts: Sequence = PROBE_STARTS, n: int = 100, seed: int = 0,
                        out_dir=None, plot: bool = True) -> list[TrajectoryFan]:
    """``n`` noise-free rollouts from every start point; optionally writes CSV + overlay PNG."""
    rng = np.random.default_rng(seed)
    fans = []
    for start in starts:
        start = tuple(float(v) for v in start)
        returns, paths, goals = rollout_batch(policy, env, n, rng, start=np.array(start), record=True)
        fans.append(TrajectoryFan(start, [np.array(p) for p in paths], goals, returns))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectories(fans, out)
        if plot:
            plot_trajectories(out / "trajectories.csv", out / "trajectories.png")
    return fans


def write_trajectories(fans: Sequence[TrajectoryFan], out: Path) -> None:
    with open(out / "trajectories.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "rollout", "step", "x", "y"])
        for si, fan in enumerate(fans):
            for ri, path in enumerate(fan.paths):
                for k, (x, y) in enumerate(path):
                    w.writerow([si, ri, k, repr(float(x)), repr(float(y))])
    with open(out / "goal_histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start", "start_x", "start_y", "goal_0", "goal_1", "goal_2", "goal_3", "none"])
        for si, fan in enumerate(fans):
            w.writerow([si, fan.start[0], fan.start[1], *fan.goal_histogram().tolist()])


def plot_trajectories(csv_path, png_path, goals=((0, 5), (0, -5), (5, 0), (-5, 0))) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    fig, ax = plt.subplots(figsize=(5, 5))
    colors = plt.cm.tab10.colors
    for si in np.unique(data[:, 0]).astype(int):
        rows = data[data[:, 0] == si]
        for ri in np.unique(rows[:, 1]):
            p = rows[rows[:, 1] == ri]
            ax.plot(p[:, 3], p[:, 4], color=colors[si % 10], alpha=0.3, lw=0.8)
    for gx, gy in goals:
        ax.plot(gx, gy, "k*", ms=12)
    ax.set_xlim(-7, 7)
    ax.set_ylim(-7, 7)
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
