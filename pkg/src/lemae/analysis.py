"""Random-walk hitting times, visitation heatmaps and speedup ratios."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

GRID_N = (2, 5, 10, 20)
GRID_P = (0.55, 0.6, 0.75, 0.9)

# Inclusive (x0, x1, y0, y1) windows around the passage each task funnels through.
CORRIDORS = {
    "pass": (12, 18, 12, 18),
    "large_pass": (22, 28, 22, 28),
    "secret_room": (9, 15, 10, 14),
    "river": (12, 17, 12, 17),
    "push_box": (5, 9, 0, 9),
}


class DomainError(ValueError):
    pass


def _check_np(N, p) -> None:
    if isinstance(N, bool) or int(N) != N or N <= 1:
        raise DomainError(f"N must be an integer > 1, got {N!r}")
    if not (0.5 < p < 1):
        raise DomainError(f"p must lie in (0.5, 1), got {p!r}")


def expected_hitting_time(N: int, p: float, prior: bool = False) -> float:
    _check_np(N, p)
    if prior:
        return 1 / (2 * p - 1) + (N - 1) * (2 / p - 1)
    return N / (2 * p - 1)


def advantage(N: int, p: float) -> float:
    """Steps saved by the prior, in closed form."""
    _check_np(N, p)
    return (N - 1) * (1 / (2 * p - 1) - 2 / p + 1)


@dataclass
class RandomWalkConfig:
    N: int
    p: float
    episodes: int = 100_000
    seed: int = 0
    prior_mode: bool = False
    block: int = 8192
    chunk: int = 256

    def validate(self) -> None:
        # p == 1 is allowed here: the walk is then deterministic
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N <= 1:
            raise DomainError(f"N must be an integer > 1, got {self.N!r}")
        if not (0.5 < self.p <= 1):
            raise DomainError(f"p must lie in (0.5, 1], got {self.p!r}")
        if self.episodes < 1 or self.block < 1 or self.chunk < 1:
            raise DomainError("episodes, block and chunk must be positive")


def hitting_times(cfg: RandomWalkConfig) -> np.ndarray:
    """First time each walk started at 0 reaches ``N``.

    Walks are simulated in blocks; every round draws one row of uniforms
    per still-running walk, so results depend only on the seed.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    out = np.empty(cfg.episodes, dtype=np.int64)
    for start in range(0, cfg.episodes, cfg.block):
        n = min(cfg.block, cfg.episodes - start)
        pos = np.zeros(n, dtype=np.int64)
        maxkey = np.zeros(n, dtype=np.int64)
        steps = np.zeros(n, dtype=np.int64)
        done = np.zeros(n, dtype=np.bool_)
        while True:
            live = np.flatnonzero(~done)
            if live.size == 0:
                break
            u = rng.random((live.size, cfg.chunk))
            p_, m_, s_, d_ = pos[live], maxkey[live], steps[live], done[live]
            kernels.walk_advance(u, p_, m_, s_, d_, int(cfg.N), float(cfg.p), bool(cfg.prior_mode))
            pos[live], maxkey[live], steps[live], done[live] = p_, m_, s_, d_
        out[start:start + n] = steps
    return out


def simulate_walk(cfg: RandomWalkConfig) -> float:
    return float(hitting_times(cfg).mean())


def verify_grid(
    Ns: Iterable[int] = GRID_N,
    ps: Iterable[float] = GRID_P,
    episodes: int = 100_000,
    seed: int = 0,
    modes: Sequence[bool] = (False, True),
) -> list[dict]:
    """Closed form against Monte Carlo on every (N, p, mode) combination."""
    rows = []
    k = 0
    for N in Ns:
        for p in ps:
            for prior in modes:
                mc = simulate_walk(RandomWalkConfig(N, p, episodes, seed + k, prior))
                cf = expected_hitting_time(N, p, prior)
                rows.append({"N": N, "p": p, "prior": prior, "closed_form": cf,
                             "monte_carlo": mc, "rel_err": abs(mc - cf) / cf})
                k += 1
    return rows


def write_report(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(rows, indent=2))
    return path


# ---------------------------------------------------------------------------
# Heatmaps


def corridor_score(visitation: np.ndarray, corridor: tuple[int, int, int, int]) -> float:
    """Share of all agent visits that fall inside the corridor window."""
    x0, x1, y0, y1 = corridor
    total = visitation.sum()
    if total == 0:
        return 0.0
    inside = visitation[..., y0:y1 + 1, x0:x1 + 1].sum()
    return float(inside / total)


def _write_grid(path: Path, grid: np.ndarray, fmt: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in grid:
            w.writerow([fmt.format(v) for v in row])


def export_heatmap(metrics_or_counts, out_dir, corridor=None, task: str = "pass") -> dict:
    """Per-agent CSV grids (raw and log10(count+1)) plus a concentration score.

    Accepts a ``RunMetrics`` or a ``(n_agents, h, w)`` count array.  Row
    ``y`` of each CSV is grid row ``y``.
    """
    counts = getattr(metrics_or_counts, "visitation", metrics_or_counts)
    if counts is None:
        raise ValueError("no visitation counts to export")
    counts = np.asarray(counts)
    if counts.ndim == 2:
        counts = counts[None]
    if corridor is None:
        corridor = CORRIDORS[task]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, grid in enumerate(counts):
        raw = out_dir / f"heatmap_agent{i}.csv"
        logp = out_dir / f"heatmap_agent{i}_log10.csv"
        _write_grid(raw, grid, "{:d}")
        _write_grid(logp, np.log10(grid + 1.0), "{:.6f}")
        files += [raw.name, logp.name]
    info = {
        "corridor": list(corridor),
        "corridor_score": corridor_score(counts, corridor),
        "total_visits": int(counts.sum()),
        "files": files,
    }
    (out_dir / "heatmap.json").write_text(json.dumps(info, indent=2))
    return info


def load_heatmap(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


# ---------------------------------------------------------------------------
# Speedup


@dataclass(frozen=True)
class Rate:
    value: float
    lower_bound: bool = False

    def __float__(self) -> float:
        return self.value

    def __str__(self) -> str:
        s = f"{self.value:.1f}"
        return f"> {s}" if self.lower_bound else s


def acceleration_rate(steps_a, steps_b, budget=None) -> Rate:
    """How many times fewer steps ``a`` needed than ``b``.

    ``steps_b=None`` means ``b`` never succeeded; the ratio against
    ``budget`` is then a lower bound.
    """
    if steps_a is None or not steps_a > 0:
        raise DomainError(f"steps_a must be positive, got {steps_a!r}")
    if steps_b is None:
        if budget is None or not budget > 0:
            raise DomainError("a positive budget is needed when steps_b was not found")
        return Rate(budget / steps_a, lower_bound=True)
    if not steps_b > 0:
        raise DomainError(f"steps_b must be positive, got {steps_b!r}")
    return Rate(steps_b / steps_a)


def keystate_drop(counts: Sequence[tuple[int, int]]) -> int:
    """Total decrease of a key-state count curve."""
    values = [c for _, c in counts]
    return sum(max(0, a - b) for a, b in zip(values, values[1:]))


def config_dict(cfg: RandomWalkConfig) -> dict:
    d = asdict(cfg)
    d["closed_form"] = expected_hitting_time(cfg.N, cfg.p, cfg.prior_mode) if cfg.p < 1 else float(cfg.N)
    return d
