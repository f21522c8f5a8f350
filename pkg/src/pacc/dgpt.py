"""Driving gap preference table: desired gap per speed bin.

The table is the control reference; immutable snapshots with a version
counter that increases on every edit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mdp import StateGrid


def smoothing_matrix(n: int, window: int) -> np.ndarray:
    """Centered moving-average operator; edge windows truncate and renormalize."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    half = window // 2
    k = np.zeros((n, n))
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        k[i, lo:hi] = 1.0 / (hi - lo)
    return k


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    return smoothing_matrix(len(values), window) @ np.asarray(values, dtype=float)


@dataclass(frozen=True)
class Dgpt:
    """Desired gap [m] per speed bin of a StateGrid."""

    speeds: np.ndarray
    gaps: np.ndarray
    version: int = 0
    driver_id: str = ""

    def __post_init__(self):
        if len(self.speeds) != len(self.gaps):
            raise ValueError("speeds/gaps length mismatch")
        if not np.all(np.isfinite(self.gaps)):
            raise ValueError("non-finite gap values")

    def lookup(self, v: float) -> float:
        """Desired gap at speed v, linearly interpolated, clamped at the edges."""
        return float(np.interp(v, self.speeds, self.gaps))

    def bin_of(self, v: float) -> int:
        step = self.speeds[1] - self.speeds[0] if len(self.speeds) > 1 else 1.0
        idx = int(np.ceil((v - self.speeds[0]) / step - 0.5))
        return int(np.clip(idx, 0, len(self.speeds) - 1))

    def with_gaps(self, gaps: np.ndarray, bump_version: bool = True) -> "Dgpt":
        return replace(
            self,
            gaps=np.asarray(gaps, dtype=float),
            version=self.version + 1 if bump_version else self.version,
        )


def dgpt_from_reward(reward: np.ndarray, grid: StateGrid, window: int = 5,
                     driver_id: str = "") -> Dgpt:
    """Per speed bin, the gap maximizing the reward, then low-pass filtered.

    Argmax ties break toward the smaller gap. The filter is the centered
    moving average over the speed axis.
    """
    r = np.asarray(reward, dtype=float).reshape(grid.n_v, grid.n_g)
    best = np.argmax(r, axis=1)  # first max -> smallest gap on ties
    raw = grid.g_centers()[best]
    return Dgpt(grid.v_centers(), moving_average(raw, window), version=0,
                driver_id=driver_id)


def dump_dgpt(fh, table: Dgpt) -> None:
    """Two-column delimited text: speed bin center [m/s], desired gap [m].

    Floats use shortest exact repr so a load reproduces the table bit for bit.
    """
    fh.write("speed_mps,desired_gap_m\n")
    for v, g in zip(table.speeds, table.gaps):
        fh.write(f"{float(v)!r},{float(g)!r}\n")


def load_dgpt(fh, version: int = 0, driver_id: str = "") -> Dgpt:
    header = fh.readline().strip()
    if header != "speed_mps,desired_gap_m":
        raise ValueError(f"bad DGPT header: {header!r}")
    speeds, gaps = [], []
    for line in fh:
        if not line.strip():
            continue
        a, b = line.strip().split(",")
        speeds.append(float(a))
        gaps.append(float(b))
    return Dgpt(np.asarray(speeds), np.asarray(gaps), version=version,
                driver_id=driver_id)
