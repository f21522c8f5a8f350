"""Shared trajectory record format.

One record per tick: t [s], v [m/s], g [m], v_f [m/s], a [m/s^2],
pedal in {none, accel, brake}, mode in {manual, acc}. Stored as
comma-delimited text with a header row, UTF-8.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

HEADER = ["t", "v", "g", "v_f", "a", "pedal", "mode"]
PEDALS = ("none", "accel", "brake")
MODES = ("manual", "acc")


@dataclass
class Trajectory:
    t: np.ndarray
    v: np.ndarray
    g: np.ndarray
    v_f: np.ndarray
    a: np.ndarray
    pedal: np.ndarray  # array of str
    mode: np.ndarray  # array of str

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        if len(self.t) < 2:
            return 0.0
        return float(self.t[1] - self.t[0])

    def slice(self, start: int, stop: int) -> "Trajectory":
        return Trajectory(*(getattr(self, f)[start:stop] for f in HEADER))

    @staticmethod
    def from_rows(rows: list) -> "Trajectory":
        cols = list(zip(*rows)) if rows else [[] for _ in HEADER]
        return Trajectory(
            np.asarray(cols[0], dtype=float),
            np.asarray(cols[1], dtype=float),
            np.asarray(cols[2], dtype=float),
            np.asarray(cols[3], dtype=float),
            np.asarray(cols[4], dtype=float),
            np.asarray(cols[5], dtype=object),
            np.asarray(cols[6], dtype=object),
        )


class TrajectoryFormatError(ValueError):
    pass


def write_trajectory(path, traj: Trajectory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        dump_trajectory(fh, traj)


def dump_trajectory(fh, traj: Trajectory) -> None:
    """Floats use shortest exact repr so archives round-trip bit for bit."""
    fh.write(",".join(HEADER) + "\n")
    for i in range(len(traj)):
        fh.write(
            f"{float(traj.t[i])!r},{float(traj.v[i])!r},{float(traj.g[i])!r},"
            f"{float(traj.v_f[i])!r},{float(traj.a[i])!r},{traj.pedal[i]},{traj.mode[i]}\n"
        )


def read_trajectory(path) -> Trajectory:
    """Strict reader: any malformed row raises."""
    traj, skipped = read_trajectory_lenient(path)
    if skipped:
        raise TrajectoryFormatError(f"{path}: {skipped} malformed rows")
    return traj


def read_trajectory_lenient(path) -> tuple[Trajectory, int]:
    """Reader that skips malformed rows, returning (trajectory, skip count)."""
    if isinstance(path, io.TextIOBase):
        return _parse(path, str(path))
    with open(path, "r", encoding="utf-8") as fh:
        return _parse(fh, str(path))


def _parse(fh, name: str) -> tuple[Trajectory, int]:
    header = fh.readline()
    if not header.strip():
        raise TrajectoryFormatError(f"{name}: empty file")
    names = [c.strip() for c in header.strip().split(",")]
    if names != HEADER:
        raise TrajectoryFormatError(f"{name}: bad header {names!r}")
    rows = []
    skipped = 0
    for line in fh:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(HEADER):
            skipped += 1
            continue
        try:
            numeric = [float(x) for x in parts[:5]]
        except ValueError:
            skipped += 1
            continue
        pedal, mode = parts[5].strip(), parts[6].strip()
        if pedal not in PEDALS or mode not in MODES:
            skipped += 1
            continue
        rows.append((*numeric, pedal, mode))
    if not rows:
        raise TrajectoryFormatError(f"{name}: no valid rows")
    return Trajectory.from_rows(rows), skipped
