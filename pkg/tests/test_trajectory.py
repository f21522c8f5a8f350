import io

import numpy as np
import pytest

from pacc.trajectory import (Trajectory, TrajectoryFormatError, dump_trajectory,
                             read_trajectory, read_trajectory_lenient,
                             write_trajectory)


def sample_traj(n=100, dt=0.1):
    rows = [(i * dt, 10.0 + 0.01 * i, 30.0 - 0.003 * i, 10.5, 0.123456789,
             "none", "manual") for i in range(n)]
    return Trajectory.from_rows(rows)


def test_roundtrip_bit_exact(tmp_path):
    traj = sample_traj()
    path = tmp_path / "t.csv"
    write_trajectory(path, traj)
    back = read_trajectory(path)
    assert len(back) == len(traj)
    np.testing.assert_array_equal(back.v, traj.v)
    np.testing.assert_array_equal(back.g, traj.g)
    np.testing.assert_array_equal(back.a, traj.a)
    assert list(back.pedal) == list(traj.pedal)


def test_slice_views_columns():
    traj = sample_traj(50)
    part = traj.slice(10, 20)
    assert len(part) == 10
    assert part.t[0] == traj.t[10]


def test_strict_reader_rejects_malformed(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,v,g,v_f,a,pedal,mode\n0,1,2,3,4,none,manual\nbroken\n")
    with pytest.raises(TrajectoryFormatError):
        read_trajectory(path)


def test_lenient_reader_counts_skips(tmp_path):
    path = tmp_path / "dirty.csv"
    path.write_text(
        "t,v,g,v_f,a,pedal,mode\n"
        "0,1,2,3,4,none,manual\n"
        "bad,row\n"
        "0.1,x,2,3,4,none,manual\n"
        "0.2,1,2,3,4,sideways,manual\n"
        "0.3,1,2,3,4,brake,acc\n")
    traj, skipped = read_trajectory_lenient(path)
    assert len(traj) == 2
    assert skipped == 3


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(TrajectoryFormatError):
        read_trajectory_lenient(path)


def test_header_required(tmp_path):
    path = tmp_path / "nohdr.csv"
    path.write_text("0,1,2,3,4,none,manual\n")
    with pytest.raises(TrajectoryFormatError):
        read_trajectory_lenient(path)


def test_no_valid_rows_rejected(tmp_path):
    path = tmp_path / "hdr_only.csv"
    path.write_text("t,v,g,v_f,a,pedal,mode\n")
    with pytest.raises(TrajectoryFormatError):
        read_trajectory_lenient(path)
