"""Timed waypoint trajectories for bladder compression experiments.

Positions are millimetres, times seconds, tilt degrees. The seven standard
test profiles, the spiral and vertical-grid training paths, and the tilt
variants are all generated here as piecewise-linear waypoint trajectories
that the simulator consumes after resampling to the ADC rate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .validation import check_workspace, require

Z_MAX_MM = 25.0
R_WORK_MM = 6.0
TILT_MAX_DEG = 15.0

TEST_LABELS = {
    1: "vertical",
    2: "diagonal_px",
    3: "diagonal_nx",
    4: "diagonal_py",
    5: "diagonal_ny",
    6: "offset_px",
    7: "offset_py",
}

CSV_HEADER = ["time_s", "x_mm", "y_mm", "z_mm", "tilt_y_deg"]


@dataclass(frozen=True)
class Pose:
    """Bladder-top state: lateral x/y, compression depth z, tilt about y."""

    x: float
    y: float
    z: float = 0.0
    tilt_y: float = 0.0

    def as_tuple(self):
        return (self.x, self.y, self.z, self.tilt_y)


@dataclass(frozen=True)
class Trajectory:
    """Ordered (time, pose) waypoints joined by linear interpolation."""

    times: tuple
    poses: tuple
    label: str = ""

    def __post_init__(self):
        require(len(self.times) == len(self.poses), "times and poses length mismatch")
        require(len(self.times) >= 1, "trajectory needs at least one waypoint")
        require(self.times[0] == 0.0, "waypoint times must start at 0")
        require(
            all(b > a for a, b in zip(self.times, self.times[1:])),
            "waypoint times must be strictly increasing",
        )

    @classmethod
    def from_waypoints(cls, waypoints, label=""):
        times = tuple(float(t) for t, _ in waypoints)
        poses = tuple(p for _, p in waypoints)
        return cls(times, poses, label)

    @property
    def duration(self):
        return self.times[-1]

    def waypoint_array(self):
        """Waypoints as an (n, 5) array of [t, x, y, z, tilt_y]."""
        return np.array(
            [(t,) + p.as_tuple() for t, p in zip(self.times, self.poses)], dtype=float
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for t, p in zip(self.times, self.poses):
                writer.writerow([repr(float(v)) for v in (t, p.x, p.y, p.z, p.tilt_y)])

    @classmethod
    def from_csv(cls, path, label=""):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            require(header == CSV_HEADER, f"unexpected trajectory CSV header: {header}")
            rows = [[float(v) for v in row] for row in reader if row]
        waypoints = [(r[0], Pose(r[1], r[2], r[3], r[4])) for r in rows]
        return cls.from_waypoints(waypoints, label=label)


@dataclass(frozen=True, eq=False)
class TimedPoseSeries:
    """Dense pose samples at a fixed rate, ready for the simulator."""

    rate_hz: float
    data: np.ndarray  # (n, 4) columns x, y, z, tilt_y
    label: str = ""

    def __post_init__(self):
        require(self.rate_hz > 0, "rate_hz must be positive")
        self.data.setflags(write=False)

    def __len__(self):
        return self.data.shape[0]

    @property
    def t(self):
        return np.arange(len(self)) / self.rate_hz

    def pose(self, i):
        x, y, z, tilt = self.data[i]
        return Pose(float(x), float(y), float(z), float(tilt))

    def to_trajectory(self):
        """Waypoints at every sample; inverse of resampling a linear path."""
        waypoints = [(t, self.pose(i)) for i, t in enumerate(self.t)]
        return Trajectory.from_waypoints(waypoints, label=self.label)


def _check_profile_args(depth, offset, duration, z_max, r_work):
    require(0 <= depth <= z_max, f"depth {depth} outside [0, {z_max}] mm")
    require(0 <= offset <= r_work, f"offset {offset} outside [0, {r_work}] mm")
    require(duration > 0, "duration must be positive")


def gen_test_profile(test_id, depth=20.0, offset=6.0, duration=4.0,
                     z_max=Z_MAX_MM, r_work=R_WORK_MM):
    """One of the seven standard compression tests.

    Test 1 is a centred vertical compression. Tests 2-5 ramp laterally and
    vertically at the same time, ending at (+x, -x, +y, -y) offsets. Tests
    6-7 move laterally first and only then compress vertically. Every test
    releases back to the start along the mirrored path.
    """
    require(test_id in TEST_LABELS, f"unknown test id {test_id}")
    _check_profile_args(depth, offset, duration, z_max, r_work)
    label = f"test{test_id}_{TEST_LABELS[test_id]}"
    rest = Pose(0.0, 0.0, 0.0)
    if test_id == 1:
        mid = Pose(0.0, 0.0, depth)
        wps = [(0.0, rest), (duration / 2, mid), (duration, rest)]
    elif test_id in (2, 3, 4, 5):
        dx, dy = {2: (offset, 0.0), 3: (-offset, 0.0),
                  4: (0.0, offset), 5: (0.0, -offset)}[test_id]
        mid = Pose(dx, dy, depth)
        wps = [(0.0, rest), (duration / 2, mid), (duration, rest)]
    else:
        dx, dy = {6: (offset, 0.0), 7: (0.0, offset)}[test_id]
        top = Pose(dx, dy, 0.0)
        bottom = Pose(dx, dy, depth)
        q = duration / 4
        wps = [(0.0, rest), (q, top), (2 * q, bottom), (3 * q, top), (duration, rest)]
    return Trajectory.from_waypoints(wps, label=label)


def gen_spiral(r_max=R_WORK_MM, depth=20.0, turns=5, duration=10.0,
               points_per_turn=64, z_max=Z_MAX_MM, r_work=R_WORK_MM):
    """Helical descent at constant radius with a linear depth schedule.

    The descent occupies the full `duration` (so depth at half time is
    exactly half depth); a short straight return to the origin is appended
    afterwards.
    """
    require(turns >= 1, "turns must be >= 1")
    require(points_per_turn >= 32, "waypoint density must be >= 32 per turn")
    require(0 <= r_max <= r_work, f"r_max {r_max} outside [0, {r_work}] mm")
    _check_profile_args(depth, 0.0, duration, z_max, r_work)
    n = int(turns) * points_per_turn
    waypoints = []
    for i in range(n + 1):
        u = i / n
        theta = 2 * math.pi * turns * u
        waypoints.append(
            (duration * u,
             Pose(r_max * math.cos(theta), r_max * math.sin(theta), depth * u))
        )
    return_time = duration / (4 * turns)
    waypoints.append((duration + return_time, Pose(0.0, 0.0, 0.0)))
    return Trajectory.from_waypoints(waypoints, label="spiral")


def default_grid_sites(r_work=R_WORK_MM):
    """3x3 square grid at {-r, 0, r}^2, radially clamped to the work radius."""
    sites = []
    for gy in (-r_work, 0.0, r_work):
        for gx in (-r_work, 0.0, r_work):
            rad = math.hypot(gx, gy)
            if rad > r_work:
                scale = r_work / rad
                sites.append((gx * scale, gy * scale))
            else:
                sites.append((gx, gy))
    return sites


def _serpentine_order(sites, axis):
    """Order sites so consecutive transits run predominantly along `axis`."""
    key_row = (lambda s: s[1]) if axis == "x" else (lambda s: s[0])
    key_col = (lambda s: s[0]) if axis == "x" else (lambda s: s[1])
    rows = {}
    for s in sites:
        rows.setdefault(round(key_row(s), 9), []).append(s)
    ordered = []
    for i, rk in enumerate(sorted(rows)):
        row = sorted(rows[rk], key=key_col, reverse=(i % 2 == 1))
        ordered.extend(row)
    return ordered


def gen_vertical_grid(sites, depth=20.0, return_axis="x", duration=26.0,
                      z_max=Z_MAX_MM, r_work=R_WORK_MM):
    """Vertical down-up compressions at each site, linked by top-surface transits.

    Sites are visited in serpentine order along `return_axis` so the transit
    direction alternates between grid passes; pairing an x-ordered grid with
    a y-ordered one balances transit orientations in the training data.
    """
    require(len(sites) > 0, "site list is empty")
    require(return_axis in ("x", "y"), "return_axis must be 'x' or 'y'")
    for sx, sy in sites:
        require(math.hypot(sx, sy) <= r_work + 1e-9,
                f"site ({sx}, {sy}) outside working radius")
    _check_profile_args(depth, 0.0, duration, z_max, r_work)
    ordered = _serpentine_order(sites, return_axis)
    n = len(ordered)
    n_segments = 3 * n - 1
    seg = duration / n_segments
    waypoints = []
    t = 0.0
    for i, (sx, sy) in enumerate(ordered):
        if i == 0:
            waypoints.append((0.0, Pose(sx, sy, 0.0)))
        else:
            waypoints.append((t, Pose(sx, sy, 0.0)))
        t += seg
        waypoints.append((t, Pose(sx, sy, depth)))
        t += seg
        waypoints.append((t, Pose(sx, sy, 0.0)))
        t += seg
    return Trajectory.from_waypoints(waypoints, label=f"grid_{return_axis}")


def apply_tilt(traj, angle):
    """Copy a trajectory with tilt_y set everywhere; positions are untouched."""
    require(abs(angle) <= TILT_MAX_DEG, f"tilt {angle} outside +-{TILT_MAX_DEG} deg")
    poses = tuple(Pose(p.x, p.y, p.z, float(angle)) for p in traj.poses)
    label = traj.label if angle == 0 else f"{traj.label}_tilt{angle:g}"
    return Trajectory(traj.times, poses, label)


def concat_trajectories(trajs, label="concat", transition_s=0.5):
    """Join trajectories end to start, inserting short linear transitions
    whenever the joined endpoints differ."""
    require(len(trajs) >= 1, "nothing to concatenate")
    waypoints = [(t, p) for t, p in zip(trajs[0].times, trajs[0].poses)]
    for traj in trajs[1:]:
        t_end, p_end = waypoints[-1]
        offset = t_end
        if traj.poses[0].as_tuple() != p_end.as_tuple():
            offset = t_end + transition_s
        first = 0 if offset > t_end else 1
        for t, p in list(zip(traj.times, traj.poses))[first:]:
            waypoints.append((offset + t, p))
    return Trajectory.from_waypoints(waypoints, label=label)


def resample(traj, rate_hz, z_max=Z_MAX_MM, r_work=R_WORK_MM):
    """Linearly interpolate all four pose fields at a uniform sample rate."""
    require(rate_hz > 0, "rate_hz must be positive")
    require(len(traj.times) >= 2, "cannot resample a trajectory with < 2 waypoints")
    duration = traj.duration
    n = int(math.floor(duration * rate_hz + 1e-9)) + 1
    ts = np.arange(n) / rate_hz
    wp = traj.waypoint_array()
    cols = [np.interp(ts, wp[:, 0], wp[:, j]) for j in range(1, 5)]
    data = np.column_stack(cols)
    check_workspace(data[:, 0], data[:, 1], data[:, 2], data[:, 3], z_max, r_work)
    return TimedPoseSeries(rate_hz=float(rate_hz), data=data, label=traj.label)
