"""Single-bounce geometric multipath simulator and path-list CSV I/O.

Surfaces are vertical rectangles (building walls, barriers) plus an optional
horizontal ground plane. Every surface both reflects (image method, one
bounce) and blocks (binary occlusion). Gains follow free-space amplitude
``lambda / (4 pi d)`` times the surface loss factor, with carrier phase
``exp(-j 2 pi d / lambda)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import (
    SPEED_OF_LIGHT,
    PathParam,
    Pose,
    angles_from_direction,
    local_arrival_direction,
)

_EPS = 1e-9

PATH_CSV_HEADER = ["gain_re", "gain_im", "delay_s", "azimuth_rad", "elevation_rad", "is_los"]


class Receiver(str, Enum):
    AT_RSU = "AtRSU"
    AT_CRU = "AtCRU"


class GeometryError(ValueError):
    """Degenerate scene geometry."""


@dataclass(frozen=True)
class Reflector:
    """Vertical rectangle spanned by ``corner``, ``corner + edge`` and ``height`` upward.

    ``edge`` is a horizontal 2-vector (m); ``loss`` is the amplitude factor of
    one reflection.
    """

    corner: np.ndarray
    edge: np.ndarray
    height: float
    loss: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "corner", np.asarray(self.corner, dtype=float).reshape(3))
        object.__setattr__(self, "edge", np.asarray(self.edge, dtype=float).reshape(2))
        if np.linalg.norm(self.edge) <= 0 or self.height <= 0:
            raise ValueError("reflector extents must be > 0")
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss factor must lie in [0, 1]")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.edge))

    @property
    def along(self) -> np.ndarray:
        e = self.edge / self.length
        return np.array([e[0], e[1], 0.0])

    @property
    def normal(self) -> np.ndarray:
        a = self.along
        return np.array([-a[1], a[0], 0.0])

    def local_coords(self, p) -> tuple[float, float, float]:
        """(along-edge, height above corner, signed normal distance)."""
        d = np.asarray(p, dtype=float) - self.corner
        return float(d @ self.along), float(d[2]), float(d @ self.normal)

    def contains(self, p, tol: float = _EPS) -> bool:
        u, h, n = self.local_coords(p)
        return (abs(n) <= tol and -tol <= u <= self.length + tol
                and -tol <= h <= self.height + tol)

    def mirror(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return p - 2 * ((p - self.corner) @ self.normal) * self.normal

    def intersects(self, a, b) -> bool:
        """Whether the open segment ``a -> b`` crosses the rectangle interior."""
        _, _, na = self.local_coords(a)
        _, _, nb = self.local_coords(b)
        if na * nb >= 0 or abs(na - nb) < _EPS:
            return False
        t = na / (na - nb)
        if t <= _EPS or t >= 1 - _EPS:
            return False
        u, h, _ = self.local_coords(np.asarray(a) + t * (np.asarray(b) - np.asarray(a)))
        return 0.0 < u < self.length and 0.0 < h < self.height


@dataclass(frozen=True)
class Ground:
    """Horizontal reflecting plane ``z = height``."""

    loss: float = 0.4
    height: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss factor must lie in [0, 1]")

    def mirror(self, p) -> np.ndarray:
        q = np.array(p, dtype=float)
        q[2] = 2 * self.height - q[2]
        return q


@dataclass(frozen=True)
class Scene:
    rsu: Pose
    reflectors: tuple = ()
    ground: Ground | None = None
    cru_height: float = 1.5
    wavelength: float = SPEED_OF_LIGHT / 5.9e9

    def __post_init__(self):
        object.__setattr__(self, "reflectors", tuple(self.reflectors))

    def with_rsu(self, rsu: Pose) -> "Scene":
        return Scene(rsu, self.reflectors, self.ground, self.cru_height, self.wavelength)


@dataclass(frozen=True)
class Trajectory:
    """Constant-speed motion along a polyline, sampled every ``sample_interval`` s."""

    waypoints: tuple
    speed: float
    sample_interval: float = 0.1

    def __post_init__(self):
        pts = np.asarray(self.waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 3:
            raise ValueError("a trajectory needs at least two 3-D waypoints")
        if self.speed <= 0 or self.sample_interval <= 0:
            raise ValueError("speed and sample interval must be > 0")
        object.__setattr__(self, "waypoints", tuple(tuple(p) for p in pts))

    @property
    def length(self) -> float:
        pts = np.asarray(self.waypoints)
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))

    def position_at(self, distance: float) -> np.ndarray:
        pts = np.asarray(self.waypoints)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        distance = float(np.clip(distance, 0.0, cum[-1]))
        i = min(int(np.searchsorted(cum, distance, side="right")) - 1, seg.size - 1)
        if seg[i] == 0:
            return pts[i].copy()
        return pts[i] + (distance - cum[i]) / seg[i] * (pts[i + 1] - pts[i])

    def samples(self, max_samples: int | None = None, stride: int = 1) -> np.ndarray:
        step = self.speed * self.sample_interval
        n = int(math.floor(self.length / step + 1e-9)) + 1
        idx = np.arange(0, n, stride)
        if max_samples is not None:
            idx = idx[:max_samples]
        return np.array([self.position_at(k * step) for k in idx])


def _blocked(scene: Scene, a, b, skip=None) -> bool:
    return any(r is not skip and r.intersects(a, b) for r in scene.reflectors)


def _check_endpoint(scene: Scene, p, name: str):
    for k, r in enumerate(scene.reflectors):
        if r.contains(p, tol=1e-6):
            raise GeometryError(f"{name} lies on reflector {k}")
    if scene.ground is not None and p[2] <= scene.ground.height:
        raise GeometryError(f"{name} is not above the ground plane")


def _make_path(scene: Scene, receiver: Pose, length: float, last_point, loss: float,
               is_los: bool) -> PathParam:
    lam = scene.wavelength
    gain = loss * lam / (4 * np.pi * length) * np.exp(-2j * np.pi * length / lam)
    az, el = angles_from_direction(local_arrival_direction(receiver, last_point))
    return PathParam(gain, length / SPEED_OF_LIGHT, az, el, is_los)


def generate_paths(scene: Scene, cru_position, receiver: Receiver | str = Receiver.AT_RSU,
                   cru_pose: Pose | None = None) -> list[PathParam]:
    """LoS (if unblocked) plus one single-bounce path per visible surface.

    Angles are measured in the local frame of the chosen receiver. The CRU
    frame defaults to the identity rotation. Paths are sorted by delay.
    """
    receiver = Receiver(receiver)
    x_rsu = scene.rsu.position
    x_cru = np.asarray(cru_position, dtype=float).reshape(3)
    if np.linalg.norm(x_cru - x_rsu) < _EPS:
        raise GeometryError("CRU and RSU are co-located")
    _check_endpoint(scene, x_rsu, "RSU")
    _check_endpoint(scene, x_cru, "CRU")
    cru_pose = Pose(x_cru) if cru_pose is None else Pose(x_cru, cru_pose.rotation)
    rx_pose, rx, tx = (scene.rsu, x_rsu, x_cru) if receiver is Receiver.AT_RSU \
        else (cru_pose, x_cru, x_rsu)
    paths = []
    if not _blocked(scene, tx, rx):
        paths.append(_make_path(scene, rx_pose, float(np.linalg.norm(rx - tx)), tx, 1.0, True))
    for r in scene.reflectors:
        img = r.mirror(tx)
        _, _, n_img = r.local_coords(img)
        _, _, n_rx = r.local_coords(rx)
        if n_img * n_rx >= 0:
            continue  # endpoints on opposite sides: no specular point
        t = n_img / (n_img - n_rx)
        p = img + t * (rx - img)
        u, h, _ = r.local_coords(p)
        if not (0.0 <= u <= r.length and 0.0 <= h <= r.height):
            continue
        if _blocked(scene, tx, p, skip=r) or _blocked(scene, p, rx, skip=r):
            continue
        paths.append(_make_path(scene, rx_pose, float(np.linalg.norm(rx - img)), p, r.loss, False))
    if scene.ground is not None:
        g = scene.ground
        img = g.mirror(tx)
        t = (img[2] - g.height) / (img[2] - rx[2])
        p = img + t * (rx - img)
        if not (_blocked(scene, tx, p) or _blocked(scene, p, rx)):
            paths.append(_make_path(scene, rx_pose, float(np.linalg.norm(rx - img)), p, g.loss, False))
    paths.sort(key=lambda q: q.delay)
    return paths


def export_paths(paths, file) -> None:
    """Write paths to CSV (``file`` is a path or a text stream)."""
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATH_CSV_HEADER)
        for p in paths:
            w.writerow([repr(p.gain.real), repr(p.gain.imag), repr(p.delay), repr(p.azimuth),
                        repr(p.elevation), "1" if p.is_los else "0"])

    if isinstance(file, io.TextIOBase):
        write(file)
    else:
        with open(file, "w", encoding="utf-8", newline="") as fh:
            write(fh)


_BOOL = {"1": True, "0": False, "true": True, "false": False}


def import_paths(file) -> list[PathParam]:
    """Read a path-list CSV; errors name the offending (1-based, header = 1) row."""
    if isinstance(file, io.TextIOBase):
        text = file.read()
    else:
        text = Path(file).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != PATH_CSV_HEADER:
        raise ValueError(f"row 1: header must be {','.join(PATH_CSV_HEADER)}")
    out = []
    for k, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(PATH_CSV_HEADER):
            raise ValueError(f"row {k}: expected {len(PATH_CSV_HEADER)} fields, got {len(row)}")
        try:
            g_re, g_im, tau, az, el = (float(c) for c in row[:5])
            flag = _BOOL[row[5].strip().lower()]
            out.append(PathParam(complex(g_re, g_im), tau, az, el, flag))
        except (ValueError, KeyError) as exc:
            raise ValueError(f"row {k}: {exc}") from None
    return out


def downward_rsu(position, along_road_yaw: float = math.pi / 2) -> Pose:
    """RSU pose whose array faces straight down with local x along the road.

    ``along_road_yaw`` is the global heading of the road (local x axis).
    """
    c, s = math.cos(along_road_yaw), math.sin(along_road_yaw)
    x_ax = np.array([c, s, 0.0])
    y_ax = np.array([0.0, 0.0, -1.0])
    m = np.column_stack([x_ax, y_ax, np.cross(x_ax, y_ax)])
    yaw, pitch, roll = Rotation.from_matrix(m).as_euler("ZYX")
    return Pose(position, (roll, pitch, yaw))


def urban_scene(wall_loss: float = 0.3, ground_loss: float = 0.4) -> Scene:
    """Intersection with four 50 m x 50 m x 30 m buildings centred at (+-45, +-45).

    Only the street-facing walls are modelled; RSU at (0, 0, 10) looking down
    with its horizontal array axis diagonal to both streets, which keeps far
    vehicles away from endfire.
    """
    walls = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            walls.append(Reflector((20.0 * sx, 20.0 * sy, 0.0), (0.0, 50.0 * sy), 30.0, wall_loss))
            walls.append(Reflector((20.0 * sx, 20.0 * sy, 0.0), (50.0 * sx, 0.0), 30.0, wall_loss))
    return Scene(downward_rsu((0.0, 0.0, 10.0), math.pi / 4), tuple(walls), Ground(ground_loss), 1.5)


def urban_vehicle_trajectory() -> Trajectory:
    return Trajectory(((1.6, -70.0, 1.5), (1.6, 70.0, 1.5)), 14.0, 0.1)


def highway_scene(barrier_loss: float = 0.9, ground_loss: float = 0.3) -> Scene:
    """Straight highway along x with 0.75 m roadside barriers; RSU at (0, 0, 5), array axis diagonal."""
    barriers = (
        Reflector((-400.0, 12.5, 0.0), (450.0, 0.0), 0.75, barrier_loss),
        Reflector((-400.0, -16.5, 0.0), (260.0, 0.0), 0.75, barrier_loss),
    )
    return Scene(downward_rsu((0.0, 0.0, 5.0), math.pi / 4), barriers,
                 Ground(ground_loss), 1.5)


def highway_trajectories() -> tuple[Trajectory, Trajectory]:
    straight = Trajectory(((-360.0, -6.0, 1.5), (0.0, -6.0, 1.5)), 36.0, 0.1)
    merging = Trajectory(((-132.0, -98.0, 1.5), (-103.0, -69.4, 1.5), (0.0, -10.0, 1.5)),
                         19.4, 0.1)
    return straight, merging


SCENES = {"urban": urban_scene, "highway": highway_scene}
