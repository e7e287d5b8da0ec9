"""Synthetic egocentric camera scenarios for perimeter monitoring.

An agent drives a rounded rectangular loop around a central building inside
a walled arena. Frames are a column projection of the scene: sky, wall band
(outer walls and building faces shaded per face), floor gradient, and
pedestrians drawn as distance-scaled billboards. Scenario ``"II"`` places
static pedestrians on the loop; the agent detours around each one and the
frames from the trigger point to the rejoin point are labeled novel.
"""
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pgm
from .errors import ConfigError, DataError

KNOWN, NOVEL = "known", "novel"


@dataclass
class WorldConfig:
    arena: tuple = (22.0, 16.0)
    building: tuple = (6.0, 5.0, 16.0, 11.0)  # x0, y0, x1, y1
    loop: tuple = (3.0, 2.5, 19.0, 13.5)
    corner_radius: float = 1.5
    frame_size: tuple = (24, 24)  # width, height
    speed: float = 0.15
    laps: int = 3
    scenario: str = "I"
    obstacles: tuple = ((11.0, 2.5), (11.0, 13.5))
    obstacle_shades: tuple = (0.05, 0.95)
    seed: int = 0
    noise_sigma: float = 0.0
    fov_deg: float = 70.0
    camera_height: float = 1.0
    wall_height: float = 2.0
    pedestrian_height: float = 1.7
    pedestrian_radius: float = 0.45
    visibility: float = 3.5
    fade: float = 1.0
    # detour profile, arc-length offsets relative to the obstacle
    trigger: float = 3.5
    veer: float = 3.0
    hold_start: float = 1.0
    hold_end: float = 1.5
    rejoin: float = 3.5
    detour_offset: float = 1.2
    supersample: int = 3
    texture_amp: float = 0.08
    texture_period: float = 7.0


@dataclass
class Pose:
    x: float
    y: float
    heading: float


@dataclass
class LabeledSequence:
    frames: np.ndarray
    labels: list
    poses: list
    config: WorldConfig = field(repr=False, default=None)

    def __len__(self):
        return len(self.labels)

    @property
    def novel_mask(self):
        return np.array([lab == NOVEL for lab in self.labels], dtype=bool)

    def novel_segments(self):
        return mask_segments(self.novel_mask)


def mask_segments(mask):
    """Maximal ``[start, stop)`` runs of ``True``."""
    segs = []
    start = None
    for i, m in enumerate(list(mask) + [False]):
        if m and start is None:
            start = i
        elif not m and start is not None:
            segs.append((start, i))
            start = None
    return segs


class LoopPath:
    """Counter-clockwise rounded rectangle parameterized by arc length."""

    def __init__(self, loop, radius):
        x0, y0, x1, y1 = loop
        r = radius
        self.pieces = []  # (kind, length, params)
        straights = [
            ((x0 + r, y0), (x1 - r, y0)),
            ((x1, y0 + r), (x1, y1 - r)),
            ((x1 - r, y1), (x0 + r, y1)),
            ((x0, y1 - r), (x0, y0 + r)),
        ]
        centers = [(x1 - r, y0 + r), (x1 - r, y1 - r), (x0 + r, y1 - r), (x0 + r, y0 + r)]
        for k in range(4):
            (ax, ay), (bx, by) = straights[k]
            self.pieces.append(("line", math.hypot(bx - ax, by - ay), (ax, ay, bx, by)))
            self.pieces.append(("arc", 0.5 * math.pi * r, (centers[k], r, -0.5 * math.pi + k * 0.5 * math.pi)))
        self.length = sum(p[1] for p in self.pieces)

    def at(self, s):
        """Position and heading at arc length ``s`` (wrapped)."""
        s = s % self.length
        for kind, length, par in self.pieces:
            if s <= length or (kind, length, par) == self.pieces[-1]:
                if kind == "line":
                    ax, ay, bx, by = par
                    t = s / length
                    return ax + t * (bx - ax), ay + t * (by - ay), math.atan2(by - ay, bx - ax)
                (cx, cy), r, a0 = par
                a = a0 + s / r
                return cx + r * math.cos(a), cy + r * math.sin(a), a + 0.5 * math.pi
            s -= length
        raise AssertionError("unreachable")

    def project(self, x, y):
        """Arc length of the loop point nearest to ``(x, y)`` and its distance."""
        grid = np.linspace(0.0, self.length, 4000, endpoint=False)
        pts = np.array([self.at(s)[:2] for s in grid])
        d = np.hypot(pts[:, 0] - x, pts[:, 1] - y)
        i = int(np.argmin(d))
        return float(grid[i]), float(d[i])


def _smoothstep(t):
    t = min(max(t, 0.0), 1.0)
    return t * t * (3.0 - 2.0 * t)


def _smoothstep_slope(t):
    if t <= 0.0 or t >= 1.0:
        return 0.0
    return 6.0 * t * (1.0 - t)


class World:
    def __init__(self, config):
        self.cfg = config
        self.path = LoopPath(config.loop, config.corner_radius)
        self._validate()
        self.obstacle_s = []
        if config.scenario == "II":
            for ox, oy in config.obstacles:
                s, d = self.path.project(ox, oy)
                if d > 0.05:
                    raise ConfigError(f"obstacle ({ox}, {oy}) lies {d:.2f} cells off the loop")
                self.obstacle_s.append(s)
        w, h = config.frame_size
        self._cols = (np.arange(w * config.supersample) + 0.5) / (w * config.supersample) * 2.0 - 1.0
        self._tan_half = math.tan(math.radians(config.fov_deg) / 2.0)
        self._focal = (h / 2.0) / self._tan_half
        self._segments = self._wall_segments()

    def _validate(self):
        c = self.cfg
        if c.scenario not in ("I", "II"):
            raise ConfigError(f"scenario must be 'I' or 'II', got {c.scenario!r}")
        if c.speed <= 0 or c.laps < 1:
            raise ConfigError("speed and laps must be positive")
        if not (0 < c.hold_start < c.veer <= c.trigger and 0 < c.hold_end < c.rejoin):
            raise ConfigError("detour profile must satisfy 0 < hold_start < veer <= trigger and 0 < hold_end < rejoin")
        if min(c.frame_size) < 4:
            raise ConfigError("frame size too small")

    def _wall_segments(self):
        aw, ah = self.cfg.arena
        bx0, by0, bx1, by1 = self.cfg.building
        # (x0, y0, x1, y1, base shade, texture phase)
        return [
            (0.0, 0.0, aw, 0.0, 0.42, 0.0),
            (aw, 0.0, aw, ah, 0.30, 1.3),
            (aw, ah, 0.0, ah, 0.48, 2.1),
            (0.0, ah, 0.0, 0.0, 0.36, 3.7),
            (bx0, by0, bx1, by0, 0.78, 0.7),
            (bx1, by0, bx1, by1, 0.66, 2.9),
            (bx1, by1, bx0, by1, 0.86, 4.4),
            (bx0, by1, bx0, by0, 0.72, 5.3),
        ]

    # -- poses ---------------------------------------------------------
    def _offset(self, s):
        """Lateral detour offset (toward the outer wall) and its slope at arc length ``s``."""
        c = self.cfg
        total_off, total_slope = 0.0, 0.0
        for so in self.obstacle_s:
            u = (s - so + 0.5 * self.path.length) % self.path.length - 0.5 * self.path.length
            if -c.veer <= u < -c.hold_start:
                span = c.veer - c.hold_start
                t = (u + c.veer) / span
                total_off += c.detour_offset * _smoothstep(t)
                total_slope += c.detour_offset * _smoothstep_slope(t) / span
            elif -c.hold_start <= u <= c.hold_end:
                total_off += c.detour_offset
            elif c.hold_end < u <= c.rejoin:
                span = c.rejoin - c.hold_end
                t = (u - c.hold_end) / span
                total_off += c.detour_offset * (1.0 - _smoothstep(t))
                total_slope -= c.detour_offset * _smoothstep_slope(t) / span
        return total_off, total_slope

    def _is_novel(self, s):
        c = self.cfg
        for so in self.obstacle_s:
            u = (s - so + 0.5 * self.path.length) % self.path.length - 0.5 * self.path.length
            if -c.trigger <= u <= c.rejoin:
                return True
        return False

    def pose_at(self, s):
        x, y, th = self.path.at(s)
        off, slope = self._offset(s)
        # right-hand normal points away from the building on a ccw loop
        nx, ny = math.sin(th), -math.cos(th)
        return Pose(x + off * nx, y + off * ny, th - math.atan(slope))

    def trajectory(self):
        """Arc-length samples so that the travelled distance per frame equals ``speed``."""
        c = self.cfg
        end = c.laps * self.path.length
        s = 0.0
        out = []
        while s < end - 1e-9:
            out.append(s)
            _, slope = self._offset(s)
            # travelled distance ~ ds * sqrt(1 + slope^2) on straights
            s += c.speed / math.sqrt(1.0 + slope * slope)
        return out

    # -- rendering -----------------------------------------------------
    def _in_arena(self, pose):
        aw, ah = self.cfg.arena
        bx0, by0, bx1, by1 = self.cfg.building
        inside = 0.0 < pose.x < aw and 0.0 < pose.y < ah
        in_building = bx0 <= pose.x <= bx1 and by0 <= pose.y <= by1
        return inside and not in_building

    def _column_pose(self):
        return self._cols * self._tan_half

    def render(self, pose, obstacles=None):
        """Render the egocentric view from ``pose`` as an ``(H, W)`` array in ``[0, 1]``."""
        c = self.cfg
        if not self._in_arena(pose):
            raise DataError(f"pose ({pose.x:.2f}, {pose.y:.2f}) is outside the drivable arena")
        if obstacles is None:
            obstacles = [(o, shade) for o, shade in zip(c.obstacles, c.obstacle_shades)] if c.scenario == "II" else []
        w, h = c.frame_size
        ss = c.supersample
        fx, fy = math.cos(pose.heading), math.sin(pose.heading)
        rx, ry = math.sin(pose.heading), -math.cos(pose.heading)
        offs = self._column_pose()
        dx = fx + offs * rx
        dy = fy + offs * ry

        # nearest wall hit per ray; ``depth`` is distance along the forward axis
        depth = np.full(offs.shape, np.inf)
        shade = np.zeros(offs.shape)
        for x0, y0, x1, y1, base, phase in self._segments:
            ex, ey = x1 - x0, y1 - y0
            den = dx * ey - dy * ex
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((x0 - pose.x) * ey - (y0 - pose.y) * ex) / den
                u = ((x0 - pose.x) * dy - (y0 - pose.y) * dx) / den
            hit = (np.abs(den) > 1e-12) & (t > 1e-6) & (u >= 0.0) & (u <= 1.0) & (t < depth)
            seg_len = math.hypot(ex, ey)
            tex = base + c.texture_amp * np.sin(2.0 * math.pi * u * seg_len / c.texture_period + phase)
            depth = np.where(hit, t, depth)
            shade = np.where(hit, tex, shade)
        fog = 1.0 / (1.0 + 0.04 * depth)
        wall_shade = 0.55 + (shade - 0.55) * fog

        rows = np.arange(h) + 0.5
        horizon = h / 2.0
        f = self._focal
        top = horizon - f * (c.wall_height - c.camera_height) / depth
        bot = horizon + f * c.camera_height / depth
        img = self._background(rows, horizon)[:, None].repeat(offs.size, axis=1)
        # floor tint follows the absolute ray bearing, so it rotates with the heading
        bearing = np.arctan2(dy, dx)
        img = img + np.where(rows[:, None] > horizon, 0.06 * np.sin(bearing)[None, :], 0.0)
        cover = _coverage(rows, top, bot)
        img = img * (1.0 - cover) + wall_shade[None, :] * cover

        for (ox, oy), ped_shade in obstacles:
            vx, vy = ox - pose.x, oy - pose.y
            fwd = vx * fx + vy * fy
            dist = math.hypot(vx, vy)
            if fwd <= 0.2 or dist > c.visibility:
                continue
            # pops in at a fifth of full opacity, then fades up
            alpha_fade = min(1.0, 0.2 + (c.visibility - dist) / c.fade)
            lat = vx * rx + vy * ry
            # horizontal extent on the image plane, in column units of [-1, 1]
            centre = lat / fwd / self._tan_half
            half = c.pedestrian_radius / fwd / self._tan_half
            colcov = np.clip((half - np.abs(offs - centre)) * (w * ss) / 2.0 + 0.5, 0.0, 1.0)
            colcov = np.where(fwd < depth, colcov, 0.0)
            ptop = horizon - f * (c.pedestrian_height - c.camera_height) / fwd
            pbot = horizon + f * c.camera_height / fwd
            pc = _coverage(rows, np.full(offs.shape, ptop), np.full(offs.shape, pbot))
            a = alpha_fade * pc * colcov[None, :]
            # lighter head band on the top fifth of the figure
            head = np.clip((ptop + 0.2 * (pbot - ptop) - rows) + 0.5, 0.0, 1.0)[:, None]
            figure = ped_shade * (1.0 - head) + 0.6 * head
            img = img * (1.0 - a) + figure * a

        img = img.reshape(h, w, ss).mean(axis=2)
        return np.clip(img, 0.0, 1.0)

    @staticmethod
    def _background(rows, horizon):
        sky = 0.92 - 0.25 * (rows / horizon)
        floor = 0.18 + 0.30 * (rows - horizon) / horizon
        return np.where(rows < horizon, sky, floor)

    def generate(self):
        c = self.cfg
        rng = np.random.default_rng(c.seed)
        samples = self.trajectory()
        poses = [self.pose_at(s) for s in samples]
        frames = np.stack([self.render(p) for p in poses])
        if c.noise_sigma > 0:
            frames = np.clip(frames + rng.normal(0.0, c.noise_sigma, frames.shape), 0.0, 1.0)
        labels = [NOVEL if self._is_novel(s) else KNOWN for s in samples]
        return LabeledSequence(frames, labels, poses, c)


def _coverage(rows, top, bot):
    """Fractional coverage of pixel rows centred at ``rows`` by spans ``[top, bot]`` per column."""
    r = rows[:, None]
    lo = np.clip(r - 0.5, top[None, :], bot[None, :])
    hi = np.clip(r + 0.5, top[None, :], bot[None, :])
    return np.clip(hi - lo, 0.0, 1.0)


def render_frame(pose, world):
    return world.render(pose)


def generate_scenario(config):
    return World(config).generate()


def write_dataset(seq, directory):
    """Write ``frames/frame_%06d.pgm``, ``labels.csv`` and ``poses.csv``."""
    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(seq.frames):
        pgm.write_pgm(directory / "frames" / f"frame_{i:06d}.pgm", fr)
    with open(directory / "labels.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame_idx", "label"])
        for i, lab in enumerate(seq.labels):
            wr.writerow([i, lab])
    with open(directory / "poses.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame_idx", "x", "y", "heading"])
        for i, p in enumerate(seq.poses):
            wr.writerow([i, f"{p.x:.6f}", f"{p.y:.6f}", f"{p.heading:.6f}"])


def read_labels(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if any(int(r["frame_idx"]) != i for i, r in enumerate(rows)):
        raise DataError(f"{path}: frame indices are not contiguous from 0")
    return [r["label"] for r in rows]


def load_dataset(directory):
    directory = Path(directory)
    frames = pgm.read_frame_dir(directory / "frames")
    labels = read_labels(directory / "labels.csv")
    if len(labels) != frames.shape[0]:
        raise DataError(f"{directory}: {frames.shape[0]} frames but {len(labels)} labels")
    return frames, labels
