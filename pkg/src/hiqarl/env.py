"""Deterministic 2-D navigation arena with one adversarial obstacle.

The quadruped's locomotion layer is stood in for by a first-order velocity
tracker: body-frame velocity relaxes toward the commanded velocity with time
constant ``tau_loc``. All geometry is in metres, boxes are axis aligned and
stored as ``(xmin, ymin, xmax, ymax)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._accel import njit, pick

HORIZON = 1000
TARGET_RADIUS = 0.5
HISTORY = 3
SNAPSHOT_DIM = 11
NAV_OBS_DIM = HISTORY * SNAPSHOT_DIM
ADV_OBS_DIM = 7
NAV_ACTION_DIM = 3
ADV_ACTION_DIM = 1

# Reward weights, one entry per table row.
W_MOVE = 1.0
W_HEADING = 0.5
W_REACH = 10.0
W_COLLIDE_OBSTACLE = -10.0
W_COLLIDE_WALL = -5.0
W_STALL = -10.0
STALL_SPEED = 0.1
# The tabled heading term reads exp(+|yaw error|); we use exp(-|yaw error|).
# Flip this to +1.0 to get the literal expression back.
HEADING_EXP_SIGN = -1.0

ROBOT_LENGTH = 0.6
ROBOT_WIDTH = 0.3


class LayoutError(ValueError):
    pass


class EpisodeDone(RuntimeError):
    pass


class TerminalReason(str, enum.Enum):
    NONE = "none"
    HORIZON = "horizon"
    REACHED_AND_HELD = "reached_and_held"


@dataclass(frozen=True)
class DynamicsConfig:
    dt: float = 0.05
    v_max: float = 1.0
    omega_max: float = 1.5
    v_obs_max: float = 1.0
    tau_loc: float = 0.2
    horizon: int = HORIZON

    def __post_init__(self):
        for name in ("dt", "v_max", "omega_max", "v_obs_max", "tau_loc"):
            if not getattr(self, name) > 0:
                raise LayoutError(f"dynamics.{name} must be > 0")
        if self.horizon < 1:
            raise LayoutError("dynamics.horizon must be >= 1")


def _box(b) -> tuple:
    b = tuple(float(v) for v in b)
    if len(b) != 4 or not (b[0] < b[2] and b[1] < b[3]):
        raise LayoutError(f"box must be (xmin, ymin, xmax, ymax) with positive extent, got {b}")
    return b


@dataclass(frozen=True)
class ArenaLayout:
    bounds: tuple = (-5.0, -3.0, 5.0, 3.0)
    target: tuple = (4.0, 0.0)
    target_radius: float = TARGET_RADIUS
    track: tuple = ((0.0, -1.5), (0.0, 1.5))
    obstacle_half: tuple = (0.25, 0.5)
    static_boxes: tuple = ()
    # (xmin, ymin, xmax, ymax, yaw_min, yaw_max)
    spawn: tuple = (-4.5, -1.0, -3.5, 1.0, -math.pi / 4, math.pi / 4)

    def __post_init__(self):
        object.__setattr__(self, "bounds", _box(self.bounds))
        object.__setattr__(self, "static_boxes", tuple(_box(b) for b in self.static_boxes))
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))
        object.__setattr__(self, "track", tuple(tuple(float(v) for v in p) for p in self.track))
        object.__setattr__(self, "obstacle_half", tuple(float(v) for v in self.obstacle_half))
        object.__setattr__(self, "spawn", tuple(float(v) for v in self.spawn))
        self.validate()

    def validate(self):
        xmin, ymin, xmax, ymax = self.bounds

        def inside(p):
            return xmin < p[0] < xmax and ymin < p[1] < ymax

        if len(self.spawn) != 6:
            raise LayoutError("spawn must be (xmin, ymin, xmax, ymax, yaw_min, yaw_max)")
        sx0, sy0, sx1, sy1, yaw0, yaw1 = self.spawn
        if not (sx0 <= sx1 and sy0 <= sy1 and yaw0 <= yaw1):
            raise LayoutError("spawn region has inverted limits")
        if not (inside((sx0, sy0)) and inside((sx1, sy1))):
            raise LayoutError("spawn region must lie strictly inside bounds")
        if not inside(self.target):
            raise LayoutError("target must lie strictly inside bounds")
        if not self.target_radius > 0:
            raise LayoutError("target_radius must be > 0")
        if len(self.track) != 2 or not all(inside(p) for p in self.track):
            raise LayoutError("obstacle track must lie strictly inside bounds")
        if min(self.obstacle_half) <= 0:
            raise LayoutError("obstacle half extents must be > 0")
        spawn_box = (sx0 - ROBOT_LENGTH / 2, sy0 - ROBOT_LENGTH / 2, sx1 + ROBOT_LENGTH / 2, sy1 + ROBOT_LENGTH / 2)
        for b in self.static_boxes:
            if boxes_overlap(b, spawn_box):
                raise LayoutError(f"static box {b} overlaps the spawn region")
            d, _ = aabb_distance(self.target, b)
            if d < self.target_radius:
                raise LayoutError(f"static box {b} overlaps the target disc")

    @property
    def track_length(self) -> float:
        (x0, y0), (x1, y1) = self.track
        return math.hypot(x1 - x0, y1 - y0)

    @property
    def track_axis(self) -> np.ndarray:
        (x0, y0), (x1, y1) = self.track
        length = self.track_length
        if length == 0.0:
            return np.array([0.0, 1.0])
        return np.array([(x1 - x0) / length, (y1 - y0) / length])

    def track_point(self, s: float) -> np.ndarray:
        """Point at arc length ``s`` from the first track end (clamped)."""
        s = min(max(s, 0.0), self.track_length)
        return np.asarray(self.track[0]) + s * self.track_axis

    def swept_obstacle_box(self) -> tuple:
        """Bounding box of every position the obstacle can occupy."""
        (x0, y0), (x1, y1) = self.track
        hx, hy = self.obstacle_half
        return (min(x0, x1) - hx, min(y0, y1) - hy, max(x0, x1) + hx, max(y0, y1) + hy)

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds), "target": list(self.target), "target_radius": self.target_radius,
            "track": [list(p) for p in self.track], "obstacle_half": list(self.obstacle_half),
            "static_boxes": [list(b) for b in self.static_boxes], "spawn": list(self.spawn),
        }


@dataclass(frozen=True)
class BodyState:
    position: np.ndarray
    yaw: float
    # velocity in the body frame: x forward, y left
    body_velocity: np.ndarray
    angular_velocity: float

    @property
    def linear_velocity(self) -> np.ndarray:
        """World-frame linear velocity."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        vx, vy = self.body_velocity
        return np.array([c * vx - s * vy, s * vx + c * vy])

    @property
    def speed(self) -> float:
        return float(math.hypot(self.body_velocity[0], self.body_velocity[1]))


@dataclass(frozen=True)
class ObstacleState:
    center: np.ndarray
    s: float  # arc length along the track
    lateral_velocity: float
    half_extents: tuple

    def box(self) -> tuple:
        hx, hy = self.half_extents
        return (self.center[0] - hx, self.center[1] - hy, self.center[0] + hx, self.center[1] + hy)


@dataclass(frozen=True)
class Collisions:
    obstacle: bool = False
    wall: bool = False


@dataclass
class StepOutcome:
    nav_obs: np.ndarray
    adv_obs: np.ndarray
    nav_reward: float
    adv_reward: float
    terminal: bool
    terminal_reason: TerminalReason
    collisions: Collisions
    body: BodyState = field(repr=False)
    obstacle: ObstacleState = field(repr=False)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return float(a)
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


# --------------------------------------------------------------------------
# geometry kernels


def _dist_boxes_kernel(px, py, boxes):
    n = boxes.shape[0]
    out = np.empty((n, 3))
    for i in range(n):
        cx = min(max(px, boxes[i, 0]), boxes[i, 2])
        cy = min(max(py, boxes[i, 1]), boxes[i, 3])
        dx = cx - px
        dy = cy - py
        out[i, 0] = math.sqrt(dx * dx + dy * dy)
        out[i, 1] = dx
        out[i, 2] = dy
    return out


def _dist_boxes_numpy(px, py, boxes):
    cx = np.clip(px, boxes[:, 0], boxes[:, 2])
    cy = np.clip(py, boxes[:, 1], boxes[:, 3])
    dx, dy = cx - px, cy - py
    return np.stack([np.hypot(dx, dy), dx, dy], axis=1)


def _overlap_kernel(box, boxes):
    n = boxes.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        out[i] = (box[0] < boxes[i, 2] and boxes[i, 0] < box[2]
                  and box[1] < boxes[i, 3] and boxes[i, 1] < box[3])
    return out


def _overlap_numpy(box, boxes):
    return ((box[0] < boxes[:, 2]) & (boxes[:, 0] < box[2])
            & (box[1] < boxes[:, 3]) & (boxes[:, 1] < box[3]))


_dist_boxes = pick(njit(_dist_boxes_kernel), _dist_boxes_numpy)
_overlap = pick(njit(_overlap_kernel), _overlap_numpy)


def aabb_distance(point, box) -> tuple[float, np.ndarray]:
    """Distance and vector from ``point`` to the closest point of ``box`` (zero inside)."""
    row = _dist_boxes(float(point[0]), float(point[1]), np.asarray([box], dtype=np.float64))[0]
    return float(row[0]), np.array([row[1], row[2]])


def boxes_overlap(a, b) -> bool:
    """Open-interval overlap test: touching boxes do not overlap."""
    return bool(_overlap(np.asarray(a, dtype=np.float64), np.asarray([b], dtype=np.float64))[0])


def robot_box(position, yaw: float) -> tuple:
    """Footprint aligned to whichever world axis the heading is closest to."""
    if abs(math.cos(yaw)) >= abs(math.sin(yaw)):
        hx, hy = ROBOT_LENGTH / 2, ROBOT_WIDTH / 2
    else:
        hx, hy = ROBOT_WIDTH / 2, ROBOT_LENGTH / 2
    x, y = float(position[0]), float(position[1])
    return (x - hx, y - hy, x + hx, y + hy)


def box_in_bounds(box, bounds) -> bool:
    return bounds[0] <= box[0] and bounds[1] <= box[1] and box[2] <= bounds[2] and box[3] <= bounds[3]


def collision_flags(robot, obstacle_box, static_boxes, bounds) -> Collisions:
    """Contact flags for one robot footprint against the obstacles and the walls."""
    boxes = np.asarray([obstacle_box, *static_boxes], dtype=np.float64) if obstacle_box is not None \
        else np.asarray(static_boxes, dtype=np.float64).reshape(-1, 4)
    hit = bool(_overlap(np.asarray(robot, dtype=np.float64), boxes).any()) if len(boxes) else False
    return Collisions(obstacle=hit, wall=not box_in_bounds(robot, bounds))


# --------------------------------------------------------------------------
# dynamics and rewards


def low_level_track(cmd, state: BodyState, dt: float, dyn: DynamicsConfig = DynamicsConfig()) -> BodyState:
    """First-order velocity tracking of a normalised (vx, vy, wz) command, then pose integration."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    cmd = np.clip(np.asarray(cmd, dtype=np.float64), -1.0, 1.0)
    gain = 1.0 - math.exp(-dt / dyn.tau_loc)
    target_v = cmd[:2] * dyn.v_max
    v = state.body_velocity + (target_v - state.body_velocity) * gain
    w = state.angular_velocity + (cmd[2] * dyn.omega_max - state.angular_velocity) * gain
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    world_v = np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])
    return BodyState(position=state.position + world_v * dt, yaw=wrap_angle(state.yaw + w * dt),
                     body_velocity=v, angular_velocity=w)


def nav_reward(prev: BodyState, cur: BodyState, layout: ArenaLayout, collisions: Collisions, at_step: int = 0) -> float:
    """Navigation reward for arriving in ``cur``; ``prev`` and ``at_step`` are kept for the call contract."""
    heading = np.array([math.cos(cur.yaw), math.sin(cur.yaw)])
    to_target = np.asarray(layout.target) - cur.position
    dist = float(math.hypot(*to_target))
    bearing = math.atan2(to_target[1], to_target[0])
    r = W_MOVE * float(heading @ cur.linear_velocity)
    r += W_HEADING * math.exp(HEADING_EXP_SIGN * abs(wrap_angle(cur.yaw - bearing)))
    if dist <= layout.target_radius:
        r += W_REACH
    r += W_COLLIDE_OBSTACLE * collisions.obstacle + W_COLLIDE_WALL * collisions.wall
    if dist > layout.target_radius and cur.speed < STALL_SPEED:
        r += W_STALL
    return r


def adv_reward(body: BodyState, obstacle: ObstacleState, axis=(0.0, 1.0)) -> float:
    """exp(-|lateral offset|) between robot and obstacle, measured along the track axis."""
    d = body.position - obstacle.center
    return math.exp(-abs(float(d[0] * axis[0] + d[1] * axis[1])))


# --------------------------------------------------------------------------
# the arena


class Arena:
    """Single-threaded two-player episode state machine."""

    def __init__(self, layout: ArenaLayout | None = None, dyn: DynamicsConfig | None = None):
        self.layout = layout if layout is not None else ArenaLayout()
        self.dyn = dyn if dyn is not None else DynamicsConfig()
        self._static = np.asarray(self.layout.static_boxes, dtype=np.float64).reshape(-1, 4)
        self.body: BodyState | None = None
        self.obstacle: ObstacleState | None = None
        self.t = 0
        self.done = True
        self._hist = None

    # observations -------------------------------------------------------

    def nearest_obstacle_vector(self, position, obstacle: ObstacleState) -> np.ndarray:
        boxes = np.vstack([np.asarray(obstacle.box())[None, :], self._static])
        rows = _dist_boxes(float(position[0]), float(position[1]), boxes)
        i = int(np.argmin(rows[:, 0]))
        return rows[i, 1:].copy()

    def _snapshot(self) -> np.ndarray:
        b = self.body
        to_target = np.asarray(self.layout.target) - b.position
        return np.concatenate([
            b.position, [math.cos(b.yaw), math.sin(b.yaw)], b.linear_velocity, [b.angular_velocity],
            to_target, self.nearest_obstacle_vector(b.position, self.obstacle),
        ])

    def adv_observation(self) -> np.ndarray:
        o, b = self.obstacle, self.body
        return np.concatenate([o.center, [o.lateral_velocity], b.position - o.center, b.linear_velocity])

    def nav_observation(self) -> np.ndarray:
        return self._hist.ravel().copy()

    # episode ------------------------------------------------------------

    def reset(self, seed: int, obstacle_s: float | None = None):
        """Start an episode; the spawn pose is uniform in the spawn region given ``seed``.

        ``obstacle_s`` places the obstacle at that arc length, default is the track midpoint.
        """
        rng = np.random.Generator(np.random.Philox(int(seed)))
        sx0, sy0, sx1, sy1, yaw0, yaw1 = self.layout.spawn
        pos = np.array([rng.uniform(sx0, sx1), rng.uniform(sy0, sy1)])
        yaw = wrap_angle(rng.uniform(yaw0, yaw1))
        self.body = BodyState(position=pos, yaw=yaw, body_velocity=np.zeros(2), angular_velocity=0.0)
        s = 0.5 * self.layout.track_length if obstacle_s is None else obstacle_s
        s = min(max(float(s), 0.0), self.layout.track_length)
        self.obstacle = ObstacleState(center=self.layout.track_point(s), s=s, lateral_velocity=0.0,
                                      half_extents=self.layout.obstacle_half)
        if boxes_overlap(robot_box(pos, yaw), self.obstacle.box()):
            raise LayoutError("spawned robot overlaps the obstacle")
        self.t = 0
        self.done = False
        self._hist = np.tile(self._snapshot(), (HISTORY, 1))
        return self.body, self.obstacle, self.nav_observation(), self.adv_observation()

    def _blocked(self, box) -> bool:
        if len(self._static) and _overlap(np.asarray(box, dtype=np.float64), self._static).any():
            return True
        return boxes_overlap(box, self.obstacle.box())

    def _clamp_to_bounds(self, pos, yaw):
        bx0, by0, bx1, by1 = self.layout.bounds
        x0, y0, x1, y1 = robot_box(pos, yaw)
        hx, hy = (x1 - x0) / 2, (y1 - y0) / 2
        clamped = np.array([min(max(pos[0], bx0 + hx), bx1 - hx), min(max(pos[1], by0 + hy), by1 - hy)])
        return clamped, bool(clamped[0] != pos[0] or clamped[1] != pos[1])

    def step(self, nav_action, adv_action) -> StepOutcome:
        if self.done:
            raise EpisodeDone("step() called on a finished episode; call reset()")
        lay, dyn = self.layout, self.dyn
        prev = self.body
        hit_obstacle = False

        # obstacle moves first; it may not push into the robot
        a_adv = float(np.clip(np.ravel(adv_action)[0], -1.0, 1.0))
        s_new = min(max(self.obstacle.s + a_adv * dyn.v_obs_max * dyn.dt, 0.0), lay.track_length)
        moved = replace(self.obstacle, center=lay.track_point(s_new), s=s_new)
        if boxes_overlap(moved.box(), robot_box(prev.position, prev.yaw)):
            hit_obstacle = True
            moved = replace(self.obstacle, lateral_velocity=0.0)
        else:
            moved = replace(moved, lateral_velocity=(s_new - self.obstacle.s) / dyn.dt)
        self.obstacle = moved

        # robot: tracker proposal, wall clamp, then slide/stop against obstacles
        prop = low_level_track(nav_action, prev, dyn.dt, dyn)
        pos, hit_wall = self._clamp_to_bounds(prop.position, prop.yaw)
        vel = prop.body_velocity
        candidates = (
            (pos, prop.yaw),
            (np.array([pos[0], prev.position[1]]), prop.yaw),
            (np.array([prev.position[0], pos[1]]), prop.yaw),
            (prev.position, prop.yaw),
            (prev.position, prev.yaw),
        )
        chosen = None
        for i, (p, y) in enumerate(candidates):
            if not self._blocked(robot_box(p, y)) and (i == 0 or box_in_bounds(robot_box(p, y), lay.bounds)):
                chosen = (i, p, y)
                break
        if chosen is None:  # pragma: no cover - the previous pose is always free
            chosen = (4, prev.position, prev.yaw)
        idx, p, y = chosen
        if idx > 0:
            hit_obstacle = True
        if hit_wall or idx > 0:
            # realised world displacement decides what is left of the velocity
            c, s = math.cos(y), math.sin(y)
            disp = (p - prev.position) / dyn.dt
            vel = np.array([c * disp[0] + s * disp[1], -s * disp[0] + c * disp[1]])
            vel = np.clip(vel, -dyn.v_max, dyn.v_max)
        w = prop.angular_velocity if y == prop.yaw else 0.0
        self.body = BodyState(position=np.array(p, dtype=np.float64), yaw=y, body_velocity=vel, angular_velocity=w)

        self.t += 1
        col = Collisions(obstacle=hit_obstacle, wall=hit_wall)
        r_nav = nav_reward(prev, self.body, lay, col, self.t)
        r_adv = adv_reward(self.body, self.obstacle, lay.track_axis)
        self._hist = np.roll(self._hist, -1, axis=0)
        self._hist[-1] = self._snapshot()
        terminal = self.t >= dyn.horizon
        self.done = terminal
        return StepOutcome(
            nav_obs=self.nav_observation(), adv_obs=self.adv_observation(), nav_reward=r_nav,
            adv_reward=r_adv, terminal=terminal,
            terminal_reason=TerminalReason.HORIZON if terminal else TerminalReason.NONE,
            collisions=col, body=self.body, obstacle=self.obstacle,
        )

    def distance_to_target(self) -> float:
        return float(math.hypot(*(np.asarray(self.layout.target) - self.body.position)))


def reset(seed: int, layout: ArenaLayout, dyn: DynamicsConfig | None = None):
    """Functional form of :meth:`Arena.reset`."""
    return Arena(layout, dyn).reset(seed)
