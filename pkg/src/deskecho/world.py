"""2D top-down world model: scenes, materials, objects, agent kinematics, stepping.

The world is a rectilinear floorplan with axis-aligned walls. Heights are
scalar annotations (receptacle tops, end-effector lift), not a third
simulated dimension. All distances are meters, all angles radians.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import DegenerateScene

SCHEMA_VERSION = 1

# Planar 3-revolute-link arm (shoulder/elbow/wrist-roll) + prismatic lift +
# three unused wrist angles, keeping seven controllable joints total.
LINK_LENGTHS = (0.3, 0.3, 0.2)
ARM_REACH = sum(LINK_LENGTHS)
PRISMATIC_INDEX = 3
JOINT_LIMITS = (
    (-math.pi, math.pi),
    (-math.pi, math.pi),
    (-math.pi, math.pi),
    (0.0, 1.2),
    (-math.pi, math.pi),
    (-math.pi, math.pi),
    (-math.pi, math.pi),
)
MAX_JOINT_DELTA = 0.25          # per-step clamp, rad or meters
FORWARD_STEP = 0.5              # meters per MoveForward
TURN_STEP = math.pi / 2.0

SNAP_RADIUS = 0.15              # gripper-to-object grasp/attach threshold
DOOR_CLOSED_EPS = 1e-9          # joint angle at or below this blocks the doorway


def normalize_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class MaterialProperties:
    """Per-frequency-band acoustic coefficients, each in [0, 1]."""

    absorption: tuple[float, ...]
    transmission: tuple[float, ...]

    def __post_init__(self):
        if len(self.absorption) != len(self.transmission):
            raise ValueError("absorption/transmission band counts differ")
        for a, t in zip(self.absorption, self.transmission):
            if not (0.0 <= a <= 1.0 and 0.0 <= t <= 1.0):
                raise ValueError("band coefficients must lie in [0, 1]")
            if a + t > 1.0 + 1e-12:
                raise ValueError("absorption + transmission exceeds 1 in a band")


@dataclass(frozen=True)
class WallSegment:
    start: tuple[float, float]
    end: tuple[float, float]
    material: str

    def __post_init__(self):
        if not (math.isclose(self.start[0], self.end[0]) or math.isclose(self.start[1], self.end[1])):
            raise ValueError(f"wall {self.start}->{self.end} is not axis-aligned")


@dataclass(frozen=True)
class Receptacle:
    id: str
    rect: tuple[float, float, float, float]   # x0, y0, x1, y1 of the top surface
    height: float


@dataclass(frozen=True)
class DoorSpec:
    """Door leaf runs hinge->handle when closed; it rotates about the hinge.

    ``swing`` is +1 for counter-clockwise opening, -1 for clockwise.
    """

    id: str
    hinge: tuple[float, float]
    handle: tuple[float, float]
    swing: int
    material: str
    handle_height: float = 1.0
    joint_limits: tuple[float, float] = (0.0, math.pi / 2.0)

    def leaf_at(self, angle: float) -> tuple[tuple[float, float], tuple[float, float]]:
        """Leaf segment (hinge, free end) with the joint at ``angle``."""
        theta = self.swing * angle
        dx = self.handle[0] - self.hinge[0]
        dy = self.handle[1] - self.hinge[1]
        c, s = math.cos(theta), math.sin(theta)
        tip = (self.hinge[0] + c * dx - s * dy, self.hinge[1] + s * dx + c * dy)
        return self.hinge, tip

    def handle_at(self, angle: float) -> tuple[float, float]:
        return self.leaf_at(angle)[1]


@dataclass(frozen=True)
class SinkSpec:
    """Floor-standing sink: blocking footprint plus a rotary faucet handle."""

    id: str
    rect: tuple[float, float, float, float]
    handle: tuple[float, float]
    facing: float = 0.0            # outward normal of the interaction side
    handle_height: float = 0.85
    joint_limits: tuple[float, float] = (0.0, math.pi / 2.0)


@dataclass(frozen=True)
class Scene:
    scene_id: str
    bounds: tuple[float, float, float, float]
    cell_size: float
    materials: dict[str, MaterialProperties]
    walls: tuple[WallSegment, ...] = ()
    receptacles: tuple[Receptacle, ...] = ()
    doors: tuple[DoorSpec, ...] = ()
    sinks: tuple[SinkSpec, ...] = ()

    def __post_init__(self):
        x0, y0, x1, y1 = self.bounds
        if x1 <= x0 or y1 <= y0:
            raise DegenerateScene(f"bounds {self.bounds} enclose no area")
        bands = {len(m.absorption) for m in self.materials.values()}
        if len(bands) > 1:
            raise ValueError("materials disagree on band count")
        for w in self.walls:
            if w.material not in self.materials:
                raise ValueError(f"wall material {w.material!r} missing from table")
        for d in self.doors:
            if d.material not in self.materials:
                raise ValueError(f"door material {d.material!r} missing from table")
            # leaf runs hinge->handle, so the handle sits on the segment by
            # construction; reject only a zero-length leaf
            if math.dist(d.hinge, d.handle) < 1e-9:
                raise ValueError(f"door {d.id} leaf has zero length")
        for rect in self._footprints():
            if not _rect_inside((x0, y0, x1, y1), rect):
                raise ValueError(f"footprint {rect} outside bounds")

    def _footprints(self):
        for r in self.receptacles:
            yield r.rect
        for s in self.sinks:
            yield s.rect

    def contains(self, p: tuple[float, float]) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

    def scene_hash(self) -> str:
        return hashlib.sha256(scene_to_json(self).encode()).hexdigest()


def _rect_inside(outer, inner) -> bool:
    return (outer[0] <= inner[0] and outer[1] <= inner[1]
            and inner[2] <= outer[2] and inner[3] <= outer[3])


# ---------------------------------------------------------------------------
# Scene serialization (schema documented in the README)
# ---------------------------------------------------------------------------

def scene_to_json(scene: Scene) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "bounds": list(scene.bounds),
        "cell_size": scene.cell_size,
        "materials": {
            name: {"absorption": list(m.absorption), "transmission": list(m.transmission)}
            for name, m in scene.materials.items()
        },
        "walls": [
            {"start": list(w.start), "end": list(w.end), "material": w.material}
            for w in scene.walls
        ],
        "receptacles": [
            {"id": r.id, "rect": list(r.rect), "height": r.height}
            for r in scene.receptacles
        ],
        "doors": [
            {"id": d.id, "hinge": list(d.hinge), "handle": list(d.handle),
             "swing": d.swing, "material": d.material,
             "handle_height": d.handle_height, "joint_limits": list(d.joint_limits)}
            for d in scene.doors
        ],
        "sinks": [
            {"id": s.id, "rect": list(s.rect), "handle": list(s.handle),
             "facing": s.facing, "handle_height": s.handle_height,
             "joint_limits": list(s.joint_limits)}
            for s in scene.sinks
        ],
    }
    return json.dumps(doc, sort_keys=True)


def scene_from_json(text: str) -> Scene:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported scene schema_version {doc.get('schema_version')!r}")
    return Scene(
        scene_id=doc["scene_id"],
        bounds=tuple(doc["bounds"]),
        cell_size=doc["cell_size"],
        materials={
            name: MaterialProperties(tuple(m["absorption"]), tuple(m["transmission"]))
            for name, m in doc["materials"].items()
        },
        walls=tuple(WallSegment(tuple(w["start"]), tuple(w["end"]), w["material"])
                    for w in doc["walls"]),
        receptacles=tuple(Receptacle(r["id"], tuple(r["rect"]), r["height"])
                          for r in doc["receptacles"]),
        doors=tuple(DoorSpec(d["id"], tuple(d["hinge"]), tuple(d["handle"]), d["swing"],
                             d["material"], d.get("handle_height", 1.0),
                             tuple(d.get("joint_limits", (0.0, math.pi / 2.0))))
                    for d in doc["doors"]),
        sinks=tuple(SinkSpec(s["id"], tuple(s["rect"]), tuple(s["handle"]),
                             s.get("facing", 0.0), s.get("handle_height", 0.85),
                             tuple(s.get("joint_limits", (0.0, math.pi / 2.0))))
                    for s in doc["sinks"]),
    )


# ---------------------------------------------------------------------------
# Objects and agent
# ---------------------------------------------------------------------------

class Category:
    PHONE = "Phone"
    ALARM = "Alarm"
    FURBY = "Furby"
    DOORBELL = "Doorbell"
    SINK = "Sink"
    DISTRACTOR = "Distractor"

    RIGID = (PHONE, ALARM, FURBY)
    ARTICULATED = (DOORBELL, SINK)
    SOUNDING = RIGID + ARTICULATED


@dataclass
class ObjectInstance:
    id: str
    category: str
    kind: str                      # "rigid" | "articulated"
    position: tuple[float, float]
    support_height: float = 0.0
    orientation: float = 0.0
    joint_angle: float | None = None
    joint_limits: tuple[float, float] | None = None
    sound_clip: str | None = None
    emitting: bool = False

    def __post_init__(self):
        if self.kind == "rigid" and self.joint_angle is not None:
            raise ValueError("rigid objects carry no joint angle")
        if self.kind == "articulated":
            if self.joint_angle is None or self.joint_limits is None:
                raise ValueError("articulated objects need joint angle and limits")
            lo, hi = self.joint_limits
            if not (lo <= self.joint_angle <= hi):
                raise ValueError("joint angle outside limits")
        if self.emitting and not self.sound_clip:
            raise ValueError("emitting object needs a sound clip")


@dataclass
class AgentState:
    base_position: tuple[float, float]
    heading: float
    arm_joints: np.ndarray = field(default_factory=lambda: np.zeros(7))
    gripper_closed: bool = False
    held_object: str | None = None

    def __post_init__(self):
        self.heading = normalize_angle(self.heading)
        self.arm_joints = np.asarray(self.arm_joints, dtype=float)
        if self.arm_joints.shape != (7,):
            raise ValueError("arm has exactly 7 joints")
        if self.held_object is not None and not self.gripper_closed:
            raise ValueError("holding an object requires a closed gripper")

    def copy(self) -> "AgentState":
        return replace(self, arm_joints=self.arm_joints.copy())


@dataclass(frozen=True)
class RestingPose:
    joints: tuple[float, ...] = (0.0,) * 7
    tolerance: float = 0.05        # L-inf, radians/meters

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")

    def satisfied_by(self, arm_joints: np.ndarray) -> bool:
        return bool(np.max(np.abs(np.asarray(arm_joints) - np.asarray(self.joints))) <= self.tolerance)


REST = RestingPose()


def forward_kinematics(arm_joints, base_position=(0.0, 0.0), heading=0.0):
    """End-effector (x, y, height) of the planar chain mounted at the base.

    Joints 0..2 are planar revolute links, joint 3 is the prismatic lift,
    joints 4..6 are wrist angles that do not move the end-effector.
    """
    q = np.asarray(arm_joints, dtype=float)
    if q.shape != (7,) or not np.all(np.isfinite(q)):
        raise ValueError("need 7 finite joint angles")
    x, y = base_position
    angle = heading
    for qi, L in zip(q[:3], LINK_LENGTHS):
        angle += qi
        x += L * math.cos(angle)
        y += L * math.sin(angle)
    return x, y, float(q[PRISMATIC_INDEX])


def inverse_kinematics(target_xy, target_height, base_position, heading):
    """Joint vector placing the end-effector at the target, elbow-down.

    Solvable for any planar target within ARM_REACH of the base; raises
    ValueError beyond that.
    """
    rel_x = target_xy[0] - base_position[0]
    rel_y = target_xy[1] - base_position[1]
    c, s = math.cos(-heading), math.sin(-heading)
    px = c * rel_x - s * rel_y
    py = s * rel_x + c * rel_y
    dist = math.hypot(px, py)
    if dist > ARM_REACH + 1e-9:
        raise ValueError(f"target {dist:.3f} m away exceeds reach {ARM_REACH}")
    l1, l2, l3 = LINK_LENGTHS
    psi = math.atan2(py, px)
    wx = px - l3 * math.cos(psi)
    wy = py - l3 * math.sin(psi)
    dw = math.hypot(wx, wy)
    cos_elbow = (dw * dw - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    cos_elbow = max(-1.0, min(1.0, cos_elbow))
    q1 = math.acos(cos_elbow)
    q0 = math.atan2(wy, wx) - math.atan2(l2 * math.sin(q1), l1 + l2 * math.cos(q1))
    q2 = psi - q0 - q1
    lift = max(JOINT_LIMITS[PRISMATIC_INDEX][0],
               min(JOINT_LIMITS[PRISMATIC_INDEX][1], target_height))
    return np.array([normalize_angle(q0), normalize_angle(q1), normalize_angle(q2),
                     lift, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# Occupancy grid
# ---------------------------------------------------------------------------

@dataclass
class OccupancyGrid:
    blocked: np.ndarray            # bool, shape (nx, ny)
    origin: tuple[float, float]
    cell_size: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.blocked.shape

    def cell_of(self, p: tuple[float, float]) -> tuple[int, int]:
        return (int(math.floor((p[0] - self.origin[0]) / self.cell_size)),
                int(math.floor((p[1] - self.origin[1]) / self.cell_size)))

    def center_of(self, cell: tuple[int, int]) -> tuple[float, float]:
        return (self.origin[0] + (cell[0] + 0.5) * self.cell_size,
                self.origin[1] + (cell[1] + 0.5) * self.cell_size)

    def in_grid(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.blocked.shape[0] and 0 <= cell[1] < self.blocked.shape[1]

    def is_free(self, p: tuple[float, float]) -> bool:
        cell = self.cell_of(p)
        return self.in_grid(cell) and not self.blocked[cell]

    def free_cells(self) -> list[tuple[int, int]]:
        xs, ys = np.nonzero(~self.blocked)
        return list(zip(xs.tolist(), ys.tolist()))


def _segment_hits_rect(a, b, rect, eps=1e-12) -> bool:
    """True when segment a-b intersects the closed rectangle."""
    x0, y0, x1, y1 = rect
    # Liang-Barsky clipping
    dx, dy = b[0] - a[0], b[1] - a[1]
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, a[0] - x0), (dx, x1 - a[0]), (-dy, a[1] - y0), (dy, y1 - a[1])):
        if abs(p) < eps:
            if q < -eps:
                return False
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1 + eps:
            return False
    return True


def build_occupancy_grid(scene: Scene,
                         door_angles: dict[str, float] | None = None,
                         extra_footprints: tuple[tuple[float, float, float, float], ...] = ()
                         ) -> OccupancyGrid:
    """Boolean grid at ``scene.cell_size``; a cell is blocked iff it intersects
    a wall segment, a closed door leaf, or a sink/receptacle footprint.
    """
    if scene.cell_size <= 0:
        raise ValueError("cellSize must be positive")
    x0, y0, x1, y1 = scene.bounds
    nx = int(math.ceil((x1 - x0) / scene.cell_size))
    ny = int(math.ceil((y1 - y0) / scene.cell_size))
    blocked = np.zeros((nx, ny), dtype=bool)

    segments = [(w.start, w.end) for w in scene.walls]
    angles = door_angles or {}
    for d in scene.doors:
        if angles.get(d.id, 0.0) <= DOOR_CLOSED_EPS:
            segments.append(d.leaf_at(0.0))
    footprints = [r.rect for r in scene.receptacles] + [s.rect for s in scene.sinks]
    footprints.extend(extra_footprints)

    cs = scene.cell_size
    for i in range(nx):
        cx0, cx1 = x0 + i * cs, x0 + (i + 1) * cs
        for j in range(ny):
            rect = (cx0, y0 + j * cs, cx1, y0 + (j + 1) * cs)
            hit = any(_segment_hits_rect(a, b, rect) for a, b in segments)
            if not hit:
                hit = any(rect[0] <= f[2] and f[0] <= rect[2]
                          and rect[1] <= f[3] and f[1] <= rect[3]
                          for f in footprints)
            blocked[i, j] = hit
    return OccupancyGrid(blocked, (x0, y0), cs)


def _swept_cells(a, b, grid: OccupancyGrid):
    """Cells traversed by segment a->b (Amanatides-Woo voxel walk)."""
    cs = grid.cell_size
    ox, oy = grid.origin
    x, y = (a[0] - ox) / cs, (a[1] - oy) / cs
    ex, ey = (b[0] - ox) / cs, (b[1] - oy) / cs
    i, j = int(math.floor(x)), int(math.floor(y))
    ie, je = int(math.floor(ex)), int(math.floor(ey))
    cells = [(i, j)]
    dx, dy = ex - x, ey - y
    step_i = 1 if dx > 0 else -1
    step_j = 1 if dy > 0 else -1
    t_max_x = ((i + (step_i > 0)) - x) / dx if dx != 0 else math.inf
    t_max_y = ((j + (step_j > 0)) - y) / dy if dy != 0 else math.inf
    t_dx = abs(1.0 / dx) if dx != 0 else math.inf
    t_dy = abs(1.0 / dy) if dy != 0 else math.inf
    guard = 0
    while (i, j) != (ie, je) and guard < 10000:
        if t_max_x < t_max_y:
            i += step_i
            t_max_x += t_dx
        else:
            j += step_j
            t_max_y += t_dy
        cells.append((i, j))
        guard += 1
    return cells


def sweep_blocked(a, b, grid: OccupancyGrid) -> bool:
    """True when the swept segment leaves the grid or touches a blocked cell."""
    for cell in _swept_cells(a, b, grid):
        if not grid.in_grid(cell) or grid.blocked[cell]:
            return True
    return False


# ---------------------------------------------------------------------------
# Actions and stepping
# ---------------------------------------------------------------------------

class NavAction(Enum):
    MOVE_FORWARD = "MoveForward"
    TURN_LEFT = "TurnLeft"
    TURN_RIGHT = "TurnRight"
    STOP = "Stop"


@dataclass(frozen=True)
class ArmAction:
    """7 joint deltas plus a gripper command (>0 close, <0 open, 0 hold)."""

    joint_deltas: tuple[float, ...]
    gripper: float = 0.0

    def __post_init__(self):
        if len(self.joint_deltas) != 7:
            raise ValueError("arm action needs 7 joint deltas")


@dataclass
class StepInfo:
    collided: bool = False
    grasped: str | None = None
    released: str | None = None
    attached: str | None = None
    detached: str | None = None


class World:
    """Mutable per-episode state: scene + object instances + agent.

    Single-writer: one episode owns its world. The scene itself is immutable
    and shared safely.
    """

    def __init__(self, scene: Scene, agent: AgentState,
                 objects: dict[str, ObjectInstance] | None = None,
                 extra_footprints: tuple[tuple[float, float, float, float], ...] = ()):
        self.scene = scene
        self.agent = agent
        self.objects = objects or {}
        self.extra_footprints = tuple(extra_footprints)
        self.bank = None               # SoundBank, set by episode assembly
        self.time_step = 0
        self.collision_count = 0
        self.attached_object: str | None = None
        self._grid: OccupancyGrid | None = None
        # articulated instance id -> DoorSpec for handle tracking
        self._door_specs = {d.id: d for d in scene.doors}

    # -- occupancy -----------------------------------------------------

    def door_angles(self) -> dict[str, float]:
        return {oid: obj.joint_angle for oid, obj in self.objects.items()
                if oid in self._door_specs and obj.joint_angle is not None}

    def occupancy(self) -> OccupancyGrid:
        if self._grid is None:
            self._grid = build_occupancy_grid(self.scene, self.door_angles(),
                                              self.extra_footprints)
        return self._grid

    def _invalidate_grid(self):
        self._grid = None

    # -- kinematics ----------------------------------------------------

    def end_effector(self) -> tuple[float, float, float]:
        return forward_kinematics(self.agent.arm_joints,
                                  self.agent.base_position, self.agent.heading)

    def handle_position(self, obj: ObjectInstance) -> tuple[float, float]:
        """Current 2D handle position of an articulated object."""
        spec = self._door_specs.get(obj.id)
        if spec is not None:
            return spec.handle_at(obj.joint_angle)
        return obj.position

    # -- stepping ------------------------------------------------------

    def step(self, action) -> StepInfo:
        info = StepInfo()
        if isinstance(action, NavAction):
            self._step_nav(action, info)
        elif isinstance(action, ArmAction):
            self._step_arm(action, info)
        else:
            raise TypeError(f"unsupported action {action!r}")
        self.time_step += 1
        return info

    def _step_nav(self, action: NavAction, info: StepInfo):
        agent = self.agent
        if action is NavAction.MOVE_FORWARD:
            dx = FORWARD_STEP * math.cos(agent.heading)
            dy = FORWARD_STEP * math.sin(agent.heading)
            target = (agent.base_position[0] + dx, agent.base_position[1] + dy)
            if sweep_blocked(agent.base_position, target, self.occupancy()):
                info.collided = True
                self.collision_count += 1
            else:
                agent.base_position = target
        elif action is NavAction.TURN_LEFT:
            agent.heading = normalize_angle(agent.heading + TURN_STEP)
        elif action is NavAction.TURN_RIGHT:
            agent.heading = normalize_angle(agent.heading - TURN_STEP)
        # Stop changes nothing by contract

    def _step_arm(self, action: ArmAction, info: StepInfo):
        agent = self.agent
        deltas = np.clip(np.asarray(action.joint_deltas, dtype=float),
                         -MAX_JOINT_DELTA, MAX_JOINT_DELTA)
        if self.attached_object is not None:
            # Direct joint-space driving of the grasped articulation; the
            # arm itself is considered to track the handle.
            obj = self.objects[self.attached_object]
            lo, hi = obj.joint_limits
            obj.joint_angle = max(lo, min(hi, obj.joint_angle + deltas[0]))
            self._invalidate_grid()
        else:
            q = agent.arm_joints + deltas
            for k, (lo, hi) in enumerate(JOINT_LIMITS):
                q[k] = max(lo, min(hi, q[k]))
            agent.arm_joints = q
            if agent.held_object is not None:
                ee = self.end_effector()
                held = self.objects[agent.held_object]
                held.position = (ee[0], ee[1])
                held.support_height = ee[2]

        if action.gripper > 0 and not agent.gripper_closed:
            agent.gripper_closed = True
            self._try_grasp(info)
        elif action.gripper < 0 and agent.gripper_closed:
            agent.gripper_closed = False
            if agent.held_object is not None:
                info.released = agent.held_object
                agent.held_object = None
            if self.attached_object is not None:
                info.detached = self.attached_object
                self.attached_object = None

    def _try_grasp(self, info: StepInfo):
        ee = self.end_effector()
        best, best_dist = None, SNAP_RADIUS
        for obj in self.objects.values():
            if obj.kind == "rigid":
                ref = (obj.position[0], obj.position[1], obj.support_height)
            else:
                # articulated instances store their handle height in
                # support_height
                hx, hy = self.handle_position(obj)
                ref = (hx, hy, obj.support_height)
            d = math.dist(ee, ref)
            if d <= best_dist:
                best, best_dist = obj, d
        if best is None:
            return
        if best.kind == "rigid":
            self.agent.held_object = best.id
            best.position = (ee[0], ee[1])
            best.support_height = ee[2]
            info.grasped = best.id
        else:
            self.attached_object = best.id
            info.attached = best.id
