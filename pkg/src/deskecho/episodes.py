"""Benchmark episode generation, solvability validation, and dataset files.

An episode pins one task instance: agent start pose, sound source placements
with clip ids, silent distractors, and the required ground-truth skill chain
per source. Generation is rejection-based: draws are re-rolled until the
episode validates and the scripted controllers can provably solve it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import pathing
from .errors import GenerationExhausted, UnknownCategory
from .world import (AgentState, Category, DoorSpec, MaterialProperties,
                    ObjectInstance, OccupancyGrid, Receptacle, Scene,
                    WallSegment, World, build_occupancy_grid,
                    scene_from_json, scene_to_json)

TASK_STOW = "sonicstow"
TASK_INTERACT = "sonicinteract"
TASK_BISONIC = "bisonic"
TASKS = (TASK_STOW, TASK_INTERACT, TASK_BISONIC)

TASK_CATEGORIES = {
    TASK_STOW: (Category.PHONE, Category.ALARM, Category.FURBY),
    TASK_INTERACT: (Category.DOORBELL, Category.SINK),
    TASK_BISONIC: (Category.PHONE, Category.ALARM, Category.FURBY,
                   Category.DOORBELL, Category.SINK),
}

SKILL_NAV = "nav"
SKILL_PICK = "pick"
SKILL_PLACE = "place"
SKILL_OPEN_DOOR = "open_door"
SKILL_CLOSE_SINK = "close_sink"
SKILL_VOCABULARY = (SKILL_NAV, SKILL_PICK, SKILL_PLACE,
                    SKILL_OPEN_DOOR, SKILL_CLOSE_SINK)

NAV_SUCCESS_RADIUS = 0.5
FRONTAL_DEPTH = 0.8
MAX_GENERATION_RETRIES = 100
MIN_START_DISTANCE = 1.5         # keeps navigation non-degenerate
PLACE_OFFSET_RANGE = (0.16, 0.28)  # keeps the place target inside arm reach

# episode counts per preset; "desk" scales the full-size run proportionally
PRESETS = {
    "paper": {"train": 660,
              "test": {TASK_STOW: 222, TASK_INTERACT: 222, TASK_BISONIC: 355}},
    "desk": {"train": 100,
             "test": {TASK_STOW: 34, TASK_INTERACT: 34, TASK_BISONIC: 54}},
}


def ground_truth_chain(category: str) -> tuple[str, ...]:
    """Category -> required skill sequence."""
    if category in (Category.ALARM, Category.PHONE, Category.FURBY):
        return (SKILL_NAV, SKILL_PICK, SKILL_PLACE)
    if category == Category.DOORBELL:
        return (SKILL_NAV, SKILL_OPEN_DOOR)
    if category == Category.SINK:
        return (SKILL_NAV, SKILL_CLOSE_SINK)
    raise UnknownCategory(category)


@dataclass
class SinkPlacement:
    rect: tuple[float, float, float, float]
    handle: tuple[float, float]
    facing: float
    handle_height: float = 0.85
    initial_angle: float = 1.0


@dataclass
class SourcePlacement:
    category: str
    clip_id: str
    position: tuple[float, float]
    support_height: float = 0.0
    receptacle_id: str | None = None
    door_id: str | None = None
    sink: SinkPlacement | None = None
    place_target: tuple[float, float] | None = None
    place_receptacle_id: str | None = None


@dataclass
class Distractor:
    position: tuple[float, float]
    support_height: float
    receptacle_id: str


@dataclass
class Episode:
    episode_id: str
    task: str
    scene_id: str
    split: str
    agent_start: tuple[float, float]
    agent_heading: float
    sources: list[SourcePlacement]
    priority_order: tuple[int, ...]
    distractors: list[Distractor] = field(default_factory=list)
    ground_truth_chains: dict[int, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        expected = 2 if self.task == TASK_BISONIC else 1
        if len(self.sources) != expected:
            raise ValueError(f"{self.task} needs {expected} source(s)")
        if self.task == TASK_BISONIC and len({s.category for s in self.sources}) != 2:
            raise ValueError("dual-source episodes need two distinct categories")
        for chain in self.ground_truth_chains.values():
            for skill in chain:
                if skill not in SKILL_VOCABULARY:
                    raise ValueError(f"skill {skill!r} outside vocabulary")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["priority_order"] = list(self.priority_order)
        doc["ground_truth_chains"] = {str(k): list(v)
                                      for k, v in self.ground_truth_chains.items()}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Episode":
        sources = []
        for s in doc["sources"]:
            sink = SinkPlacement(tuple(s["sink"]["rect"]), tuple(s["sink"]["handle"]),
                                 s["sink"]["facing"], s["sink"]["handle_height"],
                                 s["sink"]["initial_angle"]) if s.get("sink") else None
            sources.append(SourcePlacement(
                s["category"], s["clip_id"], tuple(s["position"]),
                s["support_height"], s.get("receptacle_id"), s.get("door_id"),
                sink, tuple(s["place_target"]) if s.get("place_target") else None,
                s.get("place_receptacle_id")))
        return cls(
            episode_id=doc["episode_id"], task=doc["task"],
            scene_id=doc["scene_id"], split=doc["split"],
            agent_start=tuple(doc["agent_start"]),
            agent_heading=doc["agent_heading"],
            sources=sources,
            priority_order=tuple(doc["priority_order"]),
            distractors=[Distractor(tuple(d["position"]), d["support_height"],
                                    d["receptacle_id"]) for d in doc["distractors"]],
            ground_truth_chains={int(k): tuple(v)
                                 for k, v in doc["ground_truth_chains"].items()},
        )


@dataclass
class ValidationReport:
    passed: bool
    reasons: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Built-in scene factory (the benchmark ships no external scene assets)
# ---------------------------------------------------------------------------

_MATERIALS = {
    "brick": MaterialProperties((0.02, 0.03, 0.04, 0.05), (0.0, 0.0, 0.0, 0.0)),
    "drywall": MaterialProperties((0.10, 0.08, 0.06, 0.09), (0.30, 0.20, 0.10, 0.05)),
    "wood": MaterialProperties((0.15, 0.10, 0.08, 0.07), (0.10, 0.08, 0.05, 0.03)),
    "curtain": MaterialProperties((0.30, 0.45, 0.60, 0.70), (0.40, 0.30, 0.20, 0.10)),
}


def make_scene(rng: np.random.Generator, scene_id: str = "scene-000") -> Scene:
    """Randomized rectilinear room: boundary walls, 0-2 interior partitions
    with a gap, wall-mounted outward-swinging doors, and elevated receptacles.
    """
    w = float(rng.uniform(5.5, 8.0))
    h = float(rng.uniform(5.5, 8.0))
    corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
    walls = []
    for k in range(4):
        mat = str(rng.choice(["brick", "drywall"]))
        walls.append(WallSegment(corners[k], corners[(k + 1) % 4], mat))

    for k in range(int(rng.integers(0, 3))):
        gap = float(rng.uniform(1.8, 2.5))
        if rng.random() < 0.5:
            x = float(rng.uniform(1.5, w - 1.5))
            walls.append(WallSegment((x, 0.0), (x, max(0.5, h - gap)), "drywall"))
        else:
            y = float(rng.uniform(1.5, h - 1.5))
            walls.append(WallSegment((0.0, y), (max(0.5, w - gap), y), "wood"))

    receptacles = []
    tries = 0
    want = int(rng.integers(2, 5))
    while len(receptacles) < want and tries < 80:
        tries += 1
        rw = float(rng.uniform(0.6, 1.1))
        rh = float(rng.uniform(0.4, 0.6))
        x0 = float(rng.uniform(1.0, w - 1.0 - rw))
        y0 = float(rng.uniform(1.0, h - 1.0 - rh))
        rect = (x0, y0, x0 + rw, y0 + rh)
        clear = all(not _rects_close(rect, r.rect, 0.5) for r in receptacles)
        if clear and not any(_wall_crosses_rect(seg, rect) for seg in walls[4:]):
            receptacles.append(Receptacle(f"recept-{len(receptacles)}", rect,
                                          float(rng.uniform(0.4, 0.9))))

    doors = []
    sides = [((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), w),     # bottom: along +x, inward +y
             ((w, 0.0), (0.0, 1.0), (-1.0, 0.0), h),      # right: along +y, inward -x
             ((0.0, h), (1.0, 0.0), (0.0, -1.0), w),      # top
             ((0.0, 0.0), (0.0, 1.0), (1.0, 0.0), h)]     # left
    for side_idx in rng.permutation(4)[: int(rng.integers(1, 3))]:
        origin, along, inward, extent = sides[side_idx]
        leaf = 0.9
        offset = float(rng.uniform(1.0, extent - 1.0 - leaf))
        hinge = (origin[0] + along[0] * offset, origin[1] + along[1] * offset)
        handle = (hinge[0] + along[0] * leaf, hinge[1] + along[1] * leaf)
        perp_ccw = (-along[1], along[0])
        swing = -1 if (perp_ccw[0] * inward[0] + perp_ccw[1] * inward[1]) > 0 else 1
        doors.append(DoorSpec(f"door-{len(doors)}", hinge, handle, swing, "wood"))

    return Scene(scene_id=scene_id, bounds=(0.0, 0.0, w, h), cell_size=0.25,
                 materials=dict(_MATERIALS), walls=tuple(walls),
                 receptacles=tuple(receptacles), doors=tuple(doors))


def make_scene_pool(count: int, seed: int = 0) -> list[Scene]:
    rng = np.random.default_rng([seed, 0xC0FFEE])
    return [make_scene(rng, f"scene-{k:03d}") for k in range(count)]


def _rects_close(a, b, margin: float) -> bool:
    return not (a[2] + margin <= b[0] or b[2] + margin <= a[0]
                or a[3] + margin <= b[1] or b[3] + margin <= a[1])


def _wall_crosses_rect(seg: WallSegment, rect) -> bool:
    from .world import _segment_hits_rect
    return _segment_hits_rect(seg.start, seg.end, rect)


# ---------------------------------------------------------------------------
# World assembly
# ---------------------------------------------------------------------------

def source_object_id(episode: Episode, slot: int) -> str:
    src = episode.sources[slot]
    if src.door_id is not None:
        return src.door_id
    return f"source-{slot}"


def build_world(scene: Scene, episode: Episode, bank=None) -> World:
    """Instantiate the mutable per-episode world.

    Every scene door gets an articulated instance (a silent bell) so that
    occupancy and interaction work whether or not it is the episode's
    source.
    """
    objects: dict[str, ObjectInstance] = {}
    for door in scene.doors:
        objects[door.id] = ObjectInstance(
            id=door.id, category=Category.DOORBELL, kind="articulated",
            position=door.handle_at(0.0), support_height=door.handle_height,
            joint_angle=0.0, joint_limits=door.joint_limits)
    for sink in scene.sinks:
        objects[sink.id] = ObjectInstance(
            id=sink.id, category=Category.SINK, kind="articulated",
            position=sink.handle, support_height=sink.handle_height,
            joint_angle=0.0, joint_limits=sink.joint_limits)

    footprints = []
    for slot, src in enumerate(episode.sources):
        oid = source_object_id(episode, slot)
        if src.door_id is not None:
            bell = objects[src.door_id]
            bell.sound_clip = src.clip_id
            bell.emitting = True
        elif src.sink is not None:
            objects[oid] = ObjectInstance(
                id=oid, category=Category.SINK, kind="articulated",
                position=src.sink.handle, support_height=src.sink.handle_height,
                joint_angle=src.sink.initial_angle,
                joint_limits=(0.0, math.pi / 2.0),
                sound_clip=src.clip_id, emitting=True)
            footprints.append(src.sink.rect)
        else:
            objects[oid] = ObjectInstance(
                id=oid, category=src.category, kind="rigid",
                position=src.position, support_height=src.support_height,
                sound_clip=src.clip_id, emitting=True)
    for k, d in enumerate(episode.distractors):
        objects[f"distractor-{k}"] = ObjectInstance(
            id=f"distractor-{k}", category=Category.DISTRACTOR, kind="rigid",
            position=d.position, support_height=d.support_height)

    agent = AgentState(base_position=episode.agent_start,
                       heading=episode.agent_heading)
    world = World(scene, agent, objects, extra_footprints=tuple(footprints))
    world.bank = bank
    return world


def episode_grid(scene: Scene, episode: Episode) -> OccupancyGrid:
    """Occupancy with doors closed plus the episode's sink footprints."""
    footprints = tuple(s.sink.rect for s in episode.sources if s.sink is not None)
    return build_occupancy_grid(scene, extra_footprints=footprints)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _frontal_rect_free(grid: OccupancyGrid, a, b, depth: float, side) -> bool:
    """Sampled free-space check of the oriented rectangle spanned by segment
    a-b extruded ``depth`` meters along unit vector ``side``."""
    length = math.dist(a, b)
    if length < 1e-9:
        return False
    u = ((b[0] - a[0]) / length, (b[1] - a[1]) / length)
    step = grid.cell_size / 2.0
    n_along = max(2, int(length / step) + 1)
    n_deep = max(2, int(depth / step) + 1)
    for i in range(n_along + 1):
        for j in range(1, n_deep + 1):
            t = length * i / n_along
            d = depth * j / n_deep
            p = (a[0] + u[0] * t + side[0] * d, a[1] + u[1] * t + side[1] * d)
            if not grid.is_free(p):
                return False
    return True


def _door_frontal_side(door: DoorSpec):
    """Interaction side: opposite the leaf's swing direction."""
    u = (door.handle[0] - door.hinge[0], door.handle[1] - door.hinge[1])
    norm = math.hypot(*u)
    perp_ccw = (-u[1] / norm, u[0] / norm)
    return (-door.swing * perp_ccw[0], -door.swing * perp_ccw[1])


def _sink_frontal_segment(sink: SinkPlacement):
    """Edge of the footprint on the facing side, plus the outward normal."""
    cx = (sink.rect[0] + sink.rect[2]) / 2.0
    cy = (sink.rect[1] + sink.rect[3]) / 2.0
    dx, dy = math.cos(sink.facing), math.sin(sink.facing)
    hw = (sink.rect[2] - sink.rect[0]) / 2.0
    hh = (sink.rect[3] - sink.rect[1]) / 2.0
    # project footprint onto the facing axis to find the front edge
    reach = abs(dx) * hw + abs(dy) * hh
    ex, ey = cx + dx * reach, cy + dy * reach
    tx, ty = -dy, dx
    half_width = abs(tx) * hw + abs(ty) * hh
    a = (ex - tx * half_width, ey - ty * half_width)
    b = (ex + tx * half_width, ey + ty * half_width)
    return a, b, (dx, dy)


def validate_episode(episode: Episode, scene: Scene) -> ValidationReport:
    """Pass iff (a) a grid path reaches within 0.5 m of every source and
    (b) every sink/door source keeps a free frontal rectangle
    (FRONTAL_DEPTH deep x object width) on its interaction side.
    """
    reasons = []
    grid = episode_grid(scene, episode)
    start_cell = grid.cell_of(episode.agent_start)
    if not grid.in_grid(start_cell) or grid.blocked[start_cell]:
        return ValidationReport(False, ["StartBlocked"])

    doors = {d.id: d for d in scene.doors}
    for slot, src in enumerate(episode.sources):
        goal_point = src.position
        goals = pathing.cells_within(grid, goal_point, NAV_SUCCESS_RADIUS)
        if pathing.astar_cells(grid, start_cell, goals) is None:
            reasons.append(f"Unreachable:{slot}")
        if src.door_id is not None:
            door = doors[src.door_id]
            side = _door_frontal_side(door)
            if not _frontal_rect_free(grid, door.hinge, door.handle,
                                      FRONTAL_DEPTH, side):
                reasons.append(f"NoFrontalAccess:{slot}")
        elif src.sink is not None:
            a, b, side = _sink_frontal_segment(src.sink)
            if not _frontal_rect_free(grid, a, b, FRONTAL_DEPTH, side):
                reasons.append(f"NoFrontalAccess:{slot}")
    return ValidationReport(not reasons, reasons)


def _oracle_solvable(episode: Episode, scene: Scene) -> bool:
    """Stricter-than-validation check used only during generation: the
    quarter-turn step lattice must admit a stop pose near every source, so
    the scripted controllers are guaranteed to succeed."""
    grid = episode_grid(scene, episode)
    for src in episode.sources:
        if not pathing.reachable_stop_exists(grid, episode.agent_start,
                                             episode.agent_heading,
                                             src.position, NAV_SUCCESS_RADIUS):
            return False
    return True


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _point_in_rect(rect, margin, rng):
    x = float(rng.uniform(rect[0] + margin, rect[2] - margin))
    y = float(rng.uniform(rect[1] + margin, rect[3] - margin))
    return (x, y)


def _place_rigid(scene, rng, category, clip_id, occupied):
    if not scene.receptacles:
        return None
    for _ in range(40):
        recept = scene.receptacles[int(rng.integers(len(scene.receptacles)))]
        if recept.rect[2] - recept.rect[0] < 0.2 or recept.rect[3] - recept.rect[1] < 0.2:
            continue
        pos = _point_in_rect(recept.rect, 0.06, rng)
        if any(math.dist(pos, q) < 0.12 for q in occupied):
            continue
        lo, hi = PLACE_OFFSET_RANGE
        for _ in range(40):
            ang = float(rng.uniform(-math.pi, math.pi))
            rad = float(rng.uniform(lo, hi))
            target = (pos[0] + rad * math.cos(ang), pos[1] + rad * math.sin(ang))
            host = _receptacle_containing(scene, target)
            if host is not None and all(math.dist(target, q) >= 0.12 for q in occupied):
                return SourcePlacement(category, clip_id, pos, recept.height,
                                       receptacle_id=recept.id,
                                       place_target=target,
                                       place_receptacle_id=host.id)
    return None


def _receptacle_containing(scene, p):
    for r in scene.receptacles:
        if r.rect[0] + 0.03 <= p[0] <= r.rect[2] - 0.03 \
                and r.rect[1] + 0.03 <= p[1] <= r.rect[3] - 0.03:
            return r
    return None


def _place_doorbell(scene, rng, clip_id, used_doors):
    candidates = [d for d in scene.doors if d.id not in used_doors]
    if not candidates:
        return None
    door = candidates[int(rng.integers(len(candidates)))]
    return SourcePlacement(Category.DOORBELL, clip_id, door.handle_at(0.0),
                           door.handle_height, door_id=door.id)


def _place_sink(scene, rng, clip_id, base_grid):
    x0, y0, x1, y1 = scene.bounds
    half = 0.25
    for _ in range(60):
        cx = float(rng.uniform(x0 + 1.2, x1 - 1.2))
        cy = float(rng.uniform(y0 + 1.2, y1 - 1.2))
        rect = (cx - half, cy - half, cx + half, cy + half)
        facing = float(rng.uniform(-math.pi, math.pi))
        # footprint area must currently be free
        probes = [(rect[0], rect[1]), (rect[0], rect[3]), (rect[2], rect[1]),
                  (rect[2], rect[3]), (cx, cy)]
        if not all(base_grid.is_free(p) for p in probes):
            continue
        handle = (cx + 0.2 * math.cos(facing), cy + 0.2 * math.sin(facing))
        sink = SinkPlacement(rect, handle, facing,
                             initial_angle=float(rng.uniform(0.6, 1.5)))
        a, b, side = _sink_frontal_segment(sink)
        if not _frontal_rect_free(base_grid, a, b, FRONTAL_DEPTH, side):
            continue
        return SourcePlacement(Category.SINK, clip_id, handle, 0.85, sink=sink)
    return None


def _sample_start(grid, rng, sources):
    free = grid.free_cells()
    for _ in range(80):
        cell = free[int(rng.integers(len(free)))]
        pos = grid.center_of(cell)
        if all(math.dist(pos, s.position) >= MIN_START_DISTANCE for s in sources):
            heading = float(int(rng.integers(0, 4)) * math.pi / 2.0)
            return pos, heading
    return None


def generate_episode(task: str, scene_pool, bank, rng: np.random.Generator,
                     split: str = "train", episode_id: str | None = None,
                     max_retries: int = MAX_GENERATION_RETRIES) -> Episode:
    """Sample one validated episode; raises GenerationExhausted after
    ``max_retries`` rejected draws.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if not scene_pool:
        raise ValueError("scene pool is empty")
    legal = TASK_CATEGORIES[task]
    n_sources = 2 if task == TASK_BISONIC else 1

    for _ in range(max_retries):
        scene = scene_pool[int(rng.integers(len(scene_pool)))]
        cats = [str(c) for c in rng.choice(legal, size=n_sources, replace=False)]
        base_grid = build_occupancy_grid(scene)
        sources = []
        occupied = []
        used_doors = set()
        ok = True
        for cat in cats:
            clips = bank.clips(category=cat, split=split)
            clip = clips[int(rng.integers(len(clips)))]
            if cat in Category.RIGID:
                placed = _place_rigid(scene, rng, cat, clip.clip_id, occupied)
            elif cat == Category.DOORBELL:
                placed = _place_doorbell(scene, rng, clip.clip_id, used_doors)
                if placed is not None:
                    used_doors.add(placed.door_id)
            else:
                placed = _place_sink(scene, rng, clip.clip_id, base_grid)
            if placed is None:
                ok = False
                break
            sources.append(placed)
            occupied.append(placed.position)
            if placed.place_target is not None:
                occupied.append(placed.place_target)
        if not ok:
            continue

        distractors = []
        if task in (TASK_STOW, TASK_BISONIC):
            for _ in range(2):
                d = _place_rigid(scene, rng, Category.DISTRACTOR, "", occupied)
                if d is None:
                    ok = False
                    break
                distractors.append(Distractor(d.position, d.support_height,
                                              d.receptacle_id))
                occupied.append(d.position)
            if not ok:
                continue

        episode = Episode(
            episode_id=episode_id or "episode",
            task=task, scene_id=scene.scene_id, split=split,
            agent_start=(0.0, 0.0), agent_heading=0.0,
            sources=sources, priority_order=tuple(range(n_sources)),
            distractors=distractors,
            ground_truth_chains={i: ground_truth_chain(s.category)
                                 for i, s in enumerate(sources)},
        )
        grid = episode_grid(scene, episode)
        start = _sample_start(grid, rng, sources)
        if start is None:
            continue
        episode.agent_start, episode.agent_heading = start

        if validate_episode(episode, scene).passed and _oracle_solvable(episode, scene):
            return episode
    raise GenerationExhausted(f"no valid {task} episode after {max_retries} draws")


# ---------------------------------------------------------------------------
# Dataset files: JSON-lines episodes + JSON manifest
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    task: str
    preset: str
    seed: int
    train_episodes: int
    test_episodes: int
    episode_files: dict[str, str]
    scenes_file: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        return cls(**json.loads(text))


def save_episodes(path, episodes: list[Episode]):
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(json.dumps(ep.to_dict(), sort_keys=True) + "\n")


def load_episodes(path, scenes: dict[str, Scene] | None = None,
                  revalidate: bool = True) -> list[Episode]:
    """Load episodes; when scenes are supplied, validation re-runs and
    corrupt entries are rejected."""
    episodes = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            ep = Episode.from_dict(json.loads(line))
            if revalidate and scenes is not None:
                report = validate_episode(ep, scenes[ep.scene_id])
                if not report.passed:
                    raise ValueError(
                        f"episode {ep.episode_id} fails validation: {report.reasons}")
            episodes.append(ep)
    return episodes


def save_scenes(path, scenes: list[Scene]):
    with open(path, "w") as fh:
        json.dump([json.loads(scene_to_json(s)) for s in scenes], fh,
                  sort_keys=True, indent=2)


def load_scenes(path) -> dict[str, Scene]:
    with open(path) as fh:
        docs = json.load(fh)
    scenes = [scene_from_json(json.dumps(d)) for d in docs]
    return {s.scene_id: s for s in scenes}


def generate_dataset(task: str, preset: str, seed: int, out_dir, bank,
                     scene_count: int = 8) -> DatasetManifest:
    """Generate train+test episode files and the manifest under out_dir.

    Episode k draws from its own seeded stream so generation parallelizes
    and stays reproducible.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = PRESETS[preset]
    scenes = make_scene_pool(scene_count, seed)
    save_scenes(out / "scenes.json", scenes)

    files = {}
    totals = {}
    for split in ("train", "test"):
        n = counts["train"] if split == "train" else counts["test"][task]
        episodes = []
        for k in range(n):
            rng = np.random.default_rng([seed, TASKS.index(task),
                                         0 if split == "train" else 1, k])
            episodes.append(generate_episode(
                task, scenes, bank, rng, split=split,
                episode_id=f"{task}-{split}-{k:04d}"))
        fname = f"{task}-{split}.jsonl"
        save_episodes(out / fname, episodes)
        files[split] = fname
        totals[split] = n

    manifest = DatasetManifest(task=task, preset=preset, seed=seed,
                               train_episodes=totals["train"],
                               test_episodes=totals["test"],
                               episode_files=files, scenes_file="scenes.json")
    (out / f"{task}-manifest.json").write_text(manifest.to_json())
    return manifest
