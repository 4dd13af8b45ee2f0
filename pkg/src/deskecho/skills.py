"""The five skills as step loops with bit-exact success predicates.

All threshold comparisons are inclusive: a distance exactly at the limit
counts as success. A controller is a callable ``controller(world, ctx)``
returning the next action; manipulation controllers return None when
finished. Precondition violations (e.g. a predicted pick on an articulated
target under a wrong plan) fail fast with the skill's characteristic
failure reason so diagnostic execution of wrong chains stays well-defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .episodes import Episode, source_object_id
from .errors import InvalidChain
from .world import REST, NavAction, RestingPose, World

NAV_RADIUS = 0.5
PICK_SNAP = 0.15
PLACE_THRESHOLD = 0.15          # meters; see place_threshold_m in SkillContext
OPEN_DOOR_THRESHOLD = 1.22      # rad, about 70 degrees
CLOSE_SINK_TOLERANCE = 0.2     # rad
NAV_BUDGET = 500
MANIP_BUDGET = 200

FAIL_TIMEOUT = "Timeout"
FAIL_OUT_OF_RANGE = "StoppedOutOfRange"
FAIL_NO_GRASP = "NoGrasp"
FAIL_DROPPED = "DroppedObject"
FAIL_NO_RETRACT = "NoRetract"
FAIL_JOINT_SHORT = "JointShort"
FAIL_ANGLE = "AngleOutOfTolerance"

VOCABULARY = ("nav", "pick", "place", "open_door", "close_sink")


@dataclass
class SkillOutcome:
    skill: str
    success: bool
    steps: int
    failure_reason: str | None = None

    def __post_init__(self):
        if self.success and self.failure_reason is not None:
            raise ValueError("successful outcomes carry no failure reason")


@dataclass
class SkillContext:
    world: World
    episode: Episode
    slot: int
    target_id: str | None = None
    nav_goal: tuple[float, float] | None = None
    place_target: tuple[float, float] | None = None
    place_height: float | None = None
    nav_budget: int = NAV_BUDGET
    manip_budget: int = MANIP_BUDGET
    rest: RestingPose = REST
    place_threshold_m: float = PLACE_THRESHOLD
    open_door_threshold: float = OPEN_DOOR_THRESHOLD
    close_sink_tolerance: float = CLOSE_SINK_TOLERANCE
    trace: list = field(default_factory=list)

    def log(self, step, action, note=""):
        agent = self.world.agent
        self.trace.append({
            "skill_step": step,
            "action": getattr(action, "value", "arm") if action is not None else "done",
            "pose": [agent.base_position[0], agent.base_position[1], agent.heading],
            "note": note,
        })


def make_context(world: World, episode: Episode, slot: int, skill: str,
                 **overrides) -> SkillContext:
    """Resolve the target object, nav goal, and place target for one skill."""
    src = episode.sources[slot]
    target_id = source_object_id(episode, slot)
    ctx = SkillContext(world=world, episode=episode, slot=slot,
                       target_id=target_id, **overrides)
    obj = world.objects.get(target_id)
    if obj is not None:
        ctx.nav_goal = world.handle_position(obj) if obj.kind == "articulated" \
            else obj.position
    else:
        ctx.nav_goal = src.position
    if src.place_target is not None:
        ctx.place_target = src.place_target
        recept = {r.id: r for r in world.scene.receptacles}.get(src.place_receptacle_id)
        ctx.place_height = recept.height if recept else src.support_height
    return ctx


def _rest_ok(ctx: SkillContext) -> bool:
    return ctx.rest.satisfied_by(ctx.world.agent.arm_joints)


def run_navigate(ctx: SkillContext, controller) -> SkillOutcome:
    """Success iff the controller issues Stop within NAV_RADIUS (inclusive)
    of the goal. Stop never changes the pose. Collisions are silent no-ops.
    """
    world = ctx.world
    for step in range(ctx.nav_budget):
        action = controller(world, ctx)
        if action is NavAction.STOP:
            dist = math.dist(world.agent.base_position, ctx.nav_goal)
            ctx.log(step, action, f"stop at {dist:.3f} m")
            if dist <= NAV_RADIUS:
                return SkillOutcome("nav", True, step + 1)
            return SkillOutcome("nav", False, step + 1, FAIL_OUT_OF_RANGE)
        info = world.step(action)
        ctx.log(step, action, "collided" if info.collided else "")
    return SkillOutcome("nav", False, ctx.nav_budget, FAIL_TIMEOUT)


def run_pick(ctx: SkillContext, controller) -> SkillOutcome:
    """Grasp within the snap radius, then retract to rest while holding.

    The first gripper close decides the grasp: closing farther than the
    snap radius fails immediately regardless of later actions.
    """
    world = ctx.world
    target = world.objects.get(ctx.target_id)
    if target is None or target.kind != "rigid":
        return SkillOutcome("pick", False, 0, FAIL_NO_GRASP)
    grasped = False
    for step in range(ctx.manip_budget):
        action = controller(world, ctx)
        if action is None:
            if not grasped or world.agent.held_object != ctx.target_id:
                return SkillOutcome("pick", False, step, FAIL_NO_GRASP)
            if not _rest_ok(ctx):
                return SkillOutcome("pick", False, step, FAIL_NO_RETRACT)
            return SkillOutcome("pick", True, step)
        closing = action.gripper > 0 and not world.agent.gripper_closed
        info = world.step(action)
        ctx.log(step, action)
        if closing and not grasped:
            if info.grasped == ctx.target_id:
                grasped = True
            else:
                return SkillOutcome("pick", False, step + 1, FAIL_NO_GRASP)
    return SkillOutcome("pick", False, ctx.manip_budget, FAIL_TIMEOUT)


def _settle_release(ctx: SkillContext, released_id: str):
    """Place the released object on the receptacle under it, if any."""
    world = ctx.world
    obj = world.objects[released_id]
    for recept in world.scene.receptacles:
        r = recept.rect
        if r[0] <= obj.position[0] <= r[2] and r[1] <= obj.position[1] <= r[3]:
            obj.support_height = recept.height
            return recept
    return None


def run_place(ctx: SkillContext, controller) -> SkillOutcome:
    """Release the held object within the place threshold of the target on a
    receptacle surface, then retract to rest. Releasing with nothing on any
    receptacle below drops the object.
    """
    world = ctx.world
    if world.agent.held_object is None:
        return SkillOutcome("place", False, 0, FAIL_DROPPED)
    released = False
    placed_ok = False
    for step in range(ctx.manip_budget):
        action = controller(world, ctx)
        if action is None:
            if not released:
                return SkillOutcome("place", False, step, FAIL_TIMEOUT)
            if not placed_ok:
                return SkillOutcome("place", False, step, FAIL_OUT_OF_RANGE)
            if not _rest_ok(ctx):
                return SkillOutcome("place", False, step, FAIL_NO_RETRACT)
            return SkillOutcome("place", True, step)
        info = world.step(action)
        ctx.log(step, action)
        if info.released and not released:
            released = True
            recept = _settle_release(ctx, info.released)
            if recept is None:
                return SkillOutcome("place", False, step + 1, FAIL_DROPPED)
            obj = world.objects[info.released]
            dist = math.dist(obj.position, ctx.place_target) if ctx.place_target else math.inf
            placed_ok = dist <= ctx.place_threshold_m
    return SkillOutcome("place", False, ctx.manip_budget, FAIL_TIMEOUT)


def run_open_door(ctx: SkillContext, controller) -> SkillOutcome:
    """Drive the attached door joint past the open threshold (inclusive) at
    any step while attached, then detach and retract.
    """
    world = ctx.world
    target = world.objects.get(ctx.target_id)
    if target is None or target.kind != "articulated" or target.joint_angle is None:
        return SkillOutcome("open_door", False, 0, FAIL_JOINT_SHORT)
    reached = False
    for step in range(ctx.manip_budget):
        action = controller(world, ctx)
        if action is None:
            if not reached:
                return SkillOutcome("open_door", False, step, FAIL_JOINT_SHORT)
            if world.attached_object is not None or not _rest_ok(ctx):
                return SkillOutcome("open_door", False, step, FAIL_NO_RETRACT)
            return SkillOutcome("open_door", True, step)
        world.step(action)
        ctx.log(step, action, f"angle={target.joint_angle:.3f}")
        if world.attached_object == ctx.target_id \
                and target.joint_angle >= ctx.open_door_threshold:
            reached = True
    return SkillOutcome("open_door", False, ctx.manip_budget, FAIL_TIMEOUT)


def run_close_sink(ctx: SkillContext, controller) -> SkillOutcome:
    """Rotate the grasped faucet handle to within the zero tolerance
    (inclusive, judged at the moment of release), then retract. Success
    clears the sink's emitting flag.
    """
    world = ctx.world
    target = world.objects.get(ctx.target_id)
    if target is None or target.kind != "articulated" or target.joint_angle is None:
        return SkillOutcome("close_sink", False, 0, FAIL_ANGLE)
    angle_at_release = None
    for step in range(ctx.manip_budget):
        action = controller(world, ctx)
        if action is None:
            if angle_at_release is None or abs(angle_at_release) > ctx.close_sink_tolerance:
                return SkillOutcome("close_sink", False, step, FAIL_ANGLE)
            if not _rest_ok(ctx):
                return SkillOutcome("close_sink", False, step, FAIL_NO_RETRACT)
            target.emitting = False
            return SkillOutcome("close_sink", True, step)
        was_attached = world.attached_object == ctx.target_id
        info = world.step(action)
        ctx.log(step, action, f"angle={target.joint_angle:.3f}")
        if was_attached and info.detached == ctx.target_id:
            angle_at_release = target.joint_angle
    return SkillOutcome("close_sink", False, ctx.manip_budget, FAIL_TIMEOUT)


RUNNERS = {
    "nav": run_navigate,
    "pick": run_pick,
    "place": run_place,
    "open_door": run_open_door,
    "close_sink": run_close_sink,
}


def run_chain(world: World, episode: Episode, chain, slot: int,
              controllers, **ctx_overrides) -> tuple[list[SkillOutcome], bool]:
    """Execute a skill chain against one source, aborting at the first
    failure. On full success the source stops emitting, so later renders
    contain no contribution from it.

    ``controllers`` maps skill name -> factory; a fresh controller is built
    per skill run from its context.
    """
    outcomes = []
    for skill in chain:
        if skill not in VOCABULARY:
            raise InvalidChain(skill)
    for skill in chain:
        ctx = make_context(world, episode, slot, skill, **ctx_overrides)
        controller = controllers[skill](ctx)
        outcome = RUNNERS[skill](ctx, controller)
        outcomes.append(outcome)
        if not outcome.success:
            break
    overall = len(outcomes) == len(chain) and all(o.success for o in outcomes)
    if overall:
        source = world.objects.get(source_object_id(episode, slot))
        if source is not None:
            source.emitting = False
    return outcomes, overall
