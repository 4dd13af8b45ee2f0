"""Scripted oracle controllers for the five skills, plus the adapter that
drives Navigate from a trained policy.

A controller factory takes the skill context and returns a stateful
callable ``(world, ctx) -> action`` (None ends a manipulation skill).
"""

from __future__ import annotations

import numpy as np

from . import pathing
from .world import ArmAction, NavAction, inverse_kinematics

_ZERO = (0.0,) * 7
_JOINT_EPS = 1e-9


def _drive_towards(current, target) -> ArmAction | None:
    """One clamped joint-space step toward a target vector, None at target."""
    delta = np.asarray(target) - np.asarray(current)
    if np.max(np.abs(delta)) < _JOINT_EPS:
        return None
    return ArmAction(tuple(delta), 0.0)


class OracleNav:
    """Replays a breadth-first plan over the step/turn lattice, then Stop."""

    def __init__(self, ctx):
        world = ctx.world
        plan = pathing.plan_nav_actions(world.occupancy(),
                                        world.agent.base_position,
                                        world.agent.heading,
                                        ctx.nav_goal)
        self.plan = plan if plan is not None else [NavAction.STOP]
        self.cursor = 0

    def __call__(self, world, ctx):
        action = self.plan[min(self.cursor, len(self.plan) - 1)]
        self.cursor += 1
        return action


class _ArmPhases:
    """Shared skeleton: drive to an IK pose, act, then retract to rest."""

    def __init__(self, ctx, reach_target):
        agent = ctx.world.agent
        self.ik = inverse_kinematics(reach_target[:2], reach_target[2],
                                     agent.base_position, agent.heading)
        self.phase = "reach"

    def __call__(self, world, ctx):
        if self.phase == "reach":
            step = _drive_towards(world.agent.arm_joints, self.ik)
            if step is not None:
                return step
            self.phase = "act"
        if self.phase == "act":
            action = self.act(world, ctx)
            if action is not None:
                return action
            self.phase = "retract"
        if self.phase == "retract":
            step = _drive_towards(world.agent.arm_joints, _ZERO)
            if step is not None:
                return step
        return None

    def act(self, world, ctx):
        raise NotImplementedError


class OraclePick(_ArmPhases):
    def __init__(self, ctx):
        obj = ctx.world.objects[ctx.target_id]
        super().__init__(ctx, (obj.position[0], obj.position[1], obj.support_height))
        self.closed = False

    def act(self, world, ctx):
        if not self.closed:
            self.closed = True
            return ArmAction(_ZERO, 1.0)
        return None


class OraclePlace(_ArmPhases):
    def __init__(self, ctx):
        super().__init__(ctx, (ctx.place_target[0], ctx.place_target[1],
                               ctx.place_height))
        self.opened = False

    def act(self, world, ctx):
        if not self.opened:
            self.opened = True
            return ArmAction(_ZERO, -1.0)
        return None


class _OracleArticulated(_ArmPhases):
    """Attach to a handle, sweep the joint to a target, release."""

    direction = 1.0

    def __init__(self, ctx):
        obj = ctx.world.objects[ctx.target_id]
        handle = ctx.world.handle_position(obj)
        super().__init__(ctx, (handle[0], handle[1], obj.support_height))
        self.attached = False
        self.released = False

    def joint_done(self, angle, ctx) -> bool:
        raise NotImplementedError

    def act(self, world, ctx):
        obj = world.objects[ctx.target_id]
        if not self.attached:
            self.attached = True
            return ArmAction(_ZERO, 1.0)
        if not self.joint_done(obj.joint_angle, ctx):
            return ArmAction((self.direction * 0.25,) + (0.0,) * 6, 0.0)
        if not self.released:
            self.released = True
            return ArmAction(_ZERO, -1.0)
        return None


class OracleOpenDoor(_OracleArticulated):
    direction = 1.0

    def joint_done(self, angle, ctx):
        return angle >= ctx.open_door_threshold


class OracleCloseSink(_OracleArticulated):
    direction = -1.0

    def joint_done(self, angle, ctx):
        return angle <= _JOINT_EPS


ORACLE_CONTROLLERS = {
    "nav": OracleNav,
    "pick": OraclePick,
    "place": OraclePlace,
    "open_door": OracleOpenDoor,
    "close_sink": OracleCloseSink,
}


class PolicyNav:
    """Trained-policy Navigate controller over the live observation
    pipeline (binaural render + range scan). Actions are sampled from the
    policy distribution with a seeded stream, matching the evaluation
    protocol of the trainer; pass deterministic=True for argmax."""

    def __init__(self, ctx, net, rir_fn=None, seed=0, deterministic=False):
        from .observe import NavObservationStack
        self.net = net
        self.stack = NavObservationStack(rir_fn=rir_fn)
        self.rng = np.random.default_rng([seed, 0x9A7])
        self.deterministic = deterministic

    def __call__(self, world, ctx):
        from .learning import NAV_ACTIONS
        obs = self.stack.observe(world)
        logits, _ = self.net.forward(obs[None, :])
        if self.deterministic:
            return NAV_ACTIONS[int(np.argmax(logits[0]))]
        probs = np.exp(self.net.log_probs(logits)[0])
        return NAV_ACTIONS[int(self.rng.choice(len(probs), p=probs))]


def policy_controllers(net, rir_fn=None, seed=0) -> dict:
    """Trained Navigate + scripted manipulation controller set."""
    out = dict(ORACLE_CONTROLLERS)
    out["nav"] = lambda ctx: PolicyNav(ctx, net, rir_fn, seed=seed)
    return out
