import math

import numpy as np
import pytest

from deskecho.errors import DegenerateScene
from deskecho.world import (ARM_REACH, JOINT_LIMITS, LINK_LENGTHS, AgentState,
                            ArmAction, MaterialProperties, NavAction,
                            ObjectInstance, Receptacle, Scene, SinkSpec,
                            WallSegment, World, build_occupancy_grid,
                            forward_kinematics, inverse_kinematics,
                            normalize_angle, scene_from_json, scene_to_json)

MAT = MaterialProperties((0.1,) * 4, (0.1,) * 4)


def empty_scene(side=4.0, cell=0.25):
    return Scene("s", (0.0, 0.0, side, side), cell, {"m": MAT})


class TestOccupancyGrid:
    def test_empty_scene_all_free(self):
        grid = build_occupancy_grid(empty_scene(4.0, 0.25))
        assert grid.shape == (16, 16)
        assert not grid.blocked.any()

    def test_full_width_wall_blocks_its_rows(self):
        scene = Scene("s", (0, 0, 4, 4), 0.25, {"m": MAT},
                      walls=(WallSegment((0, 2), (4, 2), "m"),))
        grid = build_occupancy_grid(scene)
        # y=2 sits on the boundary between rows 7 and 8: both touch it
        assert grid.blocked[:, 7].all() and grid.blocked[:, 8].all()
        assert not grid.blocked[:, 5].any()

    def test_degenerate_bounds_raise(self):
        with pytest.raises(DegenerateScene):
            Scene("s", (0, 0, 0, 4), 0.25, {"m": MAT})

    def test_randomized_grids_match_bruteforce_oracle(self):
        # exhaustive cell-vs-geometry intersection, independently coded
        rng = np.random.default_rng(42)
        for trial in range(10):
            walls = []
            for _ in range(rng.integers(1, 4)):
                if rng.random() < 0.5:
                    x = float(rng.uniform(0.4, 3.6))
                    y0, y1 = sorted(rng.uniform(0.0, 4.0, size=2))
                    walls.append(WallSegment((x, y0), (x, y1), "m"))
                else:
                    y = float(rng.uniform(0.4, 3.6))
                    x0, x1 = sorted(rng.uniform(0.0, 4.0, size=2))
                    walls.append(WallSegment((x0, y), (x1, y), "m"))
            rects = [Receptacle(f"r{k}", _rand_rect(rng), 0.5)
                     for k in range(rng.integers(0, 3))]
            scene = Scene("s", (0, 0, 4, 4), 0.25, {"m": MAT},
                          walls=tuple(walls), receptacles=tuple(rects))
            grid = build_occupancy_grid(scene)
            for i in range(grid.shape[0]):
                for j in range(grid.shape[1]):
                    cell = (i * 0.25, j * 0.25, (i + 1) * 0.25, (j + 1) * 0.25)
                    expect = any(_seg_rect_bf(w.start, w.end, cell) for w in walls)
                    expect = expect or any(_rect_overlap_bf(r.rect, cell) for r in rects)
                    assert grid.blocked[i, j] == expect, (trial, i, j)


def _rand_rect(rng):
    x0 = float(rng.uniform(0.2, 3.0))
    y0 = float(rng.uniform(0.2, 3.0))
    return (x0, y0, x0 + float(rng.uniform(0.3, 0.9)), y0 + float(rng.uniform(0.3, 0.9)))


def _rect_overlap_bf(a, b):
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def _seg_rect_bf(a, b, rect, n=400):
    # dense sampling: independent of the production Liang-Barsky clipper
    for t in np.linspace(0.0, 1.0, n):
        x = a[0] + t * (b[0] - a[0])
        y = a[1] + t * (b[1] - a[1])
        if rect[0] <= x <= rect[2] and rect[1] <= y <= rect[3]:
            return True
    return False


class TestForwardKinematics:
    def test_zero_configuration_rest_offset(self):
        x, y, h = forward_kinematics(np.zeros(7), (1.0, 2.0), 0.0)
        assert x == pytest.approx(1.0 + ARM_REACH)
        assert y == pytest.approx(2.0)
        assert h == 0.0

    def test_lipschitz_in_single_joint(self):
        q = np.zeros(7)
        base = forward_kinematics(q, (0, 0), 0.3)
        eps = 1e-4
        for j in range(3):
            qq = q.copy()
            qq[j] = eps
            moved = forward_kinematics(qq, (0, 0), 0.3)
            disp = math.dist(base[:2], moved[:2])
            assert disp <= sum(LINK_LENGTHS[j:]) * eps + 1e-6

    def test_matches_symbolic_oracle(self):
        import sympy as sp

        q0, q1, q2, hd = sp.symbols("q0 q1 q2 hd")
        l1, l2, l3 = LINK_LENGTHS
        xs = (l1 * sp.cos(hd + q0) + l2 * sp.cos(hd + q0 + q1)
              + l3 * sp.cos(hd + q0 + q1 + q2))
        ys = (l1 * sp.sin(hd + q0) + l2 * sp.sin(hd + q0 + q1)
              + l3 * sp.sin(hd + q0 + q1 + q2))
        fx = sp.lambdify((q0, q1, q2, hd), xs)
        fy = sp.lambdify((q0, q1, q2, hd), ys)
        rng = np.random.default_rng(7)
        for _ in range(100):
            q = rng.uniform(-math.pi, math.pi, size=7)
            heading = float(rng.uniform(-math.pi, math.pi))
            bx, by = rng.uniform(-2, 2, size=2)
            x, y, h = forward_kinematics(q, (bx, by), heading)
            assert x == pytest.approx(bx + fx(q[0], q[1], q[2], heading), abs=1e-9)
            assert y == pytest.approx(by + fy(q[0], q[1], q[2], heading), abs=1e-9)
            assert h == pytest.approx(q[3])

    def test_inverse_kinematics_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            base = tuple(rng.uniform(-1, 1, size=2))
            heading = float(rng.uniform(-math.pi, math.pi))
            r = float(rng.uniform(0.05, ARM_REACH - 1e-6))
            ang = float(rng.uniform(-math.pi, math.pi))
            target = (base[0] + r * math.cos(ang), base[1] + r * math.sin(ang))
            height = float(rng.uniform(0.0, 1.2))
            q = inverse_kinematics(target, height, base, heading)
            x, y, h = forward_kinematics(q, base, heading)
            assert math.dist((x, y), target) < 1e-9
            assert h == pytest.approx(height)


def make_world(scene=None, pos=(2.0, 2.0), heading=0.0):
    scene = scene or empty_scene()
    return World(scene, AgentState(base_position=pos, heading=heading))


class TestStepping:
    def test_move_forward_half_meter(self):
        world = make_world(pos=(0.125, 0.125), heading=0.0)
        world.step(NavAction.MOVE_FORWARD)
        assert world.agent.base_position[0] == pytest.approx(0.625)
        assert world.agent.base_position[1] == pytest.approx(0.125)

    def test_turn_group_identity(self):
        world = make_world()
        start = world.agent.heading
        for action in (NavAction.TURN_LEFT, NavAction.TURN_LEFT,
                       NavAction.TURN_RIGHT, NavAction.TURN_RIGHT):
            world.step(action)
        assert world.agent.heading == pytest.approx(start)

    def test_blocked_forward_is_noop_and_flagged(self):
        scene = Scene("s", (0, 0, 4, 4), 0.25, {"m": MAT},
                      walls=(WallSegment((2.3, 0), (2.3, 4), "m"),))
        world = make_world(scene, pos=(2.0, 2.0), heading=0.0)  # wall 0.3 m ahead
        info = world.step(NavAction.MOVE_FORWARD)
        assert info.collided
        assert world.agent.base_position == (2.0, 2.0)
        assert world.collision_count == 1

    def test_sweep_matches_dense_sampling_oracle(self):
        rng = np.random.default_rng(0)
        scene = Scene("s", (0, 0, 4, 4), 0.25, {"m": MAT},
                      walls=(WallSegment((1.7, 0.6), (1.7, 3.2), "m"),
                             WallSegment((0.4, 2.1), (3.1, 2.1), "m")))
        grid = build_occupancy_grid(scene)
        from deskecho.world import sweep_blocked
        for _ in range(300):
            a = tuple(rng.uniform(0.3, 3.7, size=2))
            ang = rng.uniform(-math.pi, math.pi)
            b = (a[0] + 0.5 * math.cos(ang), a[1] + 0.5 * math.sin(ang))
            dense = any(not grid.is_free((a[0] + t * (b[0] - a[0]),
                                          a[1] + t * (b[1] - a[1])))
                        for t in np.linspace(0, 1, 500))
            assert sweep_blocked(a, b, grid) == dense

    def test_heading_stays_on_quarter_turn_lattice(self):
        rng = np.random.default_rng(5)
        world = make_world()
        start = world.agent.heading
        turns = [NavAction.TURN_LEFT, NavAction.TURN_RIGHT, NavAction.MOVE_FORWARD]
        for _ in range(200):
            world.step(turns[rng.integers(3)])
        delta = normalize_angle(world.agent.heading - start)
        k = delta / (math.pi / 2.0)
        assert abs(k - round(k)) < 1e-9

    def test_agent_stays_in_free_cells(self):
        rng = np.random.default_rng(9)
        scene = Scene("s", (0, 0, 4, 4), 0.25, {"m": MAT},
                      walls=(WallSegment((2.0, 0.5), (2.0, 3.5), "m"),))
        world = make_world(scene, pos=(1.125, 1.125))
        grid = world.occupancy()
        actions = [NavAction.MOVE_FORWARD, NavAction.TURN_LEFT, NavAction.TURN_RIGHT]
        for _ in range(300):
            world.step(actions[rng.integers(3)])
            assert grid.is_free(world.agent.base_position)

    def test_stop_never_changes_pose(self):
        world = make_world()
        pose = (world.agent.base_position, world.agent.heading)
        world.step(NavAction.STOP)
        assert (world.agent.base_position, world.agent.heading) == pose


class TestArmAndGrasp:
    def test_held_object_tracks_end_effector(self):
        scene = empty_scene()
        world = make_world(scene)
        obj = ObjectInstance("cup", "Phone", "rigid",
                             forward_kinematics(np.zeros(7), (2, 2), 0.0)[:2],
                             support_height=0.0, sound_clip="x", emitting=True)
        world.objects["cup"] = obj
        info = world.step(ArmAction((0.0,) * 7, gripper=1.0))
        assert info.grasped == "cup"
        rng = np.random.default_rng(2)
        for _ in range(50):
            world.step(ArmAction(tuple(rng.uniform(-0.3, 0.3, size=7)), 0.0))
            ee = world.end_effector()
            assert obj.position == (ee[0], ee[1])
            assert obj.support_height == ee[2]

    def test_grasp_beyond_snap_radius_fails(self):
        world = make_world()
        world.objects["far"] = ObjectInstance("far", "Phone", "rigid",
                                              (3.5, 3.5), support_height=0.0)
        info = world.step(ArmAction((0.0,) * 7, gripper=1.0))
        assert info.grasped is None
        assert world.agent.held_object is None

    def test_joint_deltas_clamped_to_limits(self):
        world = make_world()
        for _ in range(100):
            world.step(ArmAction((10.0,) * 7, 0.0))
        for k, (lo, hi) in enumerate(JOINT_LIMITS):
            assert lo <= world.agent.arm_joints[k] <= hi
        assert world.agent.arm_joints[3] == pytest.approx(JOINT_LIMITS[3][1])

    def test_articulated_attach_and_drive(self):
        scene = empty_scene()
        world = make_world(scene)
        handle = forward_kinematics(np.zeros(7), (2, 2), 0.0)
        world.objects["sink"] = ObjectInstance(
            "sink", "Sink", "articulated", handle[:2], support_height=0.0,
            joint_angle=1.0, joint_limits=(0.0, 1.5), sound_clip="c", emitting=True)
        info = world.step(ArmAction((0.0,) * 7, gripper=1.0))
        assert info.attached == "sink"
        world.step(ArmAction((-0.25,) + (0.0,) * 6, 0.0))
        assert world.objects["sink"].joint_angle == pytest.approx(0.75)
        # limits clamp
        for _ in range(10):
            world.step(ArmAction((-0.25,) + (0.0,) * 6, 0.0))
        assert world.objects["sink"].joint_angle == 0.0
        info = world.step(ArmAction((0.0,) * 7, gripper=-1.0))
        assert info.detached == "sink"


class TestSceneSerialization:
    def test_round_trip(self, scene_pool):
        for scene in scene_pool:
            clone = scene_from_json(scene_to_json(scene))
            assert scene_to_json(clone) == scene_to_json(scene)
            assert clone.scene_hash() == scene.scene_hash()

    def test_schema_version_checked(self):
        with pytest.raises(ValueError, match="schema_version"):
            scene_from_json('{"schema_version": 99}')

    def test_sink_footprint_blocks(self):
        scene = Scene("s", (0, 0, 4, 4), 0.25, {"m": MAT},
                      sinks=(SinkSpec("k", (1.0, 1.0, 1.5, 1.5), (1.25, 1.6)),))
        grid = build_occupancy_grid(scene)
        assert grid.blocked[grid.cell_of((1.25, 1.25))]
        assert not grid.blocked[grid.cell_of((3.0, 3.0))]
