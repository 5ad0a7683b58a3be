"""Desk-scale kinematic scenes and the synthetic demonstration generator.

Five templates stand in for real recordings: drawer, hinged-door,
pick-place, wipe-line, pour-arc. Demos are analytically scripted
(approach, settle, manipulate, retreat) with ground truth recorded before
noise, so grounding, learning, and execution can be checked against exact
boundaries and parameters. All randomness flows from the seed.
"""

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import ValidationError
from .executor import Box, GripperState, WorldObject, WorldState
from .geometry import ObjectProperties, PointCloud, Pose
from .grounding import Frame, PerceptionTrace

TEMPLATES = ("drawer", "hinged-door", "pick-place", "wipe-line", "pour-arc")
_TEMPLATE_INDEX = {t: i for i, t in enumerate(TEMPLATES)}

FPS = 10.0
STANDOFF = 0.022          # gripper origin to face plane at grasp, meters
FINGER_REACH = 0.015      # fingertip extent along the approach axis
APPROACH_FRAMES = 12
SETTLE_FRAMES = 5
HOLD_FRAMES = 2
RETREAT_FRAMES = 6
APPROACH_DIST = 0.18

GRASP_ENVELOPE = np.array([0.05, 0.05, 0.05])  # valid grasp box around the site


@dataclass
class DemoNoise:
    pose_sigma_m: float = 0.0
    cloud_sigma_m: float = 0.0


@dataclass
class GeneratedDemo:
    trace: PerceptionTrace
    ground_truth: dict


def hand_points() -> np.ndarray:
    """20-point gripper cloud; +z is the approach axis, fingertips lead."""
    pts = [(-0.012, 0.0, 0.015), (0.012, 0.0, 0.015)]
    for x in (-0.012, 0.0, 0.012):
        for y in (-0.012, 0.0, 0.012):
            pts.append((x, y, -0.01))
    pts += [(-0.012, -0.012, 0.005), (-0.012, 0.012, 0.005),
            (0.012, -0.012, 0.005), (0.012, 0.012, 0.005)]
    pts += [(0.0, 0.0, -0.02), (-0.015, 0.0, -0.015), (0.015, 0.0, -0.015),
            (0.0, -0.015, -0.015), (0.0, 0.015, -0.015)]
    return np.array(pts)


def box_lattice(extents) -> np.ndarray:
    """26 surface points: the 3x3x3 grid of a box minus its center."""
    half = np.asarray(extents, dtype=float) / 2
    pts = []
    for x in (-1, 0, 1):
        for y in (-1, 0, 1):
            for z in (-1, 0, 1):
                if x == y == z == 0:
                    continue
                pts.append(half * (x, y, z))
    return np.array(pts)


def face_patch(extents, face_axis: int, sign: int, lateral_center=None,
               span=0.018, count=7) -> np.ndarray:
    """Dense patch on one box face so near-contact distances are well sampled."""
    half = np.asarray(extents, dtype=float) / 2
    lateral_axes = [a for a in range(3) if a != face_axis]
    center = np.zeros(3)
    center[face_axis] = sign * half[face_axis]
    if lateral_center is not None:
        lc = np.asarray(lateral_center, dtype=float)
        for a in lateral_axes:
            center[a] = lc[a]
    offsets = np.linspace(-span, span, count)
    pts = []
    for u in offsets:
        for v in offsets:
            p = center.copy()
            p[lateral_axes[0]] += u
            p[lateral_axes[1]] += v
            pts.append(p)
    return np.array(pts)


def orient_into_face(approach, tangent) -> np.ndarray:
    """Gripper orientation: +z along approach, +x along the tangent hint."""
    z = np.asarray(approach, dtype=float)
    z = z / np.linalg.norm(z)
    x = np.asarray(tangent, dtype=float)
    x = x - np.dot(x, z) * z
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return geo.quat_from_matrix(np.column_stack([x, y, z]))


FACE_AXES = {"right": (0, 1), "left": (0, -1), "back": (1, 1), "front": (1, -1),
             "top": (2, 1), "bottom": (2, -1)}


def _marker(extents, face: str, lateral=(0.0, 0.0, 0.0), tangent=None) -> dict:
    axis, sign = FACE_AXES[face]
    half = np.asarray(extents, dtype=float) / 2
    position = np.asarray(lateral, dtype=float).copy()
    position[axis] = sign * (half[axis] + STANDOFF)
    approach = -sign * np.eye(3)[axis]
    if tangent is None:
        tangent = np.eye(3)[(axis + 1) % 3]
    return {
        "position": position.tolist(),
        "quaternion": orient_into_face(approach, tangent).tolist(),
        "face": face,
        "extents": GRASP_ENVELOPE.tolist(),
    }


def _drawer_layout(scale, mirrored, face_swap) -> dict:
    s = np.asarray(scale, dtype=float)
    cab = np.array([0.44, 0.36, 0.24]) * s
    drw = np.array([0.36, 0.30, 0.10]) * s
    m = 1.0 if not mirrored else -1.0
    protrude = 0.05 * s[1]
    drawer_center_y = m * -(cab[1] / 2 + protrude - drw[1] / 2)
    face = "front" if not mirrored else "back"
    return {
        "task_text": "open the drawer",
        "objects": {
            "cabinet": {"extents": cab, "local": np.array([0, 0, cab[2] / 2]),
                        "static": True},
            "drawer": {"extents": drw,
                       "local": np.array([0, drawer_center_y, cab[2] / 2]),
                       "kinematic": {"type": "prismatic",
                                     "axis": [0.0, -m, 0.0],
                                     "range": 0.15 * s[1]},
                       "markers": {"grasp_site": _marker(drw, face)}},
        },
        "grasp_object": "drawer",
        "manip_master": "cabinet",
        "manip": {"kind": "joint", "frames": 10, "target_q": 0.15 * s[1]},
        "success": {"kind": "joint-fraction", "object": "drawer", "fraction": 0.8},
    }


def _door_layout(scale, mirrored, face_swap) -> dict:
    s = np.asarray(scale, dtype=float)
    body = np.array([0.40, 0.30, 0.40]) * s
    door = np.array([0.38, 0.02, 0.38]) * s
    m = 1.0 if not mirrored else -1.0
    hinge_x = m * -(door[0] / 2)
    handle_x = m * (door[0] / 2 - 0.04 * s[0])
    return {
        "task_text": "open the door",
        "objects": {
            "body": {"extents": body, "local": np.array([0, 0, body[2] / 2]),
                     "static": True},
            "door": {"extents": door,
                     "local": np.array([0, -(body[1] / 2 + door[1] / 2), body[2] / 2]),
                     "kinematic": {"type": "hinged",
                                   "axis": [0.0, 0.0, -m],
                                   "origin": [hinge_x, 0.0, 0.0],
                                   "range": np.pi / 2},
                     "markers": {"grasp_site": _marker(
                         door, "front", lateral=(handle_x, 0, 0), tangent=(0, 0, 1))}},
        },
        "grasp_object": "door",
        "manip_master": "body",
        "manip": {"kind": "joint", "frames": 12, "target_q": np.pi / 2},
        "success": {"kind": "joint-fraction", "object": "door", "fraction": 0.8},
    }


def _pick_place_layout(scale, mirrored, face_swap) -> dict:
    s = np.asarray(scale, dtype=float)
    plate = np.array([0.20, 0.20, 0.02]) * s
    block = np.array([0.05, 0.05, 0.05]) * s
    start = np.array([-0.28 * s[0], -0.12 * s[1], block[2] / 2])
    face = "top" if not face_swap else "right"
    lift = start + np.array([0, 0, 0.15])
    carry = np.array([0.0, 0.0, lift[2]])
    final = np.array([0.0, 0.0, plate[2] + block[2] / 2])
    return {
        "task_text": "put the block on the plate",
        "objects": {
            "plate": {"extents": plate, "local": np.array([0, 0, plate[2] / 2]),
                      "static": True},
            "block": {"extents": block, "local": start,
                      "markers": {"grasp_site": _marker(block, face)}},
        },
        "grasp_object": "block",
        "manip_master": "plate",
        "manip": {"kind": "waypoints", "frames_per_leg": 8,
                  "path": [start, lift, carry, final]},
        "success": {"kind": "placed", "object": "block", "target": "plate",
                    "rest_z": plate[2] / 2 + block[2] / 2, "xy_fraction": 0.8},
    }


def _wipe_layout(scale, mirrored, face_swap) -> dict:
    s = np.asarray(scale, dtype=float)
    table = np.array([0.60, 0.40, 0.04]) * s
    sponge = np.array([0.08, 0.06, 0.04]) * s
    span = 0.33 * s[0]
    start = np.array([-0.20 * s[0], 0.0, table[2] + sponge[2] / 2])
    face = "top" if not face_swap else "front"
    return {
        "task_text": "wipe the table",
        "objects": {
            "table": {"extents": table, "local": np.array([0, 0, table[2] / 2]),
                      "static": True},
            "sponge": {"extents": sponge, "local": start,
                       "markers": {"grasp_site": _marker(sponge, face)}},
        },
        "grasp_object": "sponge",
        "manip_master": "table",
        "manip": {"kind": "waypoints", "frames_per_leg": 16,
                  "path": [start, start + np.array([span, 0, 0])]},
        "success": {"kind": "displaced", "object": "sponge", "reference": "table",
                    "axis": 0, "span": span, "fraction": 0.8},
    }


def _pour_layout(scale, mirrored, face_swap) -> dict:
    s = np.asarray(scale, dtype=float)
    cup = np.array([0.08, 0.08, 0.08]) * s
    kettle = np.array([0.12, 0.12, 0.16]) * s
    elevation = 0.14 * s[2]
    sweep = np.radians(75.0)
    face = "right" if not face_swap else "top"
    return {
        "task_text": "pour from the kettle into the cup",
        "objects": {
            "cup": {"extents": cup, "local": np.array([0, 0, cup[2] / 2]),
                    "static": True},
            "kettle": {"extents": kettle,
                       "local": np.array([0.17 * s[0], 0, elevation + kettle[2] / 2]),
                       "markers": {"grasp_site": _marker(
                           kettle, face, lateral=(0, 0, 0.02 * s[2]), tangent=(0, 1, 0))}},
        },
        "grasp_object": "kettle",
        "manip_master": "cup",
        "manip": {"kind": "pivot", "frames": 10, "sweep": sweep,
                  "axis": [0.0, -1.0, 0.0],
                  "origin": [-kettle[0] / 2, 0.0, -kettle[2] / 2]},
        "success": {"kind": "tilted", "object": "kettle", "sweep": sweep,
                    "fraction": 0.8},
    }


_LAYOUTS = {
    "drawer": _drawer_layout,
    "hinged-door": _door_layout,
    "pick-place": _pick_place_layout,
    "wipe-line": _wipe_layout,
    "pour-arc": _pour_layout,
}

_MIRRORED_TEMPLATES = {"drawer", "hinged-door"}
_FACE_SWAP_TEMPLATES = {"pick-place", "wipe-line", "pour-arc"}


def scene_spec(template_id: str, rng, unseen: bool = False) -> dict:
    """Sampled concrete scene: layout plus world placement (and unseen variation)."""
    _check_template(template_id)
    origin = rng.uniform(-0.15, 0.15, size=2)
    yaw = rng.uniform(-np.pi, np.pi)
    scale = np.ones(3)
    mirrored = False
    face_swap = False
    if unseen:
        scale = rng.uniform(0.65, 1.5, size=3)
        mirrored = template_id in _MIRRORED_TEMPLATES
        face_swap = template_id in _FACE_SWAP_TEMPLATES
    spec = _LAYOUTS[template_id](scale, mirrored, face_swap)
    spec["template_id"] = template_id
    spec["assembly"] = Pose(np.array([origin[0], origin[1], 0.0]),
                            geo.quat_from_axis_angle([0, 0, 1], yaw))
    spec["scale"] = scale
    spec["mirrored"] = mirrored
    spec["face_swap"] = face_swap
    spec["distractor"] = unseen
    return spec


def _world_base(spec: dict, oid: str) -> Pose:
    return geo.compose(spec["assembly"], Pose(spec["objects"][oid]["local"]))


def _object_cloud_local(spec: dict, oid: str) -> np.ndarray:
    obj = spec["objects"][oid]
    pts = box_lattice(obj["extents"])
    marker = obj.get("markers", {}).get("grasp_site")
    if marker is not None:
        axis, sign = FACE_AXES[marker["face"]]
        pts = np.vstack([pts, face_patch(obj["extents"], axis, sign,
                                         lateral_center=marker["position"])])
    return pts


def _object_properties(spec: dict, oid: str) -> ObjectProperties:
    cloud = PointCloud(_object_cloud_local(spec, oid), "object")
    props = geo.compute_bbox(cloud, oid)
    return props


def _check_template(template_id: str):
    if template_id not in _LAYOUTS:
        raise ValidationError(
            f"unknown template {template_id!r}; valid: {', '.join(TEMPLATES)}")


def build_world(template_id: str, seed: int, unseen: bool = False) -> WorldState:
    """Fresh world at zero joint coordinates with ground-truth grasp markers."""
    _check_template(template_id)
    rng = np.random.default_rng([_TEMPLATE_INDEX[template_id], 1000, seed])
    spec = scene_spec(template_id, rng, unseen=unseen)
    objects = {}
    for oid, obj in spec["objects"].items():
        objects[oid] = WorldObject(
            object_id=oid,
            props=_object_properties(spec, oid),
            base_pose=_world_base(spec, oid),
            kinematic=dict(obj.get("kinematic", {"type": "free"})),
            static=obj.get("static", False),
            markers={k: dict(v) for k, v in obj.get("markers", {}).items()},
        )
    if spec["distractor"]:
        ext = np.array([0.06, 0.06, 0.06])
        cloud = PointCloud(box_lattice(ext), "object")
        objects["clutter"] = WorldObject(
            object_id="clutter", props=geo.compute_bbox(cloud, "clutter"),
            base_pose=Pose(np.array([0.45, 0.38, 0.03])), static=True)
    world = WorldState(
        objects=objects,
        gripper=GripperState(pose=Pose(np.array([0.4, 0.4, 0.5]))),
        obstacles=[],
        meta={"template": template_id, "seed": seed, "unseen": unseen,
              "success": spec["success"], "task_text": spec["task_text"]},
    )
    return finalize_world(world)


def judge(world: WorldState, template_id: str | None = None) -> bool:
    """Template success predicate, decidable from the world state alone."""
    params = world.meta["success"]
    kind = params["kind"]
    if kind == "joint-fraction":
        obj = world.objects[params["object"]]
        joint_range = obj.kinematic["range"]
        return bool(abs(obj.q) >= params["fraction"] * abs(joint_range))
    if kind == "placed":
        rel = geo.relative_pose(world.objects[params["target"]].pose,
                                world.objects[params["object"]].pose)
        half = world.objects[params["target"]].props.bbox_extents / 2
        xy_ok = (abs(rel.position[0]) <= params["xy_fraction"] * half[0]
                 and abs(rel.position[1]) <= params["xy_fraction"] * half[1])
        z_ok = abs(rel.position[2] - params["rest_z"]) <= 0.02
        return bool(xy_ok and z_ok)
    if kind == "displaced":
        rel_now = geo.relative_pose(world.objects[params["reference"]].pose,
                                    world.objects[params["object"]].pose)
        moved = rel_now.position[params["axis"]] - world.meta["start_rel"][params["axis"]]
        return bool(moved >= params["fraction"] * params["span"])
    if kind == "tilted":
        obj = world.objects[params["object"]]
        up = geo.quat_rotate(obj.pose.quaternion, np.array([0.0, 0.0, 1.0]))
        tilt = float(np.arccos(np.clip(up[2], -1.0, 1.0)))
        return bool(tilt >= params["fraction"] * params["sweep"])
    raise ValidationError(f"unknown success predicate {kind!r}")


def finalize_world(world: WorldState):
    """Record baseline quantities some predicates compare against."""
    params = world.meta["success"]
    if params["kind"] == "displaced":
        rel = geo.relative_pose(world.objects[params["reference"]].pose,
                                world.objects[params["object"]].pose)
        world.meta["start_rel"] = rel.position.tolist()
    return world


def _grasp_world_pose(spec: dict, rng) -> tuple[Pose, Pose]:
    """(jittered grasp pose in the grasp object's frame, its world pose)."""
    oid = spec["grasp_object"]
    marker = spec["objects"][oid]["markers"]["grasp_site"]
    lateral = rng.uniform(-0.005, 0.005, size=2)
    twist = rng.uniform(-np.radians(1.5), np.radians(1.5))
    jitter = Pose(np.array([lateral[0], lateral[1], 0.0]),
                  geo.quat_from_axis_angle([0, 0, 1], twist))
    grasp_local = geo.compose(Pose(np.asarray(marker["position"]),
                                   np.asarray(marker["quaternion"])), jitter)
    return grasp_local, geo.compose(_world_base(spec, oid), grasp_local)


def _slave_motion(spec: dict, k: int) -> Pose:
    """Grasp object's world pose at motion frame k (0 = still at start)."""
    oid = spec["grasp_object"]
    base = _world_base(spec, oid)
    manip = spec["manip"]
    if manip["kind"] == "joint":
        kin = spec["objects"][oid]["kinematic"]
        q = manip["target_q"] * k / manip["frames"]
        from .executor import joint_pose
        return joint_pose(base, kin, q)
    if manip["kind"] == "waypoints":
        path = manip["path"]
        per = manip["frames_per_leg"]
        total = per * (len(path) - 1)
        k = min(k, total)
        leg = min(k // per, len(path) - 2)
        w = (k - leg * per) / per
        local = (1 - w) * np.asarray(path[leg]) + w * np.asarray(path[leg + 1])
        return geo.compose(spec["assembly"], Pose(local))
    if manip["kind"] == "pivot":
        angle = manip["sweep"] * k / manip["frames"]
        pivot = Pose(np.asarray(manip["origin"], dtype=float))
        rot = Pose.from_axis_angle(manip["axis"], angle)
        shift = geo.compose(pivot, geo.compose(rot, Pose(-pivot.position)))
        return geo.compose(base, shift)
    raise ValidationError(f"unknown manip kind {manip['kind']!r}")


def _manip_frame_count(spec: dict) -> int:
    manip = spec["manip"]
    if manip["kind"] == "waypoints":
        return manip["frames_per_leg"] * (len(manip["path"]) - 1)
    return manip["frames"]


def generate_demo(template_id: str, seed: int, noise: DemoNoise | None = None) -> GeneratedDemo:
    """Scripted demonstration trace with pre-noise ground truth."""
    _check_template(template_id)
    noise = noise or DemoNoise()
    if noise.pose_sigma_m < 0 or noise.cloud_sigma_m < 0:
        raise ValidationError("noise sigmas must be non-negative")
    rng = np.random.default_rng([_TEMPLATE_INDEX[template_id], seed])
    spec = scene_spec(template_id, rng, unseen=False)
    grasp_local, grasp_world = _grasp_world_pose(spec, rng)
    grasp_oid = spec["grasp_object"]
    hand_local = hand_points()
    clouds_local = {oid: _object_cloud_local(spec, oid) for oid in spec["objects"]}

    manip_frames = _manip_frame_count(spec)
    # frame schedule: hold, approach, settle, manipulate, hold, retreat, tail
    standoffs = ([APPROACH_DIST] * HOLD_FRAMES
                 + list(np.linspace(APPROACH_DIST, 0.0, APPROACH_FRAMES))
                 + [0.0] * SETTLE_FRAMES)
    contact_index = HOLD_FRAMES + APPROACH_FRAMES - 1
    motion_start = contact_index + SETTLE_FRAMES          # last still frame
    motion_end = motion_start + manip_frames              # first settled frame
    release_index = motion_end + HOLD_FRAMES + 1          # first retreat frame

    hand_poses = []
    slave_poses = []
    for s in standoffs:
        hand_poses.append(geo.compose(grasp_world, Pose(np.array([0, 0, -s]))))
        slave_poses.append(_slave_motion(spec, 0))
    hand_rel_slave = geo.relative_pose(slave_poses[-1], hand_poses[-1])
    for k in range(1, manip_frames + 1):
        slave = _slave_motion(spec, k)
        slave_poses.append(slave)
        hand_poses.append(geo.compose(slave, hand_rel_slave))
    for _ in range(HOLD_FRAMES):
        slave_poses.append(slave_poses[-1])
        hand_poses.append(hand_poses[-1])
    hand_end = hand_poses[-1]
    for s in np.linspace(0.02, 0.12, RETREAT_FRAMES):
        slave_poses.append(slave_poses[-1])
        hand_poses.append(geo.compose(hand_end, Pose(np.array([0, 0, -s]))))
    for _ in range(2):
        slave_poses.append(slave_poses[-1])
        hand_poses.append(hand_poses[-1])

    frames = []
    for i, (hand, slave) in enumerate(zip(hand_poses, slave_poses)):
        object_poses = {}
        object_clouds = {}
        for oid in spec["objects"]:
            pose = slave if oid == grasp_oid else _world_base(spec, oid)
            if noise.pose_sigma_m > 0:
                pose = Pose(pose.position + rng.normal(0, noise.pose_sigma_m, 3),
                            pose.quaternion)
            pts = pose.transform_points(clouds_local[oid])
            if noise.cloud_sigma_m > 0:
                pts = pts + rng.normal(0, noise.cloud_sigma_m, pts.shape)
            object_poses[oid] = pose
            object_clouds[oid] = PointCloud(pts, "world")
        if noise.pose_sigma_m > 0:
            hand = Pose(hand.position + rng.normal(0, noise.pose_sigma_m, 3),
                        hand.quaternion)
        hand_pts = hand.transform_points(hand_local)
        if noise.cloud_sigma_m > 0:
            hand_pts = hand_pts + rng.normal(0, noise.cloud_sigma_m, hand_pts.shape)
        frames.append(Frame(t=i / FPS, hand_pose=hand, hand_cloud=PointCloud(hand_pts, "world"),
                            object_poses=object_poses, object_clouds=object_clouds))

    demo_id = f"{template_id}-{seed}"
    trace = PerceptionTrace(frames=frames, fps=FPS, demo_id=demo_id)

    master_id = spec["manip_master"]
    master_base = _world_base(spec, master_id)
    rel_start = geo.relative_pose(master_base, _slave_motion(spec, 0))
    rel_end = geo.relative_pose(master_base, _slave_motion(spec, manip_frames))
    manip_gt = {k: (np.asarray(v).tolist() if isinstance(v, (list, np.ndarray)) else v)
                for k, v in spec["manip"].items()
                if k != "path"}
    if "path" in spec["manip"]:
        manip_gt["path"] = [np.asarray(p).tolist() for p in spec["manip"]["path"]]
    ground_truth = {
        "template_id": template_id,
        "task_text": spec["task_text"],
        "objects": sorted(spec["objects"]),
        "segments": [
            {"phase": "grasping", "master": grasp_oid, "slave": "hand",
             "start_index": contact_index, "end_index": motion_start},
            {"phase": "manipulation", "master": master_id, "slave": grasp_oid,
             "start_index": motion_start, "end_index": motion_end},
        ],
        "window": [contact_index, release_index],
        "boundaries": [contact_index, motion_start, motion_end, release_index],
        "grasp_pose_master": {"position": grasp_local.position.tolist(),
                              "quaternion": grasp_local.quaternion.tolist()},
        "manip": manip_gt,
        "rel_start": {"position": rel_start.position.tolist(),
                      "quaternion": rel_start.quaternion.tolist()},
        "rel_end": {"position": rel_end.position.tolist(),
                    "quaternion": rel_end.quaternion.tolist()},
    }
    return GeneratedDemo(trace=trace, ground_truth=ground_truth)
