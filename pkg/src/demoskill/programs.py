"""Parametric trajectory primitives: fitting, evaluation, normalization.

A program stores parameters normalized against the master object's bounding
box, so re-evaluating on a differently sized object scales the motion with
it. Four families are supported: line, arc (rotation about an axis line),
screw (arc plus axial advance), and piecewise-line with up to 4 knots.

Fitting minimizes the time-parameterized RMS waypoint residual: waypoint k
at normalized time s_k is compared against the curve evaluated at s_k.
"""

import copy
import re
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import DegenerateFitError, UnsupportedClassError, ValidationError
from .geometry import ObjectProperties, Pose

LINE = "line"
ARC = "arc"
SCREW = "screw"
PIECEWISE = "piecewise-line"
PRIMITIVES = (LINE, ARC, SCREW, PIECEWISE)

AXIS_NAMES = ("x", "y", "z")

# loose token aliases so reasoner-chosen class names map onto families
CLASS_HINTS = (
    (PIECEWISE, ("piecewise", "polyline", "segments")),
    (SCREW, ("screw", "helix", "spiral")),
    (ARC, ("arc", "hinge", "circle", "rotate", "revolve", "swing", "pour")),
    (LINE, ("line", "linear", "pull", "push", "slide", "straight")),
)


def resolve_class(name: str) -> str:
    tokens = set(re.split(r"[^a-z]+", name.lower())) - {""}
    for family, hints in CLASS_HINTS:
        if tokens & set(hints):
            return family
    raise UnsupportedClassError(f"no primitive family matches class {name!r}")


@dataclass
class TrajectoryProgram:
    primitive: str
    params: dict
    waypoint_count: int
    anchor: str                  # bbox axis whose extent scales the path length
    residual_rms: float = 0.0
    fit_warning: bool = False

    def __post_init__(self):
        if self.primitive not in PRIMITIVES:
            raise UnsupportedClassError(f"unknown primitive {self.primitive!r}")
        if self.waypoint_count < 2:
            raise ValidationError("programs must evaluate to at least 2 waypoints")

    def parameter_vector(self) -> np.ndarray:
        """Flattened numeric parameters in sorted key order (convergence metric)."""
        parts = []
        for key in sorted(self.params):
            value = self.params[key]
            if isinstance(value, bool):
                parts.append([float(value)])
            elif isinstance(value, (int, float)):
                parts.append([float(value)])
            else:
                parts.append(np.asarray(value, dtype=float).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def copy(self) -> "TrajectoryProgram":
        return copy.deepcopy(self)

    def mirrored(self, flips) -> "TrajectoryProgram":
        """Reflect across bbox planes; flips is a componentwise sign vector.

        Positions and directions transform as true vectors, rotation axes as
        pseudovectors (a -> -M a for a reflection M).
        """
        f = np.asarray(flips, dtype=float)
        if not np.all(np.abs(f) == 1.0):
            raise ValidationError("mirror flips must be +-1 per axis")
        out = self.copy()
        p = out.params
        for key in ("start", "center"):
            if key in p:
                p[key] = (np.asarray(p[key]) * f).tolist()
        if "knots" in p:
            p["knots"] = (np.asarray(p["knots"]) * f).tolist()
        if "direction" in p:
            p["direction"] = (np.asarray(p["direction"]) * f).tolist()
        if "axis" in p:
            # pseudovector: a -> det(M) * M a
            p["axis"] = (np.prod(f) * f * np.asarray(p["axis"])).tolist()
        return out

    def path_length(self, props: ObjectProperties) -> float:
        ext = props.bbox_extents
        p = self.params
        if self.primitive == LINE:
            return abs(p["length"]) * ext[AXIS_NAMES.index(self.anchor)]
        if self.primitive in (ARC, SCREW):
            radius = _arc_radius(self, props)
            arc_len = radius * abs(p["sweep"])
            if self.primitive == SCREW:
                h = p["advance"] * ext[_dominant_axis(p["axis"])]
                return float(np.hypot(arc_len, h))
            return float(arc_len)
        knots = np.array([geo.denormalize_point(k, props) for k in p["knots"]])
        return float(np.sum(np.linalg.norm(np.diff(knots, axis=0), axis=1)))


def _dominant_axis(v) -> int:
    return int(np.argmax(np.abs(np.asarray(v, dtype=float))))


def _arc_radius(prog: TrajectoryProgram, props: ObjectProperties) -> float:
    p = prog.params
    center = geo.denormalize_point(p["center"], props)
    start = geo.denormalize_point(p["start"], props)
    axis = np.asarray(p["axis"], dtype=float)
    r_vec = start - center
    r_perp = r_vec - np.dot(r_vec, axis) * axis
    return float(np.linalg.norm(r_perp))


def _times_and_points(interaction) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    traj = interaction.trajectory
    ts = np.array([t for t, _ in traj], dtype=float)
    s = (ts - ts[0]) / (ts[-1] - ts[0])
    pts = np.array([pose.position for _, pose in traj])
    quats = [pose.quaternion for _, pose in traj]
    return s, pts, quats


def _rms(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def _fit_line(s, pts, quats, props):
    mu = pts.mean(axis=0)
    centered = pts - mu
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    u = vt[0]
    if np.dot(pts[-1] - pts[0], u) < 0:
        u = -u
    alpha = centered @ u
    design = np.column_stack([np.ones_like(s), s])
    (a, b), *_ = np.linalg.lstsq(design, alpha, rcond=None)
    start_m = mu + a * u
    anchor_idx = _dominant_axis(u)
    params = {
        "start": geo.normalize_point(start_m, props).tolist(),
        "direction": u.tolist(),
        "length": float(b) / props.bbox_extents[anchor_idx],
        "q_start": np.asarray(quats[0]).tolist(),
        "q_end": np.asarray(quats[-1]).tolist(),
    }
    return params, AXIS_NAMES[anchor_idx]


def _circumcenter_2d(p1, p2, p3):
    ax, ay = p1
    bx, by = p2
    cx, cy = p3
    d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if abs(d) < 1e-14:
        raise DegenerateFitError("collinear points have no circumcenter")
    ux = ((ax ** 2 + ay ** 2) * (by - cy) + (bx ** 2 + by ** 2) * (cy - ay)
          + (cx ** 2 + cy ** 2) * (ay - by)) / d
    uy = ((ax ** 2 + ay ** 2) * (cx - bx) + (bx ** 2 + by ** 2) * (ax - cx)
          + (cx ** 2 + cy ** 2) * (bx - ax)) / d
    return np.array([ux, uy])


def _fit_circle_2d(p2d, max_iter=50, step_tol=1e-10):
    """3-point initialization followed by Gauss-Newton on (center, radius)."""
    c = _circumcenter_2d(p2d[0], p2d[len(p2d) // 2], p2d[-1])
    r = float(np.mean(np.linalg.norm(p2d - c, axis=1)))
    x = np.array([c[0], c[1], r])
    for _ in range(max_iter):
        diff = p2d - x[:2]
        dist = np.linalg.norm(diff, axis=1)
        if np.any(dist < 1e-12):
            break
        res = dist - x[2]
        jac = np.column_stack([-diff[:, 0] / dist, -diff[:, 1] / dist, -np.ones_like(dist)])
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        x = x + step
        if np.linalg.norm(step) < step_tol:
            break
    if x[2] < 1e-9:
        raise DegenerateFitError("zero-radius arc")
    return x[:2], float(x[2])


def _orientation_axis(quats):
    """Rotation axis and total angle implied by first-to-last orientation."""
    total = geo.quat_mul(np.asarray(quats[-1]), geo.quat_conj(np.asarray(quats[0])))
    return geo.quat_to_axis_angle(total)


def _plane_basis(axis):
    helper = np.array([1.0, 0, 0]) if abs(axis[0]) < 0.9 else np.array([0, 1.0, 0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


def _unwrapped_sweep(p2d, center):
    angles = np.unwrap(np.arctan2(p2d[:, 1] - center[1], p2d[:, 0] - center[0]))
    return float(angles[-1] - angles[0])


def _fit_arc_like(s, pts, quats, props, axial: bool):
    axis, angle = _orientation_axis(quats)
    rotates = angle > 1e-6
    if axial and not rotates:
        raise DegenerateFitError("screw fit needs rotating orientations")
    if not rotates:
        mu = pts.mean(axis=0)
        _, _, vt = np.linalg.svd(pts - mu, full_matrices=False)
        axis = vt[2]
    advance_m = 0.0
    detrended = pts
    if axial:
        advance_m = float(np.dot(pts[-1] - pts[0], axis))
        detrended = pts - np.outer(s * advance_m, axis)
    mu = detrended.mean(axis=0)
    e1, e2 = _plane_basis(axis)
    rel = detrended - mu
    p2d = np.column_stack([rel @ e1, rel @ e2])
    center2d, radius = _fit_circle_2d(p2d)
    if radius < 1e-9:
        raise DegenerateFitError("zero-radius arc")
    sweep = _unwrapped_sweep(p2d, center2d)
    if sweep < 0:
        # flipping axis and sweep together leaves the rotation unchanged
        axis, sweep = -axis, -sweep
        if axial:
            advance_m = -advance_m
        e1, e2 = _plane_basis(axis)
        rel = detrended - mu
        p2d = np.column_stack([rel @ e1, rel @ e2])
        center2d, radius = _fit_circle_2d(p2d)
        sweep = _unwrapped_sweep(p2d, center2d)
    off_plane = float(np.mean(rel @ axis))
    center3 = mu + center2d[0] * e1 + center2d[1] * e2 + off_plane * axis
    radial = pts[0] - center3
    radial_perp = radial - np.dot(radial, axis) * axis
    anchor_idx = _dominant_axis(radial_perp) if np.linalg.norm(radial_perp) > 1e-12 else 0
    params = {
        "center": geo.normalize_point(center3, props).tolist(),
        "start": geo.normalize_point(pts[0], props).tolist(),
        "axis": axis.tolist(),
        "sweep": float(sweep),
        "q_start": np.asarray(quats[0]).tolist(),
        "rotate_orientation": bool(rotates),
    }
    if axial:
        params["advance"] = advance_m / props.bbox_extents[_dominant_axis(axis)]
    return params, AXIS_NAMES[anchor_idx]


def _fit_piecewise(s, pts, quats, props, max_knots=4):
    n = len(pts)
    k = min(max_knots, n)
    knot_s = np.linspace(0.0, 1.0, k)
    design = np.zeros((n, k))
    for i, si in enumerate(s):
        j = min(int(np.searchsorted(knot_s, si, side="right")) - 1, k - 2)
        w = (si - knot_s[j]) / (knot_s[j + 1] - knot_s[j])
        design[i, j] = 1 - w
        design[i, j + 1] = w
    knots, *_ = np.linalg.lstsq(design, pts, rcond=None)
    params = {
        "knots": [geo.normalize_point(p, props).tolist() for p in knots],
        "q_start": np.asarray(quats[0]).tolist(),
        "q_end": np.asarray(quats[-1]).tolist(),
    }
    anchor_idx = _dominant_axis(pts[-1] - pts[0]) if np.linalg.norm(pts[-1] - pts[0]) > 1e-12 else 0
    return params, AXIS_NAMES[anchor_idx]


def fit_trajectory_program(sem, interaction, master: ObjectProperties,
                           residual_warning: float = 0.02) -> TrajectoryProgram:
    """Least-squares fit of the family selected by sem.trajectory_class."""
    if sem.trajectory_class is None:
        raise ValidationError("semantic constraints carry no trajectory class")
    family = resolve_class(sem.trajectory_class)
    if len(interaction.trajectory) < 2:
        raise ValidationError("trajectory too short to fit")
    s, pts, quats = _times_and_points(interaction)
    if family == LINE:
        params, anchor = _fit_line(s, pts, quats, master)
    elif family == ARC:
        params, anchor = _fit_arc_like(s, pts, quats, master, axial=False)
    elif family == SCREW:
        params, anchor = _fit_arc_like(s, pts, quats, master, axial=True)
    else:
        params, anchor = _fit_piecewise(s, pts, quats, master)
    prog = TrajectoryProgram(family, params, waypoint_count=len(pts), anchor=anchor)
    evaluated = np.array([p.position for p in evaluate_program(prog, master, at=s)])
    prog.residual_rms = _rms(pts, evaluated)
    prog.fit_warning = prog.residual_rms > residual_warning
    return prog


def evaluate_program(prog: TrajectoryProgram, master: ObjectProperties,
                     at: np.ndarray | None = None) -> list[Pose]:
    """Generate waypoint poses relative to the master object."""
    if np.any(master.bbox_extents <= 0):
        raise ValidationError("master bbox extents must be positive")
    s_values = np.linspace(0.0, 1.0, prog.waypoint_count) if at is None else np.asarray(at)
    p = prog.params
    ext = master.bbox_extents
    poses = []
    if prog.primitive == LINE:
        start = geo.denormalize_point(p["start"], master)
        u = np.asarray(p["direction"], dtype=float)
        length_m = p["length"] * ext[AXIS_NAMES.index(prog.anchor)]
        q0, q1 = np.asarray(p["q_start"]), np.asarray(p["q_end"])
        for s in s_values:
            poses.append(Pose(start + u * (s * length_m), geo.quat_slerp(q0, q1, float(s))))
    elif prog.primitive in (ARC, SCREW):
        center = geo.denormalize_point(p["center"], master)
        start = geo.denormalize_point(p["start"], master)
        axis = np.asarray(p["axis"], dtype=float)
        axis = axis / np.linalg.norm(axis)
        r_vec = start - center
        axial0 = np.dot(r_vec, axis) * axis
        r_perp = r_vec - axial0
        q0 = np.asarray(p["q_start"])
        advance_m = 0.0
        if prog.primitive == SCREW:
            advance_m = p["advance"] * ext[_dominant_axis(axis)]
        for s in s_values:
            rot = geo.quat_from_axis_angle(axis, float(s) * p["sweep"])
            pos = center + axial0 + geo.quat_rotate(rot, r_perp) + float(s) * advance_m * axis
            q = geo.quat_mul(rot, q0) if p.get("rotate_orientation") else q0
            poses.append(Pose(pos, q))
    else:
        knots = np.array([geo.denormalize_point(k, master) for k in p["knots"]])
        knot_s = np.linspace(0.0, 1.0, len(knots))
        q0, q1 = np.asarray(p["q_start"]), np.asarray(p["q_end"])
        for s in s_values:
            pos = np.array([np.interp(float(s), knot_s, knots[:, d]) for d in range(3)])
            poses.append(Pose(pos, geo.quat_slerp(q0, q1, float(s))))
    for pose in poses:
        if not np.all(np.isfinite(pose.position)):
            raise ValidationError("program evaluated to non-finite waypoints")
    return poses


def average_programs(programs: list[TrajectoryProgram]) -> TrajectoryProgram:
    """Average normalized parameters of same-family fits from several demos."""
    first = programs[0]
    if any(p.primitive != first.primitive for p in programs):
        raise ValidationError("cannot average programs of different families")
    if len(programs) == 1:
        return first.copy()
    out = first.copy()
    for key in first.params:
        values = [p.params[key] for p in programs]
        if key.startswith("q_"):
            out.params[key] = geo.quat_mean([np.asarray(v) for v in values]).tolist()
        elif isinstance(values[0], bool):
            out.params[key] = values[0]
        elif isinstance(values[0], (int, float)):
            out.params[key] = float(np.mean(values))
        elif key in ("direction", "axis"):
            ref = np.asarray(values[0], dtype=float)
            acc = np.zeros(3)
            for v in values:
                v = np.asarray(v, dtype=float)
                acc += v if np.dot(v, ref) >= 0 else -v
            out.params[key] = (acc / np.linalg.norm(acc)).tolist()
        else:
            out.params[key] = np.mean([np.asarray(v, dtype=float) for v in values], axis=0).tolist()
    out.waypoint_count = max(p.waypoint_count for p in programs)
    out.residual_rms = max(p.residual_rms for p in programs)
    out.fit_warning = any(p.fit_warning for p in programs)
    return out
