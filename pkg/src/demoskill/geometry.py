"""SE(3) pose algebra, point-cloud metrics, and bounding-box extraction.

Quaternions use the (w, x, y, z) Hamilton convention in right-handed frames.
The double cover is resolved by canonicalizing w >= 0 after every
construction and composition.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloudError, FrameMismatchError, InvalidPoseError

QUAT_NORM_TOL = 1e-9
MIN_BBOX_EXTENT = 1e-6  # degenerate extents clamp, keeps normalized coords finite


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    return a


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, both (w,x,y,z)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by unit quaternion q."""
    w, x, y, z = q
    u = np.array([x, y, z])
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns canonicalized (w,x,y,z)."""
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    q = q / np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = _as_vec3(axis)
    n = np.linalg.norm(axis)
    if n < 1e-15:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = axis / n
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_to_axis_angle(q: np.ndarray) -> tuple[np.ndarray, float]:
    """Rotation axis and angle in [0, pi] of a unit quaternion."""
    qc = q if q[0] >= 0 else -q
    w = min(1.0, max(-1.0, qc[0]))
    angle = 2.0 * np.arccos(w)
    s = np.sqrt(max(0.0, 1.0 - w * w))
    if s < 1e-12:
        return np.array([1.0, 0.0, 0.0]), 0.0
    return qc[1:] / s, angle


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle (rad) between two unit quaternions, double cover folded."""
    d = min(1.0, abs(float(np.dot(a, b))))
    return 2.0 * np.arccos(d)


def quat_slerp(a: np.ndarray, b: np.ndarray, s: float) -> np.ndarray:
    dot = float(np.dot(a, b))
    if dot < 0:
        b = -b
        dot = -dot
    if dot > 1 - 1e-12:
        q = a + s * (b - a)
        return q / np.linalg.norm(q)
    theta = np.arccos(min(1.0, dot))
    q = (np.sin((1 - s) * theta) * a + np.sin(s * theta) * b) / np.sin(theta)
    return q / np.linalg.norm(q)


def quat_mean(quats) -> np.ndarray:
    """Sign-aligned normalized mean; adequate for tightly clustered rotations."""
    quats = [np.asarray(q, dtype=float) for q in quats]
    ref = quats[0]
    acc = np.zeros(4)
    for q in quats:
        acc += q if np.dot(q, ref) >= 0 else -q
    n = np.linalg.norm(acc)
    if n < 1e-12:
        return ref.copy()
    acc = acc / n
    return acc if acc[0] >= 0 else -acc


@dataclass(frozen=True)
class Pose:
    """Rigid transform: position in meters plus unit quaternion (w,x,y,z)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        p = _as_vec3(self.position)
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise InvalidPoseError("non-finite pose components")
        n = np.linalg.norm(q)
        if n < QUAT_NORM_TOL:
            raise InvalidPoseError("zero-norm quaternion")
        q = q / n
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "quaternion", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_axis_angle(axis, angle: float, position=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(np.asarray(position, dtype=float), quat_from_axis_angle(axis, angle))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous transform."""
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.position
        return m

    def transform_point(self, p) -> np.ndarray:
        return self.position + quat_rotate(self.quaternion, _as_vec3(p))

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation_matrix().T + self.position


def compose(a: Pose, b: Pose) -> Pose:
    """Rigid-body composition a∘b (apply b, then a)."""
    return Pose(a.position + quat_rotate(a.quaternion, b.position),
                quat_mul(a.quaternion, b.quaternion))


def inverse(p: Pose) -> Pose:
    qi = quat_conj(p.quaternion)
    return Pose(-quat_rotate(qi, p.position), qi)


def relative_pose(reference: Pose, target: Pose) -> Pose:
    """r such that compose(reference, r) == target."""
    return compose(inverse(reference), target)


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation meters, rotation radians) between two poses."""
    return float(np.linalg.norm(a.position - b.position)), quat_angle(a.quaternion, b.quaternion)


@dataclass
class PointCloud:
    """Points in meters, tagged with the frame they are expressed in."""

    points: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, 3)
        if pts.size and not np.all(np.isfinite(pts)):
            raise InvalidPoseError("non-finite point cloud coordinates")
        self.points = pts.reshape(-1, 3)

    def __len__(self):
        return len(self.points)

    def transformed(self, pose: Pose, frame: str | None = None) -> "PointCloud":
        return PointCloud(pose.transform_points(self.points), frame or self.frame)


@dataclass
class ObjectProperties:
    """Axis-aligned bounding box plus source cloud for one object."""

    object_id: str
    bbox_center: Pose
    bbox_extents: np.ndarray
    cloud: PointCloud

    def __post_init__(self):
        ext = _as_vec3(self.bbox_extents)
        if np.any(ext <= 0):
            raise InvalidPoseError("bbox extents must be strictly positive")
        self.bbox_extents = ext


def cloud_distance(a: PointCloud, b: PointCloud, strategy: str = "min-pair") -> float:
    """Distance between two clouds; default is the minimum pairwise distance.

    min-pair models contact onset; "centroid" can be swapped in for
    coarse proximity.
    """
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloudError("cloud_distance requires non-empty clouds")
    if a.frame != b.frame:
        raise FrameMismatchError(f"frames differ: {a.frame!r} vs {b.frame!r}")
    if strategy == "centroid":
        return float(np.linalg.norm(a.points.mean(axis=0) - b.points.mean(axis=0)))
    if strategy != "min-pair":
        raise ValueError(f"unknown cloud distance strategy {strategy!r}")
    small, big = (a.points, b.points) if len(a) <= len(b) else (b.points, a.points)
    d, _ = cKDTree(big).query(small, k=1)
    return float(np.min(d))


def compute_bbox(cloud: PointCloud, object_id: str = "") -> ObjectProperties:
    """Axis-aligned box of the cloud in its own frame; extents clamped to 1e-6 m."""
    if len(cloud) == 0:
        raise EmptyCloudError("compute_bbox requires a non-empty cloud")
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    extents = np.maximum(hi - lo, MIN_BBOX_EXTENT)
    center = Pose(0.5 * (lo + hi))
    return ObjectProperties(object_id, center, extents, cloud)


def normalize_point(p, props: ObjectProperties) -> np.ndarray:
    """Map an object-frame point into bbox coordinates ([-0.5, 0.5] spans the box)."""
    return (_as_vec3(p) - props.bbox_center.position) / props.bbox_extents


def denormalize_point(n, props: ObjectProperties) -> np.ndarray:
    return props.bbox_center.position + _as_vec3(n) * props.bbox_extents
