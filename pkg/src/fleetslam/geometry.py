"""Rigid-body math shared by every other module.

Tangent-space convention (package-wide)
---------------------------------------
Relative poses are parameterized with the *decoupled* SE(3) convention:

    boxminus(a, b) = ( log(R_b^T R_a),  R_b^T (t_a - t_b) )

i.e. the rotation part is the SO(3) axis-angle log and the translation
part is the frame-relative translation difference.  The matching
retraction is

    boxplus(b, xi) = ( R_b exp(xi_rot),  t_b + R_b xi_trans )

so that boxplus(b, boxminus(a, b)) == a.  This is *not* the full SE(3)
exponential twist; the decoupled form keeps Jacobians simple and is
equivariant under left multiplication by a fixed rigid transform, which
the mesh deformation module relies on.  All other modules import these
two functions rather than rolling their own convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, DegenerateRotationError

__all__ = [
    "Pose",
    "TangentVector",
    "Correspondences",
    "RansacConfig",
    "RansacResult",
    "compose",
    "inverse",
    "boxminus",
    "boxplus",
    "so3_exp",
    "so3_log",
    "so3_hat",
    "project_to_so3",
    "rotation_about_z",
    "random_rotation",
    "rotation_geodesic_distance",
    "rotation_angle",
    "arun_align",
    "ransac_align",
]

_LOG_PI_TOLERANCE = 1e-9


def _as_array(x, shape, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    return a


def so3_hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector: hat(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rotation matrix for an axis-angle vector (Rodrigues)."""
    omega = np.asarray(omega, dtype=float)
    angle = float(np.linalg.norm(omega))
    K = so3_hat(omega)
    if angle < 1e-8:
        # second-order series keeps exp(log(R)) round trips accurate
        return np.eye(3) + K + 0.5 * (K @ K)
    K = K / angle
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix.

    Raises DegenerateRotationError when the angle is within 1e-9 of pi,
    where the axis sign is not determined; callers are expected to retry
    with a perturbed linearization point.
    """
    R = np.asarray(R, dtype=float)
    trace = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    angle = float(np.arccos(trace))
    if angle >= np.pi - _LOG_PI_TOLERANCE:
        raise DegenerateRotationError(
            f"rotation log undefined near angle pi (angle={angle!r})"
        )
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-7:
        return vee  # sin(x)/x -> 1
    if angle > np.pi - 1e-4:
        # vee loses precision as sin(angle) -> 0; rebuild the axis from
        # the symmetric part, taking the sign from vee
        S = 0.5 * (R + R.T) - np.cos(angle) * np.eye(3)
        axis = np.sqrt(np.maximum(np.diag(S) / (1.0 - np.cos(angle)), 0.0))
        axis *= np.where(vee < 0.0, -1.0, 1.0)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise DegenerateRotationError("rotation log axis underflow near pi")
        return angle * axis / n
    return (angle / np.sin(angle)) * vee


def project_to_so3(M: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in Frobenius norm, with determinant fix."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(U @ Vt)))])
    return U @ D @ Vt


def rotation_about_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation drawn uniformly from SO(3) (normalized Gaussian quaternion)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle in [0, pi]."""
    trace = np.clip((np.trace(np.asarray(R)) - 1.0) * 0.5, -1.0, 1.0)
    return float(np.arccos(trace))


def rotation_geodesic_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic distance on SO(3): the angle of a^T b, in [0, pi]."""
    return rotation_angle(np.asarray(a).T @ np.asarray(b))


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: x_world = rotation @ x_local + translation.

    Immutable; the arrays are copied and marked read-only so poses can be
    shared freely between concurrent tasks.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _as_array(self.rotation, (3, 3), "rotation").copy()
        t = _as_array(self.translation, (3,), "translation").copy()
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a stack of points (n, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Pose(t={np.round(self.translation, 4)}, angle={rotation_angle(self.rotation):.4f})"


@dataclass(frozen=True)
class TangentVector:
    """Decoupled SE(3) tangent element (radians, meters)."""

    rotation_part: np.ndarray
    translation_part: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "rotation_part", _as_array(self.rotation_part, (3,), "rotation_part")
        )
        object.__setattr__(
            self,
            "translation_part",
            _as_array(self.translation_part, (3,), "translation_part"),
        )

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.rotation_part, self.translation_part])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


def compose(a: Pose, b: Pose) -> Pose:
    """Group operation: (R_a R_b, R_a t_b + t_a)."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(a: Pose) -> Pose:
    """Group inverse: (R^T, -R^T t)."""
    Rt = a.rotation.T
    return Pose(Rt, -(Rt @ a.translation))


def boxminus(a: Pose, b: Pose) -> TangentVector:
    """Tangent-space difference of two poses (see module docstring)."""
    return TangentVector(
        so3_log(b.rotation.T @ a.rotation),
        b.rotation.T @ (a.translation - b.translation),
    )


def boxplus(b: Pose, xi: TangentVector) -> Pose:
    """Retraction matching boxminus: boxplus(b, boxminus(a, b)) == a."""
    return Pose(
        b.rotation @ so3_exp(xi.rotation_part),
        b.translation + b.rotation @ xi.translation_part,
    )


# ---------------------------------------------------------------------------
# batched pose arithmetic on (n, 3, 3) rotation and (n, 3) translation stacks;
# used by the consistency checks, which evaluate millions of short cycles
# ---------------------------------------------------------------------------


def batch_compose(Ra, ta, Rb, tb):
    R = np.einsum("...ij,...jk->...ik", Ra, Rb)
    t = np.einsum("...ij,...j->...i", Ra, tb) + ta
    return R, t


def batch_inverse(R, t):
    Rt = np.swapaxes(R, -1, -2)
    return Rt, -np.einsum("...ij,...j->...i", Rt, t)


def batch_rotation_angle(R):
    trace = np.einsum("...ii->...", R)
    return np.arccos(np.clip((trace - 1.0) * 0.5, -1.0, 1.0))


# ---------------------------------------------------------------------------
# point-set registration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Correspondences:
    """Paired 3D points; arun/ransac estimate the transform a -> b."""

    points_a: np.ndarray
    points_b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.points_a, dtype=float)
        b = np.asarray(self.points_b, dtype=float)
        if a.ndim != 2 or a.shape[1] != 3 or b.shape != a.shape:
            raise ValueError(
                f"correspondences must be equal-length (n, 3) arrays, got {a.shape} vs {b.shape}"
            )
        object.__setattr__(self, "points_a", a)
        object.__setattr__(self, "points_b", b)

    def __len__(self):
        return self.points_a.shape[0]


def arun_align(corr: Correspondences) -> Pose:
    """Least-squares rigid transform mapping points_a onto points_b.

    Centroid subtraction, SVD of the cross-covariance, determinant-sign
    correction, translation from centroids.  Raises
    DegenerateGeometryError for collinear configurations, where the
    rotation about the line axis is unobservable.
    """
    if len(corr) < 3:
        raise DegenerateGeometryError(
            f"need at least 3 correspondences, got {len(corr)}"
        )
    a, b = corr.points_a, corr.points_b
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    H = (a - ca).T @ (b - cb)
    U, S, Vt = np.linalg.svd(H)
    if S[1] <= max(S[0] * 1e-9, 1e-15):
        raise DegenerateGeometryError("correspondences are collinear or coincident")
    V = Vt.T
    d = float(np.sign(np.linalg.det(V @ U.T)))
    R = V @ np.diag([1.0, 1.0, d]) @ U.T
    return Pose(R, cb - R @ ca)


@dataclass(frozen=True)
class RansacConfig:
    """3-point RANSAC settings. The iteration count is fixed (not adaptive)
    so results are reproducible for a given seed."""

    inlier_threshold: float = 0.1  # meters
    max_iterations: int = 1000
    min_inliers: int = 3
    seed: int | tuple[int, ...] = 0

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if self.max_iterations < 1 or self.min_inliers < 3:
            raise ValueError("max_iterations >= 1 and min_inliers >= 3 required")


@dataclass(frozen=True)
class RansacResult:
    accepted: bool
    pose: Pose | None
    inliers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def num_inliers(self) -> int:
        return int(self.inliers.size)


def ransac_align(corr: Correspondences, cfg: RansacConfig) -> RansacResult:
    """Robust rigid alignment from 3-point minimal samples.

    All minimal models are solved in one batched SVD pass; the best model
    by inlier count (first found on ties) is refit with arun_align over
    its inlier set.  Fewer than cfg.min_inliers inliers yields a rejection
    result rather than an exception, which callers treat as "loop closure
    rejected".
    """
    n = len(corr)
    if n < 3:
        raise DegenerateGeometryError(f"need at least 3 correspondences, got {n}")

    rng = np.random.default_rng(cfg.seed)
    iters = cfg.max_iterations
    samples = np.empty((iters, 3), dtype=int)
    for k in range(iters):
        samples[k] = rng.choice(n, size=3, replace=False)

    A = corr.points_a[samples]  # (iters, 3, 3)
    B = corr.points_b[samples]
    ca = A.mean(axis=1, keepdims=True)
    cb = B.mean(axis=1, keepdims=True)
    H = np.einsum("kij,kil->kjl", A - ca, B - cb)
    U, S, Vt = np.linalg.svd(H)
    V = np.swapaxes(Vt, 1, 2)
    det = np.linalg.det(np.einsum("kij,klj->kil", V, U))
    D = np.zeros_like(H)
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = np.sign(det)
    R = np.einsum("kij,kjl,kml->kim", V, D, U)  # V @ D @ U^T
    t = cb[:, 0, :] - np.einsum("kij,kj->ki", R, ca[:, 0, :])
    valid = S[:, 1] > 1e-12

    # score every model against every correspondence
    mapped = np.einsum("kij,nj->kni", R, corr.points_a) + t[:, None, :]
    dist2 = np.sum((mapped - corr.points_b[None, :, :]) ** 2, axis=2)
    inlier_mask = dist2 <= cfg.inlier_threshold**2
    counts = inlier_mask.sum(axis=1)
    counts[~valid] = -1

    best = int(np.argmax(counts))
    if counts[best] < 3:
        return RansacResult(accepted=False, pose=None)

    inliers = np.flatnonzero(inlier_mask[best])
    try:
        pose = arun_align(
            Correspondences(corr.points_a[inliers], corr.points_b[inliers])
        )
    except DegenerateGeometryError:
        pose = Pose(R[best], t[best])
    accepted = inliers.size >= cfg.min_inliers
    return RansacResult(accepted=accepted, pose=pose, inliers=inliers)
