"""Pinhole camera model, rigid transforms, fiducial layouts, and extrinsic
calibration from known 3D-2D corner correspondences.

World and camera frames are right handed; pixel coordinates follow the usual
u-right / v-down convention. All the functions here are pure and safe to call
concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import BehindCameraError, CalibrationError, DataFormatError, VersionMismatchError
from .optim import Adam
from .rotations import matrix_to_rotvec, rotvec_to_matrix

RIG_FORMAT = "trajflow-rig"
RIG_VERSION = 1

# Fixed corner winding in the tag plane, in units of half the edge length.
# Order: (-,-), (+,-), (+,+), (-,+); the tag z axis is its outward normal.
_CORNER_SIGNS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")


class RigidTransform:
    """A proper rigid transform: x_out = rotation @ x_in + translation."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation: np.ndarray, translation: np.ndarray):
        rotation = np.asarray(rotation, dtype=np.float64)
        translation = np.asarray(translation, dtype=np.float64)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rotation) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        self.rotation = rotation
        self.translation = translation

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rotvec(cls, rotvec: np.ndarray, translation: np.ndarray) -> "RigidTransform":
        return cls(rotvec_to_matrix(np.asarray(rotvec, dtype=np.float64)), translation)

    def rotvec(self) -> np.ndarray:
        return matrix_to_rotvec(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other)).apply(x) == self.apply(other.apply(x))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __repr__(self):
        return f"RigidTransform(rotvec={self.rotvec()}, translation={self.translation})"


@dataclass(frozen=True)
class CameraRig:
    """An ordered list of (intrinsics, world-to-camera extrinsics).

    The order is stable and indexes every per-camera quantity downstream
    (keypoint frames, observation files).
    """

    cameras: tuple[tuple[CameraIntrinsics, RigidTransform], ...]

    def __post_init__(self):
        if len(self.cameras) < 1:
            raise ValueError("a rig needs at least one camera")

    def __len__(self):
        return len(self.cameras)


@dataclass(frozen=True)
class FiducialTag:
    tag_id: int
    pose: RigidTransform  # tag-to-world, tag plane at z=0 of the tag frame
    edge_length: float

    def __post_init__(self):
        if not self.edge_length > 0:
            raise ValueError(f"edge length must be positive, got {self.edge_length}")


@dataclass(frozen=True)
class FiducialLayout:
    tags: tuple[FiducialTag, ...]

    def __post_init__(self):
        ids = [t.tag_id for t in self.tags]
        if len(set(ids)) != len(ids):
            raise ValueError(f"tag ids must be unique, got {ids}")


def project(intrinsics: CameraIntrinsics, world_to_cam: RigidTransform, point: np.ndarray) -> np.ndarray:
    """Project a world point to pixels through a distortion-free pinhole.

    Raises:
        BehindCameraError: if the point has non-positive depth in the camera
            frame (never returns NaN silently).
    """
    p_cam = world_to_cam.apply(np.asarray(point, dtype=np.float64))
    z = p_cam[2]
    if z <= 0:
        raise BehindCameraError(f"point behind camera: depth {z:.6g} <= 0")
    return np.array([intrinsics.fx * p_cam[0] / z + intrinsics.cx,
                     intrinsics.fy * p_cam[1] / z + intrinsics.cy])


def project_points(intrinsics: CameraIntrinsics, world_to_cam: RigidTransform,
                   points: np.ndarray) -> np.ndarray:
    """Vectorized :func:`project` for an (N, 3) array of world points."""
    p_cam = world_to_cam.apply(np.asarray(points, dtype=np.float64))
    z = p_cam[:, 2]
    bad = np.nonzero(z <= 0)[0]
    if bad.size:
        raise BehindCameraError(f"point {bad[0]} behind camera: depth {z[bad[0]]:.6g} <= 0")
    return np.stack([intrinsics.fx * p_cam[:, 0] / z + intrinsics.cx,
                     intrinsics.fy * p_cam[:, 1] / z + intrinsics.cy], axis=1)


def tag_corners(tag: FiducialTag) -> np.ndarray:
    """The four world-frame corners of a tag, in the documented winding order."""
    local = np.concatenate([_CORNER_SIGNS * (tag.edge_length / 2.0), np.zeros((4, 1))], axis=1)
    return tag.pose.apply(local)


@dataclass(frozen=True)
class ExtrinsicsFit:
    """Result of an extrinsic solve: pose plus the final mean squared residual."""

    pose: RigidTransform
    residual_px2: float
    iterations: int


def _reprojection_residual(rotvec: ad.Var, translation: ad.Var, world: np.ndarray,
                           pixels: np.ndarray, intrinsics: CameraIntrinsics) -> ad.Var:
    """Mean squared pixel error as a differentiable scalar."""
    p_cam = ad.rotate_rotvec(rotvec, ad.as_var(world)) + translation
    z = ad.maximum(p_cam[:, 2:3], 1e-6)  # guard: transient states must not divide by zero
    u = p_cam[:, 0:1] / z * intrinsics.fx + intrinsics.cx
    v = p_cam[:, 1:2] / z * intrinsics.fy + intrinsics.cy
    err = ad.concat([u, v], axis=1) - pixels
    return ad.mean(err * err) * 2.0  # mean over points of squared L2 norms


def solve_extrinsics(correspondences: list[tuple[np.ndarray, np.ndarray]],
                     intrinsics: CameraIntrinsics,
                     initial_guess: RigidTransform,
                     iterations: int = 2000,
                     learning_rate: float = 0.01,
                     max_residual_px2: float = 25.0) -> ExtrinsicsFit:
    """Recover a world-to-camera pose from 3D-2D correspondences.

    Runs Adam on a 6-parameter axis-angle + translation chart, minimizing the
    mean squared pixel reprojection error. The caller is responsible for
    supplying corners from at least two tags (see :func:`calibrate_camera`).

    Raises:
        CalibrationError: if the final residual exceeds ``max_residual_px2``.
    """
    if len(correspondences) < 8:
        raise ValueError(f"need at least 8 correspondences, got {len(correspondences)}")
    world = np.asarray([c[0] for c in correspondences], dtype=np.float64)
    pixels = np.asarray([c[1] for c in correspondences], dtype=np.float64)

    params = {
        "rotvec": initial_guess.rotvec().astype(np.float64),
        "translation": initial_guess.translation.astype(np.float64).copy(),
    }
    opt = Adam(params)
    residual = np.inf
    done = 0
    for it in range(iterations):
        leaves = {k: ad.Var(v) for k, v in params.items()}
        loss = _reprojection_residual(leaves["rotvec"], leaves["translation"], world, pixels, intrinsics)
        residual = float(loss.value)
        if not np.isfinite(residual):
            raise CalibrationError(f"non-finite residual at iteration {it}", residual)
        done = it + 1
        if residual < 1e-14:
            break
        loss.backward()
        opt.step({k: leaves[k].grad for k in params}, learning_rate)
    iterations = done
    leaves = {k: ad.Var(v) for k, v in params.items()}
    residual = float(_reprojection_residual(leaves["rotvec"], leaves["translation"],
                                            world, pixels, intrinsics).value)
    if residual > max_residual_px2:
        raise CalibrationError(
            f"calibration failed to converge: residual {residual:.4g} px^2 "
            f"exceeds {max_residual_px2} px^2 after {iterations} iterations", residual)
    pose = RigidTransform.from_rotvec(params["rotvec"], params["translation"])
    return ExtrinsicsFit(pose=pose, residual_px2=residual, iterations=iterations)


def extrinsics_gradient(rotvec: np.ndarray, translation: np.ndarray,
                        correspondences: list[tuple[np.ndarray, np.ndarray]],
                        intrinsics: CameraIntrinsics) -> tuple[float, np.ndarray, np.ndarray]:
    """Residual and its gradient on the (rotvec, translation) chart.

    Exposed so tests can compare the solve's gradient against finite
    differences at arbitrary chart points.
    """
    world = np.asarray([c[0] for c in correspondences], dtype=np.float64)
    pixels = np.asarray([c[1] for c in correspondences], dtype=np.float64)
    rv = ad.Var(np.asarray(rotvec, dtype=np.float64))
    tr = ad.Var(np.asarray(translation, dtype=np.float64))
    loss = _reprojection_residual(rv, tr, world, pixels, intrinsics)
    loss.backward()
    return float(loss.value), rv.grad, tr.grad


def calibrate_camera(layout: FiducialLayout,
                     observed: dict[int, np.ndarray],
                     intrinsics: CameraIntrinsics,
                     initial_guess: RigidTransform,
                     **solve_kwargs) -> ExtrinsicsFit:
    """Solve one camera's extrinsics from per-tag observed corner pixels.

    ``observed`` maps tag id to a (4, 2) array of corner pixels in the
    documented winding order. Requires corners from at least two tags.
    """
    seen = [t for t in layout.tags if t.tag_id in observed]
    if len(seen) < 2:
        raise ValueError(f"need corners from at least 2 tags, got {len(seen)}")
    correspondences = []
    for tag in seen:
        pix = np.asarray(observed[tag.tag_id], dtype=np.float64)
        if pix.shape != (4, 2):
            raise ValueError(f"tag {tag.tag_id}: expected (4, 2) corner pixels, got {pix.shape}")
        for corner, p in zip(tag_corners(tag), pix):
            correspondences.append((corner, p))
    return solve_extrinsics(correspondences, intrinsics, initial_guess, **solve_kwargs)


# -- rig file format -------------------------------------------------------

def _transform_to_dict(t: RigidTransform) -> dict:
    return {"rotation": t.rotation.reshape(-1).tolist(), "translation": t.translation.tolist()}


def _transform_from_dict(d: dict) -> RigidTransform:
    return RigidTransform(np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
                          np.asarray(d["translation"], dtype=np.float64))


def save_rig(path, rig: CameraRig, layout: FiducialLayout | None = None) -> None:
    """Write a rig (and optionally its fiducial layout) as a versioned JSON doc."""
    doc = {
        "format": RIG_FORMAT,
        "version": RIG_VERSION,
        "cameras": [
            {"fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy, **_transform_to_dict(t)}
            for i, t in rig.cameras
        ],
        "fiducials": [
            {"id": t.tag_id, "edge_length": t.edge_length, **_transform_to_dict(t.pose)}
            for t in (layout.tags if layout else ())
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_rig(path) -> tuple[CameraRig, FiducialLayout]:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != RIG_FORMAT:
        raise DataFormatError(f"not a rig file: format={doc.get('format')!r}")
    if doc.get("version") != RIG_VERSION:
        raise VersionMismatchError(f"unsupported rig version {doc.get('version')!r}")
    cameras = tuple(
        (CameraIntrinsics(c["fx"], c["fy"], c["cx"], c["cy"]), _transform_from_dict(c))
        for c in doc["cameras"]
    )
    tags = tuple(
        FiducialTag(t["id"], _transform_from_dict(t), t["edge_length"])
        for t in doc.get("fiducials", [])
    )
    return CameraRig(cameras), FiducialLayout(tags)


def default_rig(n_cameras: int = 3) -> CameraRig:
    """The documented synthetic rig: fx=fy=600, cx=cy=320, cameras at top,
    left, and right of the workspace, all aimed at its center.

    This is a fixture choice for synthetic data, not a claim about any
    particular hardware.
    """
    intr = CameraIntrinsics(600.0, 600.0, 320.0, 320.0)
    center = np.array([0.3, 0.3, 0.15])
    positions = [
        np.array([0.3, 0.3, 1.3]),   # top, looking down
        np.array([-0.7, 0.3, 0.45]),  # left
        np.array([1.3, 0.3, 0.45]),   # right
    ]
    cameras = []
    for pos in positions[:n_cameras]:
        cameras.append((intr, look_at(pos, center)))
    return CameraRig(tuple(cameras))


def look_at(camera_position: np.ndarray, target: np.ndarray,
            up_hint: np.ndarray = np.array([0.0, 0.0, 1.0])) -> RigidTransform:
    """World-to-camera transform for a camera at ``camera_position`` whose
    optical (+z) axis points at ``target``."""
    camera_position = np.asarray(camera_position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - camera_position
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up_hint, dtype=np.float64)
    if abs(np.dot(up, forward)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    r_cam_to_world = np.stack([right, down, forward], axis=1)
    r = r_cam_to_world.T
    return RigidTransform(r, -r @ camera_position)
