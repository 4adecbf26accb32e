"""Simplified articulated hand skeleton and multi-view pose fitting.

The skeleton is a fixed 21-joint tree (wrist root plus five 4-joint finger
chains) with canonical bone offsets; there are no shape blendshapes — the
10-dim shape vector exists for interface compatibility and is pinned to zero.
Joint indexing follows the common 21-landmark convention:

    0 wrist; 1-4 thumb; 5-8 index; 9-12 middle; 13-16 ring; 17-20 pinky,

with each finger ordered base → tip, so joint 4 is the thumb tip and joint 8
the index-finger tip. The 45-dim pose vector holds one axis-angle per
articulated joint (three per finger, tips carry no rotation), ordered by
joint index: [1, 2, 3, 5, 6, 7, 9, 10, 11, 13, 14, 15, 17, 18, 19].

Fitting minimizes the mean (over cameras, then visible joints) squared pixel
reprojection error with Adam under a cosine-annealed learning rate, warm
starting each frame from the previous solution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DataFormatError, HandFitError, VersionMismatchError
from .geometry import CameraIntrinsics, CameraRig, project_points
from .optim import Adam
from .rotations import wrap_rotvec

KEYPOINT_FORMAT = "trajflow-keypoints"
POSE_FORMAT = "trajflow-hand-poses"
FILE_VERSION = 1

NUM_JOINTS = 21
THUMB_TIP = 4
INDEX_TIP = 8

PARENTS = np.array([-1,
                    0, 1, 2, 3,      # thumb
                    0, 5, 6, 7,      # index
                    0, 9, 10, 11,    # middle
                    0, 13, 14, 15,   # ring
                    0, 17, 18, 19])  # pinky

ARTICULATED = [1, 2, 3, 5, 6, 7, 9, 10, 11, 13, 14, 15, 17, 18, 19]

# Canonical bone offsets (meters) for joints 1..20, child relative to parent.
# Rest hand lies flat in the x-y plane, fingers fanned toward +y, thumb on
# the -x side; wrist-to-middle-tip span is 18 cm.
_REST_OFFSETS = np.array([
    [-0.030, 0.025, 0.0], [-0.022, 0.025, 0.0], [-0.015, 0.020, 0.0], [-0.010, 0.015, 0.0],
    [-0.020, 0.090, 0.0], [0.000, 0.035, 0.0], [0.000, 0.022, 0.0], [0.000, 0.018, 0.0],
    [0.000, 0.095, 0.0], [0.000, 0.038, 0.0], [0.000, 0.025, 0.0], [0.000, 0.022, 0.0],
    [0.020, 0.088, 0.0], [0.000, 0.033, 0.0], [0.000, 0.022, 0.0], [0.000, 0.019, 0.0],
    [0.038, 0.078, 0.0], [0.000, 0.027, 0.0], [0.000, 0.018, 0.0], [0.000, 0.016, 0.0],
])

# Default translation for the neutral initialization: the synthetic
# workspace center that every camera fixture looks at.
NEUTRAL_TRANSLATION = np.array([0.3, 0.3, 0.15])

# Depth floor used only inside the fitter's differentiable projection so a
# transient overshoot cannot divide by zero; valid configurations sit far
# above it.
_FIT_DEPTH_FLOOR = 1e-3


@dataclass(frozen=True)
class HandShape:
    """Fixed skeleton geometry; ``shape_params`` is pinned to zero."""

    bone_offsets: np.ndarray = field(default_factory=lambda: _REST_OFFSETS.copy())
    shape_params: np.ndarray = field(default_factory=lambda: np.zeros(10))

    def __post_init__(self):
        offsets = np.asarray(self.bone_offsets, dtype=np.float64)
        if offsets.shape != (20, 3):
            raise ValueError(f"bone_offsets must be (20, 3), got {offsets.shape}")
        if np.any(np.linalg.norm(offsets, axis=1) == 0):
            raise ValueError("bone offsets must be nonzero")
        if np.any(np.asarray(self.shape_params) != 0):
            raise ValueError("shape_params is pinned to zero (mean shape)")
        object.__setattr__(self, "bone_offsets", offsets)
        object.__setattr__(self, "shape_params", np.zeros(10))


@dataclass
class HandPose:
    """45-dim articulation plus a global axis-angle rotation and translation."""

    theta: np.ndarray
    global_rotation: np.ndarray
    global_translation: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(45)
        self.global_rotation = np.asarray(self.global_rotation, dtype=np.float64).reshape(3)
        self.global_translation = np.asarray(self.global_translation, dtype=np.float64).reshape(3)
        for name in ("theta", "global_rotation", "global_translation"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    @classmethod
    def neutral(cls, translation: np.ndarray | None = None) -> "HandPose":
        t = NEUTRAL_TRANSLATION if translation is None else np.asarray(translation, dtype=np.float64)
        return cls(np.zeros(45), np.zeros(3), t.copy())

    def copy(self) -> "HandPose":
        return HandPose(self.theta.copy(), self.global_rotation.copy(), self.global_translation.copy())


@dataclass
class KeypointFrame:
    """Per-camera 2D keypoints with visibility flags for one timestamp.

    ``pixels`` has shape (n_cameras, 21, 2) and ``visible`` (n_cameras, 21).
    """

    pixels: np.ndarray
    visible: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.pixels.ndim != 3 or self.pixels.shape[1:] != (NUM_JOINTS, 2):
            raise ValueError(f"pixels must be (n_cams, 21, 2), got {self.pixels.shape}")
        if self.visible.shape != self.pixels.shape[:2]:
            raise ValueError("visibility shape must match pixels")

    @property
    def n_cameras(self) -> int:
        return self.pixels.shape[0]

    def is_fittable(self) -> bool:
        """At least two cameras each seeing at least six keypoints."""
        return int(np.sum(self.visible.sum(axis=1) >= 6)) >= 2


@dataclass
class FitSchedule:
    """Optimizer schedule for sequence fitting.

    The learning rate starts at ``lr_max`` and cosine-decays to ``lr_min``
    within each frame; the first frame gets more iterations than later,
    warm-started frames.
    """

    lr_max: float = 0.14
    lr_min: float = 0.08
    first_frame_iters: int = 300
    later_frame_iters: int = 120
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (self.lr_max >= self.lr_min > 0):
            raise ValueError("need lr_max >= lr_min > 0")
        if self.first_frame_iters < 1 or self.later_frame_iters < 1:
            raise ValueError("iteration counts must be >= 1")


def cosine_anneal(step: int, total: int, lr_max: float = 0.14, lr_min: float = 0.08) -> float:
    """Cosine-annealed learning rate: lr_max at step 0, lr_min at step=total."""
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * step / total))


def iteration_schedule(frame_index: int, schedule: FitSchedule) -> int:
    """Iterations for a frame: the first frame optimizes longer, later frames
    reuse the previous solution and need fewer steps."""
    if frame_index < 0:
        raise ValueError(f"frame_index must be >= 0, got {frame_index}")
    return schedule.first_frame_iters if frame_index == 0 else schedule.later_frame_iters


def _fk_joints(theta: ad.Var, global_rotation: ad.Var, global_translation: ad.Var,
               offsets: np.ndarray) -> ad.Var:
    """Differentiable forward kinematics; returns a (21, 3) joint array.

    Each articulated joint's axis-angle rotates its subtree; offsets
    accumulate down the chains; the global pose applies last (folded into the
    cumulative rotation from the root).
    """
    theta_f = ad.reshape(theta, (5, 3, 3))          # (finger, level, 3)
    local_rot = ad.rotvec_matrix(theta_f)           # (finger, level, 3, 3)
    root_rot = ad.rotvec_matrix(global_rotation)    # (3, 3)
    offs = offsets.reshape(5, 4, 3)

    r_cum = ad.reshape(root_rot, (1, 3, 3)) * np.ones((5, 1, 1))  # per-finger cumulative
    p_prev = ad.reshape(global_translation, (1, 3)) * np.ones((5, 1))
    levels = []
    for level in range(4):
        step = ad.reshape(r_cum @ ad.as_var(offs[:, level, :, None]), (5, 3))
        p_level = p_prev + step
        levels.append(p_level)
        if level < 3:
            r_cum = r_cum @ local_rot[:, level]
        p_prev = p_level
    # Interleave back to joint order: joint 1 + finger*4 + level.
    per_finger = ad.stack(levels, axis=1)           # (finger, level, 3)
    chain = ad.reshape(per_finger, (20, 3))
    root = ad.reshape(global_translation, (1, 3))
    return ad.concat([root, chain], axis=0)


def forward_kinematics(shape: HandShape, pose: HandPose) -> np.ndarray:
    """World positions of all 21 joints for a pose; shape (21, 3)."""
    with ad.no_grad():
        joints = _fk_joints(ad.Var(pose.theta), ad.Var(pose.global_rotation),
                            ad.Var(pose.global_translation), shape.bone_offsets)
    return joints.value


def _loss_weights(frame: KeypointFrame) -> np.ndarray:
    """Weight matrix realizing the double average over visible cameras/joints."""
    vis = frame.visible
    counts = vis.sum(axis=1)
    cams = counts > 0
    n_cams = int(cams.sum())
    if n_cams == 0:
        raise HandFitError("frame has no visible keypoints in any camera")
    weights = np.zeros(vis.shape)
    weights[cams] = vis[cams] / counts[cams][:, None]
    return weights / n_cams


def _reprojection_loss_var(theta: ad.Var, global_rotation: ad.Var, global_translation: ad.Var,
                           shape: HandShape, frame: KeypointFrame, rig: CameraRig) -> ad.Var:
    joints = _fk_joints(theta, global_rotation, global_translation, shape.bone_offsets)
    weights = _loss_weights(frame)
    pixels = np.where(frame.visible[..., None], frame.pixels, 0.0)
    rot = np.stack([t.rotation for _, t in rig.cameras])          # (C, 3, 3)
    trans = np.stack([t.translation for _, t in rig.cameras])     # (C, 3)
    fx = np.array([[i.fx] for i, _ in rig.cameras])
    fy = np.array([[i.fy] for i, _ in rig.cameras])
    cx = np.array([[i.cx] for i, _ in rig.cameras])
    cy = np.array([[i.cy] for i, _ in rig.cameras])

    p_cam = ad.swapaxes(ad.as_var(rot) @ ad.swapaxes(ad.reshape(joints, (1, 21, 3)), -1, -2), -1, -2)
    p_cam = p_cam + ad.as_var(trans[:, None, :])                  # (C, 21, 3)
    z = ad.maximum(p_cam[..., 2], _FIT_DEPTH_FLOOR)
    u = p_cam[..., 0] / z * fx + cx
    v = p_cam[..., 1] / z * fy + cy
    du = u - pixels[..., 0]
    dv = v - pixels[..., 1]
    return ad.sum_((du * du + dv * dv) * weights)


def reprojection_loss(shape: HandShape, pose: HandPose, frame: KeypointFrame,
                      rig: CameraRig) -> float:
    """Mean over visible cameras of the mean squared pixel error over that
    camera's visible joints (invisible points excluded from sum and count)."""
    if frame.n_cameras != len(rig):
        raise ValueError(f"frame has {frame.n_cameras} cameras, rig has {len(rig)}")
    with ad.no_grad():
        loss = _reprojection_loss_var(ad.Var(pose.theta), ad.Var(pose.global_rotation),
                                      ad.Var(pose.global_translation), shape, frame, rig)
    return float(loss.value)


def reprojection_gradient(shape: HandShape, pose: HandPose, frame: KeypointFrame,
                          rig: CameraRig) -> tuple[float, dict[str, np.ndarray]]:
    """Loss plus exact gradients w.r.t. all 51 pose parameters."""
    leaves = {
        "theta": ad.Var(pose.theta),
        "global_rotation": ad.Var(pose.global_rotation),
        "global_translation": ad.Var(pose.global_translation),
    }
    loss = _reprojection_loss_var(leaves["theta"], leaves["global_rotation"],
                                  leaves["global_translation"], shape, frame, rig)
    loss.backward()
    return float(loss.value), {k: v.grad for k, v in leaves.items()}


def _clamp_pose(params: dict[str, np.ndarray]) -> None:
    params["theta"] = wrap_rotvec(params["theta"].reshape(15, 3)).reshape(45)
    params["global_rotation"] = wrap_rotvec(params["global_rotation"])


def fit_frame(frame: KeypointFrame, rig: CameraRig, shape: HandShape,
              init: HandPose, n_iters: int,
              schedule: FitSchedule | None = None) -> tuple[HandPose, float]:
    """Fit one frame by Adam descent on the 51 pose parameters.

    The shape is never touched (fixed mean skeleton). The learning rate
    cosine-anneals from ``schedule.lr_max`` to ``schedule.lr_min`` across the
    ``n_iters`` steps of this frame. Axis-angle blocks are wrapped back into
    magnitude < pi after every step. Returns the best iterate seen together
    with its loss.
    """
    if not frame.is_fittable():
        raise HandFitError("frame is not fittable: need >= 2 cameras with >= 6 visible points")
    if frame.n_cameras != len(rig):
        raise HandFitError(f"frame has {frame.n_cameras} cameras, rig has {len(rig)}")
    schedule = schedule or FitSchedule()
    params = {
        "theta": init.theta.copy(),
        "global_rotation": init.global_rotation.copy(),
        "global_translation": init.global_translation.copy(),
    }
    opt = Adam(params, beta1=schedule.beta1, beta2=schedule.beta2, eps=schedule.eps)
    best = {k: v.copy() for k, v in params.items()}
    best_loss = np.inf
    for it in range(n_iters):
        leaves = {k: ad.Var(v) for k, v in params.items()}
        loss = _reprojection_loss_var(leaves["theta"], leaves["global_rotation"],
                                      leaves["global_translation"], shape, frame, rig)
        value = float(loss.value)
        if not np.isfinite(value):
            raise HandFitError(f"non-finite loss during descent", iteration=it)
        if value < best_loss:
            best_loss = value
            best = {k: v.copy() for k, v in params.items()}
        loss.backward()
        opt.step({k: leaves[k].grad for k in params}, cosine_anneal(it, n_iters, schedule.lr_max, schedule.lr_min))
        _clamp_pose(params)
    with ad.no_grad():
        final = float(_reprojection_loss_var(ad.Var(params["theta"]), ad.Var(params["global_rotation"]),
                                             ad.Var(params["global_translation"]), shape, frame, rig).value)
    if final < best_loss:
        best_loss = final
        best = params
    pose = HandPose(best["theta"], best["global_rotation"], best["global_translation"])
    return pose, best_loss


def fit_sequence(frames: list[KeypointFrame], rig: CameraRig, shape: HandShape,
                 schedule: FitSchedule | None = None,
                 initial: HandPose | None = None) -> list[HandPose]:
    """Fit a sequence: frame 0 starts from the neutral pose, later frames warm
    start from the previous solution with fewer iterations."""
    if not frames:
        raise HandFitError("need at least one frame")
    schedule = schedule or FitSchedule()
    poses: list[HandPose] = []
    current = initial or HandPose.neutral()
    for index, frame in enumerate(frames):
        try:
            current, _ = fit_frame(frame, rig, shape, current,
                                   iteration_schedule(index, schedule), schedule)
        except HandFitError as err:
            raise HandFitError(f"frame {index}: {err}", iteration=err.iteration,
                               frame_index=index) from err
        poses.append(current.copy())
    return poses


def synthesize_keypoint_frames(shape: HandShape, poses: list[HandPose], rig: CameraRig,
                               noise_px: float = 0.0,
                               rng: np.random.Generator | None = None) -> list[KeypointFrame]:
    """Project ground-truth poses into every camera, optionally adding
    Gaussian pixel noise (the 2D detector stage is out of scope)."""
    rng = rng or np.random.default_rng(0)
    frames = []
    for t, pose in enumerate(poses):
        joints = forward_kinematics(shape, pose)
        pixels = np.stack([project_points(intr, w2c, joints) for intr, w2c in rig.cameras])
        if noise_px > 0:
            pixels = pixels + rng.normal(0.0, noise_px, size=pixels.shape)
        frames.append(KeypointFrame(pixels, np.ones(pixels.shape[:2], dtype=bool), timestamp=t))
    return frames


# -- file formats -----------------------------------------------------------

def save_keypoints(path, frames: list[KeypointFrame]) -> None:
    doc = {
        "format": KEYPOINT_FORMAT,
        "version": FILE_VERSION,
        "frames": [
            {
                "index": f.timestamp,
                "cameras": [
                    {"camera": c, "points": f.pixels[c].tolist(), "visible": f.visible[c].tolist()}
                    for c in range(f.n_cameras)
                ],
            }
            for f in frames
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_keypoints(path) -> list[KeypointFrame]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != KEYPOINT_FORMAT:
        raise DataFormatError(f"not a keypoint file: format={doc.get('format')!r}")
    if doc.get("version") != FILE_VERSION:
        raise VersionMismatchError(f"unsupported keypoint file version {doc.get('version')!r}")
    frames = []
    for f in doc["frames"]:
        cams = sorted(f["cameras"], key=lambda c: c["camera"])
        pixels = np.asarray([c["points"] for c in cams], dtype=np.float64)
        visible = np.asarray([c["visible"] for c in cams], dtype=bool)
        frames.append(KeypointFrame(pixels, visible, timestamp=f["index"]))
    return frames


def save_poses(path, poses: list[HandPose], losses: list[float] | None = None) -> None:
    doc = {
        "format": POSE_FORMAT,
        "version": FILE_VERSION,
        "poses": [
            {
                "frame": i,
                "theta": p.theta.tolist(),
                "global_rotation": p.global_rotation.tolist(),
                "global_translation": p.global_translation.tolist(),
                **({"loss_px2": losses[i]} if losses else {}),
            }
            for i, p in enumerate(poses)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_poses(path) -> list[HandPose]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != POSE_FORMAT:
        raise DataFormatError(f"not a pose file: format={doc.get('format')!r}")
    if doc.get("version") != FILE_VERSION:
        raise VersionMismatchError(f"unsupported pose file version {doc.get('version')!r}")
    return [HandPose(p["theta"], p["global_rotation"], p["global_translation"])
            for p in sorted(doc["poses"], key=lambda p: p["frame"])]
