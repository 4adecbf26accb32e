"""The unified trajectory space: endpoint extraction for both embodiments,
frequency resampling, normalization statistics, and chunking.

A trajectory is a sequence of 3D positions of the operational endpoint — the
thumb/index midpoint for a human hand, the end-effector position for a robot —
tagged with its sampling frequency and embodiment. Once data is in this
space, downstream generative code treats both embodiments identically (the
only consumer of the tag is the action-loss masking rule in the policy).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmbodimentError
from .hand import INDEX_TIP, THUMB_TIP

HUMAN = "human"
ROBOT = "robot"

DEFAULT_HUMAN_HZ = 30.0
DEFAULT_ROBOT_HZ = 10.0

CHUNK_LENGTH = 50
STD_FLOOR = 1e-6


@dataclass
class ProprioState:
    """Proprioceptive state in one of two variants.

    The robot variant carries position (m), a unit quaternion (w, x, y, z)
    and the gripper width in [0, 1] — 8 numbers total. The trajectory
    variant carries only the 3D endpoint position, which is all the
    trajectory expert conditions on.
    """

    position: np.ndarray
    quaternion: np.ndarray | None = None
    gripper_width: float | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if self.quaternion is not None:
            self.quaternion = np.asarray(self.quaternion, dtype=np.float64).reshape(4)
            if abs(np.linalg.norm(self.quaternion) - 1.0) > 1e-6:
                raise ValueError("quaternion must have unit norm within 1e-6")
            if self.gripper_width is None:
                raise ValueError("robot variant needs a gripper width")
            if not 0.0 <= self.gripper_width <= 1.0:
                raise ValueError(f"gripper width must be in [0, 1], got {self.gripper_width}")

    @property
    def is_robot(self) -> bool:
        return self.quaternion is not None

    def as_vector(self) -> np.ndarray:
        """8 values for the robot variant, 3 for the trajectory variant."""
        if self.is_robot:
            return np.concatenate([self.position, self.quaternion, [self.gripper_width]])
        return self.position.copy()


@dataclass
class UnifiedTrajectory:
    """Endpoint positions (N, 3) at a fixed sampling frequency."""

    positions: np.ndarray
    frequency_hz: float
    embodiment: str

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) < 1:
            raise ValueError("a trajectory needs at least one position")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("trajectory positions must be finite")
        if not self.frequency_hz > 0:
            raise ValueError(f"frequency must be positive, got {self.frequency_hz}")
        if str(self.embodiment) not in (HUMAN, ROBOT):
            raise ValueError(f"unknown embodiment {self.embodiment!r}")

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class NormStats:
    """Per-dimension mean/std with the std floored at {STD_FLOOR}."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if np.any(self.std <= 0):
            raise ValueError("std must be positive in every dimension")


NormStats.__doc__ = NormStats.__doc__.format(STD_FLOOR=STD_FLOOR)


@dataclass
class TrajectoryChunk:
    """A fixed-length window of future positions aligned to an anchor step.

    The window starts at the anchor itself; when the source runs out, the
    tail repeats the final position and is flagged as padding (padded steps
    are excluded from training losses).
    """

    positions: np.ndarray
    padding: np.ndarray
    anchor: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.padding = np.asarray(self.padding, dtype=bool)
        if self.positions.shape != (CHUNK_LENGTH, 3):
            raise ValueError(f"chunk must be ({CHUNK_LENGTH}, 3), got {self.positions.shape}")
        if self.padding.shape != (CHUNK_LENGTH,):
            raise ValueError("padding flags must have one entry per step")


def extract_human_endpoint(joints: np.ndarray) -> np.ndarray:
    """Midpoint of the thumb and index fingertips of a (21, 3) joint set."""
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (21, 3):
        raise ValueError(f"expected (21, 3) joints, got {joints.shape}")
    return (joints[THUMB_TIP] + joints[INDEX_TIP]) / 2.0


def extract_robot_endpoint(state: ProprioState) -> np.ndarray:
    """The end-effector position of a robot proprioceptive state, unchanged."""
    if not state.is_robot:
        raise EmbodimentError("extract_robot_endpoint needs a robot-variant state")
    return state.position.copy()


def resample(traj: UnifiedTrajectory, dst_hz: float) -> UnifiedTrajectory:
    """Linearly interpolate onto a uniform grid at ``dst_hz``.

    The grid spans exactly the same duration (endpoints preserved); its step
    is ``duration / round(duration * dst_hz)``, which equals ``1 / dst_hz``
    whenever the duration is commensurate with the target rate.
    """
    if not dst_hz > 0:
        raise ValueError(f"target frequency must be positive, got {dst_hz}")
    if dst_hz == traj.frequency_hz:
        return UnifiedTrajectory(traj.positions.copy(), traj.frequency_hz, traj.embodiment)
    if len(traj) < 2:
        raise ValueError("resampling to a different rate needs at least 2 points")
    duration = (len(traj) - 1) / traj.frequency_hz
    steps = max(1, round(duration * dst_hz))
    t_src = np.arange(len(traj)) / traj.frequency_hz
    t_dst = np.linspace(0.0, duration, steps + 1)
    out = np.stack([np.interp(t_dst, t_src, traj.positions[:, d]) for d in range(3)], axis=1)
    out[0] = traj.positions[0]
    out[-1] = traj.positions[-1]
    return UnifiedTrajectory(out, dst_hz, traj.embodiment)


def fit_norm_stats(data: np.ndarray) -> NormStats:
    """Per-dimension mean and floored std over a (N, d) dataset."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) < 2:
        raise ValueError("need a (N >= 2, d) dataset to fit normalization stats")
    return NormStats(mean=data.mean(axis=0), std=np.maximum(data.std(axis=0), STD_FLOOR))


def normalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


def window_with_padding(values: np.ndarray, anchor: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Anchor-inclusive window [anchor, anchor + horizon) of a (N, d) array,
    tail-replicated from the final row with padding flags."""
    values = np.asarray(values)
    n = len(values)
    if not 0 <= anchor < n:
        raise ValueError(f"anchor {anchor} outside [0, {n})")
    real = min(horizon, n - anchor)
    window = np.concatenate([values[anchor:anchor + real],
                             np.repeat(values[-1:], horizon - real, axis=0)])
    padding = np.arange(horizon) >= real
    return window, padding


def make_chunks(traj: UnifiedTrajectory, horizon: int = CHUNK_LENGTH) -> list[TrajectoryChunk]:
    """One chunk per anchor step; see :class:`TrajectoryChunk` for padding."""
    chunks = []
    for anchor in range(len(traj)):
        window, padding = window_with_padding(traj.positions, anchor, horizon)
        chunks.append(TrajectoryChunk(window, padding, anchor=anchor))
    return chunks


def speed_profile(traj: UnifiedTrajectory) -> tuple[float, float]:
    """Mean and std of per-step displacement magnitudes (meters)."""
    if len(traj) < 2:
        raise ValueError("speed profile needs at least 2 points")
    steps = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
    return float(steps.mean()), float(steps.std())
