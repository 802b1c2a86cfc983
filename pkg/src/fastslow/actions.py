"""The 29-dimensional whole-body action: layout, chunking, and normalization.

Column layout of one action vector (fixed unit order torso, left, right):

    [0:9)    pos   translational deltas, meters   (torso, left EE, right EE)
    [9:27)   rot   three 6D orientation deltas    (torso, left EE, right EE)
    [27:29)  grip  absolute opening widths in [0, 1]  (left, right)

Position and gripper streams get affine normalization; the rotation stream
is always passed through untouched because 6D blocks must stay near the
orthonormal manifold for the geodesic reconstruction loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import ShapeMismatch

log = logging.getLogger(__name__)

ACTION_DIM = 29
POS_SLICE = slice(0, 9)
ROT_SLICE = slice(9, 27)
GRIP_SLICE = slice(27, 29)
DEFAULT_CHUNK_LEN = 32
UNIT_NAMES = ("torso", "left", "right")


@dataclass(frozen=True)
class WholeBodyAction:
    """One control step: 9 position deltas, 18 rotation dims, 2 grip widths."""

    pos: np.ndarray   # (9,)
    rot: np.ndarray   # (18,) three 6D blocks
    grip: np.ndarray  # (2,) in [0, 1]

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.pos, self.rot, self.grip])

    @staticmethod
    def from_vector(v: np.ndarray) -> "WholeBodyAction":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (ACTION_DIM,):
            raise ShapeMismatch(f"expected ({ACTION_DIM},), got {v.shape}")
        return WholeBodyAction(v[POS_SLICE].copy(), v[ROT_SLICE].copy(), v[GRIP_SLICE].copy())

    @staticmethod
    def identity() -> "WholeBodyAction":
        rot = np.tile(geometry.IDENTITY_SIXD, 3)
        return WholeBodyAction(np.zeros(9), rot, np.full(2, 0.5))

    def rot_block(self, unit: int) -> np.ndarray:
        """6D orientation delta of unit 0=torso, 1=left, 2=right."""
        return self.rot[6 * unit: 6 * unit + 6]

    def delta_pose(self, unit: int) -> geometry.DeltaPose:
        return geometry.DeltaPose(self.pos[3 * unit: 3 * unit + 3], self.rot_block(unit))


def clip_grip(values: np.ndarray, warn: bool = True) -> np.ndarray:
    """Clamp gripper commands to [0, 1], warning once per call on clips."""
    values = np.asarray(values, dtype=np.float64)
    if warn and (np.any(values < 0.0) or np.any(values > 1.0)):
        log.warning("gripper command outside [0, 1], clipping (min=%.4f max=%.4f)",
                    float(values.min()), float(values.max()))
    return np.clip(values, 0.0, 1.0)


class ActionChunk:
    """A T x 29 window of consecutive actions (T = 32 by default)."""

    def __init__(self, data: np.ndarray, validate: bool = False):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != ACTION_DIM:
            raise ShapeMismatch(f"expected (T, {ACTION_DIM}), got {data.shape}")
        self.data = data
        if validate:
            self._validate()

    def _validate(self) -> None:
        rot = self.data[:, ROT_SLICE].reshape(-1, 6)
        if not np.all(np.isfinite(self.data)):
            raise ShapeMismatch("chunk contains non-finite values")
        if np.any(np.linalg.norm(rot[:, :3], axis=-1) <= 1e-8):
            raise ShapeMismatch("degenerate 6D rotation block in chunk")
        grip = self.data[:, GRIP_SLICE]
        if np.any(grip < 0.0) or np.any(grip > 1.0):
            raise ShapeMismatch("gripper values outside [0, 1]")

    @property
    def T(self) -> int:
        return self.data.shape[0]

    def __len__(self) -> int:
        return self.T

    def action(self, t: int) -> WholeBodyAction:
        return WholeBodyAction.from_vector(self.data[t])

    def __eq__(self, other) -> bool:
        return isinstance(other, ActionChunk) and np.array_equal(self.data, other.data)

    @staticmethod
    def identity(T: int = DEFAULT_CHUNK_LEN) -> "ActionChunk":
        return ActionChunk(np.tile(WholeBodyAction.identity().vector, (T, 1)))


@dataclass
class StreamTensors:
    """Chunk factored into position / rotation / gripper streams."""

    P: np.ndarray  # (T, 9)
    R: np.ndarray  # (T, 18)
    G: np.ndarray  # (T, 2)

    def __post_init__(self):
        if not (self.P.shape[0] == self.R.shape[0] == self.G.shape[0]):
            raise ShapeMismatch("stream row counts differ")


def split_streams(chunk: ActionChunk) -> StreamTensors:
    d = chunk.data
    return StreamTensors(d[:, POS_SLICE].copy(), d[:, ROT_SLICE].copy(), d[:, GRIP_SLICE].copy())


def merge_streams(s: StreamTensors) -> ActionChunk:
    if s.P.shape[1] != 9 or s.R.shape[1] != 18 or s.G.shape[1] != 2:
        raise ShapeMismatch("stream column counts must be 9/18/2")
    return ActionChunk(np.concatenate([s.P, s.R, s.G], axis=1))


@dataclass
class NormStats:
    """Per-dimension affine statistics for pos and grip streams."""

    pos_mean: np.ndarray   # (9,)
    pos_scale: np.ndarray  # (9,) > 0
    grip_mean: np.ndarray  # (2,)
    grip_scale: np.ndarray  # (2,) > 0

    def __post_init__(self):
        if np.any(self.pos_scale <= 0) or np.any(self.grip_scale <= 0):
            raise ShapeMismatch("scales must be positive")

    @staticmethod
    def identity() -> "NormStats":
        return NormStats(np.zeros(9), np.ones(9), np.zeros(2), np.ones(2))

    @staticmethod
    def from_chunks(chunks: np.ndarray, scale_floor: float = 1e-6) -> "NormStats":
        """Fit from an (N, T, 29) stack of chunk arrays."""
        flat = chunks.reshape(-1, ACTION_DIM)
        pos = flat[:, POS_SLICE]
        grip = flat[:, GRIP_SLICE]
        return NormStats(
            pos.mean(axis=0), np.maximum(pos.std(axis=0), scale_floor),
            grip.mean(axis=0), np.maximum(grip.std(axis=0), scale_floor))

    def to_arrays(self) -> dict:
        return {"pos_mean": self.pos_mean, "pos_scale": self.pos_scale,
                "grip_mean": self.grip_mean, "grip_scale": self.grip_scale}

    @staticmethod
    def from_arrays(arrays: dict) -> "NormStats":
        return NormStats(arrays["pos_mean"], arrays["pos_scale"],
                         arrays["grip_mean"], arrays["grip_scale"])


def normalize(s: StreamTensors, stats: NormStats) -> StreamTensors:
    """Affine-normalize pos and grip; rot is returned as-is (same array)."""
    return StreamTensors((s.P - stats.pos_mean) / stats.pos_scale, s.R,
                         (s.G - stats.grip_mean) / stats.grip_scale)


def denormalize(s: StreamTensors, stats: NormStats) -> StreamTensors:
    return StreamTensors(s.P * stats.pos_scale + stats.pos_mean, s.R,
                         s.G * stats.grip_scale + stats.grip_mean)
