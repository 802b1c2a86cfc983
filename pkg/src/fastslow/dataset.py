"""Episode container and the on-disk dataset format.

A dataset file is one JSON header line (shapes, rates, format version,
per-episode table) followed by the raw little-endian float32 arrays of
every episode in declared order: features first, then actions.  The
header is serialized canonically, so write -> read -> write is
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IOFailure, ShapeMismatch, VersionMismatch

FORMAT_VERSION = 1


@dataclass
class EpisodeRecord:
    """One simulator trajectory.

    features: (n_frames, feature_dim) float32, one frame per control step,
        captured before the step executes.
    actions: (n_steps, 29) float32.
    subtask_bounds: step index at which each subtask first completed.
    """

    features: np.ndarray
    actions: np.ndarray
    instruction_id: int
    subtask_bounds: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.features.ndim != 2 or self.actions.ndim != 2:
            raise ShapeMismatch("episode arrays must be 2-D")
        if self.features.shape[0] != self.actions.shape[0]:
            raise ShapeMismatch("frame count must equal step count")

    @property
    def n_steps(self) -> int:
        return self.actions.shape[0]


@dataclass
class Dataset:
    episodes: list[EpisodeRecord]
    f_cam: float = 30.0
    control_hz: float = 30.0

    @property
    def feature_dim(self) -> int:
        return self.episodes[0].features.shape[1]

    def __len__(self) -> int:
        return len(self.episodes)

    # -- persistence -----------------------------------------------------

    def save(self, path) -> None:
        path = Path(path)
        table = [{"instruction": int(e.instruction_id),
                  "n_frames": int(e.features.shape[0]),
                  "n_steps": int(e.actions.shape[0]),
                  "subtask_bounds": [int(b) for b in e.subtask_bounds]}
                 for e in self.episodes]
        header = {"format_version": FORMAT_VERSION,
                  "f_cam": self.f_cam, "control_hz": self.control_hz,
                  "feature_dim": int(self.feature_dim),
                  "action_dim": int(self.episodes[0].actions.shape[1]),
                  "episodes": table}
        line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
        try:
            with open(path, "wb") as f:
                f.write(line.encode("utf-8"))
                for e in self.episodes:
                    f.write(np.ascontiguousarray(e.features, dtype="<f4").tobytes())
                    f.write(np.ascontiguousarray(e.actions, dtype="<f4").tobytes())
        except OSError as exc:
            raise IOFailure(f"cannot write dataset {path}: {exc}") from exc

    @staticmethod
    def load(path) -> "Dataset":
        path = Path(path)
        try:
            with open(path, "rb") as f:
                raw = f.readline()
                try:
                    header = json.loads(raw.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise VersionMismatch(f"unreadable dataset header in {path}: {exc}") from exc
                if not isinstance(header, dict) or header.get("format_version") != FORMAT_VERSION:
                    raise VersionMismatch(f"unsupported dataset format in {path}")
                fd = header["feature_dim"]
                ad = header["action_dim"]
                episodes = []
                for entry in header["episodes"]:
                    nf, ns = entry["n_frames"], entry["n_steps"]
                    feat = np.frombuffer(f.read(nf * fd * 4), dtype="<f4").reshape(nf, fd).copy()
                    act = np.frombuffer(f.read(ns * ad * 4), dtype="<f4").reshape(ns, ad).copy()
                    episodes.append(EpisodeRecord(feat, act, entry["instruction"],
                                                  list(entry["subtask_bounds"])))
                return Dataset(episodes, header["f_cam"], header["control_hz"])
        except OSError as exc:
            raise IOFailure(f"cannot read dataset {path}: {exc}") from exc

    # -- sampling helpers --------------------------------------------------

    def chunk_stack(self, T: int = 32, stride: int = 8) -> np.ndarray:
        """All windows of length T at the given stride, as one (N, T, 29) stack."""
        out = []
        for e in self.episodes:
            acts = e.actions.astype(np.float64)
            for t in range(0, acts.shape[0] - T + 1, stride):
                out.append(acts[t:t + T])
        if not out:
            raise ShapeMismatch("no chunks: episodes shorter than the chunk length")
        return np.stack(out)

    def sample_anchor(self, rng: np.random.Generator, T: int, delta_max: int) -> tuple[int, int]:
        """Pick (episode, t0) such that t0 + delta_max + T still fits."""
        for _ in range(256):
            ep = int(rng.integers(0, len(self.episodes)))
            limit = self.episodes[ep].n_steps - T - delta_max
            if limit > 0:
                return ep, int(rng.integers(0, limit))
        raise ShapeMismatch("episodes too short for the requested chunk and shift")

    def chunk_at(self, ep: int, t0: int, T: int) -> np.ndarray:
        return self.episodes[ep].actions[t0:t0 + T].astype(np.float64)
