"""Keypoint data model, the 73-point layout, and deterministic preprocessing.

Sequences are T x 73 x 2 arrays. The layout splits the points into an
8-point upper body, a 19-point face, and two 23-point hands, with a
skeleton edge list shipped as a versioned JSON file. Preprocessing
(noise filtering in raw pixel units, then shoulder-based centering and
scaling) is a pure function of its inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import (AlreadyLonger, DegenerateFrame, EmptyResult, SchemaError,
                     TooShort)

N_POINTS = 73
N_COORDS = 2

# positions of the shoulder joints inside the body index list; the body
# ordering (neck, r_shoulder, r_elbow, r_wrist, l_shoulder, l_elbow,
# l_wrist, mid_hip) is fixed by the layout file
RIGHT_SHOULDER_POS = 1
LEFT_SHOULDER_POS = 4


@dataclass
class PartLayout:
    body_indices: list
    face_indices: list
    left_hand_indices: list
    right_hand_indices: list
    left_wrist_index: int
    right_wrist_index: int
    skeleton_edges: list
    layout_version: str = "v1"

    def __post_init__(self):
        self.validate()

    @property
    def left_shoulder(self):
        return self.body_indices[LEFT_SHOULDER_POS]

    @property
    def right_shoulder(self):
        return self.body_indices[RIGHT_SHOULDER_POS]

    @property
    def hand_indices(self):
        return list(self.left_hand_indices) + list(self.right_hand_indices)

    def validate(self):
        parts = {
            "body": (self.body_indices, 8),
            "face": (self.face_indices, 19),
            "left_hand": (self.left_hand_indices, 23),
            "right_hand": (self.right_hand_indices, 23),
        }
        seen = set()
        for name, (idx, count) in parts.items():
            if len(idx) != count:
                raise SchemaError(f"{name} has {len(idx)} indices, expected {count}")
            overlap = seen & set(idx)
            if overlap:
                raise SchemaError(f"{name} overlaps other parts at {sorted(overlap)}")
            seen |= set(idx)
        if seen != set(range(N_POINTS)):
            raise SchemaError("part indices do not cover 0..72 exactly")
        for i, j in self.skeleton_edges:
            if not (0 <= i < N_POINTS and 0 <= j < N_POINTS):
                raise SchemaError(f"edge ({i},{j}) out of range")
        for name, (idx, _) in parts.items():
            if not _connected(set(idx), self.skeleton_edges):
                raise SchemaError(f"{name} subgraph is not connected")
        for wrist, hand in ((self.left_wrist_index, self.left_hand_indices),
                            (self.right_wrist_index, self.right_hand_indices)):
            if wrist not in self.body_indices:
                raise SchemaError(f"wrist index {wrist} not a body index")
            hand_set = set(hand)
            attached = any((i == wrist and j in hand_set)
                           or (j == wrist and i in hand_set)
                           for i, j in self.skeleton_edges)
            if not attached:
                raise SchemaError(f"hand rooted at wrist {wrist} is detached")


def _connected(nodes, edges):
    if not nodes:
        return False
    adj = {n: [] for n in nodes}
    for i, j in edges:
        if i in adj and j in adj:
            adj[i].append(j)
            adj[j].append(i)
    start = next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return seen == nodes


def layout_from_dict(obj):
    required = {"layout_version", "body", "face", "left_hand", "right_hand",
                "left_wrist", "right_wrist", "edges"}
    missing = required - set(obj)
    if missing:
        raise SchemaError(f"layout file missing keys: {sorted(missing)}")
    return PartLayout(
        body_indices=list(obj["body"]),
        face_indices=list(obj["face"]),
        left_hand_indices=list(obj["left_hand"]),
        right_hand_indices=list(obj["right_hand"]),
        left_wrist_index=int(obj["left_wrist"]),
        right_wrist_index=int(obj["right_wrist"]),
        skeleton_edges=[tuple(e) for e in obj["edges"]],
        layout_version=str(obj["layout_version"]),
    )


def load_layout(path=None):
    """Load a layout JSON; defaults to the packaged v1 file."""
    if path is None:
        text = resources.files("signrep.data").joinpath("layout_v1.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"layout file is not valid JSON: {exc}") from exc
    return layout_from_dict(obj)


@dataclass
class KeypointSequence:
    frames: np.ndarray
    fps: int = 25
    id: str = ""
    orig_len: int = 0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (N_POINTS, N_COORDS):
            raise SchemaError(
                f"frames must be T x {N_POINTS} x {N_COORDS}, "
                f"got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise TooShort("a sequence needs at least one frame")
        if self.orig_len == 0:
            self.orig_len = self.frames.shape[0]

    @property
    def length(self):
        return self.frames.shape[0]


@dataclass
class SignSegment:
    frames: np.ndarray
    source_id: str = ""
    offset: int = 0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (N_POINTS, N_COORDS):
            raise SchemaError(f"segment frames malformed: {self.frames.shape}")

    @property
    def length(self):
        return self.frames.shape[0]


@dataclass
class PartDecomposition:
    body: np.ndarray
    face_normalized: np.ndarray
    hands_residual: np.ndarray
    face_centroid: np.ndarray
    layout: PartLayout = field(repr=False, default=None)


def center_and_normalize(seq, layout, on_degenerate="raise"):
    """Translate each frame to the shoulder midpoint and scale shoulder
    distance to 1.

    Frames with zero shoulder distance or non-finite coordinates are
    degenerate; ``on_degenerate`` picks between raising DegenerateFrame
    and dropping them (EmptyResult if nothing survives).
    """
    frames = np.asarray(seq.frames, dtype=np.float64)
    ls, rs = layout.left_shoulder, layout.right_shoulder
    finite = np.isfinite(frames).all(axis=(1, 2))
    dist = np.linalg.norm(frames[:, ls] - frames[:, rs], axis=1)
    good = finite & (dist > 0.0)
    bad = np.flatnonzero(~good)
    if bad.size:
        if on_degenerate == "raise":
            raise DegenerateFrame(f"degenerate frames at {bad.tolist()}")
        frames = frames[good]
        dist = dist[good]
        if frames.shape[0] == 0:
            raise EmptyResult(f"all {seq.length} frames degenerate")
    mid = 0.5 * (frames[:, ls] + frames[:, rs])
    out = (frames - mid[:, None, :]) / dist[:, None, None]
    return KeypointSequence(out.astype(np.float32), fps=seq.fps, id=seq.id,
                            orig_len=out.shape[0])


def frame_mean_distances(seq):
    """Mean per-joint displacement between consecutive frames (T-1 values)."""
    frames = np.asarray(seq.frames, dtype=np.float64)
    if frames.shape[0] < 2:
        raise TooShort("need at least two frames for transition distances")
    diff = frames[1:] - frames[:-1]
    return np.linalg.norm(diff, axis=2).mean(axis=1)


def filter_noisy_frames(seq, threshold=400.0):
    """Drop frames whose mean joint displacement from the last retained
    frame exceeds the threshold (raw coordinate units).

    Greedy: the first frame is always kept, and each removal recomputes
    the next distance against the surviving predecessor so one spike
    removes only itself.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    frames = np.asarray(seq.frames, dtype=np.float64)
    kept = [0]
    removed = []
    for t in range(1, frames.shape[0]):
        d = np.linalg.norm(frames[t] - frames[kept[-1]], axis=1).mean()
        if d > threshold:
            removed.append(t)
        else:
            kept.append(t)
    if not kept:
        raise EmptyResult("noise filter removed every frame")
    out = KeypointSequence(seq.frames[kept], fps=seq.fps, id=seq.id,
                           orig_len=len(kept))
    return out, removed


def decompose_parts(seq, layout):
    """Split a normalized sequence into body, centroid-free face, and
    wrist-residual hand streams. Math in float64 so reassembly is exact."""
    frames = np.asarray(seq.frames, dtype=np.float64)
    body = frames[:, layout.body_indices].copy()
    face = frames[:, layout.face_indices]
    centroid = face.mean(axis=1, keepdims=True)
    left = frames[:, layout.left_hand_indices] \
        - frames[:, [layout.left_wrist_index]]
    right = frames[:, layout.right_hand_indices] \
        - frames[:, [layout.right_wrist_index]]
    return PartDecomposition(
        body=body,
        face_normalized=face - centroid,
        hands_residual=np.concatenate([left, right], axis=1),
        face_centroid=centroid,
        layout=layout,
    )


def reassemble(dec):
    """Invert decompose_parts back to T x 73 x 2 frames."""
    layout = dec.layout
    t = dec.body.shape[0]
    frames = np.zeros((t, N_POINTS, N_COORDS), dtype=dec.body.dtype)
    frames[:, layout.body_indices] = dec.body
    frames[:, layout.face_indices] = dec.face_normalized + dec.face_centroid
    n_left = len(layout.left_hand_indices)
    left_wrist = frames[:, [layout.left_wrist_index]]
    right_wrist = frames[:, [layout.right_wrist_index]]
    frames[:, layout.left_hand_indices] = dec.hands_residual[:, :n_left] + left_wrist
    frames[:, layout.right_hand_indices] = dec.hands_residual[:, n_left:] + right_wrist
    return frames


def pad_to_length(seq, target):
    """Extend to target frames by repeating the last frame."""
    if target < 1:
        raise ValueError("target length must be positive")
    t = seq.length
    if t > target:
        raise AlreadyLonger(f"sequence has {t} frames, target {target}")
    if t == target:
        return seq
    tail = np.repeat(seq.frames[-1:], target - t, axis=0)
    return KeypointSequence(np.concatenate([seq.frames, tail], axis=0),
                            fps=seq.fps, id=seq.id, orig_len=t)
