"""Corpus persistence, splits, raw-pose ingestion, and the synthetic
sign-language generator.

Records live in line-delimited JSON. The synthetic generator gives every
vocabulary word a deterministic 15-frame prototype motion; sentences
concatenate prototypes and add Gaussian jitter, so the stored prototype
map stays exact ground truth for segmentation and recovery oracles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (BadRatios, EmptyCorpus, EmptyResult, MissingJoint,
                     ParseError, SchemaError)
from .pose import (KeypointSequence, N_POINTS, center_and_normalize,
                   filter_noisy_frames)


@dataclass
class CorpusRecord:
    id: str
    fps: int
    text: str
    keypoints: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float32)
        if self.keypoints.ndim != 3 or self.keypoints.shape[1:] != (N_POINTS, 2):
            raise SchemaError(
                f"record {self.id!r}: keypoints must be T x {N_POINTS} x 2, "
                f"got {self.keypoints.shape}")
        if self.keypoints.shape[0] < 1:
            raise SchemaError(f"record {self.id!r}: empty keypoint sequence")

    def sequence(self):
        return KeypointSequence(self.keypoints, fps=self.fps, id=self.id)


def write_corpus(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "id": rec.id,
                "fps": rec.fps,
                "text": rec.text,
                "keypoints": rec.keypoints.astype(np.float64).tolist(),
            }
            if rec.labels:
                obj["labels"] = list(rec.labels)
            fh.write(json.dumps(obj) + "\n")


def read_corpus(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            for key in ("id", "fps", "text", "keypoints"):
                if key not in obj:
                    raise SchemaError(f"{path}:{lineno}: missing field {key!r}")
            records.append(CorpusRecord(
                id=obj["id"], fps=int(obj["fps"]), text=obj["text"],
                keypoints=np.asarray(obj["keypoints"], dtype=np.float32),
                labels=list(obj.get("labels", [])),
            ))
    return records


# --------------------------------------------------------------- synthesis


@dataclass
class SynthSpec:
    vocab_size: int = 20
    proto_len: int = 15
    sentence_len: tuple = (2, 6)
    jitter: float = 0.01
    n_sentences: int = 50
    seed: int = 0
    fps: int = 25


# static base pose in normalized units (shoulders pinned at x = ±0.5)
_BODY_BASE = np.array([
    [0.0, 0.2],      # neck
    [0.5, 0.0],      # right shoulder
    [0.65, -0.45],   # right elbow
    [0.55, -0.85],   # right wrist
    [-0.5, 0.0],     # left shoulder
    [-0.65, -0.45],  # left elbow
    [-0.55, -0.85],  # left wrist
    [0.0, -1.6],     # mid hip
])

_FACE_CENTER = np.array([0.0, 0.55])


def _face_base():
    pts = np.zeros((19, 2))
    for i in range(12):  # outer contour ring
        a = 2 * math.pi * i / 12
        pts[i] = _FACE_CENTER + 0.2 * np.array([math.cos(a), math.sin(a)])
    for i in range(7):  # inner ring: eyes and mouth region
        a = 2 * math.pi * i / 7
        pts[12 + i] = _FACE_CENTER + 0.09 * np.array([math.cos(a), math.sin(a)])
    return pts


def _hand_base():
    """23 residual points around a wrist: palm root, edges, 5 fingers."""
    pts = np.zeros((23, 2))
    pts[0] = (0.0, -0.04)
    pts[1] = (-0.05, -0.02)
    pts[2] = (0.05, -0.02)
    for f in range(5):
        a = math.pi * (0.25 + 0.125 * f)  # fingers fan downward
        direction = np.array([math.cos(a), -abs(math.sin(a))])
        for j in range(4):
            pts[3 + 4 * f + j] = pts[0] + direction * 0.035 * (j + 1)
    return pts


_FACE_BASE = _face_base()
_HAND_BASE = _hand_base()


def word_prototype(seed, word, attempt=0, proto_len=15):
    """Deterministic prototype motion for one vocabulary word.

    Sinusoidal trajectories with at most three cycles per segment: arm
    sway on the body, higher-frequency finger residuals on the hands,
    small centroid-relative face motion. Shoulders and hips stay pinned
    so generated frames remain in normalized pose units.
    """
    rng = np.random.default_rng([seed, word, attempt])
    t = np.arange(proto_len) / proto_len
    frames = np.zeros((proto_len, N_POINTS, 2))

    body = np.repeat(_BODY_BASE[None], proto_len, axis=0)
    # per-word static arm posture keeps prototypes far apart
    for wrist, elbow in ((3, 2), (6, 5)):
        shift = rng.uniform(-0.25, 0.25, size=2)
        body[:, wrist] += shift
        body[:, elbow] += 0.5 * shift
        for joint, scale in ((wrist, 1.0), (elbow, 0.5)):
            for c in range(2):
                freq = rng.integers(1, 3)
                amp = rng.uniform(0.08, 0.22) * scale
                phase = rng.uniform(0, 2 * math.pi)
                body[:, joint, c] += amp * np.sin(2 * math.pi * freq * t + phase)
    frames[:, 0:8] = body

    face = np.repeat(_FACE_BASE[None], proto_len, axis=0)
    for p in range(19):
        for c in range(2):
            freq = rng.integers(1, 4)
            amp = rng.uniform(0.0, 0.015)
            phase = rng.uniform(0, 2 * math.pi)
            face[:, p, c] += amp * np.sin(2 * math.pi * freq * t + phase)
    frames[:, 8:27] = face

    for base_col, wrist in ((27, 6), (50, 3)):
        hand = np.repeat(_HAND_BASE[None], proto_len, axis=0)
        curl = rng.uniform(0.5, 1.5)
        for p in range(23):
            for c in range(2):
                freq = rng.integers(2, 4)
                amp = rng.uniform(0.0, 0.02) * curl
                phase = rng.uniform(0, 2 * math.pi)
                hand[:, p, c] += amp * np.sin(2 * math.pi * freq * t + phase)
        frames[:, base_col:base_col + 23] = hand + frames[:, [wrist]]
    return frames


def word_token(word):
    return f"w{word:02d}"


def build_prototypes(spec):
    """Prototype per word, redrawn deterministically until pairwise
    MPJPE clears 10x the jitter level."""
    floor = 10.0 * spec.jitter
    protos = []
    for word in range(spec.vocab_size):
        for attempt in range(64):
            cand = word_prototype(spec.seed, word, attempt, spec.proto_len)
            dists = [np.linalg.norm(cand - p, axis=2).mean() for p in protos]
            if not dists or min(dists) >= floor:
                protos.append(cand)
                break
        else:
            raise RuntimeError(f"could not separate prototype for word {word}")
    gap = min((np.linalg.norm(a - b, axis=2).mean()
               for i, a in enumerate(protos) for b in protos[:i]),
              default=float("inf"))
    assert gap >= floor, f"prototype gap {gap} below {floor}"
    return {word_token(w): protos[w] for w in range(spec.vocab_size)}


def synth_generate(spec):
    """Generate the corpus; returns (records, word->prototype map)."""
    if spec.vocab_size < 2:
        raise ValueError("need a vocabulary of at least 2 words")
    protos = build_prototypes(spec)
    tokens = list(protos)
    rng = np.random.default_rng([spec.seed, 0xC0])
    lo, hi = spec.sentence_len
    records = []
    for i in range(spec.n_sentences):
        n_words = int(rng.integers(lo, hi + 1))
        words = [tokens[int(rng.integers(0, spec.vocab_size))]
                 for _ in range(n_words)]
        clean = np.concatenate([protos[w] for w in words], axis=0)
        noisy = clean + rng.normal(0.0, spec.jitter, size=clean.shape)
        records.append(CorpusRecord(
            id=f"synth-{i:04d}", fps=spec.fps, text=" ".join(words),
            keypoints=noisy.astype(np.float32), labels=words,
        ))
    return records, protos


def split(records, ratios, seed):
    """Deterministic shuffled partition into train/valid/test.

    Valid and test take floor(ratio * n); the remainder goes to train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise BadRatios(f"need three nonnegative ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios sum to {sum(ratios)}, expected 1")
    n = len(records)
    perm = np.random.default_rng(seed).permutation(n)
    n_valid = int(ratios[1] * n)
    n_test = int(ratios[2] * n)
    n_train = n - n_valid - n_test
    order = [records[i] for i in perm]
    return (order[:n_train],
            order[n_train:n_train + n_valid],
            order[n_train + n_valid:])


# --------------------------------------------------------------- ingestion


def read_index_map(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(obj, list) or len(obj) != N_POINTS:
        raise SchemaError(f"index map must list {N_POINTS} source indices")
    return [int(i) for i in obj]


def ingest_raw(path, index_map, layout, threshold=400.0, log=None):
    """Convert raw 137-point estimator output into normalized records.

    Selects the mapped 73 points and drops confidences, then drops
    non-finite frames, applies the noise filter in raw units, and
    centers/normalizes. Samples that lose every frame are skipped.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            for key in ("id", "fps", "frames"):
                if key not in obj:
                    raise SchemaError(f"{path}:{lineno}: missing field {key!r}")
            sample_id = obj["id"]
            raw_frames = obj["frames"]
            selected = []
            for t, frame in enumerate(raw_frames):
                pts = np.asarray(frame, dtype=np.float64)
                if pts.ndim != 2 or pts.shape[1] < 2:
                    raise SchemaError(
                        f"{sample_id} frame {t}: expected points with "
                        "coordinates and confidence")
                if max(index_map) >= pts.shape[0]:
                    raise MissingJoint(
                        f"{sample_id} frame {t}: {pts.shape[0]} points, "
                        f"index map needs {max(index_map) + 1}")
                selected.append(pts[index_map, :2])
            frames = np.stack(selected, axis=0)
            finite = np.isfinite(frames).all(axis=(1, 2))
            dropped = np.flatnonzero(~finite).tolist()
            if dropped and log is not None:
                log(f"{sample_id}: dropped non-finite frames {dropped}")
            frames = frames[finite]
            if frames.shape[0] == 0:
                if log is not None:
                    log(f"{sample_id}: no finite frames, skipped")
                continue
            seq = KeypointSequence(frames.astype(np.float32),
                                   fps=int(obj["fps"]), id=sample_id)
            seq, removed = filter_noisy_frames(seq, threshold)
            if removed and log is not None:
                log(f"{sample_id}: noise filter removed frames {removed}")
            try:
                seq = center_and_normalize(seq, layout, on_degenerate="drop")
            except EmptyResult:
                if log is not None:
                    log(f"{sample_id}: all frames degenerate, skipped")
                continue
            records.append(CorpusRecord(
                id=sample_id, fps=seq.fps, text=obj.get("text", ""),
                keypoints=seq.frames, labels=list(obj.get("labels", []))))
    if not records:
        raise EmptyCorpus(f"{path}: no usable samples")
    return records
