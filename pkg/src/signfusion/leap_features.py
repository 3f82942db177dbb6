"""Hand-skeleton records, derived angles and the flat 362-value frame layout.

A frame vector is two 180-value hand blocks (left, then right) followed by
the two presence flags. Inside a hand block::

    arm    start xyz, end xyz, angle                                  7
    palm   position xyz, velocity xyz, normal xyz,
           pitch, roll, yaw, palm_normal_angle                        13
    bones  thumb..pinky x metacarpal..distal,
           each start xyz, end xyz, width, angle                      160
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .errors import MalformedCsv, WrongLength

FINGERS = ("thumb", "index", "middle", "ring", "pinky")
BONES = ("metacarpal", "proximal", "intermediate", "distal")
HANDS = ("left", "right")

HAND_BLOCK = 180
FRAME_LEN = 2 * HAND_BLOCK + 2
LEFT_PRESENT = 360
RIGHT_PRESENT = 361

_ARM = 0
_PALM = 7
_BONE0 = 20
_BONE_STRIDE = 8


@dataclass(frozen=True)
class Vec3:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __iter__(self):
        yield self.x
        yield self.y
        yield self.z


ZERO = Vec3()


@dataclass(frozen=True)
class BoneRecord:
    start: Vec3 = ZERO
    end: Vec3 = ZERO
    width: float = 0.0
    angle: float = 0.0


@dataclass(frozen=True)
class PalmRecord:
    position: Vec3 = ZERO
    velocity: Vec3 = ZERO
    normal: Vec3 = ZERO
    pitch: float = 0.0
    roll: float = 0.0
    yaw: float = 0.0
    palm_normal_angle: float = 0.0


@dataclass(frozen=True)
class ArmRecord:
    start: Vec3 = ZERO
    end: Vec3 = ZERO
    angle: float = 0.0


def _no_bones():
    return tuple(tuple(BoneRecord() for _ in BONES) for _ in FINGERS)


@dataclass(frozen=True)
class HandFrame:
    """One hand at one time step. ``fingers[f][b]`` indexes FINGERS x BONES."""

    arm: ArmRecord = field(default_factory=ArmRecord)
    palm: PalmRecord = field(default_factory=PalmRecord)
    fingers: tuple = field(default_factory=_no_bones)
    present: int = 0

    def __post_init__(self):
        if len(self.fingers) != len(FINGERS) or any(len(f) != len(BONES) for f in self.fingers):
            raise ValueError("a hand needs 5 fingers of 4 bones each")

    @classmethod
    def absent(cls) -> "HandFrame":
        return cls()

    def bones(self):
        for finger in self.fingers:
            yield from finger


def magnitude(v) -> float:
    x, y, z = v
    return math.sqrt(x * x + y * y + z * z)


def angle_between(a, b) -> float:
    """Angle in radians between two vectors, 0 if either has zero length."""
    na = magnitude(a)
    nb = magnitude(b)
    if not (na > 0.0 and nb > 0.0):
        return 0.0
    ax, ay, az = a
    bx, by, bz = b
    ratio = (ax * bx + ay * by + az * bz) / (na * nb)
    return math.acos(min(1.0, max(-1.0, ratio)))


def derive_hand_features(hand: HandFrame) -> HandFrame:
    """Fill the arm, bone and palm-normal angles from the raw positions."""
    fingers = tuple(
        tuple(replace(bone, angle=angle_between(bone.start, bone.end)) for bone in finger)
        for finger in hand.fingers
    )
    return replace(
        hand,
        arm=replace(hand.arm, angle=angle_between(hand.arm.start, hand.arm.end)),
        palm=replace(hand.palm, palm_normal_angle=angle_between(hand.palm.position, hand.palm.normal)),
        fingers=fingers,
    )


def _hand_values(hand: HandFrame):
    arm, palm = hand.arm, hand.palm
    out = [*arm.start, *arm.end, arm.angle,
           *palm.position, *palm.velocity, *palm.normal,
           palm.pitch, palm.roll, palm.yaw, palm.palm_normal_angle]
    for bone in hand.bones():
        out.extend((*bone.start, *bone.end, bone.width, bone.angle))
    return out


def flatten_frame(left: HandFrame, right: HandFrame) -> np.ndarray:
    values = _hand_values(left) + _hand_values(right)
    values.append(float(left.present))
    values.append(float(right.present))
    return np.asarray(values, dtype=np.float64)


def _hand_from_block(block, present) -> HandFrame:
    v = [float(t) for t in block]

    def vec(i):
        return Vec3(v[i], v[i + 1], v[i + 2])

    arm = ArmRecord(vec(0), vec(3), v[6])
    palm = PalmRecord(vec(7), vec(10), vec(13), v[16], v[17], v[18], v[19])
    fingers = []
    for f in range(len(FINGERS)):
        bones = []
        for b in range(len(BONES)):
            o = _BONE0 + (f * len(BONES) + b) * _BONE_STRIDE
            bones.append(BoneRecord(vec(o), vec(o + 3), v[o + 6], v[o + 7]))
        fingers.append(tuple(bones))
    return HandFrame(arm, palm, tuple(fingers), int(present))


def unflatten_frame(values) -> tuple[HandFrame, HandFrame]:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size != FRAME_LEN:
        raise WrongLength(f"frame vector must have {FRAME_LEN} values, got {v.size}")
    left = _hand_from_block(v[:HAND_BLOCK], v[LEFT_PRESENT])
    right = _hand_from_block(v[HAND_BLOCK:2 * HAND_BLOCK], v[RIGHT_PRESENT])
    return left, right


# --- vectorised helpers over (N, 362) matrices -------------------------------

def _angle_pairs():
    """Column offsets (a, b, angle) of every derived angle within one hand block."""
    pairs = [(_ARM, _ARM + 3, _ARM + 6), (_PALM, _PALM + 6, _PALM + 12)]
    for k in range(len(FINGERS) * len(BONES)):
        o = _BONE0 + k * _BONE_STRIDE
        pairs.append((o, o + 3, o + 7))
    return pairs


ANGLE_COLUMNS = tuple(base + p[2] for base in (0, HAND_BLOCK) for p in _angle_pairs())


def derive_angles_matrix(frames: np.ndarray) -> np.ndarray:
    """Recompute every derived angle column of an (N, 362) matrix at once.

    Same clamping and zero-length rule as :func:`angle_between`.
    """
    m = np.array(frames, dtype=np.float64, copy=True)
    if m.ndim != 2 or m.shape[1] != FRAME_LEN:
        raise WrongLength(f"expected (N, {FRAME_LEN}) frames, got {m.shape}")
    for base in (0, HAND_BLOCK):
        for pa, pb, pc in _angle_pairs():
            a = m[:, base + pa:base + pa + 3]
            b = m[:, base + pb:base + pb + 3]
            na = np.sqrt((a * a).sum(axis=1))
            nb = np.sqrt((b * b).sum(axis=1))
            ok = (na > 0) & (nb > 0)
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = (a * b).sum(axis=1) / (na * nb)
            m[:, base + pc] = np.where(ok, np.arccos(np.clip(np.where(ok, ratio, 0.0), -1.0, 1.0)), 0.0)
    return m


# --- CSV ---------------------------------------------------------------------

def column_names() -> list[str]:
    names = []
    for hand in HANDS:
        p = f"{hand}_"
        names += [p + s for s in ("arm_start_x", "arm_start_y", "arm_start_z",
                                  "arm_end_x", "arm_end_y", "arm_end_z", "arm_angle")]
        for part in ("position", "velocity", "normal"):
            names += [f"{p}palm_{part}_{ax}" for ax in "xyz"]
        names += [p + s for s in ("palm_pitch", "palm_roll", "palm_yaw", "palm_normal_angle")]
        for finger in FINGERS:
            for bone in BONES:
                q = f"{p}{finger}_{bone}_"
                names += [q + s for s in ("start_x", "start_y", "start_z",
                                          "end_x", "end_y", "end_z", "width", "angle")]
    names += ["left_present", "right_present"]
    return names


COLUMNS = column_names()
CSV_HEADER = ["frame", *COLUMNS, "timestamp"]
FRAME_PERIOD_S = 0.2
EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)


def format_value(v: float) -> str:
    if math.isnan(v):
        return "NaN"
    return repr(float(v))


def frame_timestamps(n, start=EPOCH, period=FRAME_PERIOD_S):
    return [(start + timedelta(seconds=i * period)).isoformat(timespec="milliseconds") for i in range(n)]


def write_frames_csv(path, frames, timestamps=None):
    """Write an (N, 362) matrix as a frames CSV (index, 362 features, timestamp)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != FRAME_LEN:
        raise WrongLength(f"expected (N, {FRAME_LEN}) frames, got {frames.shape}")
    if timestamps is None:
        timestamps = frame_timestamps(len(frames))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, row in enumerate(frames):
            w.writerow([i, *["NaN" if v != v else repr(v) for v in row.tolist()], timestamps[i]])


def read_frames_csv(path, with_timestamps=False):
    """Read a frames CSV back into an (N, 362) matrix; NaN tokens are kept."""
    path = Path(path)
    rows, stamps = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise MalformedCsv(f"{path}: header does not match the frame schema")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(CSV_HEADER):
                raise MalformedCsv(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(rec)}")
            try:
                rows.append([float(t) for t in rec[1:-1]])
            except ValueError as exc:
                raise MalformedCsv(f"{path}:{lineno}: {exc}") from None
            stamps.append(rec[-1])
    m = np.asarray(rows, dtype=np.float64).reshape(-1, FRAME_LEN)
    return (m, stamps) if with_timestamps else m
