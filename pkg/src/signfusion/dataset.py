"""Corpus ingestion, stratified splitting and synthetic corpus generation.

On-disk layout::

    root/manifest.json
    root/<sign>/rep_NN/frames.csv        header + 73 frame rows
    root/<sign>/rep_NN/frame_FF.png      FF = 00..72, 8-bit RGB
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (BadFactorization, EmptySequence, MalformedCsv, MissingImage,
                     TooFewSamples, UnknownLayout)
from .leap_features import (FRAME_LEN, HAND_BLOCK, LEFT_PRESENT, RIGHT_PRESENT, BONES, FINGERS,
                            derive_angles_matrix, read_frames_csv, write_frames_csv)
from .preprocessing import preprocess_image

FRAMES_PER_REP = 73
REPRESENTATIVE_FRAME = 36
_REP_RE = re.compile(r"^rep_(\d+)$")


class LabelTable:
    """Ordered sign names with a name <-> index map."""

    def __init__(self, names):
        names = list(names)
        if len(set(names)) != len(names):
            raise ValueError("label names must be distinct")
        self.names = names
        self._index = {n: i for i, n in enumerate(names)}

    @classmethod
    def from_names(cls, names):
        """Lexicographic table, independent of input order."""
        return cls(sorted(set(names)))

    def index(self, name):
        return self._index[name]

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __getitem__(self, i):
        return self.names[i]

    def __eq__(self, other):
        return isinstance(other, LabelTable) and self.names == other.names

    def __repr__(self):
        return f"LabelTable({self.names!r})"


@dataclass
class GestureSample:
    label: str
    class_index: int
    frames: np.ndarray  # (73, 362), raw (not imputed, not scaled)
    image: np.ndarray   # (S, S, 3) in [0, 1]
    repetition_id: int

    def key(self):
        return (self.class_index, self.repetition_id)


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be positive and sum to 1, got {fr}")


def normalize_length(frames, target=FRAMES_PER_REP):
    """Truncate to ``target`` rows, or pad by repeating the last row."""
    m = np.asarray(frames, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise EmptySequence("a repetition needs at least one frame")
    n = m.shape[0]
    if n >= target:
        return m[:target].copy()
    pad = np.repeat(m[-1:], target - n, axis=0)
    return np.concatenate([m, pad], axis=0)


def _read_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_dataset(root, image_size=None, representative_frame=REPRESENTATIVE_FRAME,
                 frames_per_rep=FRAMES_PER_REP):
    """Load every repetition under ``root``.

    ``image_size=None`` keeps the stored resolution (pixels are still scaled
    to [0, 1]). Samples come back ordered by (class index, repetition id).
    """
    root = Path(root)
    if not root.is_dir():
        raise UnknownLayout(f"{root}: corpus root is not a directory")
    sign_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        signs = manifest.get("signs")
        if not isinstance(signs, list) or sorted(signs) != sorted(p.name for p in sign_dirs):
            raise UnknownLayout(f"{manifest_path}: signs do not match the sign directories")
    labels = LabelTable.from_names(p.name for p in sign_dirs)
    samples = []
    for name in labels:
        sign_dir = root / name
        reps = []
        for rep_dir in sorted(sign_dir.iterdir()):
            m = _REP_RE.match(rep_dir.name)
            if not rep_dir.is_dir() or m is None:
                raise UnknownLayout(f"{rep_dir}: expected rep_NN directories only")
            reps.append((int(m.group(1)), rep_dir))
        if not reps:
            raise UnknownLayout(f"{sign_dir}: sign directory holds no repetitions")
        for rep_id, rep_dir in sorted(reps):
            csv_path = rep_dir / "frames.csv"
            if not csv_path.exists():
                raise MalformedCsv(f"{csv_path}: missing frames file")
            frames = read_frames_csv(csv_path)
            if frames.shape[0] == 0:
                raise MalformedCsv(f"{csv_path}: no frame rows")
            frames = normalize_length(frames, frames_per_rep)
            img_path = rep_dir / f"frame_{representative_frame:02d}.png"
            if not img_path.exists():
                raise MissingImage(f"{img_path}: representative image not found")
            raw = _read_png(img_path)
            if image_size is None:
                image = raw.astype(np.float64) / 255.0
            else:
                image = preprocess_image(raw, image_size)
            samples.append(GestureSample(name, labels.index(name), frames, image, rep_id))
    return labels, samples


def _by_class(samples):
    groups = {}
    for s in samples:
        groups.setdefault(s.class_index, []).append(s)
    return {k: sorted(v, key=lambda s: s.repetition_id) for k, v in sorted(groups.items())}


def stratified_split(samples, spec: SplitSpec, labels: LabelTable | None = None):
    """Per-class split into (train, val, test).

    Each class sends floor(train_frac * n) samples to training, capped so that
    validation and test get at least one each. The remainder is divided
    between validation and test in proportion to their fractions; odd
    remainders alternate across classes so the global totals stay balanced.
    """
    groups = _by_class(samples)
    rng = np.random.default_rng(spec.seed)
    val_share = spec.val_frac / (spec.val_frac + spec.test_frac)
    train, val, test = [], [], []
    cum_ideal = 0.0
    cum_val = 0
    for k, members in groups.items():
        n = len(members)
        if n < 3:
            name = labels[k] if labels is not None else members[0].label
            raise TooFewSamples(f"class {name!r} has {n} samples; at least 3 are required")
        n_train = min(max(1, math.floor(spec.train_frac * n + 1e-9)), n - 2)
        rest = n - n_train
        cum_ideal += rest * val_share
        n_val = math.floor(cum_ideal + 0.5) - cum_val
        n_val = min(max(n_val, 1), rest - 1)
        cum_val += n_val
        order = rng.permutation(n)
        picked = [members[i] for i in order]
        train += picked[:n_train]
        val += picked[n_train:n_train + n_val]
        test += picked[n_train + n_val:]
    key = GestureSample.key
    return sorted(train, key=key), sorted(val, key=key), sorted(test, key=key)


def split_manifest(train, val, test):
    return {name: [[s.label, s.repetition_id] for s in part]
            for name, part in (("train", train), ("val", val), ("test", test))}


# --- synthetic corpora --------------------------------------------------------

def factor_classes(k):
    """Most balanced factorisation k = leap_parts * image_parts with image_parts >= 2."""
    best = None
    for b in range(2, math.isqrt(k) + 1):
        if k % b == 0:
            best = b
    if best is None:
        raise BadFactorization(f"{k} classes cannot be split across two modalities (prime or < 4)")
    return k // best, best


def _hand_template(side):
    """A static open-hand skeleton (mm) in the flat 180-value block layout."""
    block = np.zeros(HAND_BLOCK)
    sx = -1.0 if side == "left" else 1.0
    wrist = np.array([sx * 80.0, 180.0, 40.0])
    block[0:3] = wrist + np.array([sx * 20.0, -60.0, 200.0])  # elbow
    block[3:6] = wrist
    palm = wrist + np.array([0.0, 10.0, -45.0])
    block[7:10] = palm
    block[13:16] = (0.0, -1.0, 0.0)
    block[16:19] = (0.1, sx * 0.05, sx * 0.2)
    lengths = (40.0, 30.0, 22.0, 18.0)
    widths = (20.0, 18.0, 17.0, 16.0, 15.0)
    for f in range(len(FINGERS)):
        spread = (f - 2) * 0.25 * sx
        direction = np.array([np.sin(spread), 0.0, -np.cos(spread)])
        if f == 0:
            direction = np.array([sx * 0.8, -0.1, -0.6])
        joint = wrist + np.array([sx * (f - 2) * 6.0, 0.0, -5.0])
        for b in range(len(BONES)):
            o = 20 + (f * len(BONES) + b) * 8
            end = joint + direction * lengths[b] * (0.7 if f == 0 else 1.0)
            block[o:o + 3] = joint
            block[o + 3:o + 6] = end
            block[o + 6] = widths[f] - b
            joint = end
    return block


_POSITION_OFFSETS = np.array([0, 3, 7] + [20 + k * 8 + d for k in range(20) for d in (0, 3)])


def _leap_motion(part, n_parts, rep_rng, noise, amplitude=30.0):
    """(73, 362) frames whose palm/skeleton trajectory encodes ``part``."""
    t = np.arange(FRAMES_PER_REP) * 0.2
    n_phase = max(1, math.ceil(n_parts / 6))
    freq = 0.15 * (1 + part % 6)
    phase = 2.0 * math.pi * (part // 6) / n_phase
    w = 2.0 * math.pi * freq
    arg = w * t + phase
    offset = np.stack([np.sin(arg), 0.5 * np.cos(arg), 0.25 * np.sin(2 * arg)], axis=1) * amplitude
    velocity = np.stack([np.cos(arg), -0.5 * np.sin(arg), 0.5 * np.cos(2 * arg)], axis=1) * amplitude * w
    frames = np.zeros((FRAMES_PER_REP, FRAME_LEN))
    for h, side in enumerate(("left", "right")):
        base = h * HAND_BLOCK
        block = np.tile(_hand_template(side), (FRAMES_PER_REP, 1))
        mirror = np.array([-1.0 if side == "left" else 1.0, 1.0, 1.0])
        for o in _POSITION_OFFSETS:
            block[:, o:o + 3] += offset * mirror
        block[:, 10:13] = velocity * mirror
        frames[:, base:base + HAND_BLOCK] = block
    frames[:, LEFT_PRESENT] = 1.0
    frames[:, RIGHT_PRESENT] = 1.0
    if noise > 0:
        cols = np.concatenate([np.arange(o, o + 3) + base
                               for base in (0, HAND_BLOCK) for o in (*_POSITION_OFFSETS, 10)])
        frames[:, cols] += rep_rng.normal(0.0, noise, size=(FRAMES_PER_REP, cols.size))
    return derive_angles_matrix(frames)


def _cell_box(cell, n_cells, size):
    cols = math.ceil(math.sqrt(n_cells))
    rows = math.ceil(n_cells / cols)
    r, c = divmod(cell, cols)
    ch, cw = size / rows, size / cols
    y0 = int(round(r * ch + ch * 0.2))
    y1 = max(y0 + 1, int(round((r + 1) * ch - ch * 0.2)))
    x0 = int(round(c * cw + cw * 0.2))
    x1 = max(x0 + 1, int(round((c + 1) * cw - cw * 0.2)))
    return y0, y1, x0, x1


def _image_frames(cell, n_cells, rep_rng, size, image_noise):
    """73 byte images: a bright rectangle in a cell-specific place over noise."""
    y0, y1, x0, x1 = _cell_box(cell, n_cells, size)
    imgs = np.full((FRAMES_PER_REP, size, size, 3), 40.0)
    imgs[:, y0:y1, x0:x1, :] = 220.0
    if image_noise > 0:
        imgs += rep_rng.normal(0.0, image_noise, size=imgs.shape)
    return np.clip(np.rint(imgs), 0, 255).astype(np.uint8)


def generate_synthetic(root, n_classes=18, reps=10, mode="joint", seed=0, noise=2.0,
                       image_size=64, image_noise=20.0, representative_frame=REPRESENTATIVE_FRAME):
    """Write a deterministic synthetic corpus and return (labels, samples).

    ``joint``: leap trajectory and image rectangle both identify the class.
    ``split_signal``: the class factors as (leap_part, image_part); the leap
    frames carry only leap_part and the images only image_part, so either
    modality alone is capped at 1/image_parts resp. 1/leap_parts accuracy.
    """
    if n_classes < 2 or reps < 3:
        raise ValueError("need at least 2 classes and 3 repetitions per class")
    if mode == "joint":
        leap_parts, image_parts = n_classes, n_classes
    elif mode == "split_signal":
        leap_parts, image_parts = factor_classes(n_classes)
    else:
        raise ValueError(f"unknown synthetic mode {mode!r}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    width = max(2, len(str(n_classes - 1)))
    names = [f"sign_{k:0{width}d}" for k in range(n_classes)]
    labels = LabelTable.from_names(names)
    samples = []
    for k, name in enumerate(names):
        if mode == "joint":
            leap_part, image_part = k, k
        else:
            leap_part, image_part = divmod(k, image_parts)
        for r in range(reps):
            rep_rng = np.random.default_rng([seed, k, r])
            frames = _leap_motion(leap_part, leap_parts, rep_rng, noise)
            images = _image_frames(image_part, image_parts, rep_rng, image_size, image_noise)
            rep_dir = root / name / f"rep_{r:02d}"
            rep_dir.mkdir(parents=True, exist_ok=True)
            write_frames_csv(rep_dir / "frames.csv", frames)
            for f, img in enumerate(images):
                Image.fromarray(img, "RGB").save(rep_dir / f"frame_{f:02d}.png")
            image = images[representative_frame].astype(np.float64) / 255.0
            samples.append(GestureSample(name, labels.index(name), frames, image, r))
    manifest = {
        "signs": labels.names,
        "repetitions": reps,
        "frames_per_repetition": FRAMES_PER_REP,
        "mode": mode,
        "seed": seed,
        "image_size": image_size,
        "leap_parts": leap_parts,
        "image_parts": image_parts,
    }
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    samples.sort(key=GestureSample.key)
    return labels, samples
