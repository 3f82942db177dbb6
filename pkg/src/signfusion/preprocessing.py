"""NaN imputation, min-max scaling, image resizing and image augmentation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyImage, EmptyInput, NotFitted, WrongLength
from .leap_features import FRAME_LEN

DEFAULT_IMAGE_SIZE = 224


def impute_nan(m):
    """Replace every NaN with 0; returns a new float array of the same shape."""
    m = np.array(m, dtype=np.float64, copy=True)
    m[np.isnan(m)] = 0.0
    return m


class MinMaxScaler:
    """Per-feature min-max scaler, fit on training frames only.

    Columns whose training range is empty scale to 0. Values outside the
    training range are not clamped.
    """

    def __init__(self, n_features=FRAME_LEN):
        self.n_features = n_features
        self.feat_min = np.zeros(n_features)
        self.feat_max = np.zeros(n_features)
        self.fitted = False

    def fit(self, frames):
        m = np.asarray(frames, dtype=np.float64)
        if m.size == 0:
            raise EmptyInput("cannot fit a scaler on zero frames")
        m = m.reshape(-1, m.shape[-1])
        if m.shape[1] != self.n_features:
            raise WrongLength(f"expected {self.n_features} features, got {m.shape[1]}")
        self.feat_min = m.min(axis=0)
        self.feat_max = m.max(axis=0)
        self.fitted = True
        return self

    def transform(self, frames):
        if not self.fitted:
            raise NotFitted("scaler has not been fitted")
        m = np.asarray(frames, dtype=np.float64)
        if m.shape[-1] != self.n_features:
            raise WrongLength(f"expected {self.n_features} features, got {m.shape[-1]}")
        span = self.feat_max - self.feat_min
        const = span == 0
        out = (m - self.feat_min) / np.where(const, 1.0, span)
        out[..., const] = 0.0
        return out

    def to_dict(self):
        return {"min": self.feat_min.tolist(), "max": self.feat_max.tolist()}

    @classmethod
    def from_dict(cls, d):
        lo = np.asarray(d["min"], dtype=np.float64)
        hi = np.asarray(d["max"], dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise WrongLength("scaler min/max must be equal-length lists")
        s = cls(lo.size)
        s.feat_min, s.feat_max, s.fitted = lo, hi, True
        return s

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit_minmax(train_frames) -> MinMaxScaler:
    m = np.asarray(train_frames, dtype=np.float64)
    if m.size == 0:
        raise EmptyInput("cannot fit a scaler on zero frames")
    return MinMaxScaler(m.shape[-1]).fit(m)


def apply_minmax(scaler: MinMaxScaler, frames):
    return scaler.transform(frames)


def preprocess_image(raw, size=DEFAULT_IMAGE_SIZE):
    """Bilinear resize of an (H, W, 3) byte image to size x size, then /255."""
    img = np.asarray(raw)
    if img.ndim != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise EmptyImage(f"image must be non-empty (H, W, 3), got shape {img.shape}")
    img = img.astype(np.float64)
    if img.shape[:2] != (size, size):
        img = kernels.bilinear_resize(np.ascontiguousarray(img), size, size)
    return img / 255.0


@dataclass(frozen=True)
class AugmentParams:
    rotation_max_deg: float = 15.0
    zoom_range: tuple = (0.9, 1.1)
    contrast_range: tuple = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self):
        if self.rotation_max_deg < 0:
            raise ValueError("rotation_max_deg must be >= 0")
        for name in ("zoom_range", "contrast_range"):
            lo, hi = getattr(self, name)
            if not lo <= 1.0 <= hi:
                raise ValueError(f"{name} must contain 1.0")


def draw_augment(params: AugmentParams, rng: np.random.Generator):
    """Sample (angle_deg, zoom, contrast) from the configured ranges."""
    u = rng.random(3)
    r = params.rotation_max_deg
    angle = -r + 2.0 * r * u[0]
    zlo, zhi = params.zoom_range
    clo, chi = params.contrast_range
    return angle, zlo + (zhi - zlo) * u[1], clo + (chi - clo) * u[2]


def augment_image(img, angle_deg, zoom, contrast):
    """Rotate, zoom and contrast-stretch an [0, 1] image; shape is preserved."""
    out = np.asarray(img, dtype=np.float64)
    if angle_deg != 0.0 or zoom != 1.0:
        out = kernels.rotate_zoom(np.ascontiguousarray(out), math.radians(angle_deg), float(zoom))
        np.clip(out, 0.0, 1.0, out=out)
    if contrast != 1.0:
        out = np.clip(0.5 + contrast * (out - 0.5), 0.0, 1.0)
    return out
