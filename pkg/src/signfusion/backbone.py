"""Image backbones: anything mapping an (N, S, S, 3) batch to (N, out_dim).

A backbone owns the names and shapes of its parameters but not the arrays;
those live in the model's parameter dict so the optimizer and checkpoint
code treat every parameter alike.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeMismatch

PREFIX = "backbone."


class TinyConvBackbone:
    """Three (3x3 conv, ReLU, 2x2 max-pool) blocks, then a ReLU dense layer.

    ``pooling="flatten"`` feeds the whole final feature map to the dense
    layer, which keeps the spatial layout; ``"gap"`` averages it away.
    """

    kind = "tiny_conv"

    def __init__(self, image_size, channels=(8, 16, 32), out_dim=128, pooling="flatten", frozen=False):
        if pooling not in ("flatten", "gap"):
            raise ValueError(f"unknown pooling {pooling!r}")
        self.image_size = int(image_size)
        self.channels = tuple(int(c) for c in channels)
        self.out_dim = int(out_dim)
        self.pooling = pooling
        self.frozen = frozen
        side = self.image_size
        for _ in self.channels:
            side //= 2
        if side < 1:
            raise ShapeMismatch(f"image size {image_size} is too small for {len(self.channels)} pooling stages")
        self.final_side = side
        self.feature_dim = self.channels[-1] * (side * side if pooling == "flatten" else 1)

    def config(self):
        return {"kind": self.kind, "image_size": self.image_size, "channels": list(self.channels),
                "out_dim": self.out_dim, "pooling": self.pooling, "frozen": self.frozen}

    def param_shapes(self):
        shapes = {}
        c_in = 3
        for i, c in enumerate(self.channels):
            shapes[f"{PREFIX}conv{i}.W"] = (3, 3, c_in, c)
            shapes[f"{PREFIX}conv{i}.b"] = (c,)
            c_in = c
        shapes[f"{PREFIX}fc.W"] = (self.out_dim, self.feature_dim)
        shapes[f"{PREFIX}fc.b"] = (self.out_dim,)
        return shapes

    def init_params(self, rng):
        out = {}
        for name, shape in self.param_shapes().items():
            if name.endswith(".b"):
                out[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[:3])) if len(shape) == 4 else shape[1]
                lim = np.sqrt(6.0 / fan_in)
                out[name] = rng.uniform(-lim, lim, size=shape)
        return out

    def forward(self, params, x):
        if x.ndim != 4 or x.shape[1:] != (self.image_size, self.image_size, 3):
            raise ShapeMismatch(f"backbone expects (N, {self.image_size}, {self.image_size}, 3), got {x.shape}")
        cache = {"stages": []}
        h = np.ascontiguousarray(x, dtype=np.float64)
        for i in range(len(self.channels)):
            z = kernels.conv2d_forward(h, params[f"{PREFIX}conv{i}.W"], params[f"{PREFIX}conv{i}.b"])
            a = np.maximum(z, 0.0)
            p, idx = kernels.maxpool2_forward(a)
            cache["stages"].append((h, z, idx))
            h = p
        cache["pooled_shape"] = h.shape
        flat = h.reshape(h.shape[0], -1) if self.pooling == "flatten" else h.mean(axis=(1, 2))
        z = flat @ params[f"{PREFIX}fc.W"].T + params[f"{PREFIX}fc.b"]
        cache["flat"] = flat
        cache["fc_z"] = z
        return np.maximum(z, 0.0), cache

    def backward(self, params, cache, dout):
        grads = {}
        dz = dout * (cache["fc_z"] > 0)
        grads[f"{PREFIX}fc.W"] = dz.T @ cache["flat"]
        grads[f"{PREFIX}fc.b"] = dz.sum(axis=0)
        dflat = dz @ params[f"{PREFIX}fc.W"]
        n, hs, ws, c = cache["pooled_shape"]
        if self.pooling == "flatten":
            dh = dflat.reshape(n, hs, ws, c)
        else:
            dh = np.broadcast_to(dflat[:, None, None, :] / (hs * ws), (n, hs, ws, c))
        for i in reversed(range(len(self.channels))):
            h_in, z, idx = cache["stages"][i]
            da = kernels.maxpool2_backward(np.ascontiguousarray(dh), idx, z.shape[1], z.shape[2])
            dz = da * (z > 0)
            dh, dw, db = kernels.conv2d_backward(h_in, params[f"{PREFIX}conv{i}.W"], dz)
            grads[f"{PREFIX}conv{i}.W"] = dw
            grads[f"{PREFIX}conv{i}.b"] = db
        return grads


def build_backbone(cfg):
    cfg = dict(cfg)
    kind = cfg.pop("kind", TinyConvBackbone.kind)
    if kind != TinyConvBackbone.kind:
        raise ValueError(f"unknown backbone kind {kind!r}")
    return TinyConvBackbone(**cfg)


def load_backbone_weights(model, path, freeze=True):
    """Copy externally produced backbone weights (an ``.npz`` keyed by parameter
    name, with or without the ``backbone.`` prefix) into ``model``."""
    with np.load(path) as data:
        for key in data.files:
            name = key if key.startswith(PREFIX) else PREFIX + key
            if name not in model.params:
                raise ShapeMismatch(f"{path}: unexpected backbone parameter {key!r}")
            arr = np.asarray(data[key], dtype=np.float64)
            if arr.shape != model.params[name].shape:
                raise ShapeMismatch(f"{path}: {key} has shape {arr.shape}, expected {model.params[name].shape}")
            model.params[name] = arr.copy()
    model.backbone.frozen = freeze
    model.revision += 1
