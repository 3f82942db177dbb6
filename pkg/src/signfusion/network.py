"""Two-branch fusion classifier with hand-written backpropagation.

Leap branch: time-distributed Dense(512)-Dropout-Dense(256)-Dropout-Dense(128)
over the (T, F) frame matrix, flattened to T*128. Image branch: a pluggable
backbone. Head: concat -> Dense(256)-Dropout -> Dense(128)-Dropout ->
Dense(K) -> softmax. All hidden layers use ReLU. Dense weights are stored
(out, in).
"""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .backbone import PREFIX as BACKBONE_PREFIX
from .backbone import TinyConvBackbone, build_backbone
from .errors import NonFiniteLoss, ShapeMismatch, StaleCache
from .preprocessing import AugmentParams, augment_image, draw_augment

MODALITIES = ("fusion", "leap_only", "image_only")
CE_FLOOR = 1e-12
CHECKPOINT_FORMAT = "signfusion-checkpoint"
CHECKPOINT_VERSION = 1


# --- elementary operations ---------------------------------------------------

def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, target):
    """-ln p[target] with p floored at 1e-12. Works per row for 2-D input."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 1:
        return float(-np.log(max(p[int(target)], CE_FLOOR)))
    t = np.asarray(target, dtype=np.intp)
    return -np.log(np.maximum(p[np.arange(len(t)), t], CE_FLOOR))


def dropout_forward(x, rate, mode="train", mask=None, rng=None):
    """Inverted dropout. Returns (output, keep_mask); the mask is None when inactive."""
    if mode != "train" or rate == 0.0:
        return x, None
    if mask is None:
        mask = rng.random(np.shape(x)) >= rate
    return x * mask / (1.0 - rate), mask


def rmsprop_step(param, grad, v, lr, rho, eps):
    """Functional RMSprop: returns (new_param, new_v) without touching inputs."""
    p = np.array(param, dtype=np.float64, copy=True)
    acc = np.array(v, dtype=np.float64, copy=True)
    kernels.rmsprop_update(p, np.asarray(grad, dtype=np.float64), acc, lr, rho, eps)
    return p, acc


# --- model -------------------------------------------------------------------

@dataclass(frozen=True)
class ModelShape:
    n_frames: int = 73
    n_features: int = 362
    image_size: int = 224
    n_classes: int = 18
    leap_units: tuple = (512, 256, 128)
    head_units: tuple = (256, 128)
    backbone: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["leap_units"] = list(self.leap_units)
        d["head_units"] = list(self.head_units)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["leap_units"] = tuple(d["leap_units"])
        d["head_units"] = tuple(d["head_units"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 75
    learning_rate: float = 1e-3
    rms_decay: float = 0.9
    rms_epsilon: float = 1e-7
    batch_size: int = 8
    dropout_rate: float = 0.2
    l2_lambda: float = 0.01
    seed: int = 0
    augment: AugmentParams | None = field(default_factory=AugmentParams)
    modality: str = "fusion"

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")

    def to_dict(self):
        d = asdict(self)
        if self.augment is not None:
            d["augment"] = {**asdict(self.augment), "zoom_range": list(self.augment.zoom_range),
                            "contrast_range": list(self.augment.contrast_range)}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        aug = d.get("augment")
        if aug is not None:
            d["augment"] = AugmentParams(aug["rotation_max_deg"], tuple(aug["zoom_range"]),
                                         tuple(aug["contrast_range"]), aug.get("seed", 0))
        return cls(**d)


class FusionModel:
    """Parameters, RMSprop state and architecture of the fusion classifier."""

    def __init__(self, shape: ModelShape, dropout_rate=0.2, l2_lambda=0.01, seed=0, init="he"):
        self.shape = shape
        self.dropout_rate = dropout_rate
        self.l2_lambda = l2_lambda
        bb_cfg = {"image_size": shape.image_size, **shape.backbone}
        self.backbone = build_backbone(bb_cfg)
        if self.backbone.image_size != shape.image_size:
            raise ShapeMismatch("backbone image size disagrees with the model shape")
        self.revision = 0
        self.params = {}
        rng = np.random.default_rng(seed)
        for name, (out_dim, in_dim) in self.dense_shapes().items():
            if init == "zeros":
                w = np.zeros((out_dim, in_dim))
            elif name == "head.out":
                lim = np.sqrt(6.0 / (in_dim + out_dim))
                w = rng.uniform(-lim, lim, size=(out_dim, in_dim))
            else:
                lim = np.sqrt(6.0 / in_dim)
                w = rng.uniform(-lim, lim, size=(out_dim, in_dim))
            self.params[name + ".W"] = w
            self.params[name + ".b"] = np.zeros(out_dim)
        bb = self.backbone.init_params(rng)
        if init == "zeros":
            bb = {k: np.zeros_like(v) for k, v in bb.items()}
        self.params.update(bb)
        self.opt_state = {k: np.zeros_like(v) for k, v in self.params.items()}

    def dense_shapes(self):
        s = self.shape
        shapes = {}
        d = s.n_features
        for i, u in enumerate(s.leap_units):
            shapes[f"leap.{i}"] = (u, d)
            d = u
        d = s.n_frames * s.leap_units[-1] + self.backbone.out_dim
        for i, u in enumerate(s.head_units):
            shapes[f"head.{i}"] = (u, d)
            d = u
        shapes["head.out"] = (s.n_classes, d)
        return shapes

    @property
    def leap_dim(self):
        return self.shape.n_frames * self.shape.leap_units[-1]

    @property
    def l2_weights(self):
        return [f"leap.{i}.W" for i in range(len(self.shape.leap_units))]

    def n_params(self):
        return sum(v.size for v in self.params.values())

    def copy(self):
        other = object.__new__(FusionModel)
        other.__dict__.update(self.__dict__)
        other.backbone = build_backbone(self.backbone.config())
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.opt_state = {k: v.copy() for k, v in self.opt_state.items()}
        return other


def l2_penalty(model: FusionModel):
    lam = model.l2_lambda
    if lam == 0.0:
        return 0.0
    return float(lam * sum(float(np.sum(model.params[n] ** 2)) for n in model.l2_weights))


def _as_batch(leap, image, model):
    s = model.shape
    leap = np.asarray(leap, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if leap.ndim == 2:
        leap = leap[None]
    if image.ndim == 3:
        image = image[None]
    if leap.shape[1:] != (s.n_frames, s.n_features):
        raise ShapeMismatch(f"leap input {leap.shape[1:]} != ({s.n_frames}, {s.n_features})")
    if image.shape[1:] != (s.image_size, s.image_size, 3):
        raise ShapeMismatch(f"image input {image.shape[1:]} != ({s.image_size}, {s.image_size}, 3)")
    if leap.shape[0] != image.shape[0]:
        raise ShapeMismatch("leap and image batches differ in length")
    return leap, image


def forward(model: FusionModel, leap, image, mode="infer", modality="fusion", rng=None):
    """Run the network on a batch (or a single sample).

    Returns (probs, cache). ``mode="train"`` applies dropout with masks drawn
    from ``rng``; ``"infer"`` is deterministic. In single-modality modes the
    bypassed branch contributes a zero vector to the concatenation.
    """
    if modality not in MODALITIES:
        raise ValueError(f"modality must be one of {MODALITIES}")
    leap, image = _as_batch(leap, image, model)
    p = model.params
    rate = model.dropout_rate
    n = leap.shape[0]
    cache = {"revision": model.revision, "modality": modality, "n": n, "mode": mode}

    if modality != "image_only":
        h = leap.reshape(n * model.shape.n_frames, model.shape.n_features)
        leap_layers = []
        last = len(model.shape.leap_units) - 1
        for i in range(len(model.shape.leap_units)):
            z = h @ p[f"leap.{i}.W"].T + p[f"leap.{i}.b"]
            a = np.maximum(z, 0.0)
            mask = None
            if i < last:
                a, mask = dropout_forward(a, rate, mode, rng=rng)
            leap_layers.append((h, z, mask))
            h = a
        cache["leap"] = leap_layers
        leap_out = h.reshape(n, model.leap_dim)
    else:
        leap_out = np.zeros((n, model.leap_dim))

    if modality != "leap_only":
        img_out, cache["backbone"] = model.backbone.forward(p, image)
    else:
        img_out = np.zeros((n, model.backbone.out_dim))

    h = np.concatenate([leap_out, img_out], axis=1)
    head_layers = []
    for i in range(len(model.shape.head_units)):
        z = h @ p[f"head.{i}.W"].T + p[f"head.{i}.b"]
        a, mask = dropout_forward(np.maximum(z, 0.0), rate, mode, rng=rng)
        head_layers.append((h, z, mask))
        h = a
    logits = h @ p["head.out.W"].T + p["head.out.b"]
    cache["head"] = head_layers
    cache["head_out_in"] = h
    probs = softmax(logits)
    cache["probs"] = probs
    return probs, cache


def _dense_back(grads, name, x, dz, W):
    grads[name + ".W"] = dz.T @ x
    grads[name + ".b"] = dz.sum(axis=0)
    return dz @ W


def backward(model: FusionModel, cache, target):
    """Gradients of mean cross-entropy + L2 penalty for the cached batch."""
    if cache.get("revision") != model.revision:
        raise StaleCache("cache was produced by a different model revision")
    p = model.params
    rate = model.dropout_rate
    n = cache["n"]
    target = np.atleast_1d(np.asarray(target, dtype=np.intp))
    if target.shape[0] != n:
        raise ShapeMismatch("target count does not match the cached batch")
    grads = {}
    dlogits = cache["probs"].copy()
    dlogits[np.arange(n), target] -= 1.0
    dlogits /= n
    dh = _dense_back(grads, "head.out", cache["head_out_in"], dlogits, p["head.out.W"])
    for i in reversed(range(len(model.shape.head_units))):
        x, z, mask = cache["head"][i]
        if mask is not None:
            dh = dh * mask / (1.0 - rate)
        dz = dh * (z > 0)
        dh = _dense_back(grads, f"head.{i}", x, dz, p[f"head.{i}.W"])
    d_leap = dh[:, :model.leap_dim]
    d_img = dh[:, model.leap_dim:]

    modality = cache["modality"]
    if modality != "image_only":
        dh = d_leap.reshape(n * model.shape.n_frames, model.shape.leap_units[-1])
        for i in reversed(range(len(model.shape.leap_units))):
            x, z, mask = cache["leap"][i]
            if mask is not None:
                dh = dh * mask / (1.0 - rate)
            dz = dh * (z > 0)
            if i == 0:
                grads["leap.0.W"] = dz.T @ x
                grads["leap.0.b"] = dz.sum(axis=0)
            else:
                dh = _dense_back(grads, f"leap.{i}", x, dz, p[f"leap.{i}.W"])
    if modality != "leap_only" and not model.backbone.frozen:
        grads.update(model.backbone.backward(p, cache["backbone"], d_img))

    lam = model.l2_lambda
    if lam != 0.0:
        for name in model.l2_weights:
            g = 2.0 * lam * p[name]
            grads[name] = grads[name] + g if name in grads else g
    return grads


def predict_proba(model, leap, image, modality="fusion", batch_size=32):
    leap, image = _as_batch(leap, image, model)
    out = []
    for i in range(0, leap.shape[0], batch_size):
        probs, _ = forward(model, leap[i:i + batch_size], image[i:i + batch_size], "infer", modality)
        out.append(probs)
    if not out:
        return np.zeros((0, model.shape.n_classes))
    return np.concatenate(out, axis=0)


def predict(model, leap, image, modality="fusion"):
    """Class index (argmax, lowest index on ties); an array for batched input."""
    single = np.ndim(leap) == 2
    idx = predict_proba(model, leap, image, modality).argmax(axis=1)
    return int(idx[0]) if single else idx


# --- training ----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


class TrainHistory(list):
    columns = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for r in self:
                fh.write(f"{r.epoch},{r.train_loss!r},{r.train_accuracy!r},{r.val_loss!r},{r.val_accuracy!r}\n")

    @classmethod
    def from_csv(cls, path):
        hist = cls()
        with open(path, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                e, tl, ta, vl, va = line.strip().split(",")
                hist.append(EpochRecord(int(e), float(tl), float(ta), float(vl), float(va)))
        return hist


def evaluate_arrays(model, X, images, y, modality="fusion"):
    """(loss, accuracy) in inference mode; loss = mean CE + L2 penalty."""
    probs = predict_proba(model, X, images, modality)
    ce = cross_entropy(probs, y)
    return float(ce.mean() + l2_penalty(model)), float((probs.argmax(axis=1) == y).mean())


def apply_update(model, grads, config: TrainConfig):
    for name, g in grads.items():
        kernels.rmsprop_update(model.params[name], g, model.opt_state[name],
                               config.learning_rate, config.rms_decay, config.rms_epsilon)
    model.revision += 1


def fit(model: FusionModel, train, val, config: TrainConfig, log=None):
    """Mini-batch RMSprop training for ``config.epochs`` epochs.

    ``train`` and ``val`` are (X, images, y) array triples with X already
    imputed and scaled. Augmentation touches training images only; the
    per-epoch metrics are computed on un-augmented data.
    """
    X, imgs, y = train
    Xv, imgs_v, yv = val
    if len(y) == 0 or len(yv) == 0:
        raise ValueError("fit needs non-empty training and validation sets")
    model.dropout_rate = config.dropout_rate
    model.l2_lambda = config.l2_lambda
    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    augment_rng = np.random.default_rng([config.seed, 3, config.augment.seed if config.augment else 0])
    use_images = config.modality != "leap_only"
    history = TrainHistory()
    n = len(y)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            batch_imgs = imgs[idx]
            if config.augment is not None and use_images:
                batch_imgs = np.stack([augment_image(im, *draw_augment(config.augment, augment_rng))
                                       for im in batch_imgs])
            probs, cache = forward(model, X[idx], batch_imgs, "train", config.modality, dropout_rng)
            loss = float(cross_entropy(probs, y[idx]).mean()) + l2_penalty(model)
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, b, loss)
            apply_update(model, backward(model, cache, y[idx]), config)
        tl, ta = evaluate_arrays(model, X, imgs, y, config.modality)
        vl, va = evaluate_arrays(model, Xv, imgs_v, yv, config.modality)
        if not (np.isfinite(tl) and np.isfinite(vl)):
            raise NonFiniteLoss(epoch, -1, tl if not np.isfinite(tl) else vl)
        history.append(EpochRecord(epoch + 1, tl, ta, vl, va))
        if log is not None:
            log(history[-1])
    return model, history


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(path, model: FusionModel, labels, config: TrainConfig | None = None, scaler_ref=None,
                    extra=None):
    """Write an ``.npz`` container: float64 parameters, optimizer state and a JSON header."""
    meta = {**(extra or {}),
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "shape": model.shape.to_dict(),
        "backbone": model.backbone.config(),
        "layers": {k: list(v.shape) for k, v in model.params.items()},
        "labels": list(labels),
        "scaler": scaler_ref,
        "train_config": config.to_dict() if config is not None else None,
        "dropout_rate": model.dropout_rate,
        "l2_lambda": model.l2_lambda,
        "revision": model.revision,
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, ensure_ascii=False, sort_keys=True).encode("utf-8"),
                                        dtype=np.uint8)}
    for k, v in model.params.items():
        arrays["param/" + k] = v
        arrays["opt/" + k] = model.opt_state[k]
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Returns (model, meta)."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a model checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        shape = ModelShape.from_dict(meta["shape"])
        model = FusionModel(shape, meta["dropout_rate"], meta["l2_lambda"], init="zeros")
        model.backbone.frozen = meta["backbone"].get("frozen", False)
        for k in model.params:
            model.params[k] = np.array(data["param/" + k], dtype=np.float64)
            model.opt_state[k] = np.array(data["opt/" + k], dtype=np.float64)
        model.revision = meta.get("revision", 0)
    return model, meta


__all__ = [
    "BACKBONE_PREFIX", "CE_FLOOR", "EpochRecord", "FusionModel", "MODALITIES", "ModelShape",
    "TinyConvBackbone", "TrainConfig", "TrainHistory", "apply_update", "backward", "cross_entropy",
    "dropout_forward", "evaluate_arrays", "fit", "forward", "l2_penalty", "load_checkpoint",
    "predict", "predict_proba", "rmsprop_step", "save_checkpoint", "softmax",
]
