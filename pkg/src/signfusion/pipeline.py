"""Glue between the dataset, preprocessing and network modules."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import SplitSpec, stratified_split
from .network import FusionModel, ModelShape, TrainConfig, TrainHistory, fit, predict_proba
from .preprocessing import MinMaxScaler, fit_minmax, impute_nan


def prepare_arrays(samples, scaler: MinMaxScaler):
    """(X, images, y): imputed and scaled frames, image tensors, class indices."""
    if not samples:
        raise ValueError("no samples to prepare")
    X = scaler.transform(impute_nan(np.stack([s.frames for s in samples])))
    images = np.stack([s.image for s in samples])
    y = np.array([s.class_index for s in samples], dtype=np.intp)
    return X, images, y


def fit_scaler(train_samples):
    return fit_minmax(impute_nan(np.concatenate([s.frames for s in train_samples], axis=0)))


@dataclass
class TrainedRun:
    model: FusionModel
    history: TrainHistory
    scaler: MinMaxScaler
    train: list
    val: list
    test: list
    extra: dict = field(default_factory=dict)

    def test_predictions(self, modality=None):
        X, imgs, y = prepare_arrays(self.test, self.scaler)
        probs = predict_proba(self.model, X, imgs, modality or self.extra.get("modality", "fusion"))
        return y, probs.argmax(axis=1)


def model_shape_for(samples, n_classes, backbone=None, **overrides):
    s = samples[0]
    return ModelShape(n_frames=s.frames.shape[0], n_features=s.frames.shape[1],
                      image_size=s.image.shape[0], n_classes=n_classes,
                      backbone=dict(backbone or {}), **overrides)


def train_on_corpus(labels, samples, split: SplitSpec, config: TrainConfig, shape: ModelShape | None = None,
                    log=None, model=None):
    """Split, fit the scaler on the training split, and train a fresh model."""
    train, val, test = stratified_split(samples, split, labels)
    scaler = fit_scaler(train)
    if model is None:
        shape = shape or model_shape_for(samples, len(labels))
        model = FusionModel(shape, config.dropout_rate, config.l2_lambda, seed=config.seed)
    model, history = fit(model, prepare_arrays(train, scaler), prepare_arrays(val, scaler), config, log=log)
    return TrainedRun(model, history, scaler, train, val, test, {"modality": config.modality})
