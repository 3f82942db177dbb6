"""Central finite-difference check of :func:`signfusion.network.backward`.

A probe whose +h and -h evaluations land on different ReLU / max-pool
branches straddles a kink, where the finite difference does not estimate
the derivative; such probes are redrawn and counted in ``skipped``.
"""
from dataclasses import dataclass, field

import numpy as np

from .network import FusionModel, ModelShape, backward, cross_entropy, forward, l2_penalty


def activation_pattern(cache):
    parts = []
    for key in ("leap", "head"):
        for _, z, _ in cache.get(key, ()):
            parts.append(z > 0)
    bb = cache.get("backbone")
    if bb is not None:
        for _, z, idx in bb["stages"]:
            parts.append(z > 0)
            parts.append(idx)
        parts.append(bb["fc_z"] > 0)
    return parts


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


@dataclass
class GradCheckResult:
    rel_errors: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    skipped: int = 0

    @property
    def max_rel_error(self):
        return max(self.rel_errors) if self.rel_errors else 0.0


def reduced_model(seed, n_frames=4, n_features=12, image_size=8, n_classes=3, l2_lambda=0.01):
    """Small fusion model with random (non-zero) biases for gradient checks."""
    rng = np.random.default_rng([seed, 99])
    shape = ModelShape(n_frames=n_frames, n_features=n_features, image_size=image_size, n_classes=n_classes)
    model = FusionModel(shape, dropout_rate=0.0, l2_lambda=l2_lambda, seed=seed)
    for k, v in model.params.items():
        if k.endswith(".b"):
            model.params[k] = rng.normal(0.0, 0.1, size=v.shape)
    return model


def check_gradients(model, leap, images, targets, n_probes=50, h=1e-4, seed=0,
                    modality="fusion", floor=1e-8, max_draws=None):
    """Compare analytic and central-difference gradients on random parameter entries.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = np.random.default_rng(seed)
    targets = np.asarray(targets)

    def loss_and_pattern():
        probs, cache = forward(model, leap, images, "infer", modality)
        return float(cross_entropy(probs, targets).mean()) + l2_penalty(model), activation_pattern(cache)

    probs, cache = forward(model, leap, images, "infer", modality)
    grads = backward(model, cache, targets)
    base = activation_pattern(cache)
    names = sorted(grads)
    res = GradCheckResult()
    max_draws = max_draws or 20 * n_probes
    draws = 0
    while len(res.rel_errors) < n_probes and draws < max_draws:
        draws += 1
        name = names[rng.integers(len(names))]
        arr = model.params[name]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + h
        lp, pat_p = loss_and_pattern()
        arr[idx] = old - h
        lm, pat_m = loss_and_pattern()
        arr[idx] = old
        if not (_same(pat_p, base) and _same(pat_m, base)):
            res.skipped += 1
            continue
        num = (lp - lm) / (2.0 * h)
        ana = float(grads[name][idx])
        res.rel_errors.append(abs(ana - num) / max(abs(ana), abs(num), floor))
        res.probes.append((name, idx, ana, num))
    return res
