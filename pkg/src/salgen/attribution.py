"""Saliency-map methods for the trained classifier.

Gradient-based: vanilla gradients, input x gradients, integrated gradients,
guided backprop, epsilon-rule relevance propagation (LRP). Perturbation-
based: LIME and KernelSHAP over a deterministic superpixel grid. Plus the
SmoothGrad noise-averaging wrapper and a seeded uniform-random baseline.

All methods return raw signed maps shaped like the source image; scaling
into the autoencoder's sigmoid range happens later in the scoring stage.
Every function is pure given (frozen model, image, seed).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, SingularRegression, UnsupportedLayer
from .nn import Conv2d, Dense, Flatten, MaxPool2d, Network, ReLU, Reshape

GRID = 28


@dataclass(frozen=True)
class Segmentation:
    """Per-pixel segment ids, contiguous 0..n_segments-1."""

    seg_ids: np.ndarray
    n_segments: int


@dataclass
class ExplanationSet:
    """Saliency maps paired with their source images and producing method."""

    maps: np.ndarray           # (n, 28, 28) signed attributions
    image_ids: np.ndarray      # (n,) indices into the source split
    target_classes: np.ndarray  # (n,) explained class per image
    method_id: str
    split_tag: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.maps) != len(self.image_ids) or len(self.maps) != len(self.target_classes):
            raise ShapeMismatch("maps/ids/classes lengths disagree")
        if len(np.unique(self.image_ids)) != len(self.image_ids):
            raise ValueError("one map per source image required")


def save_explanations(path: str, es: ExplanationSet) -> None:
    """Binary tensor container plus a JSON sidecar with method metadata."""
    np.savez(
        path,
        maps=es.maps,
        image_ids=es.image_ids,
        target_classes=es.target_classes,
    )
    sidecar = {
        "method_id": es.method_id,
        "split_tag": es.split_tag,
        "params": es.params,
    }
    with open(os.path.splitext(path)[0] + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def load_explanations(path: str) -> ExplanationSet:
    with open(os.path.splitext(path)[0] + ".json") as fh:
        sidecar = json.load(fh)
    with np.load(path if path.endswith(".npz") else path + ".npz") as blob:
        return ExplanationSet(
            maps=blob["maps"],
            image_ids=blob["image_ids"],
            target_classes=blob["target_classes"],
            method_id=sidecar["method_id"],
            split_tag=sidecar["split_tag"],
            params=sidecar["params"],
        )


# -- shared plumbing ----------------------------------------------------------


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):  # keep float64 oracles exact
        x = x.astype(np.float32)
    if x.ndim == 2:
        x = x[None]
    return x[..., None] if x.ndim == 3 else x


def _onehot_rows(classes: np.ndarray, width: int, values=None) -> np.ndarray:
    dtype = np.float32 if values is None else np.asarray(values).dtype
    up = np.zeros((len(classes), width), dtype=dtype)
    up[np.arange(len(classes)), classes] = 1.0 if values is None else values
    return up


def _logits(net: Network, x4: np.ndarray) -> np.ndarray:
    return net.forward(x4)[0]


def _input_gradients(net: Network, x4: np.ndarray, classes: np.ndarray) -> np.ndarray:
    """d logit_c / d input for each row, via one recorded forward pass."""
    logits, tape = net.forward(x4, record=True)
    upstream = _onehot_rows(classes, logits.shape[1])
    _, gx = net.backward(tape, upstream)
    return gx[..., 0]


# -- gradient-based methods ---------------------------------------------------


def vanilla_gradients_batch(net, images, classes) -> np.ndarray:
    return _input_gradients(net, _as_batch(images), np.asarray(classes))


def input_x_gradients_batch(net, images, classes) -> np.ndarray:
    x = _as_batch(images)[..., 0]
    return x * vanilla_gradients_batch(net, images, classes)


def integrated_gradients_batch(net, images, classes, baseline=None, steps: int = 50) -> np.ndarray:
    """Midpoint-rule path integral of gradients from the baseline (default 0)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x4 = _as_batch(images)
    base = np.zeros_like(x4) if baseline is None else _as_batch(baseline)
    classes = np.asarray(classes)
    diff = x4 - base
    total = np.zeros(x4.shape[:3], dtype=np.float64)
    for m in range(steps):
        alpha = (m + 0.5) / steps
        total += _input_gradients(net, (base + alpha * diff).astype(np.float32), classes)
    return (total / steps) * diff[..., 0]


def smoothgrad_batch(
    base_fn, net, images, classes, n: int = 50, sigma_rel: float = 0.15, seed: int = 0
) -> np.ndarray:
    """Average base_fn maps over n Gaussian-noised copies of each image.

    sigma is sigma_rel times each image's value range; zero sigma (or a
    constant image) short-circuits to the base method exactly.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(images, dtype=np.float32)
    x = x[None] if x.ndim == 2 else x
    span = x.max(axis=(1, 2)) - x.min(axis=(1, 2))
    sigma = sigma_rel * span
    if not sigma.any():
        return np.asarray(base_fn(net, x, classes), dtype=np.float64)
    rng = np.random.default_rng(seed)
    total = np.zeros(x.shape, dtype=np.float64)
    for _ in range(n):
        noisy = x + sigma[:, None, None] * rng.standard_normal(x.shape).astype(np.float32)
        total += base_fn(net, noisy, classes)
    return total / n


def guided_backprop_batch(net, images, classes) -> np.ndarray:
    """Backward pass where ReLUs pass only positive signal at positive input."""
    x4 = _as_batch(images)
    logits, tape = net.forward(x4, record=True)
    g = _onehot_rows(np.asarray(classes), logits.shape[1])
    for entry in reversed(tape.consume()):
        if isinstance(entry.layer, ReLU):
            g = g * entry.ctx * (g > 0)
        else:
            g = entry.layer.input_grad(entry.ctx, g)
    return g[..., 0]


def lrp_epsilon_batch(net, images, classes, eps: float = 1e-2) -> np.ndarray:
    """Epsilon-rule relevance propagation from logit_c down to the pixels.

    Linear layers redistribute relevance via r_in = a * (W^T (r / (z + eps
    sign(z)))); ReLU passes relevance through, pooling routes it to the
    winners. Conservation holds up to the epsilon leak and bias absorption.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x4 = _as_batch(images)
    logits, tape = net.forward(x4, record=True)
    classes = np.asarray(classes)
    r = _onehot_rows(classes, logits.shape[1], values=logits[np.arange(len(classes)), classes])
    for entry in reversed(tape.consume()):
        layer = entry.layer
        if isinstance(layer, (Dense, Conv2d)):
            z = entry.y
            s = r / (z + eps * np.where(z >= 0, 1.0, -1.0).astype(z.dtype))
            r = entry.x * layer.input_grad(entry.ctx, s.astype(z.dtype))
        elif isinstance(layer, (ReLU, Flatten, Reshape, MaxPool2d)):
            r = layer.backward(entry.ctx, r)[0] if not isinstance(layer, ReLU) else r
        else:
            raise UnsupportedLayer(
                "relevance rule undefined for %r layers" % layer.kind
            )
    return r[..., 0]


# -- superpixels and surrogate methods ---------------------------------------


def segment(image: np.ndarray, target_segments: int = 50) -> Segmentation:
    """Deterministic near-regular superpixel grid.

    A g x g grid (g = isqrt(target)) is refined by splitting the
    (target - g^2) highest-variance cells into top/bottom halves; ties break
    on the lower cell id, so the same image always segments identically.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    g = math.isqrt(target_segments)
    extra = target_segments - g * g
    if extra > g * g:
        raise ValueError("target %d needs more than one split per cell" % target_segments)
    rows = np.array_split(np.arange(h), g)
    cols = np.array_split(np.arange(w), g)
    ids = np.empty((h, w), dtype=np.int64)
    cells = []
    for ci in range(g):
        for cj in range(g):
            cell = ci * g + cj
            block = np.ix_(rows[ci], cols[cj])
            ids[block] = cell
            cells.append((float(image[block].var()), cell, rows[ci], cols[cj]))
    if extra:
        split_order = sorted(cells, key=lambda t: (-t[0], t[1]))[:extra]
        next_id = g * g
        for _, cell, rr, cc in sorted(split_order, key=lambda t: t[1]):
            bottom = rr[len(rr) // 2 :]
            ids[np.ix_(bottom, cc)] = next_id
            next_id += 1
    return Segmentation(seg_ids=ids, n_segments=target_segments)


def _masked_logits(net, image, class_id, masks, seg: Segmentation, chunk: int = 512) -> np.ndarray:
    """logit of class_id on the image with masked-off segments set to 0."""
    dtype = image.dtype if image.dtype in (np.float32, np.float64) else np.float32
    pix_masks = masks[:, seg.seg_ids.ravel()].reshape(-1, *image.shape)
    perturbed = image[None].astype(dtype) * pix_masks.astype(dtype)
    out = np.empty(len(masks), dtype=np.float64)
    for i in range(0, len(masks), chunk):
        out[i : i + chunk] = _logits(net, _as_batch(perturbed[i : i + chunk]))[:, class_id]
    return out


def _weighted_ridge(masks, y, weights, lam):
    """Minimize sum w_i (y_i - a - z_i . beta)^2 + lam ||beta||^2.

    The intercept is unpenalized. With lam = 0 a rank-deficient design
    raises SingularRegression.
    """
    n, m = masks.shape
    design = np.column_stack([np.ones(n), masks.astype(np.float64)])
    wd = design * weights[:, None]
    gram = design.T @ wd
    gram[1:, 1:] += lam * np.eye(m)
    rhs = wd.T @ np.asarray(y, dtype=np.float64)
    if lam == 0.0:
        eigs = np.linalg.eigvalsh(gram)
        if eigs[0] <= 1e-10 * max(1.0, eigs[-1]):
            raise SingularRegression(
                "rank-deficient surrogate design; pass lam > 0"
            )
    coef = np.linalg.solve(gram, rhs)
    return coef[0], coef[1:]


def lime_explain(
    net,
    image: np.ndarray,
    class_id: int,
    seg: Segmentation,
    n_samples: int,
    kernel_width: float = 0.25,
    lam: float = 1e-3,
    seed: int = 0,
    masks: np.ndarray | None = None,
) -> np.ndarray:
    """Local ridge surrogate over binary segment masks.

    Masks are Bernoulli(1/2) per segment; sample weights decay with the
    cosine distance between a mask and the all-ones mask. Passing `masks`
    overrides sampling (used for exhaustive-enumeration checks).
    """
    m = seg.n_segments
    if masks is None:
        rng = np.random.default_rng(seed)
        masks = rng.integers(0, 2, size=(n_samples, m))
    sizes = masks.sum(axis=1)
    dist = 1.0 - np.sqrt(sizes / m)  # cosine distance of binary mask to all-ones
    weights = np.exp(-(dist**2) / kernel_width**2)
    preds = _masked_logits(net, np.asarray(image), class_id, masks, seg)
    _, coef = _weighted_ridge(masks, preds, weights, lam)
    return coef[seg.seg_ids]


def shapley_kernel_weights(masks: np.ndarray) -> np.ndarray:
    """pi(z) = (M-1) / (C(M,|z|) |z| (M-|z|)) for non-degenerate coalitions."""
    n, m = masks.shape
    sizes = masks.sum(axis=1)
    if ((sizes == 0) | (sizes == m)).any():
        raise ValueError("degenerate coalition sizes are handled analytically")
    comb = np.array([math.comb(m, int(s)) for s in sizes], dtype=np.float64)
    return (m - 1) / (comb * sizes * (m - sizes))


def kernel_shap_explain(
    net,
    image: np.ndarray,
    class_id: int,
    seg: Segmentation,
    n_samples: int,
    lam: float = 1e-3,
    seed: int = 0,
) -> np.ndarray:
    """Shapley-kernel surrogate with the two degenerate coalitions handled
    analytically through anchor constraints on f(empty) and f(full).

    When the budget covers every non-degenerate coalition the exact kernel
    weights are used (and with lam=0 the result is the exact Shapley value);
    otherwise coalition sizes are sampled proportionally to their total
    kernel mass and the regression is unweighted.
    """
    m = seg.n_segments
    image = np.asarray(image)
    exhaustive = m <= 16 and n_samples >= 2**m - 2
    if exhaustive:
        all_masks = ((np.arange(2**m)[:, None] >> np.arange(m)) & 1).astype(np.int64)
        sizes = all_masks.sum(axis=1)
        masks = all_masks[(sizes > 0) & (sizes < m)]
        weights = shapley_kernel_weights(masks)
    else:
        rng = np.random.default_rng(seed)
        size_mass = np.array([(m - 1) / (s * (m - s)) for s in range(1, m)])
        sizes = rng.choice(np.arange(1, m), size=n_samples, p=size_mass / size_mass.sum())
        masks = np.zeros((n_samples, m), dtype=np.int64)
        for row, s in enumerate(sizes):
            masks[row, rng.choice(m, size=int(s), replace=False)] = 1
        weights = np.ones(n_samples)
    anchors = np.array([np.zeros(m, dtype=np.int64), np.ones(m, dtype=np.int64)])
    f_empty, f_full = _masked_logits(net, image, class_id, anchors, seg)
    preds = _masked_logits(net, image, class_id, masks, seg)
    phi = _constrained_wls(masks, preds - f_empty, weights, f_full - f_empty, lam)
    return phi[seg.seg_ids]


def _constrained_wls(z, y, w, total, lam):
    """Weighted least squares with the sum-of-coefficients constraint.

    Solves min sum w_i (y_i - phi . z_i)^2 + lam ||phi||^2 subject to
    sum(phi) = total, via the bordered KKT system.
    """
    m = z.shape[1]
    zw = z.astype(np.float64) * w[:, None]
    gram = z.T.astype(np.float64) @ zw + lam * np.eye(m)
    kkt = np.zeros((m + 1, m + 1))
    kkt[:m, :m] = gram
    kkt[:m, m] = 1.0
    kkt[m, :m] = 1.0
    rhs = np.concatenate([zw.T @ np.asarray(y, dtype=np.float64), [total]])
    if lam == 0.0:
        svals = np.linalg.svd(kkt, compute_uv=False)
        if svals[-1] <= 1e-10 * max(1.0, svals[0]):
            raise SingularRegression("rank-deficient coalition design; pass lam > 0")
    return np.linalg.solve(kkt, rhs)[:m]


def random_explanations(n: int, seed: int, shape=(GRID, GRID)) -> np.ndarray:
    """Seeded i.i.d. uniform [0, 1] maps, independent of model and image."""
    return np.random.default_rng(seed).random((n, *shape))


# -- per-image convenience wrappers (the batched forms above do the work) ----


def vanilla_gradients(net, image, class_id) -> np.ndarray:
    return vanilla_gradients_batch(net, image, np.array([class_id]))[0]


def input_x_gradients(net, image, class_id) -> np.ndarray:
    return input_x_gradients_batch(net, image, np.array([class_id]))[0]


def integrated_gradients(net, image, class_id, baseline=None, steps: int = 50) -> np.ndarray:
    return integrated_gradients_batch(net, image, np.array([class_id]), baseline, steps)[0]


def guided_backprop(net, image, class_id) -> np.ndarray:
    return guided_backprop_batch(net, image, np.array([class_id]))[0]


def lrp_epsilon(net, image, class_id, eps: float = 1e-2) -> np.ndarray:
    return lrp_epsilon_batch(net, image, np.array([class_id]), eps)[0]


def smoothgrad(base_fn, net, image, class_id, n=50, sigma_rel=0.15, seed=0) -> np.ndarray:
    return smoothgrad_batch(base_fn, net, image, np.array([class_id]), n, sigma_rel, seed)[0]


def random_explanation(shape, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).random(shape)


# -- dataset-level driver -----------------------------------------------------

GRADIENT_METHODS = {
    "vanilla": vanilla_gradients_batch,
    "input_x_gradients": input_x_gradients_batch,
    "integrated_gradients": integrated_gradients_batch,
    "guided_backprop": guided_backprop_batch,
    "lrp": lrp_epsilon_batch,
}

SURROGATE_METHODS = ("lime", "kernel_shap")

METHOD_KINDS = tuple(GRADIENT_METHODS) + SURROGATE_METHODS + ("random",)


def explain_dataset(
    net: Network,
    images: np.ndarray,
    image_ids: np.ndarray,
    method_id: str,
    kind: str,
    params: dict | None = None,
    seed: int = 0,
    chunk: int = 256,
) -> ExplanationSet:
    """Generate one saliency map per image with the named method.

    The explained class is the classifier's prediction for each clean image.
    Per-image randomness (surrogate masks, random maps) is keyed on
    (seed, image id), so a map does not depend on which other images are in
    the batch.
    """
    params = dict(params or {})
    if kind not in METHOD_KINDS:
        raise ValueError("unknown method kind %r" % kind)
    images = np.asarray(images, dtype=np.float32)
    image_ids = np.asarray(image_ids, dtype=np.int64)
    n = len(images)
    classes = np.empty(n, dtype=np.int64)
    for i in range(0, n, chunk):
        classes[i : i + chunk] = _logits(net, _as_batch(images[i : i + chunk])).argmax(axis=1)

    smooth = params.pop("smoothgrad", None)
    maps = np.empty((n, images.shape[1], images.shape[2]), dtype=np.float64)
    if kind == "random":
        for i, img_id in enumerate(image_ids):
            maps[i] = np.random.default_rng((seed, int(img_id))).random(images.shape[1:])
    elif kind in GRADIENT_METHODS:
        base = GRADIENT_METHODS[kind]
        kwargs = params
        for i in range(0, n, chunk):
            sl = slice(i, i + chunk)
            if smooth:
                maps[sl] = smoothgrad_batch(
                    lambda nt, xs, cs: base(nt, xs, cs, **kwargs),
                    net,
                    images[sl],
                    classes[sl],
                    n=smooth.get("n", 50),
                    sigma_rel=smooth.get("sigma_rel", 0.15),
                    seed=(seed, int(image_ids[i])),
                )
            else:
                maps[sl] = base(net, images[sl], classes[sl], **kwargs)
    else:
        target_segments = params.pop("segments", 50)
        for i in range(n):
            seg = segment(images[i], target_segments)
            child_seed = (seed, int(image_ids[i]))
            if kind == "lime":
                maps[i] = lime_explain(
                    net, images[i], int(classes[i]), seg, seed=child_seed, **params
                )
            else:
                maps[i] = kernel_shap_explain(
                    net, images[i], int(classes[i]), seg, seed=child_seed, **params
                )
    return ExplanationSet(
        maps=maps,
        image_ids=image_ids,
        target_classes=classes,
        method_id=method_id,
        split_tag="",
        params={"kind": kind, "seed": seed, **({"smoothgrad": smooth} if smooth else {}), **params},
    )
