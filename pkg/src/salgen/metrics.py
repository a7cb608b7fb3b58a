"""Pairwise and distributional similarity measures.

Scalar functions compare two whole grids as flattened pixel vectors in
float64. The batched `*_rows` helpers treat the FIRST axis as the batch,
scoring corresponding rows of two (n, ...) stacks; they are what the
per-epoch curve evaluation and the class-proximity sampling run on.

Constant inputs make correlations undefined; those return a sentinel 0 and
emit ConstantInputWarning so a degenerate reconstruction cannot poison an
aggregate with NaNs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConstantInputWarning,
    DimensionMismatch,
    IndefiniteMatrix,
    NotSymmetric,
    TooFewSamples,
)

SSIM_C1 = 0.01 ** 2  # (0.01 * L)^2 with dynamic range L = 1
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LatentGaussian:
    """Gaussian fitted to a set of latent vectors."""

    mu: np.ndarray
    cov: np.ndarray
    n: int


@dataclass(frozen=True)
class MetricVector:
    """The six reconstruction measurements, averaged per image."""

    l1: float
    mse: float
    ssim: float
    pc: float
    sc: float
    ta: float


def _rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(1, -1) if a.ndim <= 1 else a.reshape(a.shape[0], -1)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    ra, rb = _rows(a), _rows(b)
    if ra.shape != rb.shape:
        raise DimensionMismatch("grids %s vs %s" % (ra.shape, rb.shape))
    return ra, rb


def rank_rows(v: np.ndarray) -> np.ndarray:
    """Average ranks (1..d) of each row, ties sharing their mean rank."""
    v = _rows(v)
    n, d = v.shape
    order = np.argsort(v, axis=1, kind="stable")
    sv = np.take_along_axis(v, order, axis=1)
    boundary = np.ones((n, d), dtype=np.int64)
    boundary[:, 1:] = sv[:, 1:] != sv[:, :-1]
    gid = np.cumsum(boundary, axis=1) - 1 + (np.arange(n) * d)[:, None]
    flat = gid.ravel()
    pos = np.tile(np.arange(1, d + 1, dtype=np.float64), n)
    rank_sum = np.bincount(flat, weights=pos, minlength=n * d)
    rank_cnt = np.bincount(flat, minlength=n * d)
    mean_rank = (rank_sum[flat] / rank_cnt[flat]).reshape(n, d)
    ranks = np.empty_like(mean_rank)
    np.put_along_axis(ranks, order, mean_rank, axis=1)
    return ranks


def pearson_rows(a: np.ndarray, b: np.ndarray, warn: bool = True) -> np.ndarray:
    """Row-wise sample correlation; constant rows score 0."""
    a, b = _pair(a, b)
    ac = a - a.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    na = np.sqrt((ac * ac).sum(axis=1))
    nb = np.sqrt((bc * bc).sum(axis=1))
    bad = (na == 0.0) | (nb == 0.0)
    denom = np.where(bad, 1.0, na * nb)
    out = (ac * bc).sum(axis=1) / denom
    if bad.any():
        if warn:
            warnings.warn(
                "%d constant grid(s) in correlation; returning 0" % int(bad.sum()),
                ConstantInputWarning,
                stacklevel=2,
            )
        out[bad] = 0.0
    return np.clip(out, -1.0, 1.0)


def spearman_rows(a: np.ndarray, b: np.ndarray, warn: bool = True) -> np.ndarray:
    return pearson_rows(rank_rows(a), rank_rows(b), warn=warn)


def normalized_ranks(v: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-norm rank rows; pairwise Spearman becomes a dot product.

    Constant rows come back as zero vectors, so their dot with anything is
    the sentinel 0.
    """
    r = rank_rows(v)
    r -= r.mean(axis=1, keepdims=True)
    norm = np.sqrt((r * r).sum(axis=1, keepdims=True))
    return r / np.where(norm == 0.0, 1.0, norm)


def topk_mask_rows(v: np.ndarray, k: int) -> np.ndarray:
    """Boolean (n, d) membership of each row's k largest entries.

    Ties are broken by ascending pixel index (stable sort on the negated
    values), keeping runs deterministic across builds.
    """
    v = _rows(v)
    order = np.argsort(-v, axis=1, kind="stable")
    mask = np.zeros(v.shape, dtype=bool)
    np.put_along_axis(mask, order[:, :k], True, axis=1)
    return mask


def topk_rows(p: np.ndarray, p2: np.ndarray, k_fraction: float) -> np.ndarray:
    p, p2 = _pair(p, p2)
    if not 0.0 < k_fraction < 1.0:
        raise ValueError("k_fraction must lie in (0, 1)")
    k = math.ceil(k_fraction * p.shape[1])
    inter = topk_mask_rows(p, k) & topk_mask_rows(p2, k)
    return inter.sum(axis=1) / float(k)


def ssim_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Single-window structural similarity over each whole grid."""
    a, b = _pair(a, b)
    mu_a = a.mean(axis=1)
    mu_b = b.mean(axis=1)
    var_a = a.var(axis=1)
    var_b = b.var(axis=1)
    cov = (a * b).mean(axis=1) - mu_a * mu_b
    return ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )


def l1_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _pair(a, b)
    return np.abs(a - b).mean(axis=1)


def mse_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = _pair(a, b)
    d = a - b
    return (d * d).mean(axis=1)


def _flat(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).reshape(1, -1)


def pearson(a, b) -> float:
    """Correlation of two grids compared as flattened pixel vectors."""
    return float(pearson_rows(_flat(a), _flat(b))[0])


def spearman(a, b) -> float:
    return float(spearman_rows(_flat(a), _flat(b))[0])


def topk_accuracy(p, p2, k_fraction: float = 0.25) -> float:
    return float(topk_rows(_flat(p), _flat(p2), k_fraction)[0])


def ssim_global(a, b) -> float:
    return float(ssim_rows(_flat(a), _flat(b))[0])


def evaluate_pair_set(targets: np.ndarray, recons: np.ndarray, k_fraction: float = 0.25) -> MetricVector:
    """All six measurements between matched map stacks, averaged per image."""
    return MetricVector(
        l1=float(l1_rows(targets, recons).mean()),
        mse=float(mse_rows(targets, recons).mean()),
        ssim=float(ssim_rows(targets, recons).mean()),
        pc=float(pearson_rows(targets, recons, warn=False).mean()),
        sc=float(spearman_rows(targets, recons, warn=False).mean()),
        ta=float(topk_rows(targets, recons, k_fraction).mean()),
    )


def fit_gaussian(latents: np.ndarray) -> LatentGaussian:
    """Sample mean and unbiased covariance, symmetry enforced."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] < 2:
        raise TooFewSamples("need at least 2 latent vectors, got %s" % (latents.shape,))
    mu = latents.mean(axis=0)
    centered = latents - mu
    cov = centered.T @ centered / (latents.shape[0] - 1)
    return LatentGaussian(mu=mu, cov=(cov + cov.T) / 2.0, n=latents.shape[0])


def sqrt_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric square root via eigendecomposition, tiny negatives clamped."""
    m = np.asarray(m, dtype=np.float64)
    scale = max(1.0, float(np.abs(m).max()) if m.size else 1.0)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetric("expected a square matrix, got %s" % (m.shape,))
    if np.abs(m - m.T).max(initial=0.0) > 1e-8 * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    if vals.min(initial=0.0) < -1e-6 * scale:
        raise IndefiniteMatrix("eigenvalue %g below PSD tolerance" % vals.min())
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(g1: LatentGaussian, g2: LatentGaussian) -> float:
    """Squared 2-Wasserstein distance between two Gaussians.

    ||mu1 - mu2||^2 + tr(cov1 + cov2 - 2 (cov1^1/2 cov2 cov1^1/2)^1/2),
    with negative round-off clamped to 0.
    """
    if g1.mu.shape != g2.mu.shape:
        raise DimensionMismatch("means %s vs %s" % (g1.mu.shape, g2.mu.shape))
    root1 = sqrt_psd(g1.cov)
    inner = root1 @ g2.cov @ root1
    covmean = sqrt_psd((inner + inner.T) / 2.0)
    diff = g1.mu - g2.mu
    value = float(diff @ diff + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * np.trace(covmean))
    return max(value, 0.0)
