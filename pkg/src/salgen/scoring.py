"""The two evaluation axes and their combination.

Distribution Learnability (DL) averages Top-K accuracy, Spearman and
Pearson between true and reconstructed explanations over the final training
epochs. Variance Proximity (VP) compares intra-class against inter-class
similarity of the reconstructed explanations, through pairwise Spearman
sampling and Frechet distances between per-class latent Gaussians. The
method score is their product.

VP exists to catch the trap where a method emits near-identical maps for
every input: those are trivially learnable (high DL) but show no class
structure, so the inter/intra gaps collapse.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .attribution import ExplanationSet
from .errors import (
    ConstantMapWarning,
    CurveTooShort,
    DegenerateCovarianceWarning,
    InsufficientClassMembers,
)
from .data import NUM_CLASSES
from .metrics import MetricVector, fit_gaussian, frechet_distance, normalized_ranks

DEGENERATE_FID = 1e-12


@dataclass(frozen=True)
class ScoreCard:
    """Per-method record of all reported quantities.

    dl, vp and s_em are derived exactly from the stored components:
    dl = (ta + sc + pc) / 3, vp = dsc + dfid, s_em = vp * dl.
    """

    method_id: str
    ta_mean: float
    sc_mean: float
    pc_mean: float
    dl: float
    dsc: float
    dfid: float
    vp: float
    s_em: float

    @classmethod
    def from_parts(cls, method_id, ta_mean, sc_mean, pc_mean, dsc, dfid) -> "ScoreCard":
        dl = distribution_learnability_score(ta_mean, sc_mean, pc_mean)
        vp = variance_proximity_score(dsc, dfid)
        return cls(
            method_id=method_id,
            ta_mean=float(ta_mean),
            sc_mean=float(sc_mean),
            pc_mean=float(pc_mean),
            dl=dl,
            dsc=float(dsc),
            dfid=float(dfid),
            vp=vp,
            s_em=s_em(dl, vp),
        )


@dataclass
class ProximityReport:
    """Raw samples behind a VP value, for inspection and plotting."""

    intra_sc: dict[int, np.ndarray]
    inter_sc: dict[tuple[int, int], np.ndarray]
    intra_fid: dict[int, float]
    inter_fid: dict[tuple[int, int], float]
    sc_intra_mean: float
    sc_inter_mean: float
    fid_intra_mean: float
    fid_inter_mean: float
    s_used: int
    pair_budget: int
    degenerate: bool = False


def distribution_learnability_score(ta: float, sc: float, pc: float) -> float:
    return (float(ta) + float(sc) + float(pc)) / 3.0


def variance_proximity_score(dsc: float, dfid: float) -> float:
    return float(dsc) + float(dfid)


def s_em(dl: float, vp: float) -> float:
    """Final method score."""
    return float(vp) * float(dl)


def distribution_learnability(
    curve: list[MetricVector], window: int = 10
) -> tuple[float, float, float, float]:
    """Means of TA/SC/PC over the last `window` epochs, plus their average."""
    if len(curve) < window:
        raise CurveTooShort("curve has %d epochs, window is %d" % (len(curve), window))
    tail = curve[-window:]
    ta = float(np.mean([m.ta for m in tail]))
    sc = float(np.mean([m.sc for m in tail]))
    pc = float(np.mean([m.pc for m in tail]))
    return ta, sc, pc, distribution_learnability_score(ta, sc, pc)


def normalize_explanations(es: ExplanationSet) -> ExplanationSet:
    """Min-max scale each map into [0, 1] (the autoencoders' output range).

    Constant maps become all-0.5 with a warning. The scaling is strictly
    increasing for non-constant maps, so rank-based metrics are unchanged.
    """
    maps = np.asarray(es.maps, dtype=np.float64)
    lo = maps.min(axis=(1, 2), keepdims=True)
    hi = maps.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    flat = span[:, 0, 0] == 0.0
    if flat.any():
        warnings.warn(
            "%d constant map(s) normalized to 0.5" % int(flat.sum()), ConstantMapWarning
        )
    out = np.where(span == 0.0, 0.5, (maps - lo) / np.where(span == 0.0, 1.0, span))
    return ExplanationSet(
        maps=out,
        image_ids=es.image_ids.copy(),
        target_classes=es.target_classes.copy(),
        method_id=es.method_id,
        split_tag=es.split_tag,
        params={**es.params, "normalized": True},
    )


def _canonical_class_members(labels, image_ids):
    """Per class, member positions sorted by source image id.

    Keying the selection on image ids makes the whole proximity computation
    invariant to how the reconstruction set happens to be ordered.
    """
    members = {}
    for c in range(NUM_CLASSES):
        pos = np.flatnonzero(labels == c)
        members[c] = pos[np.argsort(image_ids[pos], kind="stable")]
    return members


def variance_proximity(
    recon_maps: np.ndarray,
    labels: np.ndarray,
    image_ids: np.ndarray,
    encode_fn,
    s: int = 500,
    seed: int = 0,
    pair_budget: int = 2000,
) -> tuple[ProximityReport, float, float, float]:
    """Intra/inter-class proximity of reconstructed explanations.

    Per class, `s` maps are sampled; intra-class Spearman is taken over a
    seeded budget of within-class pairs and intra-class Frechet distance
    over a split-half of the class latents. Inter-class statistics cover
    all 45 class pairs. Returns (report, dsc, dfid, vp) where
    dsc = mean intra SC - mean inter SC and
    dfid = (mean inter FID - mean intra FID) / mean intra FID.
    """
    labels = np.asarray(labels)
    image_ids = np.asarray(image_ids)
    members = _canonical_class_members(labels, image_ids)
    smallest = min(len(v) for v in members.values())
    if smallest < 4:
        raise InsufficientClassMembers(
            "smallest class has %d reconstructions; need at least 4" % smallest
        )
    s_used = min(s, smallest)
    if s_used < s:
        warnings.warn(
            "per-class sample count lowered from %d to %d" % (s, s_used), UserWarning
        )
    rng = np.random.default_rng(seed)
    chosen = {
        c: members[c][rng.choice(len(members[c]), size=s_used, replace=False)]
        for c in range(NUM_CLASSES)
    }
    all_idx = np.concatenate([chosen[c] for c in range(NUM_CLASSES)])
    maps = np.asarray(recon_maps)[all_idx].reshape(len(all_idx), -1)
    ranks = normalized_ranks(maps)  # pair Spearman reduces to a dot product
    latents = np.asarray(encode_fn(np.asarray(recon_maps)[all_idx]), dtype=np.float64)

    def class_rows(c):
        return slice(c * s_used, (c + 1) * s_used)

    intra_sc, intra_fid = {}, {}
    for c in range(NUM_CLASSES):
        r = ranks[class_rows(c)]
        i = rng.integers(0, s_used, size=pair_budget)
        j = (i + 1 + rng.integers(0, s_used - 1, size=pair_budget)) % s_used
        intra_sc[c] = np.einsum("ij,ij->i", r[i], r[j])
        z = latents[class_rows(c)]
        half = s_used // 2
        intra_fid[c] = frechet_distance(fit_gaussian(z[:half]), fit_gaussian(z[half:]))

    inter_sc, inter_fid = {}, {}
    for c1 in range(NUM_CLASSES):
        for c2 in range(c1 + 1, NUM_CLASSES):
            r1 = ranks[class_rows(c1)]
            r2 = ranks[class_rows(c2)]
            i = rng.integers(0, s_used, size=pair_budget)
            j = rng.integers(0, s_used, size=pair_budget)
            inter_sc[(c1, c2)] = np.einsum("ij,ij->i", r1[i], r2[j])
            inter_fid[(c1, c2)] = frechet_distance(
                fit_gaussian(latents[class_rows(c1)]), fit_gaussian(latents[class_rows(c2)])
            )

    sc_a = float(np.mean([v.mean() for v in intra_sc.values()]))
    sc_r = float(np.mean([v.mean() for v in inter_sc.values()]))
    fid_a = float(np.mean(list(intra_fid.values())))
    fid_r = float(np.mean(list(inter_fid.values())))
    dsc = sc_a - sc_r
    degenerate = fid_a <= DEGENERATE_FID
    if degenerate:
        warnings.warn(
            "intra-class Frechet distances are all ~0; latents are degenerate",
            DegenerateCovarianceWarning,
        )
        dfid = 0.0
    else:
        dfid = (fid_r - fid_a) / fid_a
    report = ProximityReport(
        intra_sc=intra_sc,
        inter_sc=inter_sc,
        intra_fid=intra_fid,
        inter_fid=inter_fid,
        sc_intra_mean=sc_a,
        sc_inter_mean=sc_r,
        fid_intra_mean=fid_a,
        fid_inter_mean=fid_r,
        s_used=s_used,
        pair_budget=pair_budget,
        degenerate=degenerate,
    )
    return report, dsc, dfid, variance_proximity_score(dsc, dfid)
