"""Score tables and training-curve artifacts.

scores.csv mirrors the supplementary-table layout (one row per method over
TA/SC/PC/DL/dSC/dFID/VP/S_EM); curves land one CSV per method; plots are
self-contained SVG line charts, one per metric with methods as series, so
reports stay viewable without any plotting runtime.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict

from .metrics import MetricVector
from .scoring import ScoreCard

SCORE_COLUMNS = ("method", "TA", "SC", "PC", "DL", "dSC", "dFID", "VP", "S_EM")

CURVE_COLUMNS = ("epoch", "l1", "mse", "ssim", "ta", "sc", "pc")

CURVE_METRICS = ("l1", "mse", "ssim", "ta", "sc", "pc")

_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def card_to_row(card: ScoreCard) -> list[str]:
    return [card.method_id] + [
        repr(v)
        for v in (card.ta_mean, card.sc_mean, card.pc_mean, card.dl,
                  card.dsc, card.dfid, card.vp, card.s_em)
    ]


def write_scores_csv(path: str, cards: list[ScoreCard]) -> None:
    lines = [",".join(SCORE_COLUMNS)]
    lines += [",".join(card_to_row(c)) for c in cards]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_scores_json(path: str, cards: list[ScoreCard]) -> None:
    with open(path, "w") as fh:
        json.dump([asdict(c) for c in cards], fh, indent=1, sort_keys=True)


def read_scores_json(path: str) -> list[ScoreCard]:
    with open(path) as fh:
        return [ScoreCard(**row) for row in json.load(fh)]


def write_curve_csv(path: str, curve: list[MetricVector]) -> None:
    lines = [",".join(CURVE_COLUMNS)]
    for epoch, m in enumerate(curve):
        lines.append(
            ",".join([str(epoch)] + [repr(v) for v in (m.l1, m.mse, m.ssim, m.ta, m.sc, m.pc)])
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_curve_csv(path: str) -> list[MetricVector]:
    with open(path) as fh:
        rows = fh.read().strip().split("\n")[1:]
    curve = []
    for row in rows:
        _, l1, mse, ssim, ta, sc, pc = row.split(",")
        curve.append(MetricVector(l1=float(l1), mse=float(mse), ssim=float(ssim),
                                  ta=float(ta), sc=float(sc), pc=float(pc)))
    return curve


def _svg_line_chart(title: str, series: dict[str, list[float]]) -> str:
    width, height = 640, 400
    ml, mr, mt, mb = 60, 150, 30, 40
    plot_w, plot_h = width - ml - mr, height - mt - mb
    values = [v for ys in series.values() for v in ys]
    lo, hi = min(values), max(values)
    if hi == lo:
        hi = lo + 1.0
    n = max(len(ys) for ys in series.values())

    def sx(i):
        return ml + (plot_w * i / max(n - 1, 1))

    def sy(v):
        return mt + plot_h * (1.0 - (v - lo) / (hi - lo))

    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d">' % (width, height),
        '<rect width="%d" height="%d" fill="white"/>' % (width, height),
        '<text x="%d" y="18" font-family="sans-serif" font-size="14">%s</text>' % (ml, title),
        '<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="black"/>'
        % (ml, mt + plot_h, ml + plot_w, mt + plot_h),
        '<line x1="%d" y1="%d" x2="%d" y2="%d" stroke="black"/>' % (ml, mt, ml, mt + plot_h),
        '<text x="8" y="%d" font-family="sans-serif" font-size="11">%.4g</text>' % (mt + 10, hi),
        '<text x="8" y="%d" font-family="sans-serif" font-size="11">%.4g</text>'
        % (mt + plot_h, lo),
        '<text x="%d" y="%d" font-family="sans-serif" font-size="11">epoch</text>'
        % (ml + plot_w // 2, height - 10),
    ]
    for idx, (name, ys) in enumerate(series.items()):
        color = _PALETTE[idx % len(_PALETTE)]
        points = " ".join("%.2f,%.2f" % (sx(i), sy(v)) for i, v in enumerate(ys))
        parts.append(
            '<polyline class="series" fill="none" stroke="%s" stroke-width="1.5" points="%s"/>'
            % (color, points)
        )
        parts.append(
            '<text x="%d" y="%d" font-family="sans-serif" font-size="11" fill="%s">%s</text>'
            % (ml + plot_w + 10, mt + 14 + 16 * idx, color, name)
        )
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(cards: list[ScoreCard], curves: dict[str, list[MetricVector]], outdir: str) -> list[str]:
    """Write scores.csv/scores.json, per-method curve CSVs and SVG plots.

    Returns the list of files written. An empty curve dict yields the score
    files only.
    """
    os.makedirs(outdir, exist_ok=True)
    written = []
    scores_csv = os.path.join(outdir, "scores.csv")
    write_scores_csv(scores_csv, cards)
    written.append(scores_csv)
    scores_json = os.path.join(outdir, "scores.json")
    write_scores_json(scores_json, cards)
    written.append(scores_json)
    if curves:
        curve_dir = os.path.join(outdir, "curves")
        os.makedirs(curve_dir, exist_ok=True)
        for method, curve in curves.items():
            path = os.path.join(curve_dir, "%s.csv" % method)
            write_curve_csv(path, curve)
            written.append(path)
        plot_dir = os.path.join(outdir, "plots")
        os.makedirs(plot_dir, exist_ok=True)
        for metric in CURVE_METRICS:
            series = {m: [getattr(v, metric) for v in c] for m, c in curves.items()}
            path = os.path.join(plot_dir, "%s.svg" % metric)
            with open(path, "w") as fh:
                fh.write(_svg_line_chart(metric.upper(), series))
            written.append(path)
    return written
