"""Anti-spoofing metrics, quantile-filtered evaluation and report export.

Scores are live probabilities: higher means "more likely live". A sample is
accepted as live at threshold ``t`` when ``score >= t``.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import MissingClass
from .inference import quantile_threshold, retained_mask

log = logging.getLogger(__name__)

HTER_MODES = ("eer", "fixed0.5")


def _split(is_live, scores):
    is_live = np.asarray(is_live, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    live, spoof = scores[is_live], scores[~is_live]
    if live.size == 0 or spoof.size == 0:
        raise MissingClass(f"need both classes, got {live.size} live / {spoof.size} spoof")
    return live, spoof


def far_frr(is_live, scores, t: float) -> tuple[float, float]:
    live, spoof = _split(is_live, scores)
    return float(np.mean(spoof >= t)), float(np.mean(live < t))


def eer_threshold(is_live, scores) -> float:
    """Distinct score value minimizing ``|FAR - FRR|``; ties go to the lower value."""
    live, spoof = _split(is_live, scores)
    cand = np.unique(np.concatenate([live, spoof]))
    # counts of spoof >= t and live < t for every candidate t
    far = (spoof.size - np.searchsorted(np.sort(spoof), cand, side="left")) / spoof.size
    frr = np.searchsorted(np.sort(live), cand, side="left") / live.size
    return float(cand[np.argmin(np.abs(far - frr))])


def hter(is_live, scores, mode: str = "eer") -> float:
    """Half total error rate in percent."""
    if mode == "eer":
        t = eer_threshold(is_live, scores)
    elif mode == "fixed0.5":
        t = 0.5
    else:
        raise ValueError(f"unknown HTER mode {mode!r}")
    far, frr = far_frr(is_live, scores, t)
    return 100.0 * (far + frr) / 2.0


def auc(is_live, scores) -> float:
    """Mann-Whitney AUC in percent; ties between a live and a spoof count half."""
    live, spoof = _split(is_live, scores)
    spoof_sorted = np.sort(spoof)
    below = np.searchsorted(spoof_sorted, live, side="left")
    tied = np.searchsorted(spoof_sorted, live, side="right") - below
    return float(100.0 * (below.sum() + 0.5 * tied.sum()) / (live.size * spoof.size))


@dataclass(frozen=True)
class EvalRow:
    p: float
    retained: int
    retained_frac: float
    hter: float | None  # None marks an undefined row
    auc: float | None

    @property
    def defined(self) -> bool:
        return self.hter is not None


def filtered_eval(is_live, scores, conf, quantiles, hter_mode: str = "eer") -> list[EvalRow]:
    """HTER/AUC on the samples that survive each quantile threshold.

    Rows whose remainder is empty or single-class are kept but undefined.
    """
    is_live = np.asarray(is_live, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    n = conf.size
    rows = []
    for p in sorted(quantiles):
        keep = retained_mask(conf, quantile_threshold(conf, p))
        kept = int(keep.sum())
        lv = is_live[keep]
        if kept == 0 or lv.all() or not lv.any():
            rows.append(EvalRow(p, kept, kept / n, None, None))
            continue
        rows.append(EvalRow(p, kept, kept / n, hter(lv, scores[keep], hter_mode), auc(lv, scores[keep])))
    return rows


def normalize(conf) -> np.ndarray:
    """Min-max scale to [0, 1]; a degenerate range maps everything to 0.5."""
    conf = np.asarray(conf, dtype=np.float64)
    lo, hi = float(np.min(conf)), float(np.max(conf))
    if hi == lo:
        log.warning("degenerate confidence range (all values %g); using 0.5", lo)
        return np.full_like(conf, 0.5)
    return (conf - lo) / (hi - lo)


def confidence_cdf(conf, groups, n_points: int = 101) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Empirical CDF per group on a shared min-max normalized axis.

    Returns ``{group: (abscissae, cumulative_fraction)}`` in sorted group order.
    """
    groups = np.asarray(groups, dtype=object)
    norm = normalize(conf)
    xs = np.linspace(0.0, 1.0, n_points)
    out = {}
    for g in sorted(set(groups.tolist())):
        vals = np.sort(norm[groups == g])
        out[g] = (xs, np.searchsorted(vals, xs, side="right") / vals.size)
    return out


@dataclass(frozen=True)
class GroupStats:
    group: str
    count: int
    mean: float
    median: float
    deciles: tuple[float, ...]


def groupby_report(conf, groups) -> list[GroupStats]:
    """Count, mean, median and deciles (d1..d9) of confidence per group.

    Deciles are order statistics: the smallest value whose empirical CDF
    reaches k/10.
    """
    conf = np.asarray(conf, dtype=np.float64)
    groups = np.asarray(groups, dtype=object)
    out = []
    for g in sorted(set(groups.tolist())):
        v = conf[groups == g]
        dec = np.quantile(v, np.arange(1, 10) / 10.0, method="inverted_cdf")
        out.append(GroupStats(g, int(v.size), float(np.mean(v)), float(np.median(v)), tuple(float(d) for d in dec)))
    return out


# export

def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_eval_rows(rows: list[EvalRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "retained", "retained_frac", "hter", "auc"])
        for r in rows:
            w.writerow([_fmt(r.p), r.retained, _fmt(r.retained_frac), _fmt(r.hter), _fmt(r.auc)])


def read_eval_rows(path) -> list[EvalRow]:
    def val(s):
        return None if s == "NA" else float(s)

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            EvalRow(float(r["p"]), int(r["retained"]), float(r["retained_frac"]), val(r["hter"]), val(r["auc"]))
            for r in reader
        ]


def safe_group_name(group: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in group)


def write_cdfs(cdfs: dict, out_dir) -> list[str]:
    paths = []
    for g, (xs, fr) in cdfs.items():
        path = os.path.join(out_dir, f"cdf_{safe_group_name(g)}.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["confidence_norm", "cum_frac"])
            for x, f in zip(xs, fr):
                w.writerow([_fmt(x), _fmt(f)])
        paths.append(path)
    return paths


def write_groups(stats: list[GroupStats], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "count", "mean_conf", "median_conf", *[f"d{i}" for i in range(1, 10)]])
        for s in stats:
            w.writerow([s.group, s.count, _fmt(s.mean), _fmt(s.median), *[_fmt(d) for d in s.deciles]])


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def cdf_svg(cdfs: dict, width: int = 480, height: int = 320) -> str:
    """Plain-text SVG line chart of CDF curves."""
    pad = 40
    pw, ph = width - 2 * pad, height - 2 * pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="{pad}" y="{pad}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>',
        f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">normalized confidence</text>',
        f'<text x="12" y="{height / 2:.1f}" transform="rotate(-90 12 {height / 2:.1f})" '
        f'text-anchor="middle" font-size="12">cumulative fraction</text>',
    ]
    for i, (g, (xs, fr)) in enumerate(cdfs.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{pad + x * pw:.2f},{pad + (1 - f) * ph:.2f}" for x, f in zip(xs, fr))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(
            f'<text x="{pad + 6}" y="{pad + 14 + 14 * i}" font-size="11" fill="{color}">{_xml_escape(g)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _xml_escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def format_cell(v) -> str:
    """Two-decimal rendering for summaries; undefined becomes NA."""
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return f"{v:.2f}"
