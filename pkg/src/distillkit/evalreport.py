"""Evaluation artifacts: score tables, ratio-sweep curves, importance
heatmaps, explanation dumps and run manifests.

Every artifact is plain CSV/JSON/SVG built with deterministic formatting
(floats via repr, no timestamps), so regenerating a report from the same
manifest reproduces identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json

import numpy as np

import distillkit
from distillkit._backend import backend_name
from distillkit.core import DistillkitError, FeatureSchema


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def build_manifest(kind: str, config: dict) -> dict:
    return {
        "kind": kind,
        "config": config,
        "config_hash": config_hash(config),
        "package_version": distillkit.__version__,
        "kernel_backend": backend_name(),
    }


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _fmt(v) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# score table
# ---------------------------------------------------------------------------

class R2Table:
    """Model family rows x gait columns of aggregated test scores."""

    def __init__(self, families, gaits, cells: dict):
        self.families = list(families)
        self.gaits = list(gaits)
        self.cells = cells  # (family, gait) -> float, missing keys absent

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["family"] + self.gaits)
            for fam in self.families:
                row = [fam]
                for g in self.gaits:
                    v = self.cells.get((fam, g))
                    row.append("" if v is None else _fmt(v))
                w.writerow(row)

    def to_text(self) -> str:
        width = max(9, *(len(g) for g in self.gaits)) + 2
        head = "family".ljust(10) + "".join(g.rjust(width) for g in self.gaits)
        lines = [head]
        for fam in self.families:
            row = fam.ljust(10)
            for g in self.gaits:
                v = self.cells.get((fam, g))
                row += ("-" if v is None else f"{v:.4f}").rjust(width)
            lines.append(row)
        return "\n".join(lines)


def build_r2_table(scores: dict, families, gaits) -> R2Table:
    """`scores[family][gait] -> float`; absent entries render as missing."""
    cells = {}
    for fam in families:
        for g in gaits:
            v = scores.get(fam, {}).get(g)
            if v is not None:
                cells[(fam, g)] = float(v)
    return R2Table(families, gaits, cells)


# ---------------------------------------------------------------------------
# ratio sweep
# ---------------------------------------------------------------------------

class RatioSweep:
    """Mean episodic reward per (family, gait, ratio)."""

    def __init__(self, rows: list[tuple[str, str, float, float]]):
        self.rows = sorted(rows)

    def families(self):
        return sorted({r[0] for r in self.rows})

    def gaits(self):
        return sorted({r[1] for r in self.rows})

    def curve(self, family, gait):
        pts = [(r, v) for f, g, r, v in self.rows if f == family and g == gait]
        return sorted(pts)

    def expert_baseline(self, gait) -> float | None:
        vals = [v for f, g, r, v in self.rows if g == gait and r == 1.0]
        return vals[0] if vals else None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["family", "gait", "ratio", "mean_episode_reward"])
            for fam, gait, ratio, val in self.rows:
                w.writerow([fam, gait, _fmt(ratio), _fmt(val)])

    def to_svg(self, gait) -> str:
        """One reward-vs-ratio chart: series per family plus the expert
        baseline as a dashed reference line."""
        curves = {f: self.curve(f, gait) for f in self.families()}
        curves = {f: c for f, c in curves.items() if c}
        if not curves:
            raise DistillkitError(f"no sweep data for gait {gait!r}")
        all_vals = [v for c in curves.values() for _, v in c]
        base = self.expert_baseline(gait)
        if base is not None:
            all_vals.append(base)
        lo, hi = min(all_vals), max(all_vals)
        if hi <= lo:
            hi = lo + 1.0
        pad = 0.08 * (hi - lo)
        lo, hi = lo - pad, hi + pad
        W, H, ML, MB = 520.0, 320.0, 60.0, 40.0
        px = lambda r: ML + r * (W - ML - 20)
        py = lambda v: (H - MB) - (v - lo) / (hi - lo) * (H - MB - 20)
        colors = {"gbm": "#1f77b4", "ebm": "#2ca02c", "symbolic": "#d62728"}
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:g}" '
                 f'height="{H:g}">',
                 f'<text x="{W / 2:g}" y="16" text-anchor="middle" '
                 f'font-size="13">mean episodic reward vs alternation ratio '
                 f'({gait})</text>']
        parts.append(f'<line x1="{ML:g}" y1="{H - MB:g}" x2="{W - 20:g}" '
                     f'y2="{H - MB:g}" stroke="black"/>')
        parts.append(f'<line x1="{ML:g}" y1="20" x2="{ML:g}" '
                     f'y2="{H - MB:g}" stroke="black"/>')
        if base is not None:
            y = py(base)
            parts.append(f'<line x1="{ML:g}" y1="{y:.2f}" x2="{W - 20:g}" '
                         f'y2="{y:.2f}" stroke="#555" stroke-dasharray="6,4"/>')
            parts.append(f'<text x="{W - 18:g}" y="{y:.2f}" font-size="10" '
                         f'fill="#555">expert</text>')
        for fam, curve in sorted(curves.items()):
            color = colors.get(fam, "#333")
            pts = " ".join(f"{px(r):.2f},{py(v):.2f}" for r, v in curve)
            parts.append(f'<polyline fill="none" stroke="{color}" '
                         f'stroke-width="2" points="{pts}"/>')
            for r, v in curve:
                parts.append(f'<circle cx="{px(r):.2f}" cy="{py(v):.2f}" '
                             f'r="3" fill="{color}"/>')
            lr, lv = curve[-1]
            parts.append(f'<text x="{px(lr) - 30:.2f}" y="{py(lv) - 8:.2f}" '
                         f'font-size="11" fill="{color}">{fam}</text>')
        for r in sorted({r for c in curves.values() for r, _ in c}):
            parts.append(f'<text x="{px(r):.2f}" y="{H - MB + 14:g}" '
                         f'font-size="10" text-anchor="middle">{r:g}</text>')
        for frac in (0.0, 0.5, 1.0):
            v = lo + frac * (hi - lo)
            parts.append(f'<text x="{ML - 6:g}" y="{py(v):.2f}" font-size="10" '
                         f'text-anchor="end">{v:.0f}</text>')
        parts.append("</svg>")
        return "\n".join(parts)


def build_ratio_sweep(results: dict) -> RatioSweep:
    """`results[family][gait][ratio] -> mean reward`."""
    rows = []
    for fam, by_gait in results.items():
        for gait, by_ratio in by_gait.items():
            for ratio, val in by_ratio.items():
                rows.append((fam, gait, float(ratio), float(val)))
    if not rows:
        raise DistillkitError("sweep results are empty")
    return RatioSweep(rows)


# ---------------------------------------------------------------------------
# importance heatmaps
# ---------------------------------------------------------------------------

def export_importance_heatmap(matrix, schema: FeatureSchema, output_names,
                              method: str, csv_path, svg_path=None) -> None:
    """Outputs x features matrix as CSV (+ optional SVG heatmap)."""
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if m.shape != (len(output_names), schema.dim):
        raise DistillkitError(
            f"matrix shape {m.shape} does not match outputs x features")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["output"] + list(schema.names))
        for name, row in zip(output_names, m):
            w.writerow([name] + [_fmt(v) for v in row])
    if svg_path is not None:
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write(_heatmap_svg(m, list(schema.names), list(output_names),
                                  method))


def load_importance_csv(path):
    """Inverse of the CSV side of export_importance_heatmap."""
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        names, rows = [], []
        for row in rd:
            names.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return np.asarray(rows), header[1:], names


def _heat_color(t: float) -> str:
    # light -> dark blue ramp
    r = int(247 - 215 * t)
    g = int(251 - 170 * t)
    b = int(255 - 148 * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def _heatmap_svg(m, feature_names, output_names, title) -> str:
    cell, left, top = 26.0, 120.0, 60.0
    n_out, n_feat = m.shape
    W = left + n_feat * cell + 20
    H = top + n_out * cell + 110
    vmax = float(m.max()) if m.size and m.max() > 0 else 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:g}" '
             f'height="{H:g}">',
             f'<text x="{W / 2:g}" y="20" text-anchor="middle" '
             f'font-size="13">{title}</text>']
    for i in range(n_out):
        parts.append(f'<text x="{left - 6:g}" y="{top + i * cell + 17:g}" '
                     f'font-size="10" text-anchor="end">{output_names[i]}'
                     f'</text>')
        for j in range(n_feat):
            t = max(0.0, min(1.0, m[i, j] / vmax))
            parts.append(f'<rect x="{left + j * cell:g}" '
                         f'y="{top + i * cell:g}" width="{cell:g}" '
                         f'height="{cell:g}" fill="{_heat_color(t)}" '
                         f'stroke="#ddd"/>')
    for j, name in enumerate(feature_names):
        x = left + j * cell + cell / 2
        y = top + n_out * cell + 8
        parts.append(f'<text x="{x:g}" y="{y:g}" font-size="9" '
                     f'text-anchor="start" transform="rotate(60 {x:g} '
                     f'{y:g})">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_explanations_jsonl(path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
