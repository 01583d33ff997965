"""Rendering of sweep results: aligned text tables, CSV twins, SVG figures.

Every number that appears in a rendered document is traceable to a
RunSummary or comparison record held by the bundle; `audit_bundle` re-derives
each one and fails on any free-floating value. Rendering is pure: the same
bundle produces byte-identical output (timestamps are injected by the
caller, never sampled here).

Figures are emitted by a minimal internal SVG writer (rects, lines, text),
with the plotted values embedded in a comment block so a reader can check
the bars against the data without parsing geometry. Accuracies render with 3
decimals, standard deviations with 4.
"""

from __future__ import annotations

import html
import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .mc import RunSummary
from .model import PRESETS
from .stats import (
    BiasCensus,
    ComparisonResult,
    ConfigEffectRow,
    DegradationReport,
    config_effect_table,
    degradation_table,
    memory_bias_census,
)

CONFIG_ORDER = list(PRESETS)  # declaration order mirrors the sweep's grid

ACC_FMT = "{:.3f}"
STD_FMT = "{:.4f}"
GAP_FMT = "{:+.3f}"


@dataclass
class ReportBundle:
    """Everything a report is rendered from; numbers only live here."""

    sweep_id: str
    generated_at: str  # injected ISO timestamp, part of the byte-identity
    summaries: Dict[str, Dict[str, RunSummary]]  # model -> config -> summary
    comparisons: List[ComparisonResult] = field(default_factory=list)
    baseline_config: str = "baseline"
    deterministic_config: str = "deterministic"
    top_k: int = 5

    def degradation(self) -> DegradationReport:
        return degradation_table(
            self.summaries,
            deterministic_key=self.deterministic_config,
            baseline_key=self.baseline_config,
        )

    def config_effects(self) -> List[ConfigEffectRow]:
        order = [c for c in CONFIG_ORDER]
        extra = sorted(
            {c for per in self.summaries.values() for c in per} - set(order)
        )
        return config_effect_table(self.summaries, config_order=order + extra)

    def bias_census(self) -> Optional[BiasCensus]:
        at_baseline = {
            mid: per[self.baseline_config]
            for mid, per in self.summaries.items()
            if self.baseline_config in per and per[self.baseline_config].delta_cog is not None
        }
        if not at_baseline:
            return None
        return memory_bias_census(at_baseline)

    def top_models(self) -> List[Tuple[str, RunSummary]]:
        rows = [
            (mid, per[self.baseline_config])
            for mid, per in self.summaries.items()
            if self.baseline_config in per
        ]
        rows.sort(key=lambda r: (-r[1].mean_overall, r[0]))
        return rows[: self.top_k]


# -- table rendering -----------------------------------------------------------


def _aligned(headers: Sequence[str], rows: List[Sequence[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(cells):
        return "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines) + "\n"


def _csv(headers: Sequence[str], rows: List[Sequence[str]]) -> str:
    def esc(cell):
        cell = str(cell)
        if any(ch in cell for ch in ",\"\n"):
            cell = '"' + cell.replace('"', '""') + '"'
        return cell
    lines = [",".join(esc(h) for h in headers)]
    lines.extend(",".join(esc(c) for c in row) for row in rows)
    return "\n".join(lines) + "\n"


def _opt(fmt: str, value) -> str:
    return fmt.format(value) if value is not None else "n/a"


def render_tables(bundle: ReportBundle) -> Dict[str, str]:
    """All table documents keyed by file name."""
    docs: Dict[str, str] = {}

    headers = ["model", "overall", "memory", "reasoning",
               "overall_std", "memory_std", "reasoning_std"]
    rows = []
    for mid, s in bundle.top_models():
        rows.append([
            mid, ACC_FMT.format(s.mean_overall), _opt(ACC_FMT, s.mean_memory),
            _opt(ACC_FMT, s.mean_reasoning), STD_FMT.format(s.std_overall),
            _opt(STD_FMT, s.std_memory), _opt(STD_FMT, s.std_reasoning),
        ])
    title = (f"Top {len(rows)} models by mean overall accuracy "
             f"({bundle.baseline_config} configuration)\n\n")
    docs["top_models.txt"] = title + _aligned(headers, rows)
    docs["top_models.csv"] = _csv(headers, rows)

    deg = bundle.degradation()
    headers = ["model", "deterministic_mean", "deterministic_std",
               "baseline_mean", "baseline_std", "degradation"]
    rows = [[
        e.model_id, ACC_FMT.format(e.deterministic_mean),
        STD_FMT.format(e.deterministic_std), ACC_FMT.format(e.baseline_mean),
        STD_FMT.format(e.baseline_std), GAP_FMT.format(e.degradation),
    ] for e in deg.entries]
    note = (f"\n{deg.negative_count} of {deg.total} models "
            f"({100.0 * deg.negative_fraction:.1f}%) degrade under "
            f"{bundle.baseline_config} dropout.\n")
    docs["degradation.txt"] = (
        "Deterministic vs baseline stochastic inference (most degraded first)\n\n"
        + _aligned(headers, rows) + note
    )
    docs["degradation.csv"] = _csv(headers, rows)

    effects = bundle.config_effects()
    headers = ["config", "memory", "reasoning", "gap", "models"]
    rows = [[
        r.config, ACC_FMT.format(r.mean_memory), ACC_FMT.format(r.mean_reasoning),
        GAP_FMT.format(r.gap), str(r.model_count),
    ] for r in effects]
    docs["config_effects.txt"] = (
        "Across-model mean accuracy per dropout configuration\n\n"
        + _aligned(headers, rows)
    )
    docs["config_effects.csv"] = _csv(headers, rows)

    census = bundle.bias_census()
    headers = ["positive_count", "total", "positive_fraction", "mean_delta"]
    if census is not None:
        rows = [[str(census.positive_count), str(census.total),
                 f"{census.positive_fraction:.3f}", GAP_FMT.format(census.mean_delta)]]
    else:
        rows = []
    docs["bias_census.txt"] = (
        f"Models with memory-biased accuracy ({bundle.baseline_config})\n\n"
        + _aligned(headers, rows)
    )
    docs["bias_census.csv"] = _csv(headers, rows)

    if bundle.comparisons:
        headers = ["label_a", "label_b", "mean_diff", "t", "df", "p_raw",
                   "p_adjusted", "alpha_adjusted", "cohens_d", "significant"]
        rows = [[
            c.label_a, c.label_b, f"{c.mean_diff:+.6f}", f"{c.t_stat:.6g}",
            f"{c.df:.6g}", f"{c.p_raw:.6g}", f"{c.p_adjusted:.6g}",
            f"{c.alpha_adjusted:.6g}", f"{c.cohens_d:.6g}",
            "yes" if c.significant else "no",
        ] for c in bundle.comparisons]
        docs["comparisons.txt"] = (
            "Hypothesis tests (Welch, Bonferroni-corrected)\n\n"
            + _aligned(headers, rows)
        )
        docs["comparisons.csv"] = _csv(headers, rows)
    return docs


# -- figures ---------------------------------------------------------------------

_BLUE = "#4878cf"
_ORANGE = "#ee854a"

_METRICS = {
    "overall": ("mean_overall", "std_overall", "Overall accuracy"),
    "memory": ("mean_memory", "std_memory", "Memory accuracy"),
    "reasoning": ("mean_reasoning", "std_reasoning", "Reasoning accuracy"),
}


def _svg_bar_chart(
    title: str,
    models: List[str],
    pairs: List[Tuple[float, float, float, float]],  # det mean/std, base mean/std
    legend: Tuple[str, str],
    generated_at: str,
    data_comment: str,
) -> str:
    width, height = 760, 420
    left, right, top, bottom = 70, 20, 50, 90
    plot_w, plot_h = width - left - right, height - top - bottom
    n = max(len(models), 1)
    group_w = plot_w / n
    bar_w = group_w * 0.32

    def x_of(i, which):
        base = left + i * group_w + group_w / 2
        return base - bar_w - 2 if which == 0 else base + 2

    def y_of(v):
        return top + plot_h * (1.0 - v)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<!--\n{data_comment}\n-->",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15" font-weight="bold">{html.escape(title)}</text>',
        f'<text x="{width - right:.1f}" y="{height - 8}" text-anchor="end" '
        f'font-family="sans-serif" font-size="9" fill="#888">generated {html.escape(generated_at)}</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y_of(frac)
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{left + plot_w}" y2="{y:.1f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{frac:.2f}</text>'
        )
    for i, (mid, (dm, ds, bm, bs)) in enumerate(zip(models, pairs)):
        for which, (mean, std, color) in enumerate(
            ((dm, ds, _BLUE), (bm, bs, _ORANGE))
        ):
            x = x_of(i, which)
            y = y_of(mean)
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                f'height="{plot_h - (y - top):.1f}" fill="{color}"/>'
            )
            cx = x + bar_w / 2
            y_lo, y_hi = y_of(max(mean - std, 0.0)), y_of(min(mean + std, 1.0))
            parts.append(
                f'<line x1="{cx:.1f}" y1="{y_hi:.1f}" x2="{cx:.1f}" y2="{y_lo:.1f}" '
                f'stroke="black" stroke-width="1.2"/>'
            )
            for yy in (y_hi, y_lo):
                parts.append(
                    f'<line x1="{cx - 4:.1f}" y1="{yy:.1f}" x2="{cx + 4:.1f}" '
                    f'y2="{yy:.1f}" stroke="black" stroke-width="1.2"/>'
                )
        label_x = left + i * group_w + group_w / 2
        parts.append(
            f'<text x="{label_x:.1f}" y="{top + plot_h + 18:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{html.escape(mid)}</text>'
        )
    lx = left
    for name, color in zip(legend, (_BLUE, _ORANGE)):
        parts.append(
            f'<rect x="{lx}" y="{height - 40}" width="14" height="14" fill="{color}"/>'
        )
        parts.append(
            f'<text x="{lx + 20}" y="{height - 28}" font-family="sans-serif" '
            f'font-size="12">{html.escape(name)}</text>'
        )
        lx += 24 + 9 * len(name)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_figures(bundle: ReportBundle) -> Dict[str, str]:
    """Grouped bar charts (deterministic vs baseline, error bars = std) for
    each metric family; models ordered by degradation, most affected first."""
    deg = bundle.degradation()
    models = [e.model_id for e in deg.entries]
    docs: Dict[str, str] = {}
    for key, (mean_field, std_field, title) in _METRICS.items():
        pairs = []
        kept = []
        for mid in models:
            det = bundle.summaries[mid][bundle.deterministic_config]
            base = bundle.summaries[mid][bundle.baseline_config]
            dm, ds = getattr(det, mean_field), getattr(det, std_field)
            bm, bs = getattr(base, mean_field), getattr(base, std_field)
            if None in (dm, ds, bm, bs):
                continue
            kept.append(mid)
            pairs.append((dm, ds, bm, bs))
        if not kept:
            continue
        comment_rows = [
            {"model": mid, "deterministic_mean": p[0], "deterministic_std": p[1],
             "baseline_mean": p[2], "baseline_std": p[3]}
            for mid, p in zip(kept, pairs)
        ]
        comment = "data: " + json.dumps({"metric": key, "rows": comment_rows})
        docs[f"{key}_accuracy.svg"] = _svg_bar_chart(
            title=f"{title}: deterministic vs {bundle.baseline_config} dropout",
            models=kept, pairs=pairs,
            legend=("deterministic", bundle.baseline_config),
            generated_at=bundle.generated_at, data_comment=comment,
        )
    return docs


def write_report(bundle: ReportBundle, out_dir) -> Dict[str, str]:
    """Render tables and figures under out_dir/{tables,figures}; returns the
    rendered documents keyed by relative path."""
    rendered: Dict[str, str] = {}
    tables_dir = os.path.join(out_dir, "tables")
    figures_dir = os.path.join(out_dir, "figures")
    os.makedirs(tables_dir, exist_ok=True)
    os.makedirs(figures_dir, exist_ok=True)
    for name, text in render_tables(bundle).items():
        path = os.path.join(tables_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        rendered[os.path.join("tables", name)] = text
    for name, text in render_figures(bundle).items():
        path = os.path.join(figures_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
        rendered[os.path.join("figures", name)] = text
    return rendered


# -- traceability audit -----------------------------------------------------------


def audit_bundle(bundle: ReportBundle, rendered: Dict[str, str]) -> List[str]:
    """Re-derive every rendered number from the bundle's records.

    Returns a list of mismatch descriptions; empty means every value traced.
    """
    problems: List[str] = []

    def expect(doc: str, value: str, where: str):
        if value not in rendered.get(doc, ""):
            problems.append(f"{doc}: expected {where} value {value!r} not found")

    for mid, s in bundle.top_models():
        expect("tables/top_models.txt", ACC_FMT.format(s.mean_overall), f"{mid} overall")
        expect("tables/top_models.txt", STD_FMT.format(s.std_overall), f"{mid} overall std")
        if s.mean_memory is not None:
            expect("tables/top_models.txt", ACC_FMT.format(s.mean_memory), f"{mid} memory")
        if s.mean_reasoning is not None:
            expect("tables/top_models.txt", ACC_FMT.format(s.mean_reasoning), f"{mid} reasoning")

    deg = bundle.degradation()
    for e in deg.entries:
        det = bundle.summaries[e.model_id][bundle.deterministic_config]
        base = bundle.summaries[e.model_id][bundle.baseline_config]
        if e.deterministic_mean != det.mean_overall or e.baseline_mean != base.mean_overall:
            problems.append(f"degradation entry for {e.model_id} does not match summaries")
        if e.degradation != e.baseline_mean - e.deterministic_mean:
            problems.append(f"degradation arithmetic broken for {e.model_id}")
        expect("tables/degradation.txt", GAP_FMT.format(e.degradation), f"{e.model_id} degradation")

    for row in bundle.config_effects():
        if abs(row.gap - (row.mean_memory - row.mean_reasoning)) > 1e-12:
            problems.append(f"config effect gap broken for {row.config}")
        expect("tables/config_effects.txt", GAP_FMT.format(row.gap), f"{row.config} gap")

    census = bundle.bias_census()
    if census is not None:
        expect("tables/bias_census.txt", str(census.positive_count), "census count")
        expect("tables/bias_census.txt", f"{census.positive_fraction:.3f}", "census fraction")

    for name, text in rendered.items():
        if not name.endswith(".svg"):
            continue
        try:
            comment = text.split("<!--\ndata: ", 1)[1].split("\n-->", 1)[0]
            payload = json.loads(comment)
        except (IndexError, json.JSONDecodeError):
            problems.append(f"{name}: missing or malformed embedded data table")
            continue
        mean_field, std_field, _ = _METRICS[payload["metric"]]
        for row in payload["rows"]:
            mid = row["model"]
            det = bundle.summaries[mid][bundle.deterministic_config]
            base = bundle.summaries[mid][bundle.baseline_config]
            if (row["deterministic_mean"] != getattr(det, mean_field)
                    or row["deterministic_std"] != getattr(det, std_field)
                    or row["baseline_mean"] != getattr(base, mean_field)
                    or row["baseline_std"] != getattr(base, std_field)):
                problems.append(f"{name}: embedded data for {mid} does not match summaries")
    return problems
