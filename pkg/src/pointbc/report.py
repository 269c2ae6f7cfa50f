"""Evaluation records, CSV output, and a dependency-free SVG bar chart.

Outputs are deterministic down to the byte for identical inputs: fixed
number formatting, sorted iteration, no timestamps.  Files are written
to a temp path and committed with an atomic rename.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

CSV_HEADER = "variation,seed,episodes,successes,rate_percent"

# seed value marking a row that sums episodes/successes across seeds
AGGREGATE_SEED = -1

_BAR_COLORS = ["#4878a8", "#e49444", "#5aa469", "#d1615d", "#857aab", "#937860"]


@dataclass
class EvalRecord:
    variation: str
    seed: int
    episodes: int
    successes: int
    variant: str = ""

    @property
    def rate_percent(self) -> float:
        return 100.0 * self.successes / max(1, self.episodes)


def _atomic_write_text(path: str, text: str) -> None:
    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".tmp_report_")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_csv(path: str, records: list[EvalRecord]) -> None:
    """Rows in the given order.  A variant column is prepended when any
    record carries one (ablation tables)."""
    with_variant = any(r.variant for r in records)
    lines = []
    lines.append(("variant," + CSV_HEADER) if with_variant else CSV_HEADER)
    for r in records:
        row = f"{r.variation},{r.seed},{r.episodes},{r.successes},{r.rate_percent:.2f}"
        lines.append(f"{r.variant}," + row if with_variant else row)
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str) -> list[EvalRecord]:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise ValueError(f"{path} is empty")
    header = lines[0].split(",")
    with_variant = header[0] == "variant"
    expected = (["variant"] if with_variant else []) + CSV_HEADER.split(",")
    if header != expected:
        raise ValueError(f"{path} has an unexpected header: {lines[0]}")
    records = []
    for ln in lines[1:]:
        parts = ln.split(",")
        variant = parts.pop(0) if with_variant else ""
        variation, seed, episodes, successes, _rate = parts
        records.append(
            EvalRecord(variation, int(seed), int(episodes), int(successes), variant)
        )
    return records


def aggregate_records(records: list[EvalRecord]) -> list[EvalRecord]:
    """Summary rows: episodes and successes summed across seeds.

    One row per (variant, variation) that has at least two per-seed
    rows, marked with seed = AGGREGATE_SEED.
    """
    groups: dict[tuple[str, str], list[EvalRecord]] = {}
    for r in records:
        if r.seed == AGGREGATE_SEED:
            continue
        groups.setdefault((r.variant, r.variation), []).append(r)
    out = []
    for (variant, variation), rows in groups.items():
        if len(rows) < 2:
            continue
        out.append(
            EvalRecord(
                variation,
                AGGREGATE_SEED,
                sum(r.episodes for r in rows),
                sum(r.successes for r in rows),
                variant,
            )
        )
    return out


def summarize(records: list[EvalRecord]) -> dict[tuple[str, str], float]:
    """(variant, variation) -> mean success rate percent across seeds."""
    groups: dict[tuple[str, str], list[float]] = {}
    for r in records:
        if r.seed == AGGREGATE_SEED:
            continue
        groups.setdefault((r.variant, r.variation), []).append(r.rate_percent)
    return {key: sum(vals) / len(vals) for key, vals in groups.items()}


def svg_bar_chart(
    path: str,
    records: list[EvalRecord],
    title: str = "Success rate by variation",
) -> None:
    """Grouped bar chart: one group per variation, one bar per series.

    Series are variants when present, otherwise seeds.  Mean rates per
    series/variation pair are drawn on a 0-100 percent axis.
    """
    by_series: dict[str, dict[str, list[float]]] = {}
    variations: list[str] = []
    for r in records:
        if r.seed == AGGREGATE_SEED:
            continue
        series = r.variant if r.variant else f"seed {r.seed}"
        by_series.setdefault(series, {}).setdefault(r.variation, []).append(r.rate_percent)
        if r.variation not in variations:
            variations.append(r.variation)
    series_names = list(by_series)

    bar_w = 34
    gap = 14
    group_w = len(series_names) * bar_w + gap * 2
    margin_l, margin_r, margin_t, margin_b = 70, 30, 50, 70
    plot_h = 260
    width = margin_l + margin_r + group_w * len(variations)
    height = margin_t + plot_h + margin_b

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16">{title}</text>',
    ]
    for tick in range(0, 101, 20):
        y = margin_t + plot_h * (1 - tick / 100)
        parts.append(
            f'<line x1="{margin_l}" y1="{y:.1f}" x2="{width - margin_r}" y2="{y:.1f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{margin_l - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{tick}</text>'
        )
    parts.append(
        f'<text x="16" y="{margin_t + plot_h / 2:.1f}" font-size="12" '
        f'transform="rotate(-90 16 {margin_t + plot_h / 2:.1f})" '
        f'text-anchor="middle">success rate (%)</text>'
    )

    for gi, variation in enumerate(variations):
        gx = margin_l + gi * group_w + gap
        for si, series in enumerate(series_names):
            vals = by_series[series].get(variation)
            if not vals:
                continue
            rate = sum(vals) / len(vals)
            bh = plot_h * rate / 100
            x = gx + si * bar_w
            y = margin_t + plot_h - bh
            color = _BAR_COLORS[si % len(_BAR_COLORS)]
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w - 4}" height="{bh:.1f}" '
                f'fill="{color}"/>'
            )
            parts.append(
                f'<text x="{x + (bar_w - 4) / 2:.1f}" y="{y - 4:.1f}" text-anchor="middle" '
                f'font-size="10">{rate:.0f}</text>'
            )
        label_x = margin_l + gi * group_w + group_w / 2
        parts.append(
            f'<text x="{label_x:.1f}" y="{margin_t + plot_h + 18}" text-anchor="middle" '
            f'font-size="11">{variation}</text>'
        )

    legend_y = margin_t + plot_h + 40
    lx = margin_l
    for si, series in enumerate(series_names):
        color = _BAR_COLORS[si % len(_BAR_COLORS)]
        parts.append(f'<rect x="{lx}" y="{legend_y - 10}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{lx + 16}" y="{legend_y}" font-size="11">{series}</text>')
        lx += 16 + 8 * len(series) + 30
    parts.append("</svg>")
    _atomic_write_text(path, "\n".join(parts) + "\n")
