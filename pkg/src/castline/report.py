"""Report rendering: aligned text tables, delimited files, and matplotlib figures.

Every report is written in three forms side by side: a human-readable table,
a TSV for downstream tooling, and a PNG figure. Figure output is deterministic
(fixed backend, fixed metadata) so report trees can be compared byte-wise.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .assigner import SweepPoint  # noqa: E402
from .exemplars import StageYield  # noqa: E402
from .metrics import MetricsReport  # noqa: E402

_PNG_METADATA = {"Software": "castline"}

YIELD_STEPS = (
    "VAD detection",
    "Audio-visual speaker detection",
    "Visual character classification",
    "Audio filtering",
)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _save(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="png", metadata=_PNG_METADATA)
    plt.close(fig)
    os.replace(tmp, path)


def write_tsv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    lines = ["\t".join(header)]
    lines.extend("\t".join(row) for row in rows)
    _write_text(path, "".join(line + "\n" for line in lines))


def render_yield_table(yields: StageYield) -> str:
    counts = (yields.vad, yields.av_gate, yields.visual, yields.audio_filter)
    pcts = yields.percentages()
    width = max(len(s) for s in YIELD_STEPS)
    lines = [f"{'Step':<{width}}  {'# of exemplars':>14}  {'% of total':>10}"]
    for step, count, pct in zip(YIELD_STEPS, counts, pcts):
        lines.append(f"{step:<{width}}  {count:>14d}  {pct:>10.1f}")
    return "\n".join(lines) + "\n"


def write_yield_report(outdir: Path, yields: StageYield) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    _write_text(outdir / "yield.txt", render_yield_table(yields))
    counts = (yields.vad, yields.av_gate, yields.visual, yields.audio_filter)
    pcts = yields.percentages()
    write_tsv(
        outdir / "yield.tsv",
        ("step", "exemplars", "pct_of_total"),
        [
            (step, str(count), f"{pct:.1f}")
            for step, count, pct in zip(YIELD_STEPS, counts, pcts)
        ],
    )
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(4), counts, color="#4878a8")
    ax.set_xticks(range(4))
    ax.set_xticklabels(["VAD", "AV gate", "Visual", "Audio filter"])
    ax.set_ylabel("surviving segments")
    ax.set_title("Exemplar yield per stage-1 step")
    for x, (count, pct) in enumerate(zip(counts, pcts)):
        ax.annotate(f"{count}\n{pct:.1f}%", (x, count), ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    _save(fig, outdir / "yield.png")


def render_metrics_table(reports: Sequence[MetricsReport]) -> str:
    """Aligned table with DER and accuracy in percent, P/R as fractions."""
    width = max(len("Scope"), max((len(r.scope) for r in reports), default=5))
    header = f"{'Scope':<{width}}  {'DER':>6}  {'DER(O)':>6}  {'Acc':>6}  {'Ppc':>6}  {'Rpc':>6}"
    lines = [header]
    for r in reports:
        der_o = f"{100 * r.der_overlap:>6.1f}" if r.der_overlap is not None else f"{'-':>6}"
        lines.append(
            f"{r.scope:<{width}}  {100 * r.der:>6.1f}  {der_o}  "
            f"{100 * r.accuracy:>6.1f}  {r.ppc:>6.3f}  {r.rpc:>6.3f}"
        )
    wer_lines = [
        f"WER {r.scope}: {100 * r.wer:.1f}%" for r in reports if r.wer is not None
    ]
    return "\n".join(lines + wer_lines) + "\n"


def write_metrics_report(outdir: Path, reports: Sequence[MetricsReport]) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    _write_text(outdir / "report.txt", render_metrics_table(reports))
    write_tsv(
        outdir / "report.tsv",
        ("scope", "der", "der_overlap", "accuracy", "ppc", "rpc", "wer"),
        [
            (
                r.scope,
                f"{r.der:.6f}",
                "" if r.der_overlap is None else f"{r.der_overlap:.6f}",
                f"{r.accuracy:.6f}",
                f"{r.ppc:.6f}",
                f"{r.rpc:.6f}",
                "" if r.wer is None else f"{r.wer:.6f}",
            )
            for r in reports
        ],
    )
    combined = next((r for r in reports if r.scope == "series"), reports[-1])
    write_tsv(
        outdir / "per_character.tsv",
        ("character", "precision", "recall", "support"),
        [
            (
                row.character_id,
                "" if row.precision is None else f"{row.precision:.6f}",
                f"{row.recall:.6f}",
                str(row.support),
            )
            for row in combined.per_character
        ],
    )
    if combined.per_character:
        rows = combined.per_character
        fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(rows)), 4))
        xs = range(len(rows))
        ax.bar(
            [x - 0.2 for x in xs],
            [row.precision if row.precision is not None else 0.0 for row in rows],
            width=0.4,
            label="precision",
            color="#4878a8",
        )
        ax.bar([x + 0.2 for x in xs], [row.recall for row in rows], width=0.4,
               label="recall", color="#e1812c")
        ax.set_xticks(list(xs))
        ax.set_xticklabels([row.character_id for row in rows], rotation=45, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_title(f"Per-character precision/recall ({combined.scope})")
        ax.legend()
        fig.tight_layout()
        _save(fig, outdir / "per_character.png")


def write_sweep_report(
    outdir: Path,
    points: Sequence[SweepPoint],
    oracle_all: Optional[tuple[float, float]] = None,
    oracle_long: Optional[tuple[float, float]] = None,
) -> None:
    """Curve file plus the two-panel precision vs POCS figure with oracle marks."""
    outdir.mkdir(parents=True, exist_ok=True)
    write_tsv(
        outdir / "curves.tsv",
        ("d", "pocs", "precision", "segment_class"),
        [
            (f"{p.d:.6f}", f"{p.pocs:.6f}", f"{p.precision:.6f}", p.segment_class)
            for p in points
        ],
    )
    classes = [c for c in ("all", "long") if any(p.segment_class == c for p in points)]
    fig, axes = plt.subplots(1, max(len(classes), 1), figsize=(5.5 * max(len(classes), 1), 4.2))
    if len(classes) <= 1:
        axes = [axes]
    oracle = {"all": oracle_all, "long": oracle_long}
    for ax, segment_class in zip(axes, classes):
        series = [p for p in points if p.segment_class == segment_class]
        ax.plot([p.pocs for p in series], [p.precision for p in series],
                marker=".", color="#4878a8", label="varying d")
        mark = oracle.get(segment_class)
        if mark is not None:
            ax.plot([mark[0]], [mark[1]], marker="x", markersize=10,
                    color="#d1495b", linestyle="none", label="oracle")
        ax.set_xlabel("POCS")
        ax.set_ylabel("precision")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(0, 1.05)
        title = "all segments" if segment_class == "all" else "long segments"
        ax.set_title(f"Precision vs POCS ({title})")
        ax.legend(loc="lower left")
    fig.tight_layout()
    _save(fig, outdir / "precision_pocs.png")
