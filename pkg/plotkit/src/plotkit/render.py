"""Rendering engine and the ``render`` entry point.

Determinism is the design constraint: a fixed style block, a fixed SVG id
salt, and no timestamp metadata, so rendering the same CSV twice produces
byte-identical images. Each input table must begin with the producing
tool's provenance comment; its configuration hash is drawn into the
corner of every figure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("svg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .spec import FigureSpec, PlotSpecError, load_specs  # noqa: E402


class RenderError(Exception):
    """Input data cannot be rendered as specified."""


_STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.grid": True,
    "grid.alpha": 0.25,
    "grid.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "svg.hashsalt": "plotkit",
}

_PALETTE = ("#4878a8", "#e49444", "#5ba053", "#c7566f", "#8a7bb5", "#847c59")
_QUALITY_COLORS = {
    "Reliable": "#5ba053",
    "Noisy": "#e49444",
    "Unreliable": "#c7566f",
}


def _load_table(path: Path):
    """(config hash, fieldnames, data rows) of a report CSV."""
    if not path.exists():
        raise RenderError("input table not found: %s" % path)
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("#"):
            raise RenderError(
                "%s has no provenance comment on its first line" % path
            )
        sha = None
        for token in first[1:].split():
            key, eq, value = token.partition("=")
            if eq and key == "config":
                sha = value
        if not sha:
            raise RenderError(
                "%s: provenance comment carries no config hash" % path
            )
        reader = csv.DictReader(fh)
        fieldnames = tuple(reader.fieldnames or ())
        rows = list(reader)
    if not rows:
        raise RenderError("%s has no data rows" % path)
    return sha, fieldnames, rows


def _check_columns(spec: FigureSpec, fieldnames):
    wanted = {spec.x, spec.value}
    wanted.update(spec.where)
    for col in (spec.series, spec.facet_row, spec.facet_col):
        if col:
            wanted.add(col)
    if spec.kind == "signal-overlay":
        wanted.add(spec.quality)
    for col in sorted(wanted):
        if col not in fieldnames:
            raise RenderError(
                "figure %r: column %r not in %s (columns: %s)"
                % (spec.name, col, spec.input, ", ".join(fieldnames))
            )


def _number(spec: FigureSpec, row: dict, column: str) -> float:
    try:
        return float(row[column])
    except ValueError:
        raise RenderError(
            "figure %r: column %r holds non-numeric value %r"
            % (spec.name, column, row[column])
        ) from None


def _uniq(values):
    seen = []
    for v in values:
        if v not in seen:
            seen.append(v)
    return seen


def _finish(fig, spec: FigureSpec, sha: str) -> Path:
    fig.text(0.995, 0.005, "config %s" % sha, ha="right", va="bottom",
             fontsize=6, color="#777777", family="monospace")
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output, format="svg", metadata={"Date": None})
    plt.close(fig)
    return spec.output


def _grouped_bar(spec: FigureSpec, rows, sha: str) -> Path:
    groups = _uniq(r[spec.x] for r in rows)
    series = _uniq(r[spec.series] for r in rows) if spec.series else [None]
    row_vals = (_uniq(r[spec.facet_row] for r in rows)
                if spec.facet_row else [None])
    col_vals = (_uniq(r[spec.facet_col] for r in rows)
                if spec.facet_col else [None])

    fig, axes = plt.subplots(
        len(row_vals), len(col_vals),
        figsize=(max(3.4, 1.0 + 2.4 * len(col_vals)),
                 1.4 + 2.2 * len(row_vals)),
        squeeze=False, sharey=True,
    )
    width = 0.8 / len(series)
    for i, rv in enumerate(row_vals):
        for j, cv in enumerate(col_vals):
            ax = axes[i][j]
            cell = [
                r for r in rows
                if (rv is None or r[spec.facet_row] == rv)
                and (cv is None or r[spec.facet_col] == cv)
            ]
            for k, s in enumerate(series):
                sub = [r for r in cell
                       if s is None or r[spec.series] == s]
                positions, heights = [], []
                for g_idx, g in enumerate(groups):
                    vals = [_number(spec, r, spec.value)
                            for r in sub if r[spec.x] == g]
                    if vals:
                        positions.append(
                            g_idx - 0.4 + width * (k + 0.5)
                        )
                        heights.append(sum(vals) / len(vals))
                ax.bar(positions, heights, width=width * 0.92,
                       color=_PALETTE[k % len(_PALETTE)],
                       label=None if s is None else str(s))
            ax.set_xticks(range(len(groups)))
            ax.set_xticklabels(groups)
            parts = []
            if rv is not None:
                parts.append("%s=%s" % (spec.facet_row, rv))
            if cv is not None:
                parts.append("%s=%s" % (spec.facet_col, cv))
            if parts:
                ax.set_title(", ".join(parts))
            if i == len(row_vals) - 1:
                ax.set_xlabel(spec.xlabel or spec.x)
            if j == 0:
                ax.set_ylabel(spec.ylabel or spec.value)
    if spec.series:
        axes[0][0].legend()
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout(rect=(0, 0.03, 1, 1))
    return _finish(fig, spec, sha)


def _line(spec: FigureSpec, rows, sha: str) -> Path:
    series = _uniq(r[spec.series] for r in rows) if spec.series else [None]
    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    for k, s in enumerate(series):
        sub = [r for r in rows if s is None or r[spec.series] == s]
        pts = sorted(
            ((_number(spec, r, spec.x), _number(spec, r, spec.value))
             for r in sub),
            key=lambda p: p[0],
        )
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                color=_PALETTE[k % len(_PALETTE)], linewidth=1.4,
                label=None if s is None else str(s))
    ax.set_xlabel(spec.xlabel or spec.x)
    ax.set_ylabel(spec.ylabel or spec.value)
    if spec.series:
        ax.legend()
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout(rect=(0, 0.03, 1, 1))
    return _finish(fig, spec, sha)


def _signal_overlay(spec: FigureSpec, rows, sha: str) -> Path:
    panel_col = spec.series or "modality"
    panels = _uniq(r[panel_col] for r in rows)
    fig, axes = plt.subplots(
        len(panels), 1, figsize=(7.0, 1.0 + 1.5 * len(panels)),
        squeeze=False, sharex=True,
    )
    seen_quality = []
    for i, panel in enumerate(panels):
        ax = axes[i][0]
        sub = sorted(
            (r for r in rows if r[panel_col] == panel),
            key=lambda r: _number(spec, r, spec.x),
        )
        # contiguous runs of equal quality become separately colored segments
        start = 0
        for j in range(1, len(sub) + 1):
            if j == len(sub) or sub[j][spec.quality] != sub[start][spec.quality]:
                run = sub[start:j]
                quality = run[0][spec.quality]
                color = _QUALITY_COLORS.get(quality, "#888888")
                ax.plot(
                    [_number(spec, r, spec.x) for r in run],
                    [_number(spec, r, spec.value) for r in run],
                    color=color, linewidth=0.7,
                    label=quality if quality not in seen_quality else None,
                )
                if quality not in seen_quality:
                    seen_quality.append(quality)
                start = j
        ax.set_ylabel(panel)
        ax.grid(False)
    axes[-1][0].set_xlabel(spec.xlabel or spec.x)
    handles, labels = [], []
    for row_axes in axes:
        h, l = row_axes[0].get_legend_handles_labels()
        handles += h
        labels += l
    if labels:
        fig.legend(handles, labels, loc="upper right", ncol=len(labels))
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout(rect=(0, 0.03, 1, 0.93))
    return _finish(fig, spec, sha)


_RENDERERS = {
    "grouped-bar": _grouped_bar,
    "line": _line,
    "signal-overlay": _signal_overlay,
}


def render(spec: FigureSpec) -> Path:
    """Render one figure; returns the written image path."""
    sha, fieldnames, rows = _load_table(spec.input)
    _check_columns(spec, fieldnames)
    for column, wanted in sorted(spec.where.items()):
        rows = [r for r in rows if r[column] == wanted]
    if not rows:
        raise RenderError(
            "figure %r: no data rows left after filtering %s"
            % (spec.name, spec.where)
        )
    with matplotlib.rc_context(_STYLE):
        return _RENDERERS[spec.kind](spec, rows, sha)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise PlotSpecError(message)


def main(argv=None) -> int:
    parser = _Parser(
        prog="render",
        description="Render edgehealth report CSVs into SVG figures.",
    )
    from . import __version__

    parser.add_argument("--spec", required=True, metavar="PATH",
                        help="TOML file listing the figures to draw")
    parser.add_argument("--version", action="version",
                        version="plotkit %s" % __version__)
    try:
        args = parser.parse_args(argv)
        specs = load_specs(args.spec)
    except PlotSpecError as exc:
        print("render: error: %s" % exc, file=sys.stderr)
        return 1
    for spec in specs:
        try:
            out = render(spec)
        except (PlotSpecError, RenderError) as exc:
            print("render: error: %s" % exc, file=sys.stderr)
            return 2
        print("%s -> %s" % (spec.name, out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
