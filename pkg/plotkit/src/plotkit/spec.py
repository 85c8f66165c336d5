"""Figure specifications and their TOML loader.

One spec file describes any number of figures::

    [render]
    input_dir = "out/report"     # base for relative input paths
    output_dir = "figures"       # base for relative output paths

    [[figure]]
    name = "fig13"
    kind = "grouped-bar"         # or "line" or "signal-overlay"
    input = "fig13.csv"
    x = "scenario"
    value = "accuracy"
    facet_col = "mode"

Unknown keys are rejected by name so typos cannot silently drop styling.
Column existence is checked later, at render time, against the actual CSV
header.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("grouped-bar", "line", "signal-overlay")


class PlotSpecError(Exception):
    """A figure specification is missing, malformed, or contradictory."""


@dataclass(frozen=True)
class FigureSpec:
    """Everything needed to turn one CSV into one image."""

    name: str
    kind: str
    input: Path
    output: Path
    x: str
    value: str
    series: str | None = None
    facet_row: str | None = None
    facet_col: str | None = None
    quality: str = "quality"
    xlabel: str | None = None
    ylabel: str | None = None
    title: str | None = None
    where: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotSpecError(
                "figure %r: unknown kind %r; valid kinds: %s"
                % (self.name, self.kind, ", ".join(KINDS))
            )
        if self.kind != "grouped-bar" and (self.facet_row or self.facet_col):
            raise PlotSpecError(
                "figure %r: facets are only supported for grouped-bar"
                % self.name
            )


_RENDER_KEYS = {"input_dir", "output_dir"}
_FIGURE_KEYS = {
    "name", "kind", "input", "output", "x", "value", "series",
    "facet_row", "facet_col", "quality", "xlabel", "ylabel", "title",
    "where",
}
_REQUIRED = ("name", "kind", "input", "x", "value")


def _reject_unknown(table: dict, allowed: set, context: str):
    for key in table:
        if key not in allowed:
            raise PlotSpecError("%s: unknown key %r" % (context, key))


def _string(table: dict, key: str, context: str, required: bool = False):
    value = table.get(key)
    if value is None:
        if required:
            raise PlotSpecError("%s: missing required key %r" % (context, key))
        return None
    if not isinstance(value, str):
        raise PlotSpecError("%s: %r must be a string" % (context, key))
    return value


def load_specs(path) -> list:
    """Parse a spec file into a list of :class:`FigureSpec`."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise PlotSpecError("spec file not found: %s" % path) from None
    except tomllib.TOMLDecodeError as exc:
        raise PlotSpecError("%s: %s" % (path, exc)) from None

    _reject_unknown(raw, {"render", "figure"}, str(path))
    render_opts = raw.get("render", {})
    if not isinstance(render_opts, dict):
        raise PlotSpecError("%s: [render] must be a table" % path)
    _reject_unknown(render_opts, _RENDER_KEYS, "%s: [render]" % path)
    input_dir = Path(_string(render_opts, "input_dir", "[render]") or ".")
    output_dir = Path(_string(render_opts, "output_dir", "[render]") or ".")
    if not input_dir.is_absolute():
        input_dir = path.parent / input_dir
    if not output_dir.is_absolute():
        output_dir = path.parent / output_dir

    figures = raw.get("figure", [])
    if not isinstance(figures, list) or not figures:
        raise PlotSpecError("%s: needs at least one [[figure]]" % path)

    specs = []
    seen = set()
    for i, table in enumerate(figures):
        context = "%s: figure #%d" % (path, i + 1)
        if not isinstance(table, dict):
            raise PlotSpecError("%s must be a table" % context)
        _reject_unknown(table, _FIGURE_KEYS, context)
        for key in _REQUIRED:
            _string(table, key, context, required=True)
        name = table["name"]
        if name in seen:
            raise PlotSpecError("%s: duplicate figure name %r" % (path, name))
        seen.add(name)

        where = table.get("where", {})
        if not isinstance(where, dict) or not all(
            isinstance(v, str) for v in where.values()
        ):
            raise PlotSpecError(
                "%s: where must be a table of column = value strings" % context
            )

        input_path = Path(table["input"])
        if not input_path.is_absolute():
            input_path = input_dir / input_path
        output = Path(_string(table, "output", context) or (name + ".svg"))
        if not output.is_absolute():
            output = output_dir / output

        specs.append(FigureSpec(
            name=name,
            kind=table["kind"],
            input=input_path,
            output=output,
            x=table["x"],
            value=table["value"],
            series=_string(table, "series", context),
            facet_row=_string(table, "facet_row", context),
            facet_col=_string(table, "facet_col", context),
            quality=_string(table, "quality", context) or "quality",
            xlabel=_string(table, "xlabel", context),
            ylabel=_string(table, "ylabel", context),
            title=_string(table, "title", context),
            where=dict(where),
        ))
    return specs
