"""Figure rendering for edgehealth report tables.

The package reads the CSV tables a finished run leaves under ``report/``
and turns them into SVG figures. It talks to the producing tool only
through those files: the first line of each table is a provenance comment
(tool version, configuration hash, seed), and the hash ends up in every
figure caption so an image can always be traced back to the run that made
it.
"""

__version__ = "0.1.0"

from .spec import FigureSpec, PlotSpecError, load_specs  # noqa: F401
from .render import render, RenderError  # noqa: F401
