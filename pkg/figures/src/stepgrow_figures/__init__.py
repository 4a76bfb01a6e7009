"""Static figures from stepgrow trace CSVs.

This package is deliberately independent of the optimizer library: it reads
the published CSV schemas and run summaries, and recomputes everything it
plots (including the growth-rate regression) on its own.
"""

from stepgrow_figures.spec import FigureSpec
from stepgrow_figures.render import render

__all__ = ["FigureSpec", "render"]
