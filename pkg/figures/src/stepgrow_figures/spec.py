"""Figure descriptions and their input requirements."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from stepgrow_figures.traces import Trace, TraceFormatError, read_trace

KINDS = ("gd-loss-eta", "gd-growth", "sgd-sqrt")


@dataclass
class FigureSpec:
    """One figure to render.

    ``kind`` fixes which trace columns must be present: gd-loss-eta needs
    loss and step-size columns of a single GD trace, gd-growth needs the S
    column plus a run summary carrying the crossing index, sgd-sqrt needs
    one or more loss traces. Inputs are validated before any rendering.
    """

    kind: str
    inputs: list
    output: Path
    summary: Path | None = None
    fit_start: int | None = None
    fit_offset: int = 100
    title: str | None = None
    labels: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise ValueError("at least one input trace is required")
        if self.kind != "sgd-sqrt" and len(self.inputs) != 1:
            raise ValueError(f"{self.kind} takes exactly one input trace")
        self.inputs = [Path(p) for p in self.inputs]
        self.output = Path(self.output)
        if self.summary is not None:
            self.summary = Path(self.summary)

    def load_traces(self) -> list[Trace]:
        traces = [read_trace(p) for p in self.inputs]
        if self.kind == "gd-growth" and not traces[0].has_mass:
            raise TraceFormatError(
                f"{self.inputs[0]}: S column is empty; gd-growth needs a "
                "schedule-GD trace")
        return traces
