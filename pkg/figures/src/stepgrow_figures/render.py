"""Render the three figure kinds from harness CSV traces.

Output format follows the file extension; the default everywhere is SVG so
figures drop into reports without rasterization.
"""

from __future__ import annotations

import argparse
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from stepgrow_figures.regression import TailFit, fit_growth_tail
from stepgrow_figures.spec import FigureSpec
from stepgrow_figures.traces import (
    TraceFormatError,
    mean_loss_at_matched_t,
    read_summary,
)


def _new_axes(title):
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _render_gd_loss_eta(spec: FigureSpec) -> None:
    trace = spec.load_traces()[0]
    fig, ax = _new_axes(spec.title or "loss and inverse step size")
    ax.semilogy(trace.t, trace.loss, label="loss", color="tab:blue")
    ax.semilogy(trace.t, 1.0 / trace.eta, label="1 / step size",
                color="tab:orange", linestyle="--")
    ax.set_xlabel("iteration")
    ax.legend()
    fig.savefig(spec.output)
    plt.close(fig)


def _resolve_fit_start(spec: FigureSpec) -> int:
    if spec.fit_start is not None:
        return int(spec.fit_start)
    if spec.summary is None:
        raise TraceFormatError(
            "gd-growth needs --summary (for the crossing index) or --fit-start")
    pairs = read_summary(spec.summary)
    if "tau2" not in pairs or pairs["tau2"] == "":
        raise TraceFormatError(f"{spec.summary}: summary has no tau2 entry")
    offset = int(pairs.get("tail_offset", spec.fit_offset) or spec.fit_offset)
    return int(pairs["tau2"]) + offset


def _render_gd_growth(spec: FigureSpec) -> TailFit:
    trace = spec.load_traces()[0]
    start = _resolve_fit_start(spec)
    fit = fit_growth_tail(trace.t, trace.mass, start)
    fig, ax = _new_axes(spec.title or "growth of the schedule mass")
    x = np.cbrt(trace.t.astype(np.float64))
    ax.plot(x, np.log(trace.mass), label="ln S", color="tab:blue")
    window = trace.t >= start
    ax.plot(x[window], fit.slope * x[window] + fit.intercept,
            label=f"tail fit: slope={fit.slope:.4f}, R^2={fit.r2:.5f}",
            color="tab:red", linestyle="--")
    ax.set_xlabel("iteration^(1/3)")
    ax.set_ylabel("ln S")
    ax.legend()
    fig.savefig(spec.output)
    plt.close(fig)
    print(f"tail_fit_start={fit.start}")
    print(f"tail_fit_points={fit.points}")
    print(f"tail_fit_slope={fit.slope!r}")
    print(f"tail_fit_r2={fit.r2!r}")
    return fit


def _render_sgd_sqrt(spec: FigureSpec) -> None:
    traces = spec.load_traces()
    t, mean_loss = mean_loss_at_matched_t(traces)
    fig, ax = _new_axes(spec.title or f"mean loss over {len(traces)} runs")
    ax.semilogy(np.sqrt(t.astype(np.float64)), mean_loss, color="tab:blue",
                label="seed-averaged loss")
    ax.set_xlabel("sqrt(iteration)")
    ax.set_ylabel("loss")
    ax.legend()
    fig.savefig(spec.output)
    plt.close(fig)


def render(spec: FigureSpec):
    """Write the figure; returns the tail fit for gd-growth, else None."""
    if spec.kind == "gd-loss-eta":
        return _render_gd_loss_eta(spec)
    if spec.kind == "gd-growth":
        return _render_gd_growth(spec)
    return _render_sgd_sqrt(spec)


def _build_parser(fixed_kind: str | None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="render a figure from stepgrow trace CSVs")
    if fixed_kind is None:
        parser.add_argument("--kind", required=True, choices=list(
            ("gd-loss-eta", "gd-growth", "sgd-sqrt")))
    parser.add_argument("--trace", action="append", required=True,
                        dest="traces", help="input trace CSV (repeatable)")
    parser.add_argument("--output", required=True, help="image path (.svg/.png/.pdf)")
    parser.add_argument("--summary", help="run summary file (gd-growth)")
    parser.add_argument("--fit-start", type=int, dest="fit_start",
                        help="explicit tail-fit start iteration (gd-growth)")
    parser.add_argument("--fit-offset", type=int, dest="fit_offset", default=100,
                        help="offset added to the summary's tau2 (default 100)")
    parser.add_argument("--title")
    return parser


def _main_with_kind(argv, fixed_kind: str | None) -> int:
    args = _build_parser(fixed_kind).parse_args(argv)
    kind = fixed_kind if fixed_kind is not None else args.kind
    try:
        spec = FigureSpec(kind=kind, inputs=args.traces, output=args.output,
                          summary=args.summary, fit_start=args.fit_start,
                          fit_offset=args.fit_offset, title=args.title)
        render(spec)
    except (TraceFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.output}")
    return 0


def main(argv=None) -> int:
    return _main_with_kind(argv, None)


def main_gd_loss_eta(argv=None) -> int:
    return _main_with_kind(argv, "gd-loss-eta")


def main_gd_growth(argv=None) -> int:
    return _main_with_kind(argv, "gd-growth")


def main_sgd_sqrt(argv=None) -> int:
    return _main_with_kind(argv, "sgd-sqrt")


if __name__ == "__main__":
    sys.exit(main())
