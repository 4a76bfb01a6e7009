"""Figure-reproduction gate: render the experiment figures from real harness
output, and check this package's tail regression against the harness's own.

The harness is driven through its CLI and file formats only.
"""

import subprocess
import sys

import pytest

from stepgrow_figures.render import render
from stepgrow_figures.spec import FigureSpec
from stepgrow_figures.traces import read_summary


def run_harness(*argv):
    proc = subprocess.run([sys.executable, "-m", "stepgrow.cli", *argv],
                          capture_output=True, text=True)
    assert proc.returncode == 0, f"harness failed: {proc.stderr}"
    return proc


@pytest.fixture(scope="module")
def harness_outputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("harness")
    gd_data = root / "gd_data"
    sgd_data = root / "sgd_data"
    gd_out = root / "gd_run"
    sgd_out = root / "sgd_run"
    run_harness("gen-data", "--dim", "80", "--count", "1500", "--margin",
                "0.3", "--seed", "7", "--out", str(gd_data))
    run_harness("run-gd", "--data", str(gd_data / "dataset.csv"),
                "--steps", "5000", "--out", str(gd_out))
    run_harness("gen-data", "--dim", "10", "--count", "5000", "--margin",
                "0.2", "--seed", "1", "--out", str(sgd_data))
    run_harness("montecarlo", "--data", str(sgd_data / "dataset.csv"),
                "--epsilon", "0.01", "--seeds", ",".join(str(s) for s in range(10)),
                "--out", str(sgd_out))
    return {"gd_trace": gd_out / "gd_trace.csv",
            "gd_summary": gd_out / "gd_summary.txt",
            "sgd_traces": [sgd_out / f"sgd_trace_{s}.csv" for s in range(10)],
            "root": root}


def test_a10_figures_from_harness_outputs(harness_outputs, capsys):
    root = harness_outputs["root"]

    out_loss = root / "gd_loss_eta.svg"
    render(FigureSpec(kind="gd-loss-eta", inputs=[harness_outputs["gd_trace"]],
                      output=out_loss))
    assert out_loss.stat().st_size > 0

    out_growth = root / "gd_growth.svg"
    fit = render(FigureSpec(kind="gd-growth",
                            inputs=[harness_outputs["gd_trace"]],
                            output=out_growth,
                            summary=harness_outputs["gd_summary"]))
    assert out_growth.stat().st_size > 0

    out_sgd = root / "sgd_sqrt.svg"
    render(FigureSpec(kind="sgd-sqrt", inputs=harness_outputs["sgd_traces"],
                      output=out_sgd))
    assert out_sgd.stat().st_size > 0

    # Same CSV, independently computed regression must agree with the
    # harness's reported fit to 1e-9.
    pairs = read_summary(harness_outputs["gd_summary"])
    harness_slope = float(pairs["tail_fit_slope"])
    harness_r2 = float(pairs["tail_fit_r2"])
    assert fit.start == int(pairs["tail_fit_start"])
    assert abs(fit.slope - harness_slope) <= 1e-9
    assert abs(fit.r2 - harness_r2) <= 1e-9
    assert fit.r2 >= 0.99
    with capsys.disabled():
        print(f"[A10] PASS - three figures rendered; slope {fit.slope!r} vs "
              f"harness {harness_slope!r}, R^2 {fit.r2!r} vs {harness_r2!r}",
              flush=True)
