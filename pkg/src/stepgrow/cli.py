"""Experiment harness: dataset generation, runs, sweeps, and verification.

One subcommand per experiment plus ``verify``. Every subcommand accepts a
JSON config file (``--config``) whose keys mirror its flags; explicit flags
override config values, unknown config keys are rejected, and the effective
parameter set can be written back out with ``--dump-config`` so a run is
reproducible from one artifact. Summaries are printed as human-readable text
followed by machine-readable ``key=value`` lines.

Exit codes: 0 success, 1 verification failure (including any certified
inequality failing mid-run), 2 configuration error, 3 IO error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from stepgrow import data_gen, loss_core, optimizers, schedule
from stepgrow.errors import (
    CsvFormatError,
    DivergenceError,
    NotSeparableError,
    TheoremViolationError,
)

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_CONFIG = 2
EXIT_IO = 3

_ENV_OUT = "STEPGROW_OUT"


class ConfigError(Exception):
    pass


# Effective defaults per subcommand; argparse flags default to None so that
# an explicitly passed flag can be told apart from an omitted one when
# merging with a config file.
_DEFAULTS: dict[str, dict] = {
    "gen-data": {"dim": 80, "count": 1500, "margin": 0.1, "seed": 7,
                 "name": "dataset", "out": None},
    "run-gd": {"data": None, "cert": None, "gamma": None, "steps": 5000,
               "tail_offset": 100, "schedule_out": False, "out": None},
    "run-gd-const": {"data": None, "eta": None, "steps": 2000, "out": None},
    "run-sgd": {"data": None, "cert": None, "epsilon": 0.01, "seed": 0,
                "cap": None, "audit": True, "record_every": 1, "out": None},
    "run-block": {"data": None, "cert": None, "gamma": None, "eps0": 0.4,
                  "delta": 0.2, "target_eps": 0.1, "seed": 0,
                  "record_every": 1000, "out": None},
    "montecarlo": {"data": None, "cert": None, "epsilon": 0.01,
                   "seeds": "0,1,2,3,4,5,6,7,8,9", "cap": None,
                   "audit": True, "record_every": 1, "deltas": "0.5",
                   "workers": 1, "out": None},
    "verify": {"data": None, "cert": None, "gamma": None, "draws": 20,
               "epsilon": 0.05, "out": None},
}


def _merge_config(command: str, args: argparse.Namespace) -> dict:
    known = _DEFAULTS[command]
    effective = dict(known)
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        unknown = sorted(set(loaded) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {unknown}")
        effective.update(loaded)
    for key in known:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            effective[key] = flag_value
    if effective.get("out") is None:
        effective["out"] = os.environ.get(_ENV_OUT, "out")
    if args.dump_config is not None:
        Path(args.dump_config).write_text(
            json.dumps(effective, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    return effective


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _emit_summary(out_path: Path, title: str, pairs: dict) -> None:
    lines = [title, ""]
    lines += [f"{key}={_fmt(value)}" for key, value in pairs.items()]
    text = "\n".join(lines) + "\n"
    out_path.write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(cfg: dict) -> loss_core.Dataset:
    if not cfg.get("data"):
        raise ConfigError("a dataset CSV is required (--data)")
    return data_gen.load_csv(cfg["data"])


def _load_certificate(cfg: dict):
    """Certificate from --cert, or the dataset's sidecar if one exists."""
    if cfg.get("cert"):
        return data_gen.load_certificate(cfg["cert"])
    if cfg.get("data"):
        sidecar = Path(cfg["data"]).with_suffix(".cert.json")
        if sidecar.exists():
            return data_gen.load_certificate(sidecar)
    return None


def _resolve_gamma(cfg: dict, data: loss_core.Dataset):
    """Margin for a run: explicit --gamma wins, else the certificate's.

    When the certificate supplies the margin it is re-verified against the
    data first.
    """
    cert = _load_certificate(cfg)
    if cfg.get("gamma") is not None:
        return float(cfg["gamma"]), cert
    if cert is None:
        raise ConfigError("no certificate found; pass --gamma or --cert")
    attained = data_gen.verify_margin(data, cert)
    if attained < cert.margin:
        raise TheoremViolationError(
            f"certificate margin {cert.margin} not attained by data "
            f"(min signed margin {attained})"
        )
    return cert.margin, cert


def cmd_gen_data(cfg: dict) -> int:
    try:
        spec = data_gen.GenSpec(dim=int(cfg["dim"]), count=int(cfg["count"]),
                                margin=float(cfg["margin"]), seed=int(cfg["seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    data = data_gen.generate_separable(spec)
    out = _outdir(cfg)
    csv_path = out / f"{cfg['name']}.csv"
    cert_path = out / f"{cfg['name']}.cert.json"
    data_gen.save_csv(data, csv_path)
    data_gen.save_certificate(data.certificate, cert_path)
    attained = data_gen.verify_margin(data, data.certificate)
    _emit_summary(out / f"{cfg['name']}_summary.txt",
                  f"generated {spec.count} x {spec.dim} separable dataset",
                  {"dataset": csv_path, "certificate": cert_path,
                   "margin": spec.margin, "min_signed_margin": attained,
                   "seed": spec.seed})
    return EXIT_OK


def cmd_run_gd(cfg: dict) -> int:
    data = _load_dataset(cfg)
    gamma, _ = _resolve_gamma(cfg, data)
    steps = int(cfg["steps"])
    result = optimizers.run_gd_schedule(data, gamma, np.zeros(data.dim), steps)
    out = _outdir(cfg)
    trace_path = out / "gd_trace.csv"
    result.trace.to_csv(trace_path)
    if cfg["schedule_out"]:
        result.schedule.to_csv(out / "gd_schedule.csv")

    pairs = {
        "trace": trace_path,
        "steps": steps,
        "gamma": gamma,
        "tau1": result.tau1,
        "tau2": result.tau2,
        "terminal_loss": float(result.trace.loss[-1]),
        "max_stability_product": float((result.trace.loss * result.trace.eta).max()),
        "violations": 0,
        "tail_offset": int(cfg["tail_offset"]),
    }
    tau2 = result.tau2
    fit_start = None if tau2 is None else tau2 + int(cfg["tail_offset"])
    if fit_start is not None and fit_start < steps - 1:
        slope, intercept, r2 = schedule.cube_root_fit(
            result.trace.t[fit_start:], np.log(result.trace.mass[fit_start:]))
        pairs.update(tail_fit_start=fit_start, tail_fit_slope=slope,
                     tail_fit_intercept=intercept, tail_fit_r2=r2)
    else:
        pairs.update(tail_fit_start=None, tail_fit_slope=None,
                     tail_fit_intercept=None, tail_fit_r2=None)
    _emit_summary(out / "gd_summary.txt",
                  f"scheduled GD: {steps} steps, gamma={gamma}", pairs)
    return EXIT_OK


def cmd_run_gd_const(cfg: dict) -> int:
    data = _load_dataset(cfg)
    if cfg.get("eta") is None:
        raise ConfigError("constant-step GD needs --eta")
    eta = float(cfg["eta"])
    steps = int(cfg["steps"])
    trace = optimizers.run_gd_constant(data, eta, np.zeros(data.dim), steps)
    out = _outdir(cfg)
    trace_path = out / f"gd_const_eta{eta:g}_trace.csv"
    trace.to_csv(trace_path)
    _emit_summary(out / f"gd_const_eta{eta:g}_summary.txt",
                  f"constant-step GD: {steps} steps, eta={eta}",
                  {"trace": trace_path, "steps": steps, "eta": eta,
                   "terminal_loss": float(trace.loss[-1])})
    return EXIT_OK


def _default_cap(n: int, gamma: float, epsilon: float) -> int:
    return math.ceil(10.0 * optimizers.hitting_time_bound(n, gamma, epsilon))


def cmd_run_sgd(cfg: dict) -> int:
    data = _load_dataset(cfg)
    gamma, cert = _resolve_gamma(cfg, data)
    if cert is not None and data.certificate is None:
        data = loss_core.Dataset(features=data.features, labels=data.labels,
                                 certificate=cert)
    epsilon = float(cfg["epsilon"])
    seed = int(cfg["seed"])
    cap = int(cfg["cap"]) if cfg.get("cap") is not None else _default_cap(
        data.n, gamma, epsilon)
    audit = bool(cfg["audit"]) and data.certificate is not None
    result = optimizers.run_adaptive_sgd(data, epsilon, seed=seed, cap=cap,
                                         audit=audit,
                                         record_every=int(cfg["record_every"]))
    out = _outdir(cfg)
    trace_path = out / f"sgd_trace_{seed}.csv"
    result.trace.to_csv(trace_path)
    pairs = {
        "trace": trace_path, "epsilon": epsilon, "seed": seed, "cap": cap,
        "tau": result.tau, "censored": result.censored,
        "bound_expectation": optimizers.hitting_time_bound(data.n, gamma, epsilon),
    }
    if result.audit is not None:
        pairs.update(comparator_loss=result.audit.comparator_loss,
                     comparator_loss_bound=result.audit.comparator_loss_bound,
                     worst_pathwise_slack=result.audit.worst_pathwise_slack)
    _emit_summary(out / f"sgd_summary_{seed}.txt",
                  f"adaptive SGD: eps={epsilon} seed={seed}", pairs)
    return EXIT_OK


def cmd_run_block(cfg: dict) -> int:
    data = _load_dataset(cfg)
    gamma, _ = _resolve_gamma(cfg, data)
    plan = optimizers.make_block_plan(n=data.n, gamma=gamma,
                                      eps0=float(cfg["eps0"]),
                                      delta=float(cfg["delta"]),
                                      target_eps=float(cfg["target_eps"]))
    seed = int(cfg["seed"])
    result = optimizers.run_block_sgd(data, plan, seed=seed,
                                      record_every=int(cfg["record_every"]))
    out = _outdir(cfg)
    trace_path = out / f"block_trace_{seed}.csv"
    result.trace.to_csv(trace_path)
    pairs = {
        "trace": trace_path, "seed": seed, "gamma": gamma,
        "eps0": plan.eps0, "delta": plan.delta, "target_eps": plan.target_eps,
        "activated_block": plan.activated, "activated_eps": plan.activated_eps,
        "total_steps": plan.total_steps,
        "block_lengths": " ".join(str(b.length) for b in plan.blocks),
        "block_starts": " ".join(str(b.start) for b in plan.blocks),
        "min_loss": result.min_loss,
        "post_activation_tau": result.post_tau,
        "censored": result.censored,
        "capped_post_steps": result.capped_post_steps(plan),
    }
    _emit_summary(out / f"block_summary_{seed}.txt",
                  f"block-adaptive SGD: seed={seed}", pairs)
    return EXIT_OK


def _mc_run(payload):
    data, epsilon, seed, cap, audit, record_every = payload
    result = optimizers.run_adaptive_sgd(data, epsilon, seed=seed, cap=cap,
                                         audit=audit, record_every=record_every)
    return seed, result


def cmd_montecarlo(cfg: dict) -> int:
    data = _load_dataset(cfg)
    gamma, cert = _resolve_gamma(cfg, data)
    if cert is not None and data.certificate is None:
        data = loss_core.Dataset(features=data.features, labels=data.labels,
                                 certificate=cert)
    epsilon = float(cfg["epsilon"])
    seeds = [int(s) for s in str(cfg["seeds"]).split(",") if s.strip()]
    if not seeds:
        raise ConfigError("seed list is empty")
    cap = int(cfg["cap"]) if cfg.get("cap") is not None else _default_cap(
        data.n, gamma, epsilon)
    audit = bool(cfg["audit"]) and data.certificate is not None
    record_every = int(cfg["record_every"])
    workers = int(cfg["workers"])

    payloads = [(data, epsilon, seed, cap, audit, record_every) for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_mc_run, payloads))
    else:
        outcomes = [_mc_run(p) for p in payloads]
    outcomes.sort(key=lambda item: item[0])

    out = _outdir(cfg)
    runs = []
    for seed, result in outcomes:
        result.trace.to_csv(out / f"sgd_trace_{seed}.csv")
        runs.append((seed, result.tau, result.censored, cap))
    stats = optimizers.HittingStats.from_runs(runs, epsilon=epsilon,
                                              n=data.n, gamma=gamma)
    stats_path = out / "hitting_stats.csv"
    stats.to_csv(stats_path)

    pairs = {
        "stats": stats_path, "epsilon": epsilon, "gamma": gamma,
        "n": data.n, "seeds": ",".join(str(s) for s in seeds), "cap": cap,
        "mean_tau": stats.mean_tau(),
        "bound_expectation": stats.bound_expectation,
        "censored_count": stats.censored_count,
        "censored_seeds": ",".join(str(s) for s, _, c in stats.taus if c),
    }
    for delta in (float(v) for v in str(cfg["deltas"]).split(",") if v.strip()):
        frac = stats.fraction_below(stats.bound_expectation / delta)
        key = f"frac_below_bound_over_delta_{delta:g}".replace(".", "p")
        pairs[key] = frac
        pairs[f"markov_floor_{delta:g}".replace(".", "p")] = 1.0 - delta
    _emit_summary(out / "montecarlo_summary.txt",
                  f"adaptive SGD sweep: eps={epsilon}, {len(seeds)} seeds", pairs)
    return EXIT_OK


def _verify_properties(cfg: dict):
    """Yield (name, ok, detail) for the whole invariant suite."""
    if not cfg.get("data"):
        raise ConfigError("verify needs a dataset CSV (--data)")
    raw_x, raw_y = data_gen.parse_rows(cfg["data"])
    norms = np.linalg.norm(raw_x, axis=1)
    bad_rows = np.flatnonzero(norms > 1.0 + 1e-9)
    yield ("feature-norms", bad_rows.size == 0,
           f"max row norm {norms.max():.6g}" if bad_rows.size == 0 else
           f"rows {bad_rows[:5].tolist()} have norm > 1 (max {norms.max():.6g})")
    labels_ok = bool(np.all(np.isin(raw_y, (-1.0, 1.0))))
    yield ("labels", labels_ok, "all labels in {-1,+1}" if labels_ok
           else "labels outside {-1,+1}")
    if bad_rows.size or not labels_ok:
        return

    data = loss_core.Dataset(features=raw_x, labels=raw_y)
    cert = _load_certificate(cfg)
    if cert is not None:
        attained = data_gen.verify_margin(data, cert)
        cert_ok = attained >= cert.margin
        yield ("certificate-margin", cert_ok,
               f"claimed {cert.margin:.6g}, attained {attained:.6g}")
        if not cert_ok:
            return
    else:
        try:
            cert = data_gen.estimate_margin(data, max_epochs=200)
            yield ("estimated-margin", True,
                   f"perceptron found margin {cert.margin:.6g}")
        except NotSeparableError as exc:
            yield ("estimated-margin", False, str(exc))
            return
    gamma = float(cfg["gamma"]) if cfg.get("gamma") is not None else cert.margin

    rng = np.random.default_rng(20240)
    draws = int(cfg["draws"])
    fd_worst = 0.0
    sb_ok = True
    hess_ok = True
    for _ in range(draws):
        w = rng.uniform(-20.0, 20.0, size=data.dim)
        loss = loss_core.full_loss(w, data)
        grad = loss_core.full_gradient(w, data)
        gnorm = float(np.linalg.norm(grad))
        if gnorm > min(1.0, loss) * (1 + 1e-12) + 1e-300:
            sb_ok = False
        lam = loss_core.hessian_max_eigenvalue(w, data, tol=1e-10)
        if lam > min(0.25, loss) + 1e-8:
            hess_ok = False
        h = 1e-5 * (1.0 + float(np.linalg.norm(w)))
        for k in range(min(data.dim, 3)):
            e = np.zeros(data.dim)
            e[k] = h
            num = (loss_core.full_loss(w + e, data)
                   - loss_core.full_loss(w - e, data)) / (2 * h)
            denom = max(abs(grad[k]), 1e-8)
            fd_worst = max(fd_worst, abs(num - grad[k]) / denom)
    yield ("self-bounded-gradient", sb_ok,
           f"checked ||grad|| <= min(1, loss) on {draws} draws")
    yield ("hessian-curvature-bound", hess_ok,
           f"checked lambda_max <= min(1/4, loss) + 1e-8 on {draws} draws")
    yield ("gradient-finite-differences", fd_worst <= 1e-6,
           f"worst relative error {fd_worst:.3g}")

    sim = schedule.simulate(gamma, steps=2000)
    br = schedule.crossing_time_brackets(sim.mass[0], sim.f0, gamma)
    if sim.tau2 is not None:
        in_brackets = br.contains(sim.tau1, sim.tau2)
        yield ("crossing-brackets", in_brackets,
               f"tau1={sim.tau1} tau2={sim.tau2}")
        gc = schedule.GrowthConstants.from_run(gamma, sim.f0, sim.mass[0],
                                               sim.tau2, sim.mass[sim.tau2])
        ln3 = np.log(sim.mass) ** 3
        sandwich_ok = True
        for t in range(sim.tau2, len(sim.mass)):
            lo, hi = schedule.growth_sandwich(gc, t)
            if not (lo - 1e-9 <= ln3[t] <= hi + 1e-9):
                sandwich_ok = False
                break
        yield ("growth-sandwich", sandwich_ok,
               f"ln^3(mass) within bounds for t in [{sim.tau2}, {len(sim.mass) - 1}]")
    else:
        yield ("crossing-brackets", False,
               "tau2 not reached within 2000 simulated steps")

    epsilon = float(cfg["epsilon"])
    cert_data = loss_core.Dataset(features=data.features, labels=data.labels,
                                  certificate=cert)
    try:
        result = optimizers.run_adaptive_sgd(cert_data, epsilon, seed=0,
                                             cap=200_000, audit=True)
        detail = (f"tau={result.tau} worst pathwise slack "
                  f"{result.audit.worst_pathwise_slack:.3g}")
        yield ("sgd-drift-audit", not result.censored, detail)
    except TheoremViolationError as exc:
        yield ("sgd-drift-audit", False, str(exc))


def cmd_verify(cfg: dict) -> int:
    failures = 0
    pairs = {}
    for name, ok, detail in _verify_properties(cfg):
        status = "PASS" if ok else "FAIL"
        print(f"{status} {name}: {detail}")
        pairs[f"property_{name.replace('-', '_')}"] = ok
        failures += 0 if ok else 1
    pairs["failures"] = failures
    out = _outdir(cfg)
    _emit_summary(out / "verify_summary.txt", "invariant verification", pairs)
    return EXIT_OK if failures == 0 else EXIT_VERIFICATION


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "run-gd": cmd_run_gd,
    "run-gd-const": cmd_run_gd_const,
    "run-sgd": cmd_run_sgd,
    "run-block": cmd_run_block,
    "montecarlo": cmd_montecarlo,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepgrow",
        description="Increasing step-size GD / adaptive SGD experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file mirroring the flags")
        p.add_argument("--dump-config",
                       help="write the effective config as JSON and continue")
        p.add_argument("--out", help=f"output directory (default ${_ENV_OUT} or ./out)")

    p = sub.add_parser("gen-data", help="generate a margin-certified dataset")
    p.add_argument("--dim", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--name")
    add_common(p)

    p = sub.add_parser("run-gd", help="GD with the increasing step-size schedule")
    p.add_argument("--data")
    p.add_argument("--cert")
    p.add_argument("--gamma", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--tail-offset", dest="tail_offset", type=int)
    p.add_argument("--schedule-out", dest="schedule_out",
                   action=argparse.BooleanOptionalAction)
    add_common(p)

    p = sub.add_parser("run-gd-const", help="constant step-size GD baseline")
    p.add_argument("--data")
    p.add_argument("--eta", type=float)
    p.add_argument("--steps", type=int)
    add_common(p)

    p = sub.add_parser("run-sgd", help="adaptive SGD to a target loss")
    p.add_argument("--data")
    p.add_argument("--cert")
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--cap", type=int)
    p.add_argument("--audit", action=argparse.BooleanOptionalAction)
    p.add_argument("--record-every", dest="record_every", type=int)
    add_common(p)

    p = sub.add_parser("run-block", help="block-adaptive SGD (doubling tolerances)")
    p.add_argument("--data")
    p.add_argument("--cert")
    p.add_argument("--gamma", type=float)
    p.add_argument("--eps0", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--target-eps", dest="target_eps", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--record-every", dest="record_every", type=int)
    add_common(p)

    p = sub.add_parser("montecarlo", help="seed sweep of adaptive SGD hitting times")
    p.add_argument("--data")
    p.add_argument("--cert")
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--cap", type=int)
    p.add_argument("--audit", action=argparse.BooleanOptionalAction)
    p.add_argument("--record-every", dest="record_every", type=int)
    p.add_argument("--deltas", help="comma-separated Markov deltas to report")
    p.add_argument("--workers", type=int)
    add_common(p)

    p = sub.add_parser("verify", help="run the full invariant suite on a dataset")
    p.add_argument("--data")
    p.add_argument("--cert")
    p.add_argument("--gamma", type=float)
    p.add_argument("--draws", type=int)
    p.add_argument("--epsilon", type=float)
    add_common(p)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args.command, args)
        return _HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TheoremViolationError, DivergenceError, NotSeparableError) as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except CsvFormatError as exc:
        print(f"input file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
