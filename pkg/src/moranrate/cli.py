"""``moranrate`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every subcommand writes only inside ``--out`` and leaves a ``manifest.json``
there.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import branching, experiments, observables
from .engine import Engine, ModelParams, TrajectorySample

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _num(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class UsageError(Exception):
    pass


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) if isinstance(v, (int, float, np.number)) else v
                        for v in row])


def _finish(out, subcommand, parameters, seed, names):
    experiments.write_json(os.path.join(out, "manifest.json"),
                           experiments.manifest(subcommand, parameters, seed,
                                                list(names) + ["manifest.json"]))


# -- simulate ------------------------------------------------------------

def cmd_simulate(args):
    try:
        params = ModelParams(args.n, args.mu, args.q, args.gamma)
    except ValueError as exc:
        raise UsageError(f"--n/--mu/--q/--gamma: {exc}") from None
    if not args.horizon > 0:
        raise UsageError("--horizon must be positive")
    if args.samples < 2:
        raise UsageError("--samples must be at least 2")
    times = [args.horizon * k / (args.samples - 1) for k in range(args.samples)]
    os.makedirs(args.out, exist_ok=True)
    engine = Engine(params, seed=args.seed)
    record = engine.run(args.horizon, times)
    samples = [TrajectorySample.from_hist(t, h, args.snapshot)
               for t, h in record.snapshots()]
    names = ["trajectory.csv"]
    _write_csv(os.path.join(args.out, "trajectory.csv"), ["t", "mean", "c2", "max", "median"],
               [(s.time, s.mean_fitness, s.centered_variance, s.max_fitness,
                 s.median_level) for s in samples])
    if args.snapshot:
        from .engine import snapshot_json

        with open(os.path.join(args.out, "snapshots.jsonl"), "w") as fh:
            fh.write(snapshot_json(samples))
        names.append("snapshots.jsonl")
    _finish(args.out, "simulate",
            {"n": args.n, "mu": args.mu, "q": args.q, "gamma": args.gamma,
             "horizon": args.horizon, "samples": args.samples,
             "snapshot": args.snapshot}, args.seed, names)
    return EXIT_OK


# -- sweep ---------------------------------------------------------------

def _load_config(args):
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config: invalid JSON ({exc})") from None
    if isinstance(raw, dict):
        if args.out is not None:
            raw["out"] = args.out
        if args.workers is not None:
            raw["workers"] = args.workers
    try:
        return experiments.SweepConfig.from_dict(raw)
    except experiments.ConfigError as exc:
        raise UsageError(f"config {exc}") from None


def cmd_sweep(args):
    config = _load_config(args)
    t = config.resolved_horizon()
    plan = {
        "config": config.to_dict(),
        "horizon": t,
        "runs": len(config.n_ladder) * config.replicates,
        "per_n": [{"N": n, "T": config.constants(n).big_t, "M": config.constants(n).m_steps,
                   "streams": f"{config.seed}:{n}:0..{config.replicates - 1}"}
                  for n in config.n_ladder],
        "outputs": [os.path.join(config.out, f) for f in
                    ("results.csv", "ensemble.csv", "fit_report.json", "manifest.json")],
    }
    if args.dry_run:
        print(json.dumps(plan, indent=2, sort_keys=True))
        return EXIT_OK
    results = experiments.run_sweep(config)
    fit_error = ""
    try:
        fit = experiments.fit_scaling(results)
    except ValueError as exc:
        fit_error = str(exc)
        print(f"fit skipped: {exc}", file=sys.stderr)
        fit = None
    try:
        events = experiments.estimate_event_probability(config, results=results)
    except ValueError as exc:
        print(f"event probability skipped: {exc}", file=sys.stderr)
        events = []
    experiments.write_sweep_outputs(config, results, fit, events, config.out,
                                    fit_error)
    failed = sum(1 for r in results if not r.ok)
    if failed:
        print(f"{failed} replicate(s) failed; see the error column", file=sys.stderr)
    return EXIT_OK


# -- asymptotics ---------------------------------------------------------

def _parse_ladder(tokens):
    values = []
    for tok in tokens:
        parts = tok.split(":")
        try:
            if len(parts) == 1:
                values.append(float(tok))
            elif len(parts) == 3:
                lo, hi, step = map(float, parts)
                if step <= 0:
                    raise ValueError
                k = 0
                while lo + k * step <= hi + 1e-9 * step:
                    values.append(lo + k * step)
                    k += 1
            else:
                raise ValueError
        except ValueError:
            raise UsageError(f"--log10n-ladder: cannot parse {tok!r}") from None
    if not values:
        raise UsageError("--log10n-ladder: empty ladder")
    bad = [v for v in values if not v > 1]
    if bad:
        raise UsageError(f"--log10n-ladder: values must exceed 1 (got {bad[0]})")
    return values


def asymptotics_rows(params, ladder, K, k, horizon):
    header = None
    rows = []
    for x in ladder:
        log_n = x * math.log(10.0)
        rep = branching.prop2_report(params, log_n=log_n)
        row = {
            "N_log10": x, "w": rep.w, "T": rep.big_t, "W": rep.big_w, "d": rep.d,
            "wf_T": rep.wf_t, "abs_wf_T_minus_d": abs(rep.wf_t - rep.d),
            "logN_P1": rep.log_n_p1, "survival": rep.survival,
            "wT": rep.w * rep.big_t, "loglogN": math.log(log_n),
            "wT_rel_error": rep.wt_identity_error,
            "exp_wT_rel_error": rep.exp_wt_identity_error,
        }
        for prefix, report in (("lemma4_", observables.lemma4_diagnostics(params, log_n=log_n)),
                               ("lemma5_", observables.lemma5_diagnostics(params, log_n=log_n))):
            for name, value in report.values().items():
                row[prefix + name] = value
        const = branching.ScalingConstants.compute(params, horizon, log_n=log_n)
        try:
            row["prop1_bound"] = observables.prop1_bound(const, K, k)
        except ValueError:
            row["prop1_bound"] = ""
        if header is None:
            header = list(row)
        rows.append([row[h] for h in header])
    return header, rows


def cmd_asymptotics(args):
    ladder = _parse_ladder(args.log10n_ladder)
    try:
        params = ModelParams(2, args.mu, args.q, args.gamma)
    except ValueError as exc:
        raise UsageError(f"--mu/--q/--gamma: {exc}") from None
    if args.gamma <= 0:
        raise UsageError("--gamma must be positive")
    if not 0 <= args.k <= args.K:
        raise UsageError("--k must satisfy 0 <= k <= K")
    if not args.horizon > 0:
        raise UsageError("--horizon must be positive")
    header, rows = asymptotics_rows(params, ladder, args.K, args.k, args.horizon)
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "asymptotics.csv"), header, rows)
    _finish(args.out, "asymptotics",
            {"log10n_ladder": ladder, "mu": args.mu, "q": args.q, "gamma": args.gamma,
             "K": args.K, "k": args.k, "horizon": args.horizon}, None,
            ["asymptotics.csv"])
    return EXIT_OK


# -- bd-compare ----------------------------------------------------------

def cmd_bd_compare(args):
    try:
        bp = branching.BranchingParams(args.w, args.d, args.qmu)
    except ValueError as exc:
        raise UsageError(f"--w/--d/--qmu: {exc}") from None
    if not args.s > 0:
        raise UsageError("--s must be positive")
    if args.paths < 1:
        raise UsageError("--paths must be >= 1")
    counts = branching.bd_final_counts(bp, args.s, args.paths, args.seed)
    totals = counts.sum(axis=1)
    n = len(totals)
    rows = []
    for i in range(21):
        p_total = float(np.mean(totals == i))
        rows.append([i, branching.count_pmf(bp, args.s, i), p_total,
                     math.sqrt(p_total * (1 - p_total) / n),
                     float(np.mean((totals == i) & (counts[:, 1] == 0))),
                     float(np.mean((totals == i) & (counts[:, 1] > 0)))])
    gof = branching.chi_square_gof(totals, bp, args.s, 20)
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "bd_compare.csv"),
               ["count", "analytic", "empirical", "empirical_se", "empirical_type0_only",
                "empirical_with_advanced"], rows)
    summary = {"chi_square": gof.statistic, "dof": gof.dof, "p_value": gof.p_value,
               "bins": gof.bins, "paths": n,
               "extinction_analytic": branching.extinction_prob(bp, args.s),
               "extinction_empirical": float(np.mean(totals == 0))}
    experiments.write_json(os.path.join(args.out, "bd_compare.json"), summary)
    _finish(args.out, "bd-compare",
            {"w": args.w, "d": args.d, "qmu": args.qmu, "s": args.s, "paths": args.paths},
            args.seed, ["bd_compare.csv", "bd_compare.json"])
    print(f"chi-square p-value: {_num(gof.p_value)}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------

def build_parser():
    p = _Parser(prog="moranrate", description="Moran-model rate-of-adaptation toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="single trajectory")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--mu", type=float, required=True)
    s.add_argument("--q", type=float, required=True)
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--horizon", type=float, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--samples", type=int, default=101,
                   help="evenly spaced sample times including 0 and the horizon")
    s.add_argument("--out", default="moranrate_out")
    s.add_argument("--snapshot", action="store_true", help="also write histogram snapshots")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="replicate sweep over a population-size ladder")
    w.add_argument("config")
    w.add_argument("--out", default=None, help="overrides the config's out")
    w.add_argument("--workers", type=int, default=None)
    w.add_argument("--dry-run", action="store_true")
    w.set_defaults(func=cmd_sweep)

    a = sub.add_parser("asymptotics", help="analytic ladder in log10 N")
    a.add_argument("--log10n-ladder", nargs="+", required=True,
                   help="values or start:stop:step ranges")
    a.add_argument("--gamma", type=float, default=1.0)
    a.add_argument("--mu", type=float, default=0.1)
    a.add_argument("--q", type=float, default=1.0)
    a.add_argument("--K", type=int, default=10)
    a.add_argument("--k", type=int, default=1)
    a.add_argument("--horizon", type=float, default=10.0)
    a.add_argument("--out", default="moranrate_out")
    a.set_defaults(func=cmd_asymptotics)

    b = sub.add_parser("bd-compare", help="closed-form vs Monte Carlo birth-death law")
    b.add_argument("--w", type=float, required=True)
    b.add_argument("--d", type=float, required=True)
    b.add_argument("--qmu", type=float, default=0.0)
    b.add_argument("--s", type=float, required=True)
    b.add_argument("--paths", type=int, default=100000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="moranrate_out")
    b.set_defaults(func=cmd_bd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"moranrate {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"moranrate {args.command}: failed: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
