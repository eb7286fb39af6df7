"""Command line entry point: ``randbasis <command> [options]``."""

import argparse
import csv
from dataclasses import replace
from pathlib import Path
import sys

import numpy as np

from randbasis.experiments import (
    ConfigError,
    ExperimentConfig,
    boxplot_stats,
    emit_csv,
    emit_svg,
    load_config,
    normalized_bound,
    read_series_csv,
    run_trials,
    summary_dict,
    write_json,
)
from randbasis.grid import target_value
from randbasis.random_basis import estimate_variance, mc_expected_value, mc_variance_study, variance_slope

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2

COMMANDS = {
    "greedy": "greedy (Jones) approximation trials",
    "random": "random basis with least-squares output weights",
    "mc-direct": "direct Monte-Carlo weights: variance and coverage study",
    "mlp": "sigmoid network, full and linear-only training",
    "compare": "greedy, random and both MLP modes with a joint report",
    "stats": "box statistics and plot from an existing series CSV",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--trials", type=int, help="number of trials (default 100)")
    common.add_argument("--n-max", type=int, dest="n_max", help="largest network size (default 100)")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--grid", type=int, help="quadrature points on [0, 1] (default 1000)")
    common.add_argument("--workers", type=int, help="parallel worker processes (default 1)")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--config", type=Path, help="JSON configuration file")

    parser = _Parser(prog="randbasis", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "stats":
            p.add_argument("--input", type=Path, action="append", help="series CSV (repeatable)")
            p.add_argument("--bound", action="store_true", help="overlay the greedy error bound")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
    overrides = {k: getattr(args, k) for k in ("trials", "n_max", "seed", "grid", "workers")}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        return replace(cfg, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _report_series(series, out, cfg, bound=False):
    emit_csv(series, out / f"{series.method}_series.csv")
    if series.trials - len(series.failed) < 4:
        return None
    stats = boxplot_stats(series)
    emit_csv(stats, out / f"{series.method}_stats.csv")
    emit_svg(stats, out / f"{series.method}.svg", bound=normalized_bound(cfg) if bound else None)
    return stats


def cmd_method(method, cfg, out):
    series = run_trials(method, cfg)
    _report_series(series, out, cfg, bound=(method == "greedy"))
    print(f"{method}: {series.trials} trials -> {out}")
    return series


def cmd_mlp(cfg, out):
    for method in ("mlp_full", "mlp_linear"):
        cmd_method(method, cfg, out)


def cmd_mc_direct(cfg, out):
    mc = cfg.mc_direct
    rng = np.random.default_rng(cfg.seed)
    study = mc_variance_study(target_value, rng, mc.x, mc.ns, mc.sets, mc.alpha, mc.Omega)
    ref = mc_expected_value(mc.x, target_value, mc.alpha, mc.Omega)
    pooled_sd = {n: float(np.std(v, ddof=1)) for n, v in study.items()}
    rows = []
    for n, vals in study.items():
        est = estimate_variance(vals, ref, 2.0 * pooled_sd[n], n=n, x=mc.x)
        rows.append(est)
    slope = variance_slope([r.n for r in rows], [r.empirical_var for r in rows])
    path = out / "mc_direct_variance.csv"
    out.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "mean", "empirical_var", "sigma_sq", "epsilon", "gamma", "coverage"])
        for r in rows:
            w.writerow([r.n] + [f"{v:.17g}" for v in (r.mean, r.empirical_var, r.sigma_sq, r.epsilon, r.gamma, r.empirical_coverage)])
    write_json(
        {"x": mc.x, "alpha": mc.alpha, "Omega": mc.Omega, "sets": mc.sets, "reference": ref,
         "variance_slope": slope, "seed": cfg.seed},
        out / "mc_direct_summary.json",
    )
    print(f"mc-direct: variance slope {slope:.3f} -> {out}")


def cmd_compare(cfg, out):
    methods = ("greedy", "random", "mlp_full", "mlp_linear")
    stats = {}
    extras = {}
    for m in methods:
        series = run_trials(m, cfg)
        emit_csv(series, out / f"{m}_series.csv")
        extras[m] = series.extras
        if series.trials - len(series.failed) >= 4:
            stats[m] = boxplot_stats(series)
            emit_csv(stats[m], out / f"{m}_stats.csv")
    if stats:
        ref = None
        if "greedy" in stats:
            ref = (stats["greedy"].sizes, stats["greedy"].median)
        emit_svg(list(stats.values()), out / "compare.svg", bound=normalized_bound(cfg), reference=ref)
    write_json(summary_dict(cfg, stats, extras), out / "summary.json")
    print(f"compare: {', '.join(methods)} -> {out}")


def cmd_stats(args, cfg, out):
    inputs = args.input or sorted(out.glob("*_series.csv"))
    if not inputs:
        raise ConfigError(f"no series CSV given and none found in {out}")
    stats = []
    for path in inputs:
        try:
            series = read_series_csv(path)
        except FileNotFoundError as exc:
            raise ConfigError(f"series file {path} not found") from exc
        st = boxplot_stats(series)
        emit_csv(st, out / f"{series.method}_stats.csv")
        stats.append(st)
    emit_svg(stats, out / "stats.svg", bound=normalized_bound(cfg) if args.bound else None)
    print(f"stats: {len(stats)} series -> {out}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        out = args.out
        if args.command == "stats":
            cmd_stats(args, cfg, out)
        elif args.command == "mc-direct":
            cmd_mc_direct(cfg, out)
        elif args.command == "mlp":
            cmd_mlp(cfg, out)
        elif args.command == "compare":
            cmd_compare(cfg, out)
        else:
            cmd_method(args.command, cfg, out)
    except ValueError as exc:
        print(f"randbasis: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"randbasis: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
