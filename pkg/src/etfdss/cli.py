"""Command line interface: fit, select, portfolio, rolling, simulate, bench-glasso.

Every option can also be given in a flat ``key = value`` config file passed
with ``--config``; flags on the command line override the file. Each command
writes ``resolved_config_<command>.txt`` next to its outputs.

Exit codes: 0 success, 2 configuration or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, dss, factor, portfolio, ssvs, synthetic
from .data import DataError, align_panels, load_returns_csv, month_index
from .pipeline import PipelineConfig, SelectionConfig, allocate, fit_pipeline, ordered_subset, select

logger = logging.getLogger("etfdss")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

SSVS_FILE = "ssvs_draws.jsonl"
FACTOR_FILE = "factor_draws.jsonl"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _convert(action: argparse.Action, text: str):
    conv = action.type or (lambda s: s)
    if isinstance(action, (argparse._StoreTrueAction,)):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(action, argparse._AppendAction):
        return [conv(s.strip()) for s in text.split(",") if s.strip()]
    if action.nargs not in (None, "?"):
        return [conv(s) for s in text.replace(",", " ").split()]
    return conv(text)


def apply_config(parser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, text in values.items():
        if key not in actions:
            raise ConfigError(f"unknown config key {key!r}")
        defaults[key] = _convert(actions[key], text)
    parser.set_defaults(**defaults)


def write_resolved_config(out_dir: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    items = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    items.update(extra or {})
    lines = []
    for key in sorted(items):
        v = items[key]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v) if key in ("unpenalize", "fixed_weights") else " ".join(str(x) for x in v)
        lines.append(f"{key} = {'' if v is None else v}")
    (out_dir / f"resolved_config_{args.command}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _g_policy(text: str):
    if text == ssvs.EMPIRICAL_BAYES:
        return text
    try:
        g = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"g must be {ssvs.EMPIRICAL_BAYES!r} or a number") from None
    if g < 0:
        raise argparse.ArgumentTypeError("fixed g must be nonnegative")
    return g


def _d_policy(text: str):
    if text in (dss.RESIDUAL_PRECISION, dss.IDENTITY):
        return text
    try:
        return [float(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("D policy: residual-precision, identity, or comma-separated diagonal") from None


def _month(text: str) -> str:
    from .data import parse_month
    try:
        return parse_month(text)
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _edge(text: str) -> tuple[str, str]:
    if ":" not in text:
        raise argparse.ArgumentTypeError(f"expected CANDIDATE:TARGET, got {text!r}")
    cand, targ = text.split(":", 1)
    return cand, targ


# ---------------------------------------------------------------- argument groups

def _add_global(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out-dir", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="base random seed")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_data(p):
    p.add_argument("--targets", help="targets CSV")
    p.add_argument("--candidates", help="candidates CSV")
    p.add_argument("--bundled", action="store_true", help="use the synthetic dataset shipped with the package")
    p.add_argument("--date-col", default="date")
    p.add_argument("--start", type=_month)
    p.add_argument("--end", type=_month)
    p.add_argument("--risk-free-col", help="subtract this column of each file from its other columns")


def _add_sampler(p):
    p.add_argument("--sweeps", type=int, default=10_000)
    p.add_argument("--burn", type=int, default=2_000)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--model-prior", choices=[ssvs.MULTIPLICITY, ssvs.UNIFORM], default=ssvs.MULTIPLICITY)
    p.add_argument("--g", type=_g_policy, default=ssvs.EMPIRICAL_BAYES, help="empirical-bayes or a fixed g")
    p.add_argument("--shuffle-coords", action="store_true")
    p.add_argument("--k", type=int, default=None, help="factor count (default: eigenvalue rule)")
    p.add_argument("--loading-var", type=float, default=1.0)
    p.add_argument("--psi-shape", type=float, default=2.5)
    p.add_argument("--psi-scale-mult", type=float, default=0.5)
    p.add_argument("--mean-var-mult", type=float, default=100.0)


def _add_selection(p):
    p.add_argument("--d-policy", type=_d_policy, default=dss.RESIDUAL_PRECISION)
    p.add_argument("--grid-size", type=int, default=100)
    p.add_argument("--lambda-ratio", type=float, default=1e-4)
    p.add_argument("--band", type=float, nargs=2, default=[0.4, 0.6], metavar=("LOW", "HIGH"))
    p.add_argument("--unpenalize", type=_edge, action="append", default=[], metavar="CAND:TARGET")


def _add_portfolio(p):
    p.add_argument("--fixed-weights", action="append", default=[], metavar="CSV")
    p.add_argument("--annualize", action="store_true", help="report Sharpe ratios times sqrt(12)")
    p.add_argument("--de-mutation", type=float, default=0.8)
    p.add_argument("--de-crossover", type=float, default=0.9)
    p.add_argument("--de-popsize", type=int, default=10)
    p.add_argument("--de-generations", type=int, default=300, help="minimum generations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etfdss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run both samplers and write draw files")
    _add_global(p); _add_data(p); _add_sampler(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="lasso path and quantile-band graph selection")
    _add_global(p); _add_selection(p)
    p.add_argument("--draws-dir", help="directory holding the fit outputs (default: --out-dir)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("portfolio", help="posterior-mean Sharpe allocation")
    _add_global(p); _add_portfolio(p)
    p.add_argument("--draws-dir", help="directory holding the fit outputs (default: --out-dir)")
    p.add_argument("--graph", help="edge list (default: <draws-dir>/graph.tsv)")
    p.set_defaults(func=cmd_portfolio)

    p = sub.add_parser("rolling", help="fit, select and allocate on rolling windows")
    _add_global(p); _add_data(p); _add_sampler(p); _add_selection(p); _add_portfolio(p)
    p.add_argument("--window-months", type=int, default=120)
    p.add_argument("--step-months", type=int, default=60)
    p.set_defaults(func=cmd_rolling)

    p = sub.add_parser("simulate", help="simulation study with known generating moments")
    _add_global(p)
    p.add_argument("--n-seeds", type=int, default=10)
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--sweeps", type=int, default=bench.SIMULATION_CONFIG.n_sweeps)
    p.add_argument("--burn", type=int, default=bench.SIMULATION_CONFIG.n_burn)
    p.add_argument("--thin", type=int, default=bench.SIMULATION_CONFIG.thin)
    p.add_argument("--k", type=int, default=2)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench-glasso", help="bivariate conditional-loss vs glasso solution paths")
    _add_global(p)
    p.add_argument("--a", type=float, nargs="+", default=[12.0, 200.0])
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--c", type=float, default=3.0)
    p.add_argument("--grid-size", type=int, default=101)
    p.set_defaults(func=cmd_bench_glasso)
    return parser


# ---------------------------------------------------------------- helpers

def _sampler_config(args) -> PipelineConfig:
    return PipelineConfig(
        n_sweeps=args.sweeps, n_burn=args.burn, thin=args.thin, k=args.k, model_prior=args.model_prior,
        g_policy=args.g, shuffle_coords=args.shuffle_coords,
        factor_priors=factor.FactorPriors(args.loading_var, args.psi_shape, args.psi_scale_mult,
                                          args.mean_var_mult),
    )


def _selection_config(args) -> SelectionConfig:
    return SelectionConfig(args.d_policy, args.grid_size, args.lambda_ratio, tuple(args.band),
                           tuple(args.unpenalize))


def _de_config(args) -> portfolio.DEConfig:
    return portfolio.DEConfig(mutation=args.de_mutation, crossover=args.de_crossover, popsize=args.de_popsize,
                              min_generations=args.de_generations,
                              max_generations=max(args.de_generations, portfolio.DEConfig.max_generations))


def _load_panels(args):
    if args.bundled:
        tpath, cpath = synthetic.bundled_paths()
    else:
        if not args.targets or not args.candidates:
            raise ConfigError("--targets and --candidates are required (or pass --bundled)")
        tpath, cpath = Path(args.targets), Path(args.candidates)
        for path in (tpath, cpath):
            if not path.exists():
                raise ConfigError(f"input file not found: {path}")
    targets = load_returns_csv(tpath, args.date_col, args.risk_free_col)
    candidates = load_returns_csv(cpath, args.date_col, args.risk_free_col)
    if args.start or args.end:
        targets = targets.window(args.start, args.end)
        candidates = candidates.window(args.start, args.end)
    return targets, candidates


def _fit_and_write(data, config: PipelineConfig, seed: int, out: Path):
    chain, fdraws, paired = fit_pipeline(data, config, seed)
    ssvs.write_chain(out / SSVS_FILE, chain)
    factor.write_factor_draws(out / FACTOR_FILE, fdraws, data.candidates.labels)
    ssvs.write_inclusion_csv(out / "inclusion.csv", data.candidates.labels, chain.inclusion)
    return chain, paired


def load_paired_draws(draws_dir: Path):
    """Read both draw files and pair them. Returns (paired, candidate_labels, target_labels)."""
    spath, fpath = draws_dir / SSVS_FILE, draws_dir / FACTOR_FILE
    if not spath.exists() or not fpath.exists():
        raise ConfigError(f"draw files not found in {draws_dir} (run `etfdss fit` first)")
    chain = ssvs.read_chain(spath)
    fdraws, labels = factor.read_factor_draws(fpath)
    if labels != chain.candidate_labels:
        raise ConfigError("candidate labels differ between the two draw files")
    if len(chain.draws) < 2:
        raise ConfigError(f"{spath}: need at least two draws")
    return dss.pair_draws(chain.draws, fdraws), chain.candidate_labels, chain.target_labels


def _select_and_write(paired, cands, targs, config: SelectionConfig, out: Path):
    result = select(paired, cands, targs, config)
    dss.write_path_csv(out / "path.csv", result.path)
    dss.write_edge_list(out / "graph.tsv", result.graph)
    return result


def _portfolio_and_write(paired, cands, subset, args, seed: int, out: Path):
    moments = portfolio.CandidateMoments.from_draws(paired, cands)
    results = allocate(moments, cands, subset, _de_config(args), seed)
    for name, (weights, samples) in results.items():
        portfolio.write_weights_csv(out / f"weights_{name}.csv", weights)
        portfolio.write_sharpe_csv(out / f"sharpe_{name}.csv", samples, args.annualize)
    for path in args.fixed_weights:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"fixed-weights file not found: {path}")
        w = portfolio.read_weights_csv(path)
        samples = portfolio.sharpe_distribution_for_weights(w, moments, path.stem)
        portfolio.write_sharpe_csv(out / f"sharpe_{path.stem}.csv", samples, args.annualize)
    tangency = portfolio.tangency_sharpe_distribution(paired, "targets", label="tangency")
    portfolio.write_sharpe_csv(out / "sharpe_tangency.csv", tangency, args.annualize)
    return results


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_fit(args) -> None:
    targets, candidates = _load_panels(args)
    data = align_panels(targets, candidates)
    out = _out_dir(args)
    write_resolved_config(out, args)
    chain, _ = _fit_and_write(data, _sampler_config(args), args.seed, out)
    logger.info("fit: T=%d p=%d q=%d, %d retained draws", data.T, data.p, data.q, len(chain.draws))


def cmd_select(args) -> None:
    draws_dir = Path(args.draws_dir or args.out_dir)
    paired, cands, targs = load_paired_draws(draws_dir)
    out = _out_dir(args)
    write_resolved_config(out, args)
    result = _select_and_write(paired, cands, targs, _selection_config(args), out)
    logger.info("select: %d edges, candidates %s", len(result.graph.edges), sorted(result.graph.selected_candidates))


def cmd_portfolio(args) -> None:
    draws_dir = Path(args.draws_dir or args.out_dir)
    paired, cands, _ = load_paired_draws(draws_dir)
    graph_path = Path(args.graph) if args.graph else draws_dir / "graph.tsv"
    if not graph_path.exists():
        raise ConfigError(f"selection graph not found: {graph_path} (run `etfdss select` first)")
    graph = dss.read_edge_list(graph_path)
    subset = ordered_subset(graph, cands)
    if not subset:
        raise ConfigError(f"{graph_path}: selection graph has no candidates")
    out = _out_dir(args)
    write_resolved_config(out, args)
    _portfolio_and_write(paired, cands, subset, args, args.seed, out)


def rolling_windows(dates, window: int, step: int) -> list[tuple[int, int]]:
    if window < 1 or step < 1:
        raise ConfigError("window and step must be positive")
    T = len(dates)
    if window > T:
        raise ConfigError(f"window of {window} months exceeds the {T} months of data")
    return [(s, s + window) for s in range(0, T - window + 1, step)]


def cmd_rolling(args) -> None:
    targets, candidates = _load_panels(args)
    common = sorted(set(targets.dates) & set(candidates.dates), key=month_index)
    windows = rolling_windows(common, args.window_months, args.step_months)
    out = _out_dir(args)
    write_resolved_config(out, args)
    summary = ["window,start,end,seed,n_candidates,selected"]
    for w, (lo, hi) in enumerate(windows):
        start, end = common[lo], common[hi - 1]
        seed = args.seed + w
        wdir = out / f"window_{start}_{end}"
        wdir.mkdir(exist_ok=True)
        data = align_panels(targets.window(start, end), candidates.window(start, end))
        write_resolved_config(wdir, args, {"start": start, "end": end, "seed": seed})
        _, paired = _fit_and_write(data, _sampler_config(args), seed, wdir)
        cands, targs = list(data.candidates.labels), list(data.targets.labels)
        result = _select_and_write(paired, cands, targs, _selection_config(args), wdir)
        subset = ordered_subset(result.graph, cands) or cands
        _portfolio_and_write(paired, cands, subset, args, seed, wdir)
        summary.append(f"{w},{start},{end},{seed},{len(cands)},{' '.join(subset)}")
    (out / "windows.csv").write_text("\n".join(summary) + "\n", encoding="utf-8")


def cmd_simulate(args) -> None:
    if args.n_seeds < 1:
        raise ConfigError("--n-seeds must be positive")
    out = _out_dir(args)
    write_resolved_config(out, args)
    config = PipelineConfig(n_sweeps=args.sweeps, n_burn=args.burn, thin=args.thin, k=args.k)
    moments = bench.default_generating_moments()
    lines, covered, rmses = [], 0, []
    for i in range(args.n_seeds):
        seed = args.seed + i
        report = bench.run_simulation_study(moments, args.T, seed, config)
        bench.write_recovery_csv(out / f"recovery_seed{seed}.csv", report)
        lines.append(f"seed {seed}: " + "; ".join(report.summary_lines()))
        covered += report.covered
        rmses.append(report.beta_rmse)
    lines.append(f"coverage {covered}/{args.n_seeds} seeds with the true tangency Sharpe inside the central 90% interval")
    lines.append(f"max_beta_rmse {max(rmses):.6f}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(lines[-2])


def cmd_bench_glasso(args) -> None:
    out = _out_dir(args)
    write_resolved_config(out, args)
    lines = []
    for a in args.a:
        params = bench.BivariateParams(a, args.b, args.c)
        table = bench.path_comparison_table(params, args.grid_size)
        name = f"bench_glasso_a{a:g}.csv"
        bench.write_path_table(out / name, table)
        lines.append(f"a={a:g} b={args.b:g} c={args.c:g}: max normalized path gap {bench.max_path_gap(params, args.grid_size):.6f} ({name})")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- entry point

def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        apply_config(subparser, read_config_file(args.config))
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as err:
        print(f"etfdss: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (np.linalg.LinAlgError, ArithmeticError) as err:
        print(f"etfdss: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DataError, ssvs.ChainConfigError, factor.FactorConfigError, dss.PairingError,
            portfolio.PortfolioConfigError, FileNotFoundError, KeyError, ValueError) as err:
        print(f"etfdss: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
