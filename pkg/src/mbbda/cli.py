"""Command-line front end: fit, blocksize, diagnose, simulate, bench."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__
from . import rng as rngmod
from .blocksize import choose_block_size, default_omega
from .data import assemble, load_counts, load_metadata, prevalence_filter
from .estimator import EstimatorOptions
from .errors import MbbError, NumericalError, ValidationError

logger = logging.getLogger("mbbda")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3, 4


# argument types --------------------------------------------------------------------

def omega_arg(text: str):
    """Integer window length, or a proportion written with a decimal point."""
    text = str(text).strip()
    try:
        if "." in text:
            value = float(text)
            if not 0 < value < 1:
                raise ValueError
            return value
        value = int(text)
        if value < 1:
            raise ValueError
        return value
    except ValueError:
        raise argparse.ArgumentTypeError(f"omega must be a positive count or a proportion in (0, 1), got {text!r}")


def int_list(text: str) -> list:
    try:
        return [int(x) for x in str(text).replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def boolean(text) -> bool:
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# parser ------------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override its values")
    p.add_argument("--seed", type=int, default=0, help="master seed for every random stream")
    p.add_argument("--threads", type=positive_int, default=1, help="worker cap; results do not depend on it")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--counts", required=True, help="taxa x samples count table")
    p.add_argument("--meta", required=True, help="sample metadata (sample_id, subject_id, time, group)")
    p.add_argument("--delimiter", help="field separator (default: comma for .csv, else tab)")
    p.add_argument("--reference", help="group label coded 0 (default: lexicographically first)")
    p.add_argument("--prevalence", type=float, default=0.0,
                   help="keep taxa present in at least this fraction of samples")
    p.add_argument("--scheme", choices=("auto", "strict", "positive"), default="auto",
                   help="size-factor geometric-mean scheme")


def _bootstrap(p: argparse.ArgumentParser, R: int, RR: int) -> None:
    p.add_argument("--outer-reps", type=positive_int, default=R, help="outer MBB realizations R")
    p.add_argument("--inner-reps", type=positive_int, default=RR, help="inner realizations RR per outer one")
    p.add_argument("--pivot-se", choices=("robust", "bootstrap"), default="robust",
                   help="SE that studentizes the observed estimate")
    p.add_argument("--freeze-size-factors", type=boolean, nargs="?", const=True, default=False,
                   help="reuse the observed size factors inside realizations")
    p.add_argument("--no-shrinkage", dest="shrinkage", action="store_false", default=True)


def _selection(p: argparse.ArgumentParser) -> None:
    p.add_argument("--initial-block", type=positive_int, help="initial block size l_I (default: from PAC)")
    p.add_argument("--omega", type=omega_arg, help="subsample length, or a proportion like 0.7")
    p.add_argument("--candidates", type=int_list, help="candidate block sizes, e.g. 2,3,4")
    p.add_argument("--rounding", choices=("nearest", "floor"), default="nearest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mbbda", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="MBB differential abundance analysis")
    _common(p)
    _input(p)
    p.add_argument("--block-size", type=positive_int)
    p.add_argument("--auto-block", type=boolean, nargs="?", const=True, default=False)
    _selection(p)
    _bootstrap(p, 200, 50)
    p.add_argument("--select-outer-reps", type=positive_int)
    p.add_argument("--select-inner-reps", type=positive_int)
    p.add_argument("--alpha", type=float, default=0.05, help="CI level is 1 - alpha")
    p.add_argument("--fdr", type=float, default=0.05, help="BH cutoff for the significant column")
    p.add_argument("--dump-distribution", help="write the m x R t_star matrix here")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("blocksize", help="data-driven block size selection")
    _common(p)
    _input(p)
    _selection(p)
    _bootstrap(p, 100, 25)
    p.add_argument("--emit-mse", help="write the per-candidate l1-norm table here")
    p.set_defaults(handler=cmd_blocksize)

    p = sub.add_parser("diagnose", help="PAC profile, lag pairs, size factors, pivot QQ")
    _common(p)
    _input(p)
    p.add_argument("--top", type=positive_int, default=6, help="number of most abundant taxa")
    p.add_argument("--max-lag", type=positive_int)
    p.add_argument("--pac-mode", choices=("group-mean", "subject"), default="group-mean")
    p.add_argument("--threshold", type=float, default=0.25, help="PAC cutoff for the initial block")
    p.add_argument("--lags", type=int_list, help="lags for lagpairs.csv (default: 1..max-lag)")
    p.add_argument("--lag-taxon", help="taxon for lagpairs.csv (default: the most abundant)")
    p.add_argument("--emit-sizefactors", help="write sample_id, delta here")
    p.add_argument("--qq", type=boolean, nargs="?", const=True, default=False,
                   help="run the pivotality check and write qq.csv")
    p.add_argument("--perturbation", type=float, default=2.0, help="dispersion multiplier for --qq")
    p.add_argument("--block-size", type=positive_int, default=3, help="block size for --qq")
    p.add_argument("--outer-reps", type=positive_int, default=100)
    p.add_argument("--inner-reps", type=positive_int, default=25)
    p.add_argument("--svg", type=boolean, nargs="?", const=True, default=False,
                   help="also render SVG plots (needs matplotlib)")
    p.set_defaults(handler=cmd_diagnose)

    p = sub.add_parser("simulate", help="write one simulated panel with its truth")
    _common(p)
    _sim_args(p)
    p.add_argument("--run-index", type=int, default=0)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("bench", help="ROC benchmark of MBB, MBS and PIS")
    _common(p)
    _sim_args(p)
    p.add_argument("--runs", type=positive_int)
    p.add_argument("--method", action="append", choices=("mbb", "mbs", "pis"),
                   help="repeat to pick several (default: all three)")
    p.add_argument("--block-size", type=positive_int, help="skip selection and use this block size")
    p.add_argument("--scheme", choices=("auto", "strict", "positive"), default="auto")
    _selection(p)
    _bootstrap(p, 100, 25)
    p.set_defaults(handler=cmd_bench)
    return parser


def _sim_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--setting", choices=("Z", "ZL"), help="preset shape")
    p.add_argument("--dep-order", choices=("1", "2", "order1", "order2", "mixed"))
    p.add_argument("--m", type=positive_int)
    p.add_argument("--q", type=positive_int)
    p.add_argument("--n-per-group", type=positive_int)
    p.add_argument("--frac-da", type=float)
    p.add_argument("--da-fold", type=float)
    p.add_argument("--da-direction", choices=("balanced", "up"))
    p.add_argument("--generator", choices=("inar", "rounded-ar"))
    p.add_argument("--params-file")


# config handling -----------------------------------------------------------------------

def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def apply_config(parser: argparse.ArgumentParser, argv: list) -> argparse.Namespace:
    """Parse ``argv`` with values from ``--config`` replacing the built-in defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    from .simulate import read_config_file

    try:
        values = read_config_file(args.config)
    except (OSError, ValueError) as exc:
        parser.error(f"cannot read config {args.config}: {exc}")
    sub = _subparser(parser, args.command)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        dest = key.strip().replace("-", "_")
        if dest not in actions:
            parser.error(f"unknown key {key!r} in {args.config}")
        action = actions[dest]
        if isinstance(action, argparse._StoreFalseAction):
            value = not boolean(raw)
        elif isinstance(action, argparse._AppendAction):
            value = [v.strip() for v in str(raw).replace(",", " ").split()]
        else:
            convert = action.type or str
            try:
                value = convert(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                parser.error(f"{args.config}: bad value for {key}: {exc}")
            if action.choices is not None and value not in action.choices:
                parser.error(f"{args.config}: {key} must be one of {list(action.choices)}")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# helpers -----------------------------------------------------------------------------

def _load(args):
    counts = load_counts(args.counts, args.delimiter)
    meta = load_metadata(args.meta, args.delimiter, args.reference)
    ds = assemble(counts, meta)
    if args.prevalence and args.prevalence > 0:
        ds = prevalence_filter(ds, args.prevalence)
    return ds


def _versions() -> dict:
    return {
        "mbbda": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _parameters(args) -> dict:
    skip = {"handler", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def write_manifest(out: Path, args, outputs: list, started: float, extra=None) -> Path:
    manifest = {
        "command": args.command,
        "parameters": _parameters(args),
        "seed": args.seed,
        "versions": _versions(),
        "wall_time_s": round(time.perf_counter() - started, 3),
        "outputs": {p.name: _sha256(p) for p in outputs if p.exists()},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")
    return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (np.ndarray, tuple)):
        return list(obj)
    return str(obj)


def _write_frame(frame: pd.DataFrame, path: Path, sep=None) -> Path:
    if sep is None:
        sep = "," if Path(path).suffix.lower() == ".csv" else "\t"
    frame.to_csv(path, sep=sep, index=False, float_format="%.10g", lineterminator="\n")
    return path


# subcommands ---------------------------------------------------------------------------

def cmd_fit(args, out: Path, started: float) -> list:
    from .pipeline import FitConfig, run_mbb

    ds = _load(args)
    cfg = FitConfig(
        block_size=args.block_size, auto_block=bool(args.auto_block) and args.block_size is None,
        initial_block=args.initial_block, omega=args.omega, candidates=args.candidates,
        outer_reps=args.outer_reps, inner_reps=args.inner_reps,
        select_outer_reps=args.select_outer_reps, select_inner_reps=args.select_inner_reps,
        seed=args.seed, alpha=args.alpha, fdr=args.fdr, scheme=args.scheme,
        shrinkage=args.shrinkage, pivot_se=args.pivot_se,
        freeze_size_factors=args.freeze_size_factors, rounding=args.rounding, threads=args.threads,
    )
    run = run_mbb(ds, cfg)
    results = out / "results.csv"
    run.results.meta["parameters"] = cfg.manifest()
    run.results.write(results)
    outputs = [results, Path(f"{results}.meta.json")]
    if args.dump_distribution:
        dump = Path(args.dump_distribution)
        frame = pd.DataFrame(run.distribution.t_star, columns=[f"r{r + 1}" for r in range(cfg.outer_reps)])
        frame.insert(0, "taxon", list(run.taxa_ids))
        outputs.append(_write_frame(frame, dump))
    n_sig = int(run.results.frame["significant"].sum())
    print(f"block size {run.block_size}; {n_sig} of {len(run.taxa_ids)} taxa significant at FDR {cfg.fdr}")
    return outputs


def cmd_blocksize(args, out: Path, started: float) -> list:
    from .pipeline import initial_block_from_pac

    ds = _load(args)
    l_I = args.initial_block or initial_block_from_pac(ds, scheme=args.scheme)
    omega = args.omega if args.omega is not None else default_omega(ds)
    candidates = args.candidates if args.candidates is not None else list(range(2, l_I))
    choice = choose_block_size(
        ds, l_I, omega, candidates, R=args.outer_reps, RR=args.inner_reps,
        seed=rngmod.child_key(args.seed, rngmod.SELECT), threads=args.threads,
        rounding=args.rounding, options=EstimatorOptions(args.scheme, args.shrinkage),
        freeze_size_factors=args.freeze_size_factors, pivot_se=args.pivot_se,
    )
    mode = "proportion" if isinstance(omega, float) else "count"
    summary = pd.DataFrame([{
        "initial_block": l_I, "omega": omega, "omega_mode": mode,
        "l_subsample": choice.l_subsample, "l_full": choice.l_full, "nu": choice.nu,
    }])
    outputs = [_write_frame(summary, out / "blocksize.csv")]
    if args.emit_mse:
        table = pd.DataFrame({"l": choice.profile.candidates, "l1_norm": choice.profile.l1_norms})
        outputs.append(_write_frame(table, Path(args.emit_mse)))
    print(f"subsample optimum {choice.l_subsample}; full-panel block size {choice.l_full}")
    return outputs


def cmd_diagnose(args, out: Path, started: float) -> list:
    from .diagnostics import lag_table, pac_profile, pivot_check, suggest_initial_block
    from .preprocess import size_factors, transform

    ds = _load(args)
    sf = size_factors(ds.counts, args.scheme)
    tm = transform(ds.counts, sf.delta)
    max_lag = args.max_lag or int(ds.q.min()) - 1
    pac = pac_profile(ds, tm, args.top, max_lag, mode=args.pac_mode)
    outputs = [_write_frame(pac, out / "pac.csv")]
    l_I = suggest_initial_block(pac, args.threshold) if len(pac) else None
    taxon = args.lag_taxon or (str(pac["taxon"].iloc[0]) if len(pac) else ds.taxa_ids[0])
    lags = args.lags or list(range(1, max_lag + 1))
    pairs = lag_table(tm, ds, taxon, lags)
    outputs.append(_write_frame(pairs, out / "lagpairs.csv"))
    if args.emit_sizefactors:
        frame = pd.DataFrame({"sample_id": ds.sample_ids, "delta": sf.delta})
        outputs.append(_write_frame(frame, Path(args.emit_sizefactors)))
    qq = None
    if args.qq:
        check = pivot_check(ds, args.perturbation, args.block_size, args.outer_reps,
                            args.inner_reps, args.seed, threads=args.threads)
        qq = check.qq
        outputs.append(_write_frame(qq, out / "qq.csv"))
        ks = pd.DataFrame({"taxon": ds.taxa_ids, "ks_t": check.ks_t,
                           "ks_t_baseline": check.ks_t_baseline, "ks_beta": check.ks_beta,
                           "ks_beta_baseline": check.ks_beta_baseline})
        outputs.append(_write_frame(ks, out / "ks.csv"))
    if args.svg:
        _render_svg(out, pac, pairs, qq)
    print(f"suggested initial block size {l_I}")
    return outputs


def _render_svg(out: Path, pac, pairs, qq) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ValidationError("SVG output needs matplotlib (pip install 'artifact[plot]')") from exc
    plt.rcParams["svg.hashsalt"] = "mbbda"
    taxa = list(dict.fromkeys(pac["taxon"]))
    fig, axes = plt.subplots(1, max(1, len(taxa)), figsize=(3 * max(1, len(taxa)), 3), squeeze=False)
    for ax, taxon in zip(axes[0], taxa):
        for group, part in pac[pac["taxon"] == taxon].groupby("group", sort=True):
            ax.plot(part["lag"], part["pac"], marker="o", label=group)
        ax.axhline(0.25, ls=":", c="grey")
        ax.axhline(-0.25, ls=":", c="grey")
        ax.set_title(taxon)
        ax.set_xlabel("lag")
    axes[0][0].legend()
    fig.savefig(out / "pac.svg", metadata={"Date": None})
    plt.close(fig)
    lags = sorted(pairs["lag"].unique())
    fig, axes = plt.subplots(1, max(1, len(lags)), figsize=(3 * max(1, len(lags)), 3), squeeze=False)
    for ax, h in zip(axes[0], lags):
        part = pairs[pairs["lag"] == h]
        ax.scatter(part["x_t"], part["x_t_plus_h"], s=6)
        ax.set_title(f"lag {h}")
    fig.savefig(out / "lagpairs.svg", metadata={"Date": None})
    plt.close(fig)
    if qq is not None:
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.scatter(qq["t_original"], qq["t_perturbed"], s=4)
        lim = np.nanmax(np.abs(qq[["t_original", "t_perturbed"]].to_numpy()))
        ax.plot([-lim, lim], [-lim, lim], c="grey")
        ax.set_xlabel("T, original")
        ax.set_ylabel("T, perturbed")
        fig.savefig(out / "qq.svg", metadata={"Date": None})
        plt.close(fig)


def _sim_config(args):
    from .simulate import SimConfig

    overrides = {
        "m": args.m, "q": args.q, "n_per_group": args.n_per_group, "frac_da": args.frac_da,
        "da_fold": args.da_fold, "da_direction": args.da_direction, "generator": args.generator,
        "params_file": args.params_file, "seed": args.seed,
    }
    if args.dep_order is not None:
        overrides["dep_order"] = {"1": "order1", "2": "order2"}.get(args.dep_order, args.dep_order)
    if getattr(args, "runs", None) is not None:
        overrides["runs"] = args.runs
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.setting:
        return SimConfig.preset(args.setting, **overrides)
    return SimConfig(**overrides)


def cmd_simulate(args, out: Path, started: float) -> list:
    from .simulate import gen_setting

    cfg = _sim_config(args)
    ds, truth = gen_setting(cfg, args.run_index)
    counts, meta = ds.to_frames()
    counts_path = out / "counts.tsv"
    counts.to_csv(counts_path, sep="\t", lineterminator="\n")
    meta_path = _write_frame(meta, out / "meta.tsv", sep="\t")
    truth_path = _write_frame(pd.DataFrame({"taxon": ds.taxa_ids, "da": truth}), out / "truth.csv")
    print(f"simulated {ds.m} taxa x {ds.N} samples ({int(truth.sum())} differentially abundant)")
    args.sim_config = cfg.manifest()
    return [counts_path, meta_path, truth_path]


def cmd_bench(args, out: Path, started: float) -> list:
    from .benchmark import SELECTION_PRESETS, run_benchmark
    from .simulate import rates_at

    cfg = _sim_config(args)
    methods = tuple(dict.fromkeys(args.method or ("mbb", "mbs", "pis")))
    preset = SELECTION_PRESETS.get(args.setting or "", {})
    initial_block = args.initial_block or preset.get("initial_block")
    omega = args.omega if args.omega is not None else preset.get("omega")
    res = run_benchmark(
        cfg, methods, R=args.outer_reps, RR=args.inner_reps, initial_block=initial_block,
        omega=omega, candidates=args.candidates, block_size=args.block_size,
        threads=args.threads, pivot_se=args.pivot_se, scheme=args.scheme,
        shrinkage=args.shrinkage, freeze_size_factors=args.freeze_size_factors,
        rounding=args.rounding,
        progress=lambda r: logger.info("run %d done", r),
    )
    outputs = [_write_frame(res.roc_frame(), out / "roc.csv"),
               _write_frame(res.truth_frame(), out / "truth.csv")]
    if "mbb" in methods:
        outputs.append(_write_frame(res.block_size_frame(), out / "blocksizes.csv"))
    runs, m = res.truth.shape
    padj = pd.concat([
        pd.DataFrame({"method": name, "run": np.repeat(np.arange(runs), m),
                      "taxon": np.tile([f"taxon_{i + 1}" for i in range(m)], runs),
                      "p_adj": res.p_adj[name].ravel()})
        for name in methods], ignore_index=True)
    outputs.append(_write_frame(padj, out / "padj.csv"))
    for name in methods:
        fpr, tpr = np.nanmean([rates_at(res.p_adj[name][r], res.truth[r], 0.05)
                               for r in range(runs)], axis=0)
        print(f"{name}: FPR {fpr:.3f}, TPR {tpr:.3f} at FDR 0.05 over {runs} runs")
    args.sim_config = cfg.manifest()
    return outputs


# entry point ---------------------------------------------------------------------------

def _origin(exc: BaseException) -> str:
    tb = exc.__traceback__
    name = "mbbda"
    while tb is not None:
        module = tb.tb_frame.f_globals.get("__name__", "")
        if module.startswith("mbbda"):
            name = module
        tb = tb.tb_next
    return name


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "fit" and args.block_size is None and not args.auto_block:
        try:
            _subparser(parser, "fit").error("give --block-size or --auto-block")
        except SystemExit as exc:
            return int(exc.code)
    out = Path(args.out)
    started = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        outputs = args.handler(args, out, started)
        extra = {"simulation": args.sim_config} if hasattr(args, "sim_config") else None
        if extra:
            del args.sim_config
        write_manifest(out, args, outputs, started, extra)
    except (ValidationError, ValueError) as exc:
        print(f"error [{_origin(exc)}]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure [{_origin(exc)}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MbbError as exc:
        print(f"error [{_origin(exc)}]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
