"""Command-line front end. Each subcommand wraps one stage and talks through files."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .dataset import DEFAULT_TRAIN_FRACTION, build_windows, chronological_split, write_dataset_csv
from .errors import InputError, StageError, TrainingError
from .evaluation import (
    DEFAULT_PFA_TARGETS,
    ScoreMatrix,
    evaluate,
    k_sweep,
    prediction_strip,
    write_ksweep_csv,
    write_per_bin_csv,
    write_scatter_csv,
    write_strip_csv,
)
from .methods import METHODS, fit, load_model, make_params, method_of, model_K, params_dict, predict_scores, save_model
from .occupancy import compute_occupancy, read_grid, read_sweep_csv, write_grid_csv, write_grid_hex, write_sweep_csv
from .pipeline import (
    DEFAULT_SEED,
    RunConfig,
    dataset_summary,
    default_out_root,
    labels_for,
    read_meta,
    read_scores_csv,
    run_pipeline,
    test_windows,
    write_meta,
    write_scores_csv,
)
from .synthgen import gen_band, gen_sweep, load_band_spec


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _json_dict(text: str) -> dict:
    if Path(text).is_file():
        text = Path(text).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"--params is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise argparse.ArgumentTypeError("--params must be a JSON object")
    return d


def _existing(text: str) -> str:
    if not Path(text).exists():
        raise argparse.ArgumentTypeError(f"no such file: {text}")
    return text


def _cli_provenance(args, **extra) -> dict:
    keep = {k: v for k, v in vars(args).items() if k not in ("func", "n_jobs")}
    return {"command": args.command, "args": keep, "version": __version__, **extra}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> None:
    band = load_band_spec(args.spec)
    grid = gen_band(band)
    if args.format == "hex":
        write_grid_hex(grid, args.out)
    else:
        write_grid_csv(grid, args.out)
    write_meta(args.out, _cli_provenance(args), band=band.to_dict())
    if args.sweep_out:
        write_sweep_csv(gen_sweep(band, grid), args.sweep_out)
    print(f"wrote {grid.F} bins x {grid.T} minutes to {args.out}")


def cmd_occupancy(args) -> None:
    sweep = read_sweep_csv(args.sweep)
    grid = compute_occupancy(sweep, args.bin_width_hz, args.threshold_dbm, args.n_bins)
    write_grid_csv(grid, args.out)
    write_meta(args.out, _cli_provenance(args))
    print(f"wrote {grid.F} bins x {grid.T} minutes to {args.out}")


def cmd_windows(args) -> None:
    grid = read_grid(args.grid, args.bin_width_hz)
    train, test = chronological_split(grid, args.train_fraction, args.k)
    part = {"all": grid, "train": train, "test": test}[args.split]
    ds = build_windows(part, args.k)
    summary = dataset_summary(grid, args.k, args.train_fraction)
    if args.out:
        write_dataset_csv(ds, args.out)
        write_meta(args.out, _cli_provenance(args), summary=summary)
    print(json.dumps(summary, sort_keys=True, indent=2))


def cmd_train(args) -> None:
    grid = read_grid(args.grid, args.bin_width_hz)
    train, _ = chronological_split(grid, args.train_fraction, args.k)
    params = make_params(args.method, args.params, args.seed)
    model = fit(args.method, train, args.k, params, args.seed, args.n_jobs)
    save_model(model, args.out, _cli_provenance(args, params=params_dict(params)))
    print(f"wrote {args.method} model to {args.out}")


def _model_setting(prov: dict | None, key: str):
    return ((prov or {}).get("args") or {}).get(key) or ((prov or {}).get("config") or {}).get(key)


def cmd_predict(args) -> None:
    model, prov = load_model(args.model)
    K = model_K(model) or args.k or _model_setting(prov, "k") or _model_setting(prov, "K") or 10
    frac = args.train_fraction or _model_setting(prov, "train_fraction") or DEFAULT_TRAIN_FRACTION
    grid = read_grid(args.grid, args.bin_width_hz)
    ds = test_windows(grid, K, frac)
    scores = predict_scores(model, ds)
    write_scores_csv(ds.origin_minutes, scores, args.out)
    write_meta(args.out, _cli_provenance(args, model=prov), method=method_of(model), K=K)
    print(f"wrote {ds.N} x {ds.F} scores to {args.out}")


def _score_matrix(args) -> ScoreMatrix:
    grid = read_grid(args.grid, args.bin_width_hz)
    minutes, scores = read_scores_csv(args.scores)
    meta = read_meta(args.scores)
    if scores.shape[1] != grid.F:
        raise InputError(f"scores have {scores.shape[1]} bins but the grid has {grid.F}")
    return ScoreMatrix(scores, labels_for(grid, minutes), meta.get("method", "unknown"), meta.get("K", 0), minutes)


def cmd_eval(args) -> None:
    sm = _score_matrix(args)
    report = evaluate(
        sm, args.pfa, args.min_transitions, args.imbalance_bound,
        provenance=_cli_provenance(args, scores=read_meta(args.scores).get("provenance")),
    )
    body = report.to_json()
    if args.out:
        Path(args.out).write_text(body, encoding="utf-8")
    if args.tables:
        tables = Path(args.tables)
        tables.mkdir(parents=True, exist_ok=True)
        write_per_bin_csv(report, tables / "per_bin_accuracy.csv")
        write_scatter_csv(report, tables / "accuracy_vs_rate.csv")
    print(body if not args.out else f"wrote report to {args.out}")


def cmd_sweep_k(args) -> None:
    grid = read_grid(args.grid, args.bin_width_hz)
    methods = METHODS if args.method == "all" else tuple(args.method.split(","))
    results = {}
    for m in methods:
        results[m] = k_sweep(grid, m, args.ks, args.train_fraction, args.params if len(methods) == 1 else None,
                             args.seed, args.n_jobs)
        print(m, " ".join(f"K={k}:{a:.4f}" for k, a in results[m].items()))
    write_ksweep_csv(results, args.out)
    write_meta(args.out, _cli_provenance(args))


def cmd_report(args) -> None:
    sm = _score_matrix(args)
    rows = prediction_strip(sm, args.minute)
    write_strip_csv(rows, args.out)
    write_meta(args.out, _cli_provenance(args))
    print(f"wrote {len(rows)}-bin strip for minute {args.minute} to {args.out}")


def cmd_run(args) -> None:
    if args.config:
        config = RunConfig.load(args.config)
        if args.out:
            config.out = args.out
    else:
        config = RunConfig(
            spec=args.spec, grid=args.grid, sweep=args.sweep, bin_width_hz=args.bin_width_hz,
            threshold_dbm=args.threshold_dbm, K=args.k, train_fraction=args.train_fraction,
            method=args.method, params=args.params, seed=args.seed,
            out=args.out or str(default_out_root() / args.method), pfa=args.pfa,
        )
    report = run_pipeline(config, args.n_jobs)
    pd = ", ".join(f"Pd@{k}=" + (f"{v['pd']:.4f}" if v else "n/a") for k, v in report.pd_at.items())
    print(f"{report.method} K={report.K}: accuracy={report.average_accuracy:.4f} "
          f"balanced={report.balanced_accuracy:.4f} {pd} -> {config.out}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occpred", description="Spectrum occupancy prediction pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        return sp

    def grid_opts(sp, required=True):
        sp.add_argument("--grid", type=_existing, required=required, help="occupancy grid (CSV or hex)")
        sp.add_argument("--bin-width-hz", type=float, default=5e6)

    def split_opts(sp, k_default=10, frac_default=DEFAULT_TRAIN_FRACTION):
        sp.add_argument("--k", type=int, default=k_default, help="history length in minutes")
        sp.add_argument("--train-fraction", type=float, default=frac_default)

    def model_opts(sp, methods=METHODS):
        sp.add_argument("--method", choices=methods, default="markov")
        sp.add_argument("--params", type=_json_dict, default={}, help="JSON object (or file) of hyperparameters")
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--n-jobs", type=int, default=1, help="worker threads for per-bin training")

    sp = add("synth", cmd_synth, "generate a synthetic grid from a band spec")
    sp.add_argument("--spec", type=_existing, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=("csv", "hex"), default="csv")
    sp.add_argument("--sweep-out", help="also write the matching power sweep CSV")

    sp = add("occupancy", cmd_occupancy, "threshold a power sweep into an occupancy grid")
    sp.add_argument("--sweep", type=_existing, required=True)
    sp.add_argument("--threshold-dbm", type=float, required=True)
    sp.add_argument("--bin-width-hz", type=float, default=5e6)
    sp.add_argument("--n-bins", type=int)
    sp.add_argument("--out", required=True)

    sp = add("windows", cmd_windows, "build sliding windows and summarize the split")
    grid_opts(sp)
    split_opts(sp)
    sp.add_argument("--split", choices=("all", "train", "test"), default="all")
    sp.add_argument("--out", help="dataset CSV to write")

    sp = add("train", cmd_train, "fit a model on the training split")
    grid_opts(sp)
    split_opts(sp)
    model_opts(sp)
    sp.add_argument("--out", required=True)

    sp = add("predict", cmd_predict, "score the test split with a saved model")
    grid_opts(sp)
    sp.add_argument("--model", type=_existing, required=True)
    split_opts(sp, k_default=None, frac_default=None)
    sp.add_argument("--out", required=True)

    for name, func, help_ in (
        ("eval", cmd_eval, "compute the metric suite for a scores file"),
        ("report", cmd_report, "truth/prediction strip for one minute"),
    ):
        sp = add(name, func, help_)
        grid_opts(sp)
        sp.add_argument("--scores", type=_existing, required=True)
        if name == "eval":
            sp.add_argument("--pfa", type=_float_list, default=list(DEFAULT_PFA_TARGETS))
            sp.add_argument("--min-transitions", type=int, default=50)
            sp.add_argument("--imbalance-bound", type=float, default=0.01)
            sp.add_argument("--tables", help="directory for per-bin and scatter CSVs")
            sp.add_argument("--out")
        else:
            sp.add_argument("--minute", type=int, required=True)
            sp.add_argument("--out", required=True)

    sp = add("sweep-k", cmd_sweep_k, "average accuracy versus history length")
    grid_opts(sp)
    sp.add_argument("--method", default="markov", help=f"one of {METHODS}, a comma list, or 'all'")
    sp.add_argument("--ks", type=_int_list, default=[1, 5, 10, 20, 30, 60])
    sp.add_argument("--train-fraction", type=float, default=DEFAULT_TRAIN_FRACTION)
    sp.add_argument("--params", type=_json_dict, default={})
    sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sp.add_argument("--n-jobs", type=int, default=1)
    sp.add_argument("--out", required=True)

    sp = add("run", cmd_run, "run every stage end to end")
    sp.add_argument("--config", type=_existing, help="RunConfig JSON; other input flags are ignored")
    sp.add_argument("--spec", type=_existing)
    grid_opts(sp, required=False)
    sp.add_argument("--sweep", type=_existing)
    sp.add_argument("--threshold-dbm", type=float)
    split_opts(sp)
    model_opts(sp)
    sp.add_argument("--pfa", type=_float_list, default=list(DEFAULT_PFA_TARGETS))
    sp.add_argument("--out", help="output directory (default: $OCCPRED_OUT/<method>, else runs/<method>)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "sweep-k":
        bad = [m for m in args.method.split(",") if m not in METHODS + ("all",)]
        if bad:
            parser.error(f"unknown method(s) {bad}")
    try:
        args.func(args)
    except StageError as exc:
        print(f"occpred: stage '{exc.stage}' failed: {exc.cause}", file=sys.stderr)
        return 1
    except (InputError, TrainingError, OSError, ValueError) as exc:
        print(f"occpred: stage '{args.command}' failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
