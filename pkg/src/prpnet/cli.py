"""Command line entry point: ``prpnet <verb> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as data_mod
from .experiments import (
    EXPERIMENTS,
    build_model,
    export_curves,
    load_result_checkpoint,
    load_results,
    load_spec_file,
    reconstruct_samples,
    report,
    resolve_spec,
    run_experiment,
)
from .training import lr_range_test


def _csv_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _seed_list(value: str) -> list[int]:
    return [int(v) for v in _csv_list(value)]


def _add_spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--experiment", choices=sorted(EXPERIMENTS))
    p.add_argument("--config", help="YAML experiment file; flags override its values")
    p.add_argument("--profile", help="reduced protocol, e.g. 'ci'")
    p.add_argument("--models", type=_csv_list, help="comma list of prp,dense,lowrank")
    p.add_argument("--seeds", type=_seed_list, help="comma list of integer seeds")
    p.add_argument("--data-dir", help=f"dataset root (default ${data_mod.DATA_DIR_ENV} or ./data)")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--lr", type=float, help="skip the range test and use this learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--init-scheme", choices=["gaussian", "ternary", "ternary-achlioptas", "orthogonal"])


def _spec_from_args(args):
    overrides = {
        "models": args.models,
        "seeds": args.seeds,
        "data_dir": args.data_dir,
        "out_dir": args.out_dir,
        "lr": args.lr,
        "epochs": args.epochs,
        "init_scheme": args.init_scheme,
    }
    if args.config:
        return load_spec_file(args.config, profile=args.profile, **overrides)
    if not args.experiment:
        raise SystemExit("either --experiment or --config is required")
    return resolve_spec(args.experiment, profile=args.profile, **overrides)


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    results = run_experiment(spec)
    for r in results:
        mean = r["aggregate"]["mean"]
        summary = ", ".join(f"{k}={v:.4g}" for k, v in sorted(mean.items()))
        print(f"{spec.experiment}/{r['model_kind']}: params={r['param_count']} lr={r['learning_rate']:.4g} "
              f"{summary} -> {r['_path']}")
        if r["failed_seeds"]:
            print(f"  aborted seeds: {r['failed_seeds']}")
    return 0


def cmd_range_test(args) -> int:
    spec = _spec_from_args(args)
    from .experiments import load_data

    seed = spec.seeds[0]
    train_set, _ = load_data(spec, seed)
    out = {}
    for kind in spec.models:
        res = lr_range_test(lambda: build_model(spec, kind, seed), train_set, spec.lr_min, spec.lr_max,
                            spec.range_steps, seed, spec.loss, spec.batch_size)
        out[kind] = res.as_dict()
        print(f"{kind}: chosen lr {res.chosen_lr:.4g} ({len(res.lrs)} steps, truncated at {res.truncated_at})")
    if args.output:
        Path(args.output).write_text(json.dumps(out, indent=1))
    return 0


def cmd_report(args) -> int:
    print(report(args.results_dir, csv_path=args.csv))
    return 0


def cmd_export_curves(args) -> int:
    results, _ = load_results(args.results_dir)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in results:
        if args.experiment and r["spec"]["experiment"] != args.experiment:
            continue
        path = out_dir / f"{r['spec']['experiment']}-{r['model_kind']}-seed{r['per_seed'][args.seed_index]['seed']}.csv"
        export_curves(r, path, args.seed_index)
        print(path)
    return 0


def cmd_reconstruct(args) -> int:
    results, _ = load_results(args.results_dir)
    results = [r for r in results if r["spec"]["experiment"] == "autoencoder"]
    if not results:
        raise SystemExit(f"no autoencoder results in {args.results_dir}")
    results.sort(key=lambda r: ["prp", "dense", "lowrank"].index(r["model_kind"]))
    models = {r["model_kind"]: load_result_checkpoint(r) for r in results}
    spec = resolve_spec("autoencoder", data_dir=args.data_dir)
    from .experiments import load_data

    _, test_set = load_data(spec, 0)
    _, mse = reconstruct_samples(models, test_set, args.n, path=args.output)
    for label, value in mse.items():
        print(f"{label}: reconstruction MSE on {args.n} samples = {value:.4f}")
    print(args.output)
    return 0


def cmd_fetch(args) -> int:
    from .fetch import fetch_dataset

    for name in args.datasets:
        for path in fetch_dataset(name, args.data_dir or data_mod.default_data_dir()):
            print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prpnet", description="PRP layer experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="range test + multi-seed training")
    _add_spec_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("range-test", help="stage 1 only")
    _add_spec_args(p)
    p.add_argument("--output", help="write sweep curves as JSON")
    p.set_defaults(func=cmd_range_test)

    p = sub.add_parser("report", help="render tables from result files")
    p.add_argument("results_dir")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-curves", help="per-epoch loss CSVs")
    p.add_argument("results_dir")
    p.add_argument("--output", default="curves")
    p.add_argument("--experiment")
    p.add_argument("--seed-index", type=int, default=0)
    p.set_defaults(func=cmd_export_curves)

    p = sub.add_parser("reconstruct", help="autoencoder reconstruction grid as PGM")
    p.add_argument("results_dir")
    p.add_argument("--data-dir")
    p.add_argument("-n", type=int, default=8)
    p.add_argument("--output", default="reconstructions.pgm")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("fetch-data", help="download MNIST / Fashion-MNIST IDX files")
    p.add_argument("datasets", nargs="*", default=["mnist", "fashion"])
    p.add_argument("--data-dir")
    p.set_defaults(func=cmd_fetch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
