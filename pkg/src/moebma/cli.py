"""Command-line entry point: ``moebma <subcommand> ...``.

Exit codes: 0 success, 1 a model/cell failed, 2 bad configuration or input.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from moebma import checkpoint, harness, models, plot, vcdim
from moebma.datagen import generate
from moebma.harness import CellFailure, ConfigError

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def cmd_gen_data(args) -> int:
    train, test, spec = generate(args.kind, args.degree, args.n_train, args.n_test, args.seed)
    out = checkpoint.save_split_dir(args.out or harness.default_output_dir() / f"{args.kind}-deg{args.degree}",
                                    train, test, spec)
    print(f"wrote {out}/train.csv ({len(train)} rows), {out}/test.csv ({len(test)} rows), {out}/spec.txt")
    return EXIT_OK


def _model_id(args) -> str:
    if args.experts is not None:
        return f"moe-{args.experts}"
    if args.model is None:
        raise ConfigError("give --model or --experts")
    return args.model


def cmd_train(args) -> int:
    train, _, spec = checkpoint.load_split_dir(args.data)
    model_id = _model_id(args)
    kind = harness.kind_of(model_id)
    if kind is not None and kind != spec.kind:
        raise ConfigError(f"model {model_id!r} cannot be trained on {spec.kind} data")
    try:
        fitted = harness.fit_model(model_id, train, args.seed, spec.kind)
    except Exception as exc:
        raise CellFailure(model_id, spec.degree, exc) from exc
    out = Path(args.out or harness.default_output_dir() / f"{model_id}-deg{spec.degree}.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save_model(fitted, out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _, test, spec = checkpoint.load_split_dir(args.data)
    fitted = checkpoint.load_model(args.model)
    rec = harness.evaluate(args.name or Path(args.model).stem, fitted, test, spec, spec.degree,
                           args.seed, args.seed, args.risk_samples)
    sys.stdout.write(models.records_to_csv([rec]))
    return EXIT_OK


def cmd_run_suite(args) -> int:
    file_values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        file_values = harness.parse_config_text(path.read_text(), str(path))
    flags = {
        "suite": args.suite,
        "degrees": _ints(args.degree) if args.degree else None,
        "models": args.models.split(",") if args.models else None,
        "seed": args.seed,
        "out": args.out,
        "n_train": args.n_train,
        "n_test": args.n_test,
        "risk_samples": args.risk_samples,
        "workers": args.workers,
        "inline_timings": True if args.inline_timings else None,
    }
    if args.experts:
        flags["models"] = [m for m in (flags["models"] or harness.DEFAULT_ROSTER.get(
            flags["suite"] or file_values.get("suite", ""), ())) if harness.moe_experts(m) is None]
        flags["models"] += [f"moe-{e}" for e in _ints(args.experts)]
    cfg = harness.build_config(file_values, flags)
    if cfg.out is None:
        cfg.out = harness.default_output_dir()
    result = harness.run_suite(cfg)
    print(harness.summarize(result))
    print(f"wrote {cfg.out / (cfg.suite + '.csv')}")
    return EXIT_OK


def cmd_verify(args) -> int:
    family = vcdim.family_by_name(args.family)
    report = vcdim.verify_proposition(args.n, family, max_m=args.max_m, seed=args.seed)
    print(report.text())
    return EXIT_OK if report.ok else EXIT_FAILURE


def cmd_plot(args) -> int:
    records = models.records_from_csv(Path(args.csv).read_text())
    svg = plot.line_chart(records, args.metric, args.title or f"{args.metric} vs degree")
    out = Path(args.out or Path(args.csv).with_suffix(f".{args.metric}.svg"))
    out.write_text(svg)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moebma", description=__doc__.splitlines()[0],
                                allow_abbrev=False)
    p.add_argument("--verbose", action="store_true", help="log per-cell progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a train/test split", allow_abbrev=False)
    g.add_argument("--kind", choices=("regression", "classification"), required=True)
    g.add_argument("--degree", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-train", type=int, default=10000)
    g.add_argument("--n-test", type=int, default=2000)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fit one model on a generated split", allow_abbrev=False)
    t.add_argument("--data", required=True, help="directory written by gen-data")
    t.add_argument("--model", help="blr | sghmc-lr | vi-lr | moe-N")
    t.add_argument("--experts", type=int, help="shorthand for --model moe-N")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split's test set", allow_abbrev=False)
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True, help="checkpoint path")
    e.add_argument("--name", help="model id for the CSV row")
    e.add_argument("--seed", type=int, default=0, help="seed for the risk Monte-Carlo stream")
    e.add_argument("--risk-samples", type=int, default=models.DEFAULT_RISK_SAMPLES)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("run-suite", help="run a full experiment suite", allow_abbrev=False)
    r.add_argument("--suite", choices=harness.SUITES)
    r.add_argument("--config", help="key=value configuration file; flags override it")
    r.add_argument("--degree", help="comma-separated degrees")
    r.add_argument("--models", help="comma-separated model ids")
    r.add_argument("--experts", help="comma-separated expert counts for the mixture roster")
    r.add_argument("--seed", type=int)
    r.add_argument("--n-train", type=int)
    r.add_argument("--n-test", type=int)
    r.add_argument("--risk-samples", type=int)
    r.add_argument("--workers", type=int)
    r.add_argument("--inline-timings", action="store_true",
                   help="fill the seconds column (makes the CSV run-dependent)")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run_suite)

    v = sub.add_parser("verify-proposition", help="exhaustive shattering check of the translated construction",
                       allow_abbrev=False)
    v.add_argument("--n", type=int, required=True, help="number of experts")
    v.add_argument("--family", default="affine-thresholds", choices=sorted(vcdim.FAMILIES))
    v.add_argument("--max-m", type=int, default=8)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plot", help="SVG line chart of a metric from a suite CSV", allow_abbrev=False)
    pl.add_argument("--csv", required=True)
    pl.add_argument("--metric", default="mse", choices=("mse", "nll", "accuracy", "risk"))
    pl.add_argument("--title")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CellFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ConfigError, checkpoint.ParseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
