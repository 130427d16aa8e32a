"""Command-line entry points.

Four subcommands share a small set of flags:

    selectivebayes simulate   --config cfg.ini --seed 3 --out-dir out/
    selectivebayes fit        --config cfg.ini --seed 3 --out-dir out/
    selectivebayes experiment --config cfg.ini --seed 3 --workers 4 --out-dir out/
    selectivebayes report     --out-dir out/ --format csv

``simulate`` writes the generated dataset (and the generating parameters)
without fitting anything.  ``fit`` runs a single constrained fit and
``experiment`` runs the full multi-trial pipeline; both leave a
``report.json`` in the output directory.  ``report`` re-renders an existing
``report.json`` to stdout, optionally flattened to CSV.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import pathlib
import sys

from .ingest import ingest_csv, write_csv
from .reports import ReportDocument, dumps_stable
from .runconfig import RunConfig, load_config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selectivebayes")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "fit", "experiment", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to an INI config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--trials", type=int, default=None,
                       help="override the configured trial count")
        p.add_argument("--out-dir", default=".")
        p.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def _load(args) -> RunConfig:
    if args.config is None:
        raise SystemExit(f"{args.command}: --config is required")
    return load_config(
        args.config, seed=args.seed, workers=args.workers, trials=args.trials
    )


def _out_dir(args) -> pathlib.Path:
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _theta_dict(theta) -> dict:
    out = {}
    for field in dataclasses.fields(theta):
        out[field.name] = getattr(theta, field.name)
    return out


def cmd_simulate(args) -> int:
    from .synthgen import generate

    config = _load(args)
    out = _out_dir(args)
    data, theta = generate(config.gen_config())
    write_csv(out / "dataset.csv", data)
    doc = ReportDocument(
        seed=config.seed,
        config=config.raw,
        body={"command": "simulate", "n": data.n, "truth": _theta_dict(theta)},
    )
    (out / "truth.json").write_bytes(doc.to_json().encode())
    print(f"wrote {out / 'dataset.csv'} ({data.n} rows)")
    return 0


def cmd_fit(args) -> int:
    from .experiment import fit_single

    config = _load(args)
    out = _out_dir(args)
    data = None
    csv_path = config.data.get("csv")
    if csv_path:
        data = ingest_csv(csv_path)
    report, _ = fit_single(config, data=data, out_dir=out)
    if args.format == "csv":
        _write_fit_csv(out, report)
    print(f"wrote {out / 'report.json'}")
    return 0


def _write_fit_csv(out: pathlib.Path, report: ReportDocument) -> None:
    rows = report.body.get("posterior", [])
    with open(out / "posterior.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "mean", "sd", "q2_5", "q97_5", "rhat", "ess_bulk"])
        for row in rows:
            writer.writerow([row["name"]] + [repr(float(row[k])) for k in
                            ("mean", "sd", "q2_5", "q97_5", "rhat", "ess_bulk")])
    scores = report.body.get("scores", {})
    with open(out / "scores.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p_y1", "p_t1"])
        for a, b in zip(scores.get("p_y1", []), scores.get("p_t1", [])):
            writer.writerow([repr(float(a)), repr(float(b))])


def cmd_experiment(args) -> int:
    from .experiment import run_experiment

    config = _load(args)
    out = _out_dir(args)
    run_experiment(config, out_dir=out)
    print(f"wrote {out / 'report.json'} and {out / 'trials.csv'}")
    return 0


def cmd_report(args) -> int:
    path = pathlib.Path(args.out_dir) / "report.json"
    if not path.exists():
        raise SystemExit(f"report: {path} not found")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if args.format == "json":
        sys.stdout.write(dumps_stable(doc) + "\n")
        return 0
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["key", "value"])
    for key, value in _flatten(doc):
        writer.writerow([key, value])
    sys.stdout.write(buf.getvalue())
    return 0


def _flatten(obj, prefix=""):
    """Depth-first (key, scalar) pairs with dotted path keys."""
    if isinstance(obj, dict):
        for key, value in obj.items():
            yield from _flatten(value, f"{prefix}{key}.")
    elif isinstance(obj, list):
        for i, value in enumerate(obj):
            yield from _flatten(value, f"{prefix}{i}.")
    else:
        yield prefix.rstrip("."), obj


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "simulate": cmd_simulate,
        "fit": cmd_fit,
        "experiment": cmd_experiment,
        "report": cmd_report,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    raise SystemExit(main())
