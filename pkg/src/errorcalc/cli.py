"""Command-line runner: ``errorcalc run --experiment <id>`` and ``errorcalc list``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from .experiments import REGISTRY, REPORT_COLUMNS, ConfigError, Experiment, ExperimentConfig, ExperimentResult, run_experiment

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def list_experiments(registry: dict[str, Experiment] | None = None) -> list[dict]:
    registry = REGISTRY if registry is None else registry
    return [{"id": e.id, "anchor": e.anchor, "description": e.description} for e in registry.values()]


def format_table(rows: list[dict]) -> str:
    if not rows:
        return ""
    width = max(len(r["id"]) for r in rows)
    return "\n".join(f"{r['id']:<{width}}  {r['anchor']}" for r in rows) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(result: ExperimentResult, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in result.table():
            w.writerow([_cell(row.get(c)) for c in REPORT_COLUMNS])


def summary(result: ExperimentResult, cfg: ExperimentConfig, wall_time: float) -> dict:
    return {
        "experiment": result.experiment,
        "pass": result.passed,
        "criteria": [c.row() for c in result.criteria],
        "seed": cfg.seed,
        "samples": cfg.samples,
        "levels": list(cfg.levels),
        "wall_time": wall_time,
    }


def _parse_levels(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"--n expects an integer or a comma-separated list, got {text!r}") from None


def _parse_law(text: str) -> dict:
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--law: invalid JSON ({exc})") from None
    return {"kind": text}


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    doc: dict = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    experiment = args.experiment or doc.get("experiment")
    if not experiment:
        raise ConfigError(f"no experiment given; registered: {', '.join(REGISTRY)}")
    known = {"experiment", "scheme", "battery", "levels", "samples", "seed", "out", "workers", "tolerances"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    try:
        cfg = ExperimentConfig(
            experiment=experiment,
            scheme=doc.get("scheme"),
            battery=tuple(doc.get("battery", ())),
            levels=tuple(int(n) for n in doc.get("levels", ())),
            samples=int(doc.get("samples", 0)),
            seed=int(doc.get("seed", 0)),
            out=str(doc.get("out", "results")),
            workers=int(doc.get("workers", 1)),
            tolerances=dict(doc.get("tolerances", {})),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from None
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.samples is not None:
        over["samples"] = args.samples
    if args.n is not None:
        over["levels"] = _parse_levels(args.n)
    if args.workers is not None:
        over["workers"] = args.workers
    if args.out is not None:
        over["out"] = args.out
    cfg = replace(cfg, **over).validate(REGISTRY)
    if args.law is not None:
        exp = REGISTRY[cfg.experiment]
        if not exp.accepts_law:
            raise ConfigError(f"--law does not apply to {cfg.experiment}")
        cfg = replace(cfg, scheme={**cfg.scheme, "law": _parse_law(args.law)})
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = build_config(args)
        start = time.perf_counter()
        result = run_experiment(cfg)
        wall = time.perf_counter() - start
    except (ConfigError, ValueError) as exc:
        # ValueError here comes from scheme, law or level checks on the config values
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(result, out / f"{cfg.experiment}.csv")
    doc = summary(result, cfg, wall)
    (out / f"{cfg.experiment}.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if args.json:
        print(json.dumps(doc, indent=2))
    else:
        for c in result.criteria:
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.statistic!r} (threshold {c.threshold!r})")
        print(f"{cfg.experiment}: {'PASS' if result.passed else 'FAIL'} in {wall:.1f}s, seed {cfg.seed}")
    return EXIT_OK if result.passed else EXIT_FAIL


def cmd_list(args: argparse.Namespace) -> int:
    rows = list_experiments()
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        sys.stdout.write(format_table(rows))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="errorcalc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment and write <out>/<id>.csv and <out>/<id>.json")
    run.add_argument("--experiment", help="registered experiment id (see `list`)")
    run.add_argument("--config", help="JSON config file; flags override its fields")
    run.add_argument("--seed", type=int, help="root seed, unsigned 64-bit")
    run.add_argument("--samples", type=int, help="Monte Carlo sample count N")
    run.add_argument("--n", help="level or comma-separated levels")
    run.add_argument("--workers", type=int, help="parallel sampling workers")
    run.add_argument("--out", help="output directory (default: results)")
    run.add_argument("--law", help="law of Y for graduation experiments: normal, uniform or a JSON object")
    run.add_argument("--json", action="store_true", help="print the summary as JSON")
    run.set_defaults(func=cmd_run)
    ls = sub.add_parser("list", help="list registered experiments")
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
