"""Command line entry point: ``sqem sweep|single|optimize|validate``.

Exit codes: 0 success, 2 configuration error, 3 some rows failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .channels import CHANNEL_FAMILIES, no_error_probability
from .corrector import OptimizerConfig, optimize_corrections
from .protocol import NoiselessChannelError, default_selection, execute, figures_of_merit, spec_omegas
from .qstate import ValidationError
from .sweep import ConfigError, build_spec, fmt, load_config, rows_to_csv, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_validate(args) -> int:
    try:
        sweep = load_config(args.config)
    except ConfigError as exc:
        _err(f"{args.config}: {exc}")
        return EXIT_CONFIG
    print(f"ok: {sweep.scenario}, {len(sweep.points())} grid points")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        sweep = load_config(args.config, seed=args.seed)
    except ConfigError as exc:
        _err(f"{args.config}: {exc}")
        return EXIT_CONFIG
    result = run_sweep(sweep, workers=args.workers)
    out = Path(args.output)
    out.write_text(rows_to_csv(result.rows, timing=not args.no_timing))
    manifest_path = Path(args.manifest) if args.manifest else out.with_suffix(".manifest.json")
    manifest = dict(result.manifest, config=str(args.config), output=str(out))
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for e in result.errors:
        _err(f"row {e['row']}: {e['error']}")
    print(f"wrote {len(result.rows)} rows to {out} ({len(result.errors)} errors)")
    return EXIT_PARTIAL if result.errors else EXIT_OK


def cmd_single(args) -> int:
    point = {
        "scenario": "probabilistic",
        "gate": args.gate,
        "family": args.channel,
        "p_ne": args.p_ne,
        "d": args.d,
        "aux": args.aux,
        "base_dir": None,
    }
    try:
        spec = build_spec(point)
        run = execute(spec, args.engine)
    except ValidationError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    selected = set(default_selection(spec.d))
    print(f"{'outcome':<14}{'control':>8}  {'probability':>24}  {'fidelity':>24}  kept")
    for rec in sorted(run.records, key=lambda r: (-r.probability, r.key)):
        if rec.probability <= args.min_probability:
            continue
        sign = "+-"[rec.key.control] if spec.d == 2 else str(rec.key.control)
        flag = "*" if rec.key in selected else ""
        print(f"{rec.key.label(spec.d):<14}{sign:>8}  {fmt(rec.probability):>24}  {fmt(rec.fidelity):>24}  {flag}")
    fm = figures_of_merit(run)
    try:
        om1, om2 = spec_omegas(spec)
    except NoiselessChannelError as exc:
        om1, om2 = math.nan, exc.omega2
    print(
        f"P={fmt(fm.P)} R={fmt(fm.R)} F_CJ={fmt(fm.F_CJ)} F0_CJ={fmt(fm.F0_CJ)} "
        f"omega1={fmt(om1)} omega2={fmt(om2)} engine={run.engine}"
    )
    return EXIT_OK


def cmd_optimize(args) -> int:
    try:
        sweep = load_config(args.config, seed=args.seed)
    except ConfigError as exc:
        _err(f"{args.config}: {exc}")
        return EXIT_CONFIG
    docs = []
    status = EXIT_OK
    for point in sweep.points():
        point = dict(point, scenario="quasi_deterministic")
        try:
            spec = build_spec(point)
            cfg = OptimizerConfig(threshold=sweep.threshold, seed=sweep.seed, **sweep.optimizer)
            table = optimize_corrections(spec, cfg, execute(spec, "bruteforce" if sweep.engine == "bruteforce" else "auto"))
        except ValidationError as exc:
            _err(f"{point['aux']} d={point['d']} p_ne={point['p_ne']}: {exc}")
            status = EXIT_PARTIAL
            continue
        doc = {
            "gate": point["gate"] if isinstance(point["gate"], str) else point["gate"].get("name", "custom"),
            "channel": point["family"],
            "p_ne": point["p_ne"],
            "F0_CJ": no_error_probability(spec.channel),
            "d": point["d"],
            "aux": point["aux"],
            "threshold": sweep.threshold,
            "seed": sweep.seed,
            **table.to_json(),
        }
        docs.append(doc)
    payload = docs[0] if len(docs) == 1 else docs
    text = json.dumps(payload, indent=2)
    if args.output:
        Path(args.output).write_text(text)
        print(f"wrote {len(docs)} correction table(s) to {args.output}")
    else:
        print(text)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run a parameter sweep and write CSV + manifest")
    p.add_argument("config")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--workers", type=int, help="worker processes (default: $SQEM_WORKERS or 1)")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the ms column (byte-stable output)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("single", help="run one configuration and print every outcome")
    p.add_argument("--gate", default="cnot")
    p.add_argument("--channel", default="dephasing", choices=CHANNEL_FAMILIES)
    p.add_argument("--p-ne", type=float, default=0.9)
    p.add_argument("-d", "--d", type=int, default=2)
    p.add_argument("--aux", default="choi")
    p.add_argument("--engine", default="auto", choices=["auto", "bruteforce", "closed_form"])
    p.add_argument("--min-probability", type=float, default=1e-12, help="hide outcomes at or below this")
    p.set_defaults(func=cmd_single)

    p = sub.add_parser("optimize", help="optimise correction unitaries and write them as JSON")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("validate", help="check a config against the schema")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
