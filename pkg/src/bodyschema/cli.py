"""Command-line interface: generate, train, run, report.

Exit codes: 0 success, 2 usage error, 3 numerical divergence,
4 missing or mismatched artifact.  The default output root comes from
the BODYSCHEMA_RUNS environment variable (falling back to ./runs).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .estimator import DivergenceError
from .harness import (MissingArtifactError, UsageError, cmd_generate,
                      cmd_report, cmd_run, cmd_train, resolve_spec)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGENCE = 3
EXIT_MISSING = 4


def _split_overrides(text: str) -> list[str]:
    """Split on commas that are not nested inside JSON brackets."""
    items, depth, start = [], 0, 0
    for i, c in enumerate(text):
        if c in "[{":
            depth += 1
        elif c in "]}":
            depth -= 1
        elif c == "," and depth == 0:
            items.append(text[start:i])
            start = i + 1
    items.append(text[start:])
    return [s for s in items if s.strip()]


def _parse_overrides(text: str | None) -> dict:
    if not text:
        return {}
    out = {}
    for item in _split_overrides(text):
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def _default_out(args: argparse.Namespace) -> Path:
    if args.out:
        return Path(args.out)
    root = Path(os.environ.get("BODYSCHEMA_RUNS", "runs"))
    name = getattr(args, "spec", None) or "run"
    return root / Path(name).stem


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bodyschema",
        description="Multisensory body estimation experiments on a simulated 3-DOF arm.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write dataset files for an experiment")
    g.add_argument("--spec", required=True,
                   help="preset name (ablation, nonlinear_proprio, damaged_sensor, "
                        "prior_bias, rubber_hand, custom) or a spec JSON file")
    g.add_argument("--out", help="run directory (default $BODYSCHEMA_RUNS/<spec>)")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--overrides", help="comma-separated key=value spec overrides")

    t = sub.add_parser("train", help="train the visual forward model for a run dir")
    t.add_argument("--out", required=True, help="run directory")

    r = sub.add_parser("run", help="execute estimation arms over a run dir")
    r.add_argument("--out", required=True, help="run directory")
    r.add_argument("--channels", help="comma-separated arm labels to run (default all)")

    rep = sub.add_parser("report", help="aggregate metrics and render figures")
    rep.add_argument("run_dirs", nargs="+", help="completed run directories")
    rep.add_argument("--out", required=True, help="report output directory")
    rep.add_argument("--no-figures", action="store_true",
                     help="emit tables only")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            spec = resolve_spec(args.spec, seed=args.seed,
                                overrides=_parse_overrides(args.overrides))
            outdir = cmd_generate(spec, _default_out(args))
            print(f"dataset written to {outdir}")
        elif args.command == "train":
            cmd_train(args.out)
            print(f"visual model trained in {args.out}")
        elif args.command == "run":
            arms = args.channels.split(",") if args.channels else None
            reports = cmd_run(args.out, arms=arms)
            for label, rep in reports.items():
                print(f"{label}: rmse_total={rep.rmse_total:.4f} "
                      f"convergence={rep.convergence_time_s}")
        elif args.command == "report":
            path = cmd_report(args.run_dirs, args.out,
                              render_figures=not args.no_figures)
            print(f"report written to {path}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DivergenceError as exc:
        print(f"error: {exc} (step {exc.step_index})", file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
