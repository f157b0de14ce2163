"""Command-line front end.

Commands:
  run <config> [--paths N] [--seed S] [--alpha A|opt] [--dry-run] [--out DIR]
  certify <config>
  batch <dir>

Exit codes: 0 = verdict holds, 2 = verdict fails, 1 = execution error. The
default output directory can be set via the CONTRACTING_SDE_OUT environment
variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError
from .scenarios import ScenarioConfig, parse_config, resolve_output_dir, run_scenario

EXIT_HOLDS = 0
EXIT_ERROR = 1
EXIT_FAILS = 2


def _load(path: str) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from exc
    return parse_config(text)


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    data = dict(cfg.data)
    if getattr(args, "paths", None) is not None:
        data["n_paths"] = args.paths
    if getattr(args, "seed", None) is not None:
        data["master_seed"] = args.seed
    if getattr(args, "alpha", None) is not None:
        data["alpha_policy"] = "opt" if args.alpha == "opt" else float(args.alpha)
    if getattr(args, "workers", None) is not None:
        data["n_workers"] = args.workers
    return ScenarioConfig(kind=cfg.kind, data=data)


def _cmd_run(args) -> int:
    cfg = _apply_overrides(_load(args.config), args)
    out_dir = resolve_output_dir(cfg, args.out, Path(args.config).stem)
    if args.dry_run:
        print(cfg.serialize(), end="")
    verdict = run_scenario(cfg, out_dir, dry_run=args.dry_run)
    print(f"verdict: {'holds' if verdict.holds else 'FAILS'} "
          f"(worst margin {verdict.worst_margin:.4g} at t={verdict.worst_t:.4g})")
    print(f"report bundle: {out_dir}")
    return EXIT_HOLDS if verdict.holds else EXIT_FAILS


def _cmd_certify(args) -> int:
    cfg = _load(args.config)
    out_dir = resolve_output_dir(cfg, args.out, Path(args.config).stem)
    run_scenario(cfg, out_dir, dry_run=True)
    cert_path = out_dir / "certificate.json"
    print(cert_path.read_text(encoding="utf-8"), end="")
    return EXIT_HOLDS


def _cmd_batch(args) -> int:
    configs = sorted(Path(args.directory).glob("*.json"))
    if not configs:
        print(f"no *.json configs in {args.directory}", file=sys.stderr)
        return EXIT_ERROR
    worst = EXIT_HOLDS
    for path in configs:
        cfg = _load(str(path))
        out_dir = resolve_output_dir(cfg, args.out, path.stem)
        verdict = run_scenario(cfg, out_dir)
        status = "holds" if verdict.holds else "FAILS"
        print(f"{path.name}: {status} (worst margin {verdict.worst_margin:.4g})")
        if not verdict.holds:
            worst = EXIT_FAILS
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contracting-sde",
        description="Simulate contracting SDE scenarios and check error envelopes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write its report bundle")
    p_run.add_argument("config")
    p_run.add_argument("--paths", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--alpha", default=None, help="fixed alpha in (0,1) or 'opt'")
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--dry-run", action="store_true")
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=_cmd_run)

    p_cert = sub.add_parser("certify", help="emit the scenario certificate only")
    p_cert.add_argument("config")
    p_cert.add_argument("--out", default=None)
    p_cert.set_defaults(func=_cmd_certify)

    p_batch = sub.add_parser("batch", help="run every *.json config in a directory")
    p_batch.add_argument("directory")
    p_batch.add_argument("--out", default=None)
    p_batch.set_defaults(func=_cmd_batch)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
