"""Command-line entry point: ``redd-eval <subcommand> [options]``.

Exit status is 0 on success, 2 for invalid input or configuration (caught
before or during a stage), 1 for any other runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .crediting import aggregate_ledger, read_credit_inputs, write_ledger
from .errors import ConfigError, InputError, StageFailed
from .landscape import simulate_study, write_manifest
from .panel import write_panel
from .pipeline import run_pipeline

MATCH_ALIASES = {"genetic": "genetic", "ps": "ps-match", "ps-match": "ps-match", "mahalanobis": "mahalanobis",
                 "psweight": "ps-weight", "ps-weight": "ps-weight"}


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=d, help="global seed for every stochastic component")
    parser.add_argument("--out-dir", type=Path, default=d, help="output directory for the bundle")
    parser.add_argument("--config", type=Path, default=d, help="TOML run configuration")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="redd-eval", description="Counterfactual evaluation of REDD+ project sites.")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _common(common, suppress=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic landscape panel")
    s.add_argument("--rows", type=int)
    s.add_argument("--cols", type=int)
    s.add_argument("--years", type=int)
    s.add_argument("--intensity", type=float)
    s.add_argument("--sites", type=int, help="number of donor sites")
    s.add_argument("--projects", type=int, help="number of project sites")
    s.add_argument("--radius", type=int)
    s.add_argument("--out", type=Path, default=Path("panel.csv"))

    for name, helptext in (("screen-donors", "buffer-pressure donor screening"),
                           ("validate", "split-sample validation of the synthetic control"),
                           ("placebo", "in-space placebo inference")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--panel", type=Path, required=True)
        s.add_argument("--project", action="append", help="project id (repeatable; default all)")

    s = sub.add_parser("sc", parents=[common], help="fit synthetic controls")
    s.add_argument("--panel", type=Path, required=True)
    s.add_argument("--project", action="append", help="project id (repeatable; default all)")
    s.add_argument("--out", type=Path, help="write the fit(s) as JSON here")

    s = sub.add_parser("gsc", parents=[common], help="generalized synthetic control ATT by lead")
    s.add_argument("--panel", type=Path, required=True)
    s.add_argument("--controls", default=None,
                   help="file with one control id per line, or from-sc / from-genmatch / all")
    s.add_argument("--estimator", choices=("mc", "ife"))
    s.add_argument("--factors", type=int, choices=range(0, 6), metavar="0..5")
    s.add_argument("--boot", type=int, help="bootstrap replicates")
    s.add_argument("--jobs", type=int, help="bootstrap worker processes")
    s.add_argument("--out", type=Path, help="copy att.csv here")

    s = sub.add_parser("match", parents=[common], help="matching robustness checks")
    s.add_argument("--panel", type=Path, required=True)
    s.add_argument("--method", choices=sorted(MATCH_ALIASES))
    s.add_argument("--k", type=int, help="controls per treated unit")
    s.add_argument("--window", type=int, help="history window in years (panel methods)")
    s.add_argument("--leads", type=int, help="number of post-treatment leads")

    s = sub.add_parser("credit", parents=[common], help="offset ledger from a credits table")
    s.add_argument("--inputs", type=Path, required=True)
    s.add_argument("--out", type=Path, default=None)

    for name, helptext in (("report", "run the configured stages and emit the full report bundle"),
                           ("run", "run the full pipeline")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--panel", type=Path, help="input panel (default: simulate one)")
        s.add_argument("--credits", type=Path, help="credits table (default: derive from SC results)")
    return p


def _base_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out_dir", None) is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out_dir)
    return cfg


def _set(obj, **kw):
    kw = {k: v for k, v in kw.items() if v is not None}
    return dataclasses.replace(obj, **kw) if kw else obj


def _run(cfg: RunConfig, stages, **kw):
    cfg = dataclasses.replace(cfg, stages=tuple(stages), **kw)
    return run_pipeline(cfg)


def _read_ids(text: str) -> tuple[str, ...] | str:
    if text in ("from-sc", "from-genmatch", "all"):
        return text
    path = Path(text)
    if not path.is_file():
        raise ConfigError(f"controls file not found: {path}")
    ids = tuple(line.strip() for line in path.read_text().splitlines() if line.strip() and not line.startswith("#"))
    if not ids:
        raise ConfigError(f"controls file {path} lists no ids")
    return ids


def _fit_json(fit) -> dict:
    return {
        "project": fit.project_id,
        "treatment_year": fit.treatment_year,
        "donor_weights": fit.weights.donor_weights,
        "covariate_weights": fit.weights.covariate_weights,
        "mspe_pre": fit.mspe_pre,
        "mspe_post": fit.mspe_post,
        "years": [int(y) for y in fit.years],
        "project_cumulative": fit.treated.values.tolist(),
        "synthetic_cumulative": fit.synthetic.values.tolist(),
        "gap": fit.gap.tolist(),
    }


def dispatch(args) -> int:
    cfg = _base_config(args)
    cmd = args.command
    projects = tuple(args.project) if getattr(args, "project", None) else None

    if cmd == "simulate":
        land = _set(cfg.landscape, rows=args.rows, cols=args.cols, years=args.years, intensity=args.intensity)
        design = _set(cfg.design, n_donors=args.sites, n_projects=args.projects, radius=args.radius)
        panel, sites = simulate_study(land, design)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        write_panel(panel, args.out)
        write_manifest(sites, args.out.with_name("sites.json"))
        print(f"wrote {args.out} ({len(panel)} units)")
    elif cmd == "screen-donors":
        _run(cfg, ["screen"], panel_path=args.panel, projects=projects)
    elif cmd in ("validate", "placebo"):
        _run(cfg, [cmd], panel_path=args.panel, projects=projects)
    elif cmd == "sc":
        m = _run(cfg, ["sc"], panel_path=args.panel, projects=projects)
        if args.out is not None:
            fits = [_fit_json(m.results.sc[p]) for p in sorted(m.results.sc)]
            args.out.write_text(json.dumps(fits[0] if len(fits) == 1 else fits, indent=2, sort_keys=True) + "\n")
    elif cmd == "gsc":
        gsc = _set(cfg.gsc, estimator=args.estimator, factors=args.factors, bootstrap_runs=args.boot,
                   n_jobs=args.jobs)
        controls = _read_ids(args.controls) if args.controls else cfg.gsc_controls
        m = _run(cfg, ["gsc"], panel_path=args.panel, gsc=gsc, gsc_controls=controls)
        if args.out is not None:
            m.results.att.write_csv(args.out)
    elif cmd == "match":
        method = MATCH_ALIASES[args.method] if args.method else cfg.match.method
        panel_cfg = _set(cfg.match.panel, history_window=args.window, max_lead=args.leads, max_controls=args.k)
        match = _set(cfg.match, method=method, k=args.k)
        match = dataclasses.replace(match, panel=panel_cfg)
        _run(cfg, ["match"], panel_path=args.panel, match=match)
    elif cmd == "credit":
        ledger = aggregate_ledger(read_credit_inputs(args.inputs, cfg.credit.horizon_year or 2020))
        out = args.out or Path(cfg.out_dir) / "ledger.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        write_ledger(ledger, out)
        for r in ledger.rows:
            if r.flags:
                print(f"{r.project}: {'; '.join(r.flags)}", file=sys.stderr)
        print(f"total ex-ante {ledger.total_exante:,.0f}; proportional {ledger.total_proportional:,.0f}; "
              f"synthetic-control {ledger.total_sc_offsets:,.0f}")
    elif cmd in ("run", "report"):
        kw = {}
        if args.panel is not None:
            kw["panel_path"] = args.panel
        if args.credits is not None:
            kw["credits_path"] = args.credits
        stages = tuple(cfg.stages)
        if "report" not in stages:
            stages += ("report",)
        if args.panel is not None and "simulate" in stages:
            stages = tuple(s for s in stages if s != "simulate")
        m = _run(cfg, stages, **kw)
        print(f"{len(m.outputs)} files written to {m.out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return dispatch(args)
    except StageFailed as e:
        print(f"error: {e}", file=sys.stderr)
        return 2 if isinstance(e.cause, InputError) else 1
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - last-resort runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
