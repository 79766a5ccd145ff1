"""Command-line interface.

Subcommands: ``fit`` (posterior only), ``design`` (run a campaign),
``score`` (one-shot candidate table), ``bench`` (criterion timing table),
``metrics`` (print per-round metrics from a result file), ``serve`` (HTTP
service).  Errors exit nonzero with a machine-readable JSON object on
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .campaign import (CampaignConfig, CampaignState, run_campaign,
                       export_score_table, fit_initial_state, suggest_next,
                       commit_ade, compute_metrics, derived_seed)
from .compress import CompressionConfig
from .runtime import CampaignRuntime
from .scenarios import load_scenario
from .sessions import state_to_doc


def _read_config_file(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith((".toml", ".tml")):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def build_config(args) -> CampaignConfig:
    doc = {}
    if getattr(args, "config", None):
        doc.update(_read_config_file(args.config))
    cfg = CampaignConfig.from_json_dict(doc) if doc else CampaignConfig()
    updates = {}
    for name in ("mode", "criterion", "seed"):
        val = getattr(args, name, None)
        if val is not None:
            updates[name] = val
    if getattr(args, "budget", None) is not None:
        updates["budget"] = args.budget
    if getattr(args, "draws", None) is not None:
        updates["mcmc"] = replace(cfg.mcmc, draws=args.draws)
    if getattr(args, "outer_s", None) is not None:
        updates["nmc"] = replace(cfg.nmc, outer_s=args.outer_s)
    if getattr(args, "alpha", None) is not None:
        updates["complexity"] = replace(cfg.complexity, alpha=args.alpha)
    if getattr(args, "compress", None) is False:
        updates["compression"] = None
    elif getattr(args, "compress", None) is True and cfg.compression is None:
        updates["compression"] = CompressionConfig()
    if updates:
        cfg = replace(cfg, **updates)
    return cfg


def _scenario(args):
    params = {}
    if getattr(args, "scenario_param", None):
        for pair in args.scenario_param:
            key, _, val = pair.partition("=")
            params[key] = json.loads(val)
    return load_scenario(args.scenario, **params), params


def cmd_fit(args) -> int:
    scenario, _ = _scenario(args)
    cfg = build_config(args)
    state = fit_initial_state(scenario, cfg)
    doc = {"scenario": args.scenario, "seed": cfg.seed,
           "state": state_to_doc(state)}
    Path(args.out).write_text(json.dumps(doc))
    print(f"posterior fitted: {len(state.posterior)} draws -> {args.out}")
    return 0


def cmd_design(args) -> int:
    scenario, _ = _scenario(args)
    cfg = build_config(args)
    if cfg.mode == "ade" and not args.simulate:
        return _interactive_ade(scenario, cfg, args)
    cfg = replace(cfg, simulate_truth=True)
    result = run_campaign(cfg, scenario, keep_tables=not args.no_tables)
    out = Path(args.out)
    out.write_text(json.dumps(result.to_json_dict(
        with_timing=args.with_timing)))
    if args.table_csv:
        export_score_table(result, args.table_csv)
    final = result.rounds[-1]
    print(f"{cfg.mode} campaign done: {len(result.selected)} selections, "
          f"final mse {final.mse:.5g}, crps {final.crps:.5g} -> {out}")
    return 0


def _interactive_ade(scenario, cfg: CampaignConfig, args) -> int:
    state = fit_initial_state(scenario, cfg)
    runtime = CampaignRuntime(state, scenario.candidates())
    cstate = CampaignState(state, scenario, runtime)
    truth = np.asarray(scenario.truth_on_grid(derived_seed(cfg.seed, 0)))
    truth_flat = truth.T.ravel() if truth.ndim == 2 else truth
    rounds = []
    for b in range(1, cfg.budget + 1):
        best, table, _ = suggest_next(cstate, cfg)
        point = cstate.runtime.candidates[best]
        print(f"round {b}: run experiment at {point.tolist()} "
              f"(candidate {best})")
        raw = input(f"enter measured response ({cstate.runtime.p} values, "
                    "comma-separated): ")
        y_new = np.asarray([float(v) for v in raw.split(",")], dtype=float)
        cstate = commit_ade(cstate, best, y_new, cfg)
        mse_b, crps_b = compute_metrics(cstate, cfg, truth_flat,
                                        derived_seed(cfg.seed, 5, b))
        rounds.append({"round": b, "candidate_index": best,
                       "mse": mse_b, "crps": crps_b})
        print(f"  refit done: mse {mse_b:.5g}, crps {crps_b:.5g}")
    Path(args.out).write_text(json.dumps(
        {"selected": cstate.selected, "rounds": rounds}))
    return 0


def cmd_score(args) -> int:
    scenario, _ = _scenario(args)
    cfg = build_config(args)
    state = fit_initial_state(scenario, cfg)
    runtime = CampaignRuntime(state, scenario.candidates())
    cstate = CampaignState(state, scenario, runtime)
    best, table, secs = suggest_next(cstate, cfg)
    doc = {"criterion": cfg.criterion, "suggested": int(best),
           "table": [{"candidate_index": cs.candidate_index, "raw": cs.raw,
                      "complexity": cs.complexity, "hybrid": cs.hybrid}
                     for cs in table]}
    Path(args.out).write_text(json.dumps(doc))
    print(f"scored {len(table)} candidates in {secs:.2f}s; "
          f"suggestion: candidate {best}")
    return 0


def cmd_bench(args) -> int:
    scenario, _ = _scenario(args)
    cfg = build_config(args)
    rows = []
    for crit_name in args.criteria:
        for compressed in ((True, False) if crit_name.startswith("mi")
                           else (None,)):
            c = replace(cfg, criterion=crit_name, mode="sde")
            if compressed is True and c.compression is None:
                c = replace(c, compression=CompressionConfig())
            if compressed is False:
                c = replace(c, compression=None)
            result = run_campaign(c, scenario, keep_tables=False)
            label = crit_name
            if compressed is True:
                label += " (mixture compression)"
            elif compressed is False:
                label += " (naive)"
            rows.append({"method": label,
                         "seconds": result.timing["scoring_seconds"],
                         "total_seconds": result.timing["total_seconds"]})
    width = max(len(r["method"]) for r in rows)
    print(f"{'method':<{width}}  scoring [s]")
    for r in rows:
        print(f"{r['method']:<{width}}  {r['seconds']:>10.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps({"rows": rows}))
    return 0


def cmd_metrics(args) -> int:
    doc = json.loads(Path(args.result).read_text())
    print("round  mse          crps")
    for rec in doc["rounds"]:
        print(f"{rec['round']:>5}  {rec['mse']:<11.5g}  {rec['crps']:<11.5g}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from .service import create_app
    app = create_app(args.data_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kohbed",
        description="Sequential Bayesian experimental design for "
                    "calibrated simulator models")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--scenario", default="toy")
        p.add_argument("--scenario-param", action="append",
                       metavar="KEY=JSON")
        p.add_argument("--config", help="JSON/TOML campaign config file")
        p.add_argument("--criterion", choices=["mi", "mi+cx", "imspe",
                                               "imspe+cx", "dopt", "maximin",
                                               "random"])
        p.add_argument("--mode", choices=["sde", "ade"])
        p.add_argument("--budget", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--draws", type=int, help="posterior draws")
        p.add_argument("--outer-s", type=int, help="outer MC samples")
        comp = p.add_mutually_exclusive_group()
        comp.add_argument("--compress", dest="compress",
                          action="store_true", default=None)
        comp.add_argument("--no-compress", dest="compress",
                          action="store_false")
        p.add_argument("--out", default=out_default)

    p_fit = sub.add_parser("fit", help="fit the posterior only")
    common(p_fit, "fit.json")
    p_fit.set_defaults(func=cmd_fit)

    p_design = sub.add_parser("design", help="run a design campaign")
    common(p_design, "design.json")
    p_design.add_argument("--simulate", action="store_true",
                          help="draw ADE observations from the scenario "
                               "ground truth instead of prompting")
    p_design.add_argument("--with-timing", action="store_true",
                          help="include wall-clock timing in the result "
                               "(breaks byte-for-byte replay)")
    p_design.add_argument("--no-tables", action="store_true")
    p_design.add_argument("--table-csv")
    p_design.set_defaults(func=cmd_design)

    p_score = sub.add_parser("score", help="one-shot candidate score table")
    common(p_score, "scores.json")
    p_score.set_defaults(func=cmd_score)

    p_bench = sub.add_parser("bench", help="criterion timing table")
    common(p_bench, "bench.json")
    p_bench.add_argument("--criteria", nargs="+",
                         default=["mi", "imspe", "maximin"])
    p_bench.set_defaults(func=cmd_bench)

    p_metrics = sub.add_parser("metrics", help="print metrics from a result")
    p_metrics.add_argument("result")
    p_metrics.set_defaults(func=cmd_metrics)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8321)
    p_serve.add_argument("--data-dir", default="./sessions")
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point
        err = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
