"""Command-line driver: run scenarios or replays, ablate, sweep, evaluate.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
input files), 3 behavioral-assertion failure (``ablate --check``).
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import engine, reporting
from .io import (ConfigError, MotFormatError, TrackerConfig, config_to_dict,
                 default_config, load_config, read_detections, read_mot,
                 set_config_value, write_mot)
from .metrics import MetricReport, ScenarioScores, evaluate
from .propagation import read_observations, write_observations
from .scenario import (ScenarioError, ScenarioSpec, generate,
                       ground_truth_trajectories, read_scenario,
                       standard_suite, write_scenario)

MODULE_ROWS: list[tuple[str, dict]] = [
    ("baseline", dict(daqr=False, hcoi=False, stage2=False, stage3=False)),
    ("daqr", dict(daqr=True, hcoi=False, stage2=False, stage3=False)),
    ("hcoi", dict(daqr=False, hcoi=True, stage2=False, stage3=False)),
    ("saoa", dict(daqr=False, hcoi=False, stage2=True, stage3=True)),
    ("daqr+hcoi", dict(daqr=True, hcoi=True, stage2=False, stage3=False)),
    ("full", dict(daqr=True, hcoi=True, stage2=True, stage3=True)),
]

STAGE_ROWS: list[tuple[str, dict]] = [
    ("stage1", dict(stage2=False, stage3=False)),
    ("stage1+2", dict(stage2=True, stage3=False)),
    ("stage1+3", dict(stage2=False, stage3=True)),
    ("stage1+2+3", dict(stage2=True, stage3=True)),
]


class _Parser(argparse.ArgumentParser):
    """Argparse flavour whose usage failures exit with code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="tracker config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel scenario workers")
    parser.add_argument("--no-daqr", action="store_true",
                        help="disable the density gate on mask regeneration")
    parser.add_argument("--no-hcoi", action="store_true",
                        help="use variance-only update arbitration")
    parser.add_argument("--no-stage2", action="store_true",
                        help="disable last-box matching")
    parser.add_argument("--no-stage3", action="store_true",
                        help="disable frame-out re-entry matching")


def _resolve_config(args) -> TrackerConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed: must be non-negative")
        cfg.seed = args.seed
    if args.no_daqr:
        cfg.daqr = False
    if args.no_hcoi:
        cfg.hcoi = False
    if args.no_stage2:
        cfg.stage2 = False
    if args.no_stage3:
        cfg.stage3 = False
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _evaluate_spec(spec: ScenarioSpec, cfg: TrackerConfig,
                   record_observations: bool = False,
                   record_track_log: bool = False):
    """One scenario run plus its scores and recovery records."""
    result, gt = engine.run_scenario(spec, cfg, record_observations,
                                     record_track_log)
    gt_ts = ground_truth_trajectories(gt)
    hota, idf1_score, idsw = evaluate(gt_ts, result.trajectories)
    scores = ScenarioScores(spec.name, spec.family or "other", hota,
                            idf1_score, idsw)
    recovery = (reporting.reentry_recovery(gt, spec.exits, result.trajectories)
                if spec.exits else [])
    return result, gt, scores, recovery


def _eval_spec_worker(payload):
    spec, cfg = payload
    result, _, scores, recovery = _evaluate_spec(spec, cfg)
    return spec.name, result, scores, recovery


def _run_specs(specs: Sequence[ScenarioSpec], cfg: TrackerConfig, jobs: int):
    """Run many scenarios, optionally in worker processes; order-stable."""
    if jobs > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_eval_spec_worker,
                                    [(spec, cfg) for spec in specs]))
        results.sort(key=lambda item: item[0])
        return results
    return [_eval_spec_worker((spec, cfg)) for spec in specs]


def _select_suite(cfg: TrackerConfig, family: Optional[str]) -> list[ScenarioSpec]:
    specs = standard_suite(cfg.seed)
    if family:
        specs = [s for s in specs if s.family == family]
    return specs


def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    started = time.perf_counter()

    if args.replay_obs:
        if not args.replay_det:
            raise ConfigError("--replay-obs requires --replay-det")
        stream = read_observations(args.replay_obs)
        dets = read_detections(args.replay_det)
        if not stream:
            raise ConfigError("replay stream is empty")
        sample = next(iter(next(iter(stream.values())).values()))
        result = engine.run_replay(cfg, stream, dets, sample.mask.width,
                                   sample.mask.height)
        write_mot(result.trajectories, out / "results_replay.txt")
        (out / "decisions_replay.log").write_text(
            "\n".join(result.decision_log) + ("\n" if result.decision_log else ""))
        manifest = {
            "command": "run",
            "mode": "replay",
            "config": config_to_dict(cfg),
            "per_run_wall_s": {"replay": result.wall_s},
            "wall_clock_s": time.perf_counter() - started,
        }
        reporting.write_manifest(out / "manifest.json", manifest)
        print(f"replayed {len(stream)} frames -> {out}")
        return 0

    if args.scenario:
        specs = [read_scenario(args.scenario)]
    else:
        specs = _select_suite(cfg, args.family)
        if not specs:
            raise ConfigError(f"no scenarios in family {args.family!r}")

    all_scores = []
    per_run_wall = {}
    recovery_by_scenario = {}
    for spec in specs:
        result, gt, scores, recovery = _evaluate_spec(
            spec, cfg, record_observations=args.save_obs,
            record_track_log=args.track_log)
        write_mot(result.trajectories, out / f"results_{spec.name}.txt")
        (out / f"decisions_{spec.name}.log").write_text(
            "\n".join(result.decision_log) + ("\n" if result.decision_log else ""))
        if args.save_obs:
            write_observations(result.observation_stream,
                               out / f"obs_{spec.name}.txt")
            from .io import write_detections
            dets = {f: engine.simulate_detections(gt, f, spec.seed, spec.detector)
                    for f in range(spec.duration)}
            write_detections(dets, out / f"dets_{spec.name}.txt")
        if args.track_log:
            (out / f"tracks_{spec.name}.log").write_text(
                "\n".join(result.track_log) + ("\n" if result.track_log else ""))
        all_scores.append(scores)
        per_run_wall[spec.name] = result.wall_s
        if recovery:
            recovery_by_scenario[spec.name] = [
                {"actor": r.actor, "gap": r.gap, "recovered": r.recovered,
                 "id_before": r.id_before, "id_after": r.id_after}
                for r in recovery]

    report = MetricReport.aggregate(all_scores)
    table = reporting.report_table(report)
    (out / "report.txt").write_text(table)
    reporting.write_csv(out / "report.csv",
                        ["config", "scenario", "family", "hota", "idf1", "idsw"],
                        reporting.report_rows("run", report))
    reporting.report_figure(report, out / "report.png", "run")
    manifest = {
        "command": "run",
        "mode": "scenario",
        "config": config_to_dict(cfg),
        "scenarios": [s.name for s in specs],
        "results": {n: {"hota": s.hota, "idf1": s.idf1, "idsw": s.id_switches}
                    for n, s in report.per_scenario.items()},
        "recovery": recovery_by_scenario,
        "per_run_wall_s": per_run_wall,
        "wall_clock_s": time.perf_counter() - started,
    }
    reporting.write_manifest(out / "manifest.json", manifest)
    print(table, end="")
    return 0


def _ablate_layout(specs, base_cfg, rows, jobs):
    reports = {}
    for label, toggles in rows:
        cfg = replace(base_cfg, **toggles)
        results = _run_specs(specs, cfg, jobs)
        reports[label] = MetricReport.aggregate([r[2] for r in results])
    return reports


def _layout_artifacts(out: Path, stem: str, rows, reports) -> str:
    labels = [label for label, _ in rows]
    families = sorted({s.family for r in reports.values()
                       for s in r.per_scenario.values()})
    headers = (["config", "hota", "idf1", "idsw"]
               + [f"hota_{f}" for f in families])
    table_rows = []
    for label in labels:
        rep = reports[label]
        fam = rep.family_means()
        table_rows.append(
            [label, f"{rep.hota:.4f}", f"{rep.idf1:.4f}", str(rep.id_switches)]
            + [f"{fam[f][0]:.4f}" if f in fam else "-" for f in families])
    table = reporting.format_table(headers, table_rows)
    (out / f"{stem}.txt").write_text(table)
    csv_rows = []
    for label in labels:
        csv_rows.extend(reporting.report_rows(label, reports[label]))
    reporting.write_csv(out / f"{stem}.csv",
                        ["config", "scenario", "family", "hota", "idf1", "idsw"],
                        csv_rows)
    reporting.ablation_figure(labels, [reports[l] for l in labels],
                              out / f"{stem}.png", stem)
    return table


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    specs = _select_suite(cfg, args.family)
    started = time.perf_counter()
    tables = {}
    all_reports = {}
    layouts = (["modules", "stages"] if args.layout == "both" else [args.layout])
    for layout in layouts:
        rows = MODULE_ROWS if layout == "modules" else STAGE_ROWS
        reports = _ablate_layout(specs, cfg, rows, args.jobs)
        tables[layout] = _layout_artifacts(out, f"ablation_{layout}", rows, reports)
        all_reports[layout] = reports
    manifest = {
        "command": "ablate",
        "config": config_to_dict(cfg),
        "scenarios": [s.name for s in specs],
        "layouts": {
            layout: {label: {"hota": rep.hota, "idf1": rep.idf1,
                             "idsw": rep.id_switches}
                     for label, rep in reports.items()}
            for layout, reports in all_reports.items()},
        "wall_clock_s": time.perf_counter() - started,
    }
    reporting.write_manifest(out / "manifest.json", manifest)
    for layout in layouts:
        print(f"[{layout}]")
        print(tables[layout], end="")

    if args.check:
        if "modules" not in all_reports:
            print("check: needs the modules layout", file=sys.stderr)
            return 3
        rep = all_reports["modules"]
        base, full = rep["baseline"], rep["full"]
        checks = [
            ("idsw: full < baseline",
             full.id_switches < base.id_switches),
            ("idf1: full >= baseline + 0.02",
             full.idf1 >= base.idf1 + 0.02),
            ("hota: saoa-only >= baseline",
             rep["saoa"].hota >= base.hota),
            ("hota: daqr+hcoi >= hcoi-alone",
             rep["daqr+hcoi"].hota >= rep["hcoi"].hota),
        ]
        failed = False
        for name, ok in checks:
            print(f"check {'PASS' if ok else 'FAIL'}: {name}")
            failed = failed or not ok
        if failed:
            return 3
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    specs = _select_suite(cfg, args.family)
    raw_values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise ConfigError("--values: no values given")
    started = time.perf_counter()
    reports = []
    for raw in raw_values:
        variant = set_config_value(replace(cfg), args.param, raw)
        results = _run_specs(specs, variant, args.jobs)
        reports.append(MetricReport.aggregate([r[2] for r in results]))
    headers = [args.param] + ["hota", "idf1", "idsw"]
    rows = [[raw, f"{rep.hota:.4f}", f"{rep.idf1:.4f}", str(rep.id_switches)]
            for raw, rep in zip(raw_values, reports)]
    table = reporting.format_table(headers, rows)
    stem = f"sweep_{args.param}"
    (out / f"{stem}.txt").write_text(table)
    csv_rows = []
    for raw, rep in zip(raw_values, reports):
        csv_rows.extend(reporting.report_rows(f"{args.param}={raw}", rep))
    reporting.write_csv(out / f"{stem}.csv",
                        ["config", "scenario", "family", "hota", "idf1", "idsw"],
                        csv_rows)
    reporting.sweep_figure(args.param, raw_values, reports, out / f"{stem}.png")
    manifest = {
        "command": "sweep",
        "param": args.param,
        "values": raw_values,
        "config": config_to_dict(cfg),
        "scenarios": [s.name for s in specs],
        "results": {raw: {"hota": rep.hota, "idf1": rep.idf1,
                          "idsw": rep.id_switches}
                    for raw, rep in zip(raw_values, reports)},
        "wall_clock_s": time.perf_counter() - started,
    }
    reporting.write_manifest(out / "manifest.json", manifest)
    print(table, end="")
    return 0


def cmd_gen_suite(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    specs = _select_suite(cfg, args.family)
    written = []
    for spec in specs:
        path = out / f"{spec.name}.scenario.txt"
        write_scenario(spec, path)
        written.append(path.name)
        if args.with_gt:
            gt = generate(spec)
            write_mot(ground_truth_trajectories(gt), out / f"gt_{spec.name}.txt")
    reporting.write_manifest(out / "manifest.json", {
        "command": "gen-suite",
        "config": config_to_dict(cfg),
        "scenarios": [s.name for s in specs],
        "files": written,
    })
    print(f"wrote {len(written)} scenario files -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    out = _outdir(args)
    gt = read_mot(args.gt)
    pred = read_mot(args.pred)
    hota, idf1_score, idsw = evaluate(gt, pred, args.iou_gate)
    table = reporting.format_table(
        ["metric", "value"],
        [["hota", f"{hota:.6f}"], ["idf1", f"{idf1_score:.6f}"],
         ["idsw", str(idsw)]])
    (out / "eval.txt").write_text(table)
    reporting.write_csv(out / "eval.csv", ["metric", "value"],
                        [["hota", f"{hota:.6f}"], ["idf1", f"{idf1_score:.6f}"],
                         ["idsw", idsw]])
    reporting.eval_figure(hota, idf1_score, idsw, out / "eval.png")
    reporting.write_manifest(out / "manifest.json", {
        "command": "eval",
        "gt": str(args.gt),
        "pred": str(args.pred),
        "iou_gate": args.iou_gate,
        "results": {"hota": hota, "idf1": idf1_score, "idsw": idsw},
        "config": config_to_dict(cfg),
    })
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crowdtrack",
                     description="density-aware multi-object tracking testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[], help="run scenarios or a replay")
    _add_common(p_run)
    p_run.add_argument("--scenario", help="scenario spec file")
    p_run.add_argument("--suite", action="store_true",
                       help="run the standard suite")
    p_run.add_argument("--family", help="restrict the suite to one family")
    p_run.add_argument("--replay-obs", help="recorded observation stream")
    p_run.add_argument("--replay-det", help="recorded detections (MOT rows)")
    p_run.add_argument("--save-obs", action="store_true",
                       help="record observation and detection streams")
    p_run.add_argument("--track-log", action="store_true",
                       help="write per-frame track-table snapshots")
    p_run.set_defaults(func=cmd_run)

    p_abl = sub.add_parser("ablate", help="toggle-combination tables")
    _add_common(p_abl)
    p_abl.add_argument("--layout", choices=["modules", "stages", "both"],
                       default="both")
    p_abl.add_argument("--family", help="restrict the suite to one family")
    p_abl.add_argument("--check", action="store_true",
                       help="assert the calibrated ablation directions")
    p_abl.set_defaults(func=cmd_ablate)

    p_sw = sub.add_parser("sweep", help="sensitivity sweep over one parameter")
    _add_common(p_sw)
    p_sw.add_argument("--param", required=True, help="config key to sweep")
    p_sw.add_argument("--values", required=True,
                      help="comma-separated values, echoed verbatim")
    p_sw.add_argument("--family", help="restrict the suite to one family")
    p_sw.set_defaults(func=cmd_sweep)

    p_gen = sub.add_parser("gen-suite", help="write the standard suite to disk")
    _add_common(p_gen)
    p_gen.add_argument("--family", help="restrict to one family")
    p_gen.add_argument("--with-gt", action="store_true",
                       help="also write ground-truth MOT files")
    p_gen.set_defaults(func=cmd_gen_suite)

    p_ev = sub.add_parser("eval", help="metrics for two MOT files")
    _add_common(p_ev)
    p_ev.add_argument("--gt", required=True, help="ground-truth MOT file")
    p_ev.add_argument("--pred", required=True, help="result MOT file")
    p_ev.add_argument("--iou-gate", type=float, default=0.5)
    p_ev.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and not (args.scenario or args.suite
                                      or args.replay_obs):
        parser.error("run needs --scenario, --suite, or --replay-obs")
    if args.command == "sweep":
        from .io import _FIELD_TYPES
        if args.param not in _FIELD_TYPES:
            parser.error(f"unknown config parameter {args.param!r}")
    try:
        return args.func(args)
    except (ConfigError, MotFormatError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
