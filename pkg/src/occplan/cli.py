"""Command-line entry point: ``occplan plan | predict-eval | augment | bench``.

Every command writes its tables as CSV under ``--out`` and echoes a short
tab-delimited summary on stdout. ``--figures`` additionally renders PNG
figures next to the tables.

Exit codes: 0 success, 1 a run completed with hard-constraint violations
(or a bench scenario failed), 2 bad input (parse or configuration error),
3 infeasible start/goal or initial trajectory.
"""

from __future__ import annotations

import argparse
import glob as globlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .augment import (AugmentedSequence, LabelRules, augment_sequence, default_rules, occlusion_mix_report,
                      write_augmented)
from .errors import ConfigurationError, ConstraintError, OccPlanError, ParameterError
from .human import N_JOINTS, read_sequence
from .occlusion import OCCLUDED, OcclusionReport, occlusion_report
from .plan import replan_loop
from .predict import error_distance
from .report import RunTrace, plot_bench, plot_mix, plot_prediction_table, plot_run, write_table
from .robot import camera_pose_batch, fk_batch, shape_arrays
from .scenario import DATA_DIR, Scenario, load_scenario
from .traj import Trajectory, dump_rows, read_dump, straight_line_init, within_limits

log = logging.getLogger("occplan")

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT, EXIT_CONSTRAINT = 0, 1, 2, 3


def resolve_scenario(name: str) -> Path:
    """A path, or the short name of a shipped scenario (``smoke`` -> scenario_smoke.yaml)."""
    p = Path(name)
    if p.exists():
        return p
    shipped = DATA_DIR / f"scenario_{name}.yaml"
    if shipped.exists():
        return shipped
    raise ConfigurationError(f"scenario {name!r} is neither a file nor a shipped scenario name")


def parse_overrides(items: Sequence[str] | None) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigurationError(f"--weights-override expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise ConfigurationError(f"--weights-override {key}: {value!r} is not a number") from None
    return out


def _load(args) -> Scenario:
    return load_scenario(resolve_scenario(args.scenario), seed=args.seed,
                         weight_overrides=parse_overrides(getattr(args, "weights_override", None)),
                         samples_per_segment=getattr(args, "samples_per_segment", None))


# ---------------------------------------------------------------------------
# plan

def run_plan(sc: Scenario):
    """Run the replanning loop; returns (trace, steps, wall seconds)."""
    t = time.perf_counter()
    steps = list(replan_loop(sc.task, sc.params))
    wall = time.perf_counter() - t
    return RunTrace.from_steps(sc.name, sc.seed, steps, sc.task.horizon.offsets), steps, wall


def executed_dump(steps, dof: int) -> str:
    """Commanded trajectory as executed, one row per sample, without repeated cycle boundaries."""
    lines = ["# occplan-trajectory 1", f"# dof: {dof}"]
    for k, st in enumerate(steps):
        ts = st.executed_times - st.time
        if k > 0:
            ts = ts[1:]
        lines += dump_rows(st.result.trajectory, ts, offset=st.time)
    return "\n".join(lines) + "\n"


def cmd_plan(args) -> int:
    sc = _load(args)
    trace, steps, wall = run_plan(sc)
    out = Path(args.out)
    paths = trace.write(out)
    (out / "trajectory.txt").write_text(executed_dump(steps, sc.model.dof))
    # wall-clock numbers vary run to run, so they live outside the trace
    (out / "timing.json").write_text(json.dumps(
        {"total_s": wall, "per_cycle_s": [st.result.wall_time for st in steps]}, indent=2) + "\n")
    if args.figures:
        plot_run([trace], out / "figures")
    s = trace.summary
    print("---- occplan plan ----")
    for key in ("scenario", "seed", "cycles", "mean_alpha", "max_penetration", "violations",
                "final_total_cost", "final_human_cost"):
        print(f"{key}\t{s[key]}")
    print(f"trace\t{paths['trace']}")
    print("---- end ----")
    return EXIT_OK if trace.ok else EXIT_VIOLATION


# ---------------------------------------------------------------------------
# predict-eval

def _blackout_report(frame) -> OcclusionReport:
    return OcclusionReport(np.zeros(N_JOINTS), 0.0, N_JOINTS, OCCLUDED, frame.tracked.copy())


def predict_eval(sc: Scenario, blackout: Optional[tuple[float, float]] = None, stride: int = 1):
    """Filter the scenario's human sequence frame by frame and score every forecast.

    The robot stays parked at the task start. Frames inside ``blackout`` are
    treated as fully occluded. Returns (per-frame errors (F, P), prediction
    times (F,), in-blackout mask (F,), offsets).
    """
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    seq = sc.task.truth
    hz = sc.task.horizon
    predictor = sc.task.predictor
    settings = sc.scene.occlusion
    poses = fk_batch(sc.model, sc.task.q_start[None])
    shapes = shape_arrays(sc.model, poses)
    camera = settings.camera(camera_pose_batch(sc.model, poses)[0]) if settings is not None else None
    if seq.duration < hz.horizon - 1e-9:
        log.warning("sequence lasts %.2f s, shorter than the %.1f s lookahead; later offsets are truncated",
                    seq.duration, hz.horizon)
    state = predictor.initial_state()
    errs, times, dark = [], [], []
    for i, frame in enumerate(seq.frames):
        inside = blackout is not None and blackout[0] <= frame.time <= blackout[1]
        if inside:
            report = _blackout_report(frame)
        elif camera is None:
            report = OcclusionReport.fully_visible()
        else:
            report = occlusion_report(camera, frame, shapes, settings)
        state = predictor.update(state, frame, report)
        if i % stride or not state.initialized:
            continue
        pred = predictor.predict(state, hz, report)
        row = np.full(hz.points, np.nan)
        for k, t in enumerate(pred.times):
            if t <= seq.end_time + 1e-9:
                row[k] = error_distance(pred, seq, float(t))
        errs.append(row)
        times.append(frame.time)
        dark.append(inside)
    return np.array(errs).reshape(-1, hz.points), np.array(times), np.array(dark, dtype=bool), hz.offsets


def prediction_table(errs: np.ndarray, dark: np.ndarray, offsets, with_windows: bool) -> list[dict]:
    rows = []
    windows = [("all", np.ones(len(errs), dtype=bool))]
    if with_windows:
        windows += [("blackout", dark), ("outside", ~dark)]
    for name, mask in windows:
        for k, off in enumerate(offsets):
            col = errs[mask, k]
            col = col[np.isfinite(col)]
            rows.append({"window": name, "offset": float(off), "count": int(col.size),
                         "mean": float(col.mean()) if col.size else float("nan"),
                         "std": float(col.std()) if col.size else float("nan")})
    return rows


def _parse_window(text: Optional[str]):
    if not text:
        return None
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigurationError(f"--blackout expects START:END seconds, got {text!r}") from None
    if b < a:
        raise ConfigurationError(f"--blackout end {b} precedes start {a}")
    return a, b


def cmd_predict_eval(args) -> int:
    sc = _load(args)
    window = _parse_window(args.blackout)
    errs, _, dark, offsets = predict_eval(sc, window, args.stride)
    rows = prediction_table(errs, dark, offsets, window is not None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["window", "offset", "count", "mean", "std"]
    write_table(rows, cols, out / "prediction_error.csv")
    if args.figures:
        plot_prediction_table(rows, out / "figures" / "prediction_error.png")
    print("---- occplan predict-eval ----")
    print(write_table(rows, cols, delimiter="\t"), end="")
    print("---- end ----")
    return EXIT_OK


# ---------------------------------------------------------------------------
# augment

def load_trajectory(path) -> Trajectory:
    """A trajectory dump read back as Hermite knots (times shifted to start at 0)."""
    t, q, qd = read_dump(path)
    return Trajectory(q, qd, t - t[0])


def sweep_trajectory(sc: Scenario, duration: float) -> Trajectory:
    """Task start to goal over ``duration``; the default virtual-robot motion."""
    tr = straight_line_init(sc.task.q_start, sc.task.q_goal, max(1, sc.task.waypoints), max(duration, 1e-3))
    if not within_limits(tr, sc.model):
        raise ConstraintError(f"start-to-goal sweep over {duration:.2f} s exceeds the joint limits")
    return tr


def augment_directory(input_dir, sc: Scenario, output_dir, rules: LabelRules,
                      trajectory: Optional[Trajectory] = None) -> list[AugmentedSequence]:
    files = sorted(p for p in Path(input_dir).glob("*.skel") if p.is_file())
    if not files:
        raise ConfigurationError(f"no sequences (*.skel) found in {input_dir}")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for path in files:
        seq = read_sequence(path)
        tr = trajectory if trajectory is not None else sweep_trajectory(sc, seq.duration)
        aug = augment_sequence(seq, sc.model, tr, None, rules, sc.scene.occlusion)
        write_augmented(aug, out / (path.stem + ".aug"))
        results.append(aug)
    return results


def cmd_augment(args) -> int:
    sc = _load(args)
    rules = LabelRules.load(args.rules) if args.rules else default_rules()
    tr = load_trajectory(args.trajectory) if args.trajectory else None
    dataset = augment_directory(args.input, sc, args.output, rules, tr)
    mix = occlusion_mix_report(dataset).as_dict()
    out = Path(args.output)
    (out / "occlusion_mix_report.json").write_text(json.dumps(mix, indent=2) + "\n")
    rows = [{"joint": k, "rate": v} for k, v in mix["per_joint_rate"].items()]
    write_table(rows, ["joint", "rate"], out / "per_joint_rate.csv")
    if args.figures:
        plot_mix(mix, out / "figures" / "occlusion_mix.png")
    print("---- occplan augment ----")
    for key in ("sequences", "frames", "occluded_fraction", "relabeled_fraction"):
        print(f"{key}\t{mix[key]}")
    print("---- end ----")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench

BENCH_COLUMNS = ["scenario", "status", "cycles", "mean_alpha", "max_penetration", "violations",
                 "final_human_cost", "runtime_s"]


def bench(paths: Sequence[Path], seed: Optional[int] = None, samples_per_segment: Optional[int] = None):
    rows, traces = [], []
    for path in sorted(paths, key=lambda p: str(p)):
        row = {"scenario": path.stem, "status": "ok", "cycles": 0, "mean_alpha": float("nan"),
               "max_penetration": float("nan"), "violations": 0, "final_human_cost": float("nan"),
               "runtime_s": 0.0}
        try:
            sc = load_scenario(path, seed=seed, samples_per_segment=samples_per_segment)
            trace, _, wall = run_plan(sc)
        except OccPlanError as exc:
            log.error("%s: %s", path, exc)
            row["status"] = "error"
            rows.append(row)
            continue
        s = trace.summary
        row.update(cycles=s["cycles"], mean_alpha=s["mean_alpha"], max_penetration=s["max_penetration"],
                   violations=s["violations"], final_human_cost=s["final_human_cost"], runtime_s=wall)
        if not trace.ok:
            row["status"] = "violation"
        rows.append(row)
        traces.append(trace)
    return rows, traces


def cmd_bench(args) -> int:
    paths = [Path(p) for p in globlib.glob(args.glob)]
    if not paths:
        raise ConfigurationError(f"glob {args.glob!r} matched no scenario files")
    rows, traces = bench(paths, args.seed, args.samples_per_segment)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(rows, BENCH_COLUMNS, out / "bench.csv")
    if args.figures:
        plot_bench(rows, out / "figures" / "bench.png")
        if traces:
            plot_run(traces, out / "figures")
    print("---- occplan bench ----")
    print(write_table(rows, BENCH_COLUMNS, delimiter="\t"), end="")
    print("---- end ----")
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_VIOLATION


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="occplan", description="Occlusion-aware motion planning toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--samples-per-segment", type=int, default=None, dest="samples_per_segment",
                       help="cost quadrature samples per trajectory segment (multiple of 4)")
        p.add_argument("--figures", action="store_true", help="also render PNG figures")

    p = sub.add_parser("plan", help="run the replanning loop on a scenario")
    p.add_argument("--scenario", required=True, help="scenario file or shipped name")
    p.add_argument("--weights-override", action="append", metavar="KEY=VALUE", dest="weights_override",
                   help="override a cost weight, repeatable")
    common(p, "occplan_out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("predict-eval", help="score skeleton forecasts against ground truth")
    p.add_argument("--scenario", required=True)
    p.add_argument("--blackout", default=None, metavar="START:END",
                   help="treat frames in this time window as fully occluded")
    p.add_argument("--stride", type=int, default=1, help="forecast every n-th frame")
    common(p, "occplan_predict")
    p.set_defaults(func=cmd_predict_eval)

    p = sub.add_parser("augment", help="annotate skeleton sequences with robot-induced occlusion")
    p.add_argument("--input", required=True, help="directory of *.skel sequences")
    p.add_argument("--output", required=True, help="directory for *.aug files and the mix report")
    p.add_argument("--scenario", required=True, help="scenario providing robot, camera and sweep")
    p.add_argument("--rules", default=None, help="label rule table (YAML)")
    p.add_argument("--trajectory", default=None, help="trajectory dump to replay instead of the sweep")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--figures", action="store_true")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("bench", help="run every scenario matching a glob")
    p.add_argument("--glob", default=str(DATA_DIR / "scenario_*.yaml"))
    common(p, "occplan_bench")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except ConstraintError as exc:
        log.error("constraint error: %s", exc)
        return EXIT_CONSTRAINT
    except (ConfigurationError, OccPlanError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
