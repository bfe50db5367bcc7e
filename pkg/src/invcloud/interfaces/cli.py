# ruff: noqa: T201

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from pyresults import Err, Ok

from invcloud import __version__
from invcloud.core import ops
from invcloud.core.errors import (
    EXIT_ALGORITHMIC,
    EXIT_DATA,
    EXIT_OK,
    EXIT_USAGE,
    InvalidArgumentError,
    InvCloudError,
    UsageError,
)
from invcloud.core.metrics import summarize
from invcloud.core.pose import Pose
from invcloud.core.registration import map_contour
from invcloud.interfaces.selftest import run_selftest
from invcloud.io import report
from invcloud.io.cloud_io import write_cloud
from invcloud.io.frames import GT_NAME, read_ground_truth
from invcloud.io.map_io import CONTOUR_NAME, JOURNAL_NAME, MAP_NAME, write_contour, write_fused_map, write_journal
from invcloud.io.track_io import read_track, write_track
from invcloud.util.config import RunConfig, load_config, write_effective_config
from invcloud.util.dirs import default_config_path, ensure_output_dir, get_seed_override
from invcloud.util.logger import enable_file_log, set_stream_level, setup_logger, setup_mode

logger = setup_logger("invcloud", is_stream=True, is_file=False)


def _parse_grid(s: str) -> tuple[int, int]:
    """`31x41` 形式の格子点数。"""
    try:
        rows, cols = (int(v) for v in s.lower().split("x"))
    except ValueError:
        _msg = f"grid must look like ROWSxCOLS, got {s!r}"
        raise argparse.ArgumentTypeError(_msg) from None
    return rows, cols


def _config(args: argparse.Namespace, **sections: dict[str, object]) -> RunConfig | None:
    """設定ファイル -> CLI 引数 の順で設定を組み立てる。失敗時はメッセージを出して None。

    --config がなければ IC_HOME の config.yaml を (あれば) 使う。
    """
    path = args.config
    if path is None and default_config_path().exists():
        path = default_config_path()
    match load_config(path):
        case Ok(cfg):
            pass
        case Err(e):
            print(f"config error: {e}", file=sys.stderr)
            return None
    # IC_SEED は CLI 引数より優先 (load_config で適用済み)
    seed = args.seed if get_seed_override() is None else None
    match cfg.with_overrides(**sections, seed=seed):  # type: ignore[arg-type]
        case Ok(merged):
            return merged
        case Err(e):
            print(f"config error: {e}", file=sys.stderr)
            return None
    return None


def _fail(e: Exception, action: str) -> int:
    _msg = f"An error occurred while {action}: {e!s}"
    logger.exception(_msg)
    if isinstance(e, InvCloudError):
        return e.exit_code
    return EXIT_DATA


def cmd_init_cloud(args: argparse.Namespace) -> int:
    grid = {"rows": args.grid[0], "cols": args.grid[1]} if args.grid else {}
    cfg = _config(args, grid=grid)
    if cfg is None:
        return EXIT_USAGE
    frame = Path(args.frame)
    markers = Path(args.markers) if args.markers else frame.with_name("markers.png")
    out = Path(args.out) if args.out else frame.with_name("cloud.txt")
    try:
        cloud = ops.init_cloud(frame, markers, cfg)
        ensure_output_dir(out.parent)
        write_cloud(cloud, out)
        write_effective_config(cfg, out.parent)
    except (InvCloudError, OSError) as e:
        return _fail(e, "building the reference cloud")
    print(f"{cloud.size} points ({cloud.grid_rows}x{cloud.grid_cols}) -> {out}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _config(args, trajectory={"n_frames": args.frames, "slip": True if args.slip else None})
    if cfg is None:
        return EXIT_USAGE
    try:
        summary = ops.simulate(cfg, args.out)
    except (InvCloudError, OSError) as e:
        return _fail(e, "simulating the scenario")
    if summary.n_patches:
        print(f"{summary.n_patches} contact patches -> {summary.out_dir}")
    else:
        print(f"{summary.n_frames} frames -> {summary.out_dir}")
    return EXIT_OK


def cmd_track(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if cfg is None:
        return EXIT_USAGE
    frames_dir = Path(args.frames_dir)
    cloud = Path(args.cloud) if args.cloud else frames_dir / "cloud.txt"
    out = Path(args.out) if args.out else frames_dir / f"track_{args.method}.csv"
    try:
        rows = ops.track(frames_dir, cloud, cfg, args.method)
        ensure_output_dir(out.parent)
        write_track(rows, out)
        write_effective_config(cfg, out.parent)
    except (InvCloudError, OSError) as e:
        return _fail(e, "tracking")
    ratio = ops.tracked_ratio(rows)
    print(f"{len(rows)} frames, {ratio:.1%} tracked -> {out}")
    return EXIT_OK if ratio >= ops.TRACKED_RATIO_GATE else EXIT_ALGORITHMIC


def _parse_track_spec(spec: str) -> tuple[str, Path]:
    method, sep, path = spec.partition("=")
    if not sep or not method or not path:
        _msg = f"track must look like METHOD=PATH, got {spec!r}"
        raise argparse.ArgumentTypeError(_msg)
    return method, Path(path)


def _load_trial(method: str, path: Path, frames_dir: str | None) -> ops.TrialInput:
    match read_track(path):
        case Ok(rows):
            trial = ops.TrialInput(method, rows)
        case Err(e):
            raise InvalidArgumentError(e)
    if frames_dir is not None:
        trial.first_mask, trial.last_mask = ops.boundary_masks(frames_dir)
    return trial


def _load_trials(args: argparse.Namespace) -> list[ops.TrialInput]:
    frames = args.frames or []
    if frames and len(frames) != len(args.track):
        _msg = f"--frames given {len(frames)} times for {len(args.track)} tracks"
        raise UsageError(_msg)
    dirs: list[str | None] = list(frames) if frames else [None] * len(args.track)
    # 試行ごとに独立なので並列に読む (順序は入力どおり)
    with ThreadPoolExecutor() as executor:
        futures = [executor.submit(_load_trial, m, p, d) for (m, p), d in zip(args.track, dirs, strict=True)]
        return [f.result() for f in futures]


def _load_schedule(path: str | None) -> list[tuple[int, Pose]] | None:
    if path is None:
        return None
    match read_ground_truth(path):
        case Ok(schedule):
            return schedule
        case Err(e):
            raise InvalidArgumentError(e)
    return None


def cmd_evaluate(args: argparse.Namespace) -> int:  # noqa: C901
    cfg = _config(args)
    if cfg is None:
        return EXIT_USAGE
    out = ensure_output_dir(args.out)
    lines: dict[str, str] = {}
    try:
        trials = _load_trials(args)
        schedule = _load_schedule(args.gt)
        match args.experiment:
            case "drift":
                gt = schedule[0][1] if schedule else None
                drift = ops.evaluate_drift(trials, gt)
                df = report.drift_frame(drift)
                report.write_table(df, out, "drift", "Static drift (MAE)")
                if args.emit_plots:
                    report.plot_dof_bars(df, out / "drift.svg", "MAE [mm | deg]")
                lines = {m: summarize(r.as_tuple()) for m, r in drift.items()}
            case "repeat":
                repeat = ops.evaluate_repeat(trials, cfg.metrics.return_gate)
                df = report.repeat_frame(repeat)
                report.write_table(df, out, "repeat", "Return error")
                if args.emit_plots:
                    report.plot_dof_bars(df, out / "repeat.svg", "return error [mm | deg]")
                lines = {m: summarize(r.as_tuple()) for m, r in repeat.items()}
            case "accuracy":
                if schedule is None:
                    print("accuracy needs --gt", file=sys.stderr)
                    return EXIT_USAGE
                acc = ops.evaluate_accuracy(trials, schedule)
                report.write_table(report.accuracy_frame(acc), out, "accuracy", "Tracking accuracy (RMS)")
                series = report.accuracy_series(acc)
                series.to_csv(out / "accuracy_series.csv", index=False, float_format="%.9g")
                if args.emit_plots:
                    report.plot_error_series(
                        {m: (r.frames, r.errors[:, 5].tolist()) for m, r in acc.items()},
                        out / "accuracy_rz.svg",
                    )
                lines = {m: summarize(r.rms) for m, r in acc.items()}
        write_effective_config(cfg, out)
    except (InvCloudError, OSError) as e:
        return _fail(e, "evaluating")
    for method, line in lines.items():
        print(f"{method}: {line}")
    return EXIT_OK


def cmd_slam(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if cfg is None:
        return EXIT_USAGE
    out = ensure_output_dir(args.out)
    try:
        outcome = ops.run_slam(args.contacts, cfg, cloud_path=args.cloud, template_path=args.template)
        write_fused_map(outcome.fused, out / MAP_NAME)
        write_journal(outcome.fused.journal, out / JOURNAL_NAME)
        write_contour(map_contour(outcome.fused), out / CONTOUR_NAME)
        write_effective_config(cfg, out)
        ops.check_slam(outcome)
    except (InvCloudError, OSError) as e:
        return _fail(e, "building the contact map")
    ids, _, _ = outcome.fused.points()
    print(f"accepted {outcome.n_accepted}/{len(outcome.results)} registrations, {ids.size} map points -> {out}")
    if args.template:
        print(f"Hausdorff to template: {outcome.hausdorff_mm:.3f} mm")
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if cfg is None:
        return EXIT_USAGE
    results = run_selftest(cfg)
    for r in results:
        print(f"[{'ok' if r.ok else 'NG'}] {r.name}: {r.detail}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_ALGORITHMIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invcloud", description="invariant-cloud tactile pose tracking")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--debug", action="store_true", help="debug mode")
    p.add_argument("--log-file", action="store_true", help="also log to IC_HOME/invcloud.log")
    p.add_argument("--config", help="YAML config / scenario file")
    p.add_argument("--seed", type=int, help="override the config seed")
    sub = p.add_subparsers(dest="command", required=True)

    # init-cloud
    sp = sub.add_parser("init-cloud", help="build the reference cloud from a no-contact frame")
    sp.add_argument("frame", help="no-contact height map (.ichm)")
    sp.add_argument("--markers", help="marker mask PNG (default: markers.png next to the frame)")
    sp.add_argument("--grid", type=_parse_grid, help="target grid points, e.g. 31x41")
    sp.add_argument("-o", "--out", help="output cloud file (default: cloud.txt next to the frame)")
    sp.set_defaults(func=cmd_init_cloud)

    # simulate
    sp = sub.add_parser("simulate", help="render a scenario into frame files")
    sp.add_argument("-o", "--out", required=True, help="output directory")
    sp.add_argument("--frames", type=int, help="override trajectory.n_frames")
    sp.add_argument("--slip", action="store_true", help="render the torsional slip variant")
    sp.set_defaults(func=cmd_simulate)

    # track
    sp = sub.add_parser("track", help="track a frame directory")
    sp.add_argument("frames_dir")
    sp.add_argument("--cloud", help="reference cloud file (default: FRAMES_DIR/cloud.txt)")
    sp.add_argument("--method", choices=["invariant", "baseline"], default="invariant")
    sp.add_argument("-o", "--out", help="output CSV (default: FRAMES_DIR/track_METHOD.csv)")
    sp.set_defaults(func=cmd_track)

    # evaluate
    sp = sub.add_parser("evaluate", help="compute drift / repeatability / accuracy reports")
    sp.add_argument("--experiment", choices=["drift", "repeat", "accuracy"], required=True)
    sp.add_argument("--track", type=_parse_track_spec, action="append", required=True, help="METHOD=TRACK.csv")
    sp.add_argument("--frames", action="append", help="frame directory per --track (return contour gate)")
    sp.add_argument("--gt", help=f"ground-truth CSV ({GT_NAME})")
    sp.add_argument("-o", "--out", required=True, help="report directory")
    sp.add_argument("--emit-plots", action="store_true", help="write SVG charts")
    sp.set_defaults(func=cmd_evaluate)

    # slam
    sp = sub.add_parser("slam", help="fuse contact patches into one map")
    sp.add_argument("contacts", nargs="+", help="patch files, patch directories or frame directories")
    sp.add_argument("--cloud", help="reference cloud (needed for frame directories)")
    sp.add_argument("--template", help="template points (x y z) for the Hausdorff report")
    sp.add_argument("-o", "--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_slam)

    # selftest
    sp = sub.add_parser("selftest", help="run the built-in sanity checks")
    sp.set_defaults(func=cmd_selftest)

    return p


def main(argv: list[str] | None = None) -> int:
    argv = argv if argv is not None else sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    if getattr(args, "debug", False):
        setup_mode(is_debug=True)
        set_stream_level("invcloud", logging.DEBUG)
    if getattr(args, "log_file", False):
        enable_file_log("invcloud")
    return args.func(args)
