"""Command line entry point.

Exit status is 0 on success, 1 for invalid input or usage and 2 when a
file cannot be read or written.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import fileio
from .anchors import cluster_anchors, format_anchor_table
from .errors import Kinematic3DError
from .evaluation import EvalConfig, ap_by_depth, evaluate, forecast_eval, pr_curve
from .sim import ScenarioSpec, kitti_calib, simulate
from .tracker import Tracker, TrackerConfig

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_dataclass_flags(parser, cls, skip=()):
    group = parser.add_argument_group(cls.__name__)
    for f in dataclasses.fields(cls):
        if not f.init or f.name in skip:
            continue
        kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
        if kind.startswith("tuple"):
            group.add_argument(_flag(f.name), dest=f.name, nargs="+", default=None, metavar="V")
        else:
            group.add_argument(_flag(f.name), dest=f.name, default=None, metavar="V")


def _build(cls, args, file_values: dict):
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    merged = {k: v for k, v in file_values.items() if k in names}
    for name in names:
        val = getattr(args, name, None)
        if val is not None:
            merged[name] = val
    return fileio.config_from_mapping(cls, merged)


def _file_config(args, owners) -> dict:
    if not getattr(args, "config", None):
        return {}
    values = fileio.read_config(args.config)
    known = set()
    for cls in owners:
        known |= {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise fileio.ParseError(f"unknown configuration key {unknown[0]!r}", path=args.config)
    return values


def _calib(path):
    return fileio.read_kitti_calib(path) if path else kitti_calib()


def _labels(path):
    p = Path(path)
    return fileio.read_label_dir(p) if p.is_dir() else fileio.read_kitti_labels(p)


def _output(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    spec = _build(ScenarioSpec, args, _file_config(args, [ScenarioSpec]))
    scenario = simulate(spec)
    fileio.write_sequence(scenario, args.out)
    n = sum(len(f.detections) for f in scenario.frames)
    print(f"wrote {len(scenario.frames)} frames, {n} detections to {args.out}")


def cmd_track(args):
    cfg = _build(TrackerConfig, args, _file_config(args, [TrackerConfig]))
    records = fileio.read_detections(args.detections)
    egos = fileio.read_ego(args.ego) if args.ego else {}
    frames = fileio.frames_from(records, egos)
    tracker = Tracker(cfg, _calib(args.calib))
    lines = []
    for k, fr in enumerate(frames):
        tracker.step(fr.detections, fr.ego if k else None)
        lines += [fileio.format_track(fr.frame, t, cfg.frame_rate) for t in tracker.tracks]
    _output(args.out, "".join(line + "\n" for line in lines))


def _ap_text(ap) -> str:
    return "" if ap is None else f"{ap:.6f}"


def _csv(header, rows) -> str:
    return "".join(",".join(str(v) for v in row) + "\n" for row in [header, *rows])


def cmd_evaluate(args):
    cfg = _build(EvalConfig, args, _file_config(args, [EvalConfig]))
    calib = _calib(args.calib)
    if args.pred_format == "tracks":
        preds = fileio.read_tracks(args.pred, calib)
    else:
        preds = [d for r in fileio.read_detections(args.pred) for d in r.detections]
    gts = _labels(args.gt)
    table = evaluate(preds, gts, cfg, args.kinds)
    if not cfg.include_coasting:
        preds = [d for d in preds if not d.coasting]
    rows = [(kind, diff, "", f"{thr:g}", _ap_text(ap)) for (kind, diff, thr), ap in table.items()]
    if args.depth:
        for kind in args.kinds:
            for thr in cfg.iou_thresholds:
                for depth, ap in ap_by_depth(preds, gts, kind, thr, cfg.depth_bins).items():
                    rows.append((kind, "", f"{depth:g}", f"{thr:g}", _ap_text(ap)))
    _output(args.out, _csv(("iou", "difficulty", "max_depth", "threshold", "ap"), rows))
    if args.json:
        lines = [json.dumps({"metric": "ap40", "iou": r[0], "difficulty": r[1] or None,
                             "max_depth": r[2] or None, "threshold": float(r[3]),
                             "ap": float(r[4]) if r[4] else None}) for r in rows]
        Path(args.json).write_text("".join(line + "\n" for line in lines))
    if args.pr_out:
        pr_rows = []
        for (kind, diff, thr) in table:
            curve = pr_curve(preds, gts, kind, thr, diff)
            pr_rows += [(kind, diff, f"{thr:g}", f"{r:.6f}", f"{p:.6f}")
                        for r, p in zip(curve.recall, curve.precision)]
        Path(args.pr_out).write_text(
            _csv(("iou", "difficulty", "threshold", "recall", "precision"), pr_rows))


def cmd_forecast(args):
    values = _file_config(args, [TrackerConfig, EvalConfig])
    tcfg = _build(TrackerConfig, args, values)
    ecfg = _build(EvalConfig, args, values)
    seqs = []
    for path in args.sequences:
        seq = fileio.read_sequence(path)
        if args.frame_offset:
            if args.frame_offset >= len(seq.frames):
                raise fileio.ParseError(f"frame offset {args.frame_offset} leaves no frames", path=path)
            seq.frames = seq.frames[: len(seq.frames) - args.frame_offset]
        seqs.append(seq)
    tables = forecast_eval(seqs, args.n_f, tcfg, ecfg, args.kinds, args.history)
    rows = [(n_f, kind, f"{thr:g}", _ap_text(ap))
            for n_f, table in tables.items() for (kind, thr), ap in table.items()]
    _output(args.out, _csv(("n_f", "iou", "threshold", "ap"), rows))


def cmd_anchors(args):
    gts = _labels(args.gt)
    anchors = cluster_anchors(gts, args.n_anchors, _calib(args.calib))
    _output(args.out, format_anchor_table(anchors))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kinematic3d", description="Monocular 3D box tracking tools.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="write a synthetic sequence directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config")
    _add_dataclass_flags(p, ScenarioSpec)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="track a detection file into a track dump")
    p.add_argument("--detections", required=True)
    p.add_argument("--ego")
    p.add_argument("--calib")
    p.add_argument("--out")
    p.add_argument("--config")
    _add_dataclass_flags(p, TrackerConfig)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="AP40 tables of predictions against labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True, help="label file or directory of per-frame label files")
    p.add_argument("--pred-format", choices=("tracks", "detections"), default="tracks")
    p.add_argument("--kinds", nargs="+", choices=("3d", "bev", "2d"), default=["3d", "bev"])
    p.add_argument("--depth", action="store_true", help="also report depth-stratified AP")
    p.add_argument("--json", help="write one JSON object per metric to this file")
    p.add_argument("--pr-out", help="write recall/precision columns to this file")
    p.add_argument("--calib")
    p.add_argument("--out")
    p.add_argument("--config")
    _add_dataclass_flags(p, EvalConfig)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("forecast", help="AP40 of n-frame forecasts on sequence directories")
    p.add_argument("sequences", nargs="+")
    p.add_argument("--n-f", dest="n_f", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--history", type=int, default=None,
                   help="frames tracked before the forecast origin (default: all)")
    p.add_argument("--frame-offset", type=int, default=0,
                   help="drop this many trailing frames so the target frame moves earlier")
    p.add_argument("--kinds", nargs="+", choices=("3d", "bev", "2d"), default=["3d", "bev"])
    p.add_argument("--out")
    p.add_argument("--config")
    _add_dataclass_flags(p, TrackerConfig)
    _add_dataclass_flags(p, EvalConfig)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("anchors", help="cluster labels into an anchor table")
    p.add_argument("--gt", required=True)
    p.add_argument("--n-anchors", type=int, default=36)
    p.add_argument("--calib")
    p.add_argument("--out")
    p.set_defaults(func=cmd_anchors)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "frame_offset", 0) < 0:
            raise UsageError("--frame-offset must be non-negative")
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (Kinematic3DError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
