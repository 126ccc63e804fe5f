"""Command-line entry point: ``lafs <command> ...``.

Exit codes: 0 success, 1 failed check, 2 bad configuration or arguments,
3 missing or malformed data.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from . import __version__
from .decoder import DecodeParams, Mode, decode_detailed
from .losses import gradcheck_suite
from .maps import (
    DEFAULT_SHRINK,
    MapFormatError,
    _atomic_write,
    instance_labels,
    read_boxes,
    read_map,
    write_boxes,
    write_map,
)
from .metrics import (
    TABLE_THRESHOLDS,
    feature_location_stats,
    histogram_to_csv,
    histogram_to_json,
    mean_best_iou,
    report,
    report_many,
    report_to_json,
)
from .synth import CapacityError, ConfigError, config_hash, config_to_dict, generate_scene, load_config, preset, simulate_predictions

log = logging.getLogger("lafs")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class DataError(Exception):
    pass


class Manifest:
    """Run record written next to a command's outputs."""

    def __init__(self, command: str):
        self.doc = {"tool": "lafs", "version": __version__, "command": command, "seeds": {}, "inputs": {}, "outputs": {}, "timing_ms": {}}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        yield
        self.doc["timing_ms"][name] = round((time.perf_counter() - t0) * 1000, 3)

    def write(self, path: Path) -> None:
        _atomic_write(path, (json.dumps(self.doc, indent=2, sort_keys=True) + "\n").encode())


def _threads(args) -> int:
    env = os.environ.get("LAFS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"LAFS_THREADS must be an integer, got {env!r}")
    return max(1, args.threads)


def _thresholds(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}")
    if not vals or not all(0 < t < 1 for t in vals):
        raise argparse.ArgumentTypeError("thresholds must lie in (0, 1)")
    return vals


def _read_map(path: Path):
    try:
        return read_map(path)
    except FileNotFoundError:
        raise DataError(f"missing map file {path}")
    except (MapFormatError, ValueError) as exc:
        raise DataError(str(exc))


def _read_boxes(path: Path):
    try:
        return read_boxes(path)
    except FileNotFoundError:
        raise DataError(f"missing box file {path}")
    except MapFormatError as exc:
        raise DataError(str(exc))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    scene, noise = load_config(args.config)
    threads = _threads(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest("synth")
    man.doc["config_hash"] = config_hash(scene, noise)
    man.doc["seeds"] = {"scene": scene.seed, "noise": noise.seed}
    man.doc["inputs"]["config"] = str(args.config)
    man.doc["threads"] = threads
    with man.stage("scene"):
        try:
            boxes = generate_scene(scene)
        except CapacityError as exc:
            raise ConfigError(str(exc))
    with man.stage("simulate"):
        sim = simulate_predictions(boxes, noise, scene.height, scene.width, threads)
    with man.stage("write"):
        write_boxes(boxes, out / "boxes.json")
        write_map(sim.score, out / "score.lmap")
        write_map(sim.geo_gt, out / "geo_gt.lmap")
        write_map(sim.geo_pred, out / "geo_pred.lmap")
        write_map(sim.conf, out / "conf.lmap")
        _atomic_write(out / "config.json", (json.dumps(config_to_dict(scene, noise), indent=2, sort_keys=True) + "\n").encode())
    for name in ("boxes.json", "score.lmap", "geo_gt.lmap", "geo_pred.lmap", "conf.lmap", "config.json"):
        man.doc["outputs"][name] = _sha256(out / name)
    man.write(out / "manifest.json")
    print(f"wrote {len(boxes)} boxes and maps to {out}")
    return EXIT_OK


def cmd_decode(args) -> int:
    maps_dir = Path(args.maps_dir)
    params = DecodeParams(
        score_thresh=args.score_thresh,
        group_iou_thresh=args.group_iou,
        k=args.k,
        mode=args.mode,
        constraint_ratio=args.constraint_ratio,
    )
    threads = _threads(args)
    man = Manifest("decode")
    man.doc["params"] = {"score_thresh": params.score_thresh, "group_iou_thresh": params.group_iou_thresh, "k": params.k, "mode": params.mode.value, "constraint_ratio": params.constraint_ratio}
    man.doc["threads"] = threads
    with man.stage("read"):
        paths = {name: maps_dir / f"{name}.lmap" for name in ("score", args.geo, "conf")}
        score, geo, conf = (_read_map(p) for p in paths.values())
        for p in paths.values():
            man.doc["inputs"][p.name] = _sha256(p)
    if score.channels != 1 or geo.shape != score.shape[:2] + (5,) or conf.shape != geo.shape:
        raise DataError(f"map shapes disagree: score {score.shape}, geo {geo.shape}, conf {conf.shape}")
    with man.stage("decode"):
        res = decode_detailed(score, geo, conf, params, threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_boxes(res.boxes, out)
    man.doc["outputs"][out.name] = _sha256(out)
    man.doc["counts"] = {"candidates": res.n_candidates, "groups": res.n_groups, "discarded": res.n_discarded, "boxes": len(res.boxes)}
    man.write(out.with_name(out.stem + ".manifest.json"))
    print(f"{len(res.boxes)} boxes ({res.n_candidates} candidates, {res.n_groups} groups, {res.n_discarded} discarded) -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = _read_boxes(Path(args.pred))
    gts = _read_boxes(Path(args.gt))
    rep = report(preds, gts, args.thresholds)
    text = report_to_json(rep)
    if args.out:
        _atomic_write(Path(args.out), text.encode())
    if args.baseline:
        base = report(_read_boxes(Path(args.baseline)), gts, args.thresholds)
        print(format_gain_table({"baseline": base, "pred": rep}, "baseline", "pred"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_stats(args) -> int:
    conf = _read_map(Path(args.conf))
    boxes = _read_boxes(Path(args.boxes))
    labels = instance_labels(boxes, conf.height, conf.width, args.shrink_ratio)
    inst = [(b, conf.data, labels == i) for i, b in enumerate(boxes) if np.any(labels == i)]
    hist = feature_location_stats(inst)
    out = Path(args.out)
    _atomic_write(out, histogram_to_json(hist).encode())
    if args.csv:
        _atomic_write(Path(args.csv), histogram_to_csv(hist).encode())
    print(f"{len(inst)} instances counted -> {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = gradcheck_suite(args.points, args.seed)
    print(f"{'loss':<8}{'max rel err':>14}  result")
    ok = True
    for name, err in worst.items():
        passed = err < GRADCHECK_TOL
        ok &= passed
        print(f"{name:<8}{err:>14.3e}  {'pass' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


STROKES = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def render_svg(box_sets, width: int, height: int, labels=None) -> str:
    """One <g> per box list, each with its own stroke class."""
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        "<style>",
    ]
    for i in range(len(box_sets)):
        lines.append(f"  .set-{i} {{ fill: none; stroke: {STROKES[i % len(STROKES)]}; stroke-width: 1; }}")
    lines.append("</style>")
    lines.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    for i, boxes in enumerate(box_sets):
        label = labels[i] if labels else f"set-{i}"
        lines.append(f'<g class="set-{i}" data-source={quoteattr(str(label))}>')
        for b in boxes:
            pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in b.quad())
            lines.append(f'  <polygon points="{pts}"/>')
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_render(args) -> int:
    sets = [_read_boxes(Path(p)) for p in args.boxes]
    width, height = args.width, args.height
    if width is None or height is None:
        pts = [b.quad() for s in sets for b in s]
        extent = np.max(np.concatenate(pts), axis=0) if pts else np.array([1.0, 1.0])
        width = width or int(np.ceil(extent[0])) + 1
        height = height or int(np.ceil(extent[1])) + 1
    _atomic_write(Path(args.out), render_svg(sets, width, height, [Path(p).name for p in args.boxes]).encode())
    return EXIT_OK


def format_gain_table(reports: dict, base: str, best: str) -> str:
    names = list(reports)
    head = "IoU  " + "".join(f"| {n:^20} " for n in names) + "| gain"
    sub = "     " + "| {:>6}{:>7}{:>7} ".format("R", "P", "H") * len(names) + "| H"
    rows = [head, sub]
    for t in reports[base]:
        cells = "".join(f"| {reports[n][t].recall:6.3f}{reports[n][t].precision:7.3f}{reports[n][t].hmean:7.3f} " for n in names)
        rows.append(f"{t:.2f} {cells}| {reports[best][t].hmean - reports[base][t].hmean:+.3f}")
    return "\n".join(rows)


def run_ablation(preset_name: str, seeds, threads: int = 1) -> dict:
    """Mode comparison on oracle confidence and a K sweep on degraded confidence."""
    sims = {}
    for cm in (preset_name, "degraded"):
        sims[cm] = []
        for s in seeds:
            scene, noise = preset(cm, s)
            sims[cm].append(simulate_predictions(generate_scene(scene), noise, scene.height, scene.width, threads))
    modes = {}
    for mode in (Mode.BASELINE, Mode.CONSTRAINED, Mode.LAFS):
        p = DecodeParams(mode=mode)
        preds = [decode_detailed(s.score, s.geo_pred, s.conf, p, threads).boxes for s in sims[preset_name]]
        modes[mode.value] = report_many([(b, s.boxes) for b, s in zip(preds, sims[preset_name])])
    ks = {}
    for k in (1, 2, 4, 6, 8):
        p = DecodeParams(k=k)
        preds = [decode_detailed(s.score, s.geo_pred, s.conf, p, threads).boxes for s in sims["degraded"]]
        ks[k] = float(np.mean([mean_best_iou(b, s.boxes) for b, s in zip(preds, sims["degraded"])]))
    return {"modes": modes, "k_mean_iou": ks}


def cmd_ablation(args) -> int:
    res = run_ablation(args.preset, range(args.seeds), _threads(args))
    print(format_gain_table(res["modes"], "baseline", "lafs"))
    print()
    print("K   mean IoU (degraded confidence)")
    for k, v in res["k_mean_iou"].items():
        print(f"{k:<4}{v:.4f}")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    d = DecodeParams()
    ap = argparse.ArgumentParser(prog="lafs", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"lafs {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def threads(p):
        p.add_argument("--threads", type=int, default=1, help="worker threads (env LAFS_THREADS overrides)")

    p = sub.add_parser("synth", help="generate a synthetic scene and simulated maps")
    p.add_argument("config", help="JSON or TOML config document")
    p.add_argument("out_dir")
    threads(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decode", help="decode maps into boxes")
    p.add_argument("maps_dir")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=d.mode.value)
    p.add_argument("--k", type=int, default=d.k)
    p.add_argument("--score-thresh", type=float, default=d.score_thresh)
    p.add_argument("--group-iou", type=float, default=d.group_iou_thresh)
    p.add_argument("--constraint-ratio", type=float, default=d.constraint_ratio)
    p.add_argument("--geo", default="geo_pred", help="geometry map name inside maps_dir (default geo_pred)")
    p.add_argument("-o", "--out", default="boxes_pred.json")
    threads(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="recall/precision/Hmean per IoU threshold")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--thresholds", type=_thresholds, default=TABLE_THRESHOLDS)
    p.add_argument("--baseline", help="second prediction file; prints a gain table against it")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="histogram of most-confident feature locations")
    p.add_argument("conf")
    p.add_argument("boxes")
    p.add_argument("--shrink-ratio", type=float, default=DEFAULT_SHRINK)
    p.add_argument("-o", "--out", default="location_hist.json")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("render", help="draw box files as SVG polygons")
    p.add_argument("boxes", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("ablation", help="mode comparison and K sweep on the synthetic suite")
    p.add_argument("--preset", default="zoned")
    p.add_argument("--seeds", type=int, default=10)
    threads(p)
    p.set_defaults(func=cmd_ablation)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # invalid decode parameters and the like
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
